use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use half::f16;

use super::{read_spill, read_spill_header, write_spill, Dtype, Rows, RowsRef, VertexId};
use crate::dio::IoMode;
use crate::error::{Error, IoContext, Result};

pub const MATRIX_META_FILE: &str = "MATRIX";
pub const MANIFEST_FILE: &str = "MANIFEST";

/// Equal-width vertex-ID ranges tiling `[0, num_vertices)`.
pub fn partition_ranges(num_vertices: u64, partitions: usize) -> Vec<Range<u64>> {
    let p = partitions.max(1) as u64;
    let width = num_vertices.div_ceil(p).max(1);
    (0..p)
        .map(|k| (k * width).min(num_vertices)..((k + 1) * width).min(num_vertices))
        .collect()
}

pub fn partition_of(id: VertexId, num_vertices: u64, partitions: usize) -> usize {
    let width = num_vertices.div_ceil(partitions.max(1) as u64).max(1);
    (id / width) as usize
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionManifest {
    pub index: usize,
    pub id_range: Range<u64>,
    pub spill_names: Vec<String>,
}

/// Shape of a range-partitioned row matrix stored as spill files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixSetMeta {
    pub num_vertices: u64,
    pub dim: usize,
    pub dtype: Dtype,
    pub partitions: usize,
}

impl MatrixSetMeta {
    fn render(&self) -> String {
        format!(
            "num_vertices {}\ndim {}\ndtype {}\npartitions {}\n",
            self.num_vertices, self.dim, self.dtype, self.partitions
        )
    }

    fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |what: &str| Error::InvalidGraph(format!("{}: {what}", path.display()));
        let mut num_vertices = None;
        let mut dim = None;
        let mut dtype = None;
        let mut partitions = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| bad(&format!("malformed line {line:?}")))?;
            let value = value.trim();
            match key {
                "num_vertices" => num_vertices = value.parse().ok(),
                "dim" => dim = value.parse().ok(),
                "dtype" => dtype = value.parse().ok(),
                "partitions" => partitions = value.parse().ok(),
                _ => return Err(bad(&format!("unknown key {key:?}"))),
            }
        }
        match (num_vertices, dim, dtype, partitions) {
            (Some(num_vertices), Some(dim), Some(dtype), Some(partitions)) if partitions > 0 => {
                Ok(Self {
                    num_vertices,
                    dim,
                    dtype,
                    partitions,
                })
            }
            _ => Err(bad("missing or invalid field")),
        }
    }
}

/// A directory of `part_<k>/spill_<n>` files plus manifests.
#[derive(Debug, Clone)]
pub struct MatrixSet {
    pub dir: PathBuf,
    pub meta: MatrixSetMeta,
    pub manifests: Vec<PartitionManifest>,
}

impl MatrixSet {
    /// Prepares an empty matrix set; nothing is visible to readers until
    /// [`MatrixSet::finalize`].
    pub fn create(dir: &Path, meta: MatrixSetMeta) -> Result<Self> {
        if meta.partitions == 0 {
            return Err(Error::Config("partition count must be >= 1".into()));
        }
        fs::create_dir_all(dir).at(dir)?;
        let manifests = partition_ranges(meta.num_vertices, meta.partitions)
            .into_iter()
            .enumerate()
            .map(|(index, id_range)| PartitionManifest {
                index,
                id_range,
                spill_names: Vec::new(),
            })
            .collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            manifests,
        })
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(MATRIX_META_FILE);
        let text = fs::read_to_string(&meta_path).at(&meta_path)?;
        let meta = MatrixSetMeta::parse(&text, &meta_path)?;
        let mut set = Self {
            dir: dir.to_path_buf(),
            meta,
            manifests: Vec::new(),
        };
        for (index, id_range) in partition_ranges(meta.num_vertices, meta.partitions)
            .into_iter()
            .enumerate()
        {
            let path = set.partition_dir(index).join(MANIFEST_FILE);
            let spill_names = match fs::read_to_string(&path) {
                Ok(text) => text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(String::from)
                    .collect(),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
                Err(e) => return Err(Error::io(path, e)),
            };
            set.manifests.push(PartitionManifest {
                index,
                id_range,
                spill_names,
            });
        }
        Ok(set)
    }

    pub fn partition_dir(&self, index: usize) -> PathBuf {
        self.dir.join(format!("part_{index}"))
    }

    /// Writes every manifest and the metadata file.
    pub fn finalize(&self) -> Result<()> {
        for m in &self.manifests {
            let dir = self.partition_dir(m.index);
            fs::create_dir_all(&dir).at(&dir)?;
            let mut text = String::new();
            for name in &m.spill_names {
                text.push_str(name);
                text.push('\n');
            }
            let path = dir.join(MANIFEST_FILE);
            fs::write(&path, text).at(&path)?;
        }
        let path = self.dir.join(MATRIX_META_FILE);
        fs::write(&path, self.meta.render()).at(&path)
    }

    /// `(partition index, spill path)` for every registered spill.
    pub fn spill_paths(&self) -> Vec<(usize, PathBuf)> {
        self.manifests
            .iter()
            .flat_map(|m| {
                let dir = self.partition_dir(m.index);
                m.spill_names.iter().map(move |n| (m.index, dir.join(n)))
            })
            .collect()
    }

    /// Sum of row-section payload bytes over all spills (headers only).
    pub fn total_row_bytes(&self) -> Result<u64> {
        let mut total = 0;
        for (_, path) in self.spill_paths() {
            let h = read_spill_header(&path)?;
            total += h.row_count * h.row_bytes();
        }
        Ok(total)
    }

    /// Sum of on-disk spill file sizes.
    pub fn total_file_bytes(&self) -> Result<u64> {
        let mut total = 0;
        for (_, path) in self.spill_paths() {
            total += fs::metadata(&path).at(&path)?.len();
        }
        Ok(total)
    }
}

/// Loads a whole matrix set into a dense row-major f32 matrix, checking
/// that every vertex appears in exactly one spill of its own partition.
pub fn read_matrix_set(dir: &Path) -> Result<(MatrixSetMeta, Vec<f32>)> {
    let set = MatrixSet::open(dir)?;
    let meta = set.meta;
    let n = meta.num_vertices as usize;
    let mut out = vec![0f32; n * meta.dim];
    let mut seen = vec![false; n];
    for m in &set.manifests {
        for name in &m.spill_names {
            let spill = read_spill(&set.partition_dir(m.index).join(name))?;
            if spill.header.dim as usize != meta.dim {
                return Err(Error::DimMismatch {
                    expected: meta.dim,
                    found: spill.header.dim as usize,
                    context: "spill in matrix set",
                });
            }
            super::spill::check_sorted_in_range(&spill.ids, &m.id_range)?;
            let rows = spill.rows.to_f32();
            for (i, &id) in spill.ids.iter().enumerate() {
                if std::mem::replace(&mut seen[id as usize], true) {
                    return Err(Error::DuplicateVertex(id));
                }
                out[id as usize * meta.dim..(id as usize + 1) * meta.dim]
                    .copy_from_slice(&rows[i * meta.dim..(i + 1) * meta.dim]);
            }
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::CoverageGap(missing as u64));
    }
    Ok((meta, out))
}

/// Writes a dense matrix as one sorted spill per non-empty partition.
pub fn write_dense_matrix_set(
    dir: &Path,
    rows: RowsRef<'_>,
    num_vertices: u64,
    dim: usize,
    partitions: usize,
    mode: IoMode,
) -> Result<MatrixSet> {
    if rows.len() as u64 != num_vertices * dim as u64 {
        return Err(Error::RowShape(format!(
            "{} elements for {num_vertices} x {dim}",
            rows.len()
        )));
    }
    let mut set = MatrixSet::create(
        dir,
        MatrixSetMeta {
            num_vertices,
            dim,
            dtype: rows.dtype(),
            partitions,
        },
    )?;
    for k in 0..set.manifests.len() {
        let range = set.manifests[k].id_range.clone();
        if range.is_empty() {
            continue;
        }
        let ids: Vec<u64> = range.clone().collect();
        let (a, b) = (range.start as usize * dim, range.end as usize * dim);
        let slice = match rows {
            RowsRef::F32(v) => RowsRef::F32(&v[a..b]),
            RowsRef::F16(v) => RowsRef::F16(&v[a..b]),
        };
        let part_dir = set.partition_dir(k);
        write_spill(&mut set.manifests[k], &ids, slice, dim, &part_dir, mode)?;
    }
    set.finalize()?;
    Ok(set)
}

impl From<Vec<f16>> for Rows {
    fn from(v: Vec<f16>) -> Self {
        Rows::F16(v)
    }
}

impl From<Vec<f32>> for Rows {
    fn from(v: Vec<f32>) -> Self {
        Rows::F32(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranges_small_cases() {
        assert_eq!(partition_ranges(10, 2), vec![0..5, 5..10]);
        assert_eq!(partition_ranges(10, 3), vec![0..4, 4..8, 8..10]);
        assert_eq!(partition_ranges(2, 4), vec![0..1, 1..2, 2..2, 2..2]);
        assert_eq!(partition_ranges(0, 2), vec![0..0, 0..0]);
    }

    #[test]
    fn dense_roundtrip_with_empty_partition() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..6).map(|x| x as f32).collect();
        let set =
            write_dense_matrix_set(dir.path(), RowsRef::F32(&data), 3, 2, 5, IoMode::Buffered)
                .unwrap();
        assert!(set.manifests[4].spill_names.is_empty());
        let manifest = fs::read_to_string(set.partition_dir(4).join(MANIFEST_FILE)).unwrap();
        assert!(manifest.is_empty());
        let (meta, back) = read_matrix_set(dir.path()).unwrap();
        assert_eq!(meta.dim, 2);
        assert_eq!(back, data);
    }

    proptest! {
        #[test]
        fn partitions_tile_the_id_space(n in 0u64..5000, p in 1usize..40) {
            let ranges = partition_ranges(n, p);
            prop_assert_eq!(ranges.len(), p);
            let mut next = 0;
            for (k, r) in ranges.iter().enumerate() {
                prop_assert_eq!(r.start, next);
                prop_assert!(r.end >= r.start);
                next = r.end;
                for id in [r.start, r.end.saturating_sub(1)] {
                    if r.contains(&id) {
                        prop_assert_eq!(partition_of(id, n, p), k);
                    }
                }
            }
            prop_assert_eq!(next, n);
        }
    }
}
