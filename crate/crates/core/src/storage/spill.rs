use std::fs;
use std::path::Path;

use half::f16;

use super::{truncated, Dtype, HeaderCursor, PartitionManifest, VertexId, FORMAT_VERSION};
use crate::dio::{self, align_up, AlignedBuf, IoMode, ALIGN};
use crate::error::{Error, IoContext, Result};

const SPILL_MAGIC: &[u8; 4] = b"ASPL";
pub const SPILL_HEADER_LEN: u64 = ALIGN as u64;

/// Row storage at the file's element type.
#[derive(Debug, Clone, PartialEq)]
pub enum Rows {
    F32(Vec<f32>),
    F16(Vec<f16>),
}

#[derive(Debug, Clone, Copy)]
pub enum RowsRef<'a> {
    F32(&'a [f32]),
    F16(&'a [f16]),
}

impl Rows {
    pub fn dtype(&self) -> Dtype {
        match self {
            Rows::F32(_) => Dtype::F32,
            Rows::F16(_) => Dtype::F16,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Rows::F32(v) => v.len(),
            Rows::F16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_ref(&self) -> RowsRef<'_> {
        match self {
            Rows::F32(v) => RowsRef::F32(v),
            Rows::F16(v) => RowsRef::F16(v),
        }
    }

    /// Upconverts to f32.
    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            Rows::F32(v) => v.clone(),
            Rows::F16(v) => v.iter().map(|x| x.to_f32()).collect(),
        }
    }

    pub(crate) fn decode(bytes: &[u8], dtype: Dtype) -> Rows {
        match dtype {
            Dtype::F32 => Rows::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F16 => Rows::F16(
                bytes
                    .chunks_exact(2)
                    .map(|c| f16::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        }
    }
}

impl RowsRef<'_> {
    pub fn len(&self) -> usize {
        match self {
            RowsRef::F32(v) => v.len(),
            RowsRef::F16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            RowsRef::F32(_) => Dtype::F32,
            RowsRef::F16(_) => Dtype::F16,
        }
    }

    fn encode_into(&self, buf: &mut AlignedBuf) {
        match self {
            RowsRef::F32(v) => {
                for x in v.iter() {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
            RowsRef::F16(v) => {
                for x in v.iter() {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
}

/// Decoded fixed-size spill header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpillHeader {
    pub min_id: VertexId,
    pub max_id: VertexId,
    pub row_count: u64,
    pub dim: u32,
    pub dtype: Dtype,
}

impl SpillHeader {
    pub fn ids_offset(&self) -> u64 {
        SPILL_HEADER_LEN
    }

    pub fn rows_offset(&self) -> u64 {
        SPILL_HEADER_LEN + align_up(self.row_count * 8)
    }

    pub fn row_bytes(&self) -> u64 {
        self.dtype.row_bytes(self.dim as usize)
    }

    pub fn rows_end(&self) -> u64 {
        self.rows_offset() + self.row_count * self.row_bytes()
    }

    pub(crate) fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut cur = HeaderCursor::new(bytes, path);
        cur.magic(SPILL_MAGIC)?;
        cur.version()?;
        let min_id = cur.u64()?;
        let max_id = cur.u64()?;
        let row_count = cur.u64()?;
        let dim = cur.u32()?;
        let tag = cur.u8()?;
        let dtype = Dtype::from_tag(tag)
            .ok_or_else(|| Error::InvalidGraph(format!("{}: dtype tag {tag}", path.display())))?;
        if row_count == 0 || min_id > max_id || max_id - min_id + 1 < row_count {
            return Err(Error::InvalidGraph(format!(
                "{}: inconsistent spill header (min {min_id}, max {max_id}, rows {row_count})",
                path.display()
            )));
        }
        Ok(Self {
            min_id,
            max_id,
            row_count,
            dim,
            dtype,
        })
    }
}

/// A fully decoded spill file.
#[derive(Debug, Clone, PartialEq)]
pub struct SpillFile {
    pub header: SpillHeader,
    pub ids: Vec<VertexId>,
    pub rows: Rows,
}

pub(crate) fn check_sorted_in_range(ids: &[VertexId], range: &std::ops::Range<u64>) -> Result<()> {
    for (i, &id) in ids.iter().enumerate() {
        if i > 0 && ids[i - 1] >= id {
            return Err(Error::UnsortedIds { position: i });
        }
        if !range.contains(&id) {
            return Err(Error::IdOutsidePartition {
                id,
                start: range.start,
                end: range.end,
            });
        }
    }
    Ok(())
}

/// Writes a sorted spill into the partition directory `dir`, registers it
/// in `manifest` and returns its name and the bytes written.
pub fn write_spill(
    manifest: &mut PartitionManifest,
    ids: &[VertexId],
    rows: RowsRef<'_>,
    dim: usize,
    dir: &Path,
    mode: IoMode,
) -> Result<(String, u64)> {
    if ids.is_empty() {
        return Err(Error::RowShape("spill must hold at least one row".into()));
    }
    if dim == 0 || rows.len() != ids.len() * dim {
        return Err(Error::RowShape(format!(
            "{} ids x dim {dim} != {} elements",
            ids.len(),
            rows.len()
        )));
    }
    check_sorted_in_range(ids, &manifest.id_range)?;

    let header = SpillHeader {
        min_id: ids[0],
        max_id: *ids.last().unwrap(),
        row_count: ids.len() as u64,
        dim: dim as u32,
        dtype: rows.dtype(),
    };
    let mut buf = AlignedBuf::new();
    buf.extend_from_slice(SPILL_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&header.min_id.to_le_bytes());
    buf.extend_from_slice(&header.max_id.to_le_bytes());
    buf.extend_from_slice(&header.row_count.to_le_bytes());
    buf.extend_from_slice(&header.dim.to_le_bytes());
    buf.extend_from_slice(&[header.dtype.tag()]);
    buf.pad_to_alignment();
    for &id in ids {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    buf.pad_to_alignment();
    rows.encode_into(&mut buf);
    buf.pad_to_alignment();

    fs::create_dir_all(dir).at(dir)?;
    let name = format!("spill_{}", manifest.spill_names.len());
    let written = dio::write_file(&dir.join(&name), &buf, mode)?;
    manifest.spill_names.push(name.clone());
    Ok((name, written))
}

/// Reads only the fixed header block.
pub fn read_spill_header(path: &Path) -> Result<SpillHeader> {
    use std::io::Read;
    let mut head = Vec::with_capacity(64);
    fs::File::open(path)
        .at(path)?
        .take(64)
        .read_to_end(&mut head)
        .at(path)?;
    SpillHeader::parse(&head, path)
}

/// Reads and validates a whole spill file.
pub fn read_spill(path: &Path) -> Result<SpillFile> {
    let bytes = fs::read(path).at(path)?;
    let header = SpillHeader::parse(&bytes, path)?;
    let len = bytes.len() as u64;
    if len < header.rows_end() {
        return Err(truncated(path, header.rows_end(), len));
    }
    let ids_at = header.ids_offset() as usize;
    let ids: Vec<VertexId> = bytes[ids_at..ids_at + header.row_count as usize * 8]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    check_sorted_in_range(&ids, &(header.min_id..header.max_id + 1))?;
    if ids[0] != header.min_id || *ids.last().unwrap() != header.max_id {
        return Err(Error::InvalidGraph(format!(
            "{}: id array disagrees with header bounds",
            path.display()
        )));
    }
    let rows = Rows::decode(
        &bytes[header.rows_offset() as usize..header.rows_end() as usize],
        header.dtype,
    );
    Ok(SpillFile { header, ids, rows })
}
