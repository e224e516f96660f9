//! Chunked, pseudo-sequential reader over a layer's input.
//!
//! A chunk is a contiguous vertex-ID range. Its feature rows may be spread
//! over several sorted spill files per partition; for every overlapping
//! spill the reader binary-searches the spill's id array for the chunk
//! bounds and issues one aligned positioned read for that contiguous row
//! slice, then k-way merges the slices by vertex ID.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::mpsc::SyncSender;

use crate::dio::{DioFile, IoMode};
use crate::error::{Error, Result};
use crate::queue::{self, StageMsg};
use crate::storage::{
    read_spill_header, Dtype, MatrixSet, Rows, SpillHeader, TopologyReader, TopologySlice, VertexId,
    SPILL_HEADER_LEN,
};

pub const DEFAULT_OPEN_FILES: usize = 128;

/// Splits `[0, num_vertices)` into ranges of `floor(budget / row_bytes)`
/// vertices (at least one).
pub fn plan_chunks(
    num_vertices: u64,
    dim: usize,
    dtype: Dtype,
    chunk_budget: u64,
) -> Result<Vec<Range<VertexId>>> {
    if dim == 0 {
        return Err(Error::Config("feature dim must be >= 1".into()));
    }
    let per_chunk = (chunk_budget / dtype.row_bytes(dim)).max(1);
    let mut plan = Vec::with_capacity(num_vertices.div_ceil(per_chunk) as usize);
    let mut start = 0;
    while start < num_vertices {
        let end = (start + per_chunk).min(num_vertices);
        plan.push(start..end);
        start = end;
    }
    Ok(plan)
}

/// A contiguous vertex range with its out-edges and feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub range: Range<VertexId>,
    /// `range.len() + 1` offsets into `out_neighbors`, starting at 0.
    pub local_offsets: Vec<u64>,
    pub out_neighbors: Vec<VertexId>,
    /// Row-major f32, one row per vertex in ascending ID order.
    pub features: Vec<f32>,
    pub dim: usize,
}

impl Chunk {
    pub fn len(&self) -> usize {
        (self.range.end - self.range.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, v: VertexId) -> &[f32] {
        let i = (v - self.range.start) as usize;
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn out_neighbors_of(&self, v: VertexId) -> &[VertexId] {
        let i = (v - self.range.start) as usize;
        &self.out_neighbors[self.local_offsets[i] as usize..self.local_offsets[i + 1] as usize]
    }
}

/// Instrumented I/O and delivery counters for one layer's reader.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReadCounters {
    /// Bytes fetched for feature row sections (alignment-rounded).
    pub feature_bytes: u64,
    /// Bytes fetched for spill headers and id arrays.
    pub index_bytes: u64,
    pub topology_bytes: u64,
    pub row_reads: u64,
    pub spill_opens: u64,
    pub rows_delivered: u64,
    /// Rows handed out more than once (must stay 0).
    pub duplicate_rows: u64,
    pub chunks: u64,
}

impl ReadCounters {
    pub fn total_bytes(&self) -> u64 {
        self.feature_bytes + self.index_bytes + self.topology_bytes
    }
}

struct OpenSpill {
    file: DioFile,
    ids: Vec<VertexId>,
}

/// Index entry for one spill file; the handle is opened on first use.
pub struct SpillDescriptor {
    pub path: PathBuf,
    pub header: SpillHeader,
    open: Option<OpenSpill>,
    last_used: u64,
    retired: bool,
}

impl std::fmt::Debug for SpillDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpillDescriptor")
            .field("path", &self.path)
            .field("min_id", &self.header.min_id)
            .field("max_id", &self.header.max_id)
            .field("row_count", &self.header.row_count)
            .field("open", &self.open.is_some())
            .finish()
    }
}

impl SpillDescriptor {
    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }
}

/// Serves chunks of one layer's input in ascending ID order.
pub struct ChunkReader {
    num_vertices: u64,
    dim: usize,
    partitions: Vec<(Range<u64>, Vec<SpillDescriptor>)>,
    topology: Option<TopologyReader>,
    mode: IoMode,
    open_cap: usize,
    open_count: usize,
    clock: u64,
    counters: ReadCounters,
    delivered: Vec<u64>,
}

impl ChunkReader {
    pub fn open(features: &MatrixSet, topology_dir: &Path, mode: IoMode) -> Result<Self> {
        let topology = TopologyReader::open(topology_dir, mode)?;
        if topology.num_vertices() != features.meta.num_vertices {
            return Err(Error::InvalidGraph(format!(
                "topology has {} vertices, features {}",
                topology.num_vertices(),
                features.meta.num_vertices
            )));
        }
        Self::build(features, Some(topology), mode)
    }

    /// A reader that serves feature rows only; chunks carry no edges.
    pub fn features_only(features: &MatrixSet, mode: IoMode) -> Result<Self> {
        Self::build(features, None, mode)
    }

    fn build(features: &MatrixSet, topology: Option<TopologyReader>, mode: IoMode) -> Result<Self> {
        let mut counters = ReadCounters::default();
        let mut partitions = Vec::with_capacity(features.manifests.len());
        for m in &features.manifests {
            let dir = features.partition_dir(m.index);
            let mut descs = Vec::with_capacity(m.spill_names.len());
            for name in &m.spill_names {
                let path = dir.join(name);
                let header = read_spill_header(&path)?;
                counters.index_bytes += SPILL_HEADER_LEN;
                if header.dim as usize != features.meta.dim {
                    return Err(Error::DimMismatch {
                        expected: features.meta.dim,
                        found: header.dim as usize,
                        context: "spill header",
                    });
                }
                if header.min_id < m.id_range.start || header.max_id >= m.id_range.end {
                    return Err(Error::IdOutsidePartition {
                        id: if header.min_id < m.id_range.start {
                            header.min_id
                        } else {
                            header.max_id
                        },
                        start: m.id_range.start,
                        end: m.id_range.end,
                    });
                }
                descs.push(SpillDescriptor {
                    path,
                    header,
                    open: None,
                    last_used: 0,
                    retired: false,
                });
            }
            descs.sort_by_key(|d| d.header.min_id);
            partitions.push((m.id_range.clone(), descs));
        }
        Ok(Self {
            num_vertices: features.meta.num_vertices,
            dim: features.meta.dim,
            partitions,
            topology,
            mode,
            open_cap: DEFAULT_OPEN_FILES,
            open_count: 0,
            clock: 0,
            counters,
            delivered: vec![0; (features.meta.num_vertices as usize).div_ceil(64)],
        })
    }

    pub fn with_open_file_cap(mut self, cap: usize) -> Self {
        self.open_cap = cap.max(1);
        self
    }

    pub fn num_vertices(&self) -> u64 {
        self.num_vertices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counters(&self) -> ReadCounters {
        self.counters
    }

    pub fn open_files(&self) -> usize {
        self.open_count
    }

    /// Vertices whose feature row has been delivered at least once.
    pub fn delivered_count(&self) -> u64 {
        self.delivered.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// True when every row was delivered and none twice.
    pub fn delivered_exactly_once(&self) -> bool {
        self.counters.duplicate_rows == 0 && self.delivered_count() == self.num_vertices
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &SpillDescriptor> {
        self.partitions.iter().flat_map(|(_, d)| d.iter())
    }

    /// Assembles the chunk for `range` from topology and overlapping spills.
    pub fn read_chunk(&mut self, range: Range<VertexId>) -> Result<Chunk> {
        if range.end > self.num_vertices || range.start > range.end {
            return Err(Error::VertexOutOfRange {
                id: range.end,
                num_vertices: self.num_vertices,
            });
        }
        let topo = match &mut self.topology {
            Some(t) => t.slice(range.start, range.end)?,
            None => TopologySlice {
                local_offsets: vec![0; (range.end - range.start) as usize + 1],
                ..TopologySlice::default()
            },
        };
        self.counters.topology_bytes += topo.bytes_fetched;

        let mut slices: Vec<(Vec<VertexId>, Vec<f32>)> = Vec::new();
        for p in 0..self.partitions.len() {
            let prange = self.partitions[p].0.clone();
            if prange.end <= range.start || prange.start >= range.end {
                continue;
            }
            for d in 0..self.partitions[p].1.len() {
                let h = self.partitions[p].1[d].header;
                if h.max_id < range.start || h.min_id >= range.end {
                    continue;
                }
                if let Some(slice) = self.read_slice(p, d, &range)? {
                    slices.push(slice);
                }
            }
        }
        // spills wholly before this chunk are never needed again
        for (_, descs) in &mut self.partitions {
            for d in descs.iter_mut() {
                if !d.retired && d.header.max_id < range.end {
                    if d.open.take().is_some() {
                        self.open_count -= 1;
                    }
                    d.retired = d.header.max_id < range.end;
                }
            }
        }

        let features = merge_slices(&slices, &range, self.dim)?;
        for v in range.clone() {
            let (w, bit) = ((v / 64) as usize, 1u64 << (v % 64));
            if self.delivered[w] & bit != 0 {
                self.counters.duplicate_rows += 1;
            }
            self.delivered[w] |= bit;
        }
        self.counters.rows_delivered += range.end - range.start;
        self.counters.chunks += 1;
        Ok(Chunk {
            range,
            local_offsets: topo.local_offsets,
            out_neighbors: topo.out_neighbors,
            features,
            dim: self.dim,
        })
    }

    fn read_slice(
        &mut self,
        p: usize,
        d: usize,
        range: &Range<VertexId>,
    ) -> Result<Option<(Vec<VertexId>, Vec<f32>)>> {
        self.clock += 1;
        if self.partitions[p].1[d].open.is_none() {
            if self.open_count >= self.open_cap {
                self.close_least_recent();
            }
            let desc = &mut self.partitions[p].1[d];
            let mut file = DioFile::open(&desc.path, self.mode)?;
            let h = desc.header;
            let ids_read = file.read_range(h.ids_offset(), h.row_count * 8)?;
            self.counters.index_bytes += ids_read.fetched;
            let ids = ids_read
                .bytes()
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            desc.open = Some(OpenSpill { file, ids });
            self.open_count += 1;
            self.counters.spill_opens += 1;
        }
        let desc = &mut self.partitions[p].1[d];
        desc.last_used = self.clock;
        let h = desc.header;
        let open = desc.open.as_mut().unwrap();
        let lo = open.ids.partition_point(|&id| id < range.start);
        let hi = open.ids.partition_point(|&id| id < range.end);
        if lo == hi {
            return Ok(None);
        }
        let row_bytes = h.row_bytes();
        let read = open
            .file
            .read_range(h.rows_offset() + lo as u64 * row_bytes, (hi - lo) as u64 * row_bytes)?;
        self.counters.feature_bytes += read.fetched;
        self.counters.row_reads += 1;
        let rows = Rows::decode(read.bytes(), h.dtype).to_f32();
        Ok(Some((open.ids[lo..hi].to_vec(), rows)))
    }

    fn close_least_recent(&mut self) {
        let victim = self
            .partitions
            .iter_mut()
            .flat_map(|(_, d)| d.iter_mut())
            .filter(|d| d.open.is_some())
            .min_by_key(|d| d.last_used);
        if let Some(d) = victim {
            d.open = None;
            self.open_count -= 1;
        }
    }
}

/// K-way merge of sorted `(ids, rows)` slices into a dense range matrix.
fn merge_slices(
    slices: &[(Vec<VertexId>, Vec<f32>)],
    range: &Range<VertexId>,
    dim: usize,
) -> Result<Vec<f32>> {
    let len = (range.end - range.start) as usize;
    let mut out = Vec::with_capacity(len * dim);
    let mut heap: BinaryHeap<Reverse<(VertexId, usize, usize)>> = slices
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.0.is_empty())
        .map(|(i, s)| Reverse((s.0[0], i, 0)))
        .collect();
    let mut expected = range.start;
    while let Some(Reverse((id, s, pos))) = heap.pop() {
        if id < expected {
            return Err(Error::DuplicateVertex(id));
        }
        if id > expected {
            return Err(Error::CoverageGap(expected));
        }
        out.extend_from_slice(&slices[s].1[pos * dim..(pos + 1) * dim]);
        expected += 1;
        if let Some(&next) = slices[s].0.get(pos + 1) {
            heap.push(Reverse((next, s, pos + 1)));
        }
    }
    if expected < range.end {
        return Err(Error::CoverageGap(expected));
    }
    Ok(out)
}

/// Streams every chunk of `plan` into `tx`, then an end marker.
pub fn run_reader(
    reader: &mut ChunkReader,
    plan: &[Range<VertexId>],
    tx: &SyncSender<StageMsg<Chunk>>,
) -> Result<ReadCounters> {
    for range in plan {
        match reader.read_chunk(range.clone()) {
            Ok(chunk) => queue::send(tx, StageMsg::Item(chunk))?,
            Err(e) => {
                let _ = tx.send(StageMsg::Abort);
                return Err(e);
            }
        }
    }
    queue::send(tx, StageMsg::End)?;
    Ok(reader.counters())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::{write_csr, write_spill, GraphCsr, MatrixSetMeta, RowsRef};

    #[test]
    fn plan_arithmetic() {
        assert_eq!(
            plan_chunks(10, 4, Dtype::F32, 64).unwrap(),
            vec![0..4, 4..8, 8..10]
        );
        assert_eq!(plan_chunks(3, 4, Dtype::F32, 5).unwrap(), vec![0..1, 1..2, 2..3]);
        assert_eq!(
            plan_chunks(100_000, 8, Dtype::F32, 8 << 20).unwrap(),
            vec![0..100_000]
        );
        assert!(plan_chunks(10, 0, Dtype::F32, 64).is_err());
        assert!(plan_chunks(0, 4, Dtype::F32, 64).unwrap().is_empty());
    }

    /// Two interleaved spills in one partition over [0, 8), dim 1,
    /// feature value = 10 * id.
    fn interleaved(dir: &Path) -> MatrixSet {
        let g = GraphCsr::from_edges(8, &mut vec![(0, 1), (5, 2)]).unwrap();
        write_csr(&g, dir).unwrap();
        let mut set = MatrixSet::create(
            &dir.join("f"),
            MatrixSetMeta {
                num_vertices: 8,
                dim: 1,
                dtype: Dtype::F32,
                partitions: 1,
            },
        )
        .unwrap();
        let pd = set.partition_dir(0);
        for ids in [[0u64, 2, 4, 6], [1, 3, 5, 7]] {
            let rows: Vec<f32> = ids.iter().map(|&i| 10.0 * i as f32).collect();
            write_spill(&mut set.manifests[0], &ids, RowsRef::F32(&rows), 1, &pd, IoMode::Direct)
                .unwrap();
        }
        set.finalize().unwrap();
        set
    }

    #[test]
    fn merge_on_read_one_read_per_spill() {
        let dir = tempfile::tempdir().unwrap();
        let set = interleaved(dir.path());
        let mut r = ChunkReader::open(&set, dir.path(), IoMode::Direct).unwrap();
        let c = r.read_chunk(2..6).unwrap();
        assert_eq!(c.features, vec![20.0, 30.0, 40.0, 50.0]);
        assert_eq!(r.counters().row_reads, 2);
        assert_eq!(c.out_neighbors_of(5), &[2]);
        assert_eq!(c.local_offsets, vec![0, 0, 0, 0, 1]);
    }

    #[test]
    fn disjoint_spill_is_never_opened() {
        let dir = tempfile::tempdir().unwrap();
        let g = GraphCsr::from_edges(8, &mut vec![]).unwrap();
        write_csr(&g, dir.path()).unwrap();
        let mut set = MatrixSet::create(
            &dir.path().join("f"),
            MatrixSetMeta {
                num_vertices: 8,
                dim: 2,
                dtype: Dtype::F32,
                partitions: 1,
            },
        )
        .unwrap();
        let pd = set.partition_dir(0);
        for ids in [[0u64, 1, 2, 3], [4, 5, 6, 7]] {
            let rows = vec![1.0f32; 8];
            write_spill(&mut set.manifests[0], &ids, RowsRef::F32(&rows), 2, &pd, IoMode::Buffered)
                .unwrap();
        }
        set.finalize().unwrap();
        let mut r = ChunkReader::open(&set, dir.path(), IoMode::Buffered).unwrap();
        r.read_chunk(0..4).unwrap();
        assert_eq!(r.counters().spill_opens, 1);
        assert_eq!(r.counters().row_reads, 1);
        assert!(r.descriptors().all(|d| !d.is_open()));
    }

    #[test]
    fn coverage_gap_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let g = GraphCsr::from_edges(4, &mut vec![]).unwrap();
        write_csr(&g, dir.path()).unwrap();
        let mut set = MatrixSet::create(
            &dir.path().join("f"),
            MatrixSetMeta {
                num_vertices: 4,
                dim: 1,
                dtype: Dtype::F32,
                partitions: 1,
            },
        )
        .unwrap();
        let pd = set.partition_dir(0);
        write_spill(&mut set.manifests[0], &[0, 1, 3], RowsRef::F32(&[0.0; 3]), 1, &pd, IoMode::Buffered)
            .unwrap();
        set.finalize().unwrap();
        let mut r = ChunkReader::open(&set, dir.path(), IoMode::Buffered).unwrap();
        assert!(matches!(r.read_chunk(0..4), Err(Error::CoverageGap(2))));
    }

    #[test]
    fn open_file_cap_is_respected() {
        let dir = tempfile::tempdir().unwrap();
        let set = interleaved(dir.path());
        let mut r = ChunkReader::open(&set, dir.path(), IoMode::Buffered)
            .unwrap()
            .with_open_file_cap(1);
        for start in 0..8 {
            let c = r.read_chunk(start..start + 1).unwrap();
            assert_eq!(c.features, vec![10.0 * start as f32]);
            assert!(r.open_files() <= 1);
        }
    }

    #[test]
    fn reader_stage_emits_chunks_then_end() {
        let dir = tempfile::tempdir().unwrap();
        let set = interleaved(dir.path());
        let mut r = ChunkReader::open(&set, dir.path(), IoMode::Buffered).unwrap();
        let plan = plan_chunks(8, 1, Dtype::F32, 12).unwrap();
        assert_eq!(plan.len(), 3);
        let (tx, rx) = queue::bounded::<Chunk>(1);
        let handle = std::thread::spawn(move || {
            let mut got = vec![];
            loop {
                match queue::recv(&rx) {
                    StageMsg::Item(c) => {
                        std::thread::sleep(std::time::Duration::from_millis(5));
                        got.push(c.range)
                    }
                    StageMsg::End => break got,
                    StageMsg::Abort => panic!("abort"),
                }
            }
        });
        let counters = run_reader(&mut r, &plan, &tx).unwrap();
        assert_eq!(handle.join().unwrap(), vec![0..3, 3..6, 6..8]);
        assert_eq!(counters.rows_delivered, 8);
        assert!(r.delivered_exactly_once());
        r.read_chunk(2..3).unwrap();
        assert!(!r.delivered_exactly_once());
    }
}
