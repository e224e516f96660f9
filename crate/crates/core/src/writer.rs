//! Scatters transformed batches into per-partition spill buffers and
//! flushes each full buffer as a sorted spill file.

use std::path::Path;
use std::sync::mpsc::Receiver;

use half::f16;

use crate::compute::Batch;
use crate::dio::IoMode;
use crate::error::{Error, Result};
use crate::queue::{self, StageMsg};
use crate::storage::{
    partition_of, write_spill, Dtype, MatrixSet, MatrixSetMeta, RowsRef, VertexId,
};

pub const DEFAULT_SPILL_BUFFER_BYTES: u64 = 8 << 20;
pub const DEFAULT_PARTITIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlushEvent {
    pub partition: usize,
    pub spill: String,
    pub rows: usize,
    pub bytes: u64,
}

#[derive(Debug, Default)]
struct PartitionBuffer {
    ids: Vec<VertexId>,
    rows: Vec<f32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WriterCounters {
    pub rows: u64,
    pub flushes: u64,
    pub bytes_written: u64,
    /// Largest number of rows held across all buffers at once.
    pub peak_buffered_rows: u64,
}

/// One bounded buffer per output partition.
#[derive(Debug)]
pub struct SpillBufferSet {
    set: MatrixSet,
    buffers: Vec<PartitionBuffer>,
    capacity_rows: usize,
    seen: Vec<u64>,
    buffered: u64,
    mode: IoMode,
    counters: WriterCounters,
    sorted: Vec<u32>,
    staged: Vec<f32>,
    staged_ids: Vec<VertexId>,
}

impl SpillBufferSet {
    /// f32 output set of `num_vertices × dim` rows.
    pub fn create(
        dir: &Path,
        num_vertices: u64,
        dim: usize,
        partitions: usize,
        buffer_bytes: u64,
        mode: IoMode,
    ) -> Result<Self> {
        Self::with_meta(
            dir,
            MatrixSetMeta {
                num_vertices,
                dim,
                dtype: Dtype::F32,
                partitions,
            },
            buffer_bytes,
            mode,
        )
    }

    /// Rows are buffered as f32 and stored at `meta.dtype`.
    pub fn with_meta(dir: &Path, meta: MatrixSetMeta, buffer_bytes: u64, mode: IoMode) -> Result<Self> {
        let (num_vertices, dim, partitions) = (meta.num_vertices, meta.dim, meta.partitions);
        if dim == 0 {
            return Err(Error::Config("output dim is zero".into()));
        }
        let set = MatrixSet::create(dir, meta)?;
        let capacity_rows = ((buffer_bytes / meta.dtype.row_bytes(dim)) as usize).max(1);
        Ok(Self {
            buffers: (0..partitions).map(|_| PartitionBuffer::default()).collect(),
            set,
            capacity_rows,
            seen: vec![0; (num_vertices as usize).div_ceil(64)],
            buffered: 0,
            mode,
            counters: WriterCounters::default(),
            sorted: Vec::new(),
            staged: Vec::new(),
            staged_ids: Vec::new(),
        })
    }

    pub fn capacity_rows(&self) -> usize {
        self.capacity_rows
    }

    pub fn counters(&self) -> WriterCounters {
        self.counters
    }

    pub fn matrix_set(&self) -> &MatrixSet {
        &self.set
    }

    pub fn buffered_rows(&self, partition: usize) -> usize {
        self.buffers[partition].ids.len()
    }

    /// Routes each row to its partition, flushing a buffer first when the
    /// row would not fit.
    pub fn scatter(&mut self, batch: &Batch) -> Result<Vec<FlushEvent>> {
        let meta = self.set.meta;
        if batch.dim != meta.dim || batch.rows.len() != batch.ids.len() * batch.dim {
            return Err(Error::DimMismatch {
                expected: meta.dim,
                found: batch.dim,
                context: "writer batch",
            });
        }
        let mut events = Vec::new();
        for (i, &id) in batch.ids.iter().enumerate() {
            if id >= meta.num_vertices {
                return Err(Error::VertexOutOfRange {
                    id,
                    num_vertices: meta.num_vertices,
                });
            }
            let (word, bit) = ((id / 64) as usize, 1u64 << (id % 64));
            if self.seen[word] & bit != 0 {
                return Err(Error::DuplicateVertex(id));
            }
            self.seen[word] |= bit;
            let p = partition_of(id, meta.num_vertices, meta.partitions);
            if self.buffers[p].ids.len() >= self.capacity_rows {
                events.push(self.flush(p)?);
            }
            let buf = &mut self.buffers[p];
            buf.ids.push(id);
            buf.rows
                .extend_from_slice(&batch.rows[i * meta.dim..(i + 1) * meta.dim]);
            self.buffered += 1;
            self.counters.rows += 1;
            self.counters.peak_buffered_rows = self.counters.peak_buffered_rows.max(self.buffered);
        }
        Ok(events)
    }

    fn flush(&mut self, p: usize) -> Result<FlushEvent> {
        let dim = self.set.meta.dim;
        let buf = &mut self.buffers[p];
        self.sorted.clear();
        self.sorted.extend(0..buf.ids.len() as u32);
        self.sorted.sort_unstable_by_key(|&i| buf.ids[i as usize]);
        self.staged_ids.clear();
        self.staged.clear();
        for &i in &self.sorted {
            let i = i as usize;
            self.staged_ids.push(buf.ids[i]);
            self.staged.extend_from_slice(&buf.rows[i * dim..(i + 1) * dim]);
        }
        let rows = buf.ids.len();
        buf.ids.clear();
        buf.rows.clear();
        self.buffered -= rows as u64;
        let dir = self.set.partition_dir(p);
        let narrowed: Vec<f16>;
        let rows_ref = match self.set.meta.dtype {
            Dtype::F32 => RowsRef::F32(&self.staged),
            Dtype::F16 => {
                narrowed = self.staged.iter().map(|&x| f16::from_f32(x)).collect();
                RowsRef::F16(&narrowed)
            }
        };
        let (spill, bytes) = write_spill(
            &mut self.set.manifests[p],
            &self.staged_ids,
            rows_ref,
            dim,
            &dir,
            self.mode,
        )?;
        self.counters.flushes += 1;
        self.counters.bytes_written += bytes;
        Ok(FlushEvent {
            partition: p,
            spill,
            rows,
            bytes,
        })
    }

    /// Flushes every non-empty buffer and publishes the manifests. Fails if
    /// any vertex never arrived.
    pub fn flush_all(mut self) -> Result<(MatrixSet, WriterCounters)> {
        for p in 0..self.buffers.len() {
            if !self.buffers[p].ids.is_empty() {
                self.flush(p)?;
            }
        }
        if self.counters.rows != self.set.meta.num_vertices {
            let missing = (0..self.set.meta.num_vertices)
                .find(|&v| self.seen[(v / 64) as usize] & (1 << (v % 64)) == 0)
                .unwrap_or(0);
            return Err(Error::CoverageGap(missing));
        }
        self.set.finalize()?;
        Ok((self.set, self.counters))
    }
}

/// Writer stage: drains batches until the end marker, then publishes the
/// layer. The output directory is removed if anything fails.
pub fn run_writer(
    rx: &Receiver<StageMsg<Batch>>,
    buffers: SpillBufferSet,
) -> Result<(MatrixSet, WriterCounters)> {
    let dir = buffers.set.dir.clone();
    let result = drain(rx, buffers);
    if result.is_err() {
        let _ = std::fs::remove_dir_all(&dir);
    }
    result
}

fn drain(
    rx: &Receiver<StageMsg<Batch>>,
    mut buffers: SpillBufferSet,
) -> Result<(MatrixSet, WriterCounters)> {
    loop {
        match queue::recv(rx) {
            StageMsg::Item(batch) => {
                buffers.scatter(&batch)?;
            }
            StageMsg::End => return buffers.flush_all(),
            StageMsg::Abort => return Err(Error::Aborted),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::{read_matrix_set, read_spill};

    fn batch(ids: &[u64]) -> Batch {
        Batch {
            ids: ids.to_vec(),
            rows: ids.iter().map(|&i| i as f32).collect(),
            dim: 1,
        }
    }

    #[test]
    fn scatter_routes_by_range() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = SpillBufferSet::create(dir.path(), 10, 1, 2, 1 << 20, IoMode::Buffered).unwrap();
        assert!(s.scatter(&batch(&[1, 7, 3])).unwrap().is_empty());
        assert_eq!((s.buffered_rows(0), s.buffered_rows(1)), (2, 1));
    }

    #[test]
    fn flush_before_overflow_writes_sorted_spill() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = SpillBufferSet::create(dir.path(), 10, 1, 1, 8, IoMode::Direct).unwrap();
        assert_eq!(s.capacity_rows(), 2);
        let ev = s.scatter(&batch(&[6, 2, 4])).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].rows, 2);
        assert_eq!(s.buffered_rows(0), 1);
        let spill = read_spill(&s.matrix_set().partition_dir(0).join(&ev[0].spill)).unwrap();
        assert_eq!(spill.ids, vec![2, 6]);
    }

    #[test]
    fn duplicate_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = SpillBufferSet::create(dir.path(), 10, 1, 2, 64, IoMode::Buffered).unwrap();
        s.scatter(&batch(&[4])).unwrap();
        assert!(matches!(s.scatter(&batch(&[4])), Err(Error::DuplicateVertex(4))));
    }

    #[test]
    fn flush_all_conserves_rows_and_skips_empty_partitions() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = SpillBufferSet::create(dir.path(), 6, 1, 3, 8, IoMode::Buffered).unwrap();
        s.scatter(&batch(&[5, 0, 1, 4])).unwrap();
        s.scatter(&batch(&[3, 2])).unwrap();
        let (set, c) = s.flush_all().unwrap();
        assert_eq!(c.rows, 6);
        let (_, dense) = read_matrix_set(&set.dir).unwrap();
        assert_eq!(dense, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(c.peak_buffered_rows <= 3 * 2);

        let dir = tempfile::tempdir().unwrap();
        let mut s = SpillBufferSet::create(dir.path(), 9, 1, 3, 1 << 10, IoMode::Buffered).unwrap();
        s.scatter(&batch(&[0, 1, 2, 6, 7, 8, 3, 4, 5])).unwrap();
        let (set, _) = s.flush_all().unwrap();
        assert!(set.manifests.iter().all(|m| m.spill_names.len() == 1));
    }

    #[test]
    fn missing_vertex_fails_and_writer_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("layer");
        let s = SpillBufferSet::create(&out, 4, 1, 1, 64, IoMode::Buffered).unwrap();
        let (tx, rx) = queue::bounded::<Batch>(2);
        tx.send(StageMsg::Item(batch(&[0, 1, 3]))).unwrap();
        tx.send(StageMsg::End).unwrap();
        assert!(matches!(run_writer(&rx, s), Err(Error::CoverageGap(2))));
        assert!(!out.exists());
    }
}
