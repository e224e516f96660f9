//! Graduation buffering and the per-layer dense transform.

use std::sync::mpsc::{Receiver, SyncSender};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::orchestrator::GraduationSink;
use crate::queue::{self, StageMsg};
use crate::storage::{LayerWeights, VertexId};

pub const DEFAULT_GRADUATION_BYTES: u64 = 16 << 20;

/// Rows of finished aggregates in graduation order.
#[derive(Debug, Clone, PartialEq)]
pub struct GraduationBuffer {
    pub ids: Vec<VertexId>,
    pub rows: Vec<f32>,
    pub width: usize,
    capacity_rows: usize,
}

impl GraduationBuffer {
    pub fn with_capacity_bytes(width: usize, bytes: u64) -> Self {
        let capacity_rows = ((bytes / (width.max(1) as u64 * 4)) as usize).max(1);
        Self {
            ids: Vec::new(),
            rows: Vec::new(),
            width,
            capacity_rows,
        }
    }

    pub fn capacity_rows(&self) -> usize {
        self.capacity_rows
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.ids.len() >= self.capacity_rows
    }

    pub fn push(&mut self, v: VertexId, row: &[f32]) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::DimMismatch {
                expected: self.width,
                found: row.len(),
                context: "graduated aggregate",
            });
        }
        self.ids.push(v);
        self.rows.extend_from_slice(row);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.ids.clear();
        self.rows.clear();
    }
}

/// Two graduation buffers: one filling, one (possibly) in flight.
///
/// Full buffers go to the compute queue; the compute stage hands them back
/// on the return queue once transformed. The caller blocks only when both
/// buffers are out.
pub struct DoubleBuffer {
    active: GraduationBuffer,
    spare: Option<GraduationBuffer>,
    to_compute: SyncSender<StageMsg<GraduationBuffer>>,
    returned: Receiver<GraduationBuffer>,
    pub batches_sent: u64,
}

impl DoubleBuffer {
    pub fn new(
        width: usize,
        capacity_bytes: u64,
        to_compute: SyncSender<StageMsg<GraduationBuffer>>,
        returned: Receiver<GraduationBuffer>,
    ) -> Self {
        Self {
            active: GraduationBuffer::with_capacity_bytes(width, capacity_bytes),
            spare: Some(GraduationBuffer::with_capacity_bytes(width, capacity_bytes)),
            to_compute,
            returned,
            batches_sent: 0,
        }
    }

    fn ship(&mut self) -> Result<()> {
        let next = match self.spare.take() {
            Some(b) => b,
            None => self.returned.recv().map_err(|_| Error::Aborted)?,
        };
        let full = std::mem::replace(&mut self.active, next);
        self.active.clear();
        self.batches_sent += 1;
        queue::send(&self.to_compute, StageMsg::Item(full))
    }

    /// Sends the partial buffer (if any) and the end marker.
    pub fn finish(mut self) -> Result<()> {
        if !self.active.is_empty() {
            self.ship()?;
        }
        queue::send(&self.to_compute, StageMsg::End)
    }

    pub fn abort(self) {
        let _ = self.to_compute.send(StageMsg::Abort);
    }
}

impl GraduationSink for DoubleBuffer {
    fn graduate(&mut self, v: VertexId, aggregate: &[f32]) -> Result<()> {
        self.active.push(v, aggregate)?;
        if self.active.is_full() {
            self.ship()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: &mut [f32]) {
        if self == Activation::Relu {
            for v in x {
                *v = v.max(0.0);
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "identity" | "none" => Ok(Activation::Identity),
            _ => Err(Error::Config(format!("unknown activation {s:?}"))),
        }
    }
}

/// Computes `out = x · Wᵀ + b` for `rows` input rows.
pub trait TransformBackend: Send + Sync {
    fn name(&self) -> &'static str;

    fn linear(&self, input: &[f32], rows: usize, layer: &LayerWeights, out: &mut Vec<f32>);
}

/// Naive triple loop; the numerical reference.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceBackend;

impl TransformBackend for ReferenceBackend {
    fn name(&self) -> &'static str {
        "reference"
    }

    fn linear(&self, input: &[f32], rows: usize, layer: &LayerWeights, out: &mut Vec<f32>) {
        let (k, m) = (layer.in_dim, layer.out_dim);
        out.clear();
        out.resize(rows * m, 0.0);
        for r in 0..rows {
            let x = &input[r * k..(r + 1) * k];
            for o in 0..m {
                let w = &layer.weight[o * k..(o + 1) * k];
                let mut acc = 0f32;
                for i in 0..k {
                    acc += x[i] * w[i];
                }
                out[r * m + o] = acc + layer.bias[o];
            }
        }
    }
}

/// Row blocks in parallel, eight-lane dot products. Each output row depends
/// only on its input row, so results do not depend on batch boundaries or
/// thread count.
#[derive(Debug, Clone, Copy)]
pub struct BlockedBackend {
    pub block_rows: usize,
}

impl Default for BlockedBackend {
    fn default() -> Self {
        Self { block_rows: 64 }
    }
}

fn dot8(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

impl TransformBackend for BlockedBackend {
    fn name(&self) -> &'static str {
        "blocked"
    }

    fn linear(&self, input: &[f32], rows: usize, layer: &LayerWeights, out: &mut Vec<f32>) {
        let (k, m) = (layer.in_dim, layer.out_dim);
        out.clear();
        out.resize(rows * m, 0.0);
        let block = self.block_rows.max(1);
        out.par_chunks_mut(block * m)
            .zip(input.par_chunks(block * k))
            .for_each(|(out_block, in_block)| {
                for (x, y) in in_block.chunks_exact(k).zip(out_block.chunks_exact_mut(m)) {
                    for ((yo, w), b) in y.iter_mut().zip(layer.weight.chunks_exact(k)).zip(&layer.bias) {
                        *yo = dot8(x, w) + b;
                    }
                }
            });
    }
}

/// Transformed embeddings, paired with their vertex IDs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<VertexId>,
    pub rows: Vec<f32>,
    pub dim: usize,
}

/// `act(batch · Wᵀ + b)`, preserving row order.
pub fn transform(
    batch: &GraduationBuffer,
    layer: &LayerWeights,
    activation: Activation,
    backend: &dyn TransformBackend,
) -> Result<Batch> {
    if batch.width != layer.in_dim {
        return Err(Error::DimMismatch {
            expected: layer.in_dim,
            found: batch.width,
            context: "transform input",
        });
    }
    let mut rows = Vec::new();
    backend.linear(&batch.rows, batch.len(), layer, &mut rows);
    activation.apply(&mut rows);
    Ok(Batch {
        ids: batch.ids.clone(),
        rows,
        dim: layer.out_dim,
    })
}

/// Compute stage: transforms every buffer, hands it back for reuse and
/// forwards the result. Returns the number of rows transformed.
pub fn run_compute(
    rx: &Receiver<StageMsg<GraduationBuffer>>,
    returned: &SyncSender<GraduationBuffer>,
    tx: &SyncSender<StageMsg<Batch>>,
    layer: &LayerWeights,
    activation: Activation,
    backend: &dyn TransformBackend,
) -> Result<u64> {
    let mut rows = 0u64;
    loop {
        match queue::recv(rx) {
            StageMsg::Item(buf) => {
                let out = match transform(&buf, layer, activation, backend) {
                    Ok(out) => out,
                    Err(e) => {
                        let _ = tx.send(StageMsg::Abort);
                        return Err(e);
                    }
                };
                rows += buf.len() as u64;
                // the orchestrator may already be gone after its last batch
                let _ = returned.try_send(buf);
                queue::send(tx, StageMsg::Item(out))?;
            }
            StageMsg::End => {
                queue::send(tx, StageMsg::End)?;
                return Ok(rows);
            }
            StageMsg::Abort => {
                let _ = tx.send(StageMsg::Abort);
                return Err(Error::Aborted);
            }
        }
    }
}
