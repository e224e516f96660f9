//! Multi-layer inference: a four-stage pipeline per layer (reader,
//! orchestrator, compute, writer) over bounded queues, plus the in-memory
//! gather oracle and output comparison used to check it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::compute::{
    run_compute, Activation, BlockedBackend, DoubleBuffer, ReferenceBackend, TransformBackend,
    DEFAULT_GRADUATION_BYTES,
};
use crate::dio::IoMode;
use crate::error::{Error, IoContext, Result};
use crate::memory::{EvictionPolicyKind, MemoryCounters};
use crate::orchestrator::{init_layer, HotBudget, LayerMetrics, LayerSpec, Normalization};
use crate::queue::{self, StageMsg};
use crate::reader::{plan_chunks, run_reader, ChunkReader, ReadCounters};
use crate::reorder::Relabeling;
use crate::storage::{
    read_csr, read_in_degrees, read_matrix_set, write_dense_matrix_set, MatrixSet, ModelKind,
    ModelWeights, RowsRef, FEATURES_DIR,
};
use crate::writer::{run_writer, SpillBufferSet, WriterCounters, DEFAULT_PARTITIONS, DEFAULT_SPILL_BUFFER_BYTES};

pub const DEFAULT_CHUNK_BYTES: u64 = 8 << 20;
pub const DEFAULT_HOT_BYTES: u64 = 64 << 20;
pub const DEFAULT_QUEUE_CAPACITY: usize = 20;
pub const DEFAULT_ORACLE_LIMIT: u64 = 4 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendKind {
    Reference,
    #[default]
    Blocked,
}

impl BackendKind {
    pub fn build(self) -> Box<dyn TransformBackend> {
        match self {
            BackendKind::Reference => Box::new(ReferenceBackend),
            BackendKind::Blocked => Box::new(BlockedBackend::default()),
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(BackendKind::Reference),
            "blocked" => Ok(BackendKind::Blocked),
            _ => Err(Error::Config(format!("unknown backend {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub chunk_budget: u64,
    pub hot_budget: HotBudget,
    pub graduation_bytes: u64,
    pub partitions: usize,
    pub spill_buffer_bytes: u64,
    pub queue_capacity: usize,
    pub policy: EvictionPolicyKind,
    /// Victims per eviction event; `None` is 1% of the slots.
    pub evict_batch: Option<usize>,
    pub io_mode: IoMode,
    pub normalization: Normalization,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub backend: BackendKind,
    pub discard_intermediate: bool,
    /// The oracle refuses inputs whose estimated footprint exceeds this.
    pub oracle_limit: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            chunk_budget: DEFAULT_CHUNK_BYTES,
            hot_budget: HotBudget::Bytes(DEFAULT_HOT_BYTES),
            graduation_bytes: DEFAULT_GRADUATION_BYTES,
            partitions: DEFAULT_PARTITIONS,
            spill_buffer_bytes: DEFAULT_SPILL_BUFFER_BYTES,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            policy: EvictionPolicyKind::MinPending,
            evict_batch: None,
            io_mode: IoMode::Direct,
            normalization: Normalization::Mean,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
            backend: BackendKind::Blocked,
            discard_intermediate: false,
            oracle_limit: DEFAULT_ORACLE_LIMIT,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.chunk_budget > 0, "chunk budget must be positive"),
            (self.graduation_bytes > 0, "graduation buffer must be positive"),
            (self.spill_buffer_bytes > 0, "spill buffer must be positive"),
            (self.partitions >= 1, "need at least one partition"),
            (self.queue_capacity >= 1, "queue capacity must be >= 1"),
            (self.evict_batch != Some(0), "eviction batch must be >= 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        if let HotBudget::Slots(0) | HotBudget::Bytes(0) = self.hot_budget {
            return Err(Error::Config("hot budget must be positive".into()));
        }
        Ok(())
    }

    fn activation(&self, layer: usize, layers: usize) -> Activation {
        if layer + 1 == layers {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }
}

/// Instrumented I/O for one layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerIo {
    pub read: ReadCounters,
    /// Every input row reached the orchestrator exactly once.
    pub delivered_once: bool,
    /// Σ row-section bytes over the layer's input spills.
    pub input_row_bytes: u64,
    pub writer: WriterCounters,
    pub memory: MemoryCounters,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub layers: Vec<LayerMetrics>,
    pub io: Vec<LayerIo>,
    pub output: PathBuf,
    pub wall_seconds: f64,
}

impl RunReport {
    pub fn total_reloads(&self) -> u64 {
        self.layers.iter().map(|m| m.reloads).sum()
    }

    pub fn total_evictions(&self) -> u64 {
        self.layers.iter().map(|m| m.evictions).sum()
    }

    pub fn total_unique_reloads(&self) -> u64 {
        self.layers.iter().map(|m| m.unique_reloads).sum()
    }

    pub fn total_bytes_read(&self) -> u64 {
        self.layers.iter().map(|m| m.bytes_read).sum()
    }

    pub fn total_bytes_written(&self) -> u64 {
        self.layers.iter().map(|m| m.bytes_written).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LayerMetrics::CSV_HEADER);
        s.push('\n');
        for m in &self.layers {
            s.push_str(&m.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).at(path)
    }
}

/// Picks the root cause among stage results: the first error that is not
/// a knock-on abort, in pipeline order.
fn first_cause(errors: Vec<Error>) -> Error {
    let mut fallback = None;
    for e in errors {
        if matches!(e, Error::Aborted) {
            fallback.get_or_insert(e);
        } else {
            return e;
        }
    }
    fallback.unwrap_or(Error::Aborted)
}

/// Runs one layer through the four-stage pipeline and publishes its
/// output under `out`.
#[allow(clippy::too_many_arguments)]
pub fn run_layer(
    layer: usize,
    graph_dir: &Path,
    in_degrees: &[u32],
    input: &MatrixSet,
    weights: &ModelWeights,
    config: &PipelineConfig,
    out: &Path,
) -> Result<(MatrixSet, LayerMetrics, LayerIo)> {
    let started = Instant::now();
    let lw = &weights.layers[layer];
    let dim = weights.input_dim(layer);
    if input.meta.dim != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            found: input.meta.dim,
            context: "layer input",
        });
    }
    let n = input.meta.num_vertices;
    let plan = plan_chunks(n, dim, input.meta.dtype, config.chunk_budget)?;
    let input_row_bytes = input.total_row_bytes()?;
    let mut reader = ChunkReader::open(input, graph_dir, config.io_mode)?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent).at(parent)?;
    }
    let cold_path = out.with_extension("cold");
    let mut ctx = init_layer(
        in_degrees,
        LayerSpec {
            layer,
            kind: weights.kind,
            normalization: config.normalization,
            gin_epsilon: weights.gin_epsilon,
            dim,
            budget: config.hot_budget,
            policy: config.policy,
            evict_batch: config.evict_batch,
            cold_path,
        },
    )?;
    let buffers = SpillBufferSet::create(
        out,
        n,
        lw.out_dim,
        config.partitions,
        config.spill_buffer_bytes,
        config.io_mode,
    )?;
    let activation = config.activation(layer, weights.layer_count());
    let backend = config.backend.build();
    let agg_dim = ctx.agg_dim();

    let cap = config.queue_capacity;
    let (chunk_tx, chunk_rx) = queue::bounded(cap);
    let (grad_tx, grad_rx) = queue::bounded(cap);
    let (batch_tx, batch_rx) = queue::bounded(cap);
    let (return_tx, return_rx) = std::sync::mpsc::sync_channel(2);

    let (read_res, orch_res, compute_res, write_res) = std::thread::scope(|s| {
        let reader_h = s.spawn(move || {
            let r = run_reader(&mut reader, &plan, &chunk_tx);
            r.map(|c| (c, reader.delivered_exactly_once()))
        });
        let orch_h = s.spawn(move || {
            let mut sink = DoubleBuffer::new(agg_dim, config.graduation_bytes, grad_tx, return_rx);
            let outcome = (|| {
                loop {
                    match queue::recv(&chunk_rx) {
                        StageMsg::Item(chunk) => ctx.process_chunk(&chunk, &mut sink)?,
                        StageMsg::End => break,
                        StageMsg::Abort => return Err(Error::Aborted),
                    }
                }
                ctx.finalize_layer()
            })();
            drop(chunk_rx);
            match outcome {
                Ok(metrics) => {
                    sink.finish()?;
                    Ok((metrics, ctx.memory_counters()))
                }
                Err(e) => {
                    sink.abort();
                    Err(e)
                }
            }
        });
        let backend = &*backend;
        let compute_h = s.spawn(move || {
            run_compute(&grad_rx, &return_tx, &batch_tx, lw, activation, backend)
        });
        let writer_h = s.spawn(move || run_writer(&batch_rx, buffers));
        (
            reader_h.join().expect("reader panicked"),
            orch_h.join().expect("orchestrator panicked"),
            compute_h.join().expect("compute panicked"),
            writer_h.join().expect("writer panicked"),
        )
    });

    let mut errors = Vec::new();
    let read = read_res.map_err(|e| errors.push(e)).ok();
    let orch = orch_res.map_err(|e| errors.push(e)).ok();
    let _ = compute_res.map_err(|e| errors.push(e));
    let written = write_res.map_err(|e| errors.push(e)).ok();
    if !errors.is_empty() {
        let _ = fs::remove_dir_all(out);
        return Err(first_cause(errors));
    }
    let ((read, delivered_once), (mut metrics, memory), (set, writer)) =
        (read.unwrap(), orch.unwrap(), written.unwrap());
    metrics.bytes_read = read.total_bytes() + memory.cold_bytes_read;
    metrics.bytes_written = writer.bytes_written + memory.cold_bytes_written;
    metrics.wall_seconds = started.elapsed().as_secs_f64();
    Ok((
        set,
        metrics,
        LayerIo {
            read,
            delivered_once,
            input_row_bytes,
            writer,
            memory,
        },
    ))
}

/// Output directory of layer `l`.
pub fn layer_dir(out: &Path, layer: usize) -> PathBuf {
    out.join(format!("layer_{layer}"))
}

/// Runs every layer; layer `l + 1` consumes layer `l`'s spills.
pub fn run_inference(
    graph_dir: &Path,
    weights: &ModelWeights,
    config: &PipelineConfig,
    out: &Path,
) -> Result<RunReport> {
    let started = Instant::now();
    config.validate()?;
    weights.validate()?;
    let in_degrees = read_in_degrees(graph_dir)?;
    let mut input = MatrixSet::open(&graph_dir.join(FEATURES_DIR))?;
    if input.meta.dim != weights.input_dim(0) {
        return Err(Error::DimMismatch {
            expected: weights.input_dim(0),
            found: input.meta.dim,
            context: "features vs first layer",
        });
    }
    if input.meta.num_vertices != in_degrees.len() as u64 {
        return Err(Error::InvalidGraph(format!(
            "{} feature rows for {} vertices",
            input.meta.num_vertices,
            in_degrees.len()
        )));
    }
    fs::create_dir_all(out).at(out)?;
    let mut layers = Vec::new();
    let mut io = Vec::new();
    for l in 0..weights.layer_count() {
        let dir = layer_dir(out, l);
        let (set, metrics, layer_io) =
            run_layer(l, graph_dir, &in_degrees, &input, weights, config, &dir)?;
        log::info!(
            "layer {l}: {} messages, {} evictions, {} reloads, {:.3}s",
            metrics.messages,
            metrics.evictions,
            metrics.reloads,
            metrics.wall_seconds
        );
        if config.discard_intermediate && l > 0 {
            let _ = fs::remove_dir_all(layer_dir(out, l - 1));
        }
        layers.push(metrics);
        io.push(layer_io);
        input = set;
    }
    Ok(RunReport {
        layers,
        io,
        output: input.dir,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Dense per-vertex outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutput {
    pub num_vertices: u64,
    pub dim: usize,
    pub rows: Vec<f32>,
}

impl DenseOutput {
    pub fn load(dir: &Path) -> Result<Self> {
        let (meta, rows) = read_matrix_set(dir)?;
        Ok(Self {
            num_vertices: meta.num_vertices,
            dim: meta.dim,
            rows,
        })
    }

    pub fn row(&self, v: u64) -> &[f32] {
        &self.rows[v as usize * self.dim..(v as usize + 1) * self.dim]
    }

    pub fn save(&self, dir: &Path, partitions: usize, mode: IoMode) -> Result<MatrixSet> {
        write_dense_matrix_set(
            dir,
            RowsRef::F32(&self.rows),
            self.num_vertices,
            self.dim,
            partitions,
            mode,
        )
    }

    /// Index of the first maximal column per row.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows
            .chunks(self.dim.max(1))
            .map(|r| {
                let mut best = 0;
                for (i, &x) in r.iter().enumerate() {
                    if x > r[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Rows reindexed from a relabeled run back to original IDs.
    pub fn unpermute(&self, map: &Relabeling) -> Self {
        let mut rows = vec![0.0; self.rows.len()];
        for (old, &new) in map.old_to_new.iter().enumerate() {
            rows[old * self.dim..(old + 1) * self.dim].copy_from_slice(self.row(new));
        }
        Self {
            rows,
            ..self.clone()
        }
    }
}

/// Full-batch gather evaluation in f64, the reference for equivalence.
pub fn oracle_inference(
    graph_dir: &Path,
    weights: &ModelWeights,
    config: &PipelineConfig,
) -> Result<DenseOutput> {
    weights.validate()?;
    let graph = read_csr(graph_dir)?;
    let n = graph.num_vertices() as usize;
    let widest = weights
        .layers
        .iter()
        .map(|l| l.in_dim.max(l.out_dim))
        .max()
        .unwrap_or(0);
    let estimate = (n * widest * 8 * 3) as u64 + graph.num_edges() * 16;
    if estimate > config.oracle_limit {
        return Err(Error::OracleScale {
            estimate,
            limit: config.oracle_limit,
        });
    }
    let (meta, features) = read_matrix_set(&graph_dir.join(FEATURES_DIR))?;
    if meta.dim != weights.input_dim(0) {
        return Err(Error::DimMismatch {
            expected: weights.input_dim(0),
            found: meta.dim,
            context: "oracle features",
        });
    }
    let in_neighbors = graph.in_neighbors();
    let mut h: Vec<f64> = features.iter().map(|&x| x as f64).collect();
    let mut dim = meta.dim;
    let norm = crate::orchestrator::effective_normalization(weights.kind, config.normalization);
    for (l, lw) in weights.layers.iter().enumerate() {
        let agg_dim = lw.in_dim;
        let mut agg = vec![0f64; n * agg_dim];
        for v in 0..n {
            let row = &mut agg[v * agg_dim..(v + 1) * agg_dim];
            let preds = &in_neighbors[v];
            for &u in preds {
                let hu = &h[u as usize * dim..(u as usize + 1) * dim];
                for k in 0..dim {
                    row[k] += hu[k];
                }
            }
            if norm == Normalization::Mean {
                let d = preds.len().max(1) as f64;
                for x in &mut row[..dim] {
                    *x /= d;
                }
            }
            let hv = &h[v * dim..(v + 1) * dim];
            match weights.kind {
                ModelKind::Gcn => {}
                ModelKind::Sage => row[dim..].copy_from_slice(hv),
                ModelKind::Gin => {
                    let scale = 1.0 + weights.gin_epsilon as f64;
                    for k in 0..dim {
                        row[k] += scale * hv[k];
                    }
                }
            }
        }
        let act = config.activation(l, weights.layer_count());
        let mut next = vec![0f64; n * lw.out_dim];
        for v in 0..n {
            let x = &agg[v * agg_dim..(v + 1) * agg_dim];
            for o in 0..lw.out_dim {
                let w = &lw.weight[o * agg_dim..(o + 1) * agg_dim];
                let mut acc = lw.bias[o] as f64;
                for k in 0..agg_dim {
                    acc += x[k] * w[k] as f64;
                }
                if act == Activation::Relu {
                    acc = acc.max(0.0);
                }
                next[v * lw.out_dim + o] = acc;
            }
        }
        h = next;
        dim = lw.out_dim;
    }
    Ok(DenseOutput {
        num_vertices: n as u64,
        dim,
        rows: h.into_iter().map(|x| x as f32).collect(),
    })
}

/// Differences between two output matrices.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Comparison {
    pub num_vertices: u64,
    pub dim: usize,
    pub max_abs_error: f64,
    /// Mean over elements of `|a − b| / max(|a|, |b|, 1e-6)`.
    pub mean_relative_error: f64,
    /// Mean over vertices of the per-row maximum absolute error.
    pub mean_max_abs_error: f64,
    pub argmax_mismatches: u64,
}

impl Comparison {
    pub fn within(&self, tolerance: f64) -> bool {
        self.max_abs_error <= tolerance && self.argmax_mismatches == 0
    }
}

pub fn compare(a: &DenseOutput, b: &DenseOutput) -> Result<Comparison> {
    if a.num_vertices != b.num_vertices || a.dim != b.dim {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.num_vertices, a.dim, b.num_vertices, b.dim
        )));
    }
    let mut c = Comparison {
        num_vertices: a.num_vertices,
        dim: a.dim,
        ..Comparison::default()
    };
    if a.num_vertices == 0 || a.dim == 0 {
        return Ok(c);
    }
    let (mut rel_sum, mut row_max_sum) = (0f64, 0f64);
    for (ra, rb) in a.rows.chunks(a.dim).zip(b.rows.chunks(b.dim)) {
        let mut row_max = 0f64;
        for (&x, &y) in ra.iter().zip(rb) {
            let (x, y) = (x as f64, y as f64);
            let d = (x - y).abs();
            row_max = row_max.max(d);
            rel_sum += d / x.abs().max(y.abs()).max(1e-6);
        }
        c.max_abs_error = c.max_abs_error.max(row_max);
        row_max_sum += row_max;
    }
    c.mean_relative_error = rel_sum / a.rows.len() as f64;
    c.mean_max_abs_error = row_max_sum / a.num_vertices as f64;
    c.argmax_mismatches = a
        .argmax()
        .iter()
        .zip(b.argmax())
        .filter(|(x, y)| **x != *y)
        .count() as u64;
    Ok(c)
}

/// Compares two output directories. When `b_relabeling` is given, `b` was
/// produced on the relabeled graph and is mapped back first.
pub fn compare_outputs(a: &Path, b: &Path, b_relabeling: Option<&Relabeling>) -> Result<Comparison> {
    let a = DenseOutput::load(a)?;
    let mut b = DenseOutput::load(b)?;
    if let Some(map) = b_relabeling {
        if map.len() as u64 != b.num_vertices {
            return Err(Error::ShapeMismatch("permutation length".into()));
        }
        b = b.unpermute(map);
    }
    compare(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::{write_csr, GraphCsr, LayerWeights};

    fn six_vertex_dir(dir: &Path) {
        let g = GraphCsr::from_edges(6, &mut vec![(0, 1), (4, 1), (0, 3), (2, 3), (4, 3)]).unwrap();
        write_csr(&g, dir).unwrap();
        let feats: Vec<f32> = (0..6).map(|v| v as f32).collect();
        write_dense_matrix_set(&dir.join(FEATURES_DIR), RowsRef::F32(&feats), 6, 1, 2, IoMode::Direct)
            .unwrap();
    }

    fn identity_gcn(layers: usize) -> ModelWeights {
        ModelWeights {
            kind: ModelKind::Gcn,
            gin_epsilon: 0.0,
            layers: vec![LayerWeights::identity(1); layers],
        }
    }

    fn sum_config() -> PipelineConfig {
        PipelineConfig {
            normalization: Normalization::Sum,
            hot_budget: HotBudget::Slots(16),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn six_vertex_end_to_end_sum() {
        let dir = tempfile::tempdir().unwrap();
        six_vertex_dir(dir.path());
        let out = dir.path().join("out");
        let report = run_inference(dir.path(), &identity_gcn(1), &sum_config(), &out).unwrap();
        let got = DenseOutput::load(&report.output).unwrap();
        assert_eq!(got.row(1), &[4.0]);
        assert_eq!(got.row(3), &[6.0]);
        let oracle = oracle_inference(dir.path(), &identity_gcn(1), &sum_config()).unwrap();
        assert_eq!(oracle.rows, got.rows);
        assert!(report.io[0].delivered_once);
        assert!(!out.join("layer_0.cold").exists());
        assert_eq!(report.to_csv().lines().count(), 2);
    }

    #[test]
    fn gcn_mean_two_vertices() {
        let dir = tempfile::tempdir().unwrap();
        let g = GraphCsr::from_edges(2, &mut vec![(0, 1)]).unwrap();
        write_csr(&g, dir.path()).unwrap();
        write_dense_matrix_set(
            &dir.path().join(FEATURES_DIR),
            RowsRef::F32(&[2.0, 0.0]),
            2,
            1,
            1,
            IoMode::Buffered,
        )
        .unwrap();
        let cfg = PipelineConfig {
            output_activation: Activation::Relu,
            ..PipelineConfig::default()
        };
        let o = oracle_inference(dir.path(), &identity_gcn(1), &cfg).unwrap();
        assert_eq!(o.row(1), &[2.0]);
    }

    #[test]
    fn capacity_and_budget_do_not_change_outputs() {
        let dir = tempfile::tempdir().unwrap();
        six_vertex_dir(dir.path());
        let w = identity_gcn(2);
        let mut outputs = vec![];
        for (cap, slots, chunk) in [(20, 16, 1 << 20), (1, 2, 4), (1, 1, 1), (2, 1, 8)] {
            let cfg = PipelineConfig {
                queue_capacity: cap,
                hot_budget: HotBudget::Slots(slots),
                chunk_budget: chunk,
                graduation_bytes: 4,
                spill_buffer_bytes: 4,
                ..sum_config()
            };
            let out = dir.path().join(format!("o{cap}_{slots}_{chunk}"));
            let r = run_inference(dir.path(), &w, &cfg, &out).unwrap();
            outputs.push(DenseOutput::load(&r.output).unwrap());
        }
        assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn dim_chain_checked_before_running() {
        let dir = tempfile::tempdir().unwrap();
        six_vertex_dir(dir.path());
        let mut w = identity_gcn(1);
        w.layers[0] = LayerWeights::identity(3);
        let out = dir.path().join("out");
        assert!(matches!(
            run_inference(dir.path(), &w, &sum_config(), &out),
            Err(Error::DimMismatch { .. })
        ));
        assert!(!layer_dir(&out, 0).exists());
    }

    #[test]
    fn stage_failure_surfaces_cause_and_cleans_output() {
        let dir = tempfile::tempdir().unwrap();
        six_vertex_dir(dir.path());
        // corrupt a feature spill after the header so the reader fails mid-layer
        let set = MatrixSet::open(&dir.path().join(FEATURES_DIR)).unwrap();
        let (_, victim) = set.spill_paths().pop().unwrap();
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..4096 + 8]).unwrap();
        let out = dir.path().join("out");
        let err = run_inference(dir.path(), &identity_gcn(1), &sum_config(), &out).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err:?}");
        assert!(!layer_dir(&out, 0).exists());
    }

    #[test]
    fn oracle_scale_guard() {
        let dir = tempfile::tempdir().unwrap();
        six_vertex_dir(dir.path());
        let cfg = PipelineConfig {
            oracle_limit: 8,
            ..sum_config()
        };
        assert!(matches!(
            oracle_inference(dir.path(), &identity_gcn(1), &cfg),
            Err(Error::OracleScale { .. })
        ));
    }

    #[test]
    fn comparison_statistics() {
        let a = DenseOutput {
            num_vertices: 2,
            dim: 2,
            rows: vec![1.0, 2.0, 3.0, 1.0],
        };
        assert_eq!(compare(&a, &a).unwrap(), Comparison {
            num_vertices: 2,
            dim: 2,
            ..Comparison::default()
        });
        let b = DenseOutput {
            rows: vec![1.0, 2.5, 0.0, 1.0],
            ..a.clone()
        };
        let c = compare(&a, &b).unwrap();
        assert_eq!(c.max_abs_error, 3.0);
        assert_eq!(c.mean_max_abs_error, 1.75);
        assert_eq!(c.argmax_mismatches, 1);
        assert!(!c.within(1e-4));
        let d = DenseOutput {
            dim: 1,
            num_vertices: 4,
            ..a.clone()
        };
        assert!(matches!(compare(&a, &d), Err(Error::ShapeMismatch(_))));
    }
}
