//! Layer driver: streams chunks, pushes normalized messages along
//! out-edges, tracks the per-vertex state machine and pending counts, and
//! hands finished aggregates to graduation.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::memory::{Combine, EvictionPolicyKind, MemoryConfig, MemoryCounters, MemoryManager};
use crate::reader::Chunk;
use crate::storage::{ModelKind, VertexId};

/// Lifecycle of a destination vertex within one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum VertexState {
    NotStarted,
    Hot,
    Cold,
    Completed,
}

impl VertexState {
    pub fn can_become(self, to: VertexState) -> bool {
        use VertexState::*;
        matches!(
            (self, to),
            (NotStarted, Hot) | (Hot, Cold) | (Hot, Completed) | (Cold, Hot)
        )
    }
}

/// How neighbor messages are scaled before summation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the destination's in-degree.
    #[default]
    Mean,
    /// Plain sum.
    Sum,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Normalization::Mean),
            "sum" => Ok(Normalization::Sum),
            _ => Err(Error::Config(format!("unknown normalization {s:?}"))),
        }
    }
}

/// Effective aggregation of a model: GIN always sums.
pub fn effective_normalization(kind: ModelKind, requested: Normalization) -> Normalization {
    match kind {
        ModelKind::Gin => Normalization::Sum,
        _ => requested,
    }
}

/// Writes the message from a source row into `out`.
pub fn make_message(
    h_source: &[f32],
    kind: ModelKind,
    normalization: Normalization,
    in_degree_dest: u32,
    out: &mut Vec<f32>,
) {
    out.clear();
    match effective_normalization(kind, normalization) {
        Normalization::Sum => out.extend_from_slice(h_source),
        Normalization::Mean => {
            let d = in_degree_dest.max(1) as f32;
            out.extend(h_source.iter().map(|x| x / d));
        }
    }
}

/// Pending contributions at layer start: in-degree plus one self term for
/// models that fold in the vertex's own embedding.
pub fn initial_pending(in_degrees: &[u32], kind: ModelKind) -> Vec<u32> {
    let extra = kind.has_self_term() as u32;
    in_degrees.iter().map(|&d| d + extra).collect()
}

/// Receives finished `(vertex, aggregate)` pairs.
pub trait GraduationSink {
    fn graduate(&mut self, v: VertexId, aggregate: &[f32]) -> Result<()>;
}

impl GraduationSink for Vec<(VertexId, Vec<f32>)> {
    fn graduate(&mut self, v: VertexId, aggregate: &[f32]) -> Result<()> {
        self.push((v, aggregate.to_vec()));
        Ok(())
    }
}

/// Hot-store size, either in bytes or directly in slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HotBudget {
    Bytes(u64),
    Slots(usize),
}

impl HotBudget {
    pub fn slot_count(self, slot_dim: usize) -> Result<usize> {
        let n = match self {
            HotBudget::Bytes(b) => (b / (slot_dim as u64 * 4)) as usize,
            HotBudget::Slots(n) => n,
        };
        if n == 0 {
            return Err(Error::Config(format!(
                "hot budget {self:?} cannot hold one {}-byte slot",
                slot_dim * 4
            )));
        }
        Ok(n)
    }
}

#[derive(Debug, Clone)]
pub struct LayerSpec {
    pub layer: usize,
    pub kind: ModelKind,
    pub normalization: Normalization,
    pub gin_epsilon: f32,
    /// Width of the layer's input embeddings.
    pub dim: usize,
    pub budget: HotBudget,
    pub policy: EvictionPolicyKind,
    pub evict_batch: Option<usize>,
    pub cold_path: PathBuf,
}

/// Per-layer counters, one CSV row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerMetrics {
    pub layer: usize,
    /// Edge messages plus self terms.
    pub messages: u64,
    pub edge_messages: u64,
    pub evictions: u64,
    pub reloads: u64,
    pub unique_reloads: u64,
    pub mean_span: f64,
    pub p99_span: u64,
    pub max_span: u64,
    pub mean_reload_pct: f64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub wall_seconds: f64,
    pub peak_hot: u64,
    pub slot_count: u64,
    pub graduations: u64,
    pub cold_bytes_written: u64,
}

impl LayerMetrics {
    pub const CSV_HEADER: &'static str = "layer,messages,evictions,reloads,unique_reloads,mean_span,p99_span,mean_reload_pct,bytes_read,bytes_written,wall_seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{},{:.4},{},{},{:.6}",
            self.layer,
            self.messages,
            self.evictions,
            self.reloads,
            self.unique_reloads,
            self.mean_span,
            self.p99_span,
            self.mean_reload_pct,
            self.bytes_read,
            self.bytes_written,
            self.wall_seconds
        )
    }
}

const NO_STEP: u64 = u64::MAX;

/// State of one layer in progress.
#[derive(Debug)]
pub struct LayerContext {
    spec: LayerSpec,
    agg_dim: usize,
    in_degrees: Vec<u32>,
    states: Vec<VertexState>,
    mem: MemoryManager,
    initial_pending_total: u64,
    next_vertex: VertexId,
    step: u64,
    first_step: Vec<u64>,
    last_step: Vec<u64>,
    edge_messages: u64,
    self_terms: u64,
    graduations: u64,
    chunk_index: u32,
    touched_stamp: Vec<u32>,
    reload_stamp: Vec<u32>,
    chunk_reload_pct: Vec<f64>,
    message: Vec<f32>,
    evicted: Vec<VertexId>,
    aggregate: Vec<f32>,
}

/// Allocates the per-vertex arrays and the memory manager for a layer.
pub fn init_layer(in_degrees: &[u32], spec: LayerSpec) -> Result<LayerContext> {
    if spec.dim == 0 {
        return Err(Error::Config("layer input dim is zero".into()));
    }
    let agg_dim = spec.kind.agg_dim(spec.dim);
    let slot_count = spec.budget.slot_count(agg_dim)?;
    let pending = initial_pending(in_degrees, spec.kind);
    let initial_pending_total = pending.iter().map(|&p| p as u64).sum();
    let n = in_degrees.len();
    let mem = MemoryManager::new(
        &MemoryConfig {
            slot_count,
            slot_dim: agg_dim,
            policy: spec.policy,
            evict_batch: spec.evict_batch,
            cold_path: spec.cold_path.clone(),
        },
        pending,
    )?;
    Ok(LayerContext {
        spec,
        agg_dim,
        in_degrees: in_degrees.to_vec(),
        states: vec![VertexState::NotStarted; n],
        mem,
        initial_pending_total,
        next_vertex: 0,
        step: 0,
        first_step: vec![NO_STEP; n],
        last_step: vec![NO_STEP; n],
        edge_messages: 0,
        self_terms: 0,
        graduations: 0,
        chunk_index: 0,
        touched_stamp: vec![0; n],
        reload_stamp: vec![0; n],
        chunk_reload_pct: Vec::new(),
        message: Vec::with_capacity(agg_dim),
        evicted: Vec::new(),
        aggregate: Vec::with_capacity(agg_dim),
    })
}

impl LayerContext {
    pub fn agg_dim(&self) -> usize {
        self.agg_dim
    }

    pub fn num_vertices(&self) -> u64 {
        self.states.len() as u64
    }

    pub fn state(&self, v: VertexId) -> VertexState {
        self.states[v as usize]
    }

    pub fn pending(&self, v: VertexId) -> u32 {
        self.mem.pending(v)
    }

    pub fn initial_pending_total(&self) -> u64 {
        self.initial_pending_total
    }

    pub fn memory(&self) -> &MemoryManager {
        &self.mem
    }

    pub fn memory_counters(&self) -> MemoryCounters {
        self.mem.counters()
    }

    /// Slot count actually allocated (clamped to |V|).
    pub fn slot_count(&self) -> usize {
        self.mem.hot().slot_count()
    }

    fn transition(&mut self, v: VertexId, to: VertexState) -> Result<()> {
        let from = self.states[v as usize];
        if !from.can_become(to) {
            return Err(Error::IllegalTransition { vertex: v, from, to });
        }
        self.states[v as usize] = to;
        Ok(())
    }

    fn mark_evicted(&mut self) -> Result<()> {
        for i in 0..self.evicted.len() {
            let e = self.evicted[i];
            self.transition(e, VertexState::Cold)?;
        }
        self.evicted.clear();
        Ok(())
    }

    /// Makes `v` HOT; returns whether this was a reload.
    fn ensure_hot(&mut self, v: VertexId) -> Result<bool> {
        match self.states[v as usize] {
            VertexState::Hot => Ok(false),
            VertexState::NotStarted => {
                self.mem.admit(v, None, &mut self.evicted)?;
                self.mark_evicted()?;
                self.transition(v, VertexState::Hot)?;
                Ok(false)
            }
            VertexState::Cold => {
                self.mem.reload(v, &mut self.evicted)?;
                self.mark_evicted()?;
                self.transition(v, VertexState::Hot)?;
                Ok(true)
            }
            VertexState::Completed => Err(Error::IllegalTransition {
                vertex: v,
                from: VertexState::Completed,
                to: VertexState::Hot,
            }),
        }
    }

    fn graduate(&mut self, v: VertexId, sink: &mut impl GraduationSink) -> Result<()> {
        self.aggregate.clear();
        self.mem.release(v, &mut self.aggregate)?;
        self.transition(v, VertexState::Completed)?;
        self.graduations += 1;
        sink.graduate(v, &self.aggregate)
    }

    /// Streams one chunk's sources through the broadcast.
    pub fn process_chunk(&mut self, chunk: &Chunk, sink: &mut impl GraduationSink) -> Result<()> {
        if chunk.range.start != self.next_vertex || chunk.range.end > self.num_vertices() {
            return Err(Error::Config(format!(
                "chunk {:?} out of plan order (expected start {})",
                chunk.range, self.next_vertex
            )));
        }
        if chunk.dim != self.spec.dim {
            return Err(Error::DimMismatch {
                expected: self.spec.dim,
                found: chunk.dim,
                context: "chunk features",
            });
        }
        self.chunk_index += 1;
        let stamp = self.chunk_index;
        let (mut touched, mut reloaded) = (0u64, 0u64);
        let n = self.num_vertices();
        let kind = self.spec.kind;
        let norm = self.spec.normalization;

        for u in chunk.range.clone() {
            let h = chunk.row(u);
            match kind {
                ModelKind::Sage | ModelKind::Gin => {
                    self.ensure_hot(u)?;
                    let left = if kind == ModelKind::Sage {
                        self.mem.accumulate(u, h, Combine::WriteSelfHalf)?
                    } else {
                        let scale = 1.0 + self.spec.gin_epsilon;
                        self.message.clear();
                        self.message.extend(h.iter().map(|x| scale * x));
                        self.mem.accumulate(u, &self.message, Combine::Sum)?
                    };
                    self.self_terms += 1;
                    if left == 0 {
                        self.graduate(u, sink)?;
                    }
                }
                ModelKind::Gcn => {
                    // nothing will ever arrive: graduate with the zero aggregate
                    if self.states[u as usize] == VertexState::NotStarted
                        && self.mem.pending(u) == 0
                    {
                        self.ensure_hot(u)?;
                        self.graduate(u, sink)?;
                    }
                }
            }

            for &v in chunk.out_neighbors_of(u) {
                if v >= n {
                    return Err(Error::VertexOutOfRange {
                        id: v,
                        num_vertices: n,
                    });
                }
                let was_reload = self.ensure_hot(v)?;
                if self.touched_stamp[v as usize] != stamp {
                    self.touched_stamp[v as usize] = stamp;
                    touched += 1;
                }
                if was_reload && self.reload_stamp[v as usize] != stamp {
                    self.reload_stamp[v as usize] = stamp;
                    reloaded += 1;
                }
                make_message(h, kind, norm, self.in_degrees[v as usize], &mut self.message);
                let left = self.mem.accumulate(v, &self.message, Combine::Sum)?;
                let vi = v as usize;
                if self.first_step[vi] == NO_STEP {
                    self.first_step[vi] = self.step;
                }
                self.last_step[vi] = self.step;
                self.step += 1;
                self.edge_messages += 1;
                if left == 0 {
                    self.graduate(v, sink)?;
                }
            }
        }
        if touched > 0 {
            self.chunk_reload_pct
                .push(100.0 * reloaded as f64 / touched as f64);
        }
        self.next_vertex = chunk.range.end;
        Ok(())
    }

    /// Checks that every vertex completed and summarizes the layer.
    pub fn finalize_layer(&self) -> Result<LayerMetrics> {
        let missing: Vec<VertexId> = self
            .states
            .iter()
            .enumerate()
            .filter(|(_, s)| **s != VertexState::Completed)
            .map(|(v, _)| v as VertexId)
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingMessages {
                count: missing.len(),
                sample: missing.into_iter().take(16).collect(),
            });
        }
        let spans = self.spans();
        let mem = self.mem.counters();
        Ok(LayerMetrics {
            layer: self.spec.layer,
            messages: self.edge_messages + self.self_terms,
            edge_messages: self.edge_messages,
            evictions: mem.evictions,
            reloads: mem.reloads,
            unique_reloads: mem.unique_reloads,
            mean_span: mean(spans.iter().map(|&s| s as f64)),
            p99_span: percentile(&spans, 0.99),
            max_span: spans.iter().copied().max().unwrap_or(0),
            mean_reload_pct: mean(self.chunk_reload_pct.iter().copied()),
            peak_hot: mem.peak_hot,
            slot_count: self.slot_count() as u64,
            graduations: self.graduations,
            cold_bytes_written: mem.cold_bytes_written,
            ..LayerMetrics::default()
        })
    }

    /// Last minus first edge-message step, for vertices that received any.
    pub fn spans(&self) -> Vec<u64> {
        self.first_step
            .iter()
            .zip(&self.last_step)
            .filter(|(f, _)| **f != NO_STEP)
            .map(|(f, l)| l - f)
            .collect()
    }

    pub fn span_of(&self, v: VertexId) -> Option<u64> {
        let f = self.first_step[v as usize];
        (f != NO_STEP).then(|| self.last_step[v as usize] - f)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0u64);
    for x in xs {
        sum += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Nearest-rank percentile.
pub fn percentile(values: &[u64], q: f64) -> u64 {
    if values.is_empty() {
        return 0;
    }
    let mut v = values.to_vec();
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    let (_, nth, _) = v.select_nth_unstable(rank - 1);
    *nth
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::GraphCsr;

    /// Edges 0→1, 4→1, 0→3, 2→3, 4→3 over six vertices.
    pub(crate) fn six_vertex() -> GraphCsr {
        GraphCsr::from_edges(6, &mut vec![(0, 1), (4, 1), (0, 3), (2, 3), (4, 3)]).unwrap()
    }

    pub(crate) fn chunks_of(g: &GraphCsr, feats: &[f32], dim: usize, size: u64) -> Vec<Chunk> {
        let n = g.num_vertices();
        let mut out = vec![];
        let mut s = 0;
        while s < n {
            let e = (s + size).min(n);
            let mut local_offsets = vec![0];
            let mut out_neighbors = vec![];
            for u in s..e {
                out_neighbors.extend_from_slice(g.out_neighbors(u));
                local_offsets.push(out_neighbors.len() as u64);
            }
            out.push(Chunk {
                range: s..e,
                local_offsets,
                out_neighbors,
                features: feats[s as usize * dim..e as usize * dim].to_vec(),
                dim,
            });
            s = e;
        }
        out
    }

    fn spec(dir: &std::path::Path, kind: ModelKind, norm: Normalization, dim: usize, budget: HotBudget) -> LayerSpec {
        LayerSpec {
            layer: 0,
            kind,
            normalization: norm,
            gin_epsilon: 0.0,
            dim,
            budget,
            policy: EvictionPolicyKind::MinPending,
            evict_batch: Some(1),
            cold_path: dir.join("cold"),
        }
    }

    fn run(
        g: &GraphCsr,
        feats: &[f32],
        spec: LayerSpec,
        chunk: u64,
    ) -> (Vec<(VertexId, Vec<f32>)>, LayerMetrics) {
        let dim = spec.dim;
        let mut ctx = init_layer(&g.in_degrees, spec).unwrap();
        let mut sink = vec![];
        for c in chunks_of(g, feats, dim, chunk) {
            ctx.process_chunk(&c, &mut sink).unwrap();
        }
        (sink, ctx.finalize_layer().unwrap())
    }

    fn value(sink: &[(VertexId, Vec<f32>)], v: VertexId) -> Vec<f32> {
        sink.iter().find(|(id, _)| *id == v).unwrap().1.clone()
    }

    #[test]
    fn transitions() {
        use VertexState::*;
        let all = [NotStarted, Hot, Cold, Completed];
        let legal: Vec<_> = all
            .iter()
            .flat_map(|&a| all.iter().map(move |&b| (a, b)))
            .filter(|(a, b)| a.can_become(*b))
            .collect();
        assert_eq!(
            legal,
            vec![(NotStarted, Hot), (Hot, Cold), (Hot, Completed), (Cold, Hot)]
        );
        assert_eq!(std::mem::size_of::<VertexState>(), 1);
    }

    #[test]
    fn messages() {
        let mut out = vec![];
        make_message(&[1.0, 2.0], ModelKind::Gcn, Normalization::Mean, 4, &mut out);
        assert_eq!(out, vec![0.25, 0.5]);
        make_message(&[1.0, 2.0], ModelKind::Gin, Normalization::Mean, 4, &mut out);
        assert_eq!(out, vec![1.0, 2.0]);
        make_message(&[3.0], ModelKind::Sage, Normalization::Mean, 0, &mut out);
        assert_eq!(out, vec![3.0]);
    }

    #[test]
    fn pending_initialization() {
        let g = six_vertex();
        let p = initial_pending(&g.in_degrees, ModelKind::Gcn);
        assert_eq!((p[1], p[3]), (2, 3));
        assert_eq!(p.iter().map(|&x| x as u64).sum::<u64>(), g.num_edges());
        let p = initial_pending(&g.in_degrees, ModelKind::Sage);
        assert_eq!(p, g.in_degrees.iter().map(|d| d + 1).collect::<Vec<_>>());
    }

    #[test]
    fn six_vertex_sum_aggregation() {
        let dir = tempfile::tempdir().unwrap();
        let g = six_vertex();
        let feats: Vec<f32> = (0..6).map(|v| v as f32).collect();
        let s = spec(dir.path(), ModelKind::Gcn, Normalization::Sum, 1, HotBudget::Slots(16));
        let mut ctx = init_layer(&g.in_degrees, s).unwrap();
        let mut sink = vec![];
        let chunks = chunks_of(&g, &feats, 1, 2);
        ctx.process_chunk(&chunks[0], &mut sink).unwrap();
        ctx.process_chunk(&chunks[1], &mut sink).unwrap();
        assert_eq!(ctx.state(3), VertexState::Hot);
        ctx.process_chunk(&chunks[2], &mut sink).unwrap();
        assert_eq!(ctx.state(3), VertexState::Completed);
        let m = ctx.finalize_layer().unwrap();
        assert_eq!(value(&sink, 1), vec![4.0]);
        assert_eq!(value(&sink, 3), vec![6.0]);
        assert_eq!(value(&sink, 5), vec![0.0]);
        assert_eq!(m.evictions, 0);
        assert_eq!(m.messages, 5);
        assert_eq!(sink.len(), 6);
    }

    #[test]
    fn six_vertex_one_slot_cycles_through_cold() {
        let dir = tempfile::tempdir().unwrap();
        let g = six_vertex();
        let feats: Vec<f32> = (0..6).map(|v| v as f32).collect();
        let s = spec(dir.path(), ModelKind::Gcn, Normalization::Sum, 1, HotBudget::Slots(1));
        let (sink, m) = run(&g, &feats, s, 2);
        assert!(m.reloads >= 1);
        assert_eq!(value(&sink, 1), vec![4.0]);
        assert_eq!(value(&sink, 3), vec![6.0]);
    }

    #[test]
    fn self_loops_graduate_in_own_chunk() {
        let dir = tempfile::tempdir().unwrap();
        let mut edges: Vec<_> = (0..5).map(|v| (v, v)).collect();
        let g = GraphCsr::from_edges(5, &mut edges).unwrap();
        let feats = vec![1.0; 5];
        let s = spec(dir.path(), ModelKind::Gcn, Normalization::Mean, 1, HotBudget::Slots(2));
        let mut ctx = init_layer(&g.in_degrees, s).unwrap();
        let mut sink = vec![];
        for c in chunks_of(&g, &feats, 1, 2) {
            let r = c.range.clone();
            ctx.process_chunk(&c, &mut sink).unwrap();
            assert!(r.clone().all(|v| ctx.state(v) == VertexState::Completed));
        }
        assert_eq!(ctx.finalize_layer().unwrap().evictions, 0);
    }

    #[test]
    fn sage_and_gin_self_terms() {
        let dir = tempfile::tempdir().unwrap();
        let g = six_vertex();
        let feats: Vec<f32> = (0..6).map(|v| v as f32).collect();
        let s = spec(dir.path(), ModelKind::Sage, Normalization::Mean, 1, HotBudget::Slots(3));
        let (sink, m) = run(&g, &feats, s, 2);
        assert_eq!(value(&sink, 3), vec![2.0, 3.0]);
        assert_eq!(value(&sink, 1), vec![2.0, 1.0]);
        assert_eq!(value(&sink, 0), vec![0.0, 0.0]);
        assert_eq!(m.messages, 5 + 6);

        let mut s = spec(dir.path(), ModelKind::Gin, Normalization::Mean, 1, HotBudget::Slots(3));
        s.gin_epsilon = 0.5;
        let (sink, _) = run(&g, &feats, s, 2);
        assert_eq!(value(&sink, 3), vec![6.0 + 4.5]);
        assert_eq!(value(&sink, 2), vec![3.0]);
    }

    #[test]
    fn dropped_edge_is_diagnosed() {
        let dir = tempfile::tempdir().unwrap();
        let g = six_vertex();
        let feats: Vec<f32> = (0..6).map(|v| v as f32).collect();
        let s = spec(dir.path(), ModelKind::Gcn, Normalization::Mean, 1, HotBudget::Slots(8));
        let mut ctx = init_layer(&g.in_degrees, s).unwrap();
        let mut chunks = chunks_of(&g, &feats, 1, 2);
        // drop 2→3
        chunks[1].out_neighbors.clear();
        chunks[1].local_offsets = vec![0, 0, 0];
        let mut sink = vec![];
        for c in &chunks {
            ctx.process_chunk(c, &mut sink).unwrap();
        }
        match ctx.finalize_layer() {
            Err(Error::MissingMessages { count, sample }) => {
                assert_eq!(count, 1);
                assert_eq!(sample, vec![3]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn budget_too_small_for_one_slot() {
        let dir = tempfile::tempdir().unwrap();
        let g = six_vertex();
        let s = spec(dir.path(), ModelKind::Sage, Normalization::Mean, 4, HotBudget::Bytes(31));
        assert!(matches!(init_layer(&g.in_degrees, s), Err(Error::Config(_))));
    }

    #[test]
    fn out_of_order_chunk_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = six_vertex();
        let feats = vec![0.0; 6];
        let s = spec(dir.path(), ModelKind::Gcn, Normalization::Mean, 1, HotBudget::Slots(8));
        let mut ctx = init_layer(&g.in_degrees, s).unwrap();
        let chunks = chunks_of(&g, &feats, 1, 2);
        assert!(ctx.process_chunk(&chunks[1], &mut vec![]).is_err());
    }

    #[test]
    fn span_bounded_by_chunk_messages() {
        let dir = tempfile::tempdir().unwrap();
        // every message to 9 originates from chunk [0, 4)
        let mut edges = vec![(0, 9), (1, 9), (2, 9), (3, 9), (0, 5), (1, 6), (5, 7)];
        let g = GraphCsr::from_edges(10, &mut edges).unwrap();
        let feats = vec![1.0; 10];
        let s = spec(dir.path(), ModelKind::Gcn, Normalization::Mean, 1, HotBudget::Slots(8));
        let mut ctx = init_layer(&g.in_degrees, s).unwrap();
        let mut sink = vec![];
        for c in chunks_of(&g, &feats, 1, 4) {
            ctx.process_chunk(&c, &mut sink).unwrap();
        }
        // replay: steps in stream order are 0→5(0) 0→9(1) 1→6(2) 1→9(3) 2→9(4) 3→9(5)
        assert_eq!(ctx.span_of(9), Some(4));
        assert_eq!(ctx.span_of(7), Some(0));
        assert_eq!(ctx.span_of(0), None);
    }

    #[test]
    fn percentile_nearest_rank() {
        assert_eq!(percentile(&[], 0.99), 0);
        assert_eq!(percentile(&[5], 0.99), 5);
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 0.99), 99);
        assert_eq!(percentile(&v, 0.5), 50);
    }
}
