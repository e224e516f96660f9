//! Completion-rate vertex reordering.
//!
//! Each source `u` is scored by how much it advances its destinations
//! toward completion per message it sends:
//! `score(u) = Σ_{v ∈ Out(u)} (1 / d_in(v)) / d_out(u)`, and vertices are
//! relabeled in decreasing score order. Topology and features are then
//! rewritten in the new ID space.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dio::IoMode;
use crate::error::{Error, IoContext, Result};
use crate::orchestrator::percentile;
use crate::reader::{plan_chunks, ChunkReader};
use crate::storage::{
    read_csr, write_csr, GraphCsr, HeaderCursor, MatrixSet, MatrixSetMeta, VertexId, FEATURES_DIR,
};
use crate::writer::{SpillBufferSet, WriterCounters};

const PERM_MAGIC: &[u8; 4] = b"APRM";
pub const PERMUTATION_FILE: &str = "permutation.aprm";

/// One score per vertex; sources without out-edges score 0.
pub fn score_vertices(graph: &GraphCsr) -> Vec<f64> {
    (0..graph.num_vertices())
        .map(|u| {
            let out = graph.out_neighbors(u);
            if out.is_empty() {
                return 0.0;
            }
            let gain: f64 = out
                .iter()
                .map(|&v| 1.0 / graph.in_degrees[v as usize] as f64)
                .sum();
            gain / out.len() as f64
        })
        .collect()
}

/// A bijection between original and new vertex IDs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relabeling {
    pub old_to_new: Vec<VertexId>,
    pub new_to_old: Vec<VertexId>,
}

impl Relabeling {
    pub fn identity(n: u64) -> Self {
        Self {
            old_to_new: (0..n).collect(),
            new_to_old: (0..n).collect(),
        }
    }

    /// `order[k]` is the old ID that receives new ID `k`.
    pub fn from_order(order: Vec<VertexId>) -> Result<Self> {
        let n = order.len();
        let mut old_to_new = vec![u64::MAX; n];
        for (new, &old) in order.iter().enumerate() {
            let slot = old_to_new
                .get_mut(old as usize)
                .ok_or(Error::VertexOutOfRange {
                    id: old,
                    num_vertices: n as u64,
                })?;
            if *slot != u64::MAX {
                return Err(Error::DuplicateVertex(old));
            }
            *slot = new as u64;
        }
        Ok(Self {
            old_to_new,
            new_to_old: order,
        })
    }

    pub fn from_old_to_new(old_to_new: Vec<VertexId>) -> Result<Self> {
        let mut order = vec![u64::MAX; old_to_new.len()];
        for (old, &new) in old_to_new.iter().enumerate() {
            let slot = order.get_mut(new as usize).ok_or(Error::VertexOutOfRange {
                id: new,
                num_vertices: old_to_new.len() as u64,
            })?;
            if *slot != u64::MAX {
                return Err(Error::DuplicateVertex(new));
            }
            *slot = old as u64;
        }
        Ok(Self {
            old_to_new,
            new_to_old: order,
        })
    }

    /// A seeded uniform shuffle.
    pub fn random(n: u64, seed: u64) -> Self {
        let mut order: Vec<VertexId> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self::from_order(order).expect("shuffle is a permutation")
    }

    pub fn len(&self) -> usize {
        self.old_to_new.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_to_new.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.old_to_new.iter().enumerate().all(|(i, &v)| i as u64 == v)
    }
}

/// Ranks by descending score; equal scores keep ascending old-ID order.
pub fn build_order(scores: &[f64]) -> Relabeling {
    let mut order: Vec<VertexId> = (0..scores.len() as u64).collect();
    order.sort_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    });
    Relabeling::from_order(order).expect("sorted indices are a permutation")
}

pub fn write_permutation(map: &Relabeling, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + map.len() * 8);
    buf.extend_from_slice(PERM_MAGIC);
    buf.extend_from_slice(&(map.len() as u64).to_le_bytes());
    for &v in &map.old_to_new {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).at(path)
}

pub fn read_permutation(path: &Path) -> Result<Relabeling> {
    let bytes = fs::read(path).at(path)?;
    let mut cur = HeaderCursor::new(&bytes, path);
    cur.magic(PERM_MAGIC)?;
    let n = cur.u64()?;
    let needed = 12 + n * 8;
    if (bytes.len() as u64) < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            actual: bytes.len() as u64,
        });
    }
    let old_to_new = bytes[12..needed as usize]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Relabeling::from_old_to_new(old_to_new)
}

/// Maps every edge endpoint through `map`.
pub fn relabel_graph(graph: &GraphCsr, map: &Relabeling) -> Result<GraphCsr> {
    if map.len() as u64 != graph.num_vertices() {
        return Err(Error::Config(format!(
            "relabeling covers {} vertices, graph has {}",
            map.len(),
            graph.num_vertices()
        )));
    }
    let mut edges = Vec::with_capacity(graph.num_edges() as usize);
    for u in 0..graph.num_vertices() {
        let nu = map.old_to_new[u as usize];
        edges.extend(
            graph
                .out_neighbors(u)
                .iter()
                .map(|&v| (nu, map.old_to_new[v as usize])),
        );
    }
    GraphCsr::from_edges(graph.num_vertices(), &mut edges)
}

/// Memory used while relabeling features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelabelReport {
    pub chunk_rows: u64,
    pub writer: WriterCounters,
    /// Upper bound on feature bytes held at once: one chunk plus the
    /// buffered rows.
    pub peak_row_bytes: u64,
}

/// Streams features in old-ID order and rewrites them partitioned by new
/// ID. Memory is one chunk (half of `budget`) plus `partitions` spill
/// buffers sharing the other half.
pub fn relabel_features(
    input: &MatrixSet,
    map: &Relabeling,
    partitions: usize,
    budget: u64,
    out: &Path,
    mode: IoMode,
) -> Result<(MatrixSet, RelabelReport)> {
    let meta = input.meta;
    if map.len() as u64 != meta.num_vertices {
        return Err(Error::Config("relabeling does not match feature rows".into()));
    }
    let row_bytes = meta.dtype.row_bytes(meta.dim);
    let plan = plan_chunks(meta.num_vertices, meta.dim, meta.dtype, budget / 2)?;
    let buffer_bytes = budget / 2 / partitions.max(1) as u64;
    let mut reader = ChunkReader::features_only(input, mode)?;
    let mut buffers = SpillBufferSet::with_meta(
        out,
        MatrixSetMeta {
            partitions,
            ..meta
        },
        buffer_bytes,
        mode,
    )?;
    let mut chunk_rows = 0;
    for range in plan {
        let chunk = reader.read_chunk(range.clone())?;
        chunk_rows = chunk_rows.max(chunk.len() as u64);
        let batch = crate::compute::Batch {
            ids: range.map(|v| map.old_to_new[v as usize]).collect(),
            rows: chunk.features,
            dim: meta.dim,
        };
        buffers.scatter(&batch)?;
    }
    let (set, writer) = buffers.flush_all()?;
    Ok((
        set,
        RelabelReport {
            chunk_rows,
            writer,
            peak_row_bytes: (chunk_rows + writer.peak_buffered_rows) * row_bytes,
        },
    ))
}

/// Distribution of per-destination spans.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpanStats {
    pub mean: f64,
    pub p50: u64,
    pub p99: u64,
    pub max: u64,
    pub destinations: u64,
}

impl SpanStats {
    pub fn from_spans(spans: &[u64]) -> Self {
        if spans.is_empty() {
            return Self::default();
        }
        Self {
            mean: spans.iter().sum::<u64>() as f64 / spans.len() as f64,
            p50: percentile(spans, 0.5),
            p99: percentile(spans, 0.99),
            max: spans.iter().copied().max().unwrap_or(0),
            destinations: spans.len() as u64,
        }
    }
}

/// Per-destination spans when sources stream in the order given by
/// `order` (new ID 0 first), one step per delivered edge message.
pub fn destination_spans(graph: &GraphCsr, order: &Relabeling) -> Vec<u64> {
    let n = graph.num_vertices() as usize;
    let mut first = vec![u64::MAX; n];
    let mut last = vec![0u64; n];
    let mut step = 0u64;
    for &u in &order.new_to_old {
        for &v in graph.out_neighbors(u) {
            let v = v as usize;
            if first[v] == u64::MAX {
                first[v] = step;
            }
            last[v] = step;
            step += 1;
        }
    }
    first
        .iter()
        .zip(&last)
        .filter(|(f, _)| **f != u64::MAX)
        .map(|(f, l)| l - f)
        .collect()
}

pub fn compute_span(graph: &GraphCsr, order: &Relabeling) -> SpanStats {
    SpanStats::from_spans(&destination_spans(graph, order))
}

/// Vertex orderings compared by the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    Original,
    Random { seed: u64 },
    CompletionRate,
}

impl Ordering {
    pub fn relabeling(self, graph: &GraphCsr) -> Relabeling {
        match self {
            Ordering::Original => Relabeling::identity(graph.num_vertices()),
            Ordering::Random { seed } => Relabeling::random(graph.num_vertices(), seed),
            Ordering::CompletionRate => build_order(&score_vertices(graph)),
        }
    }

    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "og" | "original" => Ok(Ordering::Original),
            "rnd" | "random" => Ok(Ordering::Random { seed }),
            "at" | "completion" => Ok(Ordering::CompletionRate),
            _ => Err(Error::Config(format!("unknown ordering {s:?}"))),
        }
    }
}

impl std::fmt::Display for Ordering {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ordering::Original => "og",
            Ordering::Random { .. } => "rnd",
            Ordering::CompletionRate => "at",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ReorderSummary {
    pub map: Relabeling,
    pub before: SpanStats,
    pub after: SpanStats,
    pub out: PathBuf,
}

/// Relabels a graph directory (topology, degrees, features) into `out`
/// and stores the permutation next to it.
pub fn reorder_dataset(
    graph_dir: &Path,
    ordering: Ordering,
    partitions: usize,
    budget: u64,
    out: &Path,
    mode: IoMode,
) -> Result<ReorderSummary> {
    let graph = read_csr(graph_dir)?;
    let map = ordering.relabeling(&graph);
    let relabeled = relabel_graph(&graph, &map)?;
    fs::create_dir_all(out).at(out)?;
    write_csr(&relabeled, out)?;
    let features = MatrixSet::open(&graph_dir.join(FEATURES_DIR))?;
    relabel_features(&features, &map, partitions, budget, &out.join(FEATURES_DIR), mode)?;
    write_permutation(&map, &out.join(PERMUTATION_FILE))?;
    Ok(ReorderSummary {
        before: compute_span(&graph, &Relabeling::identity(graph.num_vertices())),
        after: compute_span(&graph, &map),
        map,
        out: out.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::{read_matrix_set, write_dense_matrix_set, Dtype, RowsRef};
    use proptest::prelude::*;

    fn six_vertex() -> GraphCsr {
        GraphCsr::from_edges(6, &mut vec![(0, 1), (4, 1), (0, 3), (2, 3), (4, 3)]).unwrap()
    }

    fn naive_scores(g: &GraphCsr) -> Vec<f64> {
        let n = g.num_vertices();
        let mut edges = vec![];
        for u in 0..n {
            for &v in g.out_neighbors(u) {
                edges.push((u, v));
            }
        }
        (0..n)
            .map(|u| {
                let mut gain = 0.0;
                let mut dout = 0;
                for &(a, b) in &edges {
                    if a == u {
                        dout += 1;
                        let din = edges.iter().filter(|e| e.1 == b).count();
                        gain += 1.0 / din as f64;
                    }
                }
                if dout == 0 {
                    0.0
                } else {
                    gain / dout as f64
                }
            })
            .collect()
    }

    #[test]
    fn six_vertex_scores() {
        let s = score_vertices(&six_vertex());
        assert_eq!(s[0], (0.5 + 1.0 / 3.0) / 2.0);
        assert_eq!(s[1], 0.0);
        assert_eq!(s, naive_scores(&six_vertex()));
        let one = GraphCsr::from_edges(2, &mut vec![(0, 1)]).unwrap();
        assert_eq!(score_vertices(&one), vec![1.0, 0.0]);
    }

    #[test]
    fn order_tie_rule() {
        let r = build_order(&[0.2, 0.9, 0.9]);
        assert_eq!(r.new_to_old, vec![1, 2, 0]);
        assert_eq!(r.old_to_new, vec![2, 0, 1]);
        assert!(build_order(&[0.5; 7]).is_identity());
    }

    #[test]
    fn permutation_file_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p");
        let map = Relabeling::random(1000, 4);
        write_permutation(&map, &p).unwrap();
        assert_eq!(read_permutation(&p).unwrap(), map);

        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_permutation(&p), Err(Error::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        fs::write(&p, &bad).unwrap();
        assert!(matches!(read_permutation(&p), Err(Error::BadMagic { .. })));
        let mut dup = bytes;
        dup[12..20].copy_from_slice(&1u64.to_le_bytes());
        dup[20..28].copy_from_slice(&1u64.to_le_bytes());
        fs::write(&p, &dup).unwrap();
        assert!(matches!(read_permutation(&p), Err(Error::DuplicateVertex(1))));
    }

    #[test]
    fn identity_relabel_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let g = six_vertex();
        write_csr(&g, &dir.path().join("a")).unwrap();
        let r = relabel_graph(&g, &Relabeling::identity(6)).unwrap();
        write_csr(&r, &dir.path().join("b")).unwrap();
        for f in [crate::storage::TOPOLOGY_FILE, crate::storage::IN_DEGREE_FILE] {
            assert_eq!(
                fs::read(dir.path().join("a").join(f)).unwrap(),
                fs::read(dir.path().join("b").join(f)).unwrap()
            );
        }
    }

    #[test]
    fn chain_spans_are_zero() {
        let g = GraphCsr::from_edges(3, &mut vec![(0, 1), (1, 2)]).unwrap();
        let s = compute_span(&g, &Relabeling::identity(3));
        assert_eq!((s.mean, s.max, s.destinations), (0.0, 0, 2));
    }

    #[test]
    fn completion_order_makes_star_leaves_contiguous() {
        // hub 0 hears from odd leaves 1,3,5,7; even fillers 2,4,6,8 each
        // feed three private sinks and sit between the leaves by ID
        let mut edges = vec![];
        for leaf in [1u64, 3, 5, 7] {
            edges.push((leaf, 0));
        }
        for (k, filler) in [2u64, 4, 6, 8].into_iter().enumerate() {
            for j in 0..3 {
                edges.push((filler, 9 + 3 * k as u64 + j));
            }
        }
        let g = GraphCsr::from_edges(21, &mut edges).unwrap();
        let og = destination_spans(&g, &Relabeling::identity(21));
        let at = build_order(&score_vertices(&g));
        assert_eq!(&at.new_to_old[..8], &[2, 4, 6, 8, 1, 3, 5, 7]);
        let spans = destination_spans(&g, &at);
        // original: leaf messages at steps 0, 4, 8, 12
        assert_eq!(og.iter().max(), Some(&12));
        // reordered: four consecutive steps, the minimum possible
        assert_eq!(spans.iter().max(), Some(&3));
        assert!(compute_span(&g, &at).mean < compute_span(&g, &Relabeling::identity(21)).mean);
    }

    #[test]
    fn relabel_features_roundtrip_identity_and_random() {
        let dir = tempfile::tempdir().unwrap();
        let n = 50u64;
        let rows: Vec<f32> = (0..n * 3).map(|x| x as f32 * 0.5).collect();
        let set = write_dense_matrix_set(
            &dir.path().join("in"),
            RowsRef::F32(&rows),
            n,
            3,
            4,
            IoMode::Buffered,
        )
        .unwrap();
        let (out, _) = relabel_features(
            &set,
            &Relabeling::identity(n),
            1,
            1 << 20,
            &dir.path().join("id"),
            IoMode::Buffered,
        )
        .unwrap();
        assert_eq!(out.manifests[0].spill_names.len(), 1);
        assert_eq!(read_matrix_set(&out.dir).unwrap().1, rows);

        let map = Relabeling::random(n, 11);
        let (out, _) =
            relabel_features(&set, &map, 3, 256, &dir.path().join("rnd"), IoMode::Direct).unwrap();
        let dense = read_matrix_set(&out.dir).unwrap().1;
        for old in 0..n as usize {
            let new = map.old_to_new[old] as usize;
            assert_eq!(&dense[new * 3..new * 3 + 3], &rows[old * 3..old * 3 + 3]);
        }
    }

    #[test]
    fn f16_features_stay_f16() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<half::f16> = (0..20).map(|x| half::f16::from_f32(x as f32 / 7.0)).collect();
        let set = write_dense_matrix_set(
            &dir.path().join("in"),
            RowsRef::F16(&rows),
            10,
            2,
            2,
            IoMode::Buffered,
        )
        .unwrap();
        let map = Relabeling::random(10, 1);
        let (out, _) =
            relabel_features(&set, &map, 2, 1 << 12, &dir.path().join("o"), IoMode::Buffered)
                .unwrap();
        assert_eq!(out.meta.dtype, Dtype::F16);
        let dense = read_matrix_set(&out.dir).unwrap().1;
        for old in 0..10 {
            let new = map.old_to_new[old] as usize;
            assert_eq!(dense[new * 2], rows[old * 2].to_f32());
        }
    }

    fn arb_graph() -> impl Strategy<Value = GraphCsr> {
        (1u64..40).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..120).prop_map(move |mut e| {
                GraphCsr::from_edges(n, &mut e).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn scores_match_double_loop(g in arb_graph()) {
            prop_assert_eq!(score_vertices(&g), naive_scores(&g));
        }

        #[test]
        fn relabel_preserves_degrees_and_inverts(g in arb_graph(), seed in any::<u64>()) {
            let map = Relabeling::random(g.num_vertices(), seed);
            for (old, &new) in map.old_to_new.iter().enumerate() {
                prop_assert_eq!(map.new_to_old[new as usize], old as u64);
            }
            let r = relabel_graph(&g, &map).unwrap();
            let mut a = g.in_degrees.clone();
            let mut b = r.in_degrees.clone();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
            for u in 0..g.num_vertices() {
                prop_assert_eq!(g.out_degree(u), r.out_degree(map.old_to_new[u as usize]));
            }
            let back = relabel_graph(&r, &Relabeling::from_order(map.old_to_new.clone()).unwrap()).unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
