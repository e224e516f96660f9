use std::path::Path;

use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_csr, write_dense_matrix_set, Dtype, GraphCsr, RowsRef, VertexId};
use crate::dio::IoMode;
use crate::error::{Error, Result};

pub const FEATURES_DIR: &str = "features";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    /// Growth model: each new vertex links to existing vertices chosen
    /// with probability proportional to (degree + 1). Edges are stored in
    /// both directions, so in- and out-degree distributions are heavy-tailed.
    PreferentialAttachment,
    /// Endpoints drawn independently and uniformly.
    Uniform,
}

impl std::str::FromStr for GraphKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preferential_attachment" | "pa" => Ok(GraphKind::PreferentialAttachment),
            "uniform" => Ok(GraphKind::Uniform),
            other => Err(Error::Config(format!("unknown graph kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for GraphKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GraphKind::PreferentialAttachment => "preferential_attachment",
            GraphKind::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub kind: GraphKind,
    pub num_vertices: u64,
    /// Target |E| / |V| before duplicate removal.
    pub avg_degree: u64,
    pub feature_dim: usize,
    pub seed: u64,
    pub partitions: usize,
    pub dtype: Dtype,
}

impl SyntheticSpec {
    pub fn new(kind: GraphKind, num_vertices: u64, avg_degree: u64, feature_dim: usize, seed: u64) -> Self {
        Self {
            kind,
            num_vertices,
            avg_degree,
            feature_dim,
            seed,
            partitions: 8,
            dtype: Dtype::F32,
        }
    }

    pub fn graph(&self) -> Result<GraphCsr> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut edges = match self.kind {
            GraphKind::Uniform => uniform_edges(self.num_vertices, self.avg_degree, &mut rng),
            GraphKind::PreferentialAttachment => {
                attachment_edges(self.num_vertices, self.avg_degree, &mut rng)
            }
        };
        GraphCsr::from_edges(self.num_vertices, &mut edges)
    }

    /// Row-major features drawn uniformly from [-1, 1].
    pub fn features(&self) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_f00d_cafe_d00d);
        (0..self.num_vertices as usize * self.feature_dim)
            .map(|_| rng.gen_range(-1.0f32..=1.0))
            .collect()
    }
}

fn uniform_edges(n: u64, avg_degree: u64, rng: &mut ChaCha8Rng) -> Vec<(VertexId, VertexId)> {
    if n == 0 {
        return Vec::new();
    }
    (0..n * avg_degree)
        .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
        .collect()
}

fn attachment_edges(n: u64, avg_degree: u64, rng: &mut ChaCha8Rng) -> Vec<(VertexId, VertexId)> {
    // each link is stored in both directions, so half as many links per vertex
    let links = (avg_degree / 2).max(avg_degree.min(1));
    let mut edges = Vec::with_capacity((n * links * 2) as usize);
    // one entry per link endpoint: sampling from it is degree-proportional
    let mut endpoints: Vec<VertexId> = Vec::with_capacity((n * links * 2) as usize);
    for v in 1..n {
        for _ in 0..links.min(v) {
            let total = endpoints.len() as u64 + v;
            let pick = rng.gen_range(0..total);
            let target = if pick < v {
                pick
            } else {
                endpoints[(pick - v) as usize]
            };
            edges.push((v, target));
            edges.push((target, v));
            endpoints.push(target);
            endpoints.push(v);
        }
    }
    edges
}

/// Writes topology, in-degrees and a partitioned feature matrix set
/// (`features/`) into `out`. Deterministic for a fixed spec.
pub fn generate_synthetic(spec: &SyntheticSpec, out: &Path) -> Result<GraphCsr> {
    if spec.num_vertices == 0 {
        return Err(Error::Config("num_vertices must be >= 1".into()));
    }
    if spec.feature_dim == 0 {
        return Err(Error::Config("feature_dim must be >= 1".into()));
    }
    let graph = spec.graph()?;
    write_csr(&graph, out)?;
    let features = spec.features();
    let dir = out.join(FEATURES_DIR);
    match spec.dtype {
        Dtype::F32 => write_dense_matrix_set(
            &dir,
            RowsRef::F32(&features),
            spec.num_vertices,
            spec.feature_dim,
            spec.partitions,
            IoMode::Buffered,
        )?,
        Dtype::F16 => {
            let half: Vec<f16> = features.iter().map(|&x| f16::from_f32(x)).collect();
            write_dense_matrix_set(
                &dir,
                RowsRef::F16(&half),
                spec.num_vertices,
                spec.feature_dim,
                spec.partitions,
                IoMode::Buffered,
            )?
        }
    };
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::read_matrix_set;

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(dir).unwrap().display().to_string();
                    out.push((rel, std::fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::new(GraphKind::Uniform, 100, 4, 8, 7);
        generate_synthetic(&spec, a.path()).unwrap();
        generate_synthetic(&spec, b.path()).unwrap();
        assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
    }

    #[test]
    fn zero_degree_is_edgeless() {
        for kind in [GraphKind::Uniform, GraphKind::PreferentialAttachment] {
            let g = SyntheticSpec::new(kind, 50, 0, 2, 1).graph().unwrap();
            assert_eq!(g.num_edges(), 0);
            assert!(g.in_degrees.iter().all(|&d| d == 0));
        }
    }

    #[test]
    fn attachment_is_heavy_tailed() {
        let spec = SyntheticSpec::new(GraphKind::PreferentialAttachment, 100_000, 10, 1, 3);
        let g = spec.graph().unwrap();
        let avg = g.num_edges() as f64 / g.num_vertices() as f64;
        assert!(avg > 9.0 && avg <= 10.0, "avg degree {avg}");
        assert!(g.max_in_degree() as f64 > 10.0 * 10.0);
    }

    #[test]
    fn features_in_unit_box_and_f16_storage() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SyntheticSpec::new(GraphKind::Uniform, 40, 3, 5, 2);
        spec.dtype = Dtype::F16;
        spec.partitions = 3;
        generate_synthetic(&spec, dir.path()).unwrap();
        let (meta, rows) = read_matrix_set(&dir.path().join(FEATURES_DIR)).unwrap();
        assert_eq!(meta.dtype, Dtype::F16);
        assert!(rows.iter().all(|x| (-1.0..=1.0).contains(x)));
        let exact: Vec<f32> = spec
            .features()
            .iter()
            .map(|&x| f16::from_f32(x).to_f32())
            .collect();
        assert_eq!(rows, exact);
    }
}
