//! Two-layer GCN, SAGE and GIN on a seeded uniform graph, checked against
//! the in-memory reference.
//!
//! Usage: `cargo run --release --example synthetic_inference [vertices]`

use broadcast_gnn::orchestrator::HotBudget;
use broadcast_gnn::runtime::{compare, oracle_inference, run_inference, DenseOutput, PipelineConfig};
use broadcast_gnn::storage::{generate_synthetic, GraphKind, ModelKind, ModelWeights, SyntheticSpec};

fn main() -> broadcast_gnn::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let dir = tempfile::tempdir().expect("tempdir");
    let graph = generate_synthetic(&SyntheticSpec::new(GraphKind::Uniform, n, 10, 32, 3), dir.path())?;
    println!("{} vertices, {} edges", graph.num_vertices(), graph.num_edges());

    for kind in [ModelKind::Gcn, ModelKind::Sage, ModelKind::Gin] {
        let weights = ModelWeights::random(kind, &[32, 16, 4], 11);
        // a quarter of the vertices fit in the hot store
        let config = PipelineConfig {
            hot_budget: HotBudget::Slots(n as usize / 4),
            ..PipelineConfig::default()
        };
        let report = run_inference(dir.path(), &weights, &config, &dir.path().join(kind.to_string()))?;
        let ours = DenseOutput::load(&report.output)?;
        let reference = oracle_inference(dir.path(), &weights, &config)?;
        let cmp = compare(&reference, &ours)?;
        println!(
            "{kind}: {:.3}s  reloads {}  max abs err {:.2e}  argmax mismatches {}",
            report.wall_seconds,
            report.total_reloads(),
            cmp.max_abs_error,
            cmp.argmax_mismatches
        );
    }
    Ok(())
}
