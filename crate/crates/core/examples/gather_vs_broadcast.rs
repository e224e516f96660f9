//! Compares the feature bytes a gather execution would fetch (simulated,
//! block-granular with an LRU cache) against what the broadcast reader
//! actually read.

use broadcast_gnn::bench::simulate_gather_reads;
use broadcast_gnn::runtime::{run_inference, PipelineConfig};
use broadcast_gnn::storage::{generate_synthetic, Dtype, GraphKind, ModelKind, ModelWeights, SyntheticSpec};

fn main() -> broadcast_gnn::Result<()> {
    let (n, dim) = (50_000u64, 64usize);
    let dir = tempfile::tempdir().expect("tempdir");
    let graph = generate_synthetic(&SyntheticSpec::new(GraphKind::PreferentialAttachment, n, 10, dim, 9), dir.path())?;
    let weights = ModelWeights::random(ModelKind::Gcn, &[dim, 8], 0);
    let report = run_inference(dir.path(), &weights, &PipelineConfig::default(), &dir.path().join("out"))?;
    let broadcast = report.io[0].read.feature_bytes;

    let feature_bytes = Dtype::F32.row_bytes(dim) * n;
    println!("broadcast feature bytes: {broadcast}");
    for fraction in [0.0, 0.01, 0.1, 0.25, 1.0] {
        let cache = (feature_bytes as f64 * fraction) as u64;
        let est = simulate_gather_reads(&graph, dim, Dtype::F32, 4096, cache);
        println!(
            "gather, cache {:>4.0}% of features: {:>12} bytes ({:.1}x broadcast)",
            fraction * 100.0,
            est.bytes_read,
            est.bytes_read as f64 / broadcast as f64
        );
    }
    Ok(())
}
