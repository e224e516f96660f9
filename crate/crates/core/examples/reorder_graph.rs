//! Relabels a preferential-attachment graph by completion-rate score, then
//! shows that inference on the relabeled copy gives the same predictions
//! once permuted back.

use broadcast_gnn::dio::IoMode;
use broadcast_gnn::orchestrator::HotBudget;
use broadcast_gnn::reorder::{reorder_dataset, Ordering};
use broadcast_gnn::runtime::{compare, run_inference, DenseOutput, PipelineConfig};
use broadcast_gnn::storage::{generate_synthetic, GraphKind, ModelKind, ModelWeights, SyntheticSpec};

fn main() -> broadcast_gnn::Result<()> {
    let n = 20_000u64;
    let dir = tempfile::tempdir().expect("tempdir");
    let original = dir.path().join("og");
    generate_synthetic(&SyntheticSpec::new(GraphKind::PreferentialAttachment, n, 10, 32, 5), &original)?;

    let summary = reorder_dataset(
        &original,
        Ordering::CompletionRate,
        8,
        4 << 20,
        &dir.path().join("at"),
        IoMode::Direct,
    )?;
    println!(
        "mean span {:.0} -> {:.0}, p99 {} -> {}",
        summary.before.mean, summary.after.mean, summary.before.p99, summary.after.p99
    );

    let weights = ModelWeights::random(ModelKind::Gcn, &[32, 16, 4], 2);
    let config = PipelineConfig {
        hot_budget: HotBudget::Slots(n as usize / 20),
        ..PipelineConfig::default()
    };
    let og = run_inference(&original, &weights, &config, &dir.path().join("out_og"))?;
    let at = run_inference(&summary.out, &weights, &config, &dir.path().join("out_at"))?;
    println!("reloads: original {}  reordered {}", og.total_reloads(), at.total_reloads());

    let a = DenseOutput::load(&og.output)?;
    let b = DenseOutput::load(&at.output)?.unpermute(&summary.map);
    let cmp = compare(&a, &b)?;
    println!("max abs difference {:.2e}, argmax mismatches {}", cmp.max_abs_error, cmp.argmax_mismatches);
    Ok(())
}
