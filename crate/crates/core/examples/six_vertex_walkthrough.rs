//! Six-vertex walkthrough: vertices 0, 2 and 4 broadcast to destinations 1
//! and 3, which graduate once their last in-neighbor has been read.
//!
//! Features are scalars `h_v = v` and the model is one sum-aggregating layer
//! with an identity transform, so the output is the plain in-neighbor sum.
//! Chunks hold a single row and the hot store a single slot, which forces
//! vertex 1 out to the cold store and back.

use broadcast_gnn::bench::simulate_gather_reads;
use broadcast_gnn::compute::Activation;
use broadcast_gnn::dio::IoMode;
use broadcast_gnn::orchestrator::{HotBudget, Normalization};
use broadcast_gnn::runtime::{run_inference, DenseOutput, PipelineConfig};
use broadcast_gnn::storage::{
    write_csr, write_dense_matrix_set, Dtype, GraphCsr, LayerWeights, ModelKind, ModelWeights,
    RowsRef, FEATURES_DIR,
};

fn main() -> broadcast_gnn::Result<()> {
    let dir = tempfile::tempdir().expect("tempdir");
    let graph = GraphCsr::from_edges(6, &mut vec![(0, 1), (4, 1), (0, 3), (2, 3), (4, 3)])?;
    write_csr(&graph, dir.path())?;
    let features: Vec<f32> = (0..6).map(|v| v as f32).collect();
    write_dense_matrix_set(
        &dir.path().join(FEATURES_DIR),
        RowsRef::F32(&features),
        6,
        1,
        2,
        IoMode::Buffered,
    )?;

    let weights = ModelWeights {
        kind: ModelKind::Gcn,
        gin_epsilon: 0.0,
        layers: vec![LayerWeights {
            in_dim: 1,
            out_dim: 1,
            weight: vec![1.0],
            bias: vec![0.0],
        }],
    };
    let config = PipelineConfig {
        chunk_budget: 4,
        hot_budget: HotBudget::Slots(1),
        normalization: Normalization::Sum,
        output_activation: Activation::Identity,
        io_mode: IoMode::Buffered,
        ..PipelineConfig::default()
    };
    let report = run_inference(dir.path(), &weights, &config, &dir.path().join("out"))?;
    let out = DenseOutput::load(&report.output)?;
    for v in 0..6 {
        println!("vertex {v}: in-degree {} -> {}", graph.in_degrees[v as usize], out.row(v)[0]);
    }
    let layer = &report.layers[0];
    println!(
        "messages {}  evictions {}  reloads {}  max span {}",
        layer.messages, layer.evictions, layer.reloads, layer.max_span
    );

    // one row per block, no cache: gather fetches one row per edge
    let gather = simulate_gather_reads(&graph, 1, Dtype::F32, 4, 0);
    let read = &report.io[0].read;
    println!(
        "gather fetches {} rows; broadcast reads {} rows once each",
        gather.block_fetches, read.rows_delivered
    );
    Ok(())
}
