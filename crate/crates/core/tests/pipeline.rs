//! Randomized end-to-end properties of the streaming pipeline.

use std::collections::HashSet;

use broadcast_gnn::compute::Batch;
use broadcast_gnn::dio::IoMode;
use broadcast_gnn::memory::EvictionPolicyKind;
use broadcast_gnn::orchestrator::{HotBudget, Normalization};
use broadcast_gnn::reorder::{reorder_dataset, Ordering};
use broadcast_gnn::runtime::{compare, oracle_inference, run_inference, DenseOutput, PipelineConfig};
use broadcast_gnn::storage::{
    read_matrix_set, read_spill, write_csr, write_dense_matrix_set, Dtype, GraphCsr, GraphKind,
    ModelKind, ModelWeights, Rows, RowsRef, SyntheticSpec, FEATURES_DIR,
};
use broadcast_gnn::writer::SpillBufferSet;
use proptest::prelude::*;

fn write_graph(dir: &std::path::Path, n: u64, edges: &[(u64, u64)], dim: usize, partitions: usize, dtype: Dtype) -> GraphCsr {
    let mut edges = edges.to_vec();
    let graph = GraphCsr::from_edges(n, &mut edges).unwrap();
    write_csr(&graph, dir).unwrap();
    let rows: Vec<f32> = (0..n as usize * dim).map(|i| ((i * 37 % 19) as f32 - 9.0) / 9.0).collect();
    let halves: Vec<half::f16> = rows.iter().map(|&x| half::f16::from_f32(x)).collect();
    let rows = match dtype {
        Dtype::F32 => RowsRef::F32(&rows),
        Dtype::F16 => RowsRef::F16(&halves),
    };
    write_dense_matrix_set(&dir.join(FEATURES_DIR), rows, n, dim, partitions, IoMode::Buffered).unwrap();
    graph
}

fn small_graph() -> impl Strategy<Value = (u64, Vec<(u64, u64)>)> {
    (1u64..40).prop_flat_map(|n| (Just(n), proptest::collection::vec((0..n, 0..n), 0..160)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Any budget, chunking, queue depth and policy reproduces the oracle
    /// and completes every vertex.
    #[test]
    fn ooc_matches_oracle_under_any_knobs(
        (n, edges) in small_graph(),
        model in prop_oneof![Just(ModelKind::Gcn), Just(ModelKind::Sage), Just(ModelKind::Gin)],
        sum in any::<bool>(),
        f16_input in any::<bool>(),
        slots in 1usize..12,
        chunk_rows in 1u64..9,
        queue in 1usize..4,
        partitions in 1usize..5,
        spill_rows in 1u64..6,
        policy in prop_oneof![Just("minpend"), Just("lru"), Just("rnd")],
        seed in 0u64..1000,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let dim = 3;
        let dtype = if f16_input { Dtype::F16 } else { Dtype::F32 };
        write_graph(dir.path(), n, &edges, dim, partitions, dtype);
        let mut weights = ModelWeights::random(model, &[dim, 4, 2], seed);
        weights.gin_epsilon = 0.25;
        let config = PipelineConfig {
            chunk_budget: chunk_rows * dtype.row_bytes(dim),
            hot_budget: HotBudget::Slots(slots),
            graduation_bytes: 2 * 8,
            partitions,
            spill_buffer_bytes: spill_rows * 4 * 4,
            queue_capacity: queue,
            policy: EvictionPolicyKind::parse(policy, seed).unwrap(),
            io_mode: IoMode::Buffered,
            normalization: if sum { Normalization::Sum } else { Normalization::Mean },
            ..PipelineConfig::default()
        };
        let report = run_inference(dir.path(), &weights, &config, &dir.path().join("out")).unwrap();
        for m in &report.layers {
            prop_assert_eq!(m.graduations, n);
            prop_assert!(m.peak_hot <= slots as u64);
        }
        for io in &report.io {
            prop_assert!(io.delivered_once);
        }
        let ours = DenseOutput::load(&report.output).unwrap();
        let reference = oracle_inference(dir.path(), &weights, &config).unwrap();
        let cmp = compare(&reference, &ours).unwrap();
        prop_assert!(cmp.max_abs_error <= 1e-5, "{:?}", cmp);
    }

    /// Rows scattered in any order come back sorted, complete and exact;
    /// no buffer ever holds more than its capacity.
    #[test]
    fn writer_reassembles_any_arrival_order(
        n in 1u64..200,
        partitions in 1usize..6,
        buffer_rows in 1u64..20,
        batch in 1usize..17,
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let dir = tempfile::tempdir().unwrap();
        let dim = 2;
        let mut order: Vec<u64> = (0..n).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let mut set = SpillBufferSet::create(
            &dir.path().join("m"), n, dim, partitions, buffer_rows * 8, IoMode::Buffered,
        ).unwrap();
        for ids in order.chunks(batch) {
            let rows = ids.iter().flat_map(|&v| [v as f32, -(v as f32)]).collect();
            set.scatter(&Batch { ids: ids.to_vec(), rows, dim }).unwrap();
            for p in 0..partitions {
                prop_assert!(set.buffered_rows(p) <= set.capacity_rows());
            }
        }
        let (written, counters) = set.flush_all().unwrap();
        prop_assert_eq!(counters.rows, n);
        let mut seen = HashSet::new();
        for (_, path) in written.spill_paths() {
            let spill = read_spill(&path).unwrap();
            prop_assert!(spill.ids.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(spill.ids.len() <= buffer_rows as usize);
            if let Rows::F32(rows) = &spill.rows {
                for (i, &v) in spill.ids.iter().enumerate() {
                    prop_assert_eq!(rows[2 * i], v as f32);
                }
            }
            for v in spill.ids {
                prop_assert!(seen.insert(v));
            }
        }
        let (_, dense) = read_matrix_set(&dir.path().join("m")).unwrap();
        let expected: Vec<f32> = (0..n).flat_map(|v| [v as f32, -(v as f32)]).collect();
        prop_assert_eq!(dense, expected);
    }
}

/// Outputs on a relabeled copy, permuted back, equal the original outputs.
#[test]
fn reordering_preserves_semantics() {
    let dir = tempfile::tempdir().unwrap();
    let original = dir.path().join("og");
    broadcast_gnn::storage::generate_synthetic(
        &SyntheticSpec::new(GraphKind::PreferentialAttachment, 3000, 8, 16, 21),
        &original,
    )
    .unwrap();
    let weights = ModelWeights::random(ModelKind::Sage, &[16, 8, 4], 5);
    let config = PipelineConfig {
        hot_budget: HotBudget::Slots(150),
        ..PipelineConfig::default()
    };
    let base = DenseOutput::load(&run_inference(&original, &weights, &config, &dir.path().join("o1")).unwrap().output).unwrap();
    for ordering in [Ordering::CompletionRate, Ordering::Random { seed: 3 }] {
        let s = reorder_dataset(&original, ordering, 4, 1 << 20, &dir.path().join(format!("g_{ordering}")), IoMode::Direct).unwrap();
        let out = run_inference(&s.out, &weights, &config, &dir.path().join(format!("o_{ordering}"))).unwrap();
        let back = DenseOutput::load(&out.output).unwrap().unpermute(&s.map);
        let cmp = compare(&base, &back).unwrap();
        assert_eq!(cmp.argmax_mismatches, 0, "{ordering}");
        assert!(cmp.mean_relative_error <= 1e-5, "{ordering}: {cmp:?}");
    }
}

/// Isolated and self-looped vertices still graduate with correct values.
#[test]
fn degenerate_vertices() {
    let dir = tempfile::tempdir().unwrap();
    write_graph(dir.path(), 7, &[(0, 0), (1, 1), (1, 2), (6, 2)], 4, 3, Dtype::F32);
    for model in [ModelKind::Gcn, ModelKind::Sage, ModelKind::Gin] {
        let weights = ModelWeights::random(model, &[4, 3], 1);
        let config = PipelineConfig {
            hot_budget: HotBudget::Slots(1),
            io_mode: IoMode::Buffered,
            ..PipelineConfig::default()
        };
        let report = run_inference(dir.path(), &weights, &config, &dir.path().join(model.to_string())).unwrap();
        assert_eq!(report.layers[0].graduations, 7);
        let cmp = compare(
            &oracle_inference(dir.path(), &weights, &config).unwrap(),
            &DenseOutput::load(&report.output).unwrap(),
        )
        .unwrap();
        assert!(cmp.within(1e-6), "{model}: {cmp:?}");
    }
}
