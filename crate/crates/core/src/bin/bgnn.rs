use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use broadcast_gnn::bench::{run_ablation, AblationScenario};
use broadcast_gnn::compute::Activation;
use broadcast_gnn::dio::IoMode;
use broadcast_gnn::memory::EvictionPolicyKind;
use broadcast_gnn::orchestrator::{HotBudget, Normalization};
use broadcast_gnn::reorder::{read_permutation, reorder_dataset, Ordering};
use broadcast_gnn::runtime::{
    compare_outputs, oracle_inference, run_inference, BackendKind, PipelineConfig,
};
use broadcast_gnn::storage::{
    generate_synthetic, ingest_edge_list, read_weights, write_dense_matrix_set, write_weights,
    Dtype, GraphKind, ModelKind, ModelWeights, RowsRef, SyntheticSpec, FEATURES_DIR,
};
use broadcast_gnn::{Error, Result};

#[derive(Parser)]
#[command(name = "bgnn", version, about = "Out-of-core broadcast GNN inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run layer-wise inference out of core.
    Infer(InferArgs),
    /// Run the in-memory gather reference.
    Oracle(OracleArgs),
    /// Compare two output directories.
    Compare(CompareArgs),
    /// Relabel a graph by completion-rate score.
    Reorder(ReorderArgs),
    /// Run an ablation scenario.
    Bench(BenchArgs),
    /// Convert a text edge list into a graph directory.
    Ingest(IngestArgs),
    /// Write a seeded synthetic graph with features.
    Generate(GenerateArgs),
    /// Write seeded random model weights.
    InitWeights(InitWeightsArgs),
}

/// Byte counts accept K/M/G (binary) suffixes, e.g. `8MiB` or `64M`.
fn parse_bytes(s: &str) -> std::result::Result<u64, String> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: u64 = num.parse().map_err(|_| format!("bad size {s:?}"))?;
    let mult = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => 1 << 10,
        "m" | "mb" | "mib" => 1 << 20,
        "g" | "gb" | "gib" => 1 << 30,
        _ => return Err(format!("bad size unit in {s:?}")),
    };
    n.checked_mul(mult).ok_or_else(|| format!("size {s:?} overflows"))
}

#[derive(Args)]
struct ModelOpts {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Must match the weights file when given.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long, default_value = "mean")]
    normalization: Normalization,
    #[arg(long, default_value = "relu")]
    hidden_activation: Activation,
    #[arg(long, default_value = "identity")]
    output_activation: Activation,
}

impl ModelOpts {
    fn load(&self) -> Result<ModelWeights> {
        let w = read_weights(&self.weights)?;
        if let Some(kind) = self.model {
            if kind != w.kind {
                return Err(Error::Config(format!(
                    "--model {kind} but weights are {}",
                    w.kind
                )));
            }
        }
        Ok(w)
    }

    fn apply(&self, cfg: &mut PipelineConfig) {
        cfg.normalization = self.normalization;
        cfg.hidden_activation = self.hidden_activation;
        cfg.output_activation = self.output_activation;
    }
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    model: ModelOpts,
    /// Hot store budget in bytes.
    #[arg(long, value_parser = parse_bytes, default_value = "64MiB")]
    hot_mem: u64,
    /// Hot store size in slots (overrides --hot-mem).
    #[arg(long)]
    hot_slots: Option<usize>,
    #[arg(long, value_parser = parse_bytes, default_value = "8MiB")]
    chunk: u64,
    #[arg(long, value_parser = parse_bytes, default_value = "16MiB")]
    grad_buf: u64,
    #[arg(long, value_parser = parse_bytes, default_value = "8MiB")]
    spill_buf: u64,
    #[arg(long, default_value_t = 8)]
    partitions: usize,
    #[arg(long, default_value_t = 20)]
    queue_cap: usize,
    #[arg(long, default_value = "minpend")]
    eviction: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    evict_batch: Option<usize>,
    #[arg(long, default_value = "blocked")]
    backend: BackendKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    no_direct_io: bool,
    #[arg(long)]
    discard_intermediate: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    model: ModelOpts,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    partitions: usize,
    /// Refuse inputs whose in-memory footprint estimate exceeds this.
    #[arg(long, value_parser = parse_bytes, default_value = "4GiB")]
    limit: u64,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Permutation file if `b` was computed on a relabeled graph.
    #[arg(long)]
    perm: Option<PathBuf>,
}

#[derive(Args)]
struct ReorderArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 8)]
    partitions: usize,
    #[arg(long)]
    out: PathBuf,
    /// `at` (completion rate), `rnd` or `og`.
    #[arg(long, default_value = "at")]
    ordering: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_bytes, default_value = "64MiB")]
    budget: u64,
    #[arg(long)]
    no_direct_io: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Scratch directory (default: `<out>.work`, removed afterwards).
    #[arg(long)]
    work: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    num_vertices: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also attach seeded random features of this width.
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    partitions: usize,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "preferential_attachment")]
    kind: GraphKind,
    #[arg(long)]
    vertices: u64,
    #[arg(long, default_value_t = 10)]
    avg_degree: u64,
    #[arg(long, default_value_t = 64)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    partitions: usize,
    #[arg(long, default_value = "f32")]
    dtype: Dtype,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InitWeightsArgs {
    #[arg(long)]
    model: ModelKind,
    /// Embedding widths: input,hidden...,output.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    gin_eps: f32,
    #[arg(long)]
    out: PathBuf,
}

fn io_mode(no_direct: bool) -> IoMode {
    if no_direct {
        IoMode::Buffered
    } else {
        IoMode::Direct
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Infer(a) => {
            let weights = a.model.load()?;
            let mut cfg = PipelineConfig {
                chunk_budget: a.chunk,
                hot_budget: match a.hot_slots {
                    Some(s) => HotBudget::Slots(s),
                    None => HotBudget::Bytes(a.hot_mem),
                },
                graduation_bytes: a.grad_buf,
                partitions: a.partitions,
                spill_buffer_bytes: a.spill_buf,
                queue_capacity: a.queue_cap,
                policy: EvictionPolicyKind::parse(&a.eviction, a.seed)?,
                evict_batch: a.evict_batch,
                io_mode: io_mode(a.no_direct_io),
                backend: a.backend,
                discard_intermediate: a.discard_intermediate,
                ..PipelineConfig::default()
            };
            a.model.apply(&mut cfg);
            let report = run_inference(&a.model.graph, &weights, &cfg, &a.out)?;
            print!("{}", report.to_csv());
            if let Some(path) = &a.metrics {
                report.write_csv(path)?;
            }
            println!("output: {}", report.output.display());
        }
        Command::Oracle(a) => {
            let weights = a.model.load()?;
            let mut cfg = PipelineConfig {
                oracle_limit: a.limit,
                ..PipelineConfig::default()
            };
            a.model.apply(&mut cfg);
            let out = oracle_inference(&a.model.graph, &weights, &cfg)?;
            out.save(&a.out, a.partitions, IoMode::Direct)?;
            println!("{} x {} rows written to {}", out.num_vertices, out.dim, a.out.display());
        }
        Command::Compare(a) => {
            let perm = a.perm.as_deref().map(read_permutation).transpose()?;
            let c = compare_outputs(&a.a, &a.b, perm.as_ref())?;
            println!("vertices            {}", c.num_vertices);
            println!("dim                 {}", c.dim);
            println!("max_abs_error       {:.6e}", c.max_abs_error);
            println!("mean_max_abs_error  {:.6e}", c.mean_max_abs_error);
            println!("mean_relative_error {:.6e}", c.mean_relative_error);
            println!("argmax_mismatches   {}", c.argmax_mismatches);
            if !c.within(a.tol) {
                println!("FAIL (tolerance {:e})", a.tol);
                return Ok(ExitCode::FAILURE);
            }
            println!("OK (tolerance {:e})", a.tol);
        }
        Command::Reorder(a) => {
            let ordering = Ordering::parse(&a.ordering, a.seed)?;
            let s = reorder_dataset(
                &a.graph,
                ordering,
                a.partitions,
                a.budget,
                &a.out,
                io_mode(a.no_direct_io),
            )?;
            println!(
                "mean span {:.1} -> {:.1} (p99 {} -> {})",
                s.before.mean, s.after.mean, s.before.p99, s.after.p99
            );
            println!("relabeled graph written to {}", s.out.display());
        }
        Command::Bench(a) => {
            let scenario = AblationScenario::load(&a.scenario)?;
            let scratch = a.out.with_extension("work");
            let work = a.work.clone().unwrap_or_else(|| scratch.clone());
            let result = run_ablation(&scenario, &work);
            if a.work.is_none() {
                let _ = std::fs::remove_dir_all(&scratch);
            }
            let result = result?;
            let csv = result.to_csv();
            std::fs::write(&a.out, &csv).map_err(|e| Error::Config(format!("{}: {e}", a.out.display())))?;
            print!("{csv}");
        }
        Command::Ingest(a) => {
            let s = ingest_edge_list(&a.edges, a.num_vertices, &a.out)?;
            println!(
                "{} vertices, {} edges, max in-degree {}, {} self-loops",
                s.num_vertices, s.num_edges, s.max_in_degree, s.self_loops
            );
            if let Some(dim) = a.feature_dim {
                let spec = SyntheticSpec::new(GraphKind::Uniform, a.num_vertices, 0, dim, a.seed);
                write_dense_matrix_set(
                    &a.out.join(FEATURES_DIR),
                    RowsRef::F32(&spec.features()),
                    a.num_vertices,
                    dim,
                    a.partitions,
                    IoMode::Direct,
                )?;
            }
        }
        Command::Generate(a) => {
            let spec = SyntheticSpec {
                partitions: a.partitions,
                dtype: a.dtype,
                ..SyntheticSpec::new(a.kind, a.vertices, a.avg_degree, a.feature_dim, a.seed)
            };
            let g = generate_synthetic(&spec, &a.out)?;
            println!(
                "{} vertices, {} edges, max in-degree {}",
                g.num_vertices(),
                g.num_edges(),
                g.max_in_degree()
            );
        }
        Command::InitWeights(a) => {
            if a.dims.len() < 2 {
                return Err(Error::Config("--dims needs at least input,output".into()));
            }
            let mut w = ModelWeights::random(a.model, &a.dims, a.seed);
            w.gin_epsilon = a.gin_eps;
            write_weights(&w, &a.out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
