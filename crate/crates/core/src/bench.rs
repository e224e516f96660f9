//! Ablation driver and a gather-execution read simulator.
//!
//! A scenario fixes a synthetic graph, a model and every pipeline knob but
//! one, then runs inference once per value of the studied knob. All runs
//! must agree on their outputs; the harness reports how the memory and I/O
//! counters move.
//!
//! Scenario files are `key = value` lines; `#` starts a comment:
//!
//! ```text
//! generator    = preferential_attachment   # or uniform
//! vertices     = 100000
//! avg_degree   = 10
//! feature_dim  = 64
//! seed         = 7
//! model        = gcn                       # gcn | sage | gin
//! dims         = 32,8                      # hidden..., output
//! knob         = eviction                  # eviction | ordering | hot_budget
//! values       = minpend,lru,rnd
//! hot_fraction = 0.05                      # hot slots as a fraction of |V|
//! ordering     = og                        # og | rnd | at
//! policy       = minpend
//! repetitions  = 3                         # seeds for randomized values
//! ```
//!
//! Optional keys: `partitions`, `chunk_bytes`, `queue_capacity`,
//! `tolerance`, `io` (`direct` | `buffered`).

use std::collections::BTreeMap;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use lru::LruCache;

use crate::dio::IoMode;
use crate::error::{Error, IoContext, Result};
use crate::memory::EvictionPolicyKind;
use crate::orchestrator::HotBudget;
use crate::reorder::{reorder_dataset, Ordering, Relabeling};
use crate::runtime::{compare, run_inference, DenseOutput, PipelineConfig, RunReport};
use crate::storage::{generate_synthetic, Dtype, GraphCsr, GraphKind, ModelKind, ModelWeights, SyntheticSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum Knob {
    Eviction(Vec<String>),
    Ordering(Vec<String>),
    /// Fractions of |V| hot slots.
    HotBudget(Vec<f64>),
}

impl Knob {
    pub fn name(&self) -> &'static str {
        match self {
            Knob::Eviction(_) => "eviction",
            Knob::Ordering(_) => "ordering",
            Knob::HotBudget(_) => "hot_budget",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationScenario {
    pub graph: SyntheticSpec,
    pub model: ModelKind,
    /// Layer output widths; the input width is the feature dim.
    pub dims: Vec<usize>,
    pub weight_seed: u64,
    pub knob: Knob,
    pub hot_fraction: f64,
    pub ordering: String,
    pub policy: String,
    pub repetitions: u64,
    pub partitions: usize,
    pub chunk_bytes: u64,
    pub queue_capacity: usize,
    pub tolerance: f64,
    pub io_mode: IoMode,
}

impl AblationScenario {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Scenario(format!("line {}: expected key = value", i + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Scenario(format!("duplicate key {:?}", k.trim())));
            }
        }
        let take = |kv: &mut BTreeMap<String, String>, k: &str| kv.remove(k);
        fn num<T: std::str::FromStr>(key: &str, v: Option<String>, default: Option<T>) -> Result<T> {
            match v {
                Some(s) => s
                    .parse()
                    .map_err(|_| Error::Scenario(format!("{key}: cannot parse {s:?}"))),
                None => default.ok_or_else(|| Error::Scenario(format!("missing key {key:?}"))),
            }
        }
        let generator: GraphKind = take(&mut kv, "generator")
            .unwrap_or_else(|| "preferential_attachment".into())
            .parse()
            .map_err(|e: Error| Error::Scenario(e.to_string()))?;
        let vertices = num("vertices", take(&mut kv, "vertices"), None)?;
        let avg_degree = num("avg_degree", take(&mut kv, "avg_degree"), Some(10))?;
        let feature_dim = num("feature_dim", take(&mut kv, "feature_dim"), Some(64))?;
        let seed = num("seed", take(&mut kv, "seed"), Some(0))?;
        let model: ModelKind = take(&mut kv, "model")
            .unwrap_or_else(|| "gcn".into())
            .parse()
            .map_err(|e: Error| Error::Scenario(e.to_string()))?;
        let dims = take(&mut kv, "dims")
            .unwrap_or_else(|| "32,8".into())
            .split(',')
            .map(|s| num("dims", Some(s.trim().to_string()), None))
            .collect::<Result<Vec<usize>>>()?;
        let knob_name = take(&mut kv, "knob").ok_or_else(|| Error::Scenario("missing key \"knob\"".into()))?;
        let values: Vec<String> = take(&mut kv, "values")
            .ok_or_else(|| Error::Scenario("missing key \"values\"".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Error::Scenario("empty value grid".into()));
        }
        let knob = match knob_name.as_str() {
            "eviction" => Knob::Eviction(values),
            "ordering" => Knob::Ordering(values),
            "hot_budget" => Knob::HotBudget(
                values
                    .iter()
                    .map(|v| num("values", Some(v.clone()), None))
                    .collect::<Result<_>>()?,
            ),
            other => return Err(Error::Scenario(format!("unknown knob {other:?}"))),
        };
        let io_mode = match take(&mut kv, "io").as_deref() {
            None | Some("direct") => IoMode::Direct,
            Some("buffered") => IoMode::Buffered,
            Some(other) => return Err(Error::Scenario(format!("unknown io mode {other:?}"))),
        };
        let scenario = Self {
            graph: SyntheticSpec::new(generator, vertices, avg_degree, feature_dim, seed),
            model,
            dims,
            weight_seed: num("weight_seed", take(&mut kv, "weight_seed"), Some(seed))?,
            knob,
            hot_fraction: num("hot_fraction", take(&mut kv, "hot_fraction"), Some(0.05))?,
            ordering: take(&mut kv, "ordering").unwrap_or_else(|| "og".into()),
            policy: take(&mut kv, "policy").unwrap_or_else(|| "minpend".into()),
            repetitions: num("repetitions", take(&mut kv, "repetitions"), Some(1))?,
            partitions: num("partitions", take(&mut kv, "partitions"), Some(8))?,
            chunk_bytes: num("chunk_bytes", take(&mut kv, "chunk_bytes"), Some(8 << 20))?,
            queue_capacity: num("queue_capacity", take(&mut kv, "queue_capacity"), Some(20))?,
            tolerance: num("tolerance", take(&mut kv, "tolerance"), Some(1e-4))?,
            io_mode,
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Scenario(format!("unknown key {k:?}")));
        }
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).at(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.graph.num_vertices == 0 || self.graph.feature_dim == 0 {
            return Err(Error::Scenario("graph must have vertices and features".into()));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::Scenario("dims must be non-empty and positive".into()));
        }
        if !(self.hot_fraction > 0.0 && self.hot_fraction <= 1.0) {
            return Err(Error::Scenario("hot_fraction must be in (0, 1]".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Scenario("repetitions must be >= 1".into()));
        }
        if let Knob::HotBudget(v) = &self.knob {
            if v.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
                return Err(Error::Scenario("hot budget fractions must be in (0, 1]".into()));
            }
        }
        Ordering::parse(&self.ordering, 0).map_err(|e| Error::Scenario(e.to_string()))?;
        EvictionPolicyKind::parse(&self.policy, 0).map_err(|e| Error::Scenario(e.to_string()))?;
        Ok(())
    }

    fn weights(&self) -> ModelWeights {
        let mut dims = vec![self.graph.feature_dim];
        dims.extend_from_slice(&self.dims);
        ModelWeights::random(self.model, &dims, self.weight_seed)
    }

    fn slots(&self, fraction: f64) -> usize {
        ((self.graph.num_vertices as f64 * fraction).ceil() as usize).max(1)
    }
}

/// One ablation run.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub value: String,
    pub repetition: u64,
    pub wall_seconds: f64,
    pub reloads: u64,
    pub unique_reloads: u64,
    pub evictions: u64,
    pub mean_span: f64,
    pub mean_reload_pct: f64,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

impl AblationRow {
    fn from_report(value: String, repetition: u64, r: &RunReport) -> Self {
        let layers = r.layers.len().max(1) as f64;
        Self {
            value,
            repetition,
            wall_seconds: r.wall_seconds,
            reloads: r.total_reloads(),
            unique_reloads: r.total_unique_reloads(),
            evictions: r.total_evictions(),
            mean_span: r.layers.iter().map(|m| m.mean_span).sum::<f64>() / layers,
            mean_reload_pct: r.layers.iter().map(|m| m.mean_reload_pct).sum::<f64>() / layers,
            bytes_read: r.total_bytes_read(),
            bytes_written: r.total_bytes_written(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub knob: &'static str,
    pub rows: Vec<AblationRow>,
    /// Largest max-abs difference from the first run's output.
    pub max_output_deviation: f64,
}

impl AblationResult {
    pub const CSV_HEADER: &'static str = "knob,value,repetition,wall_seconds,reloads,unique_reloads,evictions,mean_span,mean_reload_pct,bytes_read,bytes_written";

    /// Rows for one knob value.
    pub fn rows_for<'a>(&'a self, value: &'a str) -> impl Iterator<Item = &'a AblationRow> + 'a {
        self.rows.iter().filter(move |r| r.value == value)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str("# reloads, spans and reload % are summed/averaged over layers\n");
        s.push_str("# mean_reload_pct = mean over chunks of 100 * |reloaded destinations| / |destinations touched|\n");
        s.push_str(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.4},{},{},{},{:.3},{:.4},{},{}\n",
                self.knob,
                r.value,
                r.repetition,
                r.wall_seconds,
                r.reloads,
                r.unique_reloads,
                r.evictions,
                r.mean_span,
                r.mean_reload_pct,
                r.bytes_read,
                r.bytes_written
            ));
        }
        s
    }
}

fn is_seeded(value: &str) -> bool {
    matches!(value, "rnd" | "random")
}

/// Runs the scenario inside `work` and cross-checks every output against
/// the first run.
pub fn run_ablation(scenario: &AblationScenario, work: &Path) -> Result<AblationResult> {
    let base = work.join("graph");
    generate_synthetic(&SyntheticSpec { dtype: Dtype::F32, ..scenario.graph }, &base)?;
    let weights = scenario.weights();
    let base_config = PipelineConfig {
        chunk_budget: scenario.chunk_bytes,
        partitions: scenario.partitions,
        queue_capacity: scenario.queue_capacity,
        io_mode: scenario.io_mode,
        hot_budget: HotBudget::Slots(scenario.slots(scenario.hot_fraction)),
        policy: EvictionPolicyKind::parse(&scenario.policy, 0)?,
        ..PipelineConfig::default()
    };

    // (label, repetition, dataset dir, relabeling, config)
    let mut runs: Vec<(String, u64, PathBuf, Option<Relabeling>, PipelineConfig)> = Vec::new();
    let default_ordering = Ordering::parse(&scenario.ordering, scenario.graph.seed)?;
    let (knob_values, seeded_reps): (Vec<String>, bool) = match &scenario.knob {
        Knob::Eviction(v) | Knob::Ordering(v) => (v.clone(), true),
        Knob::HotBudget(v) => (v.iter().map(|f| f.to_string()).collect(), false),
    };
    let dataset_for = |ordering: Ordering, tag: &str| -> Result<(PathBuf, Option<Relabeling>)> {
        if ordering == Ordering::Original {
            return Ok((base.clone(), None));
        }
        let dir = work.join(format!("graph_{tag}"));
        let s = reorder_dataset(
            &base,
            ordering,
            scenario.partitions,
            scenario.chunk_bytes.max(1 << 20),
            &dir,
            scenario.io_mode,
        )?;
        Ok((dir, Some(s.map)))
    };
    for value in &knob_values {
        let reps = if seeded_reps && is_seeded(value) {
            scenario.repetitions
        } else {
            1
        };
        for rep in 0..reps {
            let mut config = base_config.clone();
            let (dir, map) = match &scenario.knob {
                Knob::Ordering(_) => {
                    let o = Ordering::parse(value, rep)?;
                    dataset_for(o, &format!("{value}_{rep}"))?
                }
                _ => dataset_for(default_ordering, &scenario.ordering)?,
            };
            match &scenario.knob {
                Knob::Eviction(_) => config.policy = EvictionPolicyKind::parse(value, rep)?,
                Knob::HotBudget(_) => {
                    config.hot_budget = HotBudget::Slots(scenario.slots(value.parse().unwrap()))
                }
                Knob::Ordering(_) => {}
            }
            runs.push((value.clone(), rep, dir, map, config));
        }
    }

    let mut rows = Vec::new();
    let mut reference: Option<DenseOutput> = None;
    let mut max_dev = 0f64;
    for (i, (value, rep, dir, map, config)) in runs.into_iter().enumerate() {
        let out = work.join(format!("run_{i}"));
        let report = run_inference(&dir, &weights, &config, &out)?;
        let mut output = DenseOutput::load(&report.output)?;
        if let Some(map) = &map {
            output = output.unpermute(map);
        }
        match &reference {
            None => reference = Some(output),
            Some(first) => {
                let c = compare(first, &output)?;
                max_dev = max_dev.max(c.max_abs_error);
                if !c.within(scenario.tolerance) {
                    return Err(Error::KnobSensitive(format!(
                        "{}={value} (rep {rep}): max abs {:.3e}, {} argmax mismatches",
                        scenario.knob.name(),
                        c.max_abs_error,
                        c.argmax_mismatches
                    )));
                }
            }
        }
        rows.push(AblationRow::from_report(value, rep, &report));
        let _ = fs::remove_dir_all(&out);
    }
    Ok(AblationResult {
        knob: scenario.knob.name(),
        rows,
        max_output_deviation: max_dev,
    })
}

/// Feature traffic of a simulated gather execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GatherEstimate {
    pub bytes_read: u64,
    pub block_fetches: u64,
    pub cache_hits: u64,
    /// Row requests issued (one per edge).
    pub row_requests: u64,
}

/// Replays destination-major in-neighbor fetches against a dense,
/// ID-ordered feature file read in `block_bytes` blocks through an LRU
/// cache of `cache_bytes`. Models feature I/O only, not topology.
pub fn simulate_gather_reads(
    graph: &GraphCsr,
    dim: usize,
    dtype: Dtype,
    block_bytes: u64,
    cache_bytes: u64,
) -> GatherEstimate {
    let row_bytes = dtype.row_bytes(dim);
    let block_bytes = block_bytes.max(1);
    let mut cache = NonZeroUsize::new((cache_bytes / block_bytes) as usize).map(LruCache::new);
    let mut est = GatherEstimate::default();
    // transpose once: sources grouped by destination
    let n = graph.num_vertices() as usize;
    let mut start = vec![0usize; n + 1];
    for &v in &graph.neighbors {
        start[v as usize + 1] += 1;
    }
    for i in 0..n {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut sources = vec![0u64; graph.neighbors.len()];
    for u in 0..graph.num_vertices() {
        for &v in graph.out_neighbors(u) {
            sources[fill[v as usize]] = u;
            fill[v as usize] += 1;
        }
    }
    for v in 0..n {
        for &u in &sources[start[v]..start[v + 1]] {
            est.row_requests += 1;
            let first = u * row_bytes / block_bytes;
            let last = ((u + 1) * row_bytes - 1) / block_bytes;
            for b in first..=last {
                let hit = match &mut cache {
                    Some(c) => c.put(b, ()).is_some(),
                    None => false,
                };
                if hit {
                    est.cache_hits += 1;
                } else {
                    est.block_fetches += 1;
                    est.bytes_read += block_bytes;
                }
            }
        }
    }
    est
}
