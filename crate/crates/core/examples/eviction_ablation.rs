//! Runs the eviction-policy ablation from a scenario file, or from a small
//! built-in scenario when none is given.
//!
//! Usage: `cargo run --release --example eviction_ablation [scenario.conf]`
//! (see `examples/scenarios/` for full-size scenarios).

use broadcast_gnn::bench::{run_ablation, AblationScenario};

const SMALL: &str = "
generator    = preferential_attachment
vertices     = 20000
avg_degree   = 10
feature_dim  = 32
seed         = 7
model        = gcn
dims         = 16,4
knob         = eviction
values       = minpend,lru,rnd
hot_fraction = 0.05
repetitions  = 3
";

fn main() -> broadcast_gnn::Result<()> {
    let scenario = match std::env::args().nth(1) {
        Some(path) => AblationScenario::load(path.as_ref())?,
        None => AblationScenario::parse(SMALL)?,
    };
    let work = tempfile::tempdir().expect("tempdir");
    let result = run_ablation(&scenario, work.path())?;
    print!("{}", result.to_csv());

    let mean = |value: &str| {
        let rows: Vec<_> = result.rows_for(value).collect();
        rows.iter().map(|r| r.reloads as f64).sum::<f64>() / rows.len().max(1) as f64
    };
    let minpend = mean("minpend");
    for other in ["lru", "rnd"] {
        let o = mean(other);
        if o > 0.0 {
            println!("minpend vs {other}: {:.1}% fewer reloads", 100.0 * (o - minpend) / o);
        }
    }
    Ok(())
}
