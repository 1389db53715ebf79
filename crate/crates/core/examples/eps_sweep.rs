//! Loads an experiment config, runs it, and prints the fitted
//! rounds ≈ c1 + c2·ln(1/ε) per graph.

use distlap::experiments::{emit_report, run_experiment, write_outputs, ExperimentConfig};

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/configs/eps_sweep.json").into());
    let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let rows = run_experiment(&cfg).unwrap();
    let report = emit_report(&rows);
    for f in &report.eps_fits {
        println!(
            "{} n={} {}: rounds = {:.0} + {:.1}·ln(1/eps), R² = {:.3}",
            f.family, f.n, f.model, f.fit.intercept, f.fit.slope, f.fit.r2
        );
    }
    let out = std::env::temp_dir().join(&cfg.name);
    write_outputs(&out, &rows, &report).unwrap();
    println!("wrote {}", out.display());
}
