//! Runs a full experiment protocol from a TOML config and prints its metric
//! table. All artifacts land in the output directory.
//!
//! ```text
//! cargo run --release --example run_protocol -- configs/intra.toml [SEED] [OUT_DIR]
//! ```

use std::path::PathBuf;

use recapture::experiment::{output_dir, run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = args.next().map(PathBuf::from);
    let mut cfg = match &config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse()?;
    }
    let out = output_dir(&cfg, args.next().map(PathBuf::from).as_deref());
    println!("protocol {} with seed {} into {}", cfg.protocol, cfg.seed, out.display());

    let summary = run_experiment(&cfg, &out)?;
    println!("best epoch {}", summary.best_epoch);
    for (k, v) in &summary.counts {
        println!("  {k}: {v}");
    }
    for r in &summary.metrics {
        println!("{:<44} {:<14} {:<20} {:.6}", r.train_set, r.metric, r.operating_point, r.value);
    }
    Ok(())
}
