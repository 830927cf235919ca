use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use recapture::corpus::PatchFilterConfig;
use recapture::experiment::{self, artifacts, ExperimentConfig, ExperimentError};
use recapture::trainer;

#[derive(Parser)]
#[command(name = "recapture", version, about = "Recaptured document image detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML, or a summary.json from an earlier run).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpora under OUT/data.
    Synth(Common),
    /// Train on the source corpus; writes the checkpoint and history.
    Train(Common),
    /// Evaluate OUT/checkpoint; writes metrics, ROC points and embeddings.
    Evaluate(Common),
    /// Verify the evaluation images with OUT/checkpoint; writes verification.json.
    Verify(Common),
    /// Export per-image mean embeddings for a manifest.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory (defaults to OUT/checkpoint).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Run the full protocol.
    Run(Common),
    /// Print the default config as TOML.
    DefaultConfig,
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), ExperimentError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = experiment::output_dir(&cfg, common.out.as_deref());
    Ok((cfg, out))
}

fn execute(command: Command) -> Result<(), ExperimentError> {
    match command {
        Command::Synth(c) => {
            let (cfg, out) = load(&c)?;
            let corpora = experiment::synthesize(&cfg, &out)?;
            println!("source: {} images", corpora.source.manifest.len());
            if let Some(t) = corpora.target {
                println!("target: {} images", t.manifest.len());
            }
        }
        Command::Train(c) => {
            let (cfg, out) = load(&c)?;
            let cfg = cfg.resolved();
            let corpora = experiment::synthesize(&cfg, &out)?;
            let split = recapture::corpus::split_corpus(&corpora.source.manifest, &cfg.split_spec())?;
            let trained = experiment::train_source(&cfg, &split)?;
            let steps = trained.history.records.iter().map(|r| r.triplet_count.div_ceil(cfg.train.batch_size) as u64).sum();
            trainer::save_checkpoint(&trained.model, cfg.seed, steps, &out.join(artifacts::CHECKPOINT))?;
            trained.history.write_csv(&out.join(artifacts::HISTORY))?;
            print!("{}", trained.history.to_csv());
        }
        Command::Evaluate(c) => {
            let (cfg, out) = load(&c)?;
            let summary = experiment::evaluate_checkpoint(&cfg, &out)?;
            print_metrics(&summary);
        }
        Command::Verify(c) => {
            let (cfg, out) = load(&c)?;
            let records = experiment::verify_checkpoint(&cfg, &out)?;
            println!("{} decisions written to {}", records.len(), out.join(artifacts::VERIFICATION).display());
        }
        Command::ExportEmbeddings {
            common,
            checkpoint,
            manifest,
        } => {
            let (cfg, out) = load(&common)?;
            let checkpoint = checkpoint.unwrap_or_else(|| out.join(artifacts::CHECKPOINT));
            std::fs::create_dir_all(&out).map_err(|e| ExperimentError::io(&out, e))?;
            let path = out.join(artifacts::EMBEDDINGS);
            let filter: PatchFilterConfig = cfg.patches.filter;
            let report = experiment::export_embeddings(&checkpoint, &manifest, cfg.patches.eval_stride, &filter, &path)?;
            println!("{} rows, {} skipped (see {})", report.rows, report.skipped.len(), report.skip_log.display());
        }
        Command::Run(c) => {
            let (cfg, out) = load(&c)?;
            let summary = experiment::run_experiment(&cfg, &out)?;
            print_metrics(&summary);
        }
        Command::DefaultConfig => print!("{}", ExperimentConfig::default().to_toml()),
    }
    Ok(())
}

fn print_metrics(summary: &experiment::RunSummary) {
    for r in &summary.metrics {
        println!("{:<20} {:<26} {:<12} {:<28} {}", r.train_set, r.test_set, r.metric, r.operating_point, r.value);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
