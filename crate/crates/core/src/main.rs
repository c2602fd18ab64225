use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use oneshot_unlearn::harness::ablation::{run_ablations, AxisSelection};
use oneshot_unlearn::harness::pipeline::{self, SeedStatus, Stage};
use oneshot_unlearn::harness::ExperimentConfig;

#[derive(Parser)]
#[command(version, about = "Identity unlearning benchmark with a meta-learned unlearning loss")]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restrict unlearning and evaluation to one method.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Identities per unlearning request, overriding the config.
    #[arg(long = "n-s", global = true)]
    n_s: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenerateData,
    /// Split, carve the request and train the original model.
    Pretrain,
    /// Train the reference model on the retain set.
    Retrain,
    /// Meta-train the unlearning loss.
    TrainMetaloss,
    /// Apply MetaUnlearn and the baselines.
    Unlearn,
    /// Evaluate every method and write per-seed reports.
    Evaluate,
    /// Run the ablation axes.
    Ablate {
        /// Only this axis: aux-loss, inputs or request-size.
        #[arg(long)]
        axis: Option<String>,
    },
    /// Rebuild the cross-seed summary from per-seed reports.
    Report,
    /// Full pipeline for every seed followed by the summary.
    RunAll,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(n_s) = cli.n_s {
        cfg.n_s = n_s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_stage(cfg: &ExperimentConfig, until: Stage, method: Option<&str>) -> anyhow::Result<bool> {
    let (dataset, _) = pipeline::dataset_stage(cfg)?;
    let mut ok = true;
    for &seed in &cfg.seeds {
        let (manifest, _) = pipeline::run_single_seed(cfg, &dataset, seed, until, method);
        match manifest.status {
            SeedStatus::Completed => log::info!("seed {seed}: done"),
            SeedStatus::Failed { stage, error } => {
                eprintln!("seed {seed} failed at {stage}: {error}");
                ok = false;
            }
        }
    }
    Ok(ok)
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let cfg = load_config(&cli)?;
    let method = cli.method.as_deref();
    let ok = match &cli.command {
        Command::GenerateData => {
            let (ds, record) = pipeline::dataset_stage(&cfg)?;
            println!(
                "{} samples, {} identities -> {}",
                ds.len(),
                ds.identities().len(),
                cfg.out_dir.join(record.artifact).display()
            );
            true
        }
        Command::Pretrain => run_stage(&cfg, Stage::Pretrain, method)?,
        Command::Retrain => run_stage(&cfg, Stage::Retrain, method)?,
        Command::TrainMetaloss => run_stage(&cfg, Stage::MetaLoss, method)?,
        Command::Unlearn => run_stage(&cfg, Stage::Unlearn, method)?,
        Command::Evaluate => run_stage(&cfg, Stage::Evaluate, method)?,
        Command::Ablate { axis } => {
            let axes = match axis.as_deref() {
                None => AxisSelection::ALL,
                Some("aux-loss") => AxisSelection { aux: true, inputs: false, sizes: false },
                Some("inputs") => AxisSelection { aux: false, inputs: true, sizes: false },
                Some("request-size") => AxisSelection { aux: false, inputs: false, sizes: true },
                Some(other) => bail!("unknown axis {other:?}"),
            };
            let report = run_ablations(&cfg, axes)?;
            println!("ablation tables written to {}", cfg.out_dir.join("ablation").display());
            report.failures.is_empty()
        }
        Command::Report => {
            let summary = pipeline::rebuild_summary(&cfg)?;
            print!("{}", summary.to_markdown());
            summary.failed_seeds() == 0
        }
        Command::RunAll => {
            let manifest = pipeline::run_pipeline(&cfg)?;
            let md = std::fs::read_to_string(cfg.out_dir.join(&manifest.summary_md)).context("reading summary")?;
            print!("{md}");
            manifest.all_completed()
        }
    };
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
