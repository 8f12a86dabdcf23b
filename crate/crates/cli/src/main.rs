use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cmamba_core::config::ExperimentConfig;
use cmamba_core::experiment::{self, AblationAxis};
use cmamba_core::Error;

/// Default root for run directories when neither `--output` nor
/// `output_dir` is given.
const OUTPUT_ROOT_ENV: &str = "CMAMBA_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "cmamba", version, about = "Channel-aware state space forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file with flat `key = value` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value`, applied after the file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--override seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write report, checkpoint and predictions.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split of its dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Use this file instead of the dataset recorded in the checkpoint.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Also write the test predictions here.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Train every combination of the chosen axes with one seed.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated subset of: mamba, gdd, mixup.
        #[arg(long, value_delimiter = ',', default_value = "mamba")]
        axes: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print forward-pass FLOPs and the GDD-MLP increment.
    Flops {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 64)]
        batch: u64,
    },
    /// Rolling forecasts over every look-back window of a CSV file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Steps to emit; at most the trained horizon.
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
}

fn output_dir(cfg: &ExperimentConfig, explicit: Option<&Path>, kind: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{kind}_{}_seed{}", cfg.dataset_name(), cfg.seed))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { cfg, output } => {
            let cfg = cfg.resolve()?;
            let dir = output_dir(&cfg, output.as_deref(), "train");
            let out = experiment::run_train(&cfg, &dir)?;
            let r = &out.report;
            println!("best_epoch: {} (val loss {:.6})", r.best_epoch, r.best_val_loss);
            match r.test {
                Some((mse, mae)) => println!("test MSE: {mse:.6}  MAE: {mae:.6}"),
                None => println!("test split empty; no test metrics"),
            }
            println!("artifacts: {}", out.output_dir.display());
        }
        Command::Eval {
            checkpoint,
            dataset,
            predictions,
        } => {
            let (mse, mae) = experiment::run_eval(&checkpoint, dataset.as_deref(), predictions.as_deref())?;
            println!("test MSE: {mse:.6}  MAE: {mae:.6}");
        }
        Command::Ablate { cfg, axes, output } => {
            let cfg = cfg.resolve()?;
            let axes = axes.iter().map(|a| AblationAxis::parse(a)).collect::<Result<Vec<_>, _>>()?;
            let dir = output_dir(&cfg, output.as_deref(), "ablate");
            let rows = experiment::run_ablate(&cfg, &axes, &dir)?;
            print!("{}", experiment::ablation_csv(&rows));
            println!("written: {}", dir.join(experiment::ABLATION_FILE).display());
        }
        Command::Flops { cfg, batch } => {
            let cfg = cfg.resolve()?;
            let r = experiment::run_flops(&cfg, batch)?;
            println!("total FLOPs: {}", r.total);
            println!("GDD-MLP FLOPs: {}", r.gdd_mlp_part);
            println!("GDD-MLP increment: {:.4}%", 100.0 * r.increment_ratio());
        }
        Command::Predict {
            checkpoint,
            input,
            horizon,
            output,
        } => {
            let n = experiment::run_predict(&checkpoint, &input, horizon, &output)?;
            println!("{n} forecasts written to {}", output.display());
        }
    }
    Ok(())
}

/// 2 for problems with the user's input, 1 for failures during a run.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse { .. } | Error::File { .. } | Error::Data(_) | Error::Checkpoint(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
