use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use insdvl_cli::config::DEFAULT_TOML;
use insdvl_cli::{cmd_benchmark, cmd_build_dataset, cmd_evaluate, cmd_simulate, cmd_train, replay, Config, Invocation, RunManifest};

#[derive(Parser)]
#[command(name = "insdvl", version, about = "INS/DVL navigation with learned process noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Mission truth, IMU and DVL streams.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Labeled noise windows split into train.csv and test.csv.
    BuildDataset {
        #[command(flatten)]
        common: Common,
        /// Fraction of each (trajectory, level) group used for training.
        #[arg(long)]
        train_ratio: Option<f64>,
    },
    /// Train a regressor.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory with train.csv and test.csv.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_parser = ["baseline", "detrend"])]
        variant: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from saved weights.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Per-noise-level accuracy of a weights file on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Monte-Carlo policy comparison.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Policy names, comma separated (e.g. constant-true,adaptive-5).
        #[arg(long, value_delimiter = ',')]
        policy: Option<Vec<String>>,
        /// Seconds between learned Q installs (`inf` never retunes).
        #[arg(long)]
        tuning_rate: Option<f64>,
        #[arg(long)]
        mc_runs: Option<usize>,
        /// Weights files for the learned policies.
        #[arg(long)]
        weights: Vec<PathBuf>,
        #[arg(long)]
        emit_traces: bool,
    },
    /// Re-run a command from its manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the annotated default configuration.
    Config,
}

fn invocation(common: &Common, edit: impl FnOnce(&mut Config)) -> Result<Invocation> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    edit(&mut config);
    config.validate()?;
    Ok(Invocation { config, config_path: common.config.clone(), out: common.out.clone() })
}

fn run(cli: Cli) -> Result<()> {
    let manifest = match cli.command {
        Command::Simulate { common } => cmd_simulate(&invocation(&common, |_| {})?)?,
        Command::BuildDataset { common, train_ratio } => cmd_build_dataset(&invocation(&common, |c| {
            if let Some(r) = train_ratio {
                c.dataset.train_ratio = r;
            }
        })?)?,
        Command::Train { common, dataset, variant, epochs, resume } => cmd_train(&invocation(&common, |c| {
            c.training.dataset = dataset.or(c.training.dataset.take());
            c.training.resume = resume.or(c.training.resume.take());
            if let Some(v) = variant {
                c.training.variant = v;
            }
            if let Some(e) = epochs {
                c.training.epochs = e;
            }
        })?)?,
        Command::Evaluate { common, dataset, weights } => {
            let inv = invocation(&common, |c| c.training.dataset = dataset.or(c.training.dataset.take()))?;
            cmd_evaluate(&inv, &weights)?
        }
        Command::Benchmark { common, policy, tuning_rate, mc_runs, weights, emit_traces } => {
            cmd_benchmark(&invocation(&common, |c| {
                let b = &mut c.benchmark;
                if let Some(p) = policy {
                    b.policies = p;
                }
                if let Some(t) = tuning_rate {
                    b.tuning_rate = t;
                }
                if let Some(n) = mc_runs {
                    b.mc_runs = n;
                }
                if !weights.is_empty() {
                    b.weights = weights;
                }
                b.emit_traces |= emit_traces;
            })?)?
        }
        Command::Replay { manifest, out } => replay(&RunManifest::load(&manifest)?, &out)?,
        Command::Config => {
            print!("{DEFAULT_TOML}");
            return Ok(());
        }
    };
    for (name, hash) in &manifest.artifacts {
        println!("{hash}  {}", manifest.out_dir.join(name).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
