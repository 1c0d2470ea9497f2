use std::path::{Path, PathBuf};
use std::process::ExitCode;

use channelpage_cli::{commands, exit, CtrVariant, Error, ExperimentConfig, Method, Overrides};
use clap::{Args, Parser, Subcommand};

/// Diversity-aware allocation of items to homepage channels, end to end on
/// a simulated marketplace.
#[derive(Parser)]
#[command(name = "channelpage", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config, TOML or JSON.
    #[arg(long, env = "CHANNELPAGE_CONFIG")]
    config: Option<PathBuf>,
    /// Top-level seed every random stream derives from.
    #[arg(long, env = "CHANNELPAGE_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "CHANNELPAGE_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct AllocationFlags {
    /// Cutoff of the per-channel precision metric.
    #[arg(long, env = "CHANNELPAGE_K")]
    k: Option<usize>,
    /// Diversity penalties for the sweep, comma separated.
    #[arg(long, env = "CHANNELPAGE_U_SWEEP", value_delimiter = ',')]
    u_sweep: Option<Vec<f64>>,
    /// Diversity penalty of the allocation.
    #[arg(long, env = "CHANNELPAGE_U")]
    u: Option<f64>,
    /// Per-channel bound on items of one category.
    #[arg(long, env = "CHANNELPAGE_B")]
    b: Option<u32>,
    /// Extra items per channel handed to the re-ranker.
    #[arg(long, env = "CHANNELPAGE_OVERFLOW_H")]
    overflow_h: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a world and its randomly logged click history.
    Generate {
        /// Experiment config, TOML or JSON.
        #[arg(long, env = "CHANNELPAGE_CONFIG")]
        config: PathBuf,
        /// Top-level seed every random stream derives from.
        #[arg(long, env = "CHANNELPAGE_SEED")]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, env = "CHANNELPAGE_OUT")]
        out: PathBuf,
    },
    /// Estimate per-category repetition thresholds from click logs.
    EstimateThresholds {
        #[command(flatten)]
        common: Common,
        /// Directory written by `generate`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a click model.
    TrainCtr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// full or channel-<i>.
        #[arg(long, default_value = "full")]
        variant: String,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Total epochs, overriding the config.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train the attention re-ranker on top of a click model.
    TrainRerank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint of the channel-aware click model.
        #[arg(long)]
        ctr: PathBuf,
    },
    /// Allocate candidates to channels for simulated requests.
    Allocate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: AllocationFlags,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ctr: PathBuf,
        /// Output of `estimate-thresholds`.
        #[arg(long)]
        thresholds: PathBuf,
        #[arg(long, default_value_t = 100)]
        requests: usize,
    },
    /// Compare methods on simulated requests.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: AllocationFlags,
        /// Methods to run, comma separated; all by default.
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
        /// Directory of trained models; trained from scratch when absent.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Aggregate per-request dumps into a report.
    Report {
        /// `requests.jsonl` written by `evaluate`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "CHANNELPAGE_K", default_value_t = 1)]
        k: usize,
    },
}

fn load_config(common: &Common, flags: Option<&AllocationFlags>) -> Result<ExperimentConfig, Error> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut o = Overrides {
        seed: common.seed,
        ..Overrides::default()
    };
    if let Some(f) = flags {
        o.k = f.k;
        o.u_sweep.clone_from(&f.u_sweep);
        o.diversity_penalty = f.u;
        o.per_channel_bound = f.b;
        o.overflow = f.overflow_h;
    }
    config.apply(&o)?;
    Ok(config)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Generate { config, seed, out } => {
            let common = Common {
                config: Some(config),
                seed,
                out,
            };
            commands::generate(&load_config(&common, None)?, &common.out)
        }
        Command::EstimateThresholds { common, data } => {
            commands::estimate(&load_config(&common, None)?, &data, &common.out)
        }
        Command::TrainCtr {
            common,
            data,
            variant,
            resume,
            epochs,
        } => {
            let mut config = load_config(&common, None)?;
            if let Some(e) = epochs {
                config.ctr.epochs = e;
            }
            let variant: CtrVariant = variant.parse()?;
            commands::train_ctr_command(&config, &data, &common.out, &variant, resume.as_deref())
        }
        Command::TrainRerank { common, data, ctr } => {
            commands::train_rerank_command(&load_config(&common, None)?, &data, &ctr, &common.out)
        }
        Command::Allocate {
            common,
            flags,
            data,
            ctr,
            thresholds,
            requests,
        } => {
            let config = load_config(&common, Some(&flags))?;
            commands::allocate_command(&config, &data, &ctr, &thresholds, requests, &common.out)
        }
        Command::Evaluate {
            common,
            flags,
            method,
            models,
        } => {
            let config = load_config(&common, Some(&flags))?;
            let methods = if method.is_empty() {
                Method::ALL.to_vec()
            } else {
                method.iter().map(|m| m.parse()).collect::<Result<Vec<Method>, _>>()?
            };
            commands::evaluate_command(&config, &methods, models.as_deref(), &common.out)
        }
        Command::Report { input, out, k } => commands::report_command(Path::new(&input), k, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
