//! `fast-stg` command-line interface.
//!
//! Subcommands: train | predict | eval | fidelity | bench | synth.
//! Common flags: --config, --set KEY=VALUE, --seed, --out, --data,
//! --threads. The FAST_STG_LOG environment variable (error|info|debug)
//! controls verbosity. Configuration and usage errors exit with code 2,
//! runtime failures with 1.

use clap::{Parser, Subcommand};
use fast_stg::cli::{
    cmd_bench, cmd_eval, cmd_fidelity, cmd_predict, cmd_synth, cmd_train, parse_override,
    BenchSpec, RunConfig,
};
use fast_stg::data::{SplitKind, SynthConfig};
use fast_stg::{Error, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "fast-stg", version, about = "Long-horizon forecasting over large node sets")]
struct Cli {
    /// Key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Dataset path (shorthand for --set data.path=...).
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Worker threads. This build computes single-threaded; values other
    /// than 1 only log a warning.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write checkpoint.fstc + history.csv.
    Train,
    /// Forecast the horizon following a window that ends at --anchor.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Absolute index of the last observed step.
        #[arg(long)]
        anchor: usize,
        /// Output CSV (default: <out>/forecast.csv).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a chronological split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// train | val | test
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Reconstruction-fidelity table over checkpoints.
    Fidelity {
        /// Comma-separated checkpoint paths (typically one per agent count).
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Forward/train-step scaling benchmark.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096")]
        nodes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "48")]
        horizons: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "32")]
        agents: Vec<usize>,
        /// Timed repetitions per row (median reported).
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Generate a synthetic dataset file.
    Synth {
        #[arg(long, default_value_t = 16)]
        nodes: usize,
        #[arg(long, default_value_t = 14)]
        days: usize,
        /// Sampling granularity in minutes.
        #[arg(long, default_value_t = 15)]
        granularity: usize,
        /// Gaussian noise standard deviation.
        #[arg(long)]
        noise: Option<f64>,
        /// Day-of-week amplitude modulation strength.
        #[arg(long)]
        weekly: Option<f64>,
        /// Destination dataset file.
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t != 1 {
            log::warn!("this build computes single-threaded; --threads {t} has no effect");
        }
    }
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(data) = &cli.data {
        overrides.push(("data.path".into(), data.display().to_string()));
    }
    for s in &cli.set {
        overrides.push(parse_override(s)?);
    }
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(out) = &cli.out {
        overrides.push(("out".into(), out.display().to_string()));
    }
    let rc = RunConfig::from_sources(cli.config.as_deref(), &overrides)?;

    match cli.cmd {
        Cmd::Train => cmd_train(&rc),
        Cmd::Predict { checkpoint, anchor, output } => {
            cmd_predict(&rc, &checkpoint, anchor, output.as_deref())
        }
        Cmd::Eval { checkpoint, split } => {
            let split: SplitKind = split.parse()?;
            cmd_eval(&rc, &checkpoint, split)
        }
        Cmd::Fidelity { checkpoints } => cmd_fidelity(&rc, &checkpoints),
        Cmd::Bench { nodes, horizons, agents, reps } => {
            let spec =
                BenchSpec { nodes, horizons, agents, reps, seed: rc.seed, ..BenchSpec::default() };
            cmd_bench(&rc, &spec)
        }
        Cmd::Synth { nodes, days, granularity, noise, weekly, output } => {
            let mut synth = SynthConfig::new(nodes, days, granularity, rc.seed);
            if let Some(n) = noise {
                synth.noise_std = n;
            }
            if let Some(w) = weekly {
                synth.weekly_amp = w;
            }
            cmd_synth(&synth, &output)
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FAST_STG_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Config(_) | Error::Contract(_) => 2,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}
