//! `ude-grid`: generate signals, simulate ground truth, train the residual
//! network, and forecast, writing CSVs, plot scripts and a run manifest.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ude_grid::{InjectedResidual, TrainError, UdeError};

use crate::commands::Invocation;
use crate::config::{parse_injection, RunConfig};

const EXIT_USAGE: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "ude-grid", version, about = "Hybrid physics/neural battery modelling on a synthetic grid")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration (scenario, solver and training fields).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, env = "UDE_GRID_OUT", default_value = "out")]
    out: PathBuf,

    /// Seed for the network initialization (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Training iterations (default 300).
    #[arg(long, global = true)]
    iterations: Option<usize>,

    /// Adam learning rate (default 0.005).
    #[arg(long, global = true)]
    lr: Option<f64>,

    /// Simulation horizon in hours (command-specific default).
    #[arg(long, global = true)]
    horizon: Option<f64>,

    /// Trained checkpoint JSON (forecast, eval).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    /// Internal RK4 step in hours.
    #[arg(long, global = true)]
    step_hours: Option<f64>,

    /// Add a known residual a·sin(omega·t) to the truth dynamics, as "a,omega".
    #[arg(long, global = true, value_parser = parse_injection)]
    inject_residual: Option<InjectedResidual>,

    /// Also write a checkpoint every N iterations while training.
    #[arg(long, global = true)]
    checkpoint_every: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solar and load signals over the training window, plus the day-6 slice
    /// (day 6 of days 1..=10 covers hours 120 through 144 inclusive).
    Signals,
    /// Ground-truth battery trajectories from the physical model.
    Truth,
    /// Train the residual network and write checkpoint, loss history and fit.
    Train,
    /// Roll a trained checkpoint out to the forecast horizon (720 h default).
    Forecast,
    /// Error metrics: a checkpoint against truth, or `--pred` against `--truth`.
    Eval {
        /// Predicted trajectory CSV.
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Reference trajectory CSV.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = cli.iterations {
        cfg.iterations = n;
    }
    if let Some(lr) = cli.lr {
        cfg.lr = lr;
    }
    if let Some(h) = cli.step_hours {
        cfg.step_hours = h;
    }
    if let Some(r) = cli.inject_residual {
        cfg.inject_residual = Some(r);
    }
    if let Some(n) = cli.checkpoint_every {
        cfg.checkpoint_every = Some(n);
    }
    cfg.finish()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = build_config(&cli)?;
    let (pred, truth) = match &cli.command {
        Command::Eval { pred, truth } => (pred.clone(), truth.clone()),
        _ => (None, None),
    };
    let inv = Invocation {
        cfg,
        config_path: cli.config,
        out: cli.out,
        horizon: cli.horizon,
        checkpoint: cli.checkpoint,
        pred,
        truth,
    };
    match cli.command {
        Command::Signals => commands::cmd_signals(&inv),
        Command::Truth => commands::cmd_truth(&inv),
        Command::Train => commands::cmd_train(&inv),
        Command::Forecast => commands::cmd_forecast(&inv),
        Command::Eval { .. } => commands::cmd_eval(&inv),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Diverged { .. } => EXIT_DIVERGED,
                TrainError::Setup(inner) => ude_exit_code(inner),
            };
        }
        if let Some(e) = cause.downcast_ref::<UdeError>() {
            return ude_exit_code(e);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_USAGE
}

fn ude_exit_code(err: &UdeError) -> u8 {
    match err {
        UdeError::Divergence { .. } => EXIT_DIVERGED,
        UdeError::Io(_) => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
