//! `monet`: generate data, train hallucinators, evaluate, and check
//! gradients and costs from the command line.

mod commands;
mod config;
mod lock;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use monet::cells::Family;

/// Exit status of a failed command.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration, spec or dimension mismatch (exit 2).
    Invalid(anyhow::Error),
    /// Missing files, I/O, numerical failure or a failed check (exit 1).
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn invalid(e: impl Into<anyhow::Error>) -> Self {
        Failure::Invalid(e.into())
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "monet", version, about = "Hallucinate motion feature sequences from appearance features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-stream dataset with a manifest.
    GenData {
        /// JSON task spec; defaults apply when omitted.
        #[arg(long)]
        spec: Option<std::path::PathBuf>,
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Train a hallucination model from an experiment config.
    Train {
        #[arg(long)]
        config: std::path::PathBuf,
        /// Overrides `train.max_epochs`.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Report val MSE and top-1 for the appearance, flow and fused streams.
    Eval {
        #[arg(long)]
        checkpoint: std::path::PathBuf,
        #[arg(long)]
        data: std::path::PathBuf,
        /// The data's flow payload already holds hallucinated features.
        #[arg(long)]
        hallucinated: bool,
        /// Also write fused predictions as CSV.
        #[arg(long)]
        predictions: Option<std::path::PathBuf>,
    },
    /// Write a feature file whose flow payload is the model output.
    Hallucinate {
        #[arg(long)]
        checkpoint: std::path::PathBuf,
        #[arg(long)]
        data: std::path::PathBuf,
        #[arg(long)]
        out: std::path::PathBuf,
    },
    /// Compare autodiff against central differences on random instances.
    Gradcheck {
        #[arg(long, value_parser = parse_family)]
        family: Family,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// One or more depths, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        layers: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scales the sigmoid backward by this factor (negative control).
        #[arg(long, hide = true)]
        corrupt_backward: Option<f64>,
    },
    /// Exact multiply-add counts for a cell config and a matched baseline.
    Flops {
        #[arg(long)]
        config: std::path::PathBuf,
        #[arg(long, default_value_t = 20)]
        seq_len: usize,
        #[arg(long, value_parser = parse_family, default_value = "gru")]
        baseline: Family,
    },
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse::<Family>().map_err(|e| e.to_string())
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("MONET_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::invalid(anyhow::anyhow!("MONET_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(Failure::runtime)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::GenData { spec, out } => commands::gen_data(spec.as_deref(), &out),
        Command::Train { config, epochs } => commands::train(&config, epochs),
        Command::Eval {
            checkpoint,
            data,
            hallucinated,
            predictions,
        } => commands::eval(&checkpoint, &data, hallucinated, predictions.as_deref()),
        Command::Hallucinate { checkpoint, data, out } => commands::hallucinate(&checkpoint, &data, &out),
        Command::Gradcheck {
            family,
            trials,
            layers,
            seed,
            corrupt_backward,
        } => commands::gradcheck(family, trials, &layers, seed, corrupt_backward),
        Command::Flops {
            config,
            seq_len,
            baseline,
        } => commands::flops(&config, seq_len, baseline),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
