//! Single entry point for the identity-representation toolkit.
//!
//! Exit codes: 0 success, 2 usage/config errors (unknown flags, missing
//! files, invalid configs), 1 runtime failures.

mod commands;
mod config;
mod plot;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{ablate, curate, eval_cmd, gen_data, sample, train, viz_attn};

#[derive(Parser)]
#[command(
    name = "identikit",
    about = "Procedural identity world, set encoder training, curation, and evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic identity dataset or video streams
    GenData(gen_data::Args),
    /// Curate video streams into pose-diverse identity sets
    Curate(curate::Args),
    /// Stage one: train encoder + masked decoder
    TrainMtd(train::MtdArgs),
    /// Stage two: train encoder + flow decoder
    TrainFlow(train::FlowArgs),
    /// Sample images from a trained flow checkpoint
    Sample(sample::Args),
    /// Evaluate a trained model (ID similarity, more-inputs trend)
    Eval(eval_cmd::Args),
    /// Run an ablation grid and report per-cell metrics
    Ablate(ablate::Args),
    /// Export encoder cross-attention heat maps
    VizAttn(viz_attn::Args),
}

/// Errors carrying their intended exit code.
pub enum CliError {
    /// Bad invocation: missing files, invalid configs. Exit 2.
    Usage(String),
    /// Failures after a valid launch. Exit 1.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<identikit_core::Error> for CliError {
    fn from(e: identikit_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => gen_data::run(args),
        Command::Curate(args) => curate::run(args),
        Command::TrainMtd(args) => train::run_mtd(args),
        Command::TrainFlow(args) => train::run_flow(args),
        Command::Sample(args) => sample::run(args),
        Command::Eval(args) => eval_cmd::run(args),
        Command::Ablate(args) => ablate::run(args),
        Command::VizAttn(args) => viz_attn::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
