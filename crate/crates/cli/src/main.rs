//! `rocksr` command-line front end.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod diffmap;
mod echo;
mod eval;
mod infer;
mod prepare;
mod train;

#[derive(Debug, Parser)]
#[command(name = "rocksr", version, about = "Super-resolution of micro-CT rock images", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize low-resolution inputs and a split manifest from HR images.
    Prepare(prepare::PrepareArgs),
    /// Train the generator, pixel phase first, then adversarially.
    Train(train::TrainArgs),
    /// Super-resolve images with a trained generator.
    Infer(infer::InferArgs),
    /// PSNR of bicubic and trained models on one manifest split.
    Eval(eval::EvalArgs),
    /// Absolute difference map of two equally sized images.
    Diffmap(diffmap::DiffmapArgs),
}

/// 1 usage, 2 data, 3 numerical abort.
fn exit_code(err: &anyhow::Error) -> u8 {
    use rocksr::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 1,
        Some(Error::Numerical(_) | Error::NonFiniteGradient(_)) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Prepare(a) => prepare::run(a),
        Command::Train(a) => train::run(a),
        Command::Infer(a) => infer::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Diffmap(a) => diffmap::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub(crate) fn parse_scale(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v @ (2 | 4)) => Ok(v),
        _ => Err(format!("scale must be 2 or 4, got `{s}`")),
    }
}
