//! `elder` — equilibrium learning for image reconstruction.
//!
//! Reconstruction solves min_x g(x) + tau * h(x), where g measures data fit
//! under a known degradation (blur+downsample, partial Fourier sampling, or
//! inpainting) and h is a small convolutional network acting as a learned
//! penalty. The solver alternates a gradient step on tau*h with a
//! closed-form proximal step on g, with a backtracking line search; training
//! differentiates through the solver's fixed point.
//!
//! Exit codes: 0 success, 1 config error, 2 numeric failure, 3 i/o failure.

mod commands;
mod config;
mod report;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "elder", version, about = "Learned-regularizer image reconstruction")]
struct Cli {
    /// Plain-text config file ([section] headers, key = value lines)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the experiment seed from the config file
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory (default: out)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Suppress progress lines; errors still go to stderr
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic set of ground-truth tiles plus a manifest
    GenData,
    /// Train a network as a gradient-step denoiser (initialization stage)
    Pretrain,
    /// Train the penalty network through the reconstruction fixed point
    Train,
    /// Reconstruct images; write estimates, per-iteration traces, metrics
    Solve,
    /// Check analytic derivatives against finite differences; nonzero exit on failure
    Gradcheck,
    /// Compare backtracking against fixed step sizes on a quadratic problem
    BenchSteps,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive here too; they are not failures.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let settings = match config::load(cli.config.as_deref(), cli.seed, cli.out.clone()) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };

    if let Err(e) = prepare_out(&settings) {
        return fail(&e);
    }

    let result = match cli.command {
        Cmd::GenData => commands::gen_data::run(&settings, cli.quiet),
        Cmd::Pretrain => commands::pretrain::run(&settings, cli.quiet),
        Cmd::Train => commands::train::run(&settings, cli.quiet),
        Cmd::Solve => commands::solve::run(&settings, cli.quiet),
        Cmd::Gradcheck => commands::gradcheck::run(&settings, cli.quiet),
        Cmd::BenchSteps => commands::bench::run(&settings, cli.quiet),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

/// Create the output directory and record the fully resolved configuration,
/// so any run can be reproduced from its own outputs.
fn prepare_out(settings: &config::Settings) -> elder::Result<()> {
    std::fs::create_dir_all(&settings.out)?;
    let text = settings.to_raw().emit();
    std::fs::write(settings.out.join("config_used.txt"), text)?;
    Ok(())
}

fn fail(e: &elder::Error) -> ExitCode {
    eprintln!("error: {e}");
    let code: u8 = match e {
        elder::Error::Config(_) | elder::Error::Shape(_) => 1,
        elder::Error::Numeric(_) => 2,
        elder::Error::Format(_) | elder::Error::Io(_) => 3,
    };
    ExitCode::from(code)
}
