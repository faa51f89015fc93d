//! `sega`: run guided sampling, strength sweeps and config validation.
//!
//! Exit codes: 0 success, 2 configuration or argument error, 3 runtime
//! error (for example a non-finite latent). Diagnostics go to stderr; with
//! `--quiet` stdout carries only the JSON summary.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Common, Failure, SweepArgs, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "sega", version, about = "Semantic guidance on an analytic diffusion backend")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// Run configuration (JSON).
    config: PathBuf,
    /// `key.path=value` overrides applied before validation.
    #[arg(long, num_args = 1.., value_name = "K=V")]
    overrides: Vec<String>,
    /// Output directory; replaces `outputs.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only errors on stderr and the JSON summary on stdout.
    #[arg(long)]
    quiet: bool,
    /// Also write an SVG plot.
    #[arg(long)]
    svg: bool,
    /// Warn about unknown config keys instead of rejecting them.
    #[arg(long)]
    lax: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sample `num_samples` chains and write CSV, metrics and config echo.
    Sample(Shared),
    /// Sweep one edit's `s_e` and report the target posterior per value.
    Sweep {
        #[command(flatten)]
        shared: Shared,
        /// Index of the edit whose `s_e` is swept.
        #[arg(long, default_value_t = 0)]
        edit_index: usize,
        /// Strictly increasing `s_e` values (at least 3).
        #[arg(long = "s-e", value_delimiter = ',', num_args = 1.., required = true)]
        s_e: Vec<f64>,
        /// Seeds per point, fanned out from `sampler.seed`; defaults to
        /// `sampler.num_samples`.
        #[arg(long)]
        seeds: Option<usize>,
        /// Tags of the measured query; defaults to the swept edit's query.
        #[arg(long, value_delimiter = ',')]
        target: Option<Vec<String>>,
    },
    /// Parse and print the normalized config.
    Validate(Shared),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let shared = match &cli.command {
        Command::Sample(s) | Command::Validate(s) => s,
        Command::Sweep { shared, .. } => shared,
    };
    let level = if shared.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let common = Common {
        config_path: shared.config.clone(),
        overrides: shared.overrides.clone(),
        out: shared.out.clone(),
        svg: shared.svg,
        lax: shared.lax,
    };
    let quiet = shared.quiet;
    let (result, wall) = commands::run_timed(|| {
        commands::configure_threads()?;
        match &cli.command {
            Command::Sample(_) => commands::sample(&common),
            Command::Validate(_) => commands::validate(&common),
            Command::Sweep {
                edit_index,
                s_e,
                seeds,
                target,
                ..
            } => commands::sweep(
                &common,
                &SweepArgs {
                    edit_index: *edit_index,
                    s_e: s_e.clone(),
                    seeds: *seeds,
                    target: target.clone(),
                },
            ),
        }
    });

    match result {
        Ok(inv) => {
            if let Some(text) = &inv.stdout {
                if !quiet {
                    print!("{text}");
                }
            }
            if quiet || inv.stdout.is_none() {
                println!("{}", inv.summary(wall));
            }
            if !quiet {
                for a in &inv.artifacts {
                    eprintln!("wrote {}", commands::display(a));
                }
            }
            ExitCode::SUCCESS
        }
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
