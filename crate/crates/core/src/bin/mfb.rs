use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfb::cli::commands::{self, parse_alphas, Outcome, RunOptions, EXIT_PARSE};
use mfb::cli::report::write_atomic;

#[derive(Parser)]
#[command(name = "mfb", version, about = "Slicing trees, filtrations and fiber maps for discrete exhausted bundles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Output {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Run {
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    /// Form playing ω (default `omega`, else the first form).
    #[arg(long)]
    omega: Option<String>,
    /// Form playing τ (default `tau`, else the second form).
    #[arg(long)]
    tau: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the bundle structure and every form.
    Validate {
        file: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Slicing tree for the given cuts.
    Tree {
        file: PathBuf,
        /// Comma-separated half-integer cuts, e.g. `1.5,4.5` or `3/2,9/2`.
        #[arg(long, default_value = "")]
        alphas: String,
        #[command(flatten)]
        output: Output,
    },
    /// Fiber and total-space ends.
    Ends {
        file: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Run the exact filtration.
    Filtrate {
        file: PathBuf,
        #[command(flatten)]
        run: Run,
        #[command(flatten)]
        output: Output,
    },
    /// Filtrate, then build and audit the fiber maps.
    Solve {
        file: PathBuf,
        #[command(flatten)]
        run: Run,
        #[arg(long, default_value_t = 1000)]
        grid: usize,
        #[command(flatten)]
        output: Output,
        /// Audit samples, one row per grid point.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Solve for a bundle with trivial monodromy and compare neighbouring maps.
    Family {
        file: PathBuf,
        #[command(flatten)]
        run: Run,
        #[arg(long, default_value_t = 1000)]
        grid: usize,
        #[command(flatten)]
        output: Output,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn options(run: &Run, grid: usize) -> RunOptions<'_> {
    RunOptions { rounds: run.rounds, grid, omega: run.omega.as_deref(), tau: run.tau.as_deref() }
}

fn emit(outcome: Outcome, out: Option<&Path>, csv: Option<&Path>) -> ExitCode {
    if let Some(msg) = &outcome.message {
        eprintln!("mfb: {msg}");
    }
    let written = match out {
        Some(p) => write_atomic(p, outcome.report.as_bytes()),
        None => {
            print!("{}", outcome.report);
            Ok(())
        }
    };
    let written = written.and_then(|_| match (csv, &outcome.csv) {
        (Some(p), Some(rows)) => write_atomic(p, rows.as_bytes()),
        _ => Ok(()),
    });
    if let Err(e) = written {
        eprintln!("mfb: cannot write output: {e}");
        return ExitCode::from(EXIT_PARSE as u8);
    }
    ExitCode::from(outcome.code as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { file, output } => emit(commands::cmd_validate(&file), output.out.as_deref(), None),
        Command::Tree { file, alphas, output } => match parse_alphas(&alphas) {
            Ok(a) => emit(commands::cmd_tree(&file, &a), output.out.as_deref(), None),
            Err(e) => {
                eprintln!("mfb: {e}");
                ExitCode::from(EXIT_PARSE as u8)
            }
        },
        Command::Ends { file, output } => emit(commands::cmd_ends(&file), output.out.as_deref(), None),
        Command::Filtrate { file, run, output } => {
            emit(commands::cmd_filtrate(&file, &options(&run, 0)), output.out.as_deref(), None)
        }
        Command::Solve { file, run, grid, output, csv } => {
            emit(commands::cmd_solve(&file, &options(&run, grid)), output.out.as_deref(), csv.as_deref())
        }
        Command::Family { file, run, grid, output, csv } => {
            emit(commands::cmd_family(&file, &options(&run, grid)), output.out.as_deref(), csv.as_deref())
        }
    }
}
