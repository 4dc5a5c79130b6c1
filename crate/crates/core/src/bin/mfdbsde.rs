use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mfdbsde::cli::{self, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    SolveFinite,
    SolveInfinite,
    Analyze,
    Verify,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::SolveFinite => Command::SolveFinite,
            Sub::SolveInfinite => Command::SolveInfinite,
            Sub::Analyze => Command::Analyze,
            Sub::Verify => Command::Verify,
        }
    }
}

/// Solve mean-field delayed BSDEs with jumps on a scenario tree.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and trajectories.csv.
    #[arg(long)]
    out: PathBuf,
    /// Exit with code 2 when `analyze` finds no feasible β.
    #[arg(long)]
    strict: bool,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let go = || cli::run_file(args.command.into(), &args.config, &args.out, args.strict);
    let code = match args.threads {
        #[cfg(feature = "parallel")]
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(go),
            Err(e) => {
                eprintln!("mfdbsde: cannot start thread pool: {e}");
                cli::EXIT_FAILURE
            }
        },
        _ => go(),
    };
    ExitCode::from(code as u8)
}
