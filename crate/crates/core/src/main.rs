use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use kkl::cli::{exit_code, run, Command, RunFlags};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    /// Sample eigenvalues, tabulate T and report its injectivity modulus.
    Synth,
    /// Certify the small-gain condition of the high-gain design.
    Certify,
    /// Invert a single observer state.
    Invert,
    /// Simulate plant and observer from every initial state.
    Simulate,
    /// Run the acceptance scenarios.
    Bench,
}

#[derive(Debug, Parser)]
#[command(name = "kkl", version, about = "KKL observer synthesis and simulation")]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulate even when the gain is not certified.
    #[arg(long)]
    override_cert: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    let command = match args.command {
        Sub::Synth => Command::Synth,
        Sub::Certify => Command::Certify,
        Sub::Invert => Command::Invert,
        Sub::Simulate => Command::Simulate,
        Sub::Bench => Command::Bench,
    };
    let flags = RunFlags { seed: args.seed, out: args.out, override_cert: args.override_cert };
    let result = run(command, &args.config, &flags);
    match &result {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            for path in &outcome.artifacts {
                println!("wrote {}", path.display());
            }
        }
        Err(e) => eprintln!("kkl: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
