use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roughpam_cli::{prepare, run, CliError, Command, Overrides};

/// Rough-noise parabolic Anderson model experiments.
///
/// Exit codes: 0 success, 2 config error, 3 flagged estimate, 4 integrity error.
#[derive(Parser)]
#[command(name = "roughpam", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration; the built-in reference config if omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Parameter checks and admissibility integrals.
    Validate,
    /// Solver ensemble: summary statistics and one trajectory.
    Solve,
    /// Feynman-Kac moments along the mollification schedule.
    Moments,
    /// Moment growth scan, growth fits and scaling exponents.
    Intermittency,
    /// Chaos norm table and simplex integrals.
    Chaos,
    /// Invariant suite and determinism replays.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Cmd::Validate => Command::Validate,
        Cmd::Solve => Command::Solve,
        Cmd::Moments => Command::Moments,
        Cmd::Intermittency => Command::Intermittency,
        Cmd::Chaos => Command::Chaos,
        Cmd::Selftest => Command::Selftest,
    };
    let o = Overrides {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        threads: cli.threads,
    };
    let result = prepare(&o).and_then(|v| {
        if v.config.threads > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(v.config.threads)
                .build_global()
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        run(command, &v)
    });
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
