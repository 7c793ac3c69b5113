use std::path::PathBuf;
use std::process::ExitCode;

use agebif::config::parse_config;
use agebif::pipeline::{run, Command};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Validate,
    Reduced,
    Bifurcation,
    Branch,
    Scan,
    Convergence,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Validate => Command::Validate,
            Cmd::Reduced => Command::Reduced,
            Cmd::Bifurcation => Command::Bifurcation,
            Cmd::Branch => Command::Branch,
            Cmd::Scan => Command::Scan,
            Cmd::Convergence => Command::Convergence,
        }
    }
}

/// Semi-trivial states, bifurcation points and coexistence branches of an
/// age-structured two-species cross-diffusion model.
///
/// Exit codes: 1 parse error, 2 validation error, 3 solver failure,
/// 4 I/O error.
#[derive(Debug, Parser)]
#[command(name = "agebif", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for the parallel parts.
    #[arg(long, env = "AGEBIF_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(4);
        }
    };
    let cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", cli.config.display());
            return ExitCode::from(1);
        }
    };
    let command = Command::from(cli.command);
    let result = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(command, &cfg, &cli.out)),
            Err(e) => {
                eprintln!("error: cannot start {n} worker threads: {e}");
                return ExitCode::from(3);
            }
        },
        None => run(command, &cfg, &cli.out),
    };
    match result {
        Ok(summary) => {
            for (k, v) in &summary.entries {
                println!("{k}={v}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
