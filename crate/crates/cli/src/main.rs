use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use brwlab::{run, CliError, Command, EscapeCap, RunOptions};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "brwlab", version, about = "Experiments on branching random walks killed below a line")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Write CSV here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Population at which a replicate counts as survived, or `inf`.
    #[arg(long, global = true)]
    escape_cap: Option<EscapeCap>,

    /// Fill the runtime_ms column.
    #[arg(long, global = true)]
    timing: bool,

    /// Abort with exit status 4 once this many milliseconds have passed.
    #[arg(long, global = true)]
    budget_ms: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Critical constants and normalisation certificate.
    Analyze,
    /// Survival probabilities by Monte Carlo and exact DP.
    Survival,
    /// Scaled log-survival for the Bernoulli family over an eps grid.
    Pemantle,
    /// Corridor small-deviation experiment.
    Mogulskii,
    /// Sensitivity of survival estimates to the escape cap.
    EscapeSweep,
}

fn command(c: Cmd) -> Command {
    match c {
        Cmd::Analyze => Command::Analyze,
        Cmd::Survival => Command::Survival,
        Cmd::Pemantle => Command::Pemantle,
        Cmd::Mogulskii => Command::Mogulskii,
        Cmd::EscapeSweep => Command::EscapeSweep,
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let command = command(cli.command);
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let bytes = std::fs::read(path)?;
    let opts = RunOptions { seed: cli.seed, escape_cap: cli.escape_cap, timing: cli.timing, budget_ms: cli.budget_ms };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    let output = pool.install(|| run(command, &bytes, &opts))?;
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    match &cli.out {
        Some(p) => std::fs::write(p, &output.csv)?,
        None => print!("{}", output.csv),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli).with_context(|| format!("brwlab {}", command(cli.command).name())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
