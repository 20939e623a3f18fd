use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use qds_cli::scenario::{self, Grid, Overrides};
use qds_cli::{run, Command};

/// Stability analysis of open quantum systems described by JSON scenarios.
#[derive(Debug, Parser)]
#[command(name = "qds", version)]
struct Args {
    command: Command,

    /// Shipped scenario name for `reproduce` (example1, example2, example3).
    example: Option<String>,

    #[arg(long)]
    scenario: Option<PathBuf>,

    #[arg(long, default_value = "out")]
    out: PathBuf,

    #[arg(long)]
    seed: Option<u64>,

    /// Time grid `t0:t1:steps`, where steps counts intervals.
    #[arg(long, value_parser = Grid::parse)]
    grid: Option<Grid>,

    /// Fock truncation override.
    #[arg(long)]
    dim: Option<usize>,
}

fn load(args: &Args) -> Result<qds_cli::Scenario> {
    let overrides = Overrides {
        dim: args.dim,
        seed: args.seed,
        grid: args.grid,
    };
    let (text, path) = match (&args.scenario, &args.example) {
        (Some(path), None) => (
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
            path.display().to_string(),
        ),
        (None, Some(name)) if args.command == Command::Reproduce => match scenario::shipped(name) {
            Some(text) => (text.to_string(), format!("{name}.json")),
            None => bail!("unknown shipped scenario {name:?}; expected example1, example2 or example3"),
        },
        (None, Some(_)) => bail!("a positional scenario name is only accepted by `reproduce`; use --scenario"),
        (Some(_), Some(_)) => bail!("give either --scenario or a shipped scenario name, not both"),
        (None, None) => bail!("--scenario is required"),
    };
    Ok(scenario::parse_scenario_with(&text, &path, overrides)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    faer::set_global_parallelism(faer::Par::Seq);
    let args = Args::parse();
    let outcome = load(&args).and_then(|sc| run(args.command, &sc, &args.out));
    match outcome {
        Ok(o) => {
            if let Some(v) = &o.report.verdict {
                println!("{}: {v}", o.report.command);
            }
            for f in &o.report.files {
                println!("wrote {}", args.out.join(f).display());
            }
            ExitCode::from(o.status.code())
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
