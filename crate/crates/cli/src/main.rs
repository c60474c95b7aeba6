use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use cml_cli::{run_text, sweep, verify};

#[derive(Parser)]
#[command(name = "cml", version, about = "Contrastive meta-learning experiments")]
struct Cli {
    /// Worker threads for task-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its outputs.
    Run {
        /// Configuration file (JSON).
        path: Option<PathBuf>,
        #[arg(long = "config", conflicts_with = "path")]
        config: Option<PathBuf>,
        /// Output directory; overrides the configuration's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed; overrides the configuration's `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a configuration over a grid of settings.
    Sweep {
        config: PathBuf,
        /// Grid file: a JSON object mapping keys to lists of values.
        grid: PathBuf,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
    /// Run the acceptance battery.
    Verify {
        /// Only these criteria (repeatable).
        #[arg(long)]
        only: Vec<usize>,
    },
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn setup_threads(threads: Option<usize>) -> anyhow::Result<()> {
    let deterministic = std::env::var("CML_DETERMINISTIC").is_ok_and(|v| v == "1");
    let n = if deterministic { Some(1) } else { threads };
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn run(path: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<bool> {
    let text = read(&path)?;
    let (cfg, record) = run_text(&text, seed).map_err(|e| anyhow::anyhow!("{e}"))?;
    let dir = out
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("cml-out"));
    record.write(&dir).with_context(|| format!("writing {}", dir.display()))?;
    println!("{}", record.summary_json());
    if let Some(e) = &record.error {
        eprintln!("error: {e}");
        eprintln!("partial outputs in {}", dir.display());
        return Ok(false);
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = setup_threads(cli.threads).and_then(|()| match cli.command {
        Command::Run { path, config, out, seed } => match path.or(config) {
            Some(p) => run(p, out, seed),
            None => bail!("no configuration given (pass a path or --config)"),
        },
        Command::Sweep { config, grid, out } => {
            let base = read(&config)?;
            let grid = sweep::parse_grid(&read(&grid)?)?;
            let res = sweep::sweep(&base, &grid, Some(&out))?;
            print!("{}", res.aggregate_csv);
            let failed = res.cells.iter().filter(|c| c.status() != "ok").count();
            if failed > 0 {
                eprintln!("{failed} of {} cells failed", res.cells.len());
            }
            Ok(failed == 0)
        }
        Command::Verify { only } => {
            let results = verify::run_criteria(&only, |r| println!("{}", r.line()));
            let passed = results.iter().filter(|r| r.pass).count();
            println!("{passed}/{} criteria passed", results.len());
            Ok(passed == results.len())
        }
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
