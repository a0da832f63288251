//! `afkit` command line.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use afkit::cli::config::{parse_config, RunConfig, Task};
use afkit::cli::matrix::MatrixFormat;
use afkit::cli::task::{run_task, TaskOptions};

#[derive(Parser)]
#[command(name = "afkit", version, about = "Alignment-free sequence comparison")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// AF matrices, one file per evaluator.
    Distance(Common),
    /// Monte Carlo significance test with checkpointing.
    Sigtest(Common),
    /// Tree distance to a gold standard under injected noise.
    Robustness(Common),
    /// UPGMA and NJ trees from AF matrices.
    Tree(Common),
}

#[derive(clap::Args)]
struct Common {
    /// key=value configuration file; relative paths in it resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; falls back to AFKIT_WORKERS, then the `workers` key.
    #[arg(long, env = "AFKIT_WORKERS")]
    workers: Option<usize>,
    /// Print engine counters after each pipeline run.
    #[arg(long)]
    stats: bool,
    /// Matrix file format: phylip or tsv.
    #[arg(long)]
    format: Option<MatrixFormat>,
}

const CONFIG_ERROR: u8 = 2;

fn load(task: Task, args: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text)?.at(path)
        }
        None => parse_config("")?,
    };
    for item in &args.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {item:?}"))?;
        cfg.set(k, v)?;
    }
    if cfg
        .get("task")
        .is_some_and(|t| t.parse::<Task>().ok() != Some(task))
    {
        log::warn!("config task {} replaced by subcommand {task}", cfg.task);
    }
    cfg.task = task;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (task, args) = match &cli.command {
        Command::Distance(a) => (Task::Distance, a),
        Command::Sigtest(a) => (Task::Sigtest, a),
        Command::Robustness(a) => (Task::Robustness, a),
        Command::Tree(a) => (Task::Tree, a),
    };
    let cfg = match load(task, args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    let opts = TaskOptions {
        workers: args.workers,
        stats: args.stats,
        format: args.format,
        run_limit: None,
    };
    match run_task(&cfg, &opts) {
        Ok(report) => {
            for block in &report.stats {
                println!("{block}");
            }
            for note in &report.notes {
                println!("{note}");
            }
            for path in &report.artifacts {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
