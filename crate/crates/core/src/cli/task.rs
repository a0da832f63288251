//! Task execution and the error-to-exit-code mapping.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cli::config::{ConfigError, RunConfig, Task};
use crate::cli::matrix::{emit_matrix, write_atomic, MatrixFormat};
use crate::engine::{run_pipeline, AfMatrix, EngineError, PipelineConfig};
use crate::phylo::{
    corrupted_distance, parse_newick, robustness_sweep, sweep_tsv, write_newick, NoiseSource,
    PhyloError, PhyloTree,
};
use crate::seqio::{load_dataset, Dataset, SeqError};
use crate::sigtest::{
    mecca, summarize, summary_tsv, Checkpoint, MeccaOptions, RankMatrix, SigError,
};

#[derive(Error, Debug)]
pub enum TaskError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Input(#[from] SeqError),
    #[error("{path}: {source}")]
    Newick { path: PathBuf, source: PhyloError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Phylo(#[from] PhyloError),
    #[error(transparent)]
    Sig(#[from] SigError),
}

impl TaskError {
    /// 0 ok, 2 configuration, 3 input, 4 numeric or degenerate data,
    /// 5 checkpoint mismatch.
    pub fn exit_code(&self) -> i32 {
        match self {
            TaskError::Config(_) => 2,
            TaskError::Engine(EngineError::Config(_)) => 2,
            TaskError::Input(_) | TaskError::Newick { .. } | TaskError::Io { .. } => 3,
            TaskError::Phylo(PhyloError::LeafSetMismatch) => 3,
            TaskError::Engine(_) | TaskError::Phylo(_) => 4,
            TaskError::Sig(e) => match e {
                SigError::FingerprintMismatch { .. } | SigError::Io(_) => 5,
                SigError::BadConfig(_) | SigError::Engine(EngineError::Config(_)) => 2,
                SigError::EmptyBin(_) => 3,
                SigError::Engine(_) | SigError::Evaluator(_) => 4,
            },
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TaskOptions {
    /// Overrides the `workers` key.
    pub workers: Option<usize>,
    /// Collect engine counters.
    pub stats: bool,
    /// Overrides the `format` key.
    pub format: Option<MatrixFormat>,
    /// sigtest: stop after this many new runs.
    pub run_limit: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct TaskReport {
    pub artifacts: Vec<PathBuf>,
    /// Engine counters, one block per pipeline run.
    pub stats: Vec<String>,
    /// One line per result worth showing the user.
    pub notes: Vec<String>,
}

fn write_file(path: &Path, contents: &str) -> Result<(), TaskError> {
    let io_err = |source| TaskError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    write_atomic(path, contents).map_err(io_err)
}

fn load(cfg: &RunConfig) -> Result<Dataset, TaskError> {
    let ds = load_dataset(&cfg.inputs()?)?;
    log::info!(
        "loaded {} samples, mean length {:.1}",
        ds.len(),
        ds.mean_length
    );
    Ok(ds)
}

fn compute(
    ds: &Dataset,
    pc: &PipelineConfig,
    opts: &TaskOptions,
    report: &mut TaskReport,
) -> Result<Vec<AfMatrix>, TaskError> {
    log::info!(
        "{} with {} on {} workers",
        pc.statistic,
        pc.strategy.kind,
        pc.workers
    );
    let out = run_pipeline(ds, pc)?;
    if opts.stats {
        report.stats.push(out.counters.to_string());
    }
    Ok(out.matrices)
}

pub fn run_task(cfg: &RunConfig, opts: &TaskOptions) -> Result<TaskReport, TaskError> {
    for w in &cfg.warnings {
        log::warn!("{w}");
    }
    cfg.validate()?;
    let mut report = TaskReport::default();
    match cfg.task {
        Task::Distance => distance(cfg, opts, &mut report)?,
        Task::Sigtest => sigtest(cfg, opts, &mut report)?,
        Task::Robustness => robustness(cfg, opts, &mut report)?,
        Task::Tree => tree(cfg, opts, &mut report)?,
    }
    Ok(report)
}

fn distance(cfg: &RunConfig, opts: &TaskOptions, report: &mut TaskReport) -> Result<(), TaskError> {
    let ds = load(cfg)?;
    let pc = cfg.pipeline(&ds, opts.workers)?;
    let format = match opts.format {
        Some(f) => f,
        None => cfg.format()?,
    };
    let dir = cfg.output_dir();
    for m in compute(&ds, &pc, opts, report)? {
        let path = dir.join(format!("{}.{}", m.function_id, format.extension()));
        emit_matrix(&m, format, &path).map_err(|source| TaskError::Io {
            path: path.clone(),
            source,
        })?;
        report.artifacts.push(path);
    }
    Ok(())
}

fn checkpoint_dir(cfg: &RunConfig, evaluator: &str, q: usize) -> PathBuf {
    cfg.output_dir()
        .join("checkpoints")
        .join(format!("{evaluator}_q{q}"))
}

fn sigtest(cfg: &RunConfig, opts: &TaskOptions, report: &mut TaskReport) -> Result<(), TaskError> {
    let ds = load(cfg)?;
    let pc = cfg.pipeline(&ds, opts.workers)?;
    let mecca_opts = MeccaOptions {
        run_limit: opts.run_limit,
        bonferroni: cfg.bonferroni()?,
    };
    let dir = cfg.output_dir();
    let mut results: Vec<(usize, RankMatrix)> = Vec::new();
    for evaluator in &pc.evaluators {
        for q in cfg.q_values()? {
            let null = cfg.null_model(q)?;
            let ck = Checkpoint::new(checkpoint_dir(cfg, evaluator, q));
            let rm = mecca(&ds, evaluator, &null, &pc, Some(&ck), &mecca_opts)?;
            let path = dir.join(format!("{evaluator}_q{q}.ranks.csv"));
            write_file(&path, &rm.to_csv())?;
            report.artifacts.push(path);
            report.notes.push(format!(
                "{evaluator} q={q}: runs_completed={} (loaded {}), pass fraction {:.3}",
                rm.runs_completed,
                rm.runs_loaded,
                rm.pass_fraction()
            ));
            results.push((q, rm));
        }
    }
    let refs: Vec<(usize, &RankMatrix)> = results.iter().map(|(q, rm)| (*q, rm)).collect();
    let path = dir.join("sigtest_report.tsv");
    write_file(&path, &summary_tsv(&summarize(&refs)))?;
    report.artifacts.push(path);
    Ok(())
}

fn read_gold(cfg: &RunConfig) -> Result<PhyloTree, TaskError> {
    let path = cfg.gold_tree()?;
    let text = fs::read_to_string(&path).map_err(|source| TaskError::Io {
        path: path.clone(),
        source,
    })?;
    parse_newick(&text).map_err(|source| TaskError::Newick { path, source })
}

fn robustness(
    cfg: &RunConfig,
    opts: &TaskOptions,
    report: &mut TaskReport,
) -> Result<(), TaskError> {
    let gold = read_gold(cfg)?;
    let ds = load(cfg)?;
    let pc = cfg.pipeline(&ds, opts.workers)?;
    let sweep = cfg.sweep(pc.statistic.kind(), opts.workers)?;
    let dump = cfg.parse::<bool>("dump_trees")?.unwrap_or(false);
    let dir = cfg.output_dir();
    for m in compute(&ds, &pc, opts, report)? {
        let pool = if sweep.source == NoiseSource::SimulatedPool {
            let q = cfg.q_values()?.first().copied().unwrap_or(1);
            let q = if cfg.get("q").is_some() { q } else { 1 };
            let null = cfg.null_model(q)?;
            let ck = Checkpoint::new(checkpoint_dir(cfg, &m.function_id, q));
            mecca(
                &ds,
                &m.function_id,
                &null,
                &pc,
                Some(&ck),
                &MeccaOptions::default(),
            )?;
            ck.load_pool(m.orientation)
        } else {
            Vec::new()
        };
        let rows = robustness_sweep(&m, &gold, &sweep, &pool)?;
        let path = dir.join(format!("{}.robustness.tsv", m.function_id));
        write_file(&path, &sweep_tsv(&rows))?;
        report.artifacts.push(path);
        if dump {
            for (p, percent) in sweep.percents.iter().enumerate() {
                let noisy = corrupted_distance(&m, &sweep, &pool, p, 0)?;
                for b in &sweep.builders {
                    let t = b.build(&noisy)?;
                    let path = dir
                        .join("trees")
                        .join(format!("{}.{b}.p{percent}.nwk", m.function_id));
                    write_file(&path, &(write_newick(&t) + "\n"))?;
                    report.artifacts.push(path);
                }
            }
        }
    }
    Ok(())
}

fn tree(cfg: &RunConfig, opts: &TaskOptions, report: &mut TaskReport) -> Result<(), TaskError> {
    let ds = load(cfg)?;
    let pc = cfg.pipeline(&ds, opts.workers)?;
    let builders = cfg.builders()?;
    let dir = cfg.output_dir();
    for m in compute(&ds, &pc, opts, report)? {
        let d = m.to_distance();
        for b in &builders {
            let t = b.build(&d)?;
            let path = dir.join(format!("{}.{b}.nwk", m.function_id));
            write_file(&path, &(write_newick(&t) + "\n"))?;
            report.artifacts.push(path);
        }
    }
    Ok(())
}
