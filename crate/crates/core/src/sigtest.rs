//! Monte Carlo significance test of AF matrices against a q-mer bootstrap
//! null model, with a Bonferroni family-wise verdict and run-level
//! checkpointing.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::affuncs::{self, Orientation};
use crate::cli::matrix::{format_tsv_lossless, parse_matrix, write_atomic};
use crate::engine::{run_pipeline, AfMatrix, EngineError, PipelineConfig};
use crate::seqio::{Dataset, Sample};

#[derive(Error, Debug)]
pub enum SigError {
    #[error("no fragment is at least q={0} residues long")]
    EmptyBin(usize),
    #[error("invalid null model: {0}")]
    BadConfig(String),
    #[error("checkpoint {dir} was written by a different configuration")]
    FingerprintMismatch { dir: PathBuf },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Evaluator(#[from] affuncs::AfError),
    #[error("checkpoint io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullModelConfig {
    pub q: usize,
    pub runs: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl NullModelConfig {
    pub fn validate(&self) -> Result<(), SigError> {
        if self.q == 0 {
            return Err(SigError::BadConfig("q must be at least 1".into()));
        }
        if self.runs == 0 {
            return Err(SigError::BadConfig("at least one run is needed".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SigError::BadConfig(format!(
                "alpha {} outside (0,1)",
                self.alpha
            )));
        }
        Ok(())
    }
}

impl Default for NullModelConfig {
    fn default() -> Self {
        NullModelConfig {
            q: 1,
            runs: 100,
            alpha: 0.05,
            seed: 42,
        }
    }
}

/// All overlapping q-mers of a dataset, with multiplicity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QmerBin {
    pub q: usize,
    data: Vec<u8>,
}

impl QmerBin {
    pub fn len(&self) -> usize {
        self.data.len() / self.q
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[u8] {
        &self.data[i * self.q..(i + 1) * self.q]
    }
}

pub fn build_qmer_bin(dataset: &Dataset, q: usize) -> Result<QmerBin, SigError> {
    if q == 0 {
        return Err(SigError::BadConfig("q must be at least 1".into()));
    }
    let mut data = Vec::new();
    for frag in dataset.samples.iter().flat_map(|s| &s.fragments) {
        for w in frag.windows(q) {
            data.extend_from_slice(w);
        }
    }
    if data.is_empty() {
        return Err(SigError::EmptyBin(q));
    }
    Ok(QmerBin { q, data })
}

/// Synthetic dataset with the fragment structure of `dataset`, each fragment
/// a concatenation of uniform draws (with replacement) from `bin`.
pub fn randomize_dataset(bin: &QmerBin, dataset: &Dataset, rng: &mut impl RngCore) -> Dataset {
    let samples = dataset
        .samples
        .iter()
        .map(|s| {
            let fragments = s
                .fragments
                .iter()
                .map(|f| {
                    let mut out = Vec::with_capacity(f.len() + bin.q);
                    while out.len() < f.len() {
                        out.extend_from_slice(bin.get(rng.gen_range(0..bin.len())));
                    }
                    out.truncate(f.len());
                    out
                })
                .collect();
            Sample::new(s.id, s.name.clone(), fragments)
        })
        .collect();
    Dataset::from_samples(samples)
}

/// Random stream of one Monte Carlo run.
pub fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64 + 1);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    pub labels: Vec<String>,
    pub function_id: String,
    pub orientation: Orientation,
    /// Number of simulated values strictly worse than the original.
    pub ranks: Vec<Vec<u32>>,
    /// `1 − rank/runs`; NaN on the diagonal.
    pub pvalues: Vec<Vec<f64>>,
    pub pass: Vec<Vec<bool>>,
    pub family_pass: bool,
    pub alpha: f64,
    /// Per-entry threshold (α/m with the correction, α without).
    pub threshold: f64,
    pub runs_completed: usize,
    /// Runs taken from an existing checkpoint instead of being computed.
    pub runs_loaded: usize,
    /// Off-diagonal entries whose original value is not finite; they fail.
    pub undefined: Vec<(usize, usize)>,
}

impl RankMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fraction of off-diagonal entries (i < j) that pass.
    pub fn pass_fraction(&self) -> f64 {
        let n = self.len();
        let m = n * n.saturating_sub(1) / 2;
        if m == 0 {
            return 0.0;
        }
        let passed = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.pass[i][j])
            .count();
        passed as f64 / m as f64
    }

    /// Per-entry CSV: i, j, labels, rank, p-value, verdict.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,label_i,label_j,rank,runs,pvalue,pass\n");
        let n = self.len();
        for i in 0..n {
            for j in i + 1..n {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    i,
                    j,
                    self.labels[i],
                    self.labels[j],
                    self.ranks[i][j],
                    self.runs_completed,
                    self.pvalues[i][j],
                    self.pass[i][j]
                ));
            }
        }
        out
    }
}

/// Rank of every off-diagonal original entry among simulated values:
/// similarities count simulated < original, distances simulated > original.
#[allow(clippy::needless_range_loop)]
pub fn rank_entries(original: &AfMatrix, simulated: &[AfMatrix]) -> Vec<Vec<u32>> {
    let n = original.len();
    let mut ranks = vec![vec![0u32; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let t = original.values[i][j];
            let r = simulated
                .iter()
                .filter(|m| {
                    let v = m.values[i][j];
                    match original.orientation {
                        Orientation::Similarity => v < t,
                        Orientation::Distance => v > t,
                    }
                })
                .count() as u32;
            ranks[i][j] = r;
            ranks[j][i] = r;
        }
    }
    ranks
}

/// Number of hypotheses for `n` samples.
pub fn hypotheses(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Per-entry verdicts and the family verdict. With `correct`, entries are
/// tested at α/m with m = n(n−1)/2.
pub fn bonferroni_decide(
    pvalues: &[Vec<f64>],
    alpha: f64,
    correct: bool,
) -> (Vec<Vec<bool>>, bool, f64) {
    let n = pvalues.len();
    let threshold = if correct {
        alpha / hypotheses(n).max(1) as f64
    } else {
        alpha
    };
    let mut pass = vec![vec![false; n]; n];
    let mut family = true;
    for i in 0..n {
        for j in i + 1..n {
            let ok = pvalues[i][j] <= threshold;
            pass[i][j] = ok;
            pass[j][i] = ok;
            family &= ok;
        }
    }
    (pass, family, threshold)
}

/// Run directory of a test: `config.fingerprint`, `state`, `run_<i>.mat`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub dir: PathBuf,
}

impl Checkpoint {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Checkpoint { dir: dir.into() }
    }

    fn fingerprint_path(&self) -> PathBuf {
        self.dir.join("config.fingerprint")
    }

    fn run_path(&self, run: usize) -> PathBuf {
        self.dir.join(format!("run_{run}.mat"))
    }

    /// Create the directory or check that it belongs to `fingerprint`.
    pub fn open(&self, fingerprint: &str) -> Result<(), SigError> {
        fs::create_dir_all(&self.dir)?;
        match fs::read_to_string(self.fingerprint_path()) {
            Ok(existing) if existing == fingerprint => Ok(()),
            Ok(_) => Err(SigError::FingerprintMismatch {
                dir: self.dir.clone(),
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                write_atomic(&self.fingerprint_path(), fingerprint)?;
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Completed-run count recorded in the state file.
    pub fn completed(&self) -> usize {
        fs::read_to_string(self.dir.join("state"))
            .ok()
            .and_then(|s| {
                s.lines()
                    .find_map(|l| l.strip_prefix("completed=").map(|v| v.trim().parse().ok()))
                    .flatten()
            })
            .unwrap_or(0)
    }

    fn set_completed(&self, runs: usize) -> io::Result<()> {
        write_atomic(&self.dir.join("state"), &format!("completed={runs}\n"))
    }

    /// Simulated matrix of one run, if present and well formed.
    pub fn load_run(&self, run: usize, reference: &AfMatrix) -> Option<AfMatrix> {
        let text = fs::read_to_string(self.run_path(run)).ok()?;
        match parse_matrix(&text, reference.orientation, &reference.function_id) {
            Ok(m) if m.labels == reference.labels => Some(m),
            _ => {
                log::warn!(
                    "discarding corrupt checkpoint run {run} in {}",
                    self.dir.display()
                );
                None
            }
        }
    }

    pub fn save_run(&self, run: usize, m: &AfMatrix) -> io::Result<()> {
        write_atomic(&self.run_path(run), &format_tsv_lossless(m))
    }

    /// Every readable run matrix, in run order.
    pub fn load_pool(&self, orientation: Orientation) -> Vec<AfMatrix> {
        let mut runs: Vec<(usize, PathBuf)> = fs::read_dir(&self.dir)
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let idx = name
                    .strip_prefix("run_")?
                    .strip_suffix(".mat")?
                    .parse()
                    .ok()?;
                Some((idx, e.path()))
            })
            .collect();
        runs.sort();
        runs.into_iter()
            .filter_map(|(_, p)| {
                let text = fs::read_to_string(p).ok()?;
                parse_matrix(&text, orientation, "pool").ok()
            })
            .collect()
    }
}

/// Identity of a test configuration; the run count and α are left out so a
/// test can be extended or re-thresholded on resume.
pub fn fingerprint(
    dataset: &Dataset,
    evaluator: &str,
    cfg: &NullModelConfig,
    pipeline: &PipelineConfig,
) -> String {
    let mut out = String::new();
    out.push_str(&format!("evaluator={evaluator}\n"));
    out.push_str(&format!("statistic={}\n", pipeline.statistic));
    out.push_str(&format!("q={}\nseed={}\n", cfg.q, cfg.seed));
    out.push_str(&format!("normalization={:?}\n", pipeline.normalization));
    out.push_str(&format!("feature_filter={:?}\n", pipeline.feature_filter));
    out.push_str(&format!("value_filter={:?}\n", pipeline.value_filter));
    out.push_str(&format!(
        "kulczynski_literal={} jsd_literal={} fswm_threshold={} fswm_pair_cap={}\n",
        pipeline.options.kulczynski_literal,
        pipeline.options.jsd_literal,
        pipeline.options.fswm_threshold,
        pipeline.options.fswm_pair_cap
    ));
    for s in &dataset.samples {
        let lengths: Vec<String> = s.fragments.iter().map(|f| f.len().to_string()).collect();
        out.push_str(&format!(
            "sample={} lengths={}\n",
            s.name,
            lengths.join(",")
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeccaOptions {
    /// Stop after computing this many new runs (simulates an interruption).
    pub run_limit: Option<usize>,
    /// Test each entry at α/m instead of α.
    pub bonferroni: bool,
}

impl Default for MeccaOptions {
    fn default() -> Self {
        MeccaOptions {
            run_limit: None,
            bonferroni: true,
        }
    }
}

/// Rank the original AF matrix of `evaluator` among `cfg.runs` matrices of
/// synthetic datasets. Completed runs are checkpointed before the next one
/// starts; p-values use the number of completed runs.
pub fn mecca(
    dataset: &Dataset,
    evaluator: &str,
    cfg: &NullModelConfig,
    pipeline: &PipelineConfig,
    checkpoint: Option<&Checkpoint>,
    opts: &MeccaOptions,
) -> Result<RankMatrix, SigError> {
    cfg.validate()?;
    let mut pipe = pipeline.clone();
    pipe.evaluators = vec![evaluator.to_string()];
    let original = run_pipeline(dataset, &pipe)?
        .matrices
        .pop()
        .expect("one evaluator, one matrix");
    let bin = build_qmer_bin(dataset, cfg.q)?;
    if let Some(ck) = checkpoint {
        ck.open(&fingerprint(dataset, evaluator, cfg, pipeline))?;
    }

    let mut simulated = Vec::with_capacity(cfg.runs);
    let mut loaded = 0;
    let mut computed = 0;
    for run in 0..cfg.runs {
        if let Some(m) = checkpoint.and_then(|ck| ck.load_run(run, &original)) {
            simulated.push(m);
            loaded += 1;
            continue;
        }
        if opts.run_limit.is_some_and(|limit| computed >= limit) {
            break;
        }
        let mut rng = run_rng(cfg.seed, run);
        let synthetic = randomize_dataset(&bin, dataset, &mut rng);
        let m = run_pipeline(&synthetic, &pipe)?
            .matrices
            .pop()
            .expect("one evaluator, one matrix");
        if let Some(ck) = checkpoint {
            ck.save_run(run, &m)?;
            ck.set_completed(run + 1)?;
        }
        simulated.push(m);
        computed += 1;
    }

    let n = original.len();
    let runs = simulated.len();
    let ranks = rank_entries(&original, &simulated);
    let mut undefined = Vec::new();
    let mut pvalues = vec![vec![f64::NAN; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let p = if !original.values[i][j].is_finite() {
                undefined.push((i, j));
                1.0
            } else if runs == 0 {
                1.0
            } else {
                1.0 - ranks[i][j] as f64 / runs as f64
            };
            pvalues[i][j] = p;
            pvalues[j][i] = p;
        }
    }
    if !undefined.is_empty() {
        log::warn!(
            "{evaluator}: {} original entries are not finite and fail the test",
            undefined.len()
        );
    }
    let (mut pass, mut family, threshold) = bonferroni_decide(&pvalues, cfg.alpha, opts.bonferroni);
    for &(i, j) in &undefined {
        pass[i][j] = false;
        pass[j][i] = false;
        family = false;
    }
    Ok(RankMatrix {
        labels: original.labels.clone(),
        function_id: original.function_id.clone(),
        orientation: original.orientation,
        ranks,
        pvalues,
        pass,
        family_pass: family,
        alpha: cfg.alpha,
        threshold,
        runs_completed: runs,
        runs_loaded: loaded,
        undefined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Green,
    Yellow,
    Red,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Green => "green",
            Verdict::Yellow => "yellow",
            Verdict::Red => "red",
        })
    }
}

pub fn classify(fraction: f64) -> Verdict {
    if fraction >= 0.75 {
        Verdict::Green
    } else if fraction == 0.0 {
        Verdict::Red
    } else {
        Verdict::Yellow
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub function_id: String,
    pub q: usize,
    pub percent_pass: f64,
    pub verdict: Verdict,
}

pub fn summarize(results: &[(usize, &RankMatrix)]) -> Vec<SummaryRow> {
    results
        .iter()
        .map(|(q, r)| {
            let f = r.pass_fraction();
            SummaryRow {
                function_id: r.function_id.clone(),
                q: *q,
                percent_pass: 100.0 * f,
                verdict: classify(f),
            }
        })
        .collect()
}

pub fn summary_tsv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("function\tq\tpercent_pass\tclassification\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{:.1}\t{}\n",
            r.function_id, r.q, r.percent_pass, r.verdict
        ));
    }
    out
}

/// Default q values of a significance report.
pub const DEFAULT_Q_SWEEP: [usize; 3] = [1, 7, 10];

/// Read all simulated matrices of a checkpoint directory.
pub fn simulated_pool(dir: &Path, orientation: Orientation) -> Vec<AfMatrix> {
    Checkpoint::new(dir).load_pool(orientation)
}
