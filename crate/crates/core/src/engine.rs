//! The five-stage pipeline over an in-process worker pool.
//!
//! Stage 1 extracts statistics from chunks in parallel (with a per-chunk
//! combine). Stage 2 filters keys. Records are then routed to work units
//! according to the strategy: a single unit (total aggregation), a fixed
//! number of hash partitions (no aggregation) or `bins` hash bins (partial
//! aggregation). Each unit aggregates its records per (key, sample), applies
//! the value filter, and, after a barrier that fixes per-sample summaries,
//! evaluates every pair holding each of its keys. Unit accumulators are
//! combined in unit order and finalized per pair.
//!
//! Floating-point results depend only on the unit decomposition, never on
//! which worker handled which unit.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::affuncs::{
    self, base_frequencies, Acc, AfError, AnyEvaluator, EvalOptions, Evaluator, Orientation,
    PairContext, SampleProfile, StatisticKind,
};
use crate::seqio::{chunk_dataset, Chunk, Dataset};
use crate::stats::{
    self, assign_bin, base_code, for_each_kmer, for_each_spaced_word, key_space, FeatureFilter,
    Normalization, Normalizer, Occurrences, Sketch, SpacedPattern, StatsError, ValueFilter,
    SKETCH_KEY,
};

#[derive(Error, Debug)]
pub enum EngineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Evaluator(#[from] AfError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(
        "total aggregation holds {records} records, above the limit of {limit}; \
         use partial_aggregation"
    )]
    MemoryBudgetExceeded { records: u64, limit: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StrategyKind {
    TotalAggregation,
    NoAggregation,
    PartialAggregation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Strategy {
    pub kind: StrategyKind,
    /// Partial aggregation only; `None` means 16 × workers.
    pub bins: Option<usize>,
}

impl Strategy {
    pub const TOTAL: Strategy = Strategy {
        kind: StrategyKind::TotalAggregation,
        bins: None,
    };
    pub const NONE: Strategy = Strategy {
        kind: StrategyKind::NoAggregation,
        bins: None,
    };

    pub fn partial(bins: Option<usize>) -> Self {
        Strategy {
            kind: StrategyKind::PartialAggregation,
            bins,
        }
    }
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::partial(None)
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "total_aggregation" | "total" => Ok(Strategy::TOTAL),
            "no_aggregation" | "none" => Ok(Strategy::NONE),
            "partial_aggregation" | "partial" => Ok(Strategy::partial(None)),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::TotalAggregation => "total_aggregation",
            StrategyKind::NoAggregation => "no_aggregation",
            StrategyKind::PartialAggregation => "partial_aggregation",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StatisticSpec {
    Kmer { k: usize },
    MinHash { k: usize, s: usize, seed: u32 },
    SpacedWord { pattern: SpacedPattern },
}

impl StatisticSpec {
    pub fn kind(&self) -> StatisticKind {
        match self {
            StatisticSpec::Kmer { .. } => StatisticKind::Kmer,
            StatisticSpec::MinHash { .. } => StatisticKind::MinHash,
            StatisticSpec::SpacedWord { .. } => StatisticKind::SpacedWord,
        }
    }

    /// Length of the sequence window one statistic covers.
    pub fn window(&self) -> usize {
        match self {
            StatisticSpec::Kmer { k } | StatisticSpec::MinHash { k, .. } => *k,
            StatisticSpec::SpacedWord { pattern } => pattern.len(),
        }
    }

    /// Number of symbols in a key.
    pub fn key_width(&self) -> usize {
        match self {
            StatisticSpec::Kmer { k } | StatisticSpec::MinHash { k, .. } => *k,
            StatisticSpec::SpacedWord { pattern } => pattern.weight(),
        }
    }
}

impl fmt::Display for StatisticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatisticSpec::Kmer { k } => write!(f, "kmer k={k}"),
            StatisticSpec::MinHash { k, s, seed } => write!(f, "minhash k={k} s={s} seed={seed}"),
            StatisticSpec::SpacedWord { pattern } => write!(f, "spacedword pattern={pattern}"),
        }
    }
}

/// Number of hash partitions used by the no-aggregation strategy. Fixed so
/// that results do not depend on the worker count.
pub const SHUFFLE_PARTITIONS: usize = 64;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub statistic: StatisticSpec,
    pub evaluators: Vec<String>,
    pub strategy: Strategy,
    pub slices: usize,
    pub workers: usize,
    pub feature_filter: FeatureFilter,
    pub value_filter: Option<ValueFilter>,
    pub normalization: Normalization,
    pub options: EvalOptions,
    /// Soft limit on records held by the single total-aggregation worker.
    pub memory_limit: Option<u64>,
}

impl PipelineConfig {
    pub fn new(statistic: StatisticSpec, evaluators: &[&str]) -> Self {
        PipelineConfig {
            statistic,
            evaluators: evaluators.iter().map(|s| s.to_string()).collect(),
            strategy: Strategy::default(),
            slices: 64,
            workers: 1,
            feature_filter: FeatureFilter::default(),
            value_filter: None,
            normalization: Normalization::None,
            options: EvalOptions::default(),
            memory_limit: None,
        }
    }

    pub fn kmer(k: usize, evaluators: &[&str]) -> Self {
        PipelineConfig::new(StatisticSpec::Kmer { k }, evaluators)
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn with_slices(mut self, slices: usize) -> Self {
        self.slices = slices.max(1);
        self
    }

    fn unit_count(&self) -> usize {
        match self.strategy.kind {
            StrategyKind::TotalAggregation => 1,
            StrategyKind::NoAggregation => SHUFFLE_PARTITIONS,
            StrategyKind::PartialAggregation => {
                self.strategy.bins.unwrap_or(16 * self.workers).max(1)
            }
        }
    }
}

/// Dense symmetric matrix of one AF function over a dataset.
///
/// Undefined entries are NaN; saturated distances are +∞.
#[derive(Debug, Clone, PartialEq)]
pub struct AfMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub orientation: Orientation,
    pub function_id: String,
}

impl AfMatrix {
    pub fn new(
        labels: Vec<String>,
        values: Vec<Vec<f64>>,
        orientation: Orientation,
        function_id: impl Into<String>,
    ) -> Self {
        AfMatrix {
            labels,
            values,
            orientation,
            function_id: function_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.len();
        (0..n).all(|i| (0..n).all(|j| self.values[i][j].total_cmp(&self.values[j][i]).is_eq()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    /// Off-diagonal entries of the upper triangle, row by row.
    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| self.values[i][j])
            .collect()
    }

    /// Distance view: similarities become `max_offdiag − s` with a zero diagonal.
    pub fn to_distance(&self) -> AfMatrix {
        if self.orientation == Orientation::Distance {
            return self.clone();
        }
        let top = self
            .off_diagonal()
            .into_iter()
            .filter(|v| v.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        let top = if top.is_finite() { top } else { 0.0 };
        let n = self.len();
        let values = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { 0.0 } else { top - self.values[i][j] })
                    .collect()
            })
            .collect();
        AfMatrix {
            labels: self.labels.clone(),
            values,
            orientation: Orientation::Distance,
            function_id: self.function_id.clone(),
        }
    }
}

/// Largest absolute entrywise difference between two matrices of equal
/// shape; identical non-finite entries count as equal.
pub fn max_abs_diff(a: &AfMatrix, b: &AfMatrix) -> f64 {
    a.values
        .iter()
        .flatten()
        .zip(b.values.iter().flatten())
        .map(|(x, y)| {
            if x.total_cmp(y).is_eq() {
                0.0
            } else {
                (x - y).abs()
            }
        })
        .fold(0.0, |m, d| if d.is_nan() { f64::NAN } else { m.max(d) })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageCounters {
    pub stage: &'static str,
    /// Work units of the stage (chunks, partitions or bins).
    pub units: usize,
    pub records_in: u64,
    pub records_out: u64,
    /// Size of the worker pool that ran the stage.
    pub workers: usize,
    /// How many times each unit was processed.
    pub unit_visits: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Counters {
    pub strategy: StrategyKind,
    pub stages: Vec<StageCounters>,
    /// Records routed from Stage 2 into aggregation units.
    pub shuffled: u64,
}

impl Counters {
    pub fn stage(&self, name: &str) -> Option<&StageCounters> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

impl fmt::Display for Counters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "strategy\t{}", self.strategy)?;
        writeln!(f, "shuffled_records\t{}", self.shuffled)?;
        writeln!(f, "stage\tunits\tworkers\trecords_in\trecords_out")?;
        for s in &self.stages {
            writeln!(
                f,
                "{}\t{}\t{}\t{}\t{}",
                s.stage, s.units, s.workers, s.records_in, s.records_out
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub matrices: Vec<AfMatrix>,
    pub counters: Counters,
    /// Σ of aggregated values per sample after Stage 4.
    pub sample_totals: Vec<f64>,
}

/// Default value of a key a sample does not hold.
#[derive(Debug, Clone, PartialEq)]
pub enum MissingValue {
    Count(f64),
    EmptySketch,
    EmptyOccurrences,
}

pub fn missing_value(kind: StatisticKind, norm: &Normalizer) -> MissingValue {
    match kind {
        StatisticKind::Kmer => MissingValue::Count(norm.missing()),
        StatisticKind::MinHash => MissingValue::EmptySketch,
        StatisticKind::SpacedWord => MissingValue::EmptyOccurrences,
    }
}

/// Run `f` on every unit index with a pool of `workers` threads. Results are
/// returned in unit order together with per-unit visit counts.
pub fn run_units<R, F>(workers: usize, units: usize, f: F) -> (Vec<R>, Vec<u32>)
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    let visits: Vec<AtomicU32> = (0..units).map(|_| AtomicU32::new(0)).collect();
    let threads = workers.clamp(1, units.max(1));
    let results: Vec<Option<R>> = if threads == 1 {
        (0..units)
            .map(|i| {
                visits[i].fetch_add(1, Ordering::Relaxed);
                Some(f(i))
            })
            .collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..units).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= units {
                        break;
                    }
                    visits[i].fetch_add(1, Ordering::Relaxed);
                    let r = f(i);
                    slots.lock().expect("worker panicked")[i] = Some(r);
                });
            }
        });
        slots.into_inner().expect("worker panicked")
    };
    let out = results
        .into_iter()
        .map(|r| r.expect("every unit produces a result"))
        .collect();
    (out, visits.into_iter().map(AtomicU32::into_inner).collect())
}

/// Aggregated statistic values.
pub trait StatValue: Clone + Send + Sync {
    fn merge(&mut self, other: Self);
    /// Quantity seen by the value filter and per-sample moments.
    fn magnitude(&self) -> f64;
}

impl StatValue for u64 {
    fn merge(&mut self, other: Self) {
        *self += other;
    }
    fn magnitude(&self) -> f64 {
        *self as f64
    }
}

impl StatValue for Sketch {
    fn merge(&mut self, other: Self) {
        self.hashes = stats::merge_bottom(&self.hashes, &other.hashes, self.s);
    }
    fn magnitude(&self) -> f64 {
        self.hashes.len() as f64
    }
}

impl StatValue for Occurrences {
    fn merge(&mut self, other: Self) {
        self.extend(other);
    }
    fn magnitude(&self) -> f64 {
        self.count as f64
    }
}

struct ChunkOutput<V> {
    sample: usize,
    records: Vec<(u64, V)>,
    bases: [u64; 4],
}

/// Records of one unit grouped by key: `keys[g]` owns
/// `entries[offsets[g]..offsets[g + 1]]`, sorted by sample.
struct Grouped<V> {
    keys: Vec<u64>,
    offsets: Vec<usize>,
    entries: Vec<(u32, V)>,
}

#[derive(Clone, Copy, Default)]
struct Moments {
    total: f64,
    sum_sq: f64,
    support: u64,
}

/// Run the pipeline, producing one matrix per configured evaluator.
pub fn run_pipeline(
    dataset: &Dataset,
    config: &PipelineConfig,
) -> Result<PipelineOutput, EngineError> {
    if dataset.len() < 2 {
        return Err(EngineError::TooFewSamples(dataset.len()));
    }
    if config.evaluators.is_empty() {
        return Err(EngineError::Config("no evaluator configured".into()));
    }
    if config.slices < config.workers {
        log::warn!(
            "slices ({}) below worker count ({}); some workers will idle",
            config.slices,
            config.workers
        );
    }
    let kind = config.statistic.kind();
    let evaluators = config
        .evaluators
        .iter()
        .map(|name| {
            let e = affuncs::build(name)?;
            if e.kind() != kind {
                return Err(AfError::StatisticMismatch {
                    evaluator: e.name().to_string(),
                    needs: e.kind(),
                    got: kind,
                });
            }
            if e.name() == "squared_chord" && config.normalization == Normalization::ZScore {
                return Err(AfError::NegativeInput(e.name().to_string()));
            }
            Ok(e)
        })
        .collect::<Result<Vec<_>, _>>()?;

    match &config.statistic {
        StatisticSpec::Kmer { k } => {
            let k = *k;
            if k == 0 || k > stats::MAX_K {
                return Err(StatsError::BadWordLength(k).into());
            }
            let keep_invalid = !config.feature_filter.drop_invalid;
            let evals = evaluators
                .into_iter()
                .map(|e| match e {
                    AnyEvaluator::Histogram(b) => b,
                    _ => unreachable!(),
                })
                .collect();
            let extract = move |chunk: &Chunk<'_>| {
                let mut local: HashMap<u64, u64> = HashMap::new();
                for_each_kmer(chunk, k, keep_invalid, |key| {
                    *local.entry(key).or_insert(0) += 1
                });
                local.into_iter().collect()
            };
            run_typed(dataset, config, &extract, evals, k, key_space(k))
        }
        StatisticSpec::MinHash { k, s, seed } => {
            let (k, s, seed) = (*k, *s, *seed);
            if k == 0 || k > stats::MAX_K {
                return Err(StatsError::BadWordLength(k).into());
            }
            if s == 0 {
                return Err(EngineError::Config("sketch_size must be at least 1".into()));
            }
            let evals = evaluators
                .into_iter()
                .map(|e| match e {
                    AnyEvaluator::Sketch(b) => b,
                    _ => unreachable!(),
                })
                .collect();
            let extract = move |chunk: &Chunk<'_>| {
                let hashes = stats::sketch_chunk(chunk, k, s, seed);
                if hashes.is_empty() {
                    return Vec::new();
                }
                let mut sketch = Sketch::empty(chunk.sample_id, s, k, seed);
                sketch.hashes = hashes;
                vec![(SKETCH_KEY, sketch)]
            };
            run_typed(dataset, config, &extract, evals, k, 1.0)
        }
        StatisticSpec::SpacedWord { pattern } => {
            let evals = evaluators
                .into_iter()
                .map(|e| match e {
                    AnyEvaluator::Spaced(b) => b,
                    _ => unreachable!(),
                })
                .collect();
            let width = pattern.dontcare_count();
            let extract = |chunk: &Chunk<'_>| {
                let mut local: HashMap<u64, Occurrences> = HashMap::new();
                for_each_spaced_word(chunk, pattern, |key, dc| {
                    local
                        .entry(key)
                        .or_insert_with(|| Occurrences::new(width))
                        .push(dc)
                });
                local.into_iter().collect()
            };
            log::info!("spaced-word pattern {pattern}");
            run_typed(
                dataset,
                config,
                &extract,
                evals,
                pattern.weight(),
                key_space(pattern.weight()),
            )
        }
    }
}

fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    i * n + j - i - i * i.saturating_sub(1) / 2
}

fn run_typed<V: StatValue>(
    dataset: &Dataset,
    config: &PipelineConfig,
    extract: &(dyn Fn(&Chunk<'_>) -> Vec<(u64, V)> + Sync),
    evals: Vec<Box<dyn Evaluator<V>>>,
    key_width: usize,
    space: f64,
) -> Result<PipelineOutput, EngineError> {
    let n = dataset.len();
    let workers = config.workers.max(1);
    let window = config.statistic.window();
    let mut stages = Vec::new();

    // Stage 1: parallel extraction with per-chunk combine.
    let chunks = chunk_dataset(dataset, config.slices, window.saturating_sub(1));
    let (outputs, visits) = run_units(workers, chunks.len(), |i| {
        let chunk = &chunks[i];
        let mut bases = [0u64; 4];
        for &b in chunk.core() {
            if let Some(c) = base_code(b) {
                bases[c as usize] += 1;
            }
        }
        ChunkOutput {
            sample: chunk.sample_id,
            records: extract(chunk),
            bases,
        }
    });
    let mut base_counts = vec![[0u64; 4]; n];
    for o in &outputs {
        for (total, b) in base_counts[o.sample].iter_mut().zip(o.bases) {
            *total += b;
        }
    }
    let extracted: u64 = outputs.iter().map(|o| o.records.len() as u64).sum();
    stages.push(StageCounters {
        stage: "extract",
        units: chunks.len(),
        records_in: chunks.len() as u64,
        records_out: extracted,
        workers: workers.min(chunks.len().max(1)),
        unit_visits: visits,
    });

    // Stage 2 and routing. Total aggregation keeps everything on one worker.
    let units = config.unit_count();
    let stage_workers = if config.strategy.kind == StrategyKind::TotalAggregation {
        1
    } else {
        workers
    };
    let filter = &config.feature_filter;
    let filter_active = !filter.is_passthrough() || filter.drop_invalid;
    let text_filter = config.statistic.kind() != StatisticKind::MinHash && filter_active;
    let strategy = config.strategy.kind;
    let outputs: Vec<Mutex<Option<ChunkOutput<V>>>> =
        outputs.into_iter().map(|o| Mutex::new(Some(o))).collect();
    let (routed, visits) = run_units(stage_workers, outputs.len(), |i| {
        let out = outputs[i]
            .lock()
            .expect("poisoned")
            .take()
            .expect("routed once");
        let mut buckets: Vec<Vec<(u64, u32, V)>> = (0..units).map(|_| Vec::new()).collect();
        let mut kept = 0u64;
        for (key, v) in out.records {
            if text_filter && !filter.keep(key, key_width) {
                continue;
            }
            kept += 1;
            let unit = match strategy {
                StrategyKind::TotalAggregation => 0,
                _ => assign_bin(key, units),
            };
            buckets[unit].push((key, out.sample as u32, v));
        }
        (kept, buckets)
    });
    drop(outputs);
    let kept: u64 = routed.iter().map(|r| r.0).sum();
    stages.push(StageCounters {
        stage: "filter",
        units: routed.len(),
        records_in: extracted,
        records_out: kept,
        workers: stage_workers.min(routed.len().max(1)),
        unit_visits: visits,
    });
    if strategy == StrategyKind::TotalAggregation {
        if let Some(limit) = config.memory_limit {
            if kept > limit {
                return Err(EngineError::MemoryBudgetExceeded {
                    records: kept,
                    limit,
                });
            }
        }
    }
    let mut per_unit: Vec<Vec<(u64, u32, V)>> = (0..units).map(|_| Vec::new()).collect();
    for (_, buckets) in routed {
        for (u, b) in buckets.into_iter().enumerate() {
            per_unit[u].extend(b);
        }
    }

    // Stages 3 and 4: per-unit aggregation and value filtering.
    let value_filter = config.value_filter;
    // Each unit's records are taken exactly once by the worker that claims it.
    type Slot<V> = Mutex<Option<Vec<(u64, u32, V)>>>;
    let per_unit: Vec<Slot<V>> = per_unit.into_iter().map(|u| Mutex::new(Some(u))).collect();
    let (grouped, visits) = run_units(stage_workers, units, |u| {
        let mut recs = per_unit[u].lock().expect("poisoned").take().expect("once");
        let records_in = recs.len() as u64;
        recs.sort_by_key(|r| (r.0, r.1));
        let mut g = Grouped {
            keys: Vec::new(),
            offsets: Vec::new(),
            entries: Vec::new(),
        };
        let mut moments = vec![Moments::default(); n];
        let mut aggregated = 0u64;
        let mut iter = recs.into_iter().peekable();
        while let Some((key, sample, mut v)) = iter.next() {
            while let Some(next) = iter.next_if(|r| r.0 == key && r.1 == sample) {
                v.merge(next.2);
            }
            aggregated += 1;
            let m = v.magnitude();
            if !stats::value_filter(m, value_filter.as_ref()) {
                continue;
            }
            if g.keys.last() != Some(&key) {
                g.keys.push(key);
                g.offsets.push(g.entries.len());
            }
            let mo = &mut moments[sample as usize];
            mo.total += m;
            mo.sum_sq += m * m;
            mo.support += 1;
            g.entries.push((sample, v));
        }
        g.offsets.push(g.entries.len());
        (records_in, aggregated, g, moments)
    });
    drop(per_unit);
    let into_agg: u64 = grouped.iter().map(|g| g.0).sum();
    let aggregated: u64 = grouped.iter().map(|g| g.1).sum();
    let surviving: u64 = grouped.iter().map(|g| g.2.entries.len() as u64).sum();
    stages.push(StageCounters {
        stage: "aggregate",
        units,
        records_in: into_agg,
        records_out: aggregated,
        workers: stage_workers.min(units),
        unit_visits: visits.clone(),
    });
    stages.push(StageCounters {
        stage: "value_filter",
        units,
        records_in: aggregated,
        records_out: surviving,
        workers: stage_workers.min(units),
        unit_visits: visits,
    });

    // Barrier: per-sample summaries, reduced in unit order.
    let mut moments = vec![Moments::default(); n];
    for (_, _, _, m) in &grouped {
        for (acc, x) in moments.iter_mut().zip(m) {
            acc.total += x.total;
            acc.sum_sq += x.sum_sq;
            acc.support += x.support;
        }
    }
    let profiles: Vec<SampleProfile> = moments
        .iter()
        .zip(&base_counts)
        .map(|(m, &bases)| {
            let mut p = SampleProfile::new(
                config.normalization,
                m.total,
                m.sum_sq,
                m.support,
                base_frequencies(bases),
                space,
            );
            // Stage-4 transforms are affine: Σ_dense f(h) = f(total) + (|K| − 1)·f(0).
            p.value_sum = p.norm.apply(m.total) + (space - 1.0) * p.norm.missing();
            if p.norm.is_degenerate() {
                log::warn!("z-score over a constant histogram; values are zero");
            }
            p
        })
        .collect();

    // Stage 5: per-key partial evaluation, per-unit accumulators.
    let pairs = n * (n + 1) / 2;
    let e_count = evals.len();
    let k_ctx = config.statistic.key_width();
    let options = &config.options;
    let evals_ref = &evals;
    let profiles_ref = &profiles;
    let grouped_ref = &grouped;
    let (unit_accs, visits) = run_units(stage_workers, units, |u| {
        let g = &grouped_ref[u].2;
        let mut acc: Vec<Acc> = (0..e_count * pairs)
            .map(|i| evals_ref[i / pairs].identity())
            .collect();
        let mut present: Vec<Option<&V>> = vec![None; n];
        let mut pairs_seen = 0u64;
        for (gi, &key) in g.keys.iter().enumerate() {
            let entries = &g.entries[g.offsets[gi]..g.offsets[gi + 1]];
            for (s, v) in entries {
                present[*s as usize] = Some(v);
            }
            for (s, _) in entries {
                let i = *s as usize;
                for j in 0..n {
                    if j < i && present[j].is_some() {
                        continue;
                    }
                    let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
                    let ctx = PairContext {
                        s_id: lo,
                        t_id: hi,
                        s: &profiles_ref[lo],
                        t: &profiles_ref[hi],
                        k: k_ctx,
                        key_space: space,
                        options,
                    };
                    let p = pair_index(n, lo, hi);
                    pairs_seen += 1;
                    for (e, ev) in evals_ref.iter().enumerate() {
                        let part = ev.partial(key, present[lo], present[hi], &ctx);
                        let slot = &mut acc[e * pairs + p];
                        *slot = ev.combine(*slot, part);
                    }
                }
            }
            for (s, _) in entries {
                present[*s as usize] = None;
            }
        }
        (pairs_seen, acc)
    });
    let evaluated: u64 = unit_accs.iter().map(|u| u.0).sum();
    stages.push(StageCounters {
        stage: "evaluate",
        units,
        records_in: surviving,
        records_out: evaluated,
        workers: stage_workers.min(units),
        unit_visits: visits,
    });

    let mut total: Vec<Acc> = (0..e_count * pairs)
        .map(|i| evals[i / pairs].identity())
        .collect();
    for (_, acc) in &unit_accs {
        for (i, a) in acc.iter().enumerate() {
            total[i] = evals[i / pairs].combine(total[i], *a);
        }
    }

    let labels = dataset.labels();
    let matrices = evals
        .iter()
        .enumerate()
        .map(|(e, ev)| {
            let mut values = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i..n {
                    if i == j && ev.orientation() == Orientation::Distance {
                        continue;
                    }
                    let ctx = PairContext {
                        s_id: i,
                        t_id: j,
                        s: &profiles[i],
                        t: &profiles[j],
                        k: k_ctx,
                        key_space: space,
                        options,
                    };
                    let v = ev.finalize(total[e * pairs + pair_index(n, i, j)], &ctx);
                    values[i][j] = v;
                    values[j][i] = v;
                }
            }
            AfMatrix::new(labels.clone(), values, ev.orientation(), ev.name())
        })
        .collect();

    Ok(PipelineOutput {
        matrices,
        sample_totals: profiles.iter().map(|p| p.total).collect(),
        counters: Counters {
            strategy,
            stages,
            shuffled: kept,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(seed: u64, n: usize, len: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dataset::from_named(
            (0..n)
                .map(|i| {
                    let seq: Vec<u8> = (0..len).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect();
                    (format!("s{i}"), vec![seq])
                })
                .collect(),
        )
    }

    #[test]
    fn pair_indices_are_dense() {
        let n = 5;
        let mut seen = vec![false; n * (n + 1) / 2];
        for i in 0..n {
            for j in i..n {
                let p = pair_index(n, i, j);
                assert!(!seen[p]);
                seen[p] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn identical_sequences_zero_distance() {
        let ds = Dataset::from_named(vec![
            ("a", vec![b"ACGTTGCA".to_vec()]),
            ("b", vec![b"ACGTTGCA".to_vec()]),
        ]);
        let out = run_pipeline(&ds, &PipelineConfig::kmer(3, &["euclidean"])).unwrap();
        assert_eq!(out.matrices[0].values, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn strategies_agree() {
        let ds = random_dataset(3, 3, 300);
        let names = ["euclidean", "d2z", "jeffrey", "d2s"];
        let base = run_pipeline(
            &ds,
            &PipelineConfig::kmer(3, &names).with_strategy(Strategy::NONE),
        )
        .unwrap();
        for strategy in [Strategy::TOTAL, Strategy::partial(Some(7))] {
            for workers in [1, 2, 8] {
                let cfg = PipelineConfig::kmer(3, &names)
                    .with_strategy(strategy)
                    .with_workers(workers);
                let out = run_pipeline(&ds, &cfg).unwrap();
                for (a, b) in out.matrices.iter().zip(&base.matrices) {
                    assert!(
                        max_abs_diff(a, b) <= 1e-9,
                        "{} {:?}",
                        a.function_id,
                        strategy
                    );
                }
            }
        }
    }

    #[test]
    fn worker_count_is_bit_identical_for_fixed_units() {
        let ds = random_dataset(5, 4, 400);
        let run = |w| {
            let cfg = PipelineConfig::kmer(3, &["jsd"])
                .with_strategy(Strategy::NONE)
                .with_workers(w);
            run_pipeline(&ds, &cfg).unwrap().matrices
        };
        assert_eq!(run(1), run(8));
    }

    #[test]
    fn multiple_evaluators_share_one_pass() {
        let ds = random_dataset(9, 2, 200);
        let both =
            run_pipeline(&ds, &PipelineConfig::kmer(2, &["euclidean", "manhattan"])).unwrap();
        assert_eq!(both.matrices.len(), 2);
        for (i, name) in ["euclidean", "manhattan"].iter().enumerate() {
            let single = run_pipeline(&ds, &PipelineConfig::kmer(2, &[name])).unwrap();
            assert_eq!(single.matrices[0], both.matrices[i]);
        }
    }

    #[test]
    fn key_in_one_sample_uses_missing_zero() {
        let ds = Dataset::from_named(vec![
            ("a", vec![b"AAA".to_vec()]),
            ("b", vec![b"CCC".to_vec()]),
        ]);
        let out = run_pipeline(&ds, &PipelineConfig::kmer(2, &["euclidean"])).unwrap();
        // AA:2 vs CC:2 → sqrt(4 + 4)
        assert_eq!(out.matrices[0].values[0][1], 8f64.sqrt());
    }

    #[test]
    fn total_strategy_counters() {
        let ds = random_dataset(1, 3, 500);
        let cfg = PipelineConfig::kmer(3, &["euclidean"])
            .with_strategy(Strategy::TOTAL)
            .with_workers(8)
            .with_slices(16);
        let out = run_pipeline(&ds, &cfg).unwrap();
        let c = &out.counters;
        assert_eq!(c.stage("extract").unwrap().workers, 8);
        for stage in ["filter", "aggregate", "value_filter", "evaluate"] {
            assert_eq!(c.stage(stage).unwrap().workers, 1, "{stage}");
        }
        assert_eq!(
            c.stage("aggregate").unwrap().records_in,
            c.stage("extract").unwrap().records_out
        );
    }

    #[test]
    fn shuffle_accounting_and_bin_visits() {
        let ds = random_dataset(2, 3, 500);
        let cfg = PipelineConfig::kmer(3, &["euclidean"])
            .with_strategy(Strategy::partial(Some(64)))
            .with_workers(8);
        let out = run_pipeline(&ds, &cfg).unwrap();
        let c = &out.counters;
        assert_eq!(c.shuffled, c.stage("filter").unwrap().records_out);
        for stage in ["aggregate", "evaluate"] {
            let s = c.stage(stage).unwrap();
            assert_eq!(s.units, 64);
            assert!(s.unit_visits.iter().all(|&v| v == 1));
        }
    }

    #[test]
    fn no_statistic_loss() {
        let ds = Dataset::from_named(vec![
            ("a", vec![b"ACGTNACGTAC".to_vec(), b"GG".to_vec()]),
            ("b", vec![b"TTTTTTTT".to_vec()]),
        ]);
        let cfg = PipelineConfig::kmer(3, &["euclidean"]).with_slices(5);
        let out = run_pipeline(&ds, &cfg).unwrap();
        // a: ACGTNACGTAC has 9 windows, 3 touch N; b: 6 windows
        assert_eq!(out.sample_totals, vec![6.0, 6.0]);
    }

    #[test]
    fn missing_values() {
        let n = Normalizer::from_moments(Normalization::None, 5.0, 25.0, 16.0);
        assert_eq!(
            missing_value(StatisticKind::Kmer, &n),
            MissingValue::Count(0.0)
        );
        // k = 1 counts (2, 0, 0, 2): μ = 1, σ = 1
        let z = Normalizer::from_moments(Normalization::ZScore, 4.0, 8.0, 4.0);
        assert_eq!(
            missing_value(StatisticKind::Kmer, &z),
            MissingValue::Count(-1.0)
        );
        assert_eq!(
            missing_value(StatisticKind::SpacedWord, &z),
            MissingValue::EmptyOccurrences
        );
    }

    #[test]
    fn evaluator_statistic_mismatch() {
        let ds = random_dataset(4, 2, 50);
        let err = run_pipeline(&ds, &PipelineConfig::kmer(3, &["fswm"])).unwrap_err();
        assert!(matches!(
            err,
            EngineError::Evaluator(AfError::StatisticMismatch { .. })
        ));
        let mut cfg = PipelineConfig::kmer(3, &["squared_chord"]);
        cfg.normalization = Normalization::ZScore;
        assert!(matches!(
            run_pipeline(&ds, &cfg),
            Err(EngineError::Evaluator(AfError::NegativeInput(_)))
        ));
    }

    #[test]
    fn memory_budget() {
        let ds = random_dataset(4, 2, 500);
        let mut cfg = PipelineConfig::kmer(4, &["euclidean"]).with_strategy(Strategy::TOTAL);
        cfg.memory_limit = Some(10);
        assert!(matches!(
            run_pipeline(&ds, &cfg),
            Err(EngineError::MemoryBudgetExceeded { .. })
        ));
    }

    #[test]
    fn similarity_to_distance() {
        let m = AfMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                vec![9.0, 5.0, 2.0],
                vec![5.0, 9.0, 1.0],
                vec![2.0, 1.0, 9.0],
            ],
            Orientation::Similarity,
            "d2",
        );
        let d = m.to_distance();
        assert_eq!(
            d.values,
            vec![
                vec![0.0, 0.0, 3.0],
                vec![0.0, 0.0, 4.0],
                vec![3.0, 4.0, 0.0]
            ]
        );
    }

    #[test]
    fn sketches_and_spaced_words_run() {
        let ds = random_dataset(6, 3, 400);
        let cfg = PipelineConfig::new(
            StatisticSpec::MinHash {
                k: 8,
                s: 1000,
                seed: 42,
            },
            &["mash", "mash_jaccard"],
        );
        let out = run_pipeline(&ds, &cfg).unwrap();
        assert_eq!(out.matrices[1].values[0][0], 1.0);
        assert!(out.matrices[0].is_symmetric());
        let cfg = PipelineConfig::new(
            StatisticSpec::SpacedWord {
                pattern: SpacedPattern::parse("1101").unwrap(),
            },
            &["fswm"],
        );
        let out = run_pipeline(&ds, &cfg).unwrap();
        assert!(out.matrices[0].is_symmetric());
    }
}
