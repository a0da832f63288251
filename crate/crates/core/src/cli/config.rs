//! `key=value` run configuration.
//!
//! One assignment per line, `#` starts a comment, blank lines are skipped,
//! keys and values are trimmed. The dotted class names used by the original
//! Java front end (`fade.affunction.Euclidean`, `fade.sw.SwExtractorByBin`,
//! ...) are accepted as aliases so existing files run unchanged.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::affuncs::{self, StatisticKind};
use crate::cli::matrix::MatrixFormat;
use crate::engine::{PipelineConfig, StatisticSpec, Strategy};
use crate::phylo::{Builder, Metric, NoiseSource, SweepConfig};
use crate::seqio::Dataset;
use crate::sigtest::NullModelConfig;
use crate::stats::{FeatureFilter, SpacedPattern, ValueFilter, MAX_K};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: key {key:?} already set on line {first}")]
    DuplicateKey {
        key: String,
        line: usize,
        first: usize,
    },
    #[error("line {line}: unknown task {value:?} (distance, sigtest, robustness, tree)")]
    UnknownTask { value: String, line: usize },
    #[error("task {task} requires key {key:?}")]
    MissingRequiredKey { key: String, task: Task },
    #[error("line {line}: bad value for {key}: {reason}")]
    BadValue {
        key: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Task {
    #[default]
    Distance,
    Sigtest,
    Robustness,
    Tree,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Distance => "distance",
            Task::Sigtest => "sigtest",
            Task::Robustness => "robustness",
            Task::Tree => "tree",
        })
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "distance" => Ok(Task::Distance),
            "sigtest" => Ok(Task::Sigtest),
            "robustness" => Ok(Task::Robustness),
            "tree" => Ok(Task::Tree),
            other => Err(other.to_string()),
        }
    }
}

/// Keys with a meaning in at least one task.
pub const KNOWN_KEYS: &[&str] = &[
    "k",
    "q",
    "l",
    "alpha",
    "pattern",
    "threshold",
    "slices",
    "bins",
    "workers",
    "seed",
    "input",
    "output",
    "task",
    "strategy",
    "evaluator",
    "extractor",
    "aggregator",
    "normalization",
    "filter_include",
    "filter_exclude",
    "value_min",
    "sketch_size",
    "canonical",
    "gold_tree",
    "percents",
    "repeats",
    "noise_source",
    "format",
    "builders",
    "metrics",
    "dump_trees",
    "correction",
    "max_delta",
];

/// Accepted for compatibility with existing config files; no effect here.
const IGNORED_KEYS: &[&str] = &["x", "m"];

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    /// 1-based source line; 0 for command-line overrides.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub task: Task,
    pub entries: BTreeMap<String, Entry>,
    pub warnings: Vec<String>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig {
        base_dir: PathBuf::from("."),
        ..RunConfig::default()
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                text: raw.to_string(),
            });
        };
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                text: raw.to_string(),
            });
        }
        if let Some(prev) = cfg.entries.get(&key) {
            return Err(ConfigError::DuplicateKey {
                key,
                line,
                first: prev.line,
            });
        }
        if IGNORED_KEYS.contains(&key.as_str()) {
            cfg.warnings.push(format!(
                "line {line}: key {key:?} has no effect in this implementation; ignored"
            ));
        } else if !KNOWN_KEYS.contains(&key.as_str()) {
            cfg.warnings
                .push(format!("line {line}: unknown key {key:?}; ignored"));
        }
        cfg.entries.insert(key, Entry { value, line });
    }
    if let Some(e) = cfg.entries.get("task") {
        cfg.task = e.value.parse().map_err(|value| ConfigError::UnknownTask {
            value,
            line: e.line,
        })?;
    }
    Ok(cfg)
}

impl RunConfig {
    /// Resolve relative paths against the directory of `config_path`.
    pub fn at(mut self, config_path: &Path) -> RunConfig {
        self.base_dir = match config_path.parent() {
            Some(dir) if !dir.as_os_str().is_empty() => dir.to_path_buf(),
            _ => PathBuf::from("."),
        };
        self
    }

    /// Command-line override; replaces any value from the file.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim().to_ascii_lowercase();
        if !KNOWN_KEYS.contains(&key.as_str()) && !IGNORED_KEYS.contains(&key.as_str()) {
            self.warnings
                .push(format!("override: unknown key {key:?}; ignored"));
        }
        if key == "task" {
            self.task = value
                .parse()
                .map_err(|value| ConfigError::UnknownTask { value, line: 0 })?;
        }
        self.entries.insert(
            key,
            Entry {
                value: value.trim().to_string(),
                line: 0,
            },
        );
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    fn bad(&self, key: &str, reason: impl fmt::Display) -> ConfigError {
        ConfigError::BadValue {
            key: key.to_string(),
            line: self.line(key),
            reason: reason.to_string(),
        }
    }

    /// Typed value of `key`, if present.
    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| self.bad(key, e)))
            .transpose()
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<T>().map_err(|e| self.bad(key, e)))
                    .collect()
            })
            .transpose()
    }

    fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError::MissingRequiredKey {
                key: key.to_string(),
                task: self.task,
            })
    }

    /// Check the keys the task cannot run without.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.require("input")?;
        if self.task == Task::Robustness {
            self.require("gold_tree")?;
        }
        Ok(())
    }

    fn resolve_path(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Input glob patterns, resolved against the config directory.
    pub fn inputs(&self) -> Result<Vec<String>, ConfigError> {
        Ok(self
            .require("input")?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| self.resolve_path(s).to_string_lossy().into_owned())
            .collect())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve_path(self.get("output").unwrap_or("output"))
    }

    pub fn gold_tree(&self) -> Result<PathBuf, ConfigError> {
        Ok(self.resolve_path(self.require("gold_tree")?))
    }

    pub fn format(&self) -> Result<MatrixFormat, ConfigError> {
        Ok(self.parse("format")?.unwrap_or_default())
    }

    /// Evaluator registry names, with dotted class names mapped.
    pub fn evaluators(&self) -> Result<Vec<String>, ConfigError> {
        let raw = self.get("evaluator").unwrap_or("euclidean");
        let mut out = Vec::new();
        for item in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let name = evaluator_alias(item);
            affuncs::build(&name).map_err(|e| self.bad("evaluator", e))?;
            out.push(name);
        }
        if out.is_empty() {
            return Err(self.bad("evaluator", "empty evaluator list"));
        }
        Ok(out)
    }

    /// Statistic kind from the extractor, aggregator, pattern and evaluators.
    pub fn statistic_kind(&self) -> Result<StatisticKind, ConfigError> {
        let mut kinds = Vec::new();
        for key in ["extractor", "aggregator"] {
            if let Some(v) = self.get(key) {
                kinds.push((
                    key,
                    module_alias(v)
                        .ok_or_else(|| self.bad(key, format!("unknown module {v:?}")))?,
                ));
            }
        }
        if self.get("pattern").is_some() {
            kinds.push(("pattern", StatisticKind::SpacedWord));
        }
        for name in self.evaluators()? {
            let kind = affuncs::build(&name).expect("validated").kind();
            kinds.push(("evaluator", kind));
        }
        let first = kinds[0].1;
        if let Some((key, kind)) = kinds.iter().find(|(_, k)| *k != first) {
            return Err(self.bad(
                key,
                format!("needs {kind} statistics but {} selects {first}", kinds[0].0),
            ));
        }
        Ok(first)
    }

    /// Spaced-word pattern: the `pattern` key, or a seeded default.
    pub fn pattern(&self, reads: bool) -> Result<SpacedPattern, ConfigError> {
        let pattern = match self.get("pattern") {
            Some(p) => SpacedPattern::parse(p).map_err(|e| self.bad("pattern", e))?,
            None => {
                let mode = if reads {
                    PatternMode::Reads
                } else {
                    PatternMode::Assembled
                };
                let p = default_pattern(mode, self.seed()?);
                log::info!("generated spaced-word pattern {p}");
                p
            }
        };
        if let Some(k) = self.parse::<usize>("k")? {
            if k != pattern.len() {
                return Err(self.bad(
                    "k",
                    format!("spaced words need k = pattern length {}", pattern.len()),
                ));
            }
        }
        Ok(pattern)
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        Ok(self.parse("seed")?.unwrap_or(42))
    }

    /// Full engine configuration for `dataset`.
    pub fn pipeline(
        &self,
        dataset: &Dataset,
        workers: Option<usize>,
    ) -> Result<PipelineConfig, ConfigError> {
        let evaluators = self.evaluators()?;
        let seed = self.seed()?;
        let statistic = match self.statistic_kind()? {
            StatisticKind::Kmer => {
                let k = match self.parse::<usize>("k")? {
                    Some(k) if (1..=MAX_K).contains(&k) => k,
                    Some(k) => return Err(self.bad("k", format!("{k} outside 1..={MAX_K}"))),
                    None => {
                        let k = choose_k(dataset);
                        log::info!("k={k} chosen from mean length {:.1}", dataset.mean_length);
                        k
                    }
                };
                StatisticSpec::Kmer { k }
            }
            StatisticKind::MinHash => {
                let k = self.parse::<usize>("k")?.unwrap_or(21);
                if !(1..=MAX_K).contains(&k) {
                    return Err(self.bad("k", format!("{k} outside 1..={MAX_K}")));
                }
                if self.parse::<bool>("canonical")? == Some(false) {
                    log::warn!("canonical=false: sketches always use canonical k-mers");
                }
                StatisticSpec::MinHash {
                    k,
                    s: self.parse("sketch_size")?.unwrap_or(1000),
                    seed: seed as u32,
                }
            }
            StatisticKind::SpacedWord => StatisticSpec::SpacedWord {
                pattern: self.pattern(self.reads_input())?,
            },
        };
        let refs: Vec<&str> = evaluators.iter().map(String::as_str).collect();
        let mut pc = PipelineConfig::new(statistic, &refs);
        let mut strategy: Strategy = self.parse("strategy")?.unwrap_or_default();
        if let Some(bins) = self.parse::<usize>("bins")? {
            strategy.bins = Some(bins.max(1));
        }
        pc.strategy = strategy;
        if let Some(slices) = self.parse::<usize>("slices")? {
            pc = pc.with_slices(slices);
        }
        let workers = workers.or(self.parse("workers")?).unwrap_or(1);
        pc = pc.with_workers(workers);
        pc.feature_filter =
            FeatureFilter::new(self.get("filter_include"), self.get("filter_exclude"))
                .map_err(|e| self.bad("filter_include", e))?;
        pc.value_filter = self.parse::<ValueFilter>("value_min")?;
        pc.normalization = self.parse("normalization")?.unwrap_or_default();
        pc.options.seed = seed;
        if let Some(t) = self.parse::<i64>("threshold")? {
            pc.options.fswm_threshold = t;
        }
        Ok(pc)
    }

    fn reads_input(&self) -> bool {
        self.get("input").is_some_and(|i| {
            let i = i.to_ascii_lowercase();
            [".fastq", ".fq", ".fastq.gz", ".fq.gz"]
                .iter()
                .any(|e| i.ends_with(e))
        })
    }

    /// Null-model settings; `q` may be absent (the caller sweeps defaults).
    pub fn null_model(&self, q: usize) -> Result<NullModelConfig, ConfigError> {
        let d = NullModelConfig::default();
        let cfg = NullModelConfig {
            q,
            runs: self.parse("l")?.unwrap_or(d.runs),
            alpha: self.parse("alpha")?.unwrap_or(d.alpha),
            seed: self.seed()?,
        };
        cfg.validate().map_err(|e| self.bad("l", e))?;
        Ok(cfg)
    }

    /// q values to test: the `q` key (comma list allowed) or the default sweep.
    pub fn q_values(&self) -> Result<Vec<usize>, ConfigError> {
        Ok(self
            .list("q")?
            .unwrap_or_else(|| crate::sigtest::DEFAULT_Q_SWEEP.to_vec()))
    }

    pub fn bonferroni(&self) -> Result<bool, ConfigError> {
        match self
            .get("correction")
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            None | Some("bonferroni") => Ok(true),
            Some("none") => Ok(false),
            Some(other) => {
                Err(self.bad("correction", format!("{other:?} is not bonferroni or none")))
            }
        }
    }

    pub fn builders(&self) -> Result<Vec<Builder>, ConfigError> {
        Ok(self
            .list("builders")?
            .unwrap_or_else(|| vec![Builder::Nj, Builder::Upgma]))
    }

    /// Noise-sweep settings; `kind` picks the default noise source.
    pub fn sweep(
        &self,
        kind: StatisticKind,
        workers: Option<usize>,
    ) -> Result<SweepConfig, ConfigError> {
        let d = SweepConfig::default();
        let mut source = match self.get("noise_source") {
            Some(s) => s
                .parse::<NoiseSource>()
                .map_err(|e| self.bad("noise_source", e))?,
            None if kind == StatisticKind::SpacedWord => {
                NoiseSource::AdditiveUniform { max_delta: None }
            }
            None => NoiseSource::SimulatedPool,
        };
        if let (NoiseSource::AdditiveUniform { .. }, Some(d)) =
            (source, self.parse::<f64>("max_delta")?)
        {
            source = NoiseSource::AdditiveUniform { max_delta: Some(d) };
        }
        let percents: Vec<f64> = self.list("percents")?.unwrap_or(d.percents);
        if let Some(p) = percents.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(self.bad("percents", format!("{p} outside [0, 1]")));
        }
        Ok(SweepConfig {
            builders: self.builders()?,
            metrics: self.list::<Metric>("metrics")?.unwrap_or(d.metrics),
            percents,
            repeats: self.parse("repeats")?.unwrap_or(d.repeats),
            source,
            seed: self.seed()?,
            workers: workers.or(self.parse("workers")?).unwrap_or(1),
        })
    }
}

/// Registry name of an evaluator given as a short name or a dotted class name.
pub fn evaluator_alias(name: &str) -> String {
    let last = name
        .trim()
        .rsplit('.')
        .next()
        .unwrap_or("")
        .to_ascii_lowercase();
    match last.as_str() {
        "mashdistance" => "mash".into(),
        "jensenshannondivergence" => "jsd".into(),
        _ => last,
    }
}

/// Statistic kind selected by an extractor or aggregator name.
pub fn module_alias(name: &str) -> Option<StatisticKind> {
    let lower = name.trim().to_ascii_lowercase();
    if lower.starts_with("fade.kmer.") || lower == "kmer" {
        Some(StatisticKind::Kmer)
    } else if lower.starts_with("fade.sw.") || lower == "spacedword" || lower == "sw" {
        Some(StatisticKind::SpacedWord)
    } else if lower.starts_with("fade.mash.") || lower == "mash" || lower == "minhash" {
        Some(StatisticKind::MinHash)
    } else {
        None
    }
}

/// k = ⌈log₄ L⌉ − 1 for mean length L, clamped to 1..=MAX_K.
///
/// ⌈log₄ L⌉ is the smallest e with 4^e ≥ L. Powers of 4 are exact in f64,
/// so the comparison involves no rounding.
pub fn choose_k_for_length(mean_length: f64) -> usize {
    let mut e = 0usize;
    let mut pow = 1.0f64;
    while pow < mean_length && e <= MAX_K + 1 {
        pow *= 4.0;
        e += 1;
    }
    e.saturating_sub(1).clamp(1, MAX_K)
}

pub fn choose_k(dataset: &Dataset) -> usize {
    choose_k_for_length(dataset.mean_length)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternMode {
    /// Weight 12, 100 don't-care positions.
    Assembled,
    /// Weight 12, 60 don't-care positions.
    Reads,
}

/// Seeded random pattern of weight 12; the first position is always a match.
pub fn default_pattern(mode: PatternMode, seed: u64) -> SpacedPattern {
    const WEIGHT: usize = 12;
    let dontcare = match mode {
        PatternMode::Assembled => 100,
        PatternMode::Reads => 60,
    };
    let len = WEIGHT + dontcare;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = vec![b'0'; len];
    bits[0] = b'1';
    for i in sample_indices(&mut rng, len - 1, WEIGHT - 1).into_vec() {
        bits[i + 1] = b'1';
    }
    SpacedPattern::parse(std::str::from_utf8(&bits).expect("ascii")).expect("valid pattern")
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUNDLED_KMER_CONF: &str = "\n# Input, output and parameters definition\nk=13\nx=3\nm=6\nslices=2048\ntask=distance\n\ninput=data/*.fasta\noutput=distances\n\n# Modules definition\nstrategy=partial_aggregation\nextractor=fade.kmer.fast.FastKmerExtractorByBin         \naggregator=fade.kmer.fast.FastKmerAggregatorByBin           \nevaluator=fade.affunction.Euclidean\n";

    #[test]
    fn bundled_kmer_config() {
        let cfg = parse_config(BUNDLED_KMER_CONF).unwrap();
        assert_eq!(cfg.task, Task::Distance);
        assert_eq!(cfg.get("k"), Some("13"));
        assert_eq!(
            cfg.get("extractor"),
            Some("fade.kmer.fast.FastKmerExtractorByBin")
        );
        assert_eq!(cfg.evaluators().unwrap(), vec!["euclidean"]);
        assert_eq!(cfg.statistic_kind().unwrap(), StatisticKind::Kmer);
        assert_eq!(cfg.warnings.len(), 2);
        assert!(cfg.warnings[0].contains("\"x\""));
        let ds = Dataset::from_named(vec![
            ("a", vec![b"ACGT".to_vec()]),
            ("b", vec![b"ACGA".to_vec()]),
        ]);
        let pc = cfg.pipeline(&ds, None).unwrap();
        assert_eq!(pc.statistic, StatisticSpec::Kmer { k: 13 });
        assert_eq!(pc.slices, 2048);
        assert_eq!(pc.strategy, Strategy::partial(None));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_config("task=banana"),
            Err(ConfigError::UnknownTask { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("k=3\nk=4"),
            Err(ConfigError::DuplicateKey {
                line: 2,
                first: 1,
                ..
            })
        ));
        assert!(matches!(
            parse_config("just text"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        let cfg = parse_config("task=robustness\ninput=x.fa").unwrap();
        assert_eq!(
            cfg.validate(),
            Err(ConfigError::MissingRequiredKey {
                key: "gold_tree".into(),
                task: Task::Robustness
            })
        );
        let cfg = parse_config("input=x\nevaluator=fade.affunction.Nope").unwrap();
        assert!(matches!(
            cfg.evaluators(),
            Err(ConfigError::BadValue { line: 2, .. })
        ));
        let cfg = parse_config("input=x\nevaluator=fswm\nextractor=kmer").unwrap();
        assert!(cfg.statistic_kind().is_err());
    }

    #[test]
    fn aliases() {
        assert_eq!(evaluator_alias("fade.affunction.FSWM"), "fswm");
        assert_eq!(evaluator_alias("fade.affunction.D2Star"), "d2star");
        assert_eq!(evaluator_alias("Mash"), "mash");
        assert_eq!(
            module_alias("fade.sw.SwAggregatorByBin"),
            Some(StatisticKind::SpacedWord)
        );
        assert_eq!(module_alias("Mash"), Some(StatisticKind::MinHash));
    }

    #[test]
    fn k_choice() {
        assert_eq!(choose_k_for_length(16_618.0), 7);
        assert_eq!(choose_k_for_length(4_905_896.0), 11);
        assert_eq!(choose_k_for_length(4_605_552.0), 11);
        assert_eq!(choose_k_for_length(337_515_688.0), 14);
        assert_eq!(choose_k_for_length(16_384.0), 6);
        assert_eq!(choose_k_for_length(16_385.0), 7);
    }

    #[test]
    fn patterns() {
        let a = default_pattern(PatternMode::Assembled, 7);
        assert_eq!((a.len(), a.weight()), (112, 12));
        assert_eq!(a.match_positions()[0], 0);
        let r = default_pattern(PatternMode::Reads, 7);
        assert_eq!((r.len(), r.weight()), (72, 12));
        assert_eq!(a, default_pattern(PatternMode::Assembled, 7));
        let cfg = parse_config("input=x\npattern=1101\nevaluator=fswm").unwrap();
        assert_eq!(cfg.pattern(false).unwrap().to_string(), "1101");
    }

    #[test]
    fn overrides() {
        let mut cfg = parse_config("k=3\ninput=a.fa").unwrap();
        cfg.set("k", "5").unwrap();
        cfg.set("task", "tree").unwrap();
        assert_eq!(cfg.get("k"), Some("5"));
        assert_eq!(cfg.task, Task::Tree);
        assert!(cfg.set("task", "banana").is_err());
    }
}
