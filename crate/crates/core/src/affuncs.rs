//! AF evaluators under the partial / combine / finalize contract.
//!
//! An evaluator sees one key at a time for one pair of samples. Keys held by
//! neither sample are never visited; each evaluator folds their contribution
//! back in at finalize time from `Acc::keys` (the size of the pair's key union)
//! and the per-sample profiles in [`PairContext`].

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::stats::{Normalization, Normalizer, Occurrences, Sketch, OTHER_RESIDUE};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AfError {
    #[error("unknown evaluator {0:?}")]
    UnknownEvaluator(String),
    #[error("evaluator {evaluator} needs {needs} statistics, pipeline extracts {got}")]
    StatisticMismatch {
        evaluator: String,
        needs: StatisticKind,
        got: StatisticKind,
    },
    #[error("evaluator {0} needs non-negative inputs; z-score normalization is not allowed")]
    NegativeInput(String),
    #[error("substitution matrix: {0}")]
    BadMatrix(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    Distance,
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatisticKind {
    Kmer,
    MinHash,
    SpacedWord,
}

impl fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatisticKind::Kmer => "kmer",
            StatisticKind::MinHash => "minhash",
            StatisticKind::SpacedWord => "spacedword",
        })
    }
}

/// Partial accumulator shared by all evaluators.
///
/// `a` and `b` are evaluator-defined; `keys` counts visited keys (the union
/// of the two supports).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Acc {
    pub a: f64,
    pub b: f64,
    pub keys: u64,
}

impl Acc {
    pub const ZERO: Acc = Acc {
        a: 0.0,
        b: 0.0,
        keys: 0,
    };

    pub fn new(a: f64, b: f64) -> Self {
        Acc { a, b, keys: 1 }
    }

    pub fn sum(self, o: Acc) -> Acc {
        Acc {
            a: self.a + o.a,
            b: self.b + o.b,
            keys: self.keys + o.keys,
        }
    }

    pub fn max(self, o: Acc) -> Acc {
        Acc {
            a: self.a.max(o.a),
            b: self.b + o.b,
            keys: self.keys + o.keys,
        }
    }
}

/// Summary of one sample after Stage 4, shared by all of its pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleProfile {
    /// Σ of raw counts (number of k-mers for histograms).
    pub total: f64,
    pub sum_sq: f64,
    /// Number of keys with a non-zero count.
    pub support: u64,
    /// Order-0 nucleotide frequencies of the sample's residues.
    pub base_freq: [f64; 4],
    /// Stage-4 transform selected in the configuration.
    pub norm: Normalizer,
    /// z-score transform of raw counts, used by D2Z whatever the configuration.
    pub zscore: Normalizer,
    /// Σ over the dense key space of Stage-4 values.
    pub value_sum: f64,
}

impl SampleProfile {
    /// `values_present` is Σ of Stage-4 values over the support.
    pub fn new(
        mode: Normalization,
        total: f64,
        sum_sq: f64,
        support: u64,
        base_freq: [f64; 4],
        key_space: f64,
    ) -> Self {
        let norm = Normalizer::from_moments(mode, total, sum_sq, key_space);
        let zscore = Normalizer::from_moments(Normalization::ZScore, total, sum_sq, key_space);
        SampleProfile {
            total,
            sum_sq,
            support,
            base_freq,
            norm,
            zscore,
            value_sum: 0.0,
        }
    }

    /// Order-0 background probability of a k-mer code.
    pub fn background(&self, code: u64, k: usize) -> f64 {
        (0..k)
            .map(|i| self.base_freq[((code >> (2 * (k - 1 - i))) & 3) as usize])
            .product()
    }
}

/// Base frequencies from residue counts (A, C, G, T).
pub fn base_frequencies(counts: [u64; 4]) -> [f64; 4] {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return [0.25; 4];
    }
    counts.map(|c| c as f64 / total as f64)
}

/// Options that change evaluator behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Kulczynski2 with (μ_s − μ_t) in A_μ.
    pub kulczynski_literal: bool,
    /// JSD with p(w) = h(w)/4^k.
    pub jsd_literal: bool,
    pub fswm_threshold: i64,
    pub substitution: SubstitutionMatrix,
    /// Cross pairs per key above which FSWM subsamples.
    pub fswm_pair_cap: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            kulczynski_literal: false,
            jsd_literal: false,
            fswm_threshold: 0,
            substitution: SubstitutionMatrix::default(),
            fswm_pair_cap: 1_000_000,
            seed: 42,
        }
    }
}

/// Everything an evaluator may read about a pair besides the key values.
#[derive(Debug, Clone, Copy)]
pub struct PairContext<'a> {
    pub s_id: usize,
    pub t_id: usize,
    pub s: &'a SampleProfile,
    pub t: &'a SampleProfile,
    pub k: usize,
    /// 4^k.
    pub key_space: f64,
    pub options: &'a EvalOptions,
}

impl PairContext<'_> {
    /// Number of keys held by neither sample.
    pub fn complement(&self, acc: &Acc) -> f64 {
        (self.key_space - acc.keys as f64).max(0.0)
    }
}

pub trait Evaluator<V>: Send + Sync {
    fn name(&self) -> &'static str;
    fn orientation(&self) -> Orientation;
    fn kind(&self) -> StatisticKind;

    fn identity(&self) -> Acc {
        Acc::ZERO
    }

    /// Contribution of one key; `None` stands for the statistic's missing value.
    fn partial(&self, key: u64, s: Option<&V>, t: Option<&V>, ctx: &PairContext<'_>) -> Acc;

    fn combine(&self, x: Acc, y: Acc) -> Acc {
        x.sum(y)
    }

    fn finalize(&self, acc: Acc, ctx: &PairContext<'_>) -> f64;
}

/// Evaluators of the three statistic kinds behind one type.
pub enum AnyEvaluator {
    Histogram(Box<dyn Evaluator<u64>>),
    Sketch(Box<dyn Evaluator<Sketch>>),
    Spaced(Box<dyn Evaluator<Occurrences>>),
}

impl AnyEvaluator {
    pub fn name(&self) -> &'static str {
        match self {
            AnyEvaluator::Histogram(e) => e.name(),
            AnyEvaluator::Sketch(e) => e.name(),
            AnyEvaluator::Spaced(e) => e.name(),
        }
    }

    pub fn orientation(&self) -> Orientation {
        match self {
            AnyEvaluator::Histogram(e) => e.orientation(),
            AnyEvaluator::Sketch(e) => e.orientation(),
            AnyEvaluator::Spaced(e) => e.orientation(),
        }
    }

    pub fn kind(&self) -> StatisticKind {
        match self {
            AnyEvaluator::Histogram(_) => StatisticKind::Kmer,
            AnyEvaluator::Sketch(_) => StatisticKind::MinHash,
            AnyEvaluator::Spaced(_) => StatisticKind::SpacedWord,
        }
    }
}

impl fmt::Debug for AnyEvaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AnyEvaluator({})", self.name())
    }
}

/// Histogram evaluators, in registry order.
pub const HISTOGRAM_EVALUATORS: [&str; 16] = [
    "euclidean",
    "manhattan",
    "chebyshev",
    "chi2",
    "canberra",
    "d2",
    "d2z",
    "d2s",
    "d2star",
    "intersection",
    "kulczynski2",
    "harmonic_mean",
    "squared_chord",
    "jeffrey",
    "jsd",
    "jaccard",
];

/// Every registered evaluator name.
pub fn evaluator_names() -> Vec<&'static str> {
    let mut names = HISTOGRAM_EVALUATORS.to_vec();
    names.extend(["mash", "mash_jaccard", "fswm"]);
    names
}

/// Build an evaluator from its registry name (case-insensitive).
pub fn build(name: &str) -> Result<AnyEvaluator, AfError> {
    let lower = name.trim().to_ascii_lowercase();
    if let Ok(f) = lower.parse::<HistFn>() {
        return Ok(AnyEvaluator::Histogram(Box::new(f)));
    }
    match lower.as_str() {
        "mash" => Ok(AnyEvaluator::Sketch(Box::new(Mash { similarity: false }))),
        "mash_jaccard" => Ok(AnyEvaluator::Sketch(Box::new(Mash { similarity: true }))),
        "fswm" => Ok(AnyEvaluator::Spaced(Box::new(Fswm))),
        _ => Err(AfError::UnknownEvaluator(name.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistFn {
    Euclidean,
    Manhattan,
    Chebyshev,
    Chi2,
    Canberra,
    D2,
    D2z,
    D2s,
    D2star,
    Intersection,
    Kulczynski2,
    HarmonicMean,
    SquaredChord,
    Jeffrey,
    Jsd,
    Jaccard,
}

impl FromStr for HistFn {
    type Err = AfError;
    fn from_str(s: &str) -> Result<Self, AfError> {
        use HistFn::*;
        Ok(match s {
            "euclidean" => Euclidean,
            "manhattan" => Manhattan,
            "chebyshev" => Chebyshev,
            "chi2" | "chisquare" => Chi2,
            "canberra" => Canberra,
            "d2" => D2,
            "d2z" => D2z,
            "d2s" => D2s,
            "d2star" | "d2*" => D2star,
            "intersection" => Intersection,
            "kulczynski2" => Kulczynski2,
            "harmonic_mean" | "harmonicmean" => HarmonicMean,
            "squared_chord" | "squaredchord" => SquaredChord,
            "jeffrey" => Jeffrey,
            "jsd" | "jensenshannon" => Jsd,
            "jaccard" => Jaccard,
            other => return Err(AfError::UnknownEvaluator(other.to_string())),
        })
    }
}

/// Largest k for which D2S enumerates the complement key set.
pub const D2S_ENUMERATION_MAX_K: usize = 8;

static D2S_WARNED: AtomicBool = AtomicBool::new(false);
static KULCZYNSKI_WARNED: AtomicBool = AtomicBool::new(false);
static FSWM_CAP_WARNED: AtomicBool = AtomicBool::new(false);

fn warn_once(flag: &AtomicBool, msg: impl FnOnce() -> String) {
    if !flag.swap(true, Ordering::Relaxed) {
        log::warn!("{}", msg());
    }
}

#[inline]
fn stage4(v: Option<&u64>, norm: &Normalizer) -> f64 {
    match v {
        Some(&c) => norm.apply(c as f64),
        None => norm.missing(),
    }
}

#[inline]
fn raw(v: Option<&u64>) -> f64 {
    v.map_or(0.0, |&c| c as f64)
}

/// Jeffrey's smoothed probability of a key with count `h`.
#[inline]
fn smoothed(h: f64, total: f64, key_space: f64) -> f64 {
    let eps = 1.0 / (total + key_space);
    (h + eps) / (total + key_space * eps)
}

#[inline]
fn xlog2_ratio(p: f64, m: f64) -> f64 {
    if p > 0.0 {
        p * (p / m).log2()
    } else {
        0.0
    }
}

impl HistFn {
    pub fn name(self) -> &'static str {
        HISTOGRAM_EVALUATORS[self as usize]
    }

    /// Contribution of a key with the given Stage-4 values; used for both
    /// visited keys and the complement (where both are missing values).
    fn term(self, vs: f64, vt: f64) -> f64 {
        use HistFn::*;
        match self {
            Euclidean => (vs - vt) * (vs - vt),
            Manhattan | Chebyshev => (vs - vt).abs(),
            Chi2 => {
                if vs + vt > 0.0 {
                    (vs - vt) * (vs - vt) / (vs + vt)
                } else {
                    0.0
                }
            }
            Canberra => {
                if vs + vt > 0.0 {
                    (vs - vt).abs() / (vs + vt)
                } else {
                    0.0
                }
            }
            D2 => vs * vt,
            Intersection => {
                if vs + vt > 0.0 {
                    2.0 * vs.min(vt) / (vs + vt)
                } else {
                    0.0
                }
            }
            Kulczynski2 => vs.min(vt),
            HarmonicMean => {
                if vs + vt != 0.0 {
                    vs * vt / (vs + vt)
                } else {
                    0.0
                }
            }
            SquaredChord => {
                let d = vs.sqrt() - vt.sqrt();
                d * d
            }
            D2z | D2s | D2star | Jeffrey | Jsd | Jaccard => unreachable!("not a Stage-4 term"),
        }
    }

    fn d2s_terms(hs: f64, ht: f64, es: f64, et: f64) -> (f64, f64) {
        let (cs, ct) = (hs - es, ht - et);
        let den = (cs * cs + ct * ct).sqrt();
        let observed = if den > 0.0 { cs * ct / den } else { 0.0 };
        let den0 = (es * es + et * et).sqrt();
        let absent = if den0 > 0.0 { es * et / den0 } else { 0.0 };
        (observed, absent)
    }
}

impl Evaluator<u64> for HistFn {
    fn name(&self) -> &'static str {
        HistFn::name(*self)
    }

    fn orientation(&self) -> Orientation {
        use HistFn::*;
        match self {
            D2 | D2z | D2s | D2star | Intersection | Kulczynski2 | HarmonicMean | Jaccard => {
                Orientation::Similarity
            }
            _ => Orientation::Distance,
        }
    }

    fn kind(&self) -> StatisticKind {
        StatisticKind::Kmer
    }

    fn partial(&self, key: u64, s: Option<&u64>, t: Option<&u64>, ctx: &PairContext<'_>) -> Acc {
        use HistFn::*;
        match self {
            D2z => Acc::new(stage4(s, &ctx.s.zscore) * stage4(t, &ctx.t.zscore), 0.0),
            D2s | D2star => {
                let es = ctx.s.total * ctx.s.background(key, ctx.k);
                let et = ctx.t.total * ctx.t.background(key, ctx.k);
                let (hs, ht) = (raw(s), raw(t));
                if *self == D2s {
                    let (observed, absent) = HistFn::d2s_terms(hs, ht, es, et);
                    Acc::new(observed, absent)
                } else {
                    let den = (es * et).sqrt();
                    if den > 0.0 {
                        Acc::new((hs - es) * (ht - et) / den, den)
                    } else {
                        Acc::new(0.0, 0.0)
                    }
                }
            }
            Jeffrey => {
                let ps = smoothed(raw(s), ctx.s.total, ctx.key_space);
                let pt = smoothed(raw(t), ctx.t.total, ctx.key_space);
                Acc::new((ps - pt) * (ps / pt).ln(), 0.0)
            }
            Jsd => {
                let (ps, pt) = jsd_probs(raw(s), raw(t), ctx);
                let m = 0.5 * (ps + pt);
                let v = if m > 0.0 {
                    0.5 * (xlog2_ratio(ps, m) + xlog2_ratio(pt, m))
                } else {
                    0.0
                };
                Acc::new(v, 0.0)
            }
            Jaccard => {
                let both = raw(s) > 0.0 && raw(t) > 0.0;
                Acc::new(if both { 1.0 } else { 0.0 }, 0.0)
            }
            f => Acc::new(f.term(stage4(s, &ctx.s.norm), stage4(t, &ctx.t.norm)), 0.0),
        }
    }

    fn combine(&self, x: Acc, y: Acc) -> Acc {
        if *self == HistFn::Chebyshev {
            x.max(y)
        } else {
            x.sum(y)
        }
    }

    fn finalize(&self, acc: Acc, ctx: &PairContext<'_>) -> f64 {
        use HistFn::*;
        let rest = ctx.complement(&acc);
        let (ms, mt) = (ctx.s.norm.missing(), ctx.t.norm.missing());
        match self {
            Euclidean => (acc.a + rest * self.term(ms, mt)).sqrt(),
            Chebyshev => {
                if rest > 0.0 {
                    acc.a.max(self.term(ms, mt))
                } else {
                    acc.a
                }
            }
            HarmonicMean => 2.0 * (acc.a + rest * self.term(ms, mt)),
            Kulczynski2 => {
                let mu_s = ctx.s.value_sum / ctx.key_space;
                let mu_t = ctx.t.value_sum / ctx.key_space;
                if mu_s == 0.0 || mu_t == 0.0 {
                    warn_once(&KULCZYNSKI_WARNED, || {
                        "kulczynski2 undefined for a sample with zero mean".to_string()
                    });
                    return f64::NAN;
                }
                let spread = if ctx.options.kulczynski_literal {
                    mu_s - mu_t
                } else {
                    mu_s + mu_t
                };
                let a_mu = ctx.key_space * spread / (2.0 * mu_s * mu_t);
                a_mu * (acc.a + rest * self.term(ms, mt))
            }
            Manhattan | Chi2 | Canberra | D2 | Intersection | SquaredChord => {
                acc.a + rest * self.term(ms, mt)
            }
            D2z => acc.a + rest * ctx.s.zscore.missing() * ctx.t.zscore.missing(),
            D2s => {
                if ctx.k > D2S_ENUMERATION_MAX_K {
                    warn_once(&D2S_WARNED, || {
                        format!(
                            "d2s: k={} exceeds {}; keys absent from both samples are ignored",
                            ctx.k, D2S_ENUMERATION_MAX_K
                        )
                    });
                    return acc.a;
                }
                let all: f64 = (0..4u64.pow(ctx.k as u32))
                    .map(|w| {
                        let es = ctx.s.total * ctx.s.background(w, ctx.k);
                        let et = ctx.t.total * ctx.t.background(w, ctx.k);
                        HistFn::d2s_terms(0.0, 0.0, es, et).1
                    })
                    .sum();
                acc.a + (all - acc.b)
            }
            D2star => {
                let per_base: f64 = (0..4)
                    .map(|i| (ctx.s.base_freq[i] * ctx.t.base_freq[i]).sqrt())
                    .sum();
                let all = (ctx.s.total * ctx.t.total).sqrt() * per_base.powi(ctx.k as i32);
                acc.a + (all - acc.b)
            }
            Jeffrey => {
                let ps = smoothed(0.0, ctx.s.total, ctx.key_space);
                let pt = smoothed(0.0, ctx.t.total, ctx.key_space);
                acc.a + rest * (ps - pt) * (ps / pt).ln()
            }
            Jsd => acc.a,
            Jaccard => {
                if acc.keys == 0 {
                    log::info!(
                        "jaccard: samples {} and {} both have empty support, similarity 1",
                        ctx.s_id,
                        ctx.t_id
                    );
                    1.0
                } else {
                    acc.a / acc.keys as f64
                }
            }
        }
    }
}

fn jsd_probs(hs: f64, ht: f64, ctx: &PairContext<'_>) -> (f64, f64) {
    if ctx.options.jsd_literal {
        return (hs / ctx.key_space, ht / ctx.key_space);
    }
    let p = |h: f64, n: f64| if n > 0.0 { h / n } else { 0.0 };
    (p(hs, ctx.s.total), p(ht, ctx.t.total))
}

/// Mash estimate of the Jaccard index from two bottom-s sketches.
pub fn mash_jaccard(a: &[u64], b: &[u64], s: usize) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j) = (0, 0);
    let (mut seen, mut shared) = (0usize, 0usize);
    while seen < s && (i < a.len() || j < b.len()) {
        match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) if x == y => {
                shared += 1;
                i += 1;
                j += 1;
            }
            (Some(x), Some(y)) if x < y => i += 1,
            (Some(_), Some(_)) => j += 1,
            (Some(_), None) => i += 1,
            (None, _) => j += 1,
        }
        seen += 1;
    }
    shared as f64 / seen as f64
}

/// Mash distance for Jaccard estimate `j`; infinite when `j` is 0.
pub fn mash_distance(j: f64, k: usize) -> f64 {
    if j <= 0.0 {
        return f64::INFINITY;
    }
    -(1.0 / k as f64) * (2.0 * j / (1.0 + j)).ln()
}

struct Mash {
    similarity: bool,
}

impl Evaluator<Sketch> for Mash {
    fn name(&self) -> &'static str {
        if self.similarity {
            "mash_jaccard"
        } else {
            "mash"
        }
    }

    fn orientation(&self) -> Orientation {
        if self.similarity {
            Orientation::Similarity
        } else {
            Orientation::Distance
        }
    }

    fn kind(&self) -> StatisticKind {
        StatisticKind::MinHash
    }

    fn partial(
        &self,
        _key: u64,
        s: Option<&Sketch>,
        t: Option<&Sketch>,
        _ctx: &PairContext<'_>,
    ) -> Acc {
        let empty: &[u64] = &[];
        let size = s.or(t).map_or(1, |x| x.s);
        let a = s.map_or(empty, |x| &x.hashes[..]);
        let b = t.map_or(empty, |x| &x.hashes[..]);
        Acc::new(mash_jaccard(a, b, size), 0.0)
    }

    fn finalize(&self, acc: Acc, ctx: &PairContext<'_>) -> f64 {
        // one sketch key per sample: no visited key means both sketches are empty
        let j = if acc.keys == 0 { 1.0 } else { acc.a };
        if self.similarity {
            j
        } else {
            mash_distance(j, ctx.k)
        }
    }
}

/// Nucleotide substitution scores indexed by residue code (ACGT, then other).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubstitutionMatrix {
    pub scores: [[i64; 5]; 5],
}

const BUNDLED_MATRIX: &str = include_str!("../data/chiaromonte.txt");

impl Default for SubstitutionMatrix {
    fn default() -> Self {
        SubstitutionMatrix::parse(BUNDLED_MATRIX).expect("bundled substitution matrix")
    }
}

impl SubstitutionMatrix {
    /// Whitespace-separated table with a header row of symbols. Rows and
    /// columns for `A`, `C`, `G`, `T` are required; an `N` row and column
    /// cover other residues and default to the table minimum.
    pub fn parse(text: &str) -> Result<Self, AfError> {
        let bad = |m: String| AfError::BadMatrix(m);
        let mut lines = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty());
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("empty".into()))?
            .split_whitespace()
            .map(|sym| symbol_index(sym).ok_or_else(|| bad(format!("unknown symbol {sym:?}"))))
            .collect::<Result<_, _>>()?;
        let mut scores = [[None::<i64>; 5]; 5];
        for line in lines {
            let mut fields = line.split_whitespace();
            let sym = fields.next().unwrap_or_default();
            let row = symbol_index(sym).ok_or_else(|| bad(format!("unknown symbol {sym:?}")))?;
            let values: Vec<i64> = fields
                .map(|v| v.parse().map_err(|_| bad(format!("bad score {v:?}"))))
                .collect::<Result<_, _>>()?;
            if values.len() != header.len() {
                return Err(bad(format!("row {sym} has {} scores", values.len())));
            }
            for (&col, v) in header.iter().zip(values) {
                scores[row][col] = Some(v);
            }
        }
        let min = scores
            .iter()
            .flatten()
            .flatten()
            .copied()
            .min()
            .unwrap_or(0);
        let mut out = [[0i64; 5]; 5];
        for r in 0..5 {
            for c in 0..5 {
                out[r][c] = match scores[r][c] {
                    Some(v) => v,
                    None if r == 4 || c == 4 => min,
                    None => return Err(bad("missing ACGT score".into())),
                };
            }
        }
        Ok(SubstitutionMatrix { scores: out })
    }

    #[inline]
    pub fn score(&self, a: u8, b: u8) -> i64 {
        self.scores[a.min(OTHER_RESIDUE) as usize][b.min(OTHER_RESIDUE) as usize]
    }
}

fn symbol_index(sym: &str) -> Option<usize> {
    match sym {
        "A" | "a" => Some(0),
        "C" | "c" => Some(1),
        "G" | "g" => Some(2),
        "T" | "t" => Some(3),
        "N" | "n" | "*" => Some(4),
        _ => None,
    }
}

/// Jukes–Cantor corrected distance for mismatch proportion `p`.
pub fn jukes_cantor(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    if p >= 0.75 {
        return f64::INFINITY;
    }
    // + 0.0 turns the −0 of p = 0 into 0.
    -0.75 * (1.0 - 4.0 / 3.0 * p).ln() + 0.0
}

/// Match statistics of one spaced-word pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FswmCounts {
    pub mismatches: u64,
    pub positions: u64,
}

/// Score and count the cross pairs of two occurrence lists of one key.
/// Pairs beyond `cap` are replaced by `cap` uniform draws seeded from `seed`.
pub fn fswm_key(
    s: &Occurrences,
    t: &Occurrences,
    matrix: &SubstitutionMatrix,
    threshold: i64,
    cap: usize,
    seed: u64,
) -> FswmCounts {
    let mut out = FswmCounts::default();
    let mut visit = |x: &[u8], y: &[u8]| {
        let score: i64 = x.iter().zip(y).map(|(&a, &b)| matrix.score(a, b)).sum();
        if score >= threshold {
            out.positions += x.len() as u64;
            out.mismatches += x
                .iter()
                .zip(y)
                .filter(|(&a, &b)| a != b || a == OTHER_RESIDUE)
                .count() as u64;
        }
    };
    let pairs = s.count.saturating_mul(t.count);
    if pairs <= cap {
        for x in s.iter() {
            for y in t.iter() {
                visit(x, y);
            }
        }
    } else {
        warn_once(&FSWM_CAP_WARNED, || {
            format!("fswm: {pairs} cross pairs on one key, subsampling {cap}")
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..cap {
            let i = rng.gen_range(0..s.count);
            let j = rng.gen_range(0..t.count);
            visit(s.get(i), t.get(j));
        }
    }
    out
}

struct Fswm;

impl Evaluator<Occurrences> for Fswm {
    fn name(&self) -> &'static str {
        "fswm"
    }

    fn orientation(&self) -> Orientation {
        Orientation::Distance
    }

    fn kind(&self) -> StatisticKind {
        StatisticKind::SpacedWord
    }

    fn partial(
        &self,
        key: u64,
        s: Option<&Occurrences>,
        t: Option<&Occurrences>,
        ctx: &PairContext<'_>,
    ) -> Acc {
        let (Some(s), Some(t)) = (s, t) else {
            return Acc::new(0.0, 0.0);
        };
        let seed = ctx.options.seed
            ^ key.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ ((ctx.s_id as u64) << 32 | ctx.t_id as u64);
        let c = fswm_key(
            s,
            t,
            &ctx.options.substitution,
            ctx.options.fswm_threshold,
            ctx.options.fswm_pair_cap,
            seed,
        );
        Acc::new(c.mismatches as f64, c.positions as f64)
    }

    fn finalize(&self, acc: Acc, ctx: &PairContext<'_>) -> f64 {
        if acc.b == 0.0 {
            log::warn!(
                "fswm: no matches between samples {} and {}",
                ctx.s_id,
                ctx.t_id
            );
            return f64::NAN;
        }
        let p = acc.a / acc.b;
        if p >= 0.75 {
            log::warn!(
                "fswm: saturated distance between samples {} and {}",
                ctx.s_id,
                ctx.t_id
            );
        }
        jukes_cantor(p)
    }
}
