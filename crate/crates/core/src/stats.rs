//! Stage 1–4 primitives: statistic extraction (k-mers, MinHash sketches,
//! spaced words), feature and value filters, aggregation, normalization and
//! bin assignment.
//!
//! Statistic keys are `u64` codes. k-mers and spaced-word match projections
//! are 2-bit packed (A=0, C=1, G=2, T=3, most significant symbol first).
//! Windows holding a symbol outside `ACGT` can be kept for Stage-2 testing;
//! they are then tagged with [`INVALID_FLAG`] and packed with 3 bits per
//! symbol (the fifth code stands for any other residue).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use thiserror::Error;

use crate::seqio::{Chunk, Sample};

/// Seed of the 64-bit hash used for sketches when none is configured.
pub const DEFAULT_HASH_SEED: u32 = 42;
/// Seed used to place keys into bins; independent of the sketch seed.
const BIN_SEED: u32 = 0x5eed_b1e5;

pub const INVALID_FLAG: u64 = 1 << 63;
/// Key used for invalid windows too long for the 3-bit packing.
pub const INVALID_SENTINEL: u64 = u64::MAX;
/// Key under which a sample's sketch travels through the pipeline.
pub const SKETCH_KEY: u64 = 0;
/// Largest word length for histogram and spaced-word keys.
pub const MAX_K: usize = 31;

const INVALID_PACK_MAX: usize = 21;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum StatsError {
    #[error("aggregated payloads have different kinds")]
    MixedKinds,
    #[error("invalid feature predicate {pattern:?}: {reason}")]
    InvalidPredicate { pattern: String, reason: String },
    #[error("invalid value condition {0:?}")]
    InvalidCondition(String),
    #[error("invalid spaced pattern {pattern:?}: {reason}")]
    InvalidPattern { pattern: String, reason: String },
    #[error("word length {0} outside 1..={MAX_K}")]
    BadWordLength(usize),
}

/// 64-bit MurmurHash3 (x64, 128-bit variant, first word) of `bytes`.
pub fn hash64(bytes: &[u8], seed: u32) -> u64 {
    let h = fastmurmur3::murmur3_x64_128(bytes, seed as u64);
    h as u64
}

#[inline]
pub fn base_code(b: u8) -> Option<u8> {
    match b {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        _ => None,
    }
}

const BASES: [u8; 4] = *b"ACGT";

/// 2-bit code of a word over `ACGT`; `None` if any other symbol occurs.
pub fn encode_kmer(word: &[u8]) -> Option<u64> {
    word.iter()
        .try_fold(0u64, |acc, &b| base_code(b).map(|c| (acc << 2) | c as u64))
}

pub fn decode_kmer(code: u64, k: usize) -> String {
    (0..k)
        .map(|i| BASES[((code >> (2 * (k - 1 - i))) & 3) as usize] as char)
        .collect()
}

fn encode_invalid(window: &[u8]) -> u64 {
    if window.len() > INVALID_PACK_MAX {
        return INVALID_SENTINEL;
    }
    INVALID_FLAG
        | window.iter().fold(0u64, |acc, &b| {
            (acc << 3) | base_code(b).unwrap_or(4) as u64
        })
}

/// Text of a statistic key of width `k`, as seen by Stage-2 predicates.
pub fn key_text(key: u64, k: usize) -> String {
    if key == INVALID_SENTINEL {
        return "N".repeat(k);
    }
    if key & INVALID_FLAG != 0 {
        return (0..k)
            .map(|i| match (key >> (3 * (k - 1 - i))) & 7 {
                c @ 0..=3 => BASES[c as usize] as char,
                _ => 'N',
            })
            .collect();
    }
    decode_kmer(key, k)
}

pub fn is_invalid_key(key: u64) -> bool {
    key & INVALID_FLAG != 0
}

/// Visit the k-mer key of every window owned by `chunk`.
pub fn for_each_kmer(chunk: &Chunk<'_>, k: usize, keep_invalid: bool, mut f: impl FnMut(u64)) {
    let starts = chunk.window_starts(k);
    if starts.is_empty() {
        return;
    }
    let mask = if k >= 32 {
        u64::MAX
    } else {
        (1u64 << (2 * k)) - 1
    };
    let mut code = 0u64;
    let mut run = 0usize;
    let body = chunk.body;
    for pos in starts.start..starts.end + k - 1 {
        match base_code(body[pos]) {
            Some(c) => {
                code = ((code << 2) | c as u64) & mask;
                run += 1;
            }
            None => run = 0,
        }
        if pos + 1 >= starts.start + k {
            let start = pos + 1 - k;
            if run >= k {
                f(code);
            } else if keep_invalid {
                f(encode_invalid(&body[start..start + k]));
            }
        }
    }
}

/// Aggregatable payloads carried by partial records.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Count(u64),
    /// Sorted distinct hash values, at most `s` of them.
    Sketch {
        hashes: Vec<u64>,
        s: usize,
    },
    DontCare(Occurrences),
}

/// A statistic occurrence emitted by Stage 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialRecord {
    pub key: u64,
    pub sample_id: usize,
    pub value: Payload,
}

/// One unit record per k-mer window of the chunk.
pub fn extract_kmers(chunk: &Chunk<'_>, k: usize, keep_invalid: bool) -> Vec<PartialRecord> {
    let mut out = Vec::new();
    for_each_kmer(chunk, k, keep_invalid, |key| {
        out.push(PartialRecord {
            key,
            sample_id: chunk.sample_id,
            value: Payload::Count(1),
        })
    });
    out
}

/// Sparse k-mer count vector of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct KmerHistogram {
    pub sample_id: usize,
    pub k: usize,
    pub counts: HashMap<u64, u64>,
    pub total: u64,
}

impl KmerHistogram {
    pub fn new(sample_id: usize, k: usize) -> Self {
        KmerHistogram {
            sample_id,
            k,
            counts: HashMap::new(),
            total: 0,
        }
    }

    pub fn add(&mut self, key: u64, count: u64) {
        if count == 0 {
            return;
        }
        *self.counts.entry(key).or_insert(0) += count;
        self.total += count;
    }

    /// Count every valid k-mer of every fragment, without chunking.
    pub fn from_sample(sample: &Sample, k: usize) -> Self {
        let mut hist = KmerHistogram::new(sample.id, k);
        for (fid, frag) in sample.fragments.iter().enumerate() {
            let chunk = Chunk {
                sample_id: sample.id,
                fragment_id: fid,
                offset: 0,
                body: frag,
                left_overlap: 0,
                core_len: frag.len(),
            };
            for_each_kmer(&chunk, k, false, |key| hist.add(key, 1));
        }
        hist
    }

    pub fn get(&self, key: u64) -> u64 {
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn sum_squares(&self) -> f64 {
        self.counts.values().map(|&c| (c as f64) * (c as f64)).sum()
    }
}

/// Bottom-s MinHash sketch over canonical k-mers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sketch {
    pub sample_id: usize,
    pub hashes: Vec<u64>,
    pub s: usize,
    pub k: usize,
    pub seed: u32,
}

impl Sketch {
    pub fn empty(sample_id: usize, s: usize, k: usize, seed: u32) -> Self {
        Sketch {
            sample_id,
            hashes: Vec::new(),
            s,
            k,
            seed,
        }
    }

    pub fn is_full(&self) -> bool {
        self.hashes.len() >= self.s
    }

    /// Union of two sketches keeping the `s` smallest distinct values.
    pub fn merge(&self, other: &Sketch) -> Sketch {
        Sketch {
            hashes: merge_bottom(&self.hashes, &other.hashes, self.s),
            ..self.clone()
        }
    }
}

/// Merge two ascending distinct lists keeping the `s` smallest distinct values.
pub fn merge_bottom(a: &[u64], b: &[u64], s: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(s.min(a.len() + b.len()));
    let (mut i, mut j) = (0, 0);
    while out.len() < s && (i < a.len() || j < b.len()) {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x == y => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(_), Some(&y)) => {
                j += 1;
                y
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        out.push(next);
    }
    out
}

fn revcomp_code(code: u64, k: usize) -> u64 {
    let mut rc = 0u64;
    let mut c = code;
    for _ in 0..k {
        rc = (rc << 2) | (3 - (c & 3));
        c >>= 2;
    }
    rc
}

/// Hash of the canonical (lexicographically smaller strand) form of a k-mer.
pub fn canonical_hash(code: u64, k: usize, seed: u32) -> u64 {
    let canon = code.min(revcomp_code(code, k));
    let mut buf = [0u8; 32];
    for (i, slot) in buf[..k].iter_mut().enumerate() {
        *slot = BASES[((canon >> (2 * (k - 1 - i))) & 3) as usize];
    }
    hash64(&buf[..k], seed)
}

/// Bottom-s sketch of the windows owned by one chunk.
pub fn sketch_chunk(chunk: &Chunk<'_>, k: usize, s: usize, seed: u32) -> Vec<u64> {
    let mut hashes = Vec::new();
    for_each_kmer(chunk, k, false, |code| {
        hashes.push(canonical_hash(code, k, seed))
    });
    hashes.sort_unstable();
    hashes.dedup();
    hashes.truncate(s);
    hashes
}

/// Bottom-s sketch of a whole sample. Logs a warning when fewer than `s`
/// distinct canonical k-mers exist; the smaller sketch stays valid.
pub fn extract_minhash(sample: &Sample, k: usize, s: usize, seed: u32) -> Sketch {
    let mut sketch = Sketch::empty(sample.id, s, k, seed);
    for (fid, frag) in sample.fragments.iter().enumerate() {
        let chunk = Chunk {
            sample_id: sample.id,
            fragment_id: fid,
            offset: 0,
            body: frag,
            left_overlap: 0,
            core_len: frag.len(),
        };
        let part = sketch_chunk(&chunk, k, s, seed);
        sketch.hashes = merge_bottom(&sketch.hashes, &part, s);
    }
    if !sketch.is_full() {
        log::warn!(
            "sketch of sample {} is underfull: {} of {} hashes",
            sample.name,
            sketch.hashes.len(),
            s
        );
    }
    sketch
}

/// Binary pattern of match (`1`) and don't-care (`0`) positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpacedPattern {
    bits: Vec<bool>,
    match_positions: Vec<usize>,
    dontcare_positions: Vec<usize>,
}

impl SpacedPattern {
    pub fn parse(text: &str) -> Result<Self, StatsError> {
        let bad = |reason: &str| StatsError::InvalidPattern {
            pattern: text.to_string(),
            reason: reason.to_string(),
        };
        let bits = text
            .trim()
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                _ => Err(bad("only '0' and '1' are allowed")),
            })
            .collect::<Result<Vec<bool>, _>>()?;
        if bits.first() != Some(&true) {
            return Err(bad("pattern must start with a match position"));
        }
        let match_positions: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
        let dontcare_positions = (0..bits.len()).filter(|&i| !bits[i]).collect();
        if match_positions.len() > MAX_K {
            return Err(bad("weight above 31"));
        }
        Ok(SpacedPattern {
            bits,
            match_positions,
            dontcare_positions,
        })
    }

    pub fn weight(&self) -> usize {
        self.match_positions.len()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn dontcare_count(&self) -> usize {
        self.dontcare_positions.len()
    }

    pub fn match_positions(&self) -> &[usize] {
        &self.match_positions
    }

    pub fn dontcare_positions(&self) -> &[usize] {
        &self.dontcare_positions
    }
}

impl fmt::Display for SpacedPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for SpacedPattern {
    type Err = StatsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SpacedPattern::parse(s)
    }
}

/// Code for don't-care residues outside `ACGT`; always scores as a mismatch.
pub const OTHER_RESIDUE: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpacedWordRecord {
    pub sample_id: usize,
    pub key: u64,
    /// One code per don't-care position (0..=3 for ACGT, 4 otherwise).
    pub dontcare: Vec<u8>,
}

/// Visit `(key, don't-care codes)` for every window owned by the chunk whose
/// match positions are all in `ACGT`.
pub fn for_each_spaced_word(
    chunk: &Chunk<'_>,
    pattern: &SpacedPattern,
    mut f: impl FnMut(u64, &[u8]),
) {
    let mut dc = vec![0u8; pattern.dontcare_count()];
    'windows: for start in chunk.window_starts(pattern.len()) {
        let window = &chunk.body[start..start + pattern.len()];
        let mut key = 0u64;
        for &p in pattern.match_positions() {
            match base_code(window[p]) {
                Some(c) => key = (key << 2) | c as u64,
                None => continue 'windows,
            }
        }
        for (slot, &p) in dc.iter_mut().zip(pattern.dontcare_positions()) {
            *slot = base_code(window[p]).unwrap_or(OTHER_RESIDUE);
        }
        f(key, &dc);
    }
}

pub fn extract_spaced_words(chunk: &Chunk<'_>, pattern: &SpacedPattern) -> Vec<SpacedWordRecord> {
    let mut out = Vec::new();
    for_each_spaced_word(chunk, pattern, |key, dc| {
        out.push(SpacedWordRecord {
            sample_id: chunk.sample_id,
            key,
            dontcare: dc.to_vec(),
        })
    });
    out
}

/// Flat list of don't-care projections sharing one match key.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Occurrences {
    pub width: usize,
    pub count: usize,
    pub data: Vec<u8>,
}

impl Occurrences {
    pub fn new(width: usize) -> Self {
        Occurrences {
            width,
            count: 0,
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, dontcare: &[u8]) {
        debug_assert_eq!(dontcare.len(), self.width);
        self.data.extend_from_slice(dontcare);
        self.count += 1;
    }

    pub fn extend(&mut self, other: Occurrences) {
        self.data.extend(other.data);
        self.count += other.count;
    }

    pub fn get(&self, i: usize) -> &[u8] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> {
        (0..self.count).map(move |i| self.get(i))
    }
}

/// Stage-3 aggregation of all payloads of one (key, sample) group.
pub fn aggregate(values: &[Payload]) -> Result<Payload, StatsError> {
    let mut iter = values.iter();
    let Some(first) = iter.next() else {
        return Ok(Payload::Count(0));
    };
    let mut acc = first.clone();
    for v in iter {
        match (&mut acc, v) {
            (Payload::Count(a), Payload::Count(b)) => *a += b,
            (Payload::Sketch { hashes, s }, Payload::Sketch { hashes: other, .. }) => {
                *hashes = merge_bottom(hashes, other, *s)
            }
            (Payload::DontCare(a), Payload::DontCare(b)) if a.width == b.width => {
                a.extend(b.clone())
            }
            _ => return Err(StatsError::MixedKinds),
        }
    }
    Ok(acc)
}

/// Stage-2 predicate over decoded key text.
#[derive(Debug, Clone)]
pub struct FeatureFilter {
    pub include: Option<Regex>,
    pub exclude: Option<Regex>,
    /// Drop windows with non-ACGT symbols at extraction time.
    pub drop_invalid: bool,
}

impl Default for FeatureFilter {
    fn default() -> Self {
        FeatureFilter {
            include: None,
            exclude: None,
            drop_invalid: true,
        }
    }
}

fn compile(pattern: &str) -> Result<Regex, StatsError> {
    Regex::new(pattern).map_err(|e| StatsError::InvalidPredicate {
        pattern: pattern.to_string(),
        reason: e.to_string(),
    })
}

impl FeatureFilter {
    pub fn new(include: Option<&str>, exclude: Option<&str>) -> Result<Self, StatsError> {
        Ok(FeatureFilter {
            include: include.map(compile).transpose()?,
            exclude: exclude.map(compile).transpose()?,
            drop_invalid: true,
        })
    }

    pub fn keep_invalid(mut self) -> Self {
        self.drop_invalid = false;
        self
    }

    /// True when no predicate needs the decoded key text.
    pub fn is_passthrough(&self) -> bool {
        self.include.is_none() && self.exclude.is_none()
    }

    pub fn keep_text(&self, text: &str) -> bool {
        if let Some(re) = &self.include {
            if !re.is_match(text) {
                return false;
            }
        }
        if let Some(re) = &self.exclude {
            if re.is_match(text) {
                return false;
            }
        }
        true
    }

    pub fn keep(&self, key: u64, k: usize) -> bool {
        if self.drop_invalid && is_invalid_key(key) {
            return false;
        }
        self.is_passthrough() || self.keep_text(&key_text(key, k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
}

/// Stage-4 threshold predicate on aggregated counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueFilter {
    pub op: CmpOp,
    pub threshold: f64,
}

impl ValueFilter {
    pub fn new(op: CmpOp, threshold: f64) -> Self {
        ValueFilter { op, threshold }
    }

    pub fn keep(&self, value: f64) -> bool {
        match self.op {
            CmpOp::Gt => value > self.threshold,
            CmpOp::Ge => value >= self.threshold,
            CmpOp::Lt => value < self.threshold,
            CmpOp::Le => value <= self.threshold,
            CmpOp::Eq => value == self.threshold,
        }
    }
}

impl FromStr for ValueFilter {
    type Err = StatsError;

    /// Accepts `>=2`, `count>=2`, or a bare number meaning `>=`.
    fn from_str(text: &str) -> Result<Self, StatsError> {
        let t = text.trim();
        let t = t.strip_prefix("count").unwrap_or(t).trim_start();
        let (op, rest) = if let Some(r) = t.strip_prefix(">=") {
            (CmpOp::Ge, r)
        } else if let Some(r) = t.strip_prefix("<=") {
            (CmpOp::Le, r)
        } else if let Some(r) = t.strip_prefix("==") {
            (CmpOp::Eq, r)
        } else if let Some(r) = t.strip_prefix('>') {
            (CmpOp::Gt, r)
        } else if let Some(r) = t.strip_prefix('<') {
            (CmpOp::Lt, r)
        } else if let Some(r) = t.strip_prefix('=') {
            (CmpOp::Eq, r)
        } else {
            (CmpOp::Ge, t)
        };
        let threshold = rest
            .trim()
            .parse::<f64>()
            .map_err(|_| StatsError::InvalidCondition(text.to_string()))?;
        Ok(ValueFilter { op, threshold })
    }
}

pub fn value_filter(value: f64, condition: Option<&ValueFilter>) -> bool {
    condition.is_none_or(|c| c.keep(value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    None,
    Frequency,
    ZScore,
}

impl FromStr for Normalization {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "" => Ok(Normalization::None),
            "frequency" | "freq" => Ok(Normalization::Frequency),
            "zscore" | "z-score" | "z" => Ok(Normalization::ZScore),
            other => Err(format!("unknown normalization {other:?}")),
        }
    }
}

/// Per-sample value transform of Stage 4, defined over the dense key space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub mode: Normalization,
    pub total: f64,
    pub mean: f64,
    pub sd: f64,
}

impl Normalizer {
    /// `key_space` is 4^k; moments are over the dense vector, zeros included.
    pub fn from_moments(mode: Normalization, total: f64, sum_sq: f64, key_space: f64) -> Self {
        let mean = total / key_space;
        let var = (sum_sq / key_space - mean * mean).max(0.0);
        let sd = if var <= 1e-12 * mean * mean || var == 0.0 {
            0.0
        } else {
            var.sqrt()
        };
        Normalizer {
            mode,
            total,
            mean,
            sd,
        }
    }

    pub fn for_histogram(mode: Normalization, hist: &KmerHistogram) -> Self {
        Normalizer::from_moments(
            mode,
            hist.total as f64,
            hist.sum_squares(),
            key_space(hist.k),
        )
    }

    /// Zero-variance z-score input; such histograms normalize to all zeros.
    pub fn is_degenerate(&self) -> bool {
        self.mode == Normalization::ZScore && self.sd == 0.0
    }

    #[inline]
    pub fn apply(&self, count: f64) -> f64 {
        match self.mode {
            Normalization::None => count,
            Normalization::Frequency => {
                if self.total > 0.0 {
                    count / self.total
                } else {
                    0.0
                }
            }
            Normalization::ZScore => {
                if self.sd == 0.0 {
                    0.0
                } else {
                    (count - self.mean) / self.sd
                }
            }
        }
    }

    /// Value of a key absent from the histogram.
    pub fn missing(&self) -> f64 {
        self.apply(0.0)
    }
}

/// Number of possible k-mers.
pub fn key_space(k: usize) -> f64 {
    4f64.powi(k as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedHistogram {
    pub k: usize,
    pub values: BTreeMap<u64, f64>,
    /// Value of every key not in `values`.
    pub missing: f64,
    pub degenerate: bool,
}

impl NormalizedHistogram {
    pub fn get(&self, key: u64) -> f64 {
        self.values.get(&key).copied().unwrap_or(self.missing)
    }

    /// Dense vector indexed by k-mer code; only sensible for small k.
    pub fn dense(&self) -> Vec<f64> {
        (0..4u64.pow(self.k as u32)).map(|c| self.get(c)).collect()
    }
}

pub fn normalize(hist: &KmerHistogram, mode: Normalization) -> NormalizedHistogram {
    let norm = Normalizer::for_histogram(mode, hist);
    if norm.is_degenerate() {
        log::warn!(
            "sample {}: z-score over a constant histogram, emitting zeros",
            hist.sample_id
        );
    }
    NormalizedHistogram {
        k: hist.k,
        values: hist
            .counts
            .iter()
            .map(|(&key, &c)| (key, norm.apply(c as f64)))
            .collect(),
        missing: norm.missing(),
        degenerate: norm.is_degenerate(),
    }
}

/// Deterministic bin of a statistic key, identical for every sample.
pub fn assign_bin(key: u64, bins: usize) -> usize {
    if bins <= 1 {
        return 0;
    }
    (hash64(&key.to_le_bytes(), BIN_SEED) % bins as u64) as usize
}
