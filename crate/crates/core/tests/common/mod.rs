//! Shared test support: generators and brute-force oracles that do not go
//! through the library's sparse code paths.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use afkit::seqio::Dataset;
use rand::seq::SliceRandom;
use rand::Rng;

pub const BASES: &[u8; 4] = b"ACGT";

pub fn random_seq(rng: &mut impl Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| BASES[rng.gen_range(0..4)]).collect()
}

/// Substitute each residue with probability `rate` by a different base.
pub fn mutate(seq: &[u8], rate: f64, rng: &mut impl Rng) -> Vec<u8> {
    seq.iter()
        .map(|&b| {
            if rng.gen_bool(rate.clamp(0.0, 1.0)) {
                let alts: Vec<u8> = BASES.iter().copied().filter(|&x| x != b).collect();
                alts[rng.gen_range(0..3)]
            } else {
                b
            }
        })
        .collect()
}

/// Small random dataset: n samples, 1–2 fragments, lengths up to `max_len`,
/// occasional N residues.
pub fn random_dataset(rng: &mut impl Rng, n: usize, max_len: usize) -> Dataset {
    let items = (0..n)
        .map(|i| {
            let frags = (0..rng.gen_range(1..=2))
                .map(|_| {
                    let len = rng.gen_range(1..=max_len);
                    (0..len)
                        .map(|_| {
                            if rng.gen_bool(0.01) {
                                b'N'
                            } else {
                                BASES[rng.gen_range(0..4)]
                            }
                        })
                        .collect()
                })
                .collect();
            (format!("s{i}"), frags)
        })
        .collect();
    Dataset::from_named(items)
}

// ---------------------------------------------------------------------------
// Dense histogram oracle
// ---------------------------------------------------------------------------

fn code(b: u8) -> Option<usize> {
    match b {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        _ => None,
    }
}

/// Dense count vector plus what the background-model statistics need.
pub struct DenseSample {
    pub counts: Vec<f64>,
    /// Number of counted k-mers.
    pub n: f64,
    /// A, C, G, T frequencies over all residues.
    pub freqs: [f64; 4],
}

impl DenseSample {
    pub fn new(fragments: &[Vec<u8>], k: usize) -> Self {
        let size = 4usize.pow(k as u32);
        let mut counts = vec![0.0; size];
        let mut base = [0u64; 4];
        for f in fragments {
            for &b in f {
                if let Some(c) = code(b) {
                    base[c] += 1;
                }
            }
            if f.len() < k {
                continue;
            }
            'win: for start in 0..=f.len() - k {
                let mut idx = 0usize;
                for &b in &f[start..start + k] {
                    match code(b) {
                        Some(c) => idx = idx * 4 + c,
                        None => continue 'win,
                    }
                }
                counts[idx] += 1.0;
            }
        }
        let n = counts.iter().sum();
        let total: u64 = base.iter().sum();
        let freqs = if total == 0 {
            [0.25; 4]
        } else {
            base.map(|c| c as f64 / total as f64)
        };
        DenseSample { counts, n, freqs }
    }

    /// Probability of word `idx` under the order-0 model.
    pub fn background(&self, mut idx: usize, k: usize) -> f64 {
        let mut p = 1.0;
        for _ in 0..k {
            p *= self.freqs[idx % 4];
            idx /= 4;
        }
        p
    }

    fn zscores(&self) -> Vec<f64> {
        let len = self.counts.len() as f64;
        let mean = self.counts.iter().sum::<f64>() / len;
        let var = self
            .counts
            .iter()
            .map(|c| (c - mean) * (c - mean))
            .sum::<f64>()
            / len;
        if var == 0.0 {
            return vec![0.0; self.counts.len()];
        }
        let sd = var.sqrt();
        self.counts.iter().map(|c| (c - mean) / sd).collect()
    }
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Value of histogram function `name` between two dense samples.
pub fn oracle_value(name: &str, s: &DenseSample, t: &DenseSample, k: usize) -> f64 {
    let hs = &s.counts;
    let ht = &t.counts;
    let size = hs.len() as f64;
    let pairs = || hs.iter().zip(ht.iter()).map(|(&a, &b)| (a, b));
    match name {
        "euclidean" => pairs().map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        "manhattan" => pairs().map(|(a, b)| (a - b).abs()).sum(),
        "chebyshev" => pairs().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        "chi2" => pairs()
            .map(|(a, b)| ratio_or_zero((a - b) * (a - b), a + b))
            .sum(),
        "canberra" => pairs()
            .map(|(a, b)| ratio_or_zero((a - b).abs(), a + b))
            .sum(),
        "d2" => pairs().map(|(a, b)| a * b).sum(),
        "d2z" => {
            let (zs, zt) = (s.zscores(), t.zscores());
            zs.iter().zip(&zt).map(|(a, b)| a * b).sum()
        }
        "d2s" => (0..hs.len())
            .map(|w| {
                let x = hs[w] - s.n * s.background(w, k);
                let y = ht[w] - t.n * t.background(w, k);
                ratio_or_zero(x * y, (x * x + y * y).sqrt())
            })
            .sum(),
        "d2star" => (0..hs.len())
            .map(|w| {
                let es = s.n * s.background(w, k);
                let et = t.n * t.background(w, k);
                ratio_or_zero((hs[w] - es) * (ht[w] - et), (es * et).sqrt())
            })
            .sum(),
        "intersection" => pairs()
            .map(|(a, b)| ratio_or_zero(2.0 * a.min(b), a + b))
            .sum(),
        "kulczynski2" => {
            let mu_s = s.n / size;
            let mu_t = t.n / size;
            if mu_s == 0.0 || mu_t == 0.0 {
                return f64::NAN;
            }
            let a_mu = size * (mu_s + mu_t) / (2.0 * mu_s * mu_t);
            a_mu * pairs().map(|(a, b)| a.min(b)).sum::<f64>()
        }
        "harmonic_mean" => {
            2.0 * pairs()
                .map(|(a, b)| ratio_or_zero(a * b, a + b))
                .sum::<f64>()
        }
        "squared_chord" => pairs().map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum(),
        "jeffrey" => {
            let p = |h: f64, n: f64| {
                let eps = 1.0 / (n + size);
                (h + eps) / (n + size * eps)
            };
            pairs()
                .map(|(a, b)| {
                    let (ps, pt) = (p(a, s.n), p(b, t.n));
                    (ps - pt) * (ps / pt).ln()
                })
                .sum()
        }
        "jsd" => {
            let term = |p: f64, m: f64| if p > 0.0 { p * (p / m).log2() } else { 0.0 };
            pairs()
                .map(|(a, b)| {
                    let ps = ratio_or_zero(a, s.n);
                    let pt = ratio_or_zero(b, t.n);
                    let m = 0.5 * (ps + pt);
                    if m > 0.0 {
                        0.5 * term(ps, m) + 0.5 * term(pt, m)
                    } else {
                        0.0
                    }
                })
                .sum()
        }
        "jaccard" => {
            let inter = pairs().filter(|&(a, b)| a > 0.0 && b > 0.0).count();
            let union = pairs().filter(|&(a, b)| a > 0.0 || b > 0.0).count();
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        }
        other => panic!("no oracle for {other}"),
    }
}

pub const SIMILARITIES: &[&str] = &[
    "d2",
    "d2z",
    "d2s",
    "d2star",
    "intersection",
    "kulczynski2",
    "harmonic_mean",
    "jaccard",
];

/// Full oracle matrix; distance diagonals are 0.
pub fn oracle_matrix(name: &str, dataset: &Dataset, k: usize) -> Vec<Vec<f64>> {
    let dense: Vec<DenseSample> = dataset
        .samples
        .iter()
        .map(|s| DenseSample::new(&s.fragments, k))
        .collect();
    let n = dense.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j && !SIMILARITIES.contains(&name) {
                        0.0
                    } else {
                        oracle_value(name, &dense[i], &dense[j], k)
                    }
                })
                .collect()
        })
        .collect()
}

/// |a − b| ≤ rel · max(|a|, |b|, 1); NaN matches NaN, infinities match by sign.
pub fn close(a: f64, b: f64, rel: f64) -> bool {
    if a.is_nan() || b.is_nan() {
        return a.is_nan() && b.is_nan();
    }
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

/// Largest relative deviation, or `None` when NaN/infinity patterns differ.
pub fn max_rel_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> Option<f64> {
    let mut worst = 0.0f64;
    for (ra, rb) in a.iter().zip(b) {
        for (&x, &y) in ra.iter().zip(rb) {
            if x.is_nan() || y.is_nan() || x.is_infinite() || y.is_infinite() {
                if !close(x, y, 0.0) {
                    return None;
                }
                continue;
            }
            worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(1.0));
        }
    }
    Some(worst)
}

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

/// Minimal tree used to generate test matrices; independent of the library.
#[derive(Debug, Clone)]
pub struct TestTree {
    pub parent: Vec<Option<usize>>,
    pub length: Vec<f64>,
    /// Leaf labels by node; `None` for internal nodes.
    pub label: Vec<Option<String>>,
    pub root: usize,
}

impl TestTree {
    fn children(&self, v: usize) -> Vec<usize> {
        (0..self.parent.len())
            .filter(|&c| self.parent[c] == Some(v))
            .collect()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.parent.len())
            .filter(|&v| self.label[v].is_some())
            .collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.leaves()
            .iter()
            .map(|&v| self.label[v].clone().unwrap())
            .collect()
    }

    pub fn newick(&self) -> String {
        fn rec(t: &TestTree, v: usize, out: &mut String) {
            let ch = t.children(v);
            if !ch.is_empty() {
                out.push('(');
                for (i, c) in ch.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    rec(t, *c, out);
                }
                out.push(')');
            }
            if let Some(l) = &t.label[v] {
                out.push_str(l);
            }
            if t.parent[v].is_some() {
                out.push_str(&format!(":{}", t.length[v]));
            }
        }
        let mut s = String::new();
        rec(self, self.root, &mut s);
        s.push(';');
        s
    }

    fn ancestors(&self, mut v: usize) -> Vec<(usize, f64)> {
        let mut out = vec![(v, 0.0)];
        let mut d = 0.0;
        while let Some(p) = self.parent[v] {
            d += self.length[v];
            out.push((p, d));
            v = p;
        }
        out
    }

    /// Leaf path lengths in `leaves()` order.
    pub fn path_matrix(&self) -> Vec<Vec<f64>> {
        let leaves = self.leaves();
        leaves
            .iter()
            .map(|&a| {
                let up: HashMap<usize, f64> = self.ancestors(a).into_iter().collect();
                leaves
                    .iter()
                    .map(|&b| {
                        self.ancestors(b)
                            .into_iter()
                            .find_map(|(v, d)| up.get(&v).map(|da| da + d))
                            .unwrap()
                    })
                    .collect()
            })
            .collect()
    }

    /// Leaf set below every node, as bitmasks over `leaves()` order.
    fn below(&self) -> Vec<u64> {
        let leaves = self.leaves();
        let mut masks = vec![0u64; self.parent.len()];
        for (i, &l) in leaves.iter().enumerate() {
            let mut v = Some(l);
            while let Some(x) = v {
                masks[x] |= 1 << i;
                v = self.parent[x];
            }
        }
        masks
    }

    /// Non-trivial bipartitions as label sets (the side without the first
    /// label in sorted order).
    pub fn splits(&self) -> BTreeSet<BTreeSet<String>> {
        let labels = self.labels();
        let n = labels.len();
        let first = labels.iter().min().unwrap().clone();
        let mut out = BTreeSet::new();
        for (v, m) in self.below().into_iter().enumerate() {
            if v == self.root {
                continue;
            }
            let side: BTreeSet<String> = (0..n)
                .filter(|i| m >> i & 1 == 1)
                .map(|i| labels[i].clone())
                .collect();
            let side = if side.contains(&first) {
                labels
                    .iter()
                    .filter(|l| !side.contains(*l))
                    .cloned()
                    .collect()
            } else {
                side
            };
            if side.len() >= 2 && side.len() <= n - 2 {
                out.insert(side);
            }
        }
        out
    }
}

fn leaf_name(i: usize) -> String {
    format!("t{i}")
}

/// Random unrooted binary tree (root of degree 3) with lengths in [0.1, 1).
pub fn random_binary_tree(rng: &mut impl Rng, n: usize) -> TestTree {
    assert!(n >= 3);
    let mut t = TestTree {
        parent: vec![],
        length: vec![],
        label: vec![],
        root: 0,
    };
    fn add(
        t: &mut TestTree,
        parent: Option<usize>,
        label: Option<String>,
        rng: &mut impl Rng,
    ) -> usize {
        t.parent.push(parent);
        t.length.push(rng.gen_range(0.1..1.0));
        t.label.push(label);
        t.parent.len() - 1
    }
    let root = add(&mut t, None, None, rng);
    t.root = root;
    for i in 0..3 {
        add(&mut t, Some(root), Some(leaf_name(i)), rng);
    }
    for i in 3..n {
        // Subdivide a random edge and hang a new leaf there.
        let edges: Vec<usize> = (0..t.parent.len())
            .filter(|&v| t.parent[v].is_some())
            .collect();
        let v = *edges.choose(rng).unwrap();
        let p = t.parent[v].unwrap();
        let mid = add(&mut t, Some(p), None, rng);
        t.parent[v] = Some(mid);
        add(&mut t, Some(mid), Some(leaf_name(i)), rng);
    }
    t
}

/// Random rooted ultrametric tree: random merges at increasing heights.
pub fn random_clock_tree(rng: &mut impl Rng, n: usize) -> TestTree {
    let mut t = TestTree {
        parent: vec![None; n],
        length: vec![0.0; n],
        label: (0..n).map(|i| Some(leaf_name(i))).collect(),
        root: 0,
    };
    let mut height = vec![0.0f64; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut h = 0.0;
    while active.len() > 1 {
        h += rng.gen_range(0.1..1.0);
        active.shuffle(rng);
        let a = active.pop().unwrap();
        let b = active.pop().unwrap();
        let u = t.parent.len();
        t.parent.push(None);
        t.length.push(0.0);
        t.label.push(None);
        height.push(h);
        for c in [a, b] {
            t.parent[c] = Some(u);
            t.length[c] = h - height[c];
        }
        active.push(u);
    }
    t.root = active[0];
    t
}

/// Evolve `root_seq` down the tree with Jukes–Cantor substitutions at
/// `rate` per unit branch length; returns (label, sequence) per leaf.
pub fn evolve(
    tree: &TestTree,
    root_seq: &[u8],
    rate: f64,
    rng: &mut impl Rng,
) -> Vec<(String, Vec<u8>)> {
    let mut seqs: Vec<Option<Vec<u8>>> = vec![None; tree.parent.len()];
    seqs[tree.root] = Some(root_seq.to_vec());
    let mut stack = vec![tree.root];
    while let Some(v) = stack.pop() {
        for c in tree.children(v) {
            // Probability that a site differs after JC time `rate·len`.
            let d = rate * tree.length[c];
            let p = 0.75 * (1.0 - (-4.0 * d / 3.0).exp());
            let s = mutate(seqs[v].as_ref().unwrap(), p, rng);
            seqs[c] = Some(s);
            stack.push(c);
        }
    }
    tree.leaves()
        .into_iter()
        .map(|v| (tree.label[v].clone().unwrap(), seqs[v].take().unwrap()))
        .collect()
}

// ---------------------------------------------------------------------------
// Matching Cluster oracle
// ---------------------------------------------------------------------------

/// Minimum over all permutations of Σ cost[i][perm[i]].
pub fn brute_force_matching(cost: &[Vec<i64>]) -> i64 {
    fn rec(cost: &[Vec<i64>], row: usize, used: &mut Vec<bool>, acc: i64, best: &mut i64) {
        if row == cost.len() {
            *best = (*best).min(acc);
            return;
        }
        for j in 0..cost.len() {
            if !used[j] {
                used[j] = true;
                rec(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = i64::MAX;
    rec(cost, 0, &mut vec![false; cost.len()], 0, &mut best);
    if cost.is_empty() {
        0
    } else {
        best
    }
}

/// Clusters of every internal node, root included, as label sets.
pub fn clusters_with_root(tree: &afkit::phylo::PhyloTree) -> Vec<BTreeSet<String>> {
    let mut out = Vec::new();
    for v in tree.preorder() {
        if tree.is_leaf(v) {
            continue;
        }
        let mut set = BTreeSet::new();
        let mut stack = vec![v];
        while let Some(x) = stack.pop() {
            if tree.is_leaf(x) {
                set.insert(tree.nodes[x].label.clone().unwrap());
            }
            stack.extend(&tree.nodes[x].children);
        }
        out.push(set);
    }
    out
}

/// Brute-force Matching Cluster distance over root-inclusive cluster lists.
pub fn brute_force_mcm(a: &afkit::phylo::PhyloTree, b: &afkit::phylo::PhyloTree) -> i64 {
    let ca = clusters_with_root(a);
    let cb = clusters_with_root(b);
    let size = ca.len().max(cb.len());
    let empty = BTreeSet::new();
    let cost: Vec<Vec<i64>> = (0..size)
        .map(|i| {
            let x = ca.get(i).unwrap_or(&empty);
            (0..size)
                .map(|j| x.symmetric_difference(cb.get(j).unwrap_or(&empty)).count() as i64)
                .collect()
        })
        .collect();
    brute_force_matching(&cost)
}

// ---------------------------------------------------------------------------
// FSWM oracle
// ---------------------------------------------------------------------------

/// Substitution scores read from the bundled table, rows/columns A C G T N.
pub fn substitution_table() -> [[i64; 5]; 5] {
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/chiaromonte.txt"))
            .unwrap();
    let mut rows = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .skip(1);
    let mut out = [[0i64; 5]; 5];
    for row in out.iter_mut() {
        let fields: Vec<i64> = rows
            .next()
            .unwrap()
            .split_whitespace()
            .skip(1)
            .map(|f| f.parse().unwrap())
            .collect();
        row.copy_from_slice(&fields);
    }
    out
}

fn score_index(b: u8) -> usize {
    code(b).unwrap_or(4)
}

/// (mismatches, don't-care positions) over every pair of windows of `s` and
/// `t` that agree on all match positions (ACGT only there) and score at
/// least `threshold` on the don't-care positions.
pub fn fswm_brute_force(s: &[u8], t: &[u8], pattern: &str, threshold: i64) -> (u64, u64) {
    let p: Vec<bool> = pattern.bytes().map(|b| b == b'1').collect();
    let l = p.len();
    let table = substitution_table();
    let (mut mm, mut delta) = (0u64, 0u64);
    if s.len() < l || t.len() < l {
        return (0, 0);
    }
    for i in 0..=s.len() - l {
        for j in 0..=t.len() - l {
            let matched = (0..l)
                .filter(|&x| p[x])
                .all(|x| code(s[i + x]).is_some() && s[i + x] == t[j + x]);
            if !matched {
                continue;
            }
            let dc: Vec<usize> = (0..l).filter(|&x| !p[x]).collect();
            let score: i64 = dc
                .iter()
                .map(|&x| table[score_index(s[i + x])][score_index(t[j + x])])
                .sum();
            if score >= threshold {
                delta += dc.len() as u64;
                mm += dc
                    .iter()
                    .filter(|&&x| s[i + x] != t[j + x] || code(s[i + x]).is_none())
                    .count() as u64;
            }
        }
    }
    (mm, delta)
}

/// −¾ ln(1 − 4p/3).
pub fn jc(p: f64) -> f64 {
    -0.75 * (1.0 - 4.0 * p / 3.0).ln()
}
