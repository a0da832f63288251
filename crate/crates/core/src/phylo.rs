//! Tree building (UPGMA, neighbor joining), Newick text, tree distances
//! (Robinson–Foulds, Matching Cluster) and the noise-injection sweep.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{run_units, AfMatrix};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PhyloError {
    #[error("matrix holds non-finite entry at ({0}, {1})")]
    NonFiniteMatrix(usize, usize),
    #[error("matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("negative distance at ({0}, {1})")]
    NegativeDistance(usize, usize),
    #[error("need at least {needed} taxa, got {got}")]
    TooFewTaxa { needed: usize, got: usize },
    #[error("newick syntax error at byte {pos}: {reason}")]
    SyntaxError { pos: usize, reason: String },
    #[error("duplicate leaf label {0:?}")]
    DuplicateLeafLabel(String),
    #[error("trees have different leaf sets")]
    LeafSetMismatch,
    #[error("noise pool is empty")]
    EmptyPool,
    #[error("noise percent {0} outside [0, 1]")]
    BadPercent(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub label: Option<String>,
    /// Length of the edge to the parent; `None` when unknown.
    pub length: Option<f64>,
}

/// Arena tree. Unrooted trees are stored from an arbitrary internal node.
#[derive(Debug, Clone, PartialEq)]
pub struct PhyloTree {
    pub nodes: Vec<Node>,
    pub root: usize,
    pub rooted: bool,
}

impl PhyloTree {
    fn with_root() -> Self {
        PhyloTree {
            nodes: vec![Node {
                parent: None,
                children: Vec::new(),
                label: None,
                length: None,
            }],
            root: 0,
            rooted: true,
        }
    }

    fn add_node(&mut self, label: Option<String>) -> usize {
        self.nodes.push(Node {
            parent: None,
            children: Vec::new(),
            label,
            length: None,
        });
        self.nodes.len() - 1
    }

    fn attach(&mut self, parent: usize, child: usize, length: Option<f64>) {
        self.nodes[child].parent = Some(parent);
        self.nodes[child].length = length;
        self.nodes[parent].children.push(child);
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        self.nodes[v].children.is_empty()
    }

    /// Leaf node indices in depth-first order.
    pub fn leaves(&self) -> Vec<usize> {
        self.preorder()
            .into_iter()
            .filter(|&v| self.is_leaf(v))
            .collect()
    }

    pub fn leaf_labels(&self) -> Vec<String> {
        self.leaves()
            .into_iter()
            .map(|v| self.nodes[v].label.clone().unwrap_or_default())
            .collect()
    }

    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            out.push(v);
            stack.extend(self.nodes[v].children.iter().rev());
        }
        out
    }

    /// Sum of edge lengths from the root to `v`.
    pub fn depth(&self, mut v: usize) -> f64 {
        let mut d = 0.0;
        while let Some(p) = self.nodes[v].parent {
            d += self.nodes[v].length.unwrap_or(0.0);
            v = p;
        }
        d
    }

    pub fn leaf_by_label(&self, label: &str) -> Option<usize> {
        self.leaves()
            .into_iter()
            .find(|&v| self.nodes[v].label.as_deref() == Some(label))
    }

    /// Path length between two nodes.
    pub fn path_length(&self, a: usize, b: usize) -> f64 {
        let mut ancestors = HashMap::new();
        let mut v = a;
        let mut d = 0.0;
        loop {
            ancestors.insert(v, d);
            match self.nodes[v].parent {
                Some(p) => {
                    d += self.nodes[v].length.unwrap_or(0.0);
                    v = p;
                }
                None => break,
            }
        }
        let mut v = b;
        let mut d = 0.0;
        loop {
            if let Some(da) = ancestors.get(&v) {
                return da + d;
            }
            d += self.nodes[v].length.unwrap_or(0.0);
            v = self.nodes[v].parent.expect("nodes share a root");
        }
    }

    /// Leaf-to-leaf path lengths in the order of `labels`.
    pub fn distance_matrix(&self, labels: &[String]) -> Vec<Vec<f64>> {
        let ids: Vec<usize> = labels
            .iter()
            .map(|l| self.leaf_by_label(l).expect("label present"))
            .collect();
        ids.iter()
            .map(|&a| ids.iter().map(|&b| self.path_length(a, b)).collect())
            .collect()
    }
}

fn validate(m: &AfMatrix, needed: usize) -> Result<(), PhyloError> {
    let n = m.len();
    if n < needed {
        return Err(PhyloError::TooFewTaxa { needed, got: n });
    }
    for i in 0..n {
        for j in 0..n {
            let v = m.values[i][j];
            if !v.is_finite() {
                return Err(PhyloError::NonFiniteMatrix(i, j));
            }
            if v != m.values[j][i] {
                return Err(PhyloError::Asymmetric(i, j));
            }
        }
    }
    Ok(())
}

/// Smallest entry among active rows; ties go to the smallest (i, j).
fn argmin_pair(active: &[usize], score: impl Fn(usize, usize) -> f64) -> (usize, usize) {
    let mut best = (0, 1);
    let mut best_v = f64::INFINITY;
    for a in 0..active.len() {
        for b in a + 1..active.len() {
            let v = score(active[a], active[b]);
            if v < best_v {
                best_v = v;
                best = (a, b);
            }
        }
    }
    best
}

/// Average-linkage clustering; merge heights are half the average distance.
pub fn upgma(m: &AfMatrix) -> Result<PhyloTree, PhyloError> {
    validate(m, 1)?;
    let n = m.len();
    for i in 0..n {
        for j in 0..n {
            if m.values[i][j] < 0.0 {
                return Err(PhyloError::NegativeDistance(i, j));
            }
        }
    }
    let mut tree = PhyloTree::with_root();
    tree.nodes.clear();
    let mut d = m.values.clone();
    let mut node_of: Vec<usize> = (0..n)
        .map(|i| tree.add_node(Some(m.labels[i].clone())))
        .collect();
    let mut size = vec![1usize; n];
    let mut height = vec![0.0f64; n];
    let mut active: Vec<usize> = (0..n).collect();
    while active.len() > 1 {
        let (a, b) = argmin_pair(&active, |i, j| d[i][j]);
        let (i, j) = (active[a], active[b]);
        let h = d[i][j] / 2.0;
        let u = tree.add_node(None);
        tree.attach(u, node_of[i], Some((h - height[i]).max(0.0)));
        tree.attach(u, node_of[j], Some((h - height[j]).max(0.0)));
        for &x in &active {
            if x != i && x != j {
                let v = (size[i] as f64 * d[i][x] + size[j] as f64 * d[j][x])
                    / (size[i] + size[j]) as f64;
                d[i][x] = v;
                d[x][i] = v;
            }
        }
        node_of[i] = u;
        size[i] += size[j];
        height[i] = h;
        active.remove(b);
    }
    tree.root = node_of[active[0]];
    tree.rooted = true;
    Ok(tree)
}

/// Saitou–Nei neighbor joining; the result is unrooted, stored from the
/// final three-way join.
pub fn nj(m: &AfMatrix) -> Result<PhyloTree, PhyloError> {
    validate(m, 3)?;
    let n = m.len();
    let mut tree = PhyloTree::with_root();
    tree.nodes.clear();
    let mut d = m.values.clone();
    let mut node_of: Vec<usize> = (0..n)
        .map(|i| tree.add_node(Some(m.labels[i].clone())))
        .collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut clamped = false;
    let mut clamp = |v: f64| {
        if v < 0.0 {
            clamped = true;
            0.0
        } else {
            v
        }
    };
    while active.len() > 3 {
        let r = active.len() as f64;
        let sums: HashMap<usize, f64> = active
            .iter()
            .map(|&i| (i, active.iter().map(|&j| d[i][j]).sum()))
            .collect();
        let (a, b) = argmin_pair(&active, |i, j| (r - 2.0) * d[i][j] - sums[&i] - sums[&j]);
        let (i, j) = (active[a], active[b]);
        let li = d[i][j] / 2.0 + (sums[&i] - sums[&j]) / (2.0 * (r - 2.0));
        let lj = d[i][j] - li;
        let u = tree.add_node(None);
        tree.attach(u, node_of[i], Some(clamp(li)));
        tree.attach(u, node_of[j], Some(clamp(lj)));
        for &x in &active {
            if x != i && x != j {
                let v = (d[i][x] + d[j][x] - d[i][j]) / 2.0;
                d[i][x] = v;
                d[x][i] = v;
            }
        }
        node_of[i] = u;
        active.remove(b);
    }
    let (i, j, k) = (active[0], active[1], active[2]);
    let center = tree.add_node(None);
    tree.attach(
        center,
        node_of[i],
        Some(clamp((d[i][j] + d[i][k] - d[j][k]) / 2.0)),
    );
    tree.attach(
        center,
        node_of[j],
        Some(clamp((d[i][j] + d[j][k] - d[i][k]) / 2.0)),
    );
    tree.attach(
        center,
        node_of[k],
        Some(clamp((d[i][k] + d[j][k] - d[i][j]) / 2.0)),
    );
    if clamped {
        log::warn!("neighbor joining produced negative branch lengths; clamped to 0");
    }
    tree.root = center;
    tree.rooted = false;
    Ok(tree)
}

/// Re-root at the midpoint of the longest leaf-to-leaf path.
pub fn midpoint_root(tree: &PhyloTree) -> PhyloTree {
    let leaves = tree.leaves();
    if leaves.len() < 2 {
        let mut t = tree.clone();
        t.rooted = true;
        return t;
    }
    let mut best = (leaves[0], leaves[1], f64::NEG_INFINITY);
    for (x, &a) in leaves.iter().enumerate() {
        for &b in &leaves[x + 1..] {
            let d = tree.path_length(a, b);
            if d > best.2 {
                best = (a, b, d);
            }
        }
    }
    let (a, b, total) = best;
    // Path from a up to the common ancestor, then down to b.
    let mut up = vec![a];
    let mut v = a;
    while let Some(p) = tree.nodes[v].parent {
        up.push(p);
        v = p;
    }
    let mut down = vec![b];
    let mut v = b;
    while !up.contains(&v) {
        v = tree.nodes[v].parent.expect("common ancestor exists");
        down.push(v);
    }
    let lca = v;
    let cut = up.iter().position(|&x| x == lca).expect("lca on path");
    let mut path: Vec<usize> = up[..=cut].to_vec();
    path.extend(down.iter().rev().skip(1));

    let half = total / 2.0;
    let mut acc = 0.0;
    for w in path.windows(2) {
        let (x, y) = (w[0], w[1]);
        let len = edge_length(tree, x, y);
        if acc + len >= half {
            return reroot_on_edge(tree, x, y, half - acc);
        }
        acc += len;
    }
    let n = path.len();
    reroot_on_edge(
        tree,
        path[n - 2],
        path[n - 1],
        edge_length(tree, path[n - 2], path[n - 1]),
    )
}

fn edge_length(tree: &PhyloTree, x: usize, y: usize) -> f64 {
    if tree.nodes[x].parent == Some(y) {
        tree.nodes[x].length.unwrap_or(0.0)
    } else {
        tree.nodes[y].length.unwrap_or(0.0)
    }
}

/// New rooted tree with the root on edge (x, y), `from_x` away from x.
fn reroot_on_edge(tree: &PhyloTree, x: usize, y: usize, from_x: f64) -> PhyloTree {
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); tree.nodes.len()];
    for (v, node) in tree.nodes.iter().enumerate() {
        if let Some(p) = node.parent {
            let len = node.length.unwrap_or(0.0);
            adj[v].push((p, len));
            adj[p].push((v, len));
        }
    }
    let len = edge_length(tree, x, y);
    let mut out = PhyloTree::with_root();
    for (start, skip, l) in [
        (x, y, from_x.clamp(0.0, len)),
        (y, x, (len - from_x).clamp(0.0, len)),
    ] {
        copy_subtree(tree, &adj, start, skip, 0, l, &mut out);
    }
    out.rooted = true;
    out
}

/// Copy the component of `v` (entered from `from`) under `parent`, dropping
/// unlabeled nodes left with a single child.
fn copy_subtree(
    tree: &PhyloTree,
    adj: &[Vec<(usize, f64)>],
    v: usize,
    from: usize,
    parent: usize,
    length: f64,
    out: &mut PhyloTree,
) {
    let children: Vec<(usize, f64)> = adj[v].iter().copied().filter(|&(w, _)| w != from).collect();
    if children.len() == 1 && tree.nodes[v].label.is_none() {
        let (w, l) = children[0];
        copy_subtree(tree, adj, w, v, parent, length + l, out);
        return;
    }
    let u = out.add_node(tree.nodes[v].label.clone());
    out.attach(parent, u, Some(length));
    for (w, l) in children {
        copy_subtree(tree, adj, w, v, u, l, out);
    }
}

fn needs_quotes(label: &str) -> bool {
    label.is_empty()
        || label
            .chars()
            .any(|c| c.is_whitespace() || "()[]':;,".contains(c))
}

fn write_label(out: &mut String, label: &str) {
    if needs_quotes(label) {
        out.push('\'');
        out.push_str(&label.replace('\'', "''"));
        out.push('\'');
    } else {
        out.push_str(label);
    }
}

pub fn write_newick(tree: &PhyloTree) -> String {
    fn rec(tree: &PhyloTree, v: usize, out: &mut String) {
        let node = &tree.nodes[v];
        if !node.children.is_empty() {
            out.push('(');
            for (i, &c) in node.children.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                rec(tree, c, out);
            }
            out.push(')');
        }
        if let Some(l) = &node.label {
            write_label(out, l);
        }
        if let Some(len) = node.length {
            out.push(':');
            out.push_str(&format!("{len}"));
        }
    }
    let mut out = String::new();
    rec(tree, tree.root, &mut out);
    out.push(';');
    out
}

struct NewickParser<'a> {
    text: &'a [u8],
    pos: usize,
}

impl NewickParser<'_> {
    fn err<T>(&self, reason: impl Into<String>) -> Result<T, PhyloError> {
        Err(PhyloError::SyntaxError {
            pos: self.pos,
            reason: reason.into(),
        })
    }

    fn skip_ws(&mut self) {
        loop {
            while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.peek() == Some(b'[') {
                while self.pos < self.text.len() && self.text[self.pos] != b']' {
                    self.pos += 1;
                }
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<u8> {
        self.text.get(self.pos).copied()
    }

    fn label(&mut self) -> Result<Option<String>, PhyloError> {
        self.skip_ws();
        if self.peek() == Some(b'\'') {
            self.pos += 1;
            let mut out = Vec::new();
            loop {
                match self.peek() {
                    None => return self.err("unterminated quoted label"),
                    Some(b'\'') if self.text.get(self.pos + 1) == Some(&b'\'') => {
                        out.push(b'\'');
                        self.pos += 2;
                    }
                    Some(b'\'') => {
                        self.pos += 1;
                        break;
                    }
                    Some(c) => {
                        out.push(c);
                        self.pos += 1;
                    }
                }
            }
            return Ok(Some(String::from_utf8_lossy(&out).into_owned()));
        }
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_whitespace() || b"()[]':;,".contains(&c) {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            Ok(None)
        } else {
            Ok(Some(
                String::from_utf8_lossy(&self.text[start..self.pos]).into_owned(),
            ))
        }
    }

    fn length(&mut self) -> Result<Option<f64>, PhyloError> {
        self.skip_ws();
        if self.peek() != Some(b':') {
            return Ok(None);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || b"+-.eE".contains(&c) {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.text[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) => Ok(Some(v)),
            Err(_) => {
                self.pos = start;
                self.err("bad branch length")
            }
        }
    }

    fn subtree(
        &mut self,
        tree: &mut PhyloTree,
        parent: Option<usize>,
    ) -> Result<usize, PhyloError> {
        self.skip_ws();
        let v = match parent {
            None => tree.root,
            Some(_) => tree.add_node(None),
        };
        if self.peek() == Some(b'(') {
            self.pos += 1;
            loop {
                let c = self.subtree(tree, Some(v))?;
                tree.nodes[c].parent = Some(v);
                tree.nodes[v].children.push(c);
                self.skip_ws();
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    Some(_) => return self.err("expected ',' or ')'"),
                    None => return self.err("unbalanced parenthesis"),
                }
            }
        }
        tree.nodes[v].label = self.label()?;
        tree.nodes[v].length = self.length()?;
        Ok(v)
    }
}

pub fn parse_newick(text: &str) -> Result<PhyloTree, PhyloError> {
    let mut p = NewickParser {
        text: text.as_bytes(),
        pos: 0,
    };
    let mut tree = PhyloTree::with_root();
    p.subtree(&mut tree, None)?;
    p.skip_ws();
    if p.peek() != Some(b';') {
        return p.err("expected ';'");
    }
    p.pos += 1;
    p.skip_ws();
    if p.pos != p.text.len() {
        return p.err("trailing text after ';'");
    }
    let mut seen = BTreeSet::new();
    for label in tree.leaf_labels() {
        if !seen.insert(label.clone()) {
            return Err(PhyloError::DuplicateLeafLabel(label));
        }
    }
    tree.rooted = tree.nodes[tree.root].children.len() == 2;
    Ok(tree)
}

/// Leaf set as a bitset over the sorted label list.
type Bits = Vec<u64>;

fn label_index(t1: &PhyloTree, t2: &PhyloTree) -> Result<HashMap<String, usize>, PhyloError> {
    let mut a = t1.leaf_labels();
    let mut b = t2.leaf_labels();
    a.sort();
    b.sort();
    if a != b {
        return Err(PhyloError::LeafSetMismatch);
    }
    Ok(a.into_iter().enumerate().map(|(i, l)| (l, i)).collect())
}

/// Leaf set below every node.
fn clades(tree: &PhyloTree, index: &HashMap<String, usize>) -> Vec<Bits> {
    let words = index.len().div_ceil(64).max(1);
    let mut sets = vec![vec![0u64; words]; tree.nodes.len()];
    for &v in tree.preorder().iter().rev() {
        if tree.is_leaf(v) {
            let i = index[tree.nodes[v].label.as_deref().unwrap_or_default()];
            sets[v][i / 64] |= 1 << (i % 64);
        } else {
            for &c in &tree.nodes[v].children {
                let child = sets[c].clone();
                for (w, x) in sets[v].iter_mut().zip(child) {
                    *w |= x;
                }
            }
        }
    }
    sets
}

fn popcount(b: &Bits) -> usize {
    b.iter().map(|w| w.count_ones() as usize).sum()
}

/// Non-trivial bipartitions, each stored as the side without leaf 0.
fn splits(tree: &PhyloTree, index: &HashMap<String, usize>) -> BTreeSet<Bits> {
    let n = index.len();
    let mut out = BTreeSet::new();
    for (v, mut set) in clades(tree, index).into_iter().enumerate() {
        if v == tree.root {
            continue;
        }
        if set[0] & 1 == 1 {
            for (i, w) in set.iter_mut().enumerate() {
                let bits_here = if (i + 1) * 64 <= n { 64 } else { n - i * 64 };
                let mask = if bits_here == 64 {
                    u64::MAX
                } else {
                    (1u64 << bits_here) - 1
                };
                *w = !*w & mask;
            }
        }
        let size = popcount(&set);
        if size >= 2 && size + 2 <= n {
            out.insert(set);
        }
    }
    out
}

/// Robinson–Foulds distance; rooting is ignored.
pub fn rf_distance(t1: &PhyloTree, t2: &PhyloTree) -> Result<usize, PhyloError> {
    let index = label_index(t1, t2)?;
    let a = splits(t1, &index);
    let b = splits(t2, &index);
    Ok(a.symmetric_difference(&b).count())
}

/// Clades of internal non-root nodes (the root and single leaves are shared
/// by every pair of trees and always match at zero cost).
fn clusters(tree: &PhyloTree, index: &HashMap<String, usize>) -> Vec<Bits> {
    let n = index.len();
    clades(tree, index)
        .into_iter()
        .enumerate()
        .filter(|(v, set)| *v != tree.root && !tree.is_leaf(*v) && popcount(set) < n)
        .map(|(_, s)| s)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn sym_diff(a: &Bits, b: &Bits) -> i64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x ^ y).count_ones() as i64)
        .sum()
}

/// Matching Cluster distance between two rooted trees.
pub fn mcm_distance(t1: &PhyloTree, t2: &PhyloTree) -> Result<u64, PhyloError> {
    let index = label_index(t1, t2)?;
    let a = clusters(t1, &index);
    let b = clusters(t2, &index);
    Ok(min_cost_matching(&mcm_costs(&a, &b)).0 as u64)
}

/// Square cost matrix between two cluster lists padded with empty clusters.
fn mcm_costs(a: &[Bits], b: &[Bits]) -> Vec<Vec<i64>> {
    let size = a.len().max(b.len());
    let empty: Bits = a
        .first()
        .or(b.first())
        .map_or(vec![0], |x| vec![0; x.len()]);
    (0..size)
        .map(|i| {
            let x = a.get(i).unwrap_or(&empty);
            (0..size)
                .map(|j| sym_diff(x, b.get(j).unwrap_or(&empty)))
                .collect()
        })
        .collect()
}

/// Cluster sets of two trees (for inspection and testing).
pub fn cluster_costs(t1: &PhyloTree, t2: &PhyloTree) -> Result<Vec<Vec<i64>>, PhyloError> {
    let index = label_index(t1, t2)?;
    Ok(mcm_costs(&clusters(t1, &index), &clusters(t2, &index)))
}

/// Hungarian algorithm on a square cost matrix: (minimum cost, column of each row).
pub fn min_cost_matching(cost: &[Vec<i64>]) -> (i64, Vec<usize>) {
    let n = cost.len();
    if n == 0 {
        return (0, Vec::new());
    }
    const INF: i64 = i64::MAX / 4;
    // 1-based potentials; p[j] is the row matched to column j.
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i][assignment[i]]).sum();
    (total, assignment)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSource {
    /// Values drawn from off-diagonal entries of simulated matrices.
    SimulatedPool,
    /// Original value plus U(0, max_delta); default max_delta is the largest
    /// finite off-diagonal entry.
    AdditiveUniform { max_delta: Option<f64> },
}

impl FromStr for NoiseSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().to_ascii_lowercase();
        if s == "simulated_pool" || s == "pool" {
            return Ok(NoiseSource::SimulatedPool);
        }
        if s == "additive_uniform" || s == "additive" {
            return Ok(NoiseSource::AdditiveUniform { max_delta: None });
        }
        if let Some(v) = s.strip_prefix("additive_uniform:") {
            let d = v
                .parse::<f64>()
                .map_err(|_| format!("bad max_delta {v:?}"))?;
            return Ok(NoiseSource::AdditiveUniform { max_delta: Some(d) });
        }
        Err(format!("unknown noise source {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub percent: f64,
    pub source: NoiseSource,
    pub repeats: usize,
    pub seed: u64,
}

/// Replace ⌊percent·m⌋ distinct off-diagonal pairs with noisy values.
pub fn inject_noise(
    m: &AfMatrix,
    percent: f64,
    source: NoiseSource,
    pool: &[AfMatrix],
    rng: &mut impl Rng,
) -> Result<AfMatrix, PhyloError> {
    if !(0.0..=1.0).contains(&percent) {
        return Err(PhyloError::BadPercent(percent));
    }
    let n = m.len();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let count = (percent * pairs.len() as f64 + 1e-9).floor() as usize;
    let count = count.min(pairs.len());
    let mut out = m.clone();
    if count == 0 {
        return Ok(out);
    }
    let pool_values: Vec<Vec<f64>> = pool
        .iter()
        .map(AfMatrix::off_diagonal)
        .filter(|v| !v.is_empty())
        .collect();
    if source == NoiseSource::SimulatedPool && pool_values.is_empty() {
        return Err(PhyloError::EmptyPool);
    }
    let max_delta = match source {
        NoiseSource::AdditiveUniform { max_delta: Some(d) } => d,
        _ => m
            .off_diagonal()
            .into_iter()
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max),
    };
    for idx in sample_indices(rng, pairs.len(), count).into_vec() {
        let (i, j) = pairs[idx];
        let v = match source {
            NoiseSource::SimulatedPool => {
                let values = &pool_values[rng.gen_range(0..pool_values.len())];
                values[rng.gen_range(0..values.len())]
            }
            NoiseSource::AdditiveUniform { .. } => {
                m.values[i][j]
                    + if max_delta > 0.0 {
                        rng.gen_range(0.0..max_delta)
                    } else {
                        0.0
                    }
            }
        };
        out.values[i][j] = v;
        out.values[j][i] = v;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builder {
    Nj,
    Upgma,
}

impl Builder {
    pub fn build(self, m: &AfMatrix) -> Result<PhyloTree, PhyloError> {
        match self {
            Builder::Nj => nj(m),
            Builder::Upgma => upgma(m),
        }
    }
}

impl fmt::Display for Builder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Builder::Nj => "nj",
            Builder::Upgma => "upgma",
        })
    }
}

impl FromStr for Builder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nj" | "neighbor_joining" => Ok(Builder::Nj),
            "upgma" => Ok(Builder::Upgma),
            other => Err(format!("unknown tree builder {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Rf,
    Mcm,
}

impl Metric {
    /// Score `tree` against `gold`; MCM midpoint-roots unrooted trees first.
    pub fn score(self, tree: &PhyloTree, gold: &PhyloTree) -> Result<f64, PhyloError> {
        match self {
            Metric::Rf => rf_distance(tree, gold).map(|v| v as f64),
            Metric::Mcm => {
                let t = if tree.rooted {
                    tree.clone()
                } else {
                    midpoint_root(tree)
                };
                let g = if gold.rooted {
                    gold.clone()
                } else {
                    midpoint_root(gold)
                };
                mcm_distance(&t, &g).map(|v| v as f64)
            }
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Rf => "rf",
            Metric::Mcm => "mcm",
        })
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rf" => Ok(Metric::Rf),
            "mcm" => Ok(Metric::Mcm),
            other => Err(format!("unknown tree metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub builders: Vec<Builder>,
    pub metrics: Vec<Metric>,
    pub percents: Vec<f64>,
    pub repeats: usize,
    pub source: NoiseSource,
    pub seed: u64,
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            builders: vec![Builder::Nj, Builder::Upgma],
            metrics: vec![Metric::Rf, Metric::Mcm],
            percents: vec![0.0, 0.1, 0.3, 0.5],
            repeats: 30,
            source: NoiseSource::SimulatedPool,
            seed: 42,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub builder: Builder,
    pub metric: Metric,
    pub percent: f64,
    pub mean: f64,
    pub stddev: f64,
    pub repeats: usize,
    /// Per-repeat scores in repeat order.
    pub scores: Vec<f64>,
}

/// Per (builder, metric, percent): mean and sample standard deviation of
/// the tree distance to `gold` over seeded corruptions. Every builder and
/// metric sees the same corrupted matrices. Similarity matrices are turned
/// into distances after corruption.
pub fn robustness_sweep(
    m: &AfMatrix,
    gold: &PhyloTree,
    cfg: &SweepConfig,
    pool: &[AfMatrix],
) -> Result<Vec<SweepRow>, PhyloError> {
    let mut gold_labels = gold.leaf_labels();
    let mut labels = m.labels.clone();
    gold_labels.sort();
    labels.sort();
    if gold_labels != labels {
        return Err(PhyloError::LeafSetMismatch);
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.percents.len())
        .flat_map(|p| (0..cfg.repeats).map(move |r| (p, r)))
        .collect();
    let (results, _) = run_units(
        cfg.workers,
        jobs.len(),
        |j| -> Result<Vec<f64>, PhyloError> {
            let (p, r) = jobs[j];
            let noisy = corrupted_distance(m, cfg, pool, p, r)?;
            let mut scores = Vec::new();
            for &b in &cfg.builders {
                let tree = b.build(&noisy)?;
                for &metric in &cfg.metrics {
                    scores.push(metric.score(&tree, gold)?);
                }
            }
            Ok(scores)
        },
    );
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (bi, &builder) in cfg.builders.iter().enumerate() {
        for (mi, &metric) in cfg.metrics.iter().enumerate() {
            for (p, &percent) in cfg.percents.iter().enumerate() {
                let slot = bi * cfg.metrics.len() + mi;
                let scores: Vec<f64> = (0..cfg.repeats)
                    .map(|r| results[p * cfg.repeats + r][slot])
                    .collect();
                let (mean, stddev) = mean_std(&scores);
                rows.push(SweepRow {
                    builder,
                    metric,
                    percent,
                    mean,
                    stddev,
                    repeats: cfg.repeats,
                    scores,
                });
            }
        }
    }
    Ok(rows)
}

/// Corrupted matrix of repeat `repeat` at `cfg.percents[percent]`, as
/// distances. Each (percent, repeat) pair has its own random stream.
pub fn corrupted_distance(
    m: &AfMatrix,
    cfg: &SweepConfig,
    pool: &[AfMatrix],
    percent: usize,
    repeat: usize,
) -> Result<AfMatrix, PhyloError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((percent as u64) << 32) | repeat as u64);
    Ok(inject_noise(m, cfg.percents[percent], cfg.source, pool, &mut rng)?.to_distance())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from("builder\tmetric\tpercent\tmean\tstddev\trepeats\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.builder, r.metric, r.percent, r.mean, r.stddev, r.repeats
        ));
    }
    out
}
