//! Evaluation metrics: edge recovery against a ground truth, binary graph summaries,
//! ICC(3,1) test–retest reliability, and group-difference testing on edges.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{n_pairs, upper_pairs};
use crate::simgen::stream_seed;

pub type Edge = (usize, usize);

fn edge_set(edges: &[Edge]) -> BTreeSet<Edge> {
    edges.iter().map(|&(a, b)| if a < b { (a, b) } else { (b, a) }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// TP/(TP+FN); 1 when there are no true edges (nothing can be missed).
    pub fn sensitivity(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }

    /// TN/(TN+FP); 1 when every pair is a true edge.
    pub fn specificity(&self) -> f64 {
        ratio_or_one(self.tn, self.tn + self.fp)
    }
}

fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn confusion(est: &[Edge], truth: &[Edge], p: usize) -> ConfusionCounts {
    let est = edge_set(est);
    let truth = edge_set(truth);
    let tp = est.intersection(&truth).count() as u64;
    let fp = est.len() as u64 - tp;
    let fn_ = truth.len() as u64 - tp;
    let tn = n_pairs(p) as u64 - tp - fp - fn_;
    ConfusionCounts { tp, tn, fp, fn_ }
}

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / den.sqrt()
}

/// ROC points `(1 − specificity, sensitivity)` for each estimate on a path.
pub fn roc_points(path: &[Vec<Edge>], truth: &[Edge], p: usize) -> Vec<(f64, f64)> {
    path.iter()
        .map(|est| {
            let c = confusion(est, truth, p);
            (1.0 - c.specificity(), c.sensitivity())
        })
        .collect()
}

/// Trapezoidal area under the ROC curve traced by a sparsity path, closed with (0,0) and (1,1).
pub fn auc(path: &[Vec<Edge>], truth: &[Edge], p: usize) -> Result<f64> {
    if path.is_empty() {
        return Err(Error::input("AUC needs a nonempty path"));
    }
    let curve = roc_curve(roc_points(path, truth, p));
    Ok(curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum())
}

/// Endpoint-augmented ROC curve sorted by false-positive rate, ties merged by max sensitivity.
pub fn roc_curve(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for (x, y) in pts {
        match out.last_mut() {
            Some(last) if last.0 == x => last.1 = last.1.max(y),
            _ => out.push((x, y)),
        }
    }
    out
}

/// `Σ|Ω̂ − Ω| / Σ|Ω|` over all entries.
pub fn rel_l1_error(omega_hat: &DMatrix<f64>, omega_true: &DMatrix<f64>) -> Result<f64> {
    if omega_hat.shape() != omega_true.shape() {
        return Err(Error::input(format!(
            "shape mismatch: {:?} vs {:?}",
            omega_hat.shape(),
            omega_true.shape()
        )));
    }
    let den: f64 = omega_true.iter().map(|v| v.abs()).sum();
    if den == 0.0 {
        return Err(Error::input("reference matrix has zero L1 norm"));
    }
    Ok((omega_hat - omega_true).iter().map(|v| v.abs()).sum::<f64>() / den)
}

/// Unweighted undirected graph stored as sorted adjacency lists.
#[derive(Debug, Clone)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(edges: &[Edge], p: usize) -> Result<Self> {
        let mut adj = vec![Vec::new(); p];
        for &(a, b) in &edge_set(edges) {
            if a == b || b >= p {
                return Err(Error::input(format!("edge ({a}, {b}) invalid for p = {p}")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for nb in &mut adj {
            nb.sort_unstable();
        }
        Ok(Self { adj })
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].binary_search(&b).is_ok()
    }

    /// Hop distances from `src`; `usize::MAX` marks unreachable nodes.
    pub fn bfs(&self, src: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_nodes()];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    fn induced(&self, nodes: &[usize]) -> Graph {
        let mut edges = Vec::new();
        for (i, &a) in nodes.iter().enumerate() {
            for (j, &b) in nodes.iter().enumerate().skip(i + 1) {
                if self.has_edge(a, b) {
                    edges.push((i, j));
                }
            }
        }
        Graph::new(&edges, nodes.len()).expect("induced subgraph edges are valid")
    }

    pub fn global_efficiency(&self) -> f64 {
        let p = self.n_nodes();
        if p < 2 {
            return 0.0;
        }
        let total: f64 = (0..p)
            .map(|i| {
                self.bfs(i)
                    .iter()
                    .filter(|&&d| d != 0 && d != usize::MAX)
                    .map(|&d| 1.0 / d as f64)
                    .sum::<f64>()
            })
            .sum();
        total / (p * (p - 1)) as f64
    }

    /// Fraction of closed neighbour pairs; 0 for nodes of degree < 2.
    pub fn local_clustering(&self, i: usize) -> f64 {
        let nb = &self.adj[i];
        let k = nb.len();
        if k < 2 {
            return 0.0;
        }
        let mut closed = 0usize;
        for (x, &a) in nb.iter().enumerate() {
            for &b in &nb[x + 1..] {
                if self.has_edge(a, b) {
                    closed += 1;
                }
            }
        }
        closed as f64 / (k * (k - 1) / 2) as f64
    }

    pub fn summaries(&self) -> GraphSummaries {
        let p = self.n_nodes();
        let mean = |f: &dyn Fn(usize) -> f64| if p == 0 { 0.0 } else { (0..p).map(f).sum::<f64>() / p as f64 };
        let mut path_sum = 0usize;
        let mut connected = 0usize;
        let mut disconnected = 0usize;
        for i in 0..p {
            for (j, &d) in self.bfs(i).iter().enumerate().skip(i + 1) {
                if d == usize::MAX {
                    disconnected += 1;
                } else {
                    path_sum += d;
                    connected += 1;
                    let _ = j;
                }
            }
        }
        GraphSummaries {
            clustering: mean(&|i| self.local_clustering(i)),
            char_path_length: (connected > 0).then(|| path_sum as f64 / connected as f64),
            disconnected_pairs: disconnected,
            local_efficiency: mean(&|i| self.induced(&self.adj[i]).global_efficiency()),
            global_efficiency: self.global_efficiency(),
            mean_degree: mean(&|i| self.degree(i) as f64),
        }
    }
}

pub fn global_efficiency(edges: &[Edge], p: usize) -> Result<f64> {
    Ok(Graph::new(edges, p)?.global_efficiency())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSummaries {
    pub clustering: f64,
    /// Mean hop distance over connected pairs; `None` when no pair is connected.
    pub char_path_length: Option<f64>,
    pub disconnected_pairs: usize,
    pub local_efficiency: f64,
    pub global_efficiency: f64,
    pub mean_degree: f64,
}

impl GraphSummaries {
    pub const NAMES: [&'static str; 5] =
        ["clustering", "char_path_length", "local_efficiency", "global_efficiency", "mean_degree"];

    /// Values in [`Self::NAMES`] order; a missing path length is reported as NaN.
    pub fn values(&self) -> [f64; 5] {
        [
            self.clustering,
            self.char_path_length.unwrap_or(f64::NAN),
            self.local_efficiency,
            self.global_efficiency,
            self.mean_degree,
        ]
    }
}

pub fn graph_summaries(edges: &[Edge], p: usize) -> Result<GraphSummaries> {
    Ok(Graph::new(edges, p)?.summaries())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    Poor,
    Fair,
    Moderate,
    Strong,
    NearPerfect,
}

impl Agreement {
    /// Values at or below 0 are grouped with the lowest band.
    pub fn classify(icc: f64) -> Self {
        match icc {
            v if v <= 0.2 => Agreement::Poor,
            v if v <= 0.4 => Agreement::Fair,
            v if v <= 0.6 => Agreement::Moderate,
            v if v <= 0.8 => Agreement::Strong,
            _ => Agreement::NearPerfect,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Agreement::Poor => "poor",
            Agreement::Fair => "fair",
            Agreement::Moderate => "moderate",
            Agreement::Strong => "strong",
            Agreement::NearPerfect => "near perfect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Icc {
    pub icc: f64,
    pub label: Agreement,
    pub bms: f64,
    pub ems: f64,
    pub n_subjects: usize,
    pub k_sessions: usize,
}

/// ICC(3,1) of an `n_subjects × k_sessions` table via a two-way ANOVA without replication.
pub fn icc31(x: &DMatrix<f64>) -> Result<Icc> {
    let (n, k) = x.shape();
    if n < 2 || k < 2 {
        return Err(Error::input(format!("ICC needs at least 2 subjects and 2 sessions, got {n}x{k}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("ICC table contains non-finite values"));
    }
    let grand = x.mean();
    let ss_total: f64 = x.iter().map(|v| (v - grand).powi(2)).sum();
    let ss_rows: f64 = k as f64 * x.row_iter().map(|r| (r.mean() - grand).powi(2)).sum::<f64>();
    // residuals by sequential row then column centring, so identical sessions give exactly zero
    let mut resid = x.clone();
    for mut r in resid.row_iter_mut() {
        let m = r.mean();
        r.add_scalar_mut(-m);
    }
    for mut c in resid.column_iter_mut() {
        let m = c.mean();
        c.add_scalar_mut(-m);
    }
    let ss_err = resid.norm_squared();
    let bms = ss_rows / (n - 1) as f64;
    let ems = ss_err / ((n - 1) * (k - 1)) as f64;
    let den = bms + (k - 1) as f64 * ems;
    // relative scale guards against round-off masquerading as variance
    let cells = (n * k) as f64;
    if ss_total <= f64::EPSILON * grand.abs().max(1.0).powi(2) * cells || den <= 1e-12 * ss_total / cells {
        return Err(Error::Domain("ICC undefined: no between-subject or residual variance".into()));
    }
    let icc = (bms - ems) / den;
    Ok(Icc {
        icc,
        label: Agreement::classify(icc),
        bms,
        ems,
        n_subjects: n,
        k_sessions: k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DweResult {
    pub statistic: Vec<f64>,
    pub p_values: Vec<f64>,
    pub significant: Vec<bool>,
    pub n_perm: usize,
}

impl DweResult {
    pub fn n_significant(&self) -> usize {
        self.significant.iter().filter(|&&s| s).count()
    }
}

fn abs_mean_diff(rows: &[&[f64]], in_a: &[bool], n_a: usize, m: usize) -> Vec<f64> {
    let n_b = rows.len() - n_a;
    let mut sa = vec![0.0; m];
    let mut sb = vec![0.0; m];
    for (row, &a) in rows.iter().zip(in_a) {
        let acc = if a { &mut sa } else { &mut sb };
        for (s, v) in acc.iter_mut().zip(row.iter()) {
            *s += v;
        }
    }
    sa.iter()
        .zip(&sb)
        .map(|(a, b)| (a / n_a as f64 - b / n_b as f64).abs())
        .collect()
}

fn canonical_rows(g: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut rows: Vec<&[f64]> = g.iter().map(|v| v.as_slice()).collect();
    rows.sort_by(|x, y| {
        x.iter()
            .zip(y.iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    rows
}

/// Benjamini–Hochberg step-up rejections at level `q`.
pub fn benjamini_hochberg(p_values: &[f64], q: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let cutoff = order
        .iter()
        .enumerate()
        .filter(|(rank, &i)| p_values[i] <= (rank + 1) as f64 * q / m as f64)
        .map(|(rank, _)| rank + 1)
        .last()
        .unwrap_or(0);
    let mut out = vec![false; m];
    for &i in &order[..cutoff] {
        out[i] = true;
    }
    out
}

/// Edgewise label-permutation test of `|mean_A − mean_B|` with BH control at `fdr_q`.
/// Each permutation draws from its own seeded stream, so results do not depend on threading.
pub fn dwe_test(group_a: &[Vec<f64>], group_b: &[Vec<f64>], n_perm: usize, fdr_q: f64, seed: u64) -> Result<DweResult> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::input("both groups need at least one subject"));
    }
    let m = group_a[0].len();
    if group_a.iter().chain(group_b).any(|v| v.len() != m) {
        return Err(Error::input("all subject vectors must have the same length"));
    }
    if !(0.0..=1.0).contains(&fdr_q) {
        return Err(Error::input(format!("FDR level must be in [0, 1], got {fdr_q}")));
    }
    if n_perm < 100 {
        log::warn!("only {n_perm} permutations; p-values will be coarse");
    }
    // canonical subject order makes the permutation draws independent of input order
    let mut rows = canonical_rows(group_a);
    rows.extend(canonical_rows(group_b));
    let n_a = group_a.len();
    let labels: Vec<bool> = (0..rows.len()).map(|i| i < n_a).collect();
    let observed = abs_mean_diff(&rows, &labels, n_a, m);
    let slack: Vec<f64> = observed.iter().map(|o| o * 1e-12).collect();

    let exceed = (0..n_perm)
        .into_par_iter()
        .fold(
            || vec![0u32; m],
            |mut acc, b| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, b as u64));
                let mut perm = labels.clone();
                perm.shuffle(&mut rng);
                let stat = abs_mean_diff(&rows, &perm, n_a, m);
                for e in 0..m {
                    if stat[e] >= observed[e] - slack[e] {
                        acc[e] += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u32; m],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let p_values: Vec<f64> = exceed
        .iter()
        .map(|&c| (1.0 + c as f64) / (1.0 + n_perm as f64))
        .collect();
    let significant = benjamini_hochberg(&p_values, fdr_q);
    Ok(DweResult {
        statistic: observed,
        p_values,
        significant,
        n_perm,
    })
}

/// Node-to-module labels with ids `1..=G`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleAssignment {
    labels: Vec<usize>,
    n_modules: usize,
}

impl ModuleAssignment {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::input("module assignment is empty"));
        }
        if labels.contains(&0) {
            return Err(Error::input("module ids start at 1"));
        }
        let n_modules = *labels.iter().max().unwrap();
        Ok(Self { labels, n_modules })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn n_modules(&self) -> usize {
        self.n_modules
    }

    pub fn module_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_modules];
        for &g in &self.labels {
            sizes[g - 1] += 1;
        }
        sizes
    }

    /// Block index of the pair's modules `(g1 ≥ g2)` in lower-triangular row order.
    fn block_of(&self, a: usize, b: usize) -> usize {
        let (g1, g2) = {
            let (x, y) = (self.labels[a] - 1, self.labels[b] - 1);
            if x >= y {
                (x, y)
            } else {
                (y, x)
            }
        };
        g1 * (g1 + 1) / 2 + g2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockChiSquare {
    /// 1-based module ids with `g1 >= g2`.
    pub g1: usize,
    pub g2: usize,
    pub q: usize,
    pub expected: f64,
    pub x2: f64,
    pub p_value: f64,
    /// Set when the expected count is zero and X² is reported as 0.
    pub degenerate: bool,
}

fn chi_terms(counts: &[usize], expected: &[f64]) -> Vec<f64> {
    counts
        .iter()
        .zip(expected)
        .map(|(&q, &e)| if e > 0.0 { (q as f64 - e).powi(2) / e } else { 0.0 })
        .collect()
}

/// Per-block goodness of fit of DWE counts against a uniform spread over all pairs,
/// with permutation p-values from redistributing the DWEs uniformly at random.
pub fn module_chi_square(
    dwe_mask: &[bool],
    modules: &ModuleAssignment,
    n_perm: usize,
    seed: u64,
) -> Result<Vec<BlockChiSquare>> {
    let p = modules.n_nodes();
    if dwe_mask.len() != n_pairs(p) {
        return Err(Error::input(format!(
            "mask has {} entries but {p} nodes give {} pairs",
            dwe_mask.len(),
            n_pairs(p)
        )));
    }
    let g = modules.n_modules();
    let n_blocks = g * (g + 1) / 2;
    let pair_block: Vec<usize> = upper_pairs(p).map(|(a, b)| modules.block_of(a, b)).collect();
    let mut block_pairs = vec![0usize; n_blocks];
    let mut q = vec![0usize; n_blocks];
    for (i, &blk) in pair_block.iter().enumerate() {
        block_pairs[blk] += 1;
        if dwe_mask[i] {
            q[blk] += 1;
        }
    }
    let total: usize = q.iter().sum();
    let p_star = if pair_block.is_empty() { 0.0 } else { total as f64 / pair_block.len() as f64 };
    let expected: Vec<f64> = block_pairs.iter().map(|&n| p_star * n as f64).collect();
    let observed = chi_terms(&q, &expected);

    let exceed = (0..n_perm)
        .into_par_iter()
        .fold(
            || vec![0u32; n_blocks],
            |mut acc, b| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, b as u64));
                let mut counts = vec![0usize; n_blocks];
                for i in index::sample(&mut rng, pair_block.len(), total) {
                    counts[pair_block[i]] += 1;
                }
                for (k, x2) in chi_terms(&counts, &expected).into_iter().enumerate() {
                    if x2 >= observed[k] - 1e-12 * observed[k] {
                        acc[k] += 1;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u32; n_blocks],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );

    let mut out = Vec::with_capacity(n_blocks);
    for g1 in 0..g {
        for g2 in 0..=g1 {
            let k = g1 * (g1 + 1) / 2 + g2;
            out.push(BlockChiSquare {
                g1: g1 + 1,
                g2: g2 + 1,
                q: q[k],
                expected: expected[k],
                x2: observed[k],
                p_value: (1.0 + exceed[k] as f64) / (1.0 + n_perm as f64),
                degenerate: expected[k] == 0.0,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_edges(p: usize, prob: f64, rng: &mut ChaCha8Rng) -> Vec<Edge> {
        upper_pairs(p).filter(|_| rng.random::<f64>() < prob).collect()
    }

    #[test]
    fn confusion_trivial_cases() {
        let truth = vec![(0, 1), (1, 2), (2, 3)];
        let c = confusion(&truth, &truth, 5);
        assert_eq!((c.fp, c.fn_, c.tp), (0, 0, 3));
        let c = confusion(&[], &truth, 5);
        assert_eq!((c.tp, c.fn_, c.tn), (0, 3, 7));
        assert_eq!(c.total(), 10);
    }

    #[test]
    fn confusion_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = 12;
            let est = random_edges(p, 0.3, &mut rng);
            let truth = random_edges(p, 0.2, &mut rng);
            let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
            for a in 0..p {
                for b in a + 1..p {
                    match (est.contains(&(a, b)), truth.contains(&(a, b))) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => tn += 1,
                    }
                }
            }
            assert_eq!(confusion(&est, &truth, p), ConfusionCounts { tp, tn, fp, fn_ });
        }
    }

    #[test]
    fn mcc_examples() {
        assert_eq!(mcc(&ConfusionCounts { tp: 4, tn: 6, fp: 0, fn_: 0 }), 1.0);
        let c = ConfusionCounts { tp: 5, tn: 80, fp: 10, fn_: 5 };
        assert_abs_diff_eq!(mcc(&c), 0.3267, epsilon = 1e-4);
        assert_abs_diff_eq!(mcc(&c), 350.0 / (15.0f64 * 10.0 * 90.0 * 85.0).sqrt(), epsilon = 1e-15);
        // inverted prediction swaps tp<->fn and tn<->fp
        let inv = ConfusionCounts { tp: 5, tn: 10, fp: 80, fn_: 5 };
        assert_abs_diff_eq!(mcc(&inv), -mcc(&c), epsilon = 1e-15);
        assert_eq!(mcc(&ConfusionCounts { tp: 0, tn: 10, fp: 0, fn_: 0 }), 0.0);
    }

    #[test]
    fn auc_trivial_geometry() {
        let truth = vec![(0, 1), (2, 3)];
        assert_eq!(auc(&[vec![]], &truth, 5).unwrap(), 0.5);
        assert_eq!(auc(&[truth.clone()], &truth, 5).unwrap(), 1.0);
        assert!(auc(&[], &truth, 5).is_err());
    }

    /// Shoelace area of the polygon under the curve, closed through (1, 0).
    fn shoelace(curve: &[(f64, f64)]) -> f64 {
        let mut poly = curve.to_vec();
        poly.push((1.0, 0.0));
        let n = poly.len();
        (0..n)
            .map(|i| {
                let (x1, y1) = poly[i];
                let (x2, y2) = poly[(i + 1) % n];
                x1 * y2 - x2 * y1
            })
            .sum::<f64>()
            .abs()
            / 2.0
    }

    #[test]
    fn auc_matches_polygon_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let p = 15;
            let truth = random_edges(p, 0.2, &mut rng);
            let path: Vec<Vec<Edge>> = (0..6).map(|k| random_edges(p, 0.1 * k as f64, &mut rng)).collect();
            let curve = roc_curve(roc_points(&path, &truth, p));
            assert_abs_diff_eq!(auc(&path, &truth, p).unwrap(), shoelace(&curve), epsilon = 1e-12);
        }
    }

    #[test]
    fn rel_l1_examples() {
        let om = DMatrix::from_row_slice(2, 2, &[2.0, -0.5, -0.5, 1.0]);
        assert_eq!(rel_l1_error(&om, &om).unwrap(), 0.0);
        assert_eq!(rel_l1_error(&DMatrix::zeros(2, 2), &om).unwrap(), 1.0);
        assert_eq!(rel_l1_error(&(&om * 2.0), &om).unwrap(), 1.0);
        assert!(rel_l1_error(&om, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn efficiency_examples() {
        let complete: Vec<Edge> = upper_pairs(5).collect();
        assert_eq!(global_efficiency(&complete, 5).unwrap(), 1.0);
        assert_eq!(global_efficiency(&[], 5).unwrap(), 0.0);
        assert_abs_diff_eq!(global_efficiency(&[(0, 1), (1, 2)], 3).unwrap(), 5.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn summary_examples() {
        let tri = graph_summaries(&[(0, 1), (1, 2), (0, 2)], 3).unwrap();
        assert_eq!(tri.clustering, 1.0);
        assert_eq!(tri.char_path_length, Some(1.0));
        assert_eq!(tri.mean_degree, 2.0);
        assert_eq!(tri.local_efficiency, 1.0);
        let star = graph_summaries(&[(0, 1), (0, 2), (0, 3)], 4).unwrap();
        assert_eq!(star.clustering, 0.0);
        assert_eq!(star.local_efficiency, 0.0);
        assert_abs_diff_eq!(star.char_path_length.unwrap(), 9.0 / 6.0);
        let split = graph_summaries(&[(0, 1), (2, 3)], 4).unwrap();
        assert_eq!(split.disconnected_pairs, 4);
        assert_eq!(split.char_path_length, Some(1.0));
        assert_eq!(graph_summaries(&[], 3).unwrap().char_path_length, None);
    }

    #[test]
    fn small_world_signature() {
        use crate::simgen::{gen_graph, GraphKind, GraphTopology};
        let (mut c_sw, mut c_er, mut l_sw, mut l_er) = (0.0, 0.0, 0.0, 0.0);
        for seed in 0..20 {
            let p = 100;
            let sw = gen_graph(&GraphTopology::new(GraphKind::SmallWorld, p, seed)).unwrap();
            let mut er_topo = GraphTopology::new(GraphKind::ErdosRenyi, p, seed + 1000);
            er_topo.er_prob = sw.len() as f64 / n_pairs(p) as f64;
            let er = gen_graph(&er_topo).unwrap();
            let (s, e) = (graph_summaries(&sw, p).unwrap(), graph_summaries(&er, p).unwrap());
            c_sw += s.clustering;
            c_er += e.clustering;
            l_sw += s.char_path_length.unwrap();
            l_er += e.char_path_length.unwrap();
        }
        assert!(c_sw > 3.0 * c_er, "clustering {c_sw} vs {c_er}");
        assert!(l_sw < 2.0 * l_er, "path length {l_sw} vs {l_er}");
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_relabeling(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = 10;
            let est = random_edges(p, 0.3, &mut rng);
            let truth = random_edges(p, 0.3, &mut rng);
            let mut perm: Vec<usize> = (0..p).collect();
            perm.shuffle(&mut rng);
            let relabel = |e: &[Edge]| -> Vec<Edge> { e.iter().map(|&(a, b)| (perm[a], perm[b])).collect() };
            let (est2, truth2) = (relabel(&est), relabel(&truth));
            let m1 = mcc(&confusion(&est, &truth, p));
            prop_assert!((-1.0..=1.0).contains(&m1));
            prop_assert_eq!(m1, mcc(&confusion(&est2, &truth2, p)));
            let g1 = graph_summaries(&est, p).unwrap();
            let g2 = graph_summaries(&est2, p).unwrap();
            prop_assert!((g1.global_efficiency - g2.global_efficiency).abs() < 1e-12);
            prop_assert!((g1.clustering - g2.clustering).abs() < 1e-12);
            prop_assert!((g1.local_efficiency - g2.local_efficiency).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&g1.global_efficiency));
            let a = auc(&[est.clone(), vec![]], &truth, p).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - auc(&[est2, vec![]], &truth2, p).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn icc_identical_sessions() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 3.0, 3.0, 2.0, 2.0, 7.0, 7.0]);
        let r = icc31(&x).unwrap();
        assert_eq!(r.icc, 1.0);
        assert_eq!(r.label, Agreement::NearPerfect);
    }

    #[test]
    fn icc_identical_subjects_is_nonpositive() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 4.0, 1.0, 2.0, 4.0, 1.0, 2.0, 4.0]);
        // pure session effect: no subject or residual variance
        assert!(icc31(&x).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut mean = 0.0;
        for _ in 0..200 {
            let noise = DMatrix::from_fn(6, 2, |_, _| rng.random::<f64>());
            let shared = noise.row(0).clone_owned();
            let x = DMatrix::from_fn(6, 2, |_, j| shared[j] + 0.01 * rng.random::<f64>());
            mean += icc31(&x).unwrap().icc / 200.0;
        }
        assert!(mean <= 0.05, "{mean}");
    }

    #[test]
    fn icc_matches_residual_anova() {
        let x = DMatrix::from_row_slice(4, 2, &[9.0, 7.5, 6.0, 6.5, 8.0, 9.0, 3.0, 4.5]);
        let (n, k) = (4.0, 2.0);
        let gm = x.mean();
        let rm: Vec<f64> = (0..4).map(|i| (x[(i, 0)] + x[(i, 1)]) / 2.0).collect();
        let cm: Vec<f64> = (0..2).map(|j| (0..4).map(|i| x[(i, j)]).sum::<f64>() / 4.0).collect();
        let mut sse = 0.0;
        for i in 0..4 {
            for j in 0..2 {
                sse += (x[(i, j)] - rm[i] - cm[j] + gm).powi(2);
            }
        }
        let bms = k * rm.iter().map(|r| (r - gm).powi(2)).sum::<f64>() / (n - 1.0);
        let ems = sse / ((n - 1.0) * (k - 1.0));
        let oracle = (bms - ems) / (bms + (k - 1.0) * ems);
        assert_abs_diff_eq!(icc31(&x).unwrap().icc, oracle, epsilon = 1e-10);
    }

    #[test]
    fn icc_affine_invariance_and_labels() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 1.2, 2.0, 2.5, 0.3, 0.1, 4.0, 3.3, 2.2, 2.0]);
        let base = icc31(&x).unwrap().icc;
        let y = x.map(|v| 3.5 * v + 10.0);
        assert_abs_diff_eq!(icc31(&y).unwrap().icc, base, epsilon = 1e-12);
        assert_eq!(Agreement::classify(-0.3), Agreement::Poor);
        assert_eq!(Agreement::classify(0.2), Agreement::Poor);
        assert_eq!(Agreement::classify(0.35), Agreement::Fair);
        assert_eq!(Agreement::classify(0.6), Agreement::Moderate);
        assert_eq!(Agreement::classify(0.7), Agreement::Strong);
        assert_eq!(Agreement::classify(0.81), Agreement::NearPerfect);
        assert!(icc31(&DMatrix::from_element(3, 2, 1.0)).is_err());
    }

    fn normal_group(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        use rand_distr::StandardNormal;
        (0..n).map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    #[test]
    fn dwe_identical_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = normal_group(8, 20, &mut rng);
        let r = dwe_test(&g, &g, 500, 0.05, 1).unwrap();
        assert_eq!(r.n_significant(), 0);
        assert!(r.p_values.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn dwe_detects_large_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = normal_group(10, 30, &mut rng);
        let mut b = normal_group(10, 30, &mut rng);
        for row in &mut b {
            row[7] += 10.0;
        }
        let n_perm = 2000;
        let r = dwe_test(&a, &b, n_perm, 0.05, 9).unwrap();
        assert!(r.significant[7]);
        // only the two label-swapped copies of the observed split can tie with it
        assert!(r.p_values[7] <= 5.0 / (1.0 + n_perm as f64), "{}", r.p_values[7]);
        let again = dwe_test(&a, &b, n_perm, 0.05, 9).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn dwe_null_p_values_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = normal_group(10, 200, &mut rng);
        let b = normal_group(10, 200, &mut rng);
        let mut ps = dwe_test(&a, &b, 1000, 0.05, 3).unwrap().p_values;
        ps.sort_by(f64::total_cmp);
        let n = ps.len() as f64;
        let ks = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| (p - i as f64 / n).abs().max(((i + 1) as f64 / n - p).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 1.63 / n.sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn dwe_invariant_to_subject_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = normal_group(6, 15, &mut rng);
        let mut b = normal_group(7, 15, &mut rng);
        for row in &mut b {
            row[0] += 3.0;
        }
        let r1 = dwe_test(&a, &b, 1000, 0.05, 2).unwrap();
        let mut a2 = a.clone();
        a2.reverse();
        let mut b2 = b.clone();
        b2.rotate_left(3);
        let r2 = dwe_test(&a2, &b2, 1000, 0.05, 2).unwrap();
        assert_eq!(r1.significant, r2.significant);
        for (x, y) in r1.statistic.iter().zip(&r2.statistic) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn bh_step_up() {
        // thresholds 0.0125, 0.025, 0.0375, 0.05 for ranks 1..4
        assert_eq!(benjamini_hochberg(&[0.01, 0.04, 0.02, 0.2], 0.05), vec![true, false, true, false]);
        assert_eq!(benjamini_hochberg(&[0.01, 0.04, 0.03, 0.2], 0.05), vec![true, false, false, false]);
        // step-up: a later rank below its threshold rescues earlier ones
        assert_eq!(benjamini_hochberg(&[0.02, 0.03, 0.035, 0.04], 0.05), vec![true; 4]);
        assert_eq!(benjamini_hochberg(&[0.5, 0.6], 0.05), vec![false, false]);
    }

    fn mask_from(p: usize, mut f: impl FnMut(usize, usize) -> bool) -> Vec<bool> {
        upper_pairs(p).map(|(a, b)| f(a, b)).collect()
    }

    #[test]
    fn chi_square_zero_under_proportional_spread() {
        // two modules of 4 nodes: 6 + 6 within pairs, 16 between; mark half of each block
        let modules = ModuleAssignment::new(vec![1, 1, 1, 1, 2, 2, 2, 2]).unwrap();
        let mut seen = std::collections::HashMap::new();
        let mask = mask_from(8, |a, b| {
            let blk = modules.block_of(a, b);
            let c = seen.entry(blk).or_insert(0);
            *c += 1;
            *c % 2 == 0
        });
        let res = module_chi_square(&mask, &modules, 200, 1).unwrap();
        assert_eq!(res.len(), 3);
        for b in &res {
            assert_eq!(b.x2, 0.0);
            assert_eq!(b.q as f64, b.expected);
        }
        let total_e: f64 = res.iter().map(|b| b.expected).sum();
        assert_abs_diff_eq!(total_e, 14.0, epsilon = 1e-12);
    }

    #[test]
    fn chi_square_single_module() {
        let modules = ModuleAssignment::new(vec![1; 6]).unwrap();
        let mask = mask_from(6, |a, b| (a + b) % 3 == 0);
        let res = module_chi_square(&mask, &modules, 100, 1).unwrap();
        assert_eq!(res.len(), 1);
        assert_eq!(res[0].expected, res[0].q as f64);
        assert_eq!(res[0].x2, 0.0);
    }

    #[test]
    fn chi_square_concentrated_module_is_significant() {
        // module 1 has 6 nodes (15 pairs), the rest 24 nodes in module 2
        let mut labels = vec![1; 6];
        labels.extend(vec![2; 24]);
        let modules = ModuleAssignment::new(labels).unwrap();
        let mask = mask_from(30, |a, b| a < 6 && b < 6 && (a + b) % 2 == 1 || (a < 6 && b < 6 && a == 0));
        let res = module_chi_square(&mask, &modules, 2000, 4).unwrap();
        let within = &res[0];
        assert!(within.q >= 10 && within.expected <= 2.0, "{within:?}");
        assert!(within.p_value < 0.01, "{within:?}");
        let total: usize = res.iter().map(|b| b.q).sum();
        assert_eq!(total, mask.iter().filter(|&&m| m).count());
    }

    #[test]
    fn chi_square_flags_empty_expectation() {
        let modules = ModuleAssignment::new(vec![1, 1, 3, 3]).unwrap();
        let res = module_chi_square(&mask_from(4, |_, _| false), &modules, 50, 0).unwrap();
        assert!(res.iter().all(|b| b.degenerate && b.x2 == 0.0));
        assert!(ModuleAssignment::new(vec![0, 1]).is_err());
    }
}
