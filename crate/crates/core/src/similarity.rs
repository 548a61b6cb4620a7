//! Whitespace tokenization, smoothed sentence BLEU, BLEU distance matrices and
//! average-linkage agglomerative clustering.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ORDER: usize = 4;
pub const DEFAULT_SMOOTH_EPS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<String>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self {
            tokens: iter.into_iter().map(Into::into).collect(),
        }
    }
}

/// Splits on whitespace runs. No case folding or punctuation handling.
pub fn tokenize(text: &str) -> TokenSeq {
    text.split_whitespace().collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Smoothed sentence-level BLEU of `candidate` against a single `reference`.
///
/// Modified n-gram precisions use reference-clipped counts. A zero numerator
/// is replaced by `smooth_eps`; orders for which the candidate has no n-grams
/// at all are dropped and the remaining orders are weighted uniformly.
pub fn sentence_bleu(
    candidate: &TokenSeq,
    reference: &TokenSeq,
    max_order: usize,
    smooth_eps: f64,
) -> Result<f64> {
    if max_order == 0 {
        return Err(Error::invalid("max_order must be >= 1"));
    }
    if candidate.is_empty() || reference.is_empty() {
        return Ok(0.0);
    }
    let orders = max_order.min(candidate.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let cand = ngram_counts(&candidate.tokens, n);
        let refc = ngram_counts(&reference.tokens, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
            .sum();
        let numerator = if matched == 0 { smooth_eps } else { matched as f64 };
        log_sum += (numerator / total as f64).ln();
    }
    let geo = (log_sum / orders as f64).exp();
    let c = candidate.len() as f64;
    let r = reference.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok((bp * geo).clamp(0.0, 1.0))
}

/// Symmetric n×n distance matrix with zero diagonal and entries in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("distance matrix must be square"));
        }
        let m = Self {
            n,
            entries: rows.into_iter().flatten().collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            if self.get(i, i) != 0.0 {
                return Err(Error::invalid(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..self.n {
                let d = self.get(i, j);
                if !(0.0..=1.0).contains(&d) {
                    return Err(Error::invalid(format!("entry ({i},{j}) = {d} outside [0, 1]")));
                }
                if (d - self.get(j, i)).abs() > 1e-12 {
                    return Err(Error::invalid(format!("entry ({i},{j}) is not symmetric")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }
}

/// `d_ij = 1 − ½(BLEU(x_i, x_j) + BLEU(x_j, x_i))`.
pub fn pairwise_distances(batch: &[TokenSeq]) -> DistanceMatrix {
    let n = batch.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    // evaluate in (min, max) order so both triangles agree bitwise
                    let (a, b) = (i.min(j), i.max(j));
                    let ab = sentence_bleu(&batch[a], &batch[b], DEFAULT_MAX_ORDER, DEFAULT_SMOOTH_EPS)
                        .expect("max_order > 0");
                    let ba = sentence_bleu(&batch[b], &batch[a], DEFAULT_MAX_ORDER, DEFAULT_SMOOTH_EPS)
                        .expect("max_order > 0");
                    (1.0 - 0.5 * (ab + ba)).clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    DistanceMatrix {
        n,
        entries: rows.into_iter().flatten().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Label per item, numbered 1..=K in order of first appearance.
    pub labels: Vec<usize>,
    pub cluster_sizes: BTreeMap<usize, usize>,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn size_of(&self, item: usize) -> usize {
        self.cluster_sizes[&self.labels[item]]
    }

    fn from_roots(roots: &[usize]) -> Self {
        let mut label_of_root = HashMap::new();
        let mut labels = Vec::with_capacity(roots.len());
        let mut sizes = BTreeMap::new();
        for &r in roots {
            let next = label_of_root.len() + 1;
            let label = *label_of_root.entry(r).or_insert(next);
            labels.push(label);
            *sizes.entry(label).or_insert(0) += 1;
        }
        Self {
            labels,
            cluster_sizes: sizes,
        }
    }
}

/// One agglomeration step; clusters are named by their smallest member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
}

struct Agglomerator {
    n: usize,
    // average inter-cluster distance, indexed by cluster representative
    dist: Vec<f64>,
    size: Vec<usize>,
    active: Vec<bool>,
    root: Vec<usize>,
}

impl Agglomerator {
    fn new(matrix: &DistanceMatrix) -> Self {
        let n = matrix.len();
        Self {
            n,
            dist: matrix.entries.clone(),
            size: vec![1; n],
            active: vec![true; n],
            root: (0..n).collect(),
        }
    }

    /// Closest active pair; ties go to the lexicographically smallest
    /// (representative, representative) pair.
    fn closest(&self) -> Option<Merge> {
        let mut best: Option<Merge> = None;
        for a in (0..self.n).filter(|&a| self.active[a]) {
            for b in (a + 1..self.n).filter(|&b| self.active[b]) {
                let d = self.dist[a * self.n + b];
                if best.map_or(true, |m| d < m.distance) {
                    best = Some(Merge {
                        left: a,
                        right: b,
                        distance: d,
                    });
                }
            }
        }
        best
    }

    fn merge(&mut self, m: Merge) {
        let (a, b, n) = (m.left, m.right, self.n);
        let (sa, sb) = (self.size[a] as f64, self.size[b] as f64);
        for k in (0..n).filter(|&k| self.active[k] && k != a && k != b) {
            let d = (sa * self.dist[a * n + k] + sb * self.dist[b * n + k]) / (sa + sb);
            self.dist[a * n + k] = d;
            self.dist[k * n + a] = d;
        }
        self.size[a] += self.size[b];
        self.active[b] = false;
        for r in self.root.iter_mut() {
            if *r == b {
                *r = a;
            }
        }
    }
}

/// Full average-linkage dendrogram, merges in the order they happen.
pub fn linkage(matrix: &DistanceMatrix) -> Vec<Merge> {
    let mut agg = Agglomerator::new(matrix);
    let mut merges = Vec::with_capacity(matrix.len().saturating_sub(1));
    while let Some(m) = agg.closest() {
        agg.merge(m);
        merges.push(m);
    }
    merges
}

/// Average-linkage clustering that merges while the closest pair of clusters
/// is strictly nearer than `threshold`.
pub fn cluster(matrix: &DistanceMatrix, threshold: f64) -> ClusterAssignment {
    let mut agg = Agglomerator::new(matrix);
    while let Some(m) = agg.closest() {
        if !(m.distance < threshold) {
            break;
        }
        agg.merge(m);
    }
    ClusterAssignment::from_roots(&agg.root)
}
