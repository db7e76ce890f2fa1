//! Class-imbalance measures for edge nodes.
//!
//! All logarithms are natural, so divergences and entropies are in nats. The
//! convention `0·ln 0 = 0` is used throughout; no smoothing is applied.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scenario::ClassHistogram;

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("distribution needs at least one class"));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0)) {
            return Err(invalid(format!("negative or NaN probability {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self {
            probs: vec![1.0 / num_classes as f64; num_classes],
        }
    }

    /// Normalizes non-negative counts; `None` when they sum to zero.
    pub fn from_counts(counts: &[f64]) -> Option<Self> {
        let total: f64 = counts.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        Some(Self {
            probs: counts.iter().map(|c| c / total).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Which distribution edges are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    #[default]
    Uniform,
    /// Empirical class distribution of all users together.
    Global,
}

pub fn reference_distribution(
    kind: ReferenceKind,
    users: &[ClassHistogram],
    num_classes: usize,
) -> Result<Distribution> {
    match kind {
        ReferenceKind::Uniform => Ok(Distribution::uniform(num_classes)),
        ReferenceKind::Global => {
            let mut counts = vec![0.0; num_classes];
            for u in users {
                for (k, c) in counts.iter_mut().enumerate() {
                    *c += u.get(k) as f64;
                }
            }
            Distribution::from_counts(&counts)
                .ok_or_else(|| invalid("global distribution of empty data is undefined"))
        }
    }
}

/// User-to-edge indicator matrix, fractional or binary.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    users: usize,
    edges: usize,
    data: Vec<f64>,
}

impl AssignmentMatrix {
    pub fn zeros(users: usize, edges: usize) -> Self {
        Self {
            users,
            edges,
            data: vec![0.0; users * edges],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let edges = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != edges) {
            return Err(invalid("assignment rows have different lengths"));
        }
        Ok(Self {
            users: rows.len(),
            edges,
            data: rows.concat(),
        })
    }

    /// Binary matrix with user `i` on edge `choice[i]`.
    pub fn from_choices(choice: &[usize], edges: usize) -> Self {
        let mut m = Self::zeros(choice.len(), edges);
        for (i, &j) in choice.iter().enumerate() {
            m.set(i, j, 1.0);
        }
        m
    }

    pub fn num_users(&self) -> usize {
        self.users
    }

    pub fn num_edges(&self) -> usize {
        self.edges
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.edges + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.edges + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.edges..(i + 1) * self.edges]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.edges..(i + 1) * self.edges]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.users).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Edges with a non-zero entry in row `i`.
    pub fn edges_of(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(i)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, _)| j)
    }

    pub fn users_of(&self, j: usize) -> Vec<usize> {
        (0..self.users).filter(|&i| self.get(i, j) != 0.0).collect()
    }
}

/// `Σ_k h_k ln(h_k / q_k)`.
pub fn kld(h: &Distribution, q: &Distribution) -> Result<f64> {
    if h.len() != q.len() {
        return Err(invalid(format!(
            "distributions over {} and {} classes",
            h.len(),
            q.len()
        )));
    }
    if let Some(k) = q.probs.iter().position(|&p| p <= 0.0) {
        return Err(Error::InvalidReferenceDistribution(k));
    }
    let d: f64 = h
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &r)| p * (p / r).ln())
        .sum();
    Ok(d.max(0.0))
}

/// `−Σ_k h_k ln h_k`.
pub fn shannon_entropy(h: &Distribution) -> f64 {
    -h.probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Real-valued class counts per edge: `Σ_i λ_ij·c_k^i`.
pub fn edge_histograms(lambda: &AssignmentMatrix, users: &[ClassHistogram]) -> Vec<Vec<f64>> {
    let k = users.iter().map(ClassHistogram::num_classes).max().unwrap_or(0);
    let mut out = vec![vec![0.0; k]; lambda.num_edges()];
    for (i, user) in users.iter().enumerate() {
        for (j, edge) in out.iter_mut().enumerate() {
            let w = lambda.get(i, j);
            if w == 0.0 {
                continue;
            }
            for (slot, &c) in edge.iter_mut().zip(user.counts()) {
                *slot += w * c as f64;
            }
        }
    }
    out
}

/// All unordered edge pairs `(a, b)` with `a < b`.
pub fn all_pairs(num_edges: usize) -> Vec<(usize, usize)> {
    (0..num_edges)
        .flat_map(|a| (a + 1..num_edges).map(move |b| (a, b)))
        .collect()
}

/// Sum over classes and edge pairs of the absolute difference in raw counts.
pub fn pairwise_l1_objective(
    lambda: &AssignmentMatrix,
    users: &[ClassHistogram],
    pairs: &[(usize, usize)],
) -> f64 {
    let edges = edge_histograms(lambda, users);
    pairs
        .iter()
        .map(|&(a, b)| {
            edges[a]
                .iter()
                .zip(&edges[b])
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KldReport {
    pub total: f64,
    pub per_edge: Vec<f64>,
    /// Edges with no assigned samples; they contribute zero to `total`.
    pub empty_edges: Vec<usize>,
}

/// `Σ_j D_KL(H_j ‖ q)` over the edge histograms induced by `lambda`.
pub fn total_kld(
    lambda: &AssignmentMatrix,
    users: &[ClassHistogram],
    q: &Distribution,
) -> Result<KldReport> {
    kld_of_edge_counts(&edge_histograms(lambda, users), q)
}

pub fn kld_of_edge_counts(edges: &[Vec<f64>], q: &Distribution) -> Result<KldReport> {
    let mut per_edge = Vec::with_capacity(edges.len());
    let mut empty_edges = Vec::new();
    for (j, counts) in edges.iter().enumerate() {
        let mut padded = counts.clone();
        padded.resize(q.len(), 0.0);
        match Distribution::from_counts(&padded) {
            Some(h) => per_edge.push(kld(&h, q)?),
            None => {
                per_edge.push(0.0);
                empty_edges.push(j);
            }
        }
    }
    Ok(KldReport {
        total: per_edge.iter().sum(),
        per_edge,
        empty_edges,
    })
}

/// L1 distance between the normalized edge and global class distributions.
pub fn l1_to_global(edge_counts: &[f64], global_counts: &[f64]) -> Result<f64> {
    let k = edge_counts.len().max(global_counts.len());
    let pad = |c: &[f64]| {
        let mut v = c.to_vec();
        v.resize(k, 0.0);
        v
    };
    let h = Distribution::from_counts(&pad(edge_counts))
        .ok_or_else(|| invalid("edge histogram is empty"))?;
    let p = Distribution::from_counts(&pad(global_counts))
        .ok_or_else(|| invalid("global histogram is empty"))?;
    Ok(h.probs.iter().zip(&p.probs).map(|(a, b)| (a - b).abs()).sum())
}
