//! The relaxed assignment program.
//!
//! Variables are the `M·N` fractional assignments `λ_ij` (index `i·N + j`)
//! followed by one auxiliary `u` per (class, edge pair) (index
//! `M·N + k·|S| + p`). The objective `Σ u` with `u ≥ ±(Σ_i λ_ij c_k^i −
//! Σ_i λ_ij̃ c_k^i)` is the pairwise L1 imbalance of raw class counts.

use super::{Bound, LinearProgram};
use crate::balance::AssignmentMatrix;
use crate::error::{invalid, Error, Result};
use crate::radio::computation_time;
use crate::scenario::Scenario;

/// Everything the program depends on, detached from a [`Scenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct P2Inputs {
    /// `M × K` class counts.
    pub histograms: Vec<Vec<f64>>,
    pub num_edges: usize,
    /// Local computation time per user.
    pub compute_times: Vec<f64>,
    pub deadline: f64,
    /// `M × N` upload latency at the reference bandwidth.
    pub latency: Vec<Vec<f64>>,
    /// `M × N` upload energy at the reference bandwidth.
    pub energy: Vec<Vec<f64>>,
    pub energy_budgets: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P2Program {
    pub program: LinearProgram,
    pub num_users: usize,
    pub num_edges: usize,
    pub num_classes: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl P2Program {
    pub fn lambda_index(&self, user: usize, edge: usize) -> usize {
        user * self.num_edges + edge
    }

    pub fn aux_index(&self, class: usize, pair: usize) -> usize {
        self.num_users * self.num_edges + class * self.pairs.len() + pair
    }

    pub fn num_aux(&self) -> usize {
        self.num_classes * self.pairs.len()
    }

    /// The `λ` block of a solution vector, clamped to `[0, 1]`.
    pub fn extract_lambda(&self, x: &[f64]) -> AssignmentMatrix {
        let mut m = AssignmentMatrix::zeros(self.num_users, self.num_edges);
        for i in 0..self.num_users {
            for j in 0..self.num_edges {
                m.set(i, j, x[self.lambda_index(i, j)].clamp(0.0, 1.0));
            }
        }
        m
    }
}

/// Builds the program for `scenario` from precomputed latency and energy
/// matrices.
pub fn build_p2(
    scenario: &Scenario,
    latency: &[Vec<f64>],
    energy: &[Vec<f64>],
    pairs: &[(usize, usize)],
) -> Result<P2Program> {
    let compute_times: Vec<f64> = scenario
        .users
        .iter()
        .map(|u| computation_time(u, &scenario.compute))
        .collect();
    for (i, &tc) in compute_times.iter().enumerate() {
        if tc >= scenario.deadline {
            return Err(Error::StructurallyInfeasibleUser {
                user: scenario.users[i].id,
                compute_s: tc,
                deadline_s: scenario.deadline,
            });
        }
    }
    let histograms = scenario
        .users
        .iter()
        .map(|u| u.histogram.with_num_classes(scenario.num_classes).as_f64())
        .collect();
    build_p2_from_parts(&P2Inputs {
        histograms,
        num_edges: scenario.num_edges(),
        compute_times,
        deadline: scenario.deadline,
        latency: latency.to_vec(),
        energy: energy.to_vec(),
        energy_budgets: scenario.users.iter().map(|u| u.energy_budget).collect(),
        pairs: pairs.to_vec(),
    })
}

/// Builds the program from raw inputs.
///
/// Row order: two imbalance rows per (class, pair), then one latency row and
/// one energy row per user, then one assignment row per user. A link with
/// non-finite latency or energy is excluded by fixing its `λ` at zero.
pub fn build_p2_from_parts(inp: &P2Inputs) -> Result<P2Program> {
    let m = inp.histograms.len();
    let n = inp.num_edges;
    let k = inp.histograms.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(invalid("at least one edge is required"));
    }
    if inp.histograms.iter().any(|h| h.len() != k) {
        return Err(invalid("histograms must share one class count"));
    }
    let shape_ok = |mat: &[Vec<f64>]| mat.len() == m && mat.iter().all(|r| r.len() == n);
    if !shape_ok(&inp.latency) || !shape_ok(&inp.energy) {
        return Err(invalid(format!("latency and energy matrices must be {m} x {n}")));
    }
    if inp.compute_times.len() != m || inp.energy_budgets.len() != m {
        return Err(invalid("one compute time and energy budget per user"));
    }
    if let Some(&(a, b)) = inp.pairs.iter().find(|&&(a, b)| a >= n || b >= n || a == b) {
        return Err(invalid(format!("invalid edge pair ({a}, {b})")));
    }

    let shell = P2Program {
        program: LinearProgram::new(0),
        num_users: m,
        num_edges: n,
        num_classes: k,
        pairs: inp.pairs.clone(),
    };
    let vars = m * n + shell.num_aux();
    let mut lp = LinearProgram::new(vars);
    for x in &mut lp.objective[m * n..] {
        *x = 1.0;
    }
    for b in &mut lp.bounds[..m * n] {
        *b = Bound::UNIT;
    }

    for class in 0..k {
        for (p, &(a, b)) in inp.pairs.iter().enumerate() {
            let u = shell.aux_index(class, p);
            // diff = Σ_i λ_ia c − Σ_i λ_ib c;  diff − u ≤ 0  and  −diff − u ≤ 0.
            let mut diff = vec![0.0; vars];
            for (i, h) in inp.histograms.iter().enumerate() {
                diff[shell.lambda_index(i, a)] += h[class];
                diff[shell.lambda_index(i, b)] -= h[class];
            }
            let mut pos = diff.clone();
            pos[u] = -1.0;
            let mut neg: Vec<f64> = diff.iter().map(|v| -v).collect();
            neg[u] = -1.0;
            lp.add_ub(pos, 0.0);
            lp.add_ub(neg, 0.0);
        }
    }

    for i in 0..m {
        let mut lat = vec![0.0; vars];
        let mut en = vec![0.0; vars];
        for j in 0..n {
            let idx = shell.lambda_index(i, j);
            let (l, e) = (inp.latency[i][j], inp.energy[i][j]);
            if l.is_finite() && e.is_finite() {
                lat[idx] = l;
                en[idx] = e;
            } else {
                lp.bounds[idx] = Bound { lo: 0.0, hi: Some(0.0) };
            }
        }
        lp.add_ub(lat, inp.deadline - inp.compute_times[i]);
        lp.add_ub(en, inp.energy_budgets[i]);
    }

    for i in 0..m {
        let mut row = vec![0.0; vars];
        for j in 0..n {
            row[shell.lambda_index(i, j)] = 1.0;
        }
        lp.add_eq(row, 1.0);
    }

    Ok(P2Program { program: lp, ..shell })
}
