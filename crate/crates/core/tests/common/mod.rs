#![allow(dead_code, clippy::needless_range_loop)]

use hfl_core::balance::{total_kld, AssignmentMatrix, Distribution};
use hfl_core::lp::{Bound, LinearProgram};
use hfl_core::scenario::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

/// Calls `f` with every assignment of `m` users to `n` edges.
pub fn for_each_choice(m: usize, n: usize, mut f: impl FnMut(&[usize])) {
    let mut choice = vec![0usize; m];
    loop {
        f(&choice);
        let mut p = 0;
        loop {
            if p == m {
                return;
            }
            choice[p] += 1;
            if choice[p] < n {
                break;
            }
            choice[p] = 0;
            p += 1;
        }
    }
}

/// Lowest total KLD (uniform reference) over single-edge assignments that
/// leave no edge empty.
pub fn integer_optimum_kld(s: &Scenario) -> f64 {
    let (m, n) = (s.num_users(), s.num_edges());
    let users = s.user_histograms();
    let q = Distribution::uniform(s.num_classes);
    let mut best = f64::INFINITY;
    for_each_choice(m, n, |choice| {
        let mut used = vec![false; n];
        for &c in choice {
            used[c] = true;
        }
        if used.iter().all(|&u| u) {
            let lam = AssignmentMatrix::from_choices(choice, n);
            best = best.min(total_kld(&lam, &users, &q).unwrap().total);
        }
    });
    best
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-9 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Optimal objective of a bounded LP by enumerating every basic solution;
/// `None` when no vertex is feasible.
pub fn vertex_enumeration(p: &LinearProgram) -> Option<f64> {
    let n = p.num_vars();
    // Every constraint as a ≤ row; equalities are always active.
    let mut rows: Vec<(Vec<f64>, f64)> = p.a_ub.iter().cloned().zip(p.b_ub.iter().copied()).collect();
    for (k, b) in p.bounds.iter().enumerate() {
        let mut e = vec![0.0; n];
        e[k] = -1.0;
        rows.push((e.clone(), -b.lo));
        if let Some(hi) = b.hi {
            e[k] = 1.0;
            rows.push((e, hi));
        }
    }
    let eqs: Vec<(Vec<f64>, f64)> = p.a_eq.iter().cloned().zip(p.b_eq.iter().copied()).collect();
    let free = n.checked_sub(eqs.len())?;
    let feasible = |x: &[f64]| {
        let dot = |a: &[f64]| a.iter().zip(x).map(|(u, v)| u * v).sum::<f64>();
        rows.iter().all(|(a, b)| dot(a) <= b + 1e-9 * (1.0 + b.abs()))
            && eqs.iter().all(|(a, b)| (dot(a) - b).abs() <= 1e-9 * (1.0 + b.abs()))
    };
    let mut best: Option<f64> = None;
    let mut pick = (0..free).collect::<Vec<usize>>();
    if free > rows.len() {
        return None;
    }
    loop {
        let mut a: Vec<Vec<f64>> = eqs.iter().map(|e| e.0.clone()).collect();
        let mut b: Vec<f64> = eqs.iter().map(|e| e.1).collect();
        for &r in &pick {
            a.push(rows[r].0.clone());
            b.push(rows[r].1);
        }
        if let Some(x) = solve_square(a, b) {
            if feasible(&x) {
                let v = p.objective_value(&x);
                best = Some(best.map_or(v, |bv: f64| bv.min(v)));
            }
        }
        // Next combination of `free` rows.
        let mut i = free;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < rows.len() - free + i {
                pick[i] += 1;
                for j in i + 1..free {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
        if free == 0 {
            return best;
        }
    }
}

/// A random LP whose feasible set lies inside a box, so it is never unbounded.
pub fn random_boxed_lp(seed: u64) -> LinearProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=10usize);
    let max_rows = if n >= 8 { 3 } else { 5 };
    let mut p = LinearProgram::new(n);
    p.objective = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    for k in 0..n {
        let lo: f64 = if rng.gen_bool(0.3) { rng.gen_range(-3.0..0.0) } else { 0.0 };
        p.bounds[k] = Bound {
            lo,
            hi: Some(lo + rng.gen_range(0.5..6.0)),
        };
    }
    for _ in 0..rng.gen_range(0..=max_rows) {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        p.add_ub(a, rng.gen_range(-2.0..8.0));
    }
    if n >= 2 && rng.gen_bool(0.3) {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        p.add_eq(a, rng.gen_range(0.0..4.0));
    }
    p
}

#[derive(Debug, Deserialize)]
pub struct P2Case {
    pub histograms: Vec<Vec<f64>>,
    pub num_edges: usize,
    pub compute_times: Vec<f64>,
    pub deadline: f64,
    pub latency: Vec<Vec<Option<f64>>>,
    pub energy: Vec<Vec<Option<f64>>>,
    pub energy_budgets: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub status: String,
    pub objective: Option<f64>,
}

impl P2Case {
    pub fn inputs(&self) -> hfl_core::lp::P2Inputs {
        let fill = |m: &[Vec<Option<f64>>]| -> Vec<Vec<f64>> {
            m.iter()
                .map(|r| r.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect())
                .collect()
        };
        hfl_core::lp::P2Inputs {
            histograms: self.histograms.clone(),
            num_edges: self.num_edges,
            compute_times: self.compute_times.clone(),
            deadline: self.deadline,
            latency: fill(&self.latency),
            energy: fill(&self.energy),
            energy_budgets: self.energy_budgets.clone(),
            pairs: self.pairs.clone(),
        }
    }

    /// Best pairwise-L1 imbalance over binary assignments that respect every
    /// user's latency and energy budget.
    pub fn integer_optimum(&self) -> Option<f64> {
        let m = self.histograms.len();
        let n = self.num_edges;
        let k = self.histograms[0].len();
        let ok = |i: usize, j: usize| match (self.latency[i][j], self.energy[i][j]) {
            (Some(l), Some(e)) => l <= self.deadline - self.compute_times[i] && e <= self.energy_budgets[i],
            _ => false,
        };
        let mut best: Option<f64> = None;
        for_each_choice(m, n, |choice| {
            if !(0..m).all(|i| ok(i, choice[i])) {
                return;
            }
            let mut edge = vec![vec![0.0; k]; n];
            for (i, &j) in choice.iter().enumerate() {
                for c in 0..k {
                    edge[j][c] += self.histograms[i][c];
                }
            }
            let v: f64 = (0..k)
                .flat_map(|c| self.pairs.iter().map(move |&(a, b)| (c, a, b)))
                .map(|(c, a, b)| (edge[a][c] - edge[b][c]).abs())
                .sum();
            best = Some(best.map_or(v, |bv: f64| bv.min(v)));
        });
        best
    }
}

pub fn load_p2_cases() -> Vec<P2Case> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/p2_oracle.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
