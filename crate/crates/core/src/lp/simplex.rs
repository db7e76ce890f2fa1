//! Dense two-phase tableau simplex with Bland's anti-cycling rule.
//!
//! Variables are shifted to `y = x − lo ≥ 0`, finite upper bounds become
//! explicit `≤` rows, and every row is brought to a non-negative right-hand
//! side. Rows whose slack cannot start in the basis get an artificial column;
//! phase one drives the artificials to zero, phase two optimizes the real
//! objective with artificials barred from re-entering.

use super::{dot, LinearProgram, LpSolution, LpStatus, PIVOT_TOLERANCE};
use crate::error::{invalid, Result};

const COST_TOLERANCE: f64 = 1e-9;
const MAX_ITERATIONS: usize = 200_000;

struct Tableau {
    rows: usize,
    width: usize,
    cells: Vec<f64>,
    /// Reduced costs; the last entry holds minus the current objective.
    cost: Vec<f64>,
    basis: Vec<usize>,
    iterations: usize,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn rhs_col(&self) -> usize {
        self.width - 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.rhs_col())
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.cells[r * self.width..(r + 1) * self.width]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let pv = self.cells[r * w + c];
        for v in &mut self.cells[r * w..(r + 1) * w] {
            *v /= pv;
        }
        self.cells[r * w + c] = 1.0;
        let pivot_row = self.row(r).to_vec();
        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.cells[i * w + c];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.cells[i * w..(i + 1) * w];
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            row[c] = 0.0;
        }
        let f = self.cost[c];
        if f != 0.0 {
            for (v, p) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
        self.iterations += 1;
    }

    /// Installs `costs` (one per column) and prices out the current basis.
    fn set_costs(&mut self, costs: &[f64]) {
        self.cost = costs.to_vec();
        self.cost.push(0.0);
        for r in 0..self.rows {
            let cb = costs[self.basis[r]];
            if cb != 0.0 {
                let row = self.row(r).to_vec();
                for (v, a) in self.cost.iter_mut().zip(&row) {
                    *v -= cb * a;
                }
            }
        }
    }

    fn objective(&self) -> f64 {
        -self.cost[self.rhs_col()]
    }

    /// Runs simplex iterations over columns `0..allowed`.
    fn optimize(&mut self, allowed: usize) -> Result<Outcome> {
        loop {
            if self.iterations >= MAX_ITERATIONS {
                return Err(invalid("simplex iteration limit reached"));
            }
            // Bland: lowest-index improving column.
            let Some(c) = (0..allowed).find(|&j| self.cost[j] < -COST_TOLERANCE) else {
                return Ok(Outcome::Optimal);
            };
            // Bland: minimum ratio, ties to the lowest basic variable index.
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, c);
                if a <= PIVOT_TOLERANCE {
                    continue;
                }
                let ratio = self.rhs(r).max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((best_r, best)) => {
                        let tie = 1e-12 * (1.0 + best.abs());
                        if ratio < best - tie
                            || (ratio <= best + tie && self.basis[r] < self.basis[best_r])
                        {
                            Some((r, ratio))
                        } else {
                            Some((best_r, best))
                        }
                    }
                };
            }
            let Some((r, _)) = leave else {
                return Ok(Outcome::Unbounded);
            };
            self.pivot(r, c);
        }
    }
}

enum RowKind {
    Le,
    Eq,
}

pub fn solve_lp(p: &LinearProgram) -> Result<LpSolution> {
    p.validate()?;
    let n = p.num_vars();
    let lo: Vec<f64> = p.bounds.iter().map(|b| b.lo).collect();

    let mut rows: Vec<(Vec<f64>, RowKind, f64)> = Vec::new();
    for (a, &b) in p.a_ub.iter().zip(&p.b_ub) {
        rows.push((a.clone(), RowKind::Le, b - dot(a, &lo)));
    }
    for (a, &b) in p.a_eq.iter().zip(&p.b_eq) {
        rows.push((a.clone(), RowKind::Eq, b - dot(a, &lo)));
    }
    for (k, bd) in p.bounds.iter().enumerate() {
        if let Some(hi) = bd.hi {
            let mut a = vec![0.0; n];
            a[k] = 1.0;
            rows.push((a, RowKind::Le, hi - bd.lo));
        }
    }

    let m = rows.len();
    let num_slack = rows.iter().filter(|r| matches!(r.1, RowKind::Le)).count();
    let needs_artificial: Vec<bool> = rows
        .iter()
        .map(|(_, kind, rhs)| matches!(kind, RowKind::Eq) || *rhs < 0.0)
        .collect();
    let num_art = needs_artificial.iter().filter(|&&b| b).count();
    let art_start = n + num_slack;
    let cols = art_start + num_art;
    let width = cols + 1;

    let mut cells = vec![0.0; m * width];
    let mut basis = vec![0; m];
    let mut slack = n;
    let mut art = art_start;
    for (r, (a, kind, rhs)) in rows.iter().enumerate() {
        let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
        let row = &mut cells[r * width..(r + 1) * width];
        for (v, &x) in row.iter_mut().zip(a) {
            *v = sign * x;
        }
        row[cols] = sign * rhs;
        if matches!(kind, RowKind::Le) {
            row[slack] = sign;
            if !needs_artificial[r] {
                basis[r] = slack;
            }
            slack += 1;
        }
        if needs_artificial[r] {
            row[art] = 1.0;
            basis[r] = art;
            art += 1;
        }
    }

    let mut t = Tableau {
        rows: m,
        width,
        cells,
        cost: Vec::new(),
        basis,
        iterations: 0,
    };

    if num_art > 0 {
        let mut phase1 = vec![0.0; cols];
        for c in &mut phase1[art_start..] {
            *c = 1.0;
        }
        t.set_costs(&phase1);
        t.optimize(cols)?;
        let scale = 1.0 + (0..m).map(|r| t.rhs(r).abs()).fold(0.0, f64::max);
        if t.objective() > 1e-9 * scale {
            return Ok(LpSolution {
                x: vec![f64::NAN; n],
                objective_value: f64::NAN,
                status: LpStatus::Infeasible,
                iterations: t.iterations,
            });
        }
        // Pivot zero-level artificials out where a real column allows it;
        // rows where none does are redundant and stay inert.
        for r in 0..m {
            if t.basis[r] >= art_start {
                if let Some(c) = (0..art_start).find(|&c| t.at(r, c).abs() > PIVOT_TOLERANCE) {
                    t.pivot(r, c);
                }
            }
        }
    }

    let mut phase2 = vec![0.0; cols];
    phase2[..n].copy_from_slice(&p.objective);
    t.set_costs(&phase2);
    let status = match t.optimize(art_start)? {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::Unbounded => LpStatus::Unbounded,
    };

    let mut x = lo;
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] += t.rhs(r).max(0.0);
        }
    }
    let objective_value = match status {
        LpStatus::Optimal => p.objective_value(&x),
        LpStatus::Unbounded => f64::NEG_INFINITY,
        LpStatus::Infeasible => f64::NAN,
    };
    Ok(LpSolution {
        x,
        objective_value,
        status,
        iterations: t.iterations,
    })
}
