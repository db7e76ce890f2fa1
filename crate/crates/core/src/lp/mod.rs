//! Linear programs: a dense two-phase simplex solver and the builder for the
//! relaxed user-assignment program.

mod p2;
mod simplex;

pub use p2::{build_p2, build_p2_from_parts, P2Inputs, P2Program};
pub use simplex::solve_lp;

use std::fmt::Write as _;

use crate::error::{invalid, Result};

/// Pivot elements smaller than this are treated as zero.
pub const PIVOT_TOLERANCE: f64 = 1e-10;
/// Largest constraint violation accepted for an optimal solution.
pub const RESIDUAL_TOLERANCE: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: Option<f64>,
}

impl Bound {
    pub const NON_NEGATIVE: Bound = Bound { lo: 0.0, hi: None };
    pub const UNIT: Bound = Bound {
        lo: 0.0,
        hi: Some(1.0),
    };
}

/// `min c·x  s.t.  A_ub·x ≤ b_ub,  A_eq·x = b_eq,  lo ≤ x ≤ hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub bounds: Vec<Bound>,
}

impl LinearProgram {
    /// Program over `n` non-negative variables with zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            a_ub: Vec::new(),
            b_ub: Vec::new(),
            a_eq: Vec::new(),
            b_eq: Vec::new(),
            bounds: vec![Bound::NON_NEGATIVE; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_ub(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_ub.push(row);
        self.b_ub.push(rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_eq.push(row);
        self.b_eq.push(rhs);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(invalid(format!("{} bounds for {n} variables", self.bounds.len())));
        }
        if self.a_ub.len() != self.b_ub.len() || self.a_eq.len() != self.b_eq.len() {
            return Err(invalid("constraint matrix and right-hand side lengths differ"));
        }
        if let Some(r) = self.a_ub.iter().chain(&self.a_eq).find(|r| r.len() != n) {
            return Err(invalid(format!("constraint row of length {} for {n} variables", r.len())));
        }
        for (k, b) in self.bounds.iter().enumerate() {
            if !b.lo.is_finite() {
                return Err(invalid(format!("variable {k} needs a finite lower bound")));
            }
            if let Some(hi) = b.hi {
                if hi < b.lo {
                    return Err(invalid(format!("variable {k} has hi < lo")));
                }
            }
        }
        let all_finite = self
            .objective
            .iter()
            .chain(self.b_ub.iter())
            .chain(self.b_eq.iter())
            .chain(self.a_ub.iter().flatten())
            .chain(self.a_eq.iter().flatten())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(invalid("program contains non-finite coefficients"));
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        let ub = self
            .a_ub
            .iter()
            .zip(&self.b_ub)
            .map(|(row, b)| (dot(row, x) - b).max(0.0));
        let eq = self
            .a_eq
            .iter()
            .zip(&self.b_eq)
            .map(|(row, b)| (dot(row, x) - b).abs());
        let bounds = self.bounds.iter().zip(x).map(|(bd, &v)| {
            let below = (bd.lo - v).max(0.0);
            let above = bd.hi.map_or(0.0, |hi| (v - hi).max(0.0));
            below.max(above)
        });
        ub.chain(eq).chain(bounds).fold(0.0, f64::max)
    }

    /// Plain-text dump of the program.
    ///
    /// ```text
    /// lp <num_vars> <num_ub> <num_eq>
    /// min c_0 c_1 ...
    /// ub a_0 a_1 ... <= b
    /// eq a_0 a_1 ... = b
    /// bound <k> <lo> <hi|inf>
    /// ```
    ///
    /// Numbers use Rust's shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            out,
            "lp {} {} {}",
            self.num_vars(),
            self.a_ub.len(),
            self.a_eq.len()
        );
        let _ = writeln!(out, "min {}", join(&self.objective));
        for (row, b) in self.a_ub.iter().zip(&self.b_ub) {
            let _ = writeln!(out, "ub {} <= {b:?}", join(row));
        }
        for (row, b) in self.a_eq.iter().zip(&self.b_eq) {
            let _ = writeln!(out, "eq {} = {b:?}", join(row));
        }
        for (k, b) in self.bounds.iter().enumerate() {
            let hi = b.hi.map_or("inf".to_string(), |h| format!("{h:?}"));
            let _ = writeln!(out, "bound {k} {:?} {hi}", b.lo);
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// Vertex solution; meaningful only when `status` is optimal.
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub status: LpStatus,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}
