//! User assignment and bandwidth allocation.
//!
//! [`eara_assign`] solves the relaxed balance program at a fixed reference
//! bandwidth, rounds the fractional assignment to single or dual
//! connectivity, repairs links that break the latency or energy budget, and
//! lets every edge hand out bandwidth greedily by user importance.
//! [`dba_assign`] is the nearest-edge baseline sharing the same allocator.
//!
//! Users are referred to by their index in [`Scenario::users`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::balance::{
    all_pairs, kld, reference_distribution, total_kld, AssignmentMatrix, Distribution, KldReport,
    ReferenceKind,
};
use crate::error::{invalid, Result};
use crate::lp::{build_p2_from_parts, solve_lp, P2Inputs};
use crate::radio::{channel_gain, computation_time, link_estimate, min_bandwidth_for_deadline, MinBandwidth};
use crate::scenario::{ClassHistogram, Scenario};

/// Relative slack when comparing a link's latency or energy to its budget.
const BUDGET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    #[default]
    Single,
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EaraConfig {
    pub mode: Connectivity,
    /// ν: a second edge is kept when its fractional weight exceeds this.
    pub dual_threshold: f64,
    /// Overrides the scenario's reference bandwidth when set.
    pub reference_bandwidth: Option<f64>,
    pub reference: ReferenceKind,
    /// Edge pairs in the balance objective; all pairs when `None`.
    pub pairs: Option<Vec<(usize, usize)>>,
    /// Improve the rounded assignment by local search on total KLD, and keep
    /// a dual link only when it lowers total KLD. With `false` the rounded
    /// and repaired assignment goes straight to bandwidth allocation.
    pub refine: bool,
}

impl Default for EaraConfig {
    fn default() -> Self {
        Self {
            mode: Connectivity::Single,
            dual_threshold: 0.25,
            reference_bandwidth: None,
            reference: ReferenceKind::Uniform,
            pairs: None,
            refine: true,
        }
    }
}

impl EaraConfig {
    pub fn dual() -> Self {
        Self {
            mode: Connectivity::Dual,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dual_threshold > 0.0 && self.dual_threshold < 1.0) {
            return Err(invalid(format!(
                "dual threshold must lie in (0, 1), got {}",
                self.dual_threshold
            )));
        }
        if let Some(b) = self.reference_bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return Err(invalid("reference bandwidth must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// Local computation alone exceeds the deadline.
    ComputeExceedsDeadline { user: usize, compute_s: f64, deadline_s: f64 },
    /// No edge satisfies the latency and energy budgets at the reference bandwidth.
    NoFeasibleLink { user: usize },
    /// The relaxed program had no solution; nobody is assigned.
    LpInfeasible,
    /// The rounded edge broke a budget and the next-best feasible edge was used.
    Reassigned { user: usize, from: usize, to: usize },
    /// A rounded secondary edge broke a budget and was removed.
    SecondaryLinkRemoved { user: usize, edge: usize },
    /// No bandwidth meets the deadline under the power cap.
    BandwidthUnreachable { user: usize, edge: usize },
    /// The edge's budget ran out before this user's turn.
    BandwidthExhausted { user: usize, edge: usize },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::ComputeExceedsDeadline { user, compute_s, deadline_s } => write!(
                f,
                "user {user} dropped: computation takes {compute_s:.4} s of a {deadline_s} s deadline"
            ),
            Diagnostic::NoFeasibleLink { user } => {
                write!(f, "user {user} dropped: no edge meets its latency and energy budgets")
            }
            Diagnostic::LpInfeasible => write!(f, "relaxed assignment program is infeasible"),
            Diagnostic::Reassigned { user, from, to } => {
                write!(f, "user {user} moved from edge {from} to edge {to} to meet its budgets")
            }
            Diagnostic::SecondaryLinkRemoved { user, edge } => {
                write!(f, "user {user}: secondary link to edge {edge} breaks its budgets")
            }
            Diagnostic::BandwidthUnreachable { user, edge } => {
                write!(f, "user {user} dropped at edge {edge}: deadline unreachable at maximum power")
            }
            Diagnostic::BandwidthExhausted { user, edge } => {
                write!(f, "user {user} dropped at edge {edge}: bandwidth budget exhausted")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Binary; rows of dropped users are zero.
    pub lambda: AssignmentMatrix,
    /// `M × N` bandwidth grants in Hz.
    pub bandwidth: Vec<Vec<f64>>,
    pub served: Vec<bool>,
    /// The relaxed solution, when one was computed.
    pub fractional: Option<AssignmentMatrix>,
    pub diagnostics: Vec<Diagnostic>,
}

/// On-disk form of an [`Assignment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentFile {
    pub lambda: Vec<Vec<u8>>,
    pub bandwidth_hz: Vec<Vec<f64>>,
    pub served: Vec<bool>,
    pub total_kld_nats: f64,
    pub diagnostics: Vec<Diagnostic>,
}

impl Assignment {
    fn empty(users: usize, edges: usize) -> Self {
        Self {
            lambda: AssignmentMatrix::zeros(users, edges),
            bandwidth: vec![vec![0.0; edges]; users],
            served: vec![false; users],
            fractional: None,
            diagnostics: Vec::new(),
        }
    }

    pub fn num_served(&self) -> usize {
        self.served.iter().filter(|&&s| s).count()
    }

    /// Users attached to more than one edge.
    pub fn dual_users(&self) -> Vec<usize> {
        (0..self.lambda.num_users())
            .filter(|&i| self.lambda.edges_of(i).count() > 1)
            .collect()
    }

    pub fn kld_report(&self, scenario: &Scenario, reference: ReferenceKind) -> Result<KldReport> {
        let users = scenario.user_histograms();
        let q = reference_distribution(reference, &users, scenario.num_classes)?;
        total_kld(&self.lambda, &users, &q)
    }

    pub fn to_file(&self, scenario: &Scenario, reference: ReferenceKind) -> Result<AssignmentFile> {
        Ok(AssignmentFile {
            lambda: self
                .lambda
                .to_rows()
                .into_iter()
                .map(|r| r.into_iter().map(|v| u8::from(v != 0.0)).collect())
                .collect(),
            bandwidth_hz: self.bandwidth.clone(),
            served: self.served.clone(),
            total_kld_nats: self.kld_report(scenario, reference)?.total,
            diagnostics: self.diagnostics.clone(),
        })
    }

    pub fn from_file(file: &AssignmentFile) -> Result<Assignment> {
        let rows: Vec<Vec<f64>> = file
            .lambda
            .iter()
            .map(|r| r.iter().map(|&v| f64::from(v.min(1))).collect())
            .collect();
        let lambda = AssignmentMatrix::from_rows(&rows)?;
        if file.served.len() != lambda.num_users() || file.bandwidth_hz.len() != lambda.num_users() {
            return Err(invalid("assignment file has inconsistent user counts"));
        }
        Ok(Assignment {
            lambda,
            bandwidth: file.bandwidth_hz.clone(),
            served: file.served.clone(),
            fractional: None,
            diagnostics: file.diagnostics.clone(),
        })
    }

    /// Checks the structural invariants against `scenario`.
    pub fn check(&self, scenario: &Scenario) -> Result<()> {
        let (m, n) = (scenario.num_users(), scenario.num_edges());
        if self.lambda.num_users() != m || self.lambda.num_edges() != n {
            return Err(invalid("assignment shape does not match the scenario"));
        }
        if !self.lambda.is_binary() {
            return Err(invalid("assignment is not binary"));
        }
        for i in 0..m {
            let links = self.lambda.edges_of(i).count();
            if self.served[i] != (links > 0) || links > 2 {
                return Err(invalid(format!("user {i} has {links} links but served={}", self.served[i])));
            }
            for j in 0..n {
                let linked = self.lambda.get(i, j) == 1.0;
                if linked != (self.bandwidth[i][j] > 0.0) {
                    return Err(invalid(format!("bandwidth of user {i} at edge {j} disagrees with lambda")));
                }
            }
        }
        for (j, e) in scenario.edges.iter().enumerate() {
            let used: f64 = (0..m).map(|i| self.bandwidth[i][j]).sum();
            if used > e.bandwidth_budget * (1.0 + 1e-12) {
                return Err(invalid(format!(
                    "edge {j} grants {used} Hz of a {} Hz budget",
                    e.bandwidth_budget
                )));
            }
        }
        Ok(())
    }
}

/// Per-link latency, energy and feasibility at a fixed bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkTable {
    pub compute_times: Vec<f64>,
    pub latency: Vec<Vec<f64>>,
    pub energy: Vec<Vec<f64>>,
    pub feasible: Vec<Vec<bool>>,
}

impl LinkTable {
    pub fn new(scenario: &Scenario, bandwidth: f64) -> Result<LinkTable> {
        let (m, n) = (scenario.num_users(), scenario.num_edges());
        let compute_times: Vec<f64> = scenario
            .users
            .iter()
            .map(|u| computation_time(u, &scenario.compute))
            .collect();
        let mut latency = vec![vec![0.0; n]; m];
        let mut energy = vec![vec![0.0; n]; m];
        let mut feasible = vec![vec![false; n]; m];
        for i in 0..m {
            let time_budget = scenario.deadline - compute_times[i];
            let energy_budget = scenario.users[i].energy_budget;
            for j in 0..n {
                let est = link_estimate(scenario, i, j, bandwidth)?;
                latency[i][j] = est.latency;
                energy[i][j] = est.energy;
                feasible[i][j] = time_budget > 0.0
                    && est.latency <= time_budget * (1.0 + BUDGET_TOLERANCE)
                    && est.energy <= energy_budget * (1.0 + BUDGET_TOLERANCE);
            }
        }
        Ok(LinkTable {
            compute_times,
            latency,
            energy,
            feasible,
        })
    }
}

/// Lowest-index argmax of `row` over `allowed` edges.
fn argmax(row: &[f64], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (j, &v) in row.iter().enumerate() {
        if allowed(j) && best.is_none_or(|b| v > row[b]) {
            best = Some(j);
        }
    }
    best
}

/// Each non-empty row goes to its largest entry, ties to the lowest edge.
pub fn round_sca(fractional: &AssignmentMatrix) -> AssignmentMatrix {
    let mut out = AssignmentMatrix::zeros(fractional.num_users(), fractional.num_edges());
    for i in 0..fractional.num_users() {
        let row = fractional.row(i);
        if row.iter().all(|&v| v <= 0.0) {
            continue;
        }
        if let Some(j) = argmax(row, |_| true) {
            out.set(i, j, 1.0);
        }
    }
    out
}

/// Like [`round_sca`], plus the runner-up edge when its weight exceeds `nu`.
pub fn round_dca(fractional: &AssignmentMatrix, nu: f64) -> AssignmentMatrix {
    let mut out = round_sca(fractional);
    for i in 0..fractional.num_users() {
        let Some(top) = out.edges_of(i).next() else {
            continue;
        };
        let row = fractional.row(i);
        if let Some(second) = argmax(row, |j| j != top) {
            if row[second] > nu {
                out.set(i, second, 1.0);
            }
        }
    }
    out
}

/// Edges in decreasing fractional weight, ties to the lowest index.
fn preference_order(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order
}

/// Moves rounded links that break a budget to the next-best feasible edge.
///
/// A primary link that is infeasible is replaced by the feasible edge with
/// the highest fractional weight not already selected; a user with no such
/// edge is dropped. An infeasible secondary link is simply removed.
pub fn repair_feasibility(
    rounded: &AssignmentMatrix,
    fractional: &AssignmentMatrix,
    feasible: &[Vec<bool>],
) -> (AssignmentMatrix, Vec<bool>, Vec<Diagnostic>) {
    let (m, n) = (rounded.num_users(), rounded.num_edges());
    let mut out = AssignmentMatrix::zeros(m, n);
    let mut served = vec![false; m];
    let mut diags = Vec::new();
    for i in 0..m {
        let order = preference_order(fractional.row(i));
        let rank = |j: usize| order.iter().position(|&o| o == j).unwrap_or(n);
        let mut chosen: Vec<usize> = rounded.edges_of(i).collect();
        chosen.sort_by_key(|&j| rank(j));
        let Some(&primary) = chosen.first() else {
            continue;
        };
        let primary = if feasible[i][primary] {
            Some(primary)
        } else {
            let replacement = order
                .iter()
                .copied()
                .find(|&j| feasible[i][j] && !chosen.contains(&j));
            match replacement {
                Some(to) => {
                    diags.push(Diagnostic::Reassigned { user: i, from: primary, to });
                    Some(to)
                }
                None => {
                    diags.push(Diagnostic::NoFeasibleLink { user: i });
                    None
                }
            }
        };
        let Some(primary) = primary else {
            continue;
        };
        out.set(i, primary, 1.0);
        served[i] = true;
        for &j in &chosen[1..] {
            if j == primary {
                continue;
            }
            if feasible[i][j] {
                out.set(i, j, 1.0);
            } else {
                diags.push(Diagnostic::SecondaryLinkRemoved { user: i, edge: j });
            }
        }
    }
    (out, served, diags)
}

/// KLD increase at an edge if `user` were removed from it.
///
/// An edge left without samples counts as zero divergence.
pub fn eu_importance(edge: &ClassHistogram, user: &ClassHistogram, q: &Distribution) -> Result<f64> {
    let k = q.len();
    let div = |counts: Vec<f64>| -> Result<f64> {
        match Distribution::from_counts(&counts) {
            Some(h) => kld(&h, q),
            None => Ok(0.0),
        }
    };
    let with: Vec<f64> = (0..k).map(|c| edge.get(c) as f64).collect();
    let without: Vec<f64> = (0..k)
        .map(|c| edge.get(c).saturating_sub(user.get(c)) as f64)
        .collect();
    Ok(div(without)? - div(with)?)
}

/// Greedy bandwidth grants at one edge.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeAllocation {
    /// `(user, Hz)` in grant order.
    pub grants: Vec<(usize, f64)>,
    pub dropped: Vec<Diagnostic>,
}

/// Ranks `users` by importance (ties: larger dataset, then lower index) and
/// grants each the minimum bandwidth that meets the deadline at full power
/// until the edge's budget would be exceeded. Users whose deadline cannot be
/// met at any bandwidth are skipped.
pub fn allocate_bandwidth(
    scenario: &Scenario,
    edge: usize,
    users: &[usize],
    q: &Distribution,
) -> Result<EdgeAllocation> {
    let hists = scenario.user_histograms();
    let edge_counts: ClassHistogram = users.iter().map(|&i| hists[i].clone()).sum();
    let mut ranked = Vec::with_capacity(users.len());
    for &i in users {
        ranked.push((i, eu_importance(&edge_counts, &hists[i], q)?));
    }
    ranked.sort_by(|&(a, ia), &(b, ib)| {
        ib.total_cmp(&ia)
            .then(hists[b].total().cmp(&hists[a].total()))
            .then(scenario.users[a].id.cmp(&scenario.users[b].id))
            .then(a.cmp(&b))
    });

    let budget = scenario.edges[edge].bandwidth_budget;
    let mut used = 0.0;
    let mut out = EdgeAllocation::default();
    let mut exhausted = false;
    for (i, _) in ranked {
        if exhausted {
            out.dropped.push(Diagnostic::BandwidthExhausted { user: i, edge });
            continue;
        }
        let user = &scenario.users[i];
        let remaining = scenario.deadline
            - computation_time(user, &scenario.compute)
            - scenario.radio.access_delay_up;
        if !(remaining > 0.0) {
            out.dropped.push(Diagnostic::BandwidthUnreachable { user: i, edge });
            continue;
        }
        let gain = channel_gain(scenario.distance(i, edge), user.fading_magnitude, &scenario.radio)?;
        match min_bandwidth_for_deadline(scenario.model_bits, remaining, gain, &scenario.radio)? {
            MinBandwidth::Unbounded => {
                out.dropped.push(Diagnostic::BandwidthUnreachable { user: i, edge });
            }
            MinBandwidth::Finite(b) => {
                if used + b > budget {
                    exhausted = true;
                    out.dropped.push(Diagnostic::BandwidthExhausted { user: i, edge });
                } else {
                    used += b;
                    out.grants.push((i, b));
                }
            }
        }
    }
    Ok(out)
}

fn counts_kld(counts: &[f64], q: &Distribution) -> f64 {
    match Distribution::from_counts(counts) {
        Some(h) => kld(&h, q).unwrap_or(f64::INFINITY),
        None => 0.0,
    }
}

/// Mutable single-connectivity state for local search.
struct SearchState<'a> {
    hists: &'a [Vec<f64>],
    q: &'a Distribution,
    choice: Vec<Option<usize>>,
    edge_counts: Vec<Vec<f64>>,
    edge_users: Vec<usize>,
    edge_kld: Vec<f64>,
}

impl<'a> SearchState<'a> {
    fn new(hists: &'a [Vec<f64>], q: &'a Distribution, n: usize, choice: Vec<Option<usize>>) -> Self {
        let k = q.len();
        let mut edge_counts = vec![vec![0.0; k]; n];
        let mut edge_users = vec![0; n];
        for (i, c) in choice.iter().enumerate() {
            if let Some(j) = *c {
                for (slot, v) in edge_counts[j].iter_mut().zip(&hists[i]) {
                    *slot += v;
                }
                edge_users[j] += 1;
            }
        }
        let edge_kld = edge_counts.iter().map(|c| counts_kld(c, q)).collect();
        Self { hists, q, choice, edge_counts, edge_users, edge_kld }
    }

    fn total(&self) -> f64 {
        self.edge_kld.iter().sum()
    }

    /// Edge `j`'s counts after users `out` leave and users `inn` arrive.
    fn shifted(&self, j: usize, out: &[usize], inn: &[usize]) -> Vec<f64> {
        let mut c = self.edge_counts[j].clone();
        for &o in out {
            for (slot, v) in c.iter_mut().zip(&self.hists[o]) {
                *slot = (*slot - v).max(0.0);
            }
        }
        for &n in inn {
            for (slot, v) in c.iter_mut().zip(&self.hists[n]) {
                *slot += v;
            }
        }
        c
    }

    /// Moves `from_a` to edge `b` and `from_b` to edge `a` if that lowers
    /// total KLD, keeps every link feasible and empties no used edge.
    fn try_exchange(
        &mut self,
        a: usize,
        b: usize,
        from_a: &[usize],
        from_b: &[usize],
        feasible: &[Vec<bool>],
    ) -> bool {
        const MIN_GAIN: f64 = 1e-12;
        if from_a.iter().any(|&i| !feasible[i][b]) || from_b.iter().any(|&i| !feasible[i][a]) {
            return false;
        }
        let users_a = self.edge_users[a] + from_b.len() - from_a.len();
        let users_b = self.edge_users[b] + from_a.len() - from_b.len();
        if (self.edge_users[a] > 0 && users_a == 0) || (self.edge_users[b] > 0 && users_b == 0) {
            return false;
        }
        let ca = self.shifted(a, from_a, from_b);
        let cb = self.shifted(b, from_b, from_a);
        let (ka, kb) = (counts_kld(&ca, self.q), counts_kld(&cb, self.q));
        if ka + kb - self.edge_kld[a] - self.edge_kld[b] >= -MIN_GAIN {
            return false;
        }
        self.edge_counts[a] = ca;
        self.edge_counts[b] = cb;
        self.edge_kld[a] = ka;
        self.edge_kld[b] = kb;
        self.edge_users[a] = users_a;
        self.edge_users[b] = users_b;
        for &i in from_a {
            self.choice[i] = Some(b);
        }
        for &i in from_b {
            self.choice[i] = Some(a);
        }
        true
    }

    /// One sweep of single-user moves and pairwise swaps.
    fn simple_pass(&mut self, feasible: &[Vec<bool>]) -> bool {
        let m = self.choice.len();
        let n = self.edge_counts.len();
        let mut improved = false;
        for i in 0..m {
            for b in 0..n {
                let Some(a) = self.choice[i] else { break };
                if a != b {
                    improved |= self.try_exchange(a, b, &[i], &[], feasible);
                }
            }
        }
        for i in 0..m {
            for i2 in i + 1..m {
                let (Some(a), Some(b)) = (self.choice[i], self.choice[i2]) else { continue };
                if a != b {
                    improved |= self.try_exchange(a, b, &[i], &[i2], feasible);
                }
            }
        }
        improved
    }

    /// First improving exchange of up to two users in each direction between
    /// two edges, skipping the cases `simple_pass` covers.
    fn compound_pass(&mut self, feasible: &[Vec<bool>]) -> bool {
        let n = self.edge_counts.len();
        let members = |s: &Self, j: usize| -> Vec<usize> {
            (0..s.choice.len()).filter(|&i| s.choice[i] == Some(j)).collect()
        };
        let subsets = |users: &[usize]| -> Vec<Vec<usize>> {
            let mut out = vec![Vec::new()];
            for (x, &u) in users.iter().enumerate() {
                out.push(vec![u]);
                for &v in &users[x + 1..] {
                    out.push(vec![u, v]);
                }
            }
            out
        };
        for a in 0..n {
            for b in a + 1..n {
                let sa = subsets(&members(self, a));
                let sb = subsets(&members(self, b));
                for x in &sa {
                    for y in &sb {
                        if x.len() < 2 && y.len() < 2 {
                            continue;
                        }
                        if self.try_exchange(a, b, x, y, feasible) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    /// Descent until neither pass improves.
    fn descend(&mut self, feasible: &[Vec<bool>]) {
        for _ in 0..100_000 {
            if !self.simple_pass(feasible) && !self.compound_pass(feasible) {
                break;
            }
        }
    }
}

/// Greedy construction on the pairwise L1 surrogate: users in decreasing size
/// order join the feasible edge that keeps the per-class counts closest across
/// edges.
fn greedy_surrogate_seed(
    served: &[bool],
    feasible: &[Vec<bool>],
    hists: &[Vec<f64>],
    n: usize,
) -> Vec<Option<usize>> {
    let m = hists.len();
    let k = hists.first().map_or(0, Vec::len);
    let mut order: Vec<usize> = (0..m).filter(|&i| served[i]).collect();
    let size = |i: usize| hists[i].iter().sum::<f64>();
    order.sort_by(|&a, &b| size(b).total_cmp(&size(a)).then(a.cmp(&b)));
    let mut edges = vec![vec![0.0; k]; n];
    let mut choice = vec![None; m];
    let surrogate = |edges: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                total += edges[a].iter().zip(&edges[b]).map(|(x, y)| (x - y).abs()).sum::<f64>();
            }
        }
        total
    };
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..n).filter(|&j| feasible[i][j]) {
            for (slot, v) in edges[j].iter_mut().zip(&hists[i]) {
                *slot += v;
            }
            let cost = surrogate(&edges);
            for (slot, v) in edges[j].iter_mut().zip(&hists[i]) {
                *slot -= v;
            }
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some((j, cost));
            }
        }
        if let Some((j, _)) = best {
            for (slot, v) in edges[j].iter_mut().zip(&hists[i]) {
                *slot += v;
            }
            choice[i] = Some(j);
        }
    }
    choice
}

/// Local search on total KLD from three starts: the repaired rounding, the
/// nearest-edge assignment (where its links are feasible) and a greedy
/// surrogate construction. The best result (ties to the earlier start) is
/// returned as a single-connectivity matrix.
fn refine_single(
    scenario: &Scenario,
    start: &AssignmentMatrix,
    served: &[bool],
    feasible: &[Vec<bool>],
    hists: &[Vec<f64>],
    q: &Distribution,
) -> AssignmentMatrix {
    let (m, n) = (start.num_users(), start.num_edges());
    let primary: Vec<Option<usize>> = (0..m)
        .map(|i| if served[i] { start.edges_of(i).next() } else { None })
        .collect();
    let nearest: Vec<Option<usize>> = (0..m)
        .map(|i| {
            primary[i].map(|p| {
                let j = nearest_edge(scenario, i);
                if feasible[i][j] {
                    j
                } else {
                    p
                }
            })
        })
        .collect();
    let greedy = greedy_surrogate_seed(served, feasible, hists, n);
    let mut best: Option<SearchState> = None;
    for seed in [primary, nearest, greedy] {
        let mut state = SearchState::new(hists, q, n, seed);
        state.descend(feasible);
        if best.as_ref().is_none_or(|b| state.total() < b.total() - 1e-12) {
            best = Some(state);
        }
    }
    let best = best.expect("at least one start");
    let mut out = AssignmentMatrix::zeros(m, n);
    for (i, c) in best.choice.iter().enumerate() {
        if let Some(j) = *c {
            out.set(i, j, 1.0);
        }
    }
    out
}

/// Adds, user by user, the runner-up edge of the relaxed solution when its
/// weight exceeds `nu`, the link is feasible, and it lowers total KLD.
fn add_dual_links(
    single: &AssignmentMatrix,
    fractional: &AssignmentMatrix,
    nu: f64,
    feasible: &[Vec<bool>],
    hists: &[Vec<f64>],
    q: &Distribution,
) -> AssignmentMatrix {
    let (m, n) = (single.num_users(), single.num_edges());
    let mut out = single.clone();
    let mut edges: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut c = vec![0.0; q.len()];
            for i in out.users_of(j) {
                for (slot, v) in c.iter_mut().zip(&hists[i]) {
                    *slot += v;
                }
            }
            c
        })
        .collect();
    for i in 0..m {
        let Some(primary) = out.edges_of(i).next() else { continue };
        let row = fractional.row(i);
        let Some(second) = argmax(row, |j| j != primary) else { continue };
        if !(row[second] > nu) || !feasible[i][second] {
            continue;
        }
        let mut grown = edges[second].clone();
        for (slot, v) in grown.iter_mut().zip(&hists[i]) {
            *slot += v;
        }
        if counts_kld(&grown, q) < counts_kld(&edges[second], q) - 1e-12 {
            edges[second] = grown;
            out.set(i, second, 1.0);
        }
    }
    out
}

/// Runs the allocator at every edge and clears links that got no bandwidth.
fn allocate_all(
    scenario: &Scenario,
    mut lambda: AssignmentMatrix,
    mut served: Vec<bool>,
    q: &Distribution,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<(AssignmentMatrix, Vec<Vec<f64>>, Vec<bool>)> {
    let (m, n) = (scenario.num_users(), scenario.num_edges());
    let mut bandwidth = vec![vec![0.0; n]; m];
    for j in 0..n {
        let users: Vec<usize> = lambda.users_of(j).into_iter().filter(|&i| served[i]).collect();
        if users.is_empty() {
            continue;
        }
        let alloc = allocate_bandwidth(scenario, j, &users, q)?;
        for (i, b) in alloc.grants {
            bandwidth[i][j] = b;
        }
        for d in alloc.dropped {
            if let Diagnostic::BandwidthExhausted { user, .. } | Diagnostic::BandwidthUnreachable { user, .. } = d {
                lambda.set(user, j, 0.0);
            }
            diagnostics.push(d);
        }
    }
    for (i, s) in served.iter_mut().enumerate() {
        *s = *s && lambda.edges_of(i).next().is_some();
    }
    for i in 0..m {
        if !served[i] {
            lambda.row_mut(i).fill(0.0);
        }
    }
    Ok((lambda, bandwidth, served))
}

/// The full assignment pipeline.
pub fn eara_assign(scenario: &Scenario, config: &EaraConfig) -> Result<Assignment> {
    scenario.validate()?;
    config.validate()?;
    let (m, n) = (scenario.num_users(), scenario.num_edges());
    let bf = config.reference_bandwidth.unwrap_or(scenario.reference_bandwidth);
    let hists = scenario.user_histograms();
    let q = reference_distribution(config.reference, &hists, scenario.num_classes)?;
    let links = LinkTable::new(scenario, bf)?;
    let mut result = Assignment::empty(m, n);

    let mut active = Vec::new();
    for i in 0..m {
        if links.compute_times[i] >= scenario.deadline {
            result.diagnostics.push(Diagnostic::ComputeExceedsDeadline {
                user: i,
                compute_s: links.compute_times[i],
                deadline_s: scenario.deadline,
            });
        } else if !links.feasible[i].iter().any(|&f| f) {
            result.diagnostics.push(Diagnostic::NoFeasibleLink { user: i });
        } else {
            active.push(i);
        }
    }
    if active.is_empty() {
        return Ok(result);
    }

    let pairs = config.pairs.clone().unwrap_or_else(|| all_pairs(n));
    let pick = |mat: &[Vec<f64>]| active.iter().map(|&i| mat[i].clone()).collect::<Vec<_>>();
    let inputs = P2Inputs {
        histograms: active.iter().map(|&i| hists[i].as_f64()).collect(),
        num_edges: n,
        compute_times: active.iter().map(|&i| links.compute_times[i]).collect(),
        deadline: scenario.deadline,
        latency: pick(&links.latency),
        energy: pick(&links.energy),
        energy_budgets: active.iter().map(|&i| scenario.users[i].energy_budget).collect(),
        pairs,
    };
    let program = build_p2_from_parts(&inputs)?;
    let solution = solve_lp(&program.program)?;
    if !solution.is_optimal() {
        result.diagnostics.push(Diagnostic::LpInfeasible);
        return Ok(result);
    }
    let relaxed = program.extract_lambda(&solution.x);
    let mut fractional = AssignmentMatrix::zeros(m, n);
    for (row, &i) in active.iter().enumerate() {
        fractional.row_mut(i).copy_from_slice(relaxed.row(row));
    }

    let rounded = match (config.mode, config.refine) {
        (Connectivity::Dual, false) => round_dca(&fractional, config.dual_threshold),
        _ => round_sca(&fractional),
    };
    let (mut repaired, served, repair_diags) = repair_feasibility(&rounded, &fractional, &links.feasible);
    result.diagnostics.extend(repair_diags);
    if config.refine {
        let counts: Vec<Vec<f64>> = hists.iter().map(ClassHistogram::as_f64).collect();
        repaired = refine_single(scenario, &repaired, &served, &links.feasible, &counts, &q);
        if config.mode == Connectivity::Dual {
            repaired = add_dual_links(
                &repaired,
                &fractional,
                config.dual_threshold,
                &links.feasible,
                &counts,
                &q,
            );
        }
    }
    let (lambda, bandwidth, served) = allocate_all(scenario, repaired, served, &q, &mut result.diagnostics)?;
    result.lambda = lambda;
    result.bandwidth = bandwidth;
    result.served = served;
    result.fractional = Some(fractional);
    Ok(result)
}

/// Index of the edge closest to user `i`, ties to the lowest index.
pub fn nearest_edge(scenario: &Scenario, i: usize) -> usize {
    let mut best = 0;
    for j in 1..scenario.num_edges() {
        if scenario.distance(i, j) < scenario.distance(i, best) {
            best = j;
        }
    }
    best
}

/// Nearest-edge assignment with the same bandwidth allocator.
pub fn dba_assign(scenario: &Scenario) -> Result<Assignment> {
    dba_assign_with(scenario, ReferenceKind::Uniform)
}

pub fn dba_assign_with(scenario: &Scenario, reference: ReferenceKind) -> Result<Assignment> {
    scenario.validate()?;
    let (m, n) = (scenario.num_users(), scenario.num_edges());
    let hists = scenario.user_histograms();
    let q = reference_distribution(reference, &hists, scenario.num_classes)?;
    let choice: Vec<usize> = (0..m).map(|i| nearest_edge(scenario, i)).collect();
    let mut result = Assignment::empty(m, n);
    let (lambda, bandwidth, served) = allocate_all(
        scenario,
        AssignmentMatrix::from_choices(&choice, n),
        vec![true; m],
        &q,
        &mut result.diagnostics,
    )?;
    result.lambda = lambda;
    result.bandwidth = bandwidth;
    result.served = served;
    Ok(result)
}
