//! Drivers shared by the command line tool and the acceptance suite.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eara::{dba_assign_with, eara_assign, Assignment, Connectivity, EaraConfig};
use crate::error::{invalid, Result};
use crate::flsim::{
    centralized_train, hierarchical_train, rounds_to_accuracy, LocalWork, Optimizer, ParticipationPreset,
    RoundRecord, TrainConfig, TrainTrace,
};
use crate::scenario::{
    generate_synthetic_dataset, partition_by_histograms, ClassHistogram, GaussianMixture, LabeledDataset, Scenario,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    EaraSca,
    EaraDca,
    Dba,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::EaraSca, Strategy::EaraDca, Strategy::Dba];

    pub fn label(&self) -> &'static str {
        match self {
            Strategy::EaraSca => "eara-sca",
            Strategy::EaraDca => "eara-dca",
            Strategy::Dba => "dba",
        }
    }

    /// Runs the strategy; `base` supplies everything but the connectivity mode.
    pub fn assign(&self, scenario: &Scenario, base: &EaraConfig) -> Result<Assignment> {
        match self {
            Strategy::Dba => dba_assign_with(scenario, base.reference),
            Strategy::EaraSca => eara_assign(
                scenario,
                &EaraConfig {
                    mode: Connectivity::Single,
                    ..base.clone()
                },
            ),
            Strategy::EaraDca => eara_assign(
                scenario,
                &EaraConfig {
                    mode: Connectivity::Dual,
                    ..base.clone()
                },
            ),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.label() == s)
            .ok_or_else(|| invalid(format!("unknown strategy `{s}` (expected eara-sca, eara-dca or dba)")))
    }
}

/// How per-user data is synthesised for a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskKind {
    /// One Gaussian blob per class.
    Blobs { separation: f64 },
    /// Several Gaussian modes per class.
    Mixture { modes: usize, spread: f64, noise: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub dim: usize,
    pub test_per_class: u64,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Mixture {
                modes: 3,
                spread: 3.0,
                noise: 0.7,
            },
            dim: 4,
            test_per_class: 300,
            seed: 0,
        }
    }
}

/// Per-user training shards, their union and a balanced test set.
#[derive(Debug, Clone)]
pub struct Task {
    pub shards: Vec<LabeledDataset>,
    pub pool: LabeledDataset,
    pub test: LabeledDataset,
}

impl TaskSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// Draws data matching every user's class histogram exactly.
    pub fn build(&self, scenario: &Scenario) -> Result<Task> {
        let k = scenario.num_classes;
        let hists = scenario.user_histograms();
        let total: ClassHistogram = hists.iter().cloned().sum::<ClassHistogram>().with_num_classes(k);
        let test_counts = ClassHistogram::from_counts(vec![self.test_per_class; k]);
        let (pool, test) = match self.kind {
            TaskKind::Blobs { separation } => (
                generate_synthetic_dataset(k, self.dim, &total, separation, self.seed)?,
                generate_synthetic_dataset(k, self.dim, &test_counts, separation, self.seed.wrapping_add(2))?,
            ),
            TaskKind::Mixture { modes, spread, noise } => {
                let g = GaussianMixture::new(k, self.dim, modes, spread, noise, self.seed)?;
                (g.sample(&total, self.seed.wrapping_add(1))?, g.sample(&test_counts, self.seed.wrapping_add(2))?)
            }
        };
        let shards = partition_by_histograms(&pool, &hists, self.seed.wrapping_add(3))?;
        Ok(Task { shards, pool, test })
    }
}

/// Training settings used for the skewed-fixture comparisons: plain SGD with
/// one local step per edge round (T′ = 1), ten edge rounds per central round
/// and a 32-unit hidden layer.
pub fn skewed_training_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.2,
        local_work: LocalWork::Steps(1),
        edge_rounds: 10,
        batch_size: Some(10),
        optimizer: Optimizer::Sgd,
        max_central_rounds: 60,
        hidden: Some(32),
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub strategy: String,
    pub metric: String,
    pub metric_value: f64,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

/// One assignment per (scale, strategy).
#[derive(Debug, Clone)]
pub struct DistancePoint {
    pub scale: f64,
    pub assignments: Vec<(Strategy, Assignment)>,
    pub kld: Vec<(Strategy, f64)>,
}

/// Scales every user–edge distance and reruns each strategy.
pub fn distance_sweep(
    base: &Scenario,
    scales: &[f64],
    strategies: &[Strategy],
    eara: &EaraConfig,
    jobs: usize,
) -> Result<Vec<DistancePoint>> {
    if scales.is_empty() {
        return Err(invalid("sweep needs at least one value"));
    }
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(invalid(format!("distance scale {s} must be positive")));
    }
    pool(jobs)?.install(|| {
        scales
            .par_iter()
            .map(|&scale| {
                let s = base.with_distance_scale(scale);
                let mut assignments = Vec::new();
                let mut kld = Vec::new();
                for &st in strategies {
                    let a = st.assign(&s, eara)?;
                    kld.push((st, a.kld_report(&s, eara.reference)?.total));
                    assignments.push((st, a));
                }
                Ok(DistancePoint {
                    scale,
                    assignments,
                    kld,
                })
            })
            .collect()
    })
}

pub fn distance_rows(points: &[DistancePoint]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for p in points {
        for ((st, a), (_, kld)) in p.assignments.iter().zip(&p.kld) {
            let row = |metric: &str, v: f64| SweepRow {
                param: "distance_scale".into(),
                value: format!("{}", p.scale),
                strategy: st.label().into(),
                metric: metric.into(),
                metric_value: v,
            };
            rows.push(row("kld_total", *kld));
            rows.push(row("served_users", a.num_served() as f64));
            rows.push(row("dual_users", a.dual_users().len() as f64));
        }
    }
    rows
}

/// Parses a participation sweep value: a fraction in (0, 1], `scd` (drop the
/// holders of the last class) or `dcd` (the last two classes).
pub fn parse_participation(value: &str, num_classes: usize) -> Result<ParticipationPreset> {
    match value.trim().to_ascii_lowercase().as_str() {
        "scd" if num_classes >= 2 => Ok(ParticipationPreset::SingleClassDrop(num_classes - 1)),
        "dcd" if num_classes >= 3 => Ok(ParticipationPreset::DualClassDrop(num_classes - 2, num_classes - 1)),
        other => {
            let p: f64 = other
                .parse()
                .map_err(|_| invalid(format!("participation value `{value}` is not a fraction, scd or dcd")))?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(invalid(format!("participation {p} outside (0, 1]")));
            }
            Ok(ParticipationPreset::Upp(p))
        }
    }
}

/// Trains under each participation preset with one fixed assignment.
pub fn participation_sweep(
    scenario: &Scenario,
    assignment: &Assignment,
    task: &Task,
    config: &TrainConfig,
    presets: &[ParticipationPreset],
    jobs: usize,
) -> Result<Vec<(ParticipationPreset, TrainTrace)>> {
    if presets.is_empty() {
        return Err(invalid("sweep needs at least one value"));
    }
    pool(jobs)?.install(|| {
        presets
            .par_iter()
            .map(|p| {
                let trace = hierarchical_train(scenario, assignment, &task.shards, &task.test, &p.apply(config))?;
                Ok((p.clone(), trace))
            })
            .collect()
    })
}

pub fn participation_rows(strategy: Strategy, results: &[(ParticipationPreset, TrainTrace)]) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for (p, t) in results {
        let value = match p {
            ParticipationPreset::Upp(x) => format!("{x}"),
            other => other.label(),
        };
        let row = |metric: &str, v: f64| SweepRow {
            param: "upp".into(),
            value: value.clone(),
            strategy: strategy.label().into(),
            metric: metric.into(),
            metric_value: v,
        };
        rows.push(row("final_accuracy", t.final_accuracy().unwrap_or(f64::NAN)));
        rows.push(row("mean_accuracy_last5", tail_mean_accuracy(&t.records, 5)));
    }
    rows
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| crate::Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Mean accuracy over the last `n` rounds.
pub fn tail_mean_accuracy(records: &[RoundRecord], n: usize) -> f64 {
    let tail = &records[records.len().saturating_sub(n)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|r| r.accuracy).sum::<f64>() / tail.len() as f64
}

/// Curves of one training comparison.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub centralized: TrainTrace,
    pub runs: Vec<(Strategy, Assignment, TrainTrace)>,
}

impl Comparison {
    /// 95% of the centralized model's plateau (mean of its last five rounds).
    pub fn target(&self) -> f64 {
        0.95 * tail_mean_accuracy(&self.centralized.records, 5)
    }

    pub fn trace(&self, s: Strategy) -> Option<&TrainTrace> {
        self.runs.iter().find(|r| r.0 == s).map(|r| &r.2)
    }

    pub fn rounds_to_target(&self, s: Strategy) -> Option<usize> {
        rounds_to_accuracy(&self.trace(s)?.records, self.target())
    }
}

/// Trains every strategy plus the centralized benchmark on the same data.
pub fn compare_strategies(
    scenario: &Scenario,
    task: &Task,
    strategies: &[Strategy],
    eara: &EaraConfig,
    config: &TrainConfig,
) -> Result<Comparison> {
    let centralized = centralized_train(&task.pool, &task.test, scenario.num_classes, scenario.num_edges(), config)?;
    let runs = strategies
        .par_iter()
        .map(|&s| {
            let a = s.assign(scenario, eara)?;
            let t = hierarchical_train(scenario, &a, &task.shards, &task.test, config)?;
            Ok((s, a, t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { centralized, runs })
}

/// One line of a trace summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub name: String,
    pub rounds_to_target: Option<usize>,
    pub final_accuracy: f64,
    /// Uplink bytes per user in the first round.
    pub bytes_per_round: f64,
    /// Uplink bytes per user up to the round that reached the target.
    pub bytes_to_target: Option<f64>,
    pub total_bytes_up: f64,
    /// `1 − rounds / baseline rounds`; `None` when either run misses the target.
    pub round_reduction: Option<f64>,
}

pub fn summarize(traces: &[(String, Vec<RoundRecord>)], baseline: &str, target: f64) -> Result<Vec<ReportRow>> {
    let base = traces
        .iter()
        .find(|(n, _)| n == baseline)
        .ok_or_else(|| invalid(format!("baseline `{baseline}` is not among the traces")))?;
    let base_rounds = rounds_to_accuracy(&base.1, target);
    traces
        .iter()
        .map(|(name, recs)| {
            let last = recs.last().ok_or_else(|| invalid(format!("trace `{name}` is empty")))?;
            let rounds = rounds_to_accuracy(recs, target);
            Ok(ReportRow {
                name: name.clone(),
                rounds_to_target: rounds,
                final_accuracy: last.accuracy,
                bytes_per_round: recs[0].bytes_up_per_user / recs[0].round as f64,
                bytes_to_target: rounds.map(|r| {
                    recs.iter()
                        .find(|x| x.round == r)
                        .map_or(f64::NAN, |x| x.bytes_up_per_user)
                }),
                total_bytes_up: last.bytes_up_per_user,
                round_reduction: match (rounds, base_rounds) {
                    (Some(a), Some(b)) if b > 0 => Some(1.0 - a as f64 / b as f64),
                    _ => None,
                },
            })
        })
        .collect()
}
