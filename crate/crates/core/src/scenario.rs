//! World model: end users, edge nodes, labelled data and class histograms.
//!
//! Scenarios are read from and written to a small JSON document:
//!
//! ```json
//! {
//!   "num_classes": 3,
//!   "deadline_s": 2.0,
//!   "model_bits": 473248,
//!   "reference_bandwidth_hz": 1e6,
//!   "radio": { "n0_w_per_hz": 4e-21, "omega": 1e-3, "alpha": 3.0, "ber": 1e-4,
//!              "p_max_w": 0.2, "xi_up_s": 0.01, "xi_down_s": 0.01,
//!              "download_rate_bps": 5e7 },
//!   "compute": { "upsilon": 1.0, "epsilon": 0.5 },
//!   "users": [ { "pos": [10.0, 0.0], "classes": { "0": 120, "2": 4 },
//!                "psi": 1e4, "freq_hz": 1e9, "energy_budget_j": 0.05 } ],
//!   "edges": [ { "pos": [0.0, 0.0], "bandwidth_hz": 2e7 } ]
//! }
//! ```
//!
//! User entries may also carry `id` (defaults to the array index) and
//! `fading` (the fading magnitude |h|, defaults to 1).

use std::collections::BTreeMap;
use std::ops::Add;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::radio::{ChannelParams, ComputeParams};

/// Per-class sample counts, indexed by class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ClassHistogram {
    counts: Vec<u64>,
}

impl ClassHistogram {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            counts: vec![0; num_classes],
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        Self { counts }
    }

    /// Builds a histogram from sparse `(class, count)` pairs.
    pub fn from_pairs(num_classes: usize, pairs: &[(usize, u64)]) -> Result<Self> {
        let mut counts = vec![0; num_classes];
        for &(class, n) in pairs {
            if class >= num_classes {
                return Err(Error::InvalidLabel {
                    label: class,
                    num_classes,
                });
            }
            counts[class] += n;
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, class: usize) -> u64 {
        self.counts.get(class).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Class proportions, or `None` for an empty histogram.
    pub fn normalized(&self) -> Option<Vec<f64>> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let t = total as f64;
        Some(self.counts.iter().map(|&c| c as f64 / t).collect())
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Classes with a non-zero count.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, _)| k)
    }

    /// Copy padded (or truncated) to `num_classes` entries.
    pub fn with_num_classes(&self, num_classes: usize) -> Self {
        let mut counts = self.counts.clone();
        counts.resize(num_classes, 0);
        Self { counts }
    }
}

impl Add for &ClassHistogram {
    type Output = ClassHistogram;

    fn add(self, rhs: &ClassHistogram) -> ClassHistogram {
        let k = self.counts.len().max(rhs.counts.len());
        ClassHistogram {
            counts: (0..k).map(|c| self.get(c) + rhs.get(c)).collect(),
        }
    }
}

impl Add for ClassHistogram {
    type Output = ClassHistogram;

    fn add(self, rhs: ClassHistogram) -> ClassHistogram {
        &self + &rhs
    }
}

impl std::iter::Sum for ClassHistogram {
    fn sum<I: Iterator<Item = ClassHistogram>>(iter: I) -> Self {
        iter.fold(ClassHistogram::default(), |acc, h| acc + h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndUserSpec {
    pub id: usize,
    /// Position in metres.
    pub position: [f64; 2],
    pub histogram: ClassHistogram,
    /// CPU cycles needed per sample.
    pub cycles_per_sample: f64,
    /// CPU frequency in Hz.
    pub cpu_frequency: f64,
    /// Transmission energy budget in joules.
    pub energy_budget: f64,
    /// Fading magnitude |h|.
    pub fading_magnitude: f64,
}

impl EndUserSpec {
    /// Number of local samples.
    pub fn data_size(&self) -> u64 {
        self.histogram.total()
    }

    fn validate(&self) -> Result<()> {
        if self.data_size() < 1 {
            return Err(invalid(format!("user {} holds no samples", self.id)));
        }
        let positive = [
            ("psi", self.cycles_per_sample),
            ("freq_hz", self.cpu_frequency),
            ("energy_budget_j", self.energy_budget),
            ("fading", self.fading_magnitude),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!(
                    "user {}: `{name}` must be positive and finite, got {v}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeNodeSpec {
    pub id: usize,
    pub position: [f64; 2],
    /// Bandwidth budget in Hz.
    pub bandwidth_budget: f64,
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile", into = "ScenarioFile")]
pub struct Scenario {
    pub users: Vec<EndUserSpec>,
    pub edges: Vec<EdgeNodeSpec>,
    pub num_classes: usize,
    pub radio: ChannelParams,
    pub compute: ComputeParams,
    /// Per-round latency deadline in seconds.
    pub deadline: f64,
    /// Size of one model update in bits.
    pub model_bits: f64,
    /// Bandwidth assumed per link while solving the relaxed assignment, in Hz.
    pub reference_bandwidth: f64,
}

impl Scenario {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.is_empty() {
            return Err(invalid("scenario needs at least one edge node"));
        }
        if self.users.len() < self.edges.len() {
            return Err(invalid(format!(
                "scenario has {} users for {} edges; need at least one user per edge",
                self.users.len(),
                self.edges.len()
            )));
        }
        if self.num_classes < 1 {
            return Err(invalid("num_classes must be at least 1"));
        }
        for u in &self.users {
            u.validate()?;
            if u.histogram.num_classes() > self.num_classes
                && u.histogram.counts()[self.num_classes..].iter().any(|&c| c > 0)
            {
                return Err(invalid(format!(
                    "user {} has samples of a class >= num_classes ({})",
                    u.id, self.num_classes
                )));
            }
        }
        for e in &self.edges {
            if !(e.bandwidth_budget > 0.0) {
                return Err(invalid(format!(
                    "edge {}: bandwidth budget must be positive",
                    e.id
                )));
            }
        }
        for (name, v) in [
            ("deadline_s", self.deadline),
            ("model_bits", self.model_bits),
            ("reference_bandwidth_hz", self.reference_bandwidth),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("`{name}` must be positive, got {v}")));
            }
        }
        self.radio.validate()?;
        self.compute.validate()?;
        Ok(())
    }

    pub fn user_histograms(&self) -> Vec<ClassHistogram> {
        self.users
            .iter()
            .map(|u| u.histogram.with_num_classes(self.num_classes))
            .collect()
    }

    /// Class totals over every user.
    pub fn global_histogram(&self) -> ClassHistogram {
        self.user_histograms()
            .into_iter()
            .fold(ClassHistogram::zeros(self.num_classes), |a, h| a + h)
    }

    pub fn distance(&self, user: usize, edge: usize) -> f64 {
        distance(self.users[user].position, self.edges[edge].position)
    }

    /// Copy with every coordinate multiplied by `factor`, so each user-edge
    /// distance scales by exactly `factor`.
    pub fn with_distance_scale(&self, factor: f64) -> Scenario {
        let mut out = self.clone();
        for u in &mut out.users {
            u.position = [factor * u.position[0], factor * u.position[1]];
        }
        for e in &mut out.edges {
            e.position = [factor * e.position[0], factor * e.position[1]];
        }
        out
    }

    pub fn from_json_str(text: &str) -> Result<Scenario> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Schema {
                path,
                message: e.into_inner().to_string(),
            }
        })?;
        Ok(scenario)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<usize>,
    pos: [f64; 2],
    classes: BTreeMap<String, u64>,
    psi: f64,
    freq_hz: f64,
    energy_budget_j: f64,
    #[serde(default = "one")]
    fading: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<usize>,
    pos: [f64; 2],
    bandwidth_hz: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    users: Vec<UserFile>,
    edges: Vec<EdgeFile>,
    num_classes: usize,
    radio: ChannelParams,
    compute: ComputeParams,
    deadline_s: f64,
    model_bits: f64,
    reference_bandwidth_hz: f64,
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = Error;

    fn try_from(f: ScenarioFile) -> Result<Scenario> {
        let k = f.num_classes;
        let mut users = Vec::with_capacity(f.users.len());
        for (idx, u) in f.users.into_iter().enumerate() {
            let mut pairs = Vec::with_capacity(u.classes.len());
            for (key, n) in u.classes {
                let class: usize = key.trim().parse().map_err(|_| Error::Schema {
                    path: format!("users[{idx}].classes"),
                    message: format!("class key `{key}` is not a non-negative integer"),
                })?;
                pairs.push((class, n));
            }
            let histogram = ClassHistogram::from_pairs(k, &pairs).map_err(|e| Error::Schema {
                path: format!("users[{idx}].classes"),
                message: e.to_string(),
            })?;
            users.push(EndUserSpec {
                id: u.id.unwrap_or(idx),
                position: u.pos,
                histogram,
                cycles_per_sample: u.psi,
                cpu_frequency: u.freq_hz,
                energy_budget: u.energy_budget_j,
                fading_magnitude: u.fading,
            });
        }
        let edges = f
            .edges
            .into_iter()
            .enumerate()
            .map(|(idx, e)| EdgeNodeSpec {
                id: e.id.unwrap_or(idx),
                position: e.pos,
                bandwidth_budget: e.bandwidth_hz,
            })
            .collect();
        let scenario = Scenario {
            users,
            edges,
            num_classes: k,
            radio: f.radio,
            compute: f.compute,
            deadline: f.deadline_s,
            model_bits: f.model_bits,
            reference_bandwidth: f.reference_bandwidth_hz,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl From<Scenario> for ScenarioFile {
    fn from(s: Scenario) -> ScenarioFile {
        ScenarioFile {
            users: s
                .users
                .into_iter()
                .map(|u| UserFile {
                    id: Some(u.id),
                    pos: u.position,
                    classes: u
                        .histogram
                        .counts()
                        .iter()
                        .enumerate()
                        .filter(|(_, &n)| n > 0)
                        .map(|(k, &n)| (k.to_string(), n))
                        .collect(),
                    psi: u.cycles_per_sample,
                    freq_hz: u.cpu_frequency,
                    energy_budget_j: u.energy_budget,
                    fading: u.fading_magnitude,
                })
                .collect(),
            edges: s
                .edges
                .into_iter()
                .map(|e| EdgeFile {
                    id: Some(e.id),
                    pos: e.position,
                    bandwidth_hz: e.bandwidth_budget,
                })
                .collect(),
            num_classes: s.num_classes,
            radio: s.radio,
            compute: s.compute,
            deadline_s: s.deadline,
            model_bits: s.model_bits,
            reference_bandwidth_hz: s.reference_bandwidth,
        }
    }
}

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != dim * labels.len() {
            return Err(invalid(format!(
                "feature buffer of length {} does not hold {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Self {
            dim,
            features,
            labels,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset {
            dim: self.dim,
            features,
            labels,
        }
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a LabeledDataset>) -> Result<LabeledDataset> {
        let mut out: Option<LabeledDataset> = None;
        for p in parts {
            match &mut out {
                None => out = Some(p.clone()),
                Some(acc) => {
                    if acc.dim != p.dim {
                        return Err(invalid(format!(
                            "cannot concatenate datasets of dimension {} and {}",
                            acc.dim, p.dim
                        )));
                    }
                    acc.features.extend_from_slice(&p.features);
                    acc.labels.extend_from_slice(&p.labels);
                }
            }
        }
        Ok(out.unwrap_or_default())
    }

    /// Largest label plus one.
    pub fn inferred_num_classes(&self) -> Option<usize> {
        self.labels.iter().max().map(|m| m + 1)
    }
}

/// Class-conditional isotropic Gaussians with unit variance and exact
/// per-class counts.
///
/// Class means sit at `separation` times the one-hot corner of the class when
/// `dim >= num_classes`; otherwise they are spread evenly on a circle of
/// radius `separation` in the first two coordinates (or along a line when
/// `dim == 1`).
pub fn generate_synthetic_dataset(
    num_classes: usize,
    dim: usize,
    per_class_counts: &ClassHistogram,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if dim < 1 {
        return Err(invalid("dimension must be at least 1"));
    }
    if num_classes < 2 {
        return Err(invalid("need at least two classes"));
    }
    if !(separation > 0.0) {
        return Err(invalid("separation must be positive"));
    }
    if per_class_counts.support().any(|k| k >= num_classes) {
        return Err(invalid("requested counts for a class >= num_classes"));
    }
    let means = class_means(num_classes, dim, separation);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = per_class_counts.total() as usize;
    let mut features = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..per_class_counts.get(k) {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + z);
            }
            labels.push(k);
        }
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(&mut rng);
    let ordered = LabeledDataset {
        dim,
        features,
        labels,
    };
    Ok(ordered.select(&order))
}

fn class_means(num_classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|k| {
            let mut m = vec![0.0; dim];
            if dim >= num_classes {
                m[k] = separation;
            } else if dim >= 2 {
                let angle = std::f64::consts::TAU * k as f64 / num_classes as f64;
                m[0] = separation * angle.cos();
                m[1] = separation * angle.sin();
            } else {
                m[0] = separation * k as f64;
            }
            m
        })
        .collect()
}

/// Classes made of several isotropic Gaussian modes whose centres are drawn
/// uniformly from `[-spread, spread]^dim`. Unlike the single-blob generator
/// the decision boundaries are non-linear, so a hidden layer is needed and
/// training takes many rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    /// `centers[class][mode]`.
    centers: Vec<Vec<Vec<f64>>>,
    noise: f64,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(num_classes: usize, dim: usize, modes: usize, spread: f64, noise: f64, seed: u64) -> Result<Self> {
        if num_classes < 2 || dim == 0 || modes == 0 {
            return Err(invalid("need at least two classes, one dimension and one mode"));
        }
        if !(spread > 0.0 && noise > 0.0) {
            return Err(invalid("spread and noise must be positive"));
        }
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..num_classes)
            .map(|_| {
                (0..modes)
                    .map(|_| (0..dim).map(|_| rng.gen_range(-spread..spread)).collect())
                    .collect()
            })
            .collect();
        Ok(Self { centers, noise, dim })
    }

    pub fn num_classes(&self) -> usize {
        self.centers.len()
    }

    /// Exactly `counts[k]` samples of class `k`, shuffled; modes are picked
    /// uniformly per sample.
    pub fn sample(&self, counts: &ClassHistogram, seed: u64) -> Result<LabeledDataset> {
        use rand::Rng;
        if counts.support().any(|k| k >= self.num_classes()) {
            return Err(invalid("requested counts for a class >= num_classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total = counts.total() as usize;
        let mut features = Vec::with_capacity(total * self.dim);
        let mut labels = Vec::with_capacity(total);
        for (k, modes) in self.centers.iter().enumerate() {
            for _ in 0..counts.get(k) {
                let c = &modes[rng.gen_range(0..modes.len())];
                for &m in c {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    features.push(m + self.noise * z);
                }
                labels.push(k);
            }
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut rng);
        Ok(LabeledDataset {
            dim: self.dim,
            features,
            labels,
        }
        .select(&order))
    }
}

/// Splits `data` into one shard per requested histogram, sampling without
/// replacement. Shards are disjoint and each row order is shuffled by `seed`.
pub fn partition_by_histograms(
    data: &LabeledDataset,
    per_user: &[ClassHistogram],
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    let num_classes = per_user
        .iter()
        .map(|h| h.num_classes())
        .chain(data.inferred_num_classes())
        .max()
        .unwrap_or(0);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in data.labels.iter().enumerate() {
        pools[y].push(i);
    }
    for (k, pool) in pools.iter().enumerate() {
        let requested: u64 = per_user.iter().map(|h| h.get(k)).sum();
        if requested > pool.len() as u64 {
            return Err(Error::InfeasiblePartition {
                class: k,
                requested,
                available: pool.len() as u64,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }
    let mut cursor = vec![0usize; num_classes];
    let mut shards = Vec::with_capacity(per_user.len());
    for hist in per_user {
        let mut idx = Vec::with_capacity(hist.total() as usize);
        for (k, &n) in hist.counts().iter().enumerate() {
            let n = n as usize;
            idx.extend_from_slice(&pools[k][cursor[k]..cursor[k] + n]);
            cursor[k] += n;
        }
        idx.shuffle(&mut rng);
        shards.push(data.select(&idx));
    }
    Ok(shards)
}

/// Reads a header-less CSV where each row holds the features followed by an
/// integer label.
pub fn load_csv_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    parse_csv_dataset(file)
}

pub fn parse_csv_dataset<R: std::io::Read>(reader: R) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut dim: Option<usize> = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let line_fallback = row_idx + 1;
        let record = record.map_err(|e| Error::Parse {
            line: e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(line_fallback),
            message: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(line_fallback);
        if record.len() < 2 {
            return Err(Error::Parse {
                line,
                message: "need at least one feature and a label".into(),
            });
        }
        let d = record.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Parse {
                    line,
                    message: format!("ragged row: expected {} columns, found {}", expected + 1, d + 1),
                })
            }
            Some(_) => {}
        }
        for cell in record.iter().take(d) {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("non-numeric feature `{cell}`"),
            })?;
            features.push(v);
        }
        let raw = &record[d];
        let label: i64 = raw.parse().map_err(|_| Error::Parse {
            line,
            message: format!("label `{raw}` is not an integer"),
        })?;
        if label < 0 {
            return Err(Error::Parse {
                line,
                message: format!("negative label {label}"),
            });
        }
        labels.push(label as usize);
    }
    let Some(dim) = dim else {
        return Err(invalid("empty dataset: number of classes is undefined"));
    };
    LabeledDataset::new(dim, features, labels)
}

pub fn class_histogram(data: &LabeledDataset, num_classes: usize) -> Result<ClassHistogram> {
    let mut counts = vec![0u64; num_classes];
    for &y in &data.labels {
        if y >= num_classes {
            return Err(Error::InvalidLabel {
                label: y,
                num_classes,
            });
        }
        counts[y] += 1;
    }
    Ok(ClassHistogram { counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn h(counts: &[u64]) -> ClassHistogram {
        ClassHistogram::from_counts(counts.to_vec())
    }

    #[test]
    fn synthetic_counts_are_exact() {
        let data = generate_synthetic_dataset(2, 2, &h(&[5, 5]), 4.0, 7).unwrap();
        assert_eq!(data.len(), 10);
        assert_eq!(class_histogram(&data, 2).unwrap(), h(&[5, 5]));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic_dataset(2, 2, &h(&[5, 5]), 4.0, 7).unwrap();
        let b = generate_synthetic_dataset(2, 2, &h(&[5, 5]), 4.0, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_dataset(2, 2, &h(&[5, 5]), 4.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn mixture_shares_centres_across_draws() {
        let g = GaussianMixture::new(3, 4, 2, 3.0, 0.5, 1).unwrap();
        let a = g.sample(&h(&[4, 0, 6]), 10).unwrap();
        let b = g.sample(&h(&[4, 0, 6]), 11).unwrap();
        assert_eq!(class_histogram(&a, 3).unwrap(), h(&[4, 0, 6]));
        assert_ne!(a, b);
        assert_eq!(a, g.sample(&h(&[4, 0, 6]), 10).unwrap());
        assert!(g.sample(&h(&[0, 0, 0, 1]), 1).is_err());
        assert!(GaussianMixture::new(3, 4, 0, 3.0, 0.5, 1).is_err());
    }

    #[test]
    fn synthetic_seizure_edge_zero() {
        let counts = h(&[1459, 25, 25]);
        let data = generate_synthetic_dataset(3, 8, &counts, 3.0, 1).unwrap();
        assert_eq!(data.len(), 1509);
        assert_eq!(data.dim(), 8);
        assert_eq!(class_histogram(&data, 3).unwrap(), counts);
    }

    #[test]
    fn synthetic_rejects_bad_arguments() {
        assert!(generate_synthetic_dataset(2, 0, &h(&[1, 1]), 1.0, 0).is_err());
        assert!(generate_synthetic_dataset(1, 2, &h(&[1]), 1.0, 0).is_err());
        assert!(generate_synthetic_dataset(2, 2, &h(&[1, 1]), 0.0, 0).is_err());
    }

    #[test]
    fn class_means_are_distinct_in_low_dimension() {
        for (k, d) in [(5, 2), (3, 1), (4, 3)] {
            let means = class_means(k, d, 2.0);
            for a in 0..k {
                for b in a + 1..k {
                    assert_ne!(means[a], means[b]);
                }
            }
        }
    }

    #[test]
    fn partition_into_single_class_shards() {
        let data = generate_synthetic_dataset(2, 3, &h(&[10, 10]), 2.0, 3).unwrap();
        let shards = partition_by_histograms(&data, &[h(&[10]), h(&[0, 10])], 5).unwrap();
        assert_eq!(class_histogram(&shards[0], 2).unwrap(), h(&[10, 0]));
        assert_eq!(class_histogram(&shards[1], 2).unwrap(), h(&[0, 10]));
    }

    #[test]
    fn partition_reports_short_class() {
        let data = generate_synthetic_dataset(2, 3, &h(&[10, 10]), 2.0, 3).unwrap();
        let err = partition_by_histograms(&data, &[h(&[11])], 5).unwrap_err();
        assert!(matches!(err, Error::InfeasiblePartition { class: 0, .. }));
    }

    #[test]
    fn csv_parses_rows_in_order() {
        let data = parse_csv_dataset("1,2,0\n3,4,1\n5,6,0\n".as_bytes()).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.dim(), 2);
        assert_eq!(data.labels(), &[0, 1, 0]);
        assert_eq!(data.row(1), &[3.0, 4.0]);
        assert_eq!(data.inferred_num_classes(), Some(2));
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(
            parse_csv_dataset("".as_bytes()),
            Err(Error::InvalidArgument(_))
        ));
        match parse_csv_dataset("1,2,0\n3,1\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_csv_dataset("1,2,0\n3,x,1\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_csv_dataset("1,2,-1\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn histogram_of_labels() {
        let data = LabeledDataset::new(1, vec![0.0, 0.0, 0.0], vec![0, 0, 1]).unwrap();
        assert_eq!(class_histogram(&data, 2).unwrap(), h(&[2, 1]));
        assert_eq!(
            class_histogram(&LabeledDataset::empty(1), 3).unwrap(),
            h(&[0, 0, 0])
        );
        assert!(matches!(
            class_histogram(&data, 1),
            Err(Error::InvalidLabel { label: 1, .. })
        ));
    }

    #[test]
    fn scenario_json_reports_path() {
        let text = crate::fixtures::table2_scenario().to_json_string();
        let back = Scenario::from_json_str(&text).unwrap();
        assert_eq!(back, crate::fixtures::table2_scenario());

        let broken = text.replacen("\"psi\": 10000.0", "\"psi\": \"fast\"", 1);
        match Scenario::from_json_str(&broken) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "users[0].psi"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn distance_scale_keeps_nearest_edge() {
        let s = crate::fixtures::table3_scenario(1);
        let far = s.with_distance_scale(4.0);
        for i in 0..s.num_users() {
            let before = (0..s.num_edges())
                .min_by(|&a, &b| s.distance(i, a).total_cmp(&s.distance(i, b)))
                .unwrap();
            let after = (0..far.num_edges())
                .min_by(|&a, &b| far.distance(i, a).total_cmp(&far.distance(i, b)))
                .unwrap();
            assert_eq!(before, after);
            assert!((far.distance(i, before) - 4.0 * s.distance(i, before)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn partition_is_sound(
            counts in proptest::collection::vec(0u64..30, 3),
            splits in proptest::collection::vec(proptest::collection::vec(0u64..10, 3), 1..5),
            seed in 0u64..1000,
        ) {
            let total: Vec<u64> = (0..3)
                .map(|k| counts[k] + splits.iter().map(|s| s[k]).sum::<u64>())
                .collect();
            let data = generate_synthetic_dataset(3, 2, &h(&total), 1.0, seed).unwrap();
            let per_user: Vec<ClassHistogram> = splits.iter().map(|s| h(s)).collect();
            let shards = partition_by_histograms(&data, &per_user, seed).unwrap();
            let mut seen = std::collections::HashSet::new();
            for (shard, want) in shards.iter().zip(&per_user) {
                prop_assert_eq!(&class_histogram(shard, 3).unwrap(), want);
                for i in 0..shard.len() {
                    let key: Vec<u64> = shard.row(i).iter().map(|v| v.to_bits()).collect();
                    prop_assert!(seen.insert(key));
                }
            }
        }

        #[test]
        fn histogram_is_additive(
            a in proptest::collection::vec(0usize..4, 0..40),
            b in proptest::collection::vec(0usize..4, 0..40),
        ) {
            let da = LabeledDataset::new(1, vec![0.0; a.len()], a).unwrap();
            let db = LabeledDataset::new(1, vec![1.0; b.len()], b).unwrap();
            let joined = LabeledDataset::concat([&da, &db]).unwrap();
            prop_assert_eq!(
                class_histogram(&joined, 4).unwrap(),
                class_histogram(&da, 4).unwrap() + class_histogram(&db, 4).unwrap()
            );
        }

        #[test]
        fn normalized_sums_to_one(counts in proptest::collection::vec(0u64..10_000, 1..8)) {
            let hist = h(&counts);
            if let Some(p) = hist.normalized() {
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
