//! Two-tier federated training simulator.
//!
//! Users run local steps from their edge's model, edges average user models
//! every edge round, and the server averages edge models every `T` edge
//! rounds. All averages are dataset-size weighted and summed in a fixed
//! (ascending id) order so parallel local training stays bit-reproducible.

mod model;
mod optim;
mod train;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use model::{ModelParams, ModelShape};
pub use optim::{apply_update, Optimizer, OptimizerState};
pub use train::{centralized_train, hierarchical_train, local_step, BatchSampler};

use crate::balance::ReferenceKind;
use crate::error::{invalid, Error, Result};

/// Bytes per model parameter on the wire.
pub const BYTES_PER_PARAM: f64 = 4.0;
pub const DEFAULT_MULTICAST_FACTOR: f64 = 1.05;
pub const DEFAULT_HIDDEN_WIDTH: usize = 16;

/// Amount of local work per edge round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalWork {
    /// A fixed number of mini-batch steps.
    Steps(usize),
    /// Full passes over the local data, `⌈D_i / batch⌉` steps each.
    Epochs(usize),
}

impl LocalWork {
    pub fn steps_for(&self, samples: usize, batch: Option<usize>) -> usize {
        match *self {
            LocalWork::Steps(s) => s,
            LocalWork::Epochs(e) => e * batch.map_or(1, |b| samples.div_ceil(b).max(1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// `T′`.
    pub local_work: LocalWork,
    /// `T`.
    pub edge_rounds: usize,
    /// `None` trains on the full local dataset every step.
    pub batch_size: Option<usize>,
    pub optimizer: Optimizer,
    pub max_central_rounds: usize,
    /// Stop as soon as test accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Fraction of eligible users sampled anew every central round.
    pub participation: f64,
    /// Users holding any sample of these classes never participate.
    pub dropped_classes: Vec<usize>,
    /// Hidden width of the MLP; `None` trains a linear softmax model.
    pub hidden: Option<usize>,
    pub multicast_factor: f64,
    /// Parameter count used for traffic accounting instead of the model's own.
    pub traffic_param_count: Option<usize>,
    pub reference: ReferenceKind,
    /// Keep the global weights after every round in the trace.
    pub record_weights: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            local_work: LocalWork::Steps(1),
            edge_rounds: 5,
            batch_size: Some(10),
            optimizer: Optimizer::ADAM,
            max_central_rounds: 50,
            target_accuracy: None,
            participation: 1.0,
            dropped_classes: Vec::new(),
            hidden: None,
            multicast_factor: DEFAULT_MULTICAST_FACTOR,
            traffic_param_count: None,
            reference: ReferenceKind::Uniform,
            record_weights: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        let (LocalWork::Steps(w) | LocalWork::Epochs(w)) = self.local_work;
        if w == 0 || self.edge_rounds == 0 || self.max_central_rounds == 0 {
            return Err(invalid("local work, edge rounds and central rounds must be at least 1"));
        }
        if self.batch_size == Some(0) {
            return Err(invalid("batch size must be at least 1"));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(invalid(format!("participation {} outside (0, 1]", self.participation)));
        }
        if let Some(t) = self.target_accuracy {
            if !(t > 0.0 && t <= 1.0) {
                return Err(invalid(format!("target accuracy {t} outside (0, 1]")));
            }
        }
        if !(self.multicast_factor >= 1.0 && self.multicast_factor.is_finite()) {
            return Err(invalid("multicast factor must be at least 1"));
        }
        if self.hidden == Some(0) || self.traffic_param_count == Some(0) {
            return Err(invalid("hidden width and traffic parameter count must be positive"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(invalid("Adam needs β1, β2 in [0, 1) and ε > 0"));
            }
        }
        Ok(())
    }

    pub fn shape(&self, input: usize, classes: usize) -> ModelShape {
        match self.hidden {
            None => ModelShape::linear(input, classes),
            Some(h) => ModelShape::mlp(input, h, classes),
        }
    }
}

/// Named participation presets.
#[derive(Debug, Clone, PartialEq)]
pub enum ParticipationPreset {
    /// Random fraction of users per central round.
    Upp(f64),
    /// Drop every holder of one class.
    SingleClassDrop(usize),
    /// Drop every holder of either of two classes.
    DualClassDrop(usize, usize),
}

impl ParticipationPreset {
    pub fn apply(&self, config: &TrainConfig) -> TrainConfig {
        let mut c = config.clone();
        match *self {
            ParticipationPreset::Upp(p) => c.participation = p,
            ParticipationPreset::SingleClassDrop(k) => c.dropped_classes = vec![k],
            ParticipationPreset::DualClassDrop(a, b) => c.dropped_classes = vec![a, b],
        }
        c
    }

    pub fn label(&self) -> String {
        match self {
            ParticipationPreset::Upp(p) => format!("upp={p}"),
            ParticipationPreset::SingleClassDrop(_) => "scd".into(),
            ParticipationPreset::DualClassDrop(..) => "dcd".into(),
        }
    }
}

/// Normalized `sizes`; errors when empty or when the total is not positive.
pub fn sigma_weights(sizes: &[f64]) -> Result<Vec<f64>> {
    if sizes.is_empty() {
        return Err(invalid("cannot aggregate an empty set of models"));
    }
    if sizes.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(invalid("dataset sizes must be finite and non-negative"));
    }
    let total: f64 = sizes.iter().sum();
    if !(total > 0.0) {
        return Err(invalid("aggregated datasets are all empty"));
    }
    Ok(sizes.iter().map(|s| s / total).collect())
}

/// `Σ σ_i w_i`, summed in input order.
pub(crate) fn weighted_average(models: &[&[f64]], sizes: &[f64]) -> Result<Vec<f64>> {
    let sigma = sigma_weights(sizes)?;
    if models.len() != sizes.len() {
        return Err(invalid("one size per model is required"));
    }
    let len = models[0].len();
    if models.iter().any(|m| m.len() != len) {
        return Err(invalid("models must share one shape"));
    }
    let mut out = vec![0.0; len];
    for (m, s) in models.iter().zip(&sigma) {
        for (o, w) in out.iter_mut().zip(m.iter()) {
            *o += s * w;
        }
    }
    Ok(out)
}

fn aggregate(params: &[ModelParams], sizes: &[f64]) -> Result<ModelParams> {
    let Some(first) = params.first() else {
        return Err(invalid("cannot aggregate an empty set of models"));
    };
    if params.iter().any(|p| p.shape != first.shape) {
        return Err(invalid("models must share one shape"));
    }
    let views: Vec<&[f64]> = params.iter().map(|p| p.weights.as_slice()).collect();
    Ok(ModelParams {
        shape: first.shape,
        weights: weighted_average(&views, sizes)?,
    })
}

/// Edge model from its users' models, weighted by local dataset size.
pub fn edge_aggregate(user_params: &[ModelParams], user_sizes: &[f64]) -> Result<ModelParams> {
    aggregate(user_params, user_sizes)
}

/// Global model from edge models, weighted by each edge's virtual dataset size.
pub fn central_aggregate(edge_params: &[ModelParams], edge_sizes: &[f64]) -> Result<ModelParams> {
    aggregate(edge_params, edge_sizes)
}

/// Bytes one user moves per direction in one central round over `links`
/// edge links; more than one link is a multicast costing `multicast_factor`
/// times a single transfer.
pub fn traffic_per_round(param_count: usize, links: usize, multicast_factor: f64) -> f64 {
    let single = BYTES_PER_PARAM * param_count as f64;
    match links {
        0 => 0.0,
        1 => single,
        _ => single * multicast_factor,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub bytes_up_per_user: f64,
    pub bytes_down_per_user: f64,
    pub kld_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<RoundRecord>,
    /// Global weights after each round, when requested.
    pub weights: Vec<Vec<f64>>,
    pub final_model: ModelParams,
}

impl TrainTrace {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.accuracy)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_records(&self.records, out)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub fn write_records<W: Write>(records: &[RoundRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(csv_error)?;
    }
    // An empty trace still gets its header.
    if records.is_empty() {
        w.write_record(["round", "accuracy", "loss", "bytes_up_per_user", "bytes_down_per_user", "kld_total"])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(input: R) -> Result<Vec<RoundRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out: Vec<RoundRecord> = Vec::new();
    for (i, row) in rdr.deserialize().enumerate() {
        let r: RoundRecord = row.map_err(|e| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?;
        if out.last().is_some_and(|p| r.round <= p.round) {
            return Err(Error::Parse {
                line: i + 2,
                message: "rounds must be strictly increasing".into(),
            });
        }
        out.push(r);
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// First round whose accuracy reaches `target`.
pub fn rounds_to_accuracy(records: &[RoundRecord], target: f64) -> Option<usize> {
    records.iter().find(|r| r.accuracy >= target).map(|r| r.round)
}
