use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    apply_update, traffic_per_round, weighted_average, ModelParams, OptimizerState, RoundRecord, TrainConfig,
    TrainTrace,
};
use crate::balance::{kld_of_edge_counts, reference_distribution};
use crate::eara::Assignment;
use crate::error::{invalid, Result};
use crate::scenario::{class_histogram, LabeledDataset, Scenario};

/// Cycles through a seeded permutation of `0..len`, reshuffling after every
/// full pass. The last batch of a pass may be short.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(len: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self { order, cursor: 0, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> &[usize] {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let start = self.cursor;
        self.cursor = (start + size).min(self.order.len());
        &self.order[start..self.cursor]
    }
}

/// One gradient step on `rows` of `data` (all rows when `None`); returns the
/// batch loss before the step.
pub fn local_step(
    params: &mut ModelParams,
    data: &LabeledDataset,
    rows: Option<&[usize]>,
    config: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<f64> {
    let (loss, grad) = params.loss_and_grad(data, rows)?;
    apply_update(&mut params.weights, &grad, config.learning_rate, config.optimizer, state);
    Ok(loss)
}

struct Learner {
    sampler: BatchSampler,
    state: OptimizerState,
}

impl Learner {
    fn new(len: usize, config: &TrainConfig, stream: u64) -> Self {
        Self {
            sampler: BatchSampler::new(len, config.seed, stream),
            state: OptimizerState::default(),
        }
    }

    fn train(&mut self, params: &mut ModelParams, data: &LabeledDataset, steps: usize, config: &TrainConfig) -> Result<()> {
        for _ in 0..steps {
            match config.batch_size {
                None => local_step(params, data, None, config, &mut self.state)?,
                Some(b) => {
                    let rows = self.sampler.next_batch(b).to_vec();
                    local_step(params, data, Some(&rows), config, &mut self.state)?
                }
            };
        }
        Ok(())
    }
}

fn num_classes_of(data: &[&LabeledDataset]) -> usize {
    data.iter().filter_map(|d| d.inferred_num_classes()).max().unwrap_or(0)
}

/// Runs two-tier federated training.
///
/// Every central round `T` edge rounds run; in each, participating users
/// copy their edge's model, train `T′` local steps, and each edge replaces
/// its model by the size-weighted average of its participants. A user
/// attached to two edges trains once per edge round, starting from its
/// lower-indexed edge, and multicasts the same update to both. Edges without
/// participants keep the broadcast model and are left out of the central
/// average. Local optimiser state and batch order persist across rounds.
///
/// Accuracy and loss are measured on `test` after every central round.
pub fn hierarchical_train(
    scenario: &Scenario,
    assignment: &Assignment,
    shards: &[LabeledDataset],
    test: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    config.validate()?;
    let m = scenario.num_users();
    let n = scenario.num_edges();
    if assignment.lambda.num_users() != m || assignment.lambda.num_edges() != n || shards.len() != m {
        return Err(invalid("assignment, scenario and data shards disagree on the number of users"));
    }
    let edges_of: Vec<Vec<usize>> = (0..m)
        .map(|i| {
            if assignment.served[i] {
                assignment.lambda.edges_of(i).collect()
            } else {
                Vec::new()
            }
        })
        .collect();
    let served: Vec<usize> = (0..m).filter(|&i| !edges_of[i].is_empty()).collect();
    if served.is_empty() {
        return Err(invalid("assignment serves no user"));
    }
    let dim = shards[served[0]].dim();
    if shards.iter().chain([test]).any(|d| d.dim() != dim && !d.is_empty()) {
        return Err(invalid("shards and test data must share one feature dimension"));
    }
    let num_classes = scenario
        .num_classes
        .max(num_classes_of(&shards.iter().chain([test]).collect::<Vec<_>>()));
    let shape = config.shape(dim, num_classes);
    let mut global = ModelParams::init(shape, config.seed)?;
    let traffic_params = config.traffic_param_count.unwrap_or(shape.num_params());

    let histograms: Vec<Vec<f64>> = shards
        .iter()
        .map(|s| class_histogram(s, num_classes).map(|h| h.as_f64()))
        .collect::<Result<_>>()?;
    let q = reference_distribution(config.reference, &scenario.user_histograms(), num_classes)?;
    let eligible: Vec<usize> = served
        .iter()
        .copied()
        .filter(|&i| config.dropped_classes.iter().all(|&k| histograms[i].get(k).is_none_or(|&c| c == 0.0)))
        .collect();
    let per_round = ((config.participation * served.len() as f64).round() as usize)
        .clamp(1, served.len())
        .min(eligible.len());

    let mut learners: Vec<Learner> = (0..m).map(|i| Learner::new(shards[i].len(), config, i as u64 + 1)).collect();
    let mut picker = ChaCha8Rng::seed_from_u64(config.seed);
    let sizes: Vec<f64> = shards.iter().map(|s| s.len() as f64).collect();

    let mut trace = TrainTrace {
        records: Vec::new(),
        weights: Vec::new(),
        final_model: global.clone(),
    };
    let (mut bytes_up, mut bytes_down) = (0.0, 0.0);

    for round in 1..=config.max_central_rounds {
        let mut active = vec![false; m];
        let chosen: Vec<usize> = if per_round == eligible.len() {
            eligible.clone()
        } else {
            eligible.choose_multiple(&mut picker, per_round).copied().collect()
        };
        for &i in &chosen {
            active[i] = !shards[i].is_empty();
        }
        let members: Vec<Vec<usize>> = (0..n)
            .map(|j| (0..m).filter(|&i| active[i] && edges_of[i].contains(&j)).collect())
            .collect();

        let mut edge_models = vec![global.weights.clone(); n];
        for _ in 0..config.edge_rounds {
            let updated: Vec<Option<Vec<f64>>> = learners
                .par_iter_mut()
                .enumerate()
                .map(|(i, learner)| -> Result<Option<Vec<f64>>> {
                    if !active[i] {
                        return Ok(None);
                    }
                    let mut p = ModelParams {
                        shape,
                        weights: edge_models[edges_of[i][0]].clone(),
                    };
                    let steps = config.local_work.steps_for(shards[i].len(), config.batch_size);
                    learner.train(&mut p, &shards[i], steps, config)?;
                    Ok(Some(p.weights))
                })
                .collect::<Result<_>>()?;
            for (j, users) in members.iter().enumerate() {
                if users.is_empty() {
                    continue;
                }
                let views: Vec<&[f64]> = users.iter().map(|&i| updated[i].as_deref().expect("active")).collect();
                let w: Vec<f64> = users.iter().map(|&i| sizes[i]).collect();
                edge_models[j] = weighted_average(&views, &w)?;
            }
        }

        let live: Vec<usize> = (0..n).filter(|&j| !members[j].is_empty()).collect();
        if !live.is_empty() {
            let views: Vec<&[f64]> = live.iter().map(|&j| edge_models[j].as_slice()).collect();
            let w: Vec<f64> = live.iter().map(|&j| members[j].iter().map(|&i| sizes[i]).sum()).collect();
            global.weights = weighted_average(&views, &w)?;
        }

        let moved: f64 = (0..m)
            .filter(|&i| active[i])
            .map(|i| traffic_per_round(traffic_params, edges_of[i].len(), config.multicast_factor))
            .sum();
        bytes_up += moved / served.len() as f64;
        bytes_down += moved / served.len() as f64;

        let edge_counts: Vec<Vec<f64>> = members
            .iter()
            .map(|users| {
                let mut c = vec![0.0; num_classes];
                for &i in users {
                    for (acc, v) in c.iter_mut().zip(&histograms[i]) {
                        *acc += v;
                    }
                }
                c
            })
            .collect();
        let kld_total = kld_of_edge_counts(&edge_counts, &q)?.total;

        let (accuracy, loss) = global.evaluate(test)?;
        log::debug!("round {round}: accuracy {accuracy:.4}, loss {loss:.4}");
        trace.records.push(RoundRecord {
            round,
            accuracy,
            loss,
            bytes_up_per_user: bytes_up,
            bytes_down_per_user: bytes_down,
            kld_total,
        });
        if config.record_weights {
            trace.weights.push(global.weights.clone());
        }
        if config.target_accuracy.is_some_and(|t| accuracy >= t) {
            break;
        }
    }
    trace.final_model = global;
    Ok(trace)
}

/// Trains one model on pooled data.
///
/// Each round performs the same number of steps as a federated central round
/// (`T × T′`, or `T` epochs in epoch mode) with batches `num_edges` times the
/// local batch size.
pub fn centralized_train(
    all_data: &LabeledDataset,
    test: &LabeledDataset,
    num_classes: usize,
    num_edges: usize,
    config: &TrainConfig,
) -> Result<TrainTrace> {
    config.validate()?;
    if all_data.is_empty() {
        return Err(invalid("centralized training needs data"));
    }
    if num_edges == 0 {
        return Err(invalid("at least one edge is required"));
    }
    let num_classes = num_classes.max(num_classes_of(&[all_data, test]));
    let shape = config.shape(all_data.dim(), num_classes);
    let mut model = ModelParams::init(shape, config.seed)?;
    let batch = config.batch_size.map(|b| b * num_edges);
    let steps = config.edge_rounds * config.local_work.steps_for(all_data.len(), batch);
    // Stream 1 matches the first user's sampler, so a single-user federation
    // reproduces this run exactly.
    let mut learner = Learner::new(all_data.len(), config, 1);
    let cfg = TrainConfig {
        batch_size: batch,
        ..config.clone()
    };
    let hist = class_histogram(all_data, num_classes)?;
    let q = reference_distribution(config.reference, std::slice::from_ref(&hist), num_classes)?;
    let kld_total = kld_of_edge_counts(&[hist.as_f64()], &q)?.total;

    let mut trace = TrainTrace {
        records: Vec::new(),
        weights: Vec::new(),
        final_model: model.clone(),
    };
    for round in 1..=config.max_central_rounds {
        learner.train(&mut model, all_data, steps, &cfg)?;
        let (accuracy, loss) = model.evaluate(test)?;
        trace.records.push(RoundRecord {
            round,
            accuracy,
            loss,
            bytes_up_per_user: 0.0,
            bytes_down_per_user: 0.0,
            kld_total,
        });
        if config.record_weights {
            trace.weights.push(model.weights.clone());
        }
        if config.target_accuracy.is_some_and(|t| accuracy >= t) {
            break;
        }
    }
    trace.final_model = model;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_covers_every_row_once_per_pass() {
        let mut s = BatchSampler::new(7, 3, 1);
        let mut seen: Vec<usize> = Vec::new();
        for _ in 0..3 {
            seen.extend_from_slice(s.next_batch(3));
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        assert_eq!(s.next_batch(3).len(), 3);
    }
}
