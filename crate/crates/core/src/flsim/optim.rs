use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

/// Adam moments; untouched by SGD.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Applies one update to `weights` in place.
pub fn apply_update(
    weights: &mut [f64],
    grad: &[f64],
    learning_rate: f64,
    optimizer: Optimizer,
    state: &mut OptimizerState,
) {
    debug_assert_eq!(weights.len(), grad.len());
    match optimizer {
        Optimizer::Sgd => {
            for (w, g) in weights.iter_mut().zip(grad) {
                *w -= learning_rate * g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            if state.m.len() != weights.len() {
                state.m = vec![0.0; weights.len()];
                state.v = vec![0.0; weights.len()];
                state.t = 0;
            }
            state.t += 1;
            let c1 = 1.0 - beta1.powi(state.t as i32);
            let c2 = 1.0 - beta2.powi(state.t as i32);
            for k in 0..weights.len() {
                state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * grad[k];
                state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * grad[k] * grad[k];
                let m_hat = state.m[k] / c1;
                let v_hat = state.v[k] / c2;
                weights[k] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
