//! Softmax classifiers with analytic cross-entropy gradients.
//!
//! Parameter layout (row-major): linear `[W (K×d), b (K)]`; MLP
//! `[W1 (H×d), b1 (H), W2 (K×H), b2 (K)]` with a ReLU hidden layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scenario::LabeledDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input: usize,
    /// Hidden width; `None` for a linear model.
    pub hidden: Option<usize>,
    pub classes: usize,
}

impl ModelShape {
    pub fn linear(input: usize, classes: usize) -> Self {
        Self {
            input,
            hidden: None,
            classes,
        }
    }

    pub fn mlp(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input,
            hidden: Some(hidden),
            classes,
        }
    }

    pub fn num_params(&self) -> usize {
        match self.hidden {
            None => self.classes * (self.input + 1),
            Some(h) => h * (self.input + 1) + self.classes * (h + 1),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.classes < 2 || self.hidden == Some(0) {
            return Err(invalid(format!("invalid model shape {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub weights: Vec<f64>,
}

/// Stable softmax in place.
fn softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            weights: vec![0.0; shape.num_params()],
        })
    }

    /// Linear models start at zero; MLP weight matrices get Glorot-uniform
    /// values drawn from `seed`, biases start at zero.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        if let Some(h) = shape.hidden {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (d, k) = (shape.input, shape.classes);
            let a1 = (6.0 / (d + h) as f64).sqrt();
            for w in &mut p.weights[..h * d] {
                *w = rng.gen_range(-a1..a1);
            }
            let a2 = (6.0 / (h + k) as f64).sqrt();
            let off = h * (d + 1);
            for w in &mut p.weights[off..off + k * h] {
                *w = rng.gen_range(-a2..a2);
            }
        }
        Ok(p)
    }

    pub fn from_weights(shape: ModelShape, weights: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if weights.len() != shape.num_params() {
            return Err(invalid(format!(
                "{} weights for a model with {} parameters",
                weights.len(),
                shape.num_params()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid("model weights must be finite"));
        }
        Ok(Self { shape, weights })
    }

    fn check_data(&self, data: &LabeledDataset) -> Result<()> {
        if data.dim() != self.shape.input {
            return Err(invalid(format!(
                "data has {} features, model expects {}",
                data.dim(),
                self.shape.input
            )));
        }
        if let Some(&y) = data.labels().iter().find(|&&y| y >= self.shape.classes) {
            return Err(invalid(format!("label {y} outside the model's {} classes", self.shape.classes)));
        }
        Ok(())
    }

    /// Class probabilities for one input; `hidden` receives the ReLU layer.
    fn forward(&self, x: &[f64], hidden: &mut Vec<f64>, out: &mut Vec<f64>) {
        let (d, k) = (self.shape.input, self.shape.classes);
        let w = &self.weights;
        let (features, head): (&[f64], usize) = match self.shape.hidden {
            None => (x, 0),
            Some(h) => {
                hidden.clear();
                for r in 0..h {
                    let row = &w[r * d..(r + 1) * d];
                    let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[h * d + r];
                    hidden.push(z.max(0.0));
                }
                (hidden.as_slice(), h * (d + 1))
            }
        };
        let f = features.len();
        out.clear();
        for c in 0..k {
            let row = &w[head + c * f..head + (c + 1) * f];
            let z: f64 = row.iter().zip(features).map(|(a, b)| a * b).sum::<f64>() + w[head + k * f + c];
            out.push(z);
        }
        softmax(out);
    }

    /// Mean cross-entropy over `rows` of `data` (all rows when `None`) and
    /// its gradient.
    pub fn loss_and_grad(&self, data: &LabeledDataset, rows: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        self.check_data(data)?;
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..data.len()).collect();
                &all
            }
        };
        if rows.is_empty() {
            return Err(invalid("loss of an empty batch"));
        }
        let (d, k) = (self.shape.input, self.shape.classes);
        let w = &self.weights;
        let mut grad = vec![0.0; w.len()];
        let mut loss = 0.0;
        let (mut hidden, mut probs) = (Vec::new(), Vec::new());
        let mut dz_hidden = Vec::new();
        for &r in rows {
            let x = data.row(r);
            let y = data.labels()[r];
            self.forward(x, &mut hidden, &mut probs);
            loss -= probs[y].max(f64::MIN_POSITIVE).ln();
            probs[y] -= 1.0;
            let dz = &probs;
            match self.shape.hidden {
                None => {
                    for c in 0..k {
                        let g = &mut grad[c * d..(c + 1) * d];
                        for (gi, xi) in g.iter_mut().zip(x) {
                            *gi += dz[c] * xi;
                        }
                        grad[k * d + c] += dz[c];
                    }
                }
                Some(h) => {
                    let head = h * (d + 1);
                    dz_hidden.clear();
                    dz_hidden.resize(h, 0.0);
                    for c in 0..k {
                        for u in 0..h {
                            grad[head + c * h + u] += dz[c] * hidden[u];
                            dz_hidden[u] += dz[c] * w[head + c * h + u];
                        }
                        grad[head + k * h + c] += dz[c];
                    }
                    for u in 0..h {
                        if hidden[u] <= 0.0 {
                            continue;
                        }
                        let g = &mut grad[u * d..(u + 1) * d];
                        for (gi, xi) in g.iter_mut().zip(x) {
                            *gi += dz_hidden[u] * xi;
                        }
                        grad[h * d + u] += dz_hidden[u];
                    }
                }
            }
        }
        let n = rows.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
        Ok((loss / n, grad))
    }

    pub fn loss(&self, data: &LabeledDataset) -> Result<f64> {
        Ok(self.evaluate(data)?.1)
    }

    /// `(accuracy, mean cross-entropy)` over `data`; ties in the arg-max go
    /// to the lowest class.
    pub fn evaluate(&self, data: &LabeledDataset) -> Result<(f64, f64)> {
        self.check_data(data)?;
        if data.is_empty() {
            return Err(invalid("cannot evaluate on an empty dataset"));
        }
        let (mut hidden, mut probs) = (Vec::new(), Vec::new());
        let mut correct = 0usize;
        let mut loss = 0.0;
        for (r, &y) in data.labels().iter().enumerate() {
            self.forward(data.row(r), &mut hidden, &mut probs);
            let mut best = 0;
            for c in 1..probs.len() {
                if probs[c] > probs[best] {
                    best = c;
                }
            }
            correct += usize::from(best == y);
            loss -= probs[y].max(f64::MIN_POSITIVE).ln();
        }
        let n = data.len() as f64;
        Ok((correct as f64 / n, loss / n))
    }
}
