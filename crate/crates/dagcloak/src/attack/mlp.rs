//! Single-hidden-layer perceptron: tanh hidden units, softmax output,
//! cross-entropy loss, full-batch gradient descent, seeded init in
//! [-0.1, 0.1]. Exposes its parameters and analytic gradient so finite
//! differences can check the backward pass.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::Dataset;

#[derive(Debug, Clone)]
pub struct MlpModel {
    labels: Vec<String>,
    hidden: usize,
    dim: usize,
    // w1: hidden x dim, w2: classes x hidden, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl MlpModel {
    pub fn fit(
        train: &Dataset,
        hidden_units: usize,
        epochs: usize,
        learning_rate: f64,
        seed: u64,
    ) -> Result<MlpModel> {
        if hidden_units == 0 {
            return Err(Error::InvalidArgument("hidden_units must be >= 1".into()));
        }
        let mut model = MlpModel::init(train, hidden_units, seed)?;
        let targets = model.target_indices(train)?;
        for _ in 0..epochs {
            let grad = model.gradient_indexed(train, &targets);
            let mut params = model.params();
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= learning_rate * g;
            }
            model.set_params(&params);
        }
        Ok(model)
    }

    /// Untrained model with seeded uniform init; used by gradient checks.
    pub fn init(train: &Dataset, hidden_units: usize, seed: u64) -> Result<MlpModel> {
        if train.is_empty() {
            return Err(Error::Shape("training set is empty".into()));
        }
        let labels = train.labels();
        if labels.len() < 2 {
            return Err(Error::Shape("need at least two classes".into()));
        }
        let dim = train.dim();
        let classes = labels.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
        };
        Ok(MlpModel {
            labels,
            hidden: hidden_units,
            dim,
            w1: draw(hidden_units * dim),
            b1: draw(hidden_units),
            w2: draw(classes * hidden_units),
            b2: draw(classes),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn classes(&self) -> usize {
        self.labels.len()
    }

    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h = vec![0.0; self.hidden];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut z = self.b1[j];
            for (i, xi) in x.iter().enumerate() {
                z += self.w1[j * self.dim + i] * xi;
            }
            *hj = z.tanh();
        }
        let mut logits = vec![0.0; self.classes()];
        for (c, logit) in logits.iter_mut().enumerate() {
            let mut z = self.b2[c];
            for (j, hj) in h.iter().enumerate() {
                z += self.w2[c * self.hidden + j] * hj;
            }
            *logit = z;
        }
        (h, softmax(&logits))
    }

    pub fn predict(&self, x: &[f64]) -> &str {
        let (_, probs) = self.forward(x);
        let mut best = 0;
        for (c, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = c;
            }
        }
        // Ties keep the lowest index: labels are sorted, so the
        // lexicographically smallest label wins.
        &self.labels[best]
    }

    fn target_indices(&self, ds: &Dataset) -> Result<Vec<usize>> {
        ds.rows
            .iter()
            .map(|(_, l)| {
                self.labels
                    .iter()
                    .position(|known| known == l)
                    .ok_or_else(|| Error::Shape(format!("unknown label {l:?}")))
            })
            .collect()
    }

    /// Mean cross-entropy over the dataset.
    pub fn loss(&self, ds: &Dataset) -> f64 {
        let targets = self.target_indices(ds).expect("labels seen at init");
        let mut total = 0.0;
        for ((x, _), t) in ds.rows.iter().zip(&targets) {
            let (_, probs) = self.forward(x);
            total -= probs[*t].max(1e-300).ln();
        }
        total / ds.len() as f64
    }

    /// Analytic gradient of [`MlpModel::loss`], flattened like
    /// [`MlpModel::params`].
    pub fn gradient(&self, ds: &Dataset) -> Vec<f64> {
        let targets = self.target_indices(ds).expect("labels seen at init");
        self.gradient_indexed(ds, &targets)
    }

    fn gradient_indexed(&self, ds: &Dataset, targets: &[usize]) -> Vec<f64> {
        let n = ds.len() as f64;
        let mut gw1 = vec![0.0; self.w1.len()];
        let mut gb1 = vec![0.0; self.b1.len()];
        let mut gw2 = vec![0.0; self.w2.len()];
        let mut gb2 = vec![0.0; self.b2.len()];
        for ((x, _), t) in ds.rows.iter().zip(targets) {
            let (h, probs) = self.forward(x);
            // dL/dz2 = (p - y) / n
            let mut dz2 = probs;
            dz2[*t] -= 1.0;
            for v in dz2.iter_mut() {
                *v /= n;
            }
            for (c, d2) in dz2.iter().enumerate() {
                gb2[c] += d2;
                for (j, hj) in h.iter().enumerate() {
                    gw2[c * self.hidden + j] += d2 * hj;
                }
            }
            for (j, hj) in h.iter().enumerate() {
                let mut dh = 0.0;
                for (c, d2) in dz2.iter().enumerate() {
                    dh += self.w2[c * self.hidden + j] * d2;
                }
                let dz1 = dh * (1.0 - hj * hj);
                gb1[j] += dz1;
                for (i, xi) in x.iter().enumerate() {
                    gw1[j * self.dim + i] += dz1 * xi;
                }
            }
        }
        let mut grad = gw1;
        grad.extend(gb1);
        grad.extend(gw2);
        grad.extend(gb2);
        grad
    }

    /// Flattened parameters: w1, b1, w2, b2.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.w1.clone();
        p.extend(&self.b1);
        p.extend(&self.w2);
        p.extend(&self.b2);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut offset = 0;
        for dst in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let len = dst.len();
            dst.copy_from_slice(&params[offset..offset + len]);
            offset += len;
        }
        debug_assert_eq!(offset, params.len());
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset {
            feature_names: vec!["x".into(), "y".into()],
            rows: vec![
                (vec![0.1, 1.0], "a".into()),
                (vec![-0.2, 0.8], "a".into()),
                (vec![1.1, -0.9], "b".into()),
                (vec![0.9, -1.2], "b".into()),
                (vec![0.4, 0.1], "c".into()),
            ],
        }
    }

    /// Finite-difference oracle: central differences with eps = 1e-5 must
    /// match the analytic gradient to relative error < 1e-4.
    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let ds = toy();
        let mut model = MlpModel::init(&ds, 4, 123).unwrap();
        let analytic = model.gradient(&ds);
        let params = model.params();
        let eps = 1e-5;
        let mut numeric = vec![0.0; params.len()];
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus[i] += eps;
            model.set_params(&plus);
            let lp = model.loss(&ds);
            let mut minus = params.clone();
            minus[i] -= eps;
            model.set_params(&minus);
            let lm = model.loss(&ds);
            numeric[i] = (lp - lm) / (2.0 * eps);
        }
        model.set_params(&params);
        let num_norm: f64 = numeric.iter().map(|g| g * g).sum::<f64>().sqrt();
        let ana_norm: f64 = analytic.iter().map(|g| g * g).sum::<f64>().sqrt();
        let diff: f64 = numeric
            .iter()
            .zip(&analytic)
            .map(|(n, a)| (n - a) * (n - a))
            .sum::<f64>()
            .sqrt();
        let rel = diff / (num_norm + ana_norm).max(1e-300);
        assert!(rel < 1e-4, "relative gradient error {rel}");
    }

    #[test]
    fn training_reduces_loss_and_learns_the_toy_set() {
        let ds = toy();
        let initial = MlpModel::init(&ds, 8, 7).unwrap().loss(&ds);
        let model = MlpModel::fit(&ds, 8, 400, 0.5, 7).unwrap();
        assert!(model.loss(&ds) < initial);
        let hits = ds
            .rows
            .iter()
            .filter(|(x, l)| model.predict(x) == l)
            .count();
        assert!(hits >= 4, "only {hits}/5 training rows learned");
    }

    #[test]
    fn fitting_is_deterministic_per_seed() {
        let ds = toy();
        let a = MlpModel::fit(&ds, 4, 50, 0.1, 9).unwrap();
        let b = MlpModel::fit(&ds, 4, 50, 0.1, 9).unwrap();
        assert_eq!(a.params(), b.params());
    }
}
