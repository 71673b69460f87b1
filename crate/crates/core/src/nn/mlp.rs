use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::dense::{Activation, DenseLayer};
use super::loss::softmax_cross_entropy;
use super::params::{zero_grads, Parameters};
use crate::error::{Error, Result};
use crate::math;

/// Feed-forward classifier: relu hidden layers, identity output producing logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: &[usize], output: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push(DenseLayer::init(prev, h, Activation::Relu, rng));
            prev = h;
        }
        layers.push(DenseLayer::init(prev, output, Activation::Identity, rng));
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.output_dim()).unwrap_or(0)
    }

    pub fn final_layer(&self) -> &DenseLayer {
        self.layers.last().expect("mlp has at least one layer")
    }

    pub fn final_layer_mut(&mut self) -> &mut DenseLayer {
        self.layers.last_mut().expect("mlp has at least one layer")
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in &self.layers {
            a = l.forward(&a);
        }
        a
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        math::softmax(&self.logits(x))
    }

    /// Argmax class; ties go to the lower index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    /// Adds `weight * d CE / d params` to the gradient buffers and returns the loss.
    pub fn accumulate_cross_entropy(&mut self, x: &[f64], target: usize, weight: f64) -> f64 {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for l in &self.layers {
            let next = l.forward(acts.last().unwrap());
            acts.push(next);
        }
        let (loss, grad) = softmax_cross_entropy(acts.last().unwrap(), target);
        let mut delta: Vec<f64> = grad.iter().map(|g| g * weight).collect();
        for (k, layer) in self.layers.iter_mut().enumerate().rev() {
            let mut dx = vec![0.0; layer.input_dim()];
            layer.backward(&acts[k], &acts[k + 1], &delta, if k > 0 { Some(&mut dx) } else { None });
            delta = dx;
        }
        loss
    }

    pub fn mean_loss(&self, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| super::loss::softmax_cross_entropy_loss(&self.logits(x), y))
            .sum::<f64>()
            / xs.len() as f64
    }
}

impl Parameters for Mlp {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64], &mut [f64])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params(&alloc::format!("{prefix}.layer{i}"), f);
        }
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lr: f64,
    pub max_epochs: usize,
    /// Stop when validation loss has not improved for this many epochs.
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { lr: 1e-2, max_epochs: 200, patience: 5, batch_size: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFit {
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Minibatch Adam on softmax cross-entropy with early stopping; the parameters
/// from the best validation epoch are restored on return. Without a validation
/// set the training loss drives the plateau test.
pub fn train_classifier<R: Rng + ?Sized>(
    mlp: &mut Mlp,
    x_train: &[Vec<f64>],
    y_train: &[usize],
    x_val: &[Vec<f64>],
    y_val: &[usize],
    opts: &TrainOptions,
    rng: &mut R,
) -> Result<ClassifierFit> {
    if x_train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut adam = AdamState::new(opts.lr);
    let mut order: Vec<usize> = (0..x_train.len()).collect();
    let monitor = |m: &Mlp| if x_val.is_empty() { m.mean_loss(x_train, y_train) } else { m.mean_loss(x_val, y_val) };
    let mut best = mlp.clone();
    let mut best_loss = monitor(mlp);
    let mut best_epoch = 0;
    let mut epochs_run = 0;
    for epoch in 1..=opts.max_epochs {
        crate::rng::shuffle(rng, &mut order);
        for chunk in order.chunks(opts.batch_size.max(1)) {
            zero_grads(mlp);
            let mut batch_loss = 0.0;
            for &i in chunk {
                batch_loss += mlp.accumulate_cross_entropy(&x_train[i], y_train[i], 1.0);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(alloc::format!("non-finite training loss at epoch {epoch}")));
            }
            adam.step_model(mlp, 1.0 / chunk.len() as f64);
        }
        epochs_run = epoch;
        let loss = monitor(mlp);
        if !loss.is_finite() {
            return Err(Error::Diverged(alloc::format!("non-finite validation loss at epoch {epoch}")));
        }
        if loss < best_loss - 1e-9 {
            best_loss = loss;
            best = mlp.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= opts.patience {
            break;
        }
    }
    *mlp = best;
    Ok(ClassifierFit { best_val_loss: best_loss, best_epoch, epochs_run })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_model_gradients;
    use crate::rng;

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut r = rng::rng_from(2);
        let mut mlp = Mlp::new(5, &[7, 4], 3, &mut r);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng::normal(&mut r)).collect()).collect();
        let ys = [0usize, 2, 1, 1, 0, 2];
        let rep = check_model_gradients(
            &mut mlp,
            |m| xs.iter().zip(&ys).map(|(x, &y)| m.accumulate_cross_entropy(x, y, 1.0)).sum(),
            50,
            1e-5,
        );
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn learns_separable_data() {
        let mut r = rng::rng_from(5);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..200 {
            let a = rng::normal(&mut r);
            let b = rng::normal(&mut r);
            xs.push(vec![a, b]);
            ys.push(usize::from(a + 0.5 * b > 0.0));
            let _ = i;
        }
        let mut mlp = Mlp::new(2, &[8], 2, &mut r);
        let opts = TrainOptions { lr: 1e-2, max_epochs: 100, patience: 10, batch_size: 16 };
        train_classifier(&mut mlp, &xs[..160], &ys[..160], &xs[160..], &ys[160..], &opts, &mut r).unwrap();
        let correct = xs[160..].iter().zip(&ys[160..]).filter(|(x, &y)| mlp.predict(x) == y).count();
        assert!(correct >= 36, "{correct}/40");
    }
}
