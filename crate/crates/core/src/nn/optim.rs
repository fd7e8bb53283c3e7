use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Network, ParamGrads};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &Network) -> Self {
        let sizes: Vec<usize> = net.params().iter().flatten().map(Tensor::len).collect();
        Self {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update. Non-finite gradients abort before any weight changes.
pub fn adam_step(
    net: &mut Network,
    grads: &ParamGrads,
    cfg: &AdamConfig,
    state: &mut AdamState,
) -> Result<()> {
    let shapes_match = grads.len() == net.params().len()
        && grads
            .iter()
            .zip(net.params())
            .all(|(g, p)| g.len() == p.len() && g.iter().zip(p).all(|(a, b)| a.shape() == b.shape()));
    if !shapes_match {
        return Err(Error::Shape("gradient shapes do not match weights".into()));
    }
    for (i, g) in grads.iter().flatten().enumerate() {
        if !g.all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite gradient in parameter tensor {i} at optimizer step {}",
                state.step + 1
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for (((w, g), m), v) in net
        .params_mut()
        .iter_mut()
        .flatten()
        .zip(grads.iter().flatten())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((w, &g), m), v) in w
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Cross-entropy of softmax probabilities against a class index.
///
/// Returns the loss `-ln(max(p[label], 1e-12))` and the gradient with respect
/// to the pre-softmax logits, `p - onehot(label)`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= probs.len() {
        return Err(Error::Domain(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let loss = -probs[label].max(1e-12).ln();
    let mut grad = probs.to_vec();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

/// Mini-batch Adam training of a softmax classifier.
///
/// The sample order is reshuffled every epoch from `cfg.seed`; the result is
/// a pure function of the initial network, the data and the config. Weights
/// are snapped to `f32` at the end so the returned network equals its
/// checkpoint.
pub fn train_classifier(
    net: &mut Network,
    data: &[(Tensor, usize)],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(net);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc = net.zero_grads();
            for &i in batch {
                let (input, label) = &data[i];
                let cache = net.forward(input)?;
                let probs = cache.output();
                if super::tensor::argmax(probs) == *label {
                    correct += 1;
                }
                let (loss, grad) = cross_entropy(probs, *label)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!("non-finite loss at epoch {epoch}")));
                }
                total_loss += loss;
                net.backward_logits_into(&cache, &grad, Some(&mut acc))?;
            }
            let scale = 1.0 / batch.len() as f64;
            for t in acc.iter_mut().flatten() {
                t.values_mut().iter_mut().for_each(|v| *v *= scale);
            }
            adam_step(net, &acc, &cfg.adam, &mut state)?;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: total_loss / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        };
        log::debug!(
            "epoch {}: loss {:.4} acc {:.3}",
            stats.epoch,
            stats.mean_loss,
            stats.train_accuracy
        );
        curve.push(stats);
    }
    net.snap_to_f32();
    Ok(curve)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(net: &Network, data: &[(Tensor, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty evaluation set".into()));
    }
    let mut correct = 0;
    for (x, y) in data {
        if net.predict(x)?.argmax() == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
