//! Adam with a one-cycle learning-rate schedule.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::data::{PixelRef, SequenceSet};
use super::network::{loss_and_grad, mc_dropout_predict, mix_seed, predict_proba, Dropout};
use super::params::{ClassifierParams, ParamBuffer};
use crate::error::{Error, Result};
use crate::metrics::argmax;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub max_lr: f64,
    pub warmup_fraction: f64,
    /// Final learning rate is `base_lr / final_div`.
    pub final_div: f64,
    /// Pixels drawn (without replacement) per epoch; all pixels when unset.
    #[serde(default)]
    pub samples_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            base_lr: 0.001,
            max_lr: 0.01,
            warmup_fraction: 0.3,
            final_div: 1e4,
            samples_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be ≥ 1".into()));
        }
        if !(self.base_lr > 0.0 && self.max_lr >= self.base_lr && self.final_div > 0.0) {
            return Err(Error::Config(
                "need 0 < base_lr ≤ max_lr and final_div > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1)".into()));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::Config("samples_per_epoch must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Cosine one-cycle schedule: `base → max` over the warm-up, then `max → base / final_div`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycle {
    pub base_lr: f64,
    pub max_lr: f64,
    pub final_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

fn cosine(start: f64, end: f64, pct: f64) -> f64 {
    start + (end - start) * (1.0 - (PI * pct).cos()) / 2.0
}

impl OneCycle {
    pub fn new(cfg: &TrainConfig, total_steps: usize) -> Self {
        let warmup_steps = ((total_steps as f64 * cfg.warmup_fraction).round() as usize)
            .min(total_steps.saturating_sub(1));
        Self {
            base_lr: cfg.base_lr,
            max_lr: cfg.max_lr,
            final_lr: cfg.base_lr / cfg.final_div,
            total_steps,
            warmup_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            cosine(
                self.base_lr,
                self.max_lr,
                step as f64 / self.warmup_steps as f64,
            )
        } else {
            let span = self
                .total_steps
                .saturating_sub(1)
                .saturating_sub(self.warmup_steps);
            if span == 0 {
                return self.max_lr;
            }
            let pct = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
            cosine(self.max_lr, self.final_lr, pct)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,accuracy,lr\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.8},{:.6},{:.8e}\n",
            r.epoch, r.loss, r.accuracy, r.lr
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ClassifierParams,
    pub history: Vec<EpochRecord>,
}

/// Trains a fresh model on `data`. Deterministic for a fixed `train.seed`.
pub fn train(model: &ModelConfig, train: &TrainConfig, data: &SequenceSet) -> Result<Trained> {
    train.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "training set has no labeled pixels".into(),
        ));
    }
    if let Some(g) = data.gathered.first() {
        if g.len() != model.seq_len {
            return Err(Error::Config(format!(
                "sequences have length {}, model expects {}",
                g.len(),
                model.seq_len
            )));
        }
    }
    let mut params = ClassifierParams::init(model, train.seed)?;
    params.stats = data.channel_stats()?;

    let per_epoch = train
        .samples_per_epoch
        .map_or(data.len(), |n| n.min(data.len()));
    let steps_per_epoch = per_epoch.div_ceil(train.batch_size);
    let schedule = OneCycle::new(train, train.epochs * steps_per_epoch);
    let mut adam = Adam::new(params.n_params());
    let mut order_rng = ChaCha8Rng::seed_from_u64(mix_seed(train.seed, 0x5EED));
    let mut order: Vec<PixelRef> = data.pixels.clone();
    let mut history = Vec::with_capacity(train.epochs);
    let mut step = 0usize;

    for epoch in 0..train.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let mut lr = schedule.lr(step);
        for chunk in order[..per_epoch].chunks(train.batch_size) {
            let batch = data.batch(chunk, &params.stats);
            let dropout = Dropout::On {
                rate: model.dropout_rate,
                seed: mix_seed(train.seed, step as u64 + 1),
            };
            let (loss, grads, logits) = match loss_and_grad(&params, &batch, dropout) {
                Ok(r) => r,
                Err(Error::NonFiniteLoss { .. }) => return Err(Error::Diverged { epoch, history }),
                Err(e) => return Err(e),
            };
            if grads.values.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, history });
            }
            lr = schedule.lr(step);
            apply_update(&mut adam, &mut params.weights, &grads, lr);
            loss_sum += loss * chunk.len() as f64;
            correct += count_correct(&logits, &batch.labels);
            seen += chunk.len();
            step += 1;
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
            lr,
        });
    }
    Ok(Trained { params, history })
}

fn apply_update(adam: &mut Adam, weights: &mut ParamBuffer, grads: &ParamBuffer, lr: f64) {
    adam.step(&mut weights.values, &grads.values, lr);
}

fn count_correct(logits: &Array2<f64>, labels: &[usize]) -> usize {
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.iter().copied()).0 == y)
        .count()
}

/// How probabilities are produced at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inference {
    Deterministic,
    McDropout {
        members: usize,
        rate: f64,
        seed: u64,
    },
}

/// N×K probabilities for every pixel of `data`, in pixel order.
pub fn predict_set(
    params: &ClassifierParams,
    data: &SequenceSet,
    inference: Inference,
    batch_size: usize,
) -> Result<Array2<f64>> {
    let k = params.config.n_classes;
    let mut out = Array2::<f64>::zeros((data.len(), k));
    for (ci, chunk) in data.pixels.chunks(batch_size.max(1)).enumerate() {
        let batch = data.batch(chunk, &params.stats);
        let probs = match inference {
            Inference::Deterministic => predict_proba(params, &batch)?,
            Inference::McDropout {
                members,
                rate,
                seed,
            } => mc_dropout_predict(params, &batch, members, rate, mix_seed(seed, ci as u64))?,
        };
        let start = ci * batch_size.max(1);
        out.slice_mut(ndarray::s![start..start + chunk.len(), ..])
            .assign(&probs);
    }
    Ok(out)
}
