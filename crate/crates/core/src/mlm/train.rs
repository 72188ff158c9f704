//! Masked-token corruption and the AdamW training loop.

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{mlm_loss_and_grad, MaskedLabel};
use super::ops::Scalar;
use super::{MlmError, TransformerParams};
use crate::seed::{rng_from_seed, GameRng};
use crate::tokenizer::{tokenize, Vocab, MASK_ID, SPECIAL_TOKENS};

/// What happened to a selected position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptKind {
    Masked,
    Random,
    Kept,
}

/// A corrupted batch together with its prediction targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Corruption {
    pub ids: Vec<Vec<u32>>,
    pub labels: Vec<MaskedLabel>,
    pub kinds: Vec<CorruptKind>,
}

/// Selects each non-special position with probability `mask_p`; a selected
/// token becomes `[MASK]` (80%), a random non-special token (10%) or stays
/// (10%). Labels hold the original ids.
pub fn mlm_corrupt(batch: &[Vec<u32>], mask_p: f64, vocab: usize, rng: &mut GameRng) -> Corruption {
    let first_regular = SPECIAL_TOKENS.len() as u32;
    let mut out = Corruption {
        ids: batch.to_vec(),
        labels: Vec::new(),
        kinds: Vec::new(),
    };
    let mask_p = mask_p.clamp(0.0, 1.0);
    for (s, seq) in out.ids.iter_mut().enumerate() {
        for (pos, id) in seq.iter_mut().enumerate() {
            if *id < first_regular || !rng.gen_bool(mask_p) {
                continue;
            }
            out.labels.push(MaskedLabel {
                seq: s,
                pos,
                target: *id,
            });
            let roll: f64 = rng.gen();
            let kind = if roll < 0.8 {
                *id = MASK_ID;
                CorruptKind::Masked
            } else if roll < 0.9 {
                *id = rng.gen_range(first_regular..vocab as u32);
                CorruptKind::Random
            } else {
                CorruptKind::Kept
            };
            out.kinds.push(kind);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mask_p: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Peak learning rate.
    pub lr: f64,
    /// Fraction of steps spent in linear warmup; the rest decays linearly to 0.
    pub warmup_frac: f64,
    /// Decoupled weight decay applied to weight matrices.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mask_p: 0.15,
            batch_size: 32,
            steps: 1000,
            lr: 5e-4,
            warmup_frac: 0.1,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MlmError> {
        let bad = |m: &str| Err(MlmError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.mask_p) {
            return bad("mask probability must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad("warmup fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Steps needed to see every line `epochs` times.
pub fn steps_for_epochs(lines: usize, epochs: f64, batch_size: usize) -> usize {
    ((lines as f64 * epochs) / batch_size.max(1) as f64).ceil() as usize
}

/// Learning rate at `step` (0-based) of `total`.
pub fn lr_at(config: &TrainConfig, step: usize, total: usize) -> f64 {
    let warmup = (config.warmup_frac * total as f64).round() as usize;
    if step < warmup {
        return config.lr * (step + 1) as f64 / warmup as f64;
    }
    let rest = total.saturating_sub(warmup).max(1);
    config.lr * (1.0 - (step - warmup) as f64 / rest as f64).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean masked-token loss of every step.
    pub losses: Vec<f64>,
    pub lines: usize,
    pub label_count: u64,
}

struct AdamW<T> {
    m: Vec<T>,
    v: Vec<T>,
    decay_mask: Vec<bool>,
    t: i32,
}

impl<T: Scalar> AdamW<T> {
    fn new(params: &TransformerParams<T>) -> Self {
        let mut decay_mask = vec![false; params.len()];
        for spec in params.specs() {
            if spec.shape.len() == 2 {
                decay_mask[spec.range()].fill(true);
            }
        }
        Self {
            m: vec![T::zero(); params.len()],
            v: vec![T::zero(); params.len()],
            decay_mask,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: f64, c: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let corr1 = 1.0 - c.beta1.powi(self.t);
        let corr2 = 1.0 - c.beta2.powi(self.t);
        let step = T::of(lr / corr1);
        let corr2 = T::of(corr2);
        let eps = T::of(c.adam_eps);
        let decay = T::of(1.0 - lr * c.weight_decay);
        let one = T::one();
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            if self.decay_mask[i] && c.weight_decay > 0.0 {
                params[i] = params[i] * decay;
            }
            params[i] = params[i] - step * self.m[i] / ((self.v[i] / corr2).sqrt() + eps);
        }
    }
}

/// Trains on tokenized corpus lines with the MLM objective.
///
/// Batches are drawn from a per-epoch shuffle; every random choice comes
/// from the config seed, so two runs with equal inputs produce identical
/// parameters and loss curves.
pub fn train<T: Scalar, S: AsRef<str>>(
    params: &mut TransformerParams<T>,
    lines: &[S],
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<TrainReport, MlmError> {
    config.validate()?;
    if vocab.len() != params.config().vocab {
        return Err(MlmError::Config(format!(
            "vocab has {} tokens but the model expects {}",
            vocab.len(),
            params.config().vocab
        )));
    }
    let data: Vec<Vec<u32>> = lines
        .iter()
        .map(|l| l.as_ref())
        .filter(|l| !l.trim().is_empty())
        .map(|l| tokenize(vocab, l))
        .collect();
    if data.is_empty() {
        return Err(MlmError::Empty("training corpus has no lines".into()));
    }
    let max_seq = params.config().max_seq;
    if let Some(long) = data.iter().find(|s| s.len() > max_seq) {
        return Err(MlmError::TooLong {
            len: long.len(),
            max: max_seq,
        });
    }
    let mut rng = rng_from_seed(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut opt = AdamW::new(params);
    let mut report = TrainReport {
        losses: Vec::with_capacity(config.steps),
        lines: data.len(),
        label_count: 0,
    };
    let log_every = (config.steps / 10).max(1);
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(data[order[cursor]].clone());
            cursor += 1;
        }
        let mut corruption = mlm_corrupt(&batch, config.mask_p, vocab.len(), &mut rng);
        let mut attempts = 1;
        while corruption.labels.is_empty() {
            if attempts == 100 || config.mask_p == 0.0 {
                return Err(MlmError::Empty(
                    "masking selected no positions; raise the mask probability".into(),
                ));
            }
            corruption = mlm_corrupt(&batch, config.mask_p, vocab.len(), &mut rng);
            attempts += 1;
        }
        let (loss, mut grad) =
            mlm_loss_and_grad(params, &corruption.ids, &corruption.labels, Some(&mut rng))?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(MlmError::Diverged { step, loss });
        }
        if let Some(max_norm) = config.clip_norm {
            let norm = grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
            if norm > max_norm {
                let s = T::of(max_norm / norm);
                grad.iter_mut().for_each(|g| *g = *g * s);
            }
        }
        let lr = lr_at(config, step, config.steps);
        opt.step(params.data_mut(), &grad, lr, config);
        report.losses.push(loss);
        report.label_count += corruption.labels.len() as u64;
        if (step + 1) % log_every == 0 {
            info!(
                "step {}/{}: loss {loss:.4} lr {lr:.2e}",
                step + 1,
                config.steps
            );
        }
    }
    if !params.all_finite() {
        return Err(MlmError::Diverged {
            step: config.steps,
            loss: f64::NAN,
        });
    }
    Ok(report)
}
