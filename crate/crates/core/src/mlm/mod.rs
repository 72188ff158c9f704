//! Small BERT-style encoder trained with masked language modelling.
//!
//! Post-LN encoder blocks, learned positions, tanh-GELU feed-forward, and an
//! MLM head whose decoder is tied to the token embeddings. Forward and
//! backward passes are written out by hand; [`gradient_check`] compares them
//! against finite differences.

mod checkpoint;
mod gradcheck;
mod model;
pub mod ops;
mod train;

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::GameRng;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use model::{
    fill_mask, forward, masked_distributions, mlm_loss, mlm_loss_and_grad, rank, MaskedLabel,
};
pub use ops::Scalar;
pub use train::{
    lr_at, mlm_corrupt, steps_for_epochs, train, CorruptKind, Corruption, TrainConfig, TrainReport,
};

#[derive(Debug, Error)]
pub enum MlmError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds the model maximum of {max}")]
    TooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    BadToken { id: u32, vocab: usize },
    #[error("expected exactly one [MASK] token, found {0}")]
    MaskCount(usize),
    #[error("input is empty: {0}")]
    Empty(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Model architecture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub feed_forward: usize,
    pub max_seq: usize,
    pub vocab: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// The desk-scale default: 4 layers, 4 heads, width 128, FF 512.
    pub fn desk(vocab: usize, max_seq: usize) -> Self {
        Self {
            layers: 4,
            heads: 4,
            hidden: 128,
            feed_forward: 512,
            max_seq,
            vocab,
            dropout: 0.0,
        }
    }

    /// The small model used by tests and experiments: 2 layers, 4 heads,
    /// width 64, FF 256.
    pub fn tiny(vocab: usize, max_seq: usize) -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 64,
            feed_forward: 256,
            max_seq,
            vocab,
            dropout: 0.0,
        }
    }

    /// The toy model used for finite-difference checks.
    pub fn grad_check() -> Self {
        Self {
            layers: 1,
            heads: 2,
            hidden: 8,
            feed_forward: 16,
            max_seq: 8,
            vocab: 12,
            dropout: 0.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<(), MlmError> {
        let bad = |m: String| Err(MlmError::Config(m));
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 || self.feed_forward == 0 {
            return bad("layers, heads, hidden and feed-forward widths must be positive".into());
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!(
                "hidden width {} is not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if self.max_seq < 3 {
            return bad("max sequence length must be at least 3".into());
        }
        if self.vocab <= crate::tokenizer::SPECIAL_TOKENS.len() {
            return bad(format!("vocab of {} holds only special tokens", self.vocab));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Name, shape and flat position of one tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerIndex {
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
}

/// Offsets of every tensor in the flat parameter buffer.
#[derive(Debug, Clone)]
pub(crate) struct Index {
    pub tok: Range<usize>,
    pub pos: Range<usize>,
    pub emb_g: Range<usize>,
    pub emb_b: Range<usize>,
    pub layers: Vec<LayerIndex>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub head_g: Range<usize>,
    pub head_beta: Range<usize>,
    pub out_bias: Range<usize>,
}

struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: &[usize]) -> Range<usize> {
        let spec = TensorSpec {
            name,
            shape: shape.to_vec(),
            offset: self.total,
        };
        self.total += spec.len();
        let r = spec.range();
        self.specs.push(spec);
        r
    }
}

fn layout(config: &ModelConfig) -> (Vec<TensorSpec>, Index, usize) {
    let (h, f, v, s) = (
        config.hidden,
        config.feed_forward,
        config.vocab,
        config.max_seq,
    );
    let mut b = LayoutBuilder {
        specs: Vec::new(),
        total: 0,
    };
    let tok = b.add("embeddings.token".into(), &[v, h]);
    let pos = b.add("embeddings.position".into(), &[s, h]);
    let emb_g = b.add("embeddings.norm.gain".into(), &[h]);
    let emb_b = b.add("embeddings.norm.bias".into(), &[h]);
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let p = |n: &str| format!("layers.{l}.{n}");
        layers.push(LayerIndex {
            wq: b.add(p("attention.query.weight"), &[h, h]),
            bq: b.add(p("attention.query.bias"), &[h]),
            wk: b.add(p("attention.key.weight"), &[h, h]),
            bk: b.add(p("attention.key.bias"), &[h]),
            wv: b.add(p("attention.value.weight"), &[h, h]),
            bv: b.add(p("attention.value.bias"), &[h]),
            wo: b.add(p("attention.output.weight"), &[h, h]),
            bo: b.add(p("attention.output.bias"), &[h]),
            ln1_g: b.add(p("attention.norm.gain"), &[h]),
            ln1_b: b.add(p("attention.norm.bias"), &[h]),
            w1: b.add(p("feed_forward.inner.weight"), &[h, f]),
            b1: b.add(p("feed_forward.inner.bias"), &[f]),
            w2: b.add(p("feed_forward.outer.weight"), &[f, h]),
            b2: b.add(p("feed_forward.outer.bias"), &[h]),
            ln2_g: b.add(p("feed_forward.norm.gain"), &[h]),
            ln2_b: b.add(p("feed_forward.norm.bias"), &[h]),
        });
    }
    let head_w = b.add("head.dense.weight".into(), &[h, h]);
    let head_b = b.add("head.dense.bias".into(), &[h]);
    let head_g = b.add("head.norm.gain".into(), &[h]);
    let head_beta = b.add("head.norm.bias".into(), &[h]);
    let out_bias = b.add("head.output_bias".into(), &[v]);
    let index = Index {
        tok,
        pos,
        emb_g,
        emb_b,
        layers,
        head_w,
        head_b,
        head_g,
        head_beta,
        out_bias,
    };
    (b.specs, index, b.total)
}

/// Model weights stored in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams<T> {
    config: ModelConfig,
    specs: Vec<TensorSpec>,
    data: Vec<T>,
}

impl<T: Scalar> TransformerParams<T> {
    /// Zero-filled parameters with the given layout.
    pub fn zeros(config: ModelConfig) -> Result<Self, MlmError> {
        config.validate()?;
        let (specs, _, total) = layout(&config);
        Ok(Self {
            config,
            specs,
            data: vec![T::zero(); total],
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        let spec = self.specs.iter().find(|s| s.name == name)?;
        Some(&self.data[spec.range()])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn index(&self) -> Index {
        layout(&self.config).1
    }

    /// Converts every weight to another precision.
    pub fn cast<U: Scalar>(&self) -> TransformerParams<U> {
        TransformerParams {
            config: self.config,
            specs: self.specs.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// Standard deviation of the initial weight distribution.
pub const INIT_STD: f64 = 0.02;

/// Initializes weights from N(0, 0.02²) with unit layer-norm gains and zero
/// biases.
pub fn init_params<T: Scalar>(
    config: ModelConfig,
    rng: &mut GameRng,
) -> Result<TransformerParams<T>, MlmError> {
    init_params_with_std(config, INIT_STD, rng)
}

pub fn init_params_with_std<T: Scalar>(
    config: ModelConfig,
    std: f64,
    rng: &mut GameRng,
) -> Result<TransformerParams<T>, MlmError> {
    let mut params = TransformerParams::<T>::zeros(config)?;
    let normal = Normal::new(0.0, std).map_err(|e| MlmError::Config(e.to_string()))?;
    for spec in params.specs.clone() {
        let gain = spec.name.ends_with(".gain");
        let matrix = spec.shape.len() == 2;
        for v in &mut params.data[spec.range()] {
            *v = T::of(if gain {
                1.0
            } else if matrix {
                normal.sample(rng)
            } else {
                0.0
            });
        }
    }
    Ok(params)
}

/// Randomizes every tensor, including biases and gains, so that finite
/// difference checks exercise all paths.
pub(crate) fn perturb_all<T: Scalar>(
    params: &mut TransformerParams<T>,
    scale: f64,
    rng: &mut GameRng,
) {
    for spec in params.specs.clone() {
        let gain = spec.name.ends_with(".gain");
        for v in &mut params.data[spec.range()] {
            let noise = rng.gen_range(-scale..scale);
            *v = T::of(if gain { 1.0 + noise } else { noise });
        }
    }
}
