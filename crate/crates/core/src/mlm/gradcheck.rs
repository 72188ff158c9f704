//! Finite-difference verification of the analytic gradients.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::model::{mlm_loss, mlm_loss_and_grad};
use super::train::mlm_corrupt;
use super::{perturb_all, MlmError, ModelConfig, TransformerParams};
use crate::seed::GameRng;
use crate::tokenizer::{CLS_ID, SEP_ID, SPECIAL_TOKENS};

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that gradients that are zero
/// up to rounding do not count as large relative errors.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per block (embedding, attention, feed_forward, head).
    pub blocks: BTreeMap<String, f64>,
    pub parameters_checked: usize,
    pub loss: f64,
}

fn block_of(name: &str) -> &'static str {
    if name.starts_with("embeddings") {
        "embedding"
    } else if name.contains(".attention.") {
        "attention"
    } else if name.contains(".feed_forward.") {
        "feed_forward"
    } else {
        "head"
    }
}

/// Compares every analytic parameter gradient of the MLM loss with central
/// differences, in f64, on a random batch for `config` (dropout disabled).
pub fn gradient_check(config: ModelConfig, rng: &mut GameRng) -> Result<GradCheckReport, MlmError> {
    let config = ModelConfig {
        dropout: 0.0,
        ..config
    };
    let mut params = TransformerParams::<f64>::zeros(config)?;
    perturb_all(&mut params, 0.5, rng);
    let first = SPECIAL_TOKENS.len() as u32;
    let batch: Vec<Vec<u32>> = (0..3)
        .map(|_| {
            let len = rng.gen_range(3..=config.max_seq);
            let mut seq = vec![CLS_ID];
            seq.extend((0..len - 2).map(|_| rng.gen_range(first..config.vocab as u32)));
            seq.push(SEP_ID);
            seq
        })
        .collect();
    let mut corruption = mlm_corrupt(&batch, 0.5, config.vocab, rng);
    while corruption.labels.is_empty() {
        corruption = mlm_corrupt(&batch, 0.5, config.vocab, rng);
    }
    let (loss, grad) = mlm_loss_and_grad(&params, &corruption.ids, &corruption.labels, None)?;
    let mut blocks: BTreeMap<String, f64> = BTreeMap::new();
    let mut worst: f64 = 0.0;
    for spec in params.specs().to_vec() {
        let block = blocks
            .entry(block_of(&spec.name).to_string())
            .or_insert(0.0);
        for i in spec.range() {
            let original = params.data()[i];
            params.data_mut()[i] = original + STEP;
            let up = mlm_loss(&params, &corruption.ids, &corruption.labels)?;
            params.data_mut()[i] = original - STEP;
            let down = mlm_loss(&params, &corruption.ids, &corruption.labels)?;
            params.data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grad[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            *block = block.max(rel);
            worst = worst.max(rel);
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        blocks,
        parameters_checked: params.len(),
        loss,
    })
}
