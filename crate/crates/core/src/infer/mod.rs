//! Sampling with nucleus filtering and grammar masking, the evaluation
//! baselines, and the token-level metrics.

mod eval;
mod knn;

pub use eval::{dyad_stats, evaluate, uniform_metrics, DyadRow, DyadStats, EvalReport, ModelPredictor, Predictor, Scores, UniformPredictor};
pub use knn::{hamming, NearestNeighbors};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::dataset::{Token, TokenSequence, LINE, MOVE, STOP, TOKENS_PER_SEGMENT};
use crate::model::Model;
use crate::nn::softmax;
use crate::raster::BinaryGrid;
use crate::rng::substream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub top_p: f64,
    /// Length cap including the final `stop`; `None` uses the model maximum.
    pub max_tokens: Option<usize>,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { top_p: 0.9, max_tokens: None, rng_seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidArgument(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        Ok(())
    }
}

/// Keeps the most probable tokens (ties by ascending id) until their mass
/// reaches `top_p`, zeroes the rest, and renormalizes.
pub fn nucleus_filter(p: &[f64], top_p: f64) -> Vec<f64> {
    if top_p >= 1.0 {
        return p.to_vec();
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    let mut kept = 0;
    for &i in &order {
        mass += p[i];
        kept += 1;
        if mass >= top_p {
            break;
        }
    }
    let mut out = vec![0.0; p.len()];
    for &i in &order[..kept] {
        out[i] = p[i] / mass;
    }
    out
}

/// Which tokens the grammar allows at flat position `n`.
fn allowed(n: usize, t: Token) -> bool {
    match n % TOKENS_PER_SEGMENT {
        0 => t == STOP || t == MOVE,
        3 => t == LINE,
        _ => t > LINE,
    }
}

fn draw(probs: &[f64], rng: &mut crate::rng::Rng) -> Result<Token> {
    let dist = WeightedIndex::new(probs).map_err(|e| Error::InvalidArgument(format!("sampling distribution: {e}")))?;
    Ok(dist.sample(rng) as Token)
}

/// Extends `prefix` token by token until `stop` is drawn or the length cap
/// is reached (then `stop` is appended at the next segment boundary).
///
/// Each step takes the last logits row, masks tokens the grammar forbids
/// at that position, applies [`nucleus_filter`], and samples. Without
/// opcode inputs, `line` is inserted deterministically and `move` whenever
/// a coordinate is drawn at a segment boundary.
pub fn sample_sequence(
    model: &Model,
    prefix: &TokenSequence,
    image: Option<&BinaryGrid>,
    cfg: &SamplerConfig,
) -> Result<TokenSequence> {
    cfg.validate()?;
    prefix.validate_prefix(&model.config.vocab())?;
    if prefix.ends_with_stop() {
        return Ok(prefix.clone());
    }
    let mut full = prefix.tokens.clone();
    let cap = cfg.max_tokens.unwrap_or(model.config.max_tokens()).min(model.config.max_tokens());
    let mut dec = model.decoder(image)?;
    for &t in &model.model_input(prefix)?.tokens {
        dec.push(t)?;
    }
    let opcodes = model.config.use_opcode_tokens;
    let mut rng = substream(cfg.rng_seed, "sample", 0);
    loop {
        let n = full.len();
        let slot = n % TOKENS_PER_SEGMENT;
        if slot == 0 && n + TOKENS_PER_SEGMENT + 1 > cap {
            full.push(STOP);
            break;
        }
        if !opcodes && slot == 3 {
            full.push(LINE);
            continue;
        }
        let probs = softmax(dec.logits());
        // Without opcode inputs a coordinate at a boundary stands for `move`.
        let ok = |t: Token| if !opcodes && slot == 0 { t == STOP || t > LINE } else { allowed(n, t) };
        let mut masked: Vec<f64> = probs.iter().enumerate().map(|(t, &p)| if ok(t as Token) { p } else { 0.0 }).collect();
        let mass: f64 = masked.iter().sum();
        if mass > 0.0 && mass.is_finite() {
            masked.iter_mut().for_each(|p| *p /= mass);
        } else {
            let n_ok = (0..masked.len()).filter(|&t| ok(t as Token)).count() as f64;
            masked = (0..masked.len()).map(|t| if ok(t as Token) { 1.0 / n_ok } else { 0.0 }).collect();
        }
        let t = draw(&nucleus_filter(&masked, cfg.top_p), &mut rng)?;
        if t == STOP {
            full.push(STOP);
            break;
        }
        if !opcodes && slot == 0 {
            full.push(MOVE);
        }
        full.push(t);
        dec.push(t)?;
    }
    Ok(TokenSequence::new(full))
}
