use std::f64::consts::LOG2_E;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Example, Model};
use crate::dataset::{augment, decode, encode, DatasetRecord, Quantizer, TokenSequence, NUM_SIGNED_PERMUTATIONS};
use crate::nn::{AdamConfig, AdamState, Graph};
use crate::raster::{rasterize, BinaryGrid};
use crate::rng::{derive_seed, substream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Draw a random signed permutation for every sampled sequence.
    pub augment: bool,
    pub log_every: usize,
    /// Emit a checkpoint event every this many steps (0 disables).
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1_000_000,
            batch_size: 8,
            adam: AdamConfig::default(),
            augment: true,
            log_every: 100,
            checkpoint_every: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub nll_bits: f64,
}

/// Progress notifications; the caller decides how to persist them.
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Metrics(MetricsRow),
    Checkpoint { step: usize, model: &'a Model },
}

/// Teacher-forced NLL minimization with Adam.
///
/// Step `s` samples its batch (with replacement) and augmentation indices
/// from substreams of `cfg.seed` keyed by `s`, so a run is reproducible
/// from the seed alone. Returns the logged metrics.
pub fn train(
    model: &mut Model,
    records: &[DatasetRecord],
    q: &Quantizer,
    cfg: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent) -> Result<()>,
) -> Result<Vec<MetricsRow>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if q.n_q != model.config.n_q {
        return Err(Error::InvalidArgument(format!("quantizer has {} bins, model expects {}", q.n_q, model.config.n_q)));
    }
    let mut adam = AdamState::new(&model.params, cfg.adam);
    let mut log = Vec::new();
    for step in 1..=cfg.steps {
        let mut rng = substream(cfg.seed, "batch", step as u64);
        let mut seqs: Vec<TokenSequence> = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let rec = &records[rng.random_range(0..records.len())];
            let tokens = if cfg.augment {
                let perm = rng.random_range(0..NUM_SIGNED_PERMUTATIONS);
                encode(&augment(&decode(&rec.tokens, q)?, perm)?, q)
            } else {
                rec.tokens.clone()
            };
            seqs.push(tokens);
        }
        let images: Vec<Option<BinaryGrid>> = seqs
            .iter()
            .map(|s| -> Result<_> {
                Ok(match model.config.has_context() {
                    true => Some(rasterize(&decode(s, q)?, model.config.grid, model.config.n_raster)),
                    false => None,
                })
            })
            .collect::<Result<_>>()?;
        let batch: Vec<Example> =
            seqs.iter().zip(&images).map(|(tokens, img)| Example { tokens, image: img.as_ref() }).collect();
        let (loss, grads) = {
            let mut g = Graph::training(&model.params, derive_seed(cfg.seed, "dropout", step as u64));
            let loss = model.loss_graph(&mut g, &batch)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Divergence { step, loss: value });
            }
            (value, g.backward(loss)?)
        };
        model.params.zero_grad();
        model.params.accumulate(&grads, 1.0)?;
        adam.step(&mut model.params)?;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == cfg.steps) {
            let row = MetricsRow { step, nll_bits: loss * LOG2_E };
            log.push(row);
            on_event(TrainEvent::Metrics(row))?;
        }
        if cfg.checkpoint_every > 0 && (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
            on_event(TrainEvent::Checkpoint { step, model })?;
        }
    }
    Ok(log)
}
