use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{decode, DatasetRecord, Quantizer, Slot, Token, Vocab, TOKENS_PER_SEGMENT};
use crate::model::Model;
use crate::nn::softmax_rows;
use crate::raster::{rasterize, BinaryGrid};
use crate::{Error, Result};

/// Prediction for one position: a full distribution or a ranked shortlist.
#[derive(Debug, Clone, PartialEq)]
pub enum Scores {
    Probabilities(Vec<f64>),
    /// Most likely first; carries no likelihood.
    Ranking(Vec<Token>),
}

impl Scores {
    /// Expected top-`k` hit for `target`. Tokens tied with the target share
    /// the remaining slots, so a uniform distribution scores `k / |vocab|`.
    pub fn topk_credit(&self, target: Token, k: usize) -> f64 {
        match self {
            Scores::Probabilities(p) => {
                let pt = p[target as usize];
                let greater = p.iter().filter(|&&v| v > pt).count();
                let equal = p.iter().filter(|&&v| v == pt).count();
                if greater >= k {
                    0.0
                } else {
                    ((k - greater) as f64 / equal as f64).min(1.0)
                }
            }
            Scores::Ranking(r) => {
                if r.iter().take(k).any(|&t| t == target) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn probability(&self, target: Token) -> Option<f64> {
        match self {
            Scores::Probabilities(p) => Some(p[target as usize]),
            Scores::Ranking(_) => None,
        }
    }
}

/// Anything that scores every position of a full token sequence: entry `i`
/// predicts `tokens[i]` from `tokens[..i]`.
pub trait Predictor: Sync {
    fn predict(&self, record: &DatasetRecord) -> Result<Vec<Scores>>;
}

/// Uniform probabilities over the vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct UniformPredictor {
    pub vocab: Vocab,
}

impl Predictor for UniformPredictor {
    fn predict(&self, record: &DatasetRecord) -> Result<Vec<Scores>> {
        let n = self.vocab.size();
        Ok(vec![Scores::Probabilities(vec![1.0 / n as f64; n]); record.tokens.len()])
    }
}

/// Teacher-forced model predictions. Image models condition on the
/// raster of the record's leading segments. Positions removed by the
/// opcode ablation get probability 1 on the true token.
pub struct ModelPredictor<'m> {
    pub model: &'m Model,
    pub quantizer: Quantizer,
}

impl ModelPredictor<'_> {
    pub fn image_for(&self, record: &DatasetRecord) -> Result<Option<BinaryGrid>> {
        let cfg = &self.model.config;
        if !cfg.has_context() {
            return Ok(None);
        }
        Ok(Some(rasterize(&decode(&record.tokens, &self.quantizer)?, cfg.grid, cfg.n_raster)))
    }
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, record: &DatasetRecord) -> Result<Vec<Scores>> {
        let image = self.image_for(record)?;
        let input = self.model.model_input(&record.tokens)?;
        let probs = softmax_rows(&self.model.forward(&record.tokens, image.as_ref())?);
        let v = self.model.config.vocab().size();
        let mut out: Vec<Scores> = record
            .tokens
            .tokens
            .iter()
            .map(|&t| {
                let mut p = vec![0.0; v];
                p[t as usize] = 1.0;
                Scores::Probabilities(p)
            })
            .collect();
        for (row, &pos) in input.positions.iter().enumerate() {
            out[pos] = Scores::Probabilities(probs.row(row).to_vec());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Absent for predictors without likelihoods.
    pub nll_bits_per_token: Option<f64>,
    pub top1_accuracy: f64,
    pub top5_accuracy: f64,
    pub token_count: usize,
    pub sequence_count: usize,
}

/// Closed-form uniform baseline; no tokens are scored.
pub fn uniform_metrics(vocab: &Vocab) -> EvalReport {
    let n = vocab.size() as f64;
    EvalReport {
        nll_bits_per_token: Some(n.log2()),
        top1_accuracy: 1.0 / n,
        top5_accuracy: 5.0 / n,
        token_count: 0,
        sequence_count: 0,
    }
}

/// Compensated sum of values sorted first, so the result does not depend
/// on input order.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in v {
        let t = sum + x;
        c += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + c
}

/// Runs `f` over records on all available cores; results keep record order.
fn par_map<T: Send>(records: &[DatasetRecord], f: impl Fn(&DatasetRecord) -> Result<T> + Sync) -> Result<Vec<T>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(records.len().max(1));
    let chunk = records.len().div_ceil(threads).max(1);
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> =
            records.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<T>>>())).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(records.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Teacher-forced NLL (bits/token) and top-1/top-5 accuracy over every
/// token position, `stop` included. No grammar masking is applied.
pub fn evaluate(pred: &dyn Predictor, records: &[DatasetRecord]) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let per_record = par_map(records, |r| {
        let scores = pred.predict(r)?;
        if scores.len() != r.tokens.len() {
            return Err(Error::Shape(format!("{} predictions for {} tokens", scores.len(), r.tokens.len())));
        }
        let mut nll = Some(0.0);
        let (mut top1, mut top5) = (0.0, 0.0);
        for (s, &t) in scores.iter().zip(&r.tokens.tokens) {
            nll = match (nll, s.probability(t)) {
                (Some(acc), Some(p)) => Some(acc - p.log2()),
                _ => None,
            };
            top1 += s.topk_credit(t, 1);
            top5 += s.topk_credit(t, 5);
        }
        Ok((nll, top1, top5, scores.len()))
    })?;
    let tokens: usize = per_record.iter().map(|r| r.3).sum();
    if tokens == 0 {
        return Err(Error::InvalidArgument("test set has no tokens".into()));
    }
    let nll: Option<Vec<f64>> = per_record.iter().map(|r| r.0).collect();
    let n = tokens as f64;
    Ok(EvalReport {
        nll_bits_per_token: nll.map(|v| ordered_sum(v) / n),
        top1_accuracy: ordered_sum(per_record.iter().map(|r| r.1).collect()) / n,
        top5_accuracy: ordered_sum(per_record.iter().map(|r| r.2).collect()) / n,
        token_count: tokens,
        sequence_count: records.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadRow {
    pub pair_index: usize,
    pub slot: String,
    pub mean_prob: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Per-position calibration grouped into move/line segment pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DyadStats {
    pub rows: Vec<DyadRow>,
}

impl DyadStats {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair_index,slot,mean_prob,accuracy,count\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{}", r.pair_index, r.slot, r.mean_prob, r.accuracy, r.count).expect("string write");
        }
        s
    }

    pub fn total_count(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }
}

/// Buckets flat position `i` by `(i / 6, i mod 6)` and reports the mean
/// ground-truth probability and top-1 accuracy of each bucket.
pub fn dyad_stats(pred: &dyn Predictor, records: &[DatasetRecord]) -> Result<DyadStats> {
    let per_record = par_map(records, |r| {
        let scores = pred.predict(r)?;
        scores
            .iter()
            .zip(&r.tokens.tokens)
            .enumerate()
            .map(|(i, (s, &t))| {
                let p = s
                    .probability(t)
                    .ok_or_else(|| Error::InvalidArgument("dyad statistics need probabilities".into()))?;
                Ok((i, p, s.topk_credit(t, 1)))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut buckets: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, p, hit) in per_record.into_iter().flatten() {
        let b = buckets.entry((i / TOKENS_PER_SEGMENT, i % TOKENS_PER_SEGMENT)).or_default();
        b.0.push(p);
        b.1.push(hit);
    }
    let rows = buckets
        .into_iter()
        .map(|((pair, slot), (p, hit))| {
            let n = p.len();
            DyadRow {
                pair_index: pair,
                slot: Slot::of_position(slot).name().to_string(),
                mean_prob: ordered_sum(p) / n as f64,
                accuracy: ordered_sum(hit) / n as f64,
                count: n,
            }
        })
        .collect();
    Ok(DyadStats { rows })
}
