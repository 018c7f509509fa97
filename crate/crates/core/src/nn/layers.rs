//! Building blocks on top of [`Graph`]: dense, layer norm, multi-head
//! attention, and plain-tensor softmax.

use super::graph::{AttnBlock, Graph, Var};
use super::{ParamId, ParamStore, Tensor};
use crate::rng::Rng;
use crate::{Error, Result};

/// Fully connected layer `x W + b` along the last axis.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self> {
        let weight = store.add_dense_weight(format!("{name}.w"), in_dim, out_dim, rng)?;
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]))?;
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    /// Reattaches to parameters already registered under `name`.
    pub fn lookup(store: &ParamStore, name: &str) -> Result<Self> {
        let weight = lookup(store, &format!("{name}.w"))?;
        let bias = lookup(store, &format!("{name}.b"))?;
        let shape = store.get(weight).shape();
        Ok(Self { weight, bias, in_dim: shape[0], out_dim: shape[1] })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.value(x).cols() != self.in_dim {
            return Err(Error::Shape(format!("dense expects width {}, got {:?}", self.in_dim, g.value(x).shape())));
        }
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store.id(name).ok_or_else(|| Error::Checkpoint { name: name.into(), reason: "missing parameter".into() })
}

/// Layer normalization with learned gain (init 1) and bias (init 0).
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dim]))?;
        Ok(Self { gain, bias })
    }

    pub fn lookup(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self { gain: lookup(store, &format!("{name}.gain"))?, bias: lookup(store, &format!("{name}.bias"))? })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Multi-head scaled dot-product attention with input and output projections.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub heads: usize,
}

/// Projected keys and values, kept so incremental decoding can reuse them.
#[derive(Debug, Clone, Copy)]
pub struct KeyValue {
    pub key: Var,
    pub value: Var,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("embedding width {dim} not divisible by {heads} heads")));
        }
        Ok(Self {
            query: Dense::new(store, &format!("{name}.q"), dim, dim, rng)?,
            key: Dense::new(store, &format!("{name}.k"), dim, dim, rng)?,
            value: Dense::new(store, &format!("{name}.v"), dim, dim, rng)?,
            output: Dense::new(store, &format!("{name}.o"), dim, dim, rng)?,
            heads,
        })
    }

    pub fn lookup(store: &ParamStore, name: &str, heads: usize) -> Result<Self> {
        Ok(Self {
            query: Dense::lookup(store, &format!("{name}.q"))?,
            key: Dense::lookup(store, &format!("{name}.k"))?,
            value: Dense::lookup(store, &format!("{name}.v"))?,
            output: Dense::lookup(store, &format!("{name}.o"))?,
            heads,
        })
    }

    /// Single-sequence attention of `q_src [S_q, E]` over `kv_src [S_kv, E]`.
    /// With `causal`, row `i` sees key rows `0..=i`, which requires
    /// `S_q == S_kv`.
    pub fn forward(&self, g: &mut Graph, q_src: Var, kv_src: Var, causal: bool) -> Result<Var> {
        let (sq, skv) = (g.value(q_src).rows(), g.value(kv_src).rows());
        if causal && sq != skv {
            return Err(Error::InvalidArgument(format!("causal attention needs equal lengths, got {sq} and {skv}")));
        }
        let kv = self.project_kv(g, kv_src)?;
        let block = AttnBlock { q_start: 0, q_len: sq, kv_start: 0, kv_len: skv, causal_offset: causal.then_some(0) };
        self.forward_blocks(g, q_src, kv, vec![block])
    }

    pub fn project_kv(&self, g: &mut Graph, kv_src: Var) -> Result<KeyValue> {
        Ok(KeyValue { key: self.key.forward(g, kv_src)?, value: self.value.forward(g, kv_src)? })
    }

    /// Batched attention over pre-projected keys and values.
    pub fn forward_blocks(&self, g: &mut Graph, q_src: Var, kv: KeyValue, blocks: Vec<AttnBlock>) -> Result<Var> {
        let q = self.query.forward(g, q_src)?;
        let a = g.attention(q, kv.key, kv.value, self.heads, blocks)?;
        self.output.forward(g, a)
    }
}

/// Numerically stable softmax of one vector.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Row-wise softmax along the last axis.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let s = softmax(x.row(r));
        out.row_mut(r).copy_from_slice(&s);
    }
    out
}

/// Inverted dropout on a plain tensor.
pub fn dropout(x: &Tensor, rate: f64, training: bool, rng: &mut Rng) -> Result<Tensor> {
    use rand::Rng as _;
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - rate);
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = if rng.random::<f64>() < rate { 0.0 } else { *v * keep };
    }
    Ok(out)
}
