//! Reverse-mode differentiation over a tape of tensor operations.
//!
//! A [`Graph`] records every operation applied during a forward pass.
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! every parameter of the borrowed [`ParamStore`].

use std::collections::HashMap;

use rand::Rng as _;

use super::tensor::gemm;
use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::rng::{substream, Rng};
use crate::{Error, Result};

/// Layer normalization epsilon, added to the variance.
pub const LAYERNORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Rows of one attention problem inside a batched attention call.
///
/// Query row `i` (relative to `q_start`) may attend key/value rows
/// `0..=causal_offset + i` (relative to `kv_start`) when `causal_offset` is
/// set, otherwise all `kv_len` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnBlock {
    pub q_start: usize,
    pub q_len: usize,
    pub kv_start: usize,
    pub kv_len: usize,
    pub causal_offset: Option<usize>,
}

impl AttnBlock {
    fn visible(&self, i: usize) -> usize {
        match self.causal_offset {
            Some(off) => (off + i + 1).min(self.kv_len),
            None => self.kv_len,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    ScaleBy(Var, Var),
    MulConst(Var, f64),
    Relu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Attention { q: Var, k: Var, v: Var, heads: usize, blocks: Vec<AttnBlock>, probs: Vec<Vec<f64>> },
    Gather { table: Var, ids: Vec<Option<usize>> },
    GatherRows { src: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Transpose(Var),
    Dropout { x: Var, mask: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    Sum(Var),
    Im2col { x: Var, geom: ConvGeom },
}

#[derive(Debug)]
struct Node {
    /// `None` for parameters, whose values live in the store.
    value: Option<Tensor>,
    op: Op,
}

/// A tape of recorded tensor operations.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    training: bool,
    dropout_seed: u64,
    dropout_calls: u64,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl<'p> Graph<'p> {
    /// A graph in inference mode (dropout disabled).
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), param_vars: HashMap::new(), training: false, dropout_seed: 0, dropout_calls: 0 }
    }

    /// A graph in training mode; dropout masks derive from `dropout_seed`
    /// and the call index.
    pub fn training(params: &'p ParamStore, dropout_seed: u64) -> Self {
        Self { training: true, dropout_seed, ..Self::new(params) }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0] {
            Node { value: Some(t), .. } => t,
            Node { op: Op::Param(id), .. } => self.params.get(*id),
            _ => unreachable!("non-parameter node without value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `a [m, k] x b [k, n]`; `a` may carry leading batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.shape().len() != 2 || ta.cols() != tb.shape()[0] {
            return shape_err(format!("matmul {:?} x {:?}", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = n;
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b)))
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tb.len() != tx.cols() {
            return shape_err(format!("bias {:?} for {:?}", tb.shape(), tx.shape()));
        }
        let mut out = tx.clone();
        let c = tx.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tb.data()[i % c];
        }
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(format!("add {:?} + {:?}", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Multiplies every element of `x` by the one-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return shape_err(format!("scale factor must have one element, got {:?}", self.value(s).shape()));
        }
        let sv = self.value(s).data()[0];
        let mut out = self.value(x).clone();
        out.scale_assign(sv);
        Ok(self.push(out, Op::ScaleBy(x, s)))
    }

    pub fn mul_const(&mut self, x: Var, c: f64) -> Var {
        let mut out = self.value(x).clone();
        out.scale_assign(c);
        self.push(out, Op::MulConst(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.max(0.0);
        }
        self.push(out, Op::Relu(x))
    }

    /// Standardizes each row along the last axis, then applies gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let e = tx.cols();
        if self.value(gain).len() != e || self.value(bias).len() != e {
            return shape_err(format!("layernorm params for width {e}"));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = Tensor::zeros(tx.shape());
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / e as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / e as f64;
            let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std[r] = is;
            let o = out.row_mut(r);
            for j in 0..e {
                let h = (row[j] - mean) * is;
                xhat[r * e + j] = h;
                o[j] = h * g[j] + b[j];
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }))
    }

    /// Batched multi-head scaled dot-product attention over projected
    /// queries, keys and values (all `[rows, E]`).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, blocks: Vec<AttnBlock>) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let e = tq.cols();
        if heads == 0 || e % heads != 0 {
            return shape_err(format!("embedding width {e} not divisible by {heads} heads"));
        }
        if tk.cols() != e || tv.cols() != e || tk.rows() != tv.rows() {
            return shape_err(format!("attention q {:?} k {:?} v {:?}", tq.shape(), tk.shape(), tv.shape()));
        }
        for b in &blocks {
            if b.q_start + b.q_len > tq.rows() || b.kv_start + b.kv_len > tk.rows() || b.kv_len == 0 {
                return shape_err(format!("attention block {b:?} out of range"));
            }
        }
        let d = e / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = Tensor::zeros(&[tq.rows(), e]);
        let mut probs = Vec::with_capacity(blocks.len() * heads);
        let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
        for b in &blocks {
            for h in 0..heads {
                let off = h * d;
                let mut p = vec![0.0; b.q_len * b.kv_len];
                for i in 0..b.q_len {
                    let qi = &qd[(b.q_start + i) * e + off..][..d];
                    let n = b.visible(i);
                    let prow = &mut p[i * b.kv_len..][..n];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in prow.iter_mut().enumerate() {
                        let kj = &kd[(b.kv_start + j) * e + off..][..d];
                        *s = qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>() * scale;
                        max = max.max(*s);
                    }
                    let mut z = 0.0;
                    for s in prow.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    let o = &mut out.data_mut()[(b.q_start + i) * e + off..][..d];
                    for (j, s) in prow.iter_mut().enumerate() {
                        *s /= z;
                        let vj = &vd[(b.kv_start + j) * e + off..][..d];
                        for (ov, vv) in o.iter_mut().zip(vj) {
                            *ov += *s * vv;
                        }
                    }
                }
                probs.push(p);
            }
        }
        Ok(self.push(out, Op::Attention { q, k, v, heads, blocks, probs }))
    }

    /// Sums rows of embedding tables: row `r` of the output is
    /// `table[ids[r]]`, or zeros where `ids[r]` is `None`.
    pub fn gather(&mut self, table: Var, ids: Vec<Option<usize>>) -> Result<Var> {
        let tt = self.value(table);
        let (n, e) = (tt.rows(), tt.cols());
        let mut out = Tensor::zeros(&[ids.len(), e]);
        for (r, id) in ids.iter().enumerate() {
            if let Some(i) = *id {
                if i >= n {
                    return Err(Error::InvalidArgument(format!("embedding index {i} outside table of {n} rows")));
                }
                out.row_mut(r).copy_from_slice(tt.row(i));
            }
        }
        Ok(self.push(out, Op::Gather { table, ids }))
    }

    /// Selects (and possibly repeats) rows of `src`.
    pub fn gather_rows(&mut self, src: Var, idx: Vec<usize>) -> Result<Var> {
        let ts = self.value(src);
        let e = ts.cols();
        let mut out = Tensor::zeros(&[idx.len(), e]);
        for (r, &i) in idx.iter().enumerate() {
            if i >= ts.rows() {
                return shape_err(format!("row {i} outside {:?}", ts.shape()));
            }
            out.row_mut(r).copy_from_slice(ts.row(i));
        }
        Ok(self.push(out, Op::GatherRows { src, idx }))
    }

    /// Stacks matrices with equal width along the row axis.
    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Result<Var> {
        let e = parts.first().map(|p| self.value(*p).cols()).unwrap_or(0);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in &parts {
            let t = self.value(*p);
            if t.cols() != e {
                return shape_err(format!("concat widths {e} vs {}", t.cols()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, e], data)?;
        Ok(self.push(out, Op::ConcatRows(parts)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Transposes a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 {
            return shape_err(format!("transpose needs a matrix, got {:?}", t.shape()));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = t.data()[i * c + j];
            }
        }
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x)))
    }

    /// Inverted dropout; identity outside training mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !self.training || rate == 0.0 {
            return Ok(x);
        }
        let mut rng: Rng = substream(self.dropout_seed, "dropout", self.dropout_calls);
        self.dropout_calls += 1;
        let keep = 1.0 / (1.0 - rate);
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let mut out = self.value(x).clone();
        for (v, m) in out.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Mean negative log-likelihood (nats) of `targets` under row-wise
    /// softmax of `logits`; rows with `None` targets are skipped.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Result<Var> {
        let t = self.value(logits);
        let (rows, v) = (t.rows(), t.cols());
        if targets.len() != rows {
            return shape_err(format!("{} targets for {rows} logit rows", targets.len()));
        }
        let mut probs = vec![0.0; rows * v];
        let mut total = 0.0;
        let mut count = 0;
        for (r, target) in targets.iter().enumerate() {
            let Some(y) = *target else { continue };
            if y >= v {
                return Err(Error::InvalidArgument(format!("target {y} outside vocabulary of {v}")));
            }
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let p = &mut probs[r * v..(r + 1) * v];
            for (pi, x) in p.iter_mut().zip(row) {
                *pi = (x - max).exp() / z;
            }
            total += z.ln() + max - row[y];
            count += 1;
        }
        if count == 0 {
            return Err(Error::InvalidArgument("cross entropy over zero targets".into()));
        }
        let out = Tensor::scalar(total / count as f64);
        Ok(self.push(out, Op::CrossEntropy { logits, targets, probs, count }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Extracts `k x k` patches from a channels-last image `[h * w, c]`
    /// with zero padding; output `[oh * ow, k * k * c]`.
    pub fn im2col(&mut self, x: Var, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        if t.rows() != h * w || stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return shape_err(format!("im2col on {:?} as {h}x{w}, k={k}, stride={stride}", t.shape()));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let geom = ConvGeom { h, w, c, k, stride, pad, oh, ow };
        let mut out = vec![0.0; oh * ow * k * k * c];
        for_each_patch_cell(&geom, |dst, src| out[dst..dst + c].copy_from_slice(&t.data()[src..src + c]));
        let out = Tensor::new(vec![oh * ow, k * k * c], out)?;
        Ok(self.push(out, Op::Im2col { x, geom }))
    }

    /// Reverse pass from the scalar `loss`; returns gradients for every
    /// parameter in the store (zeros for parameters not on the tape).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("backward on an empty graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!("loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(_) => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.shape()[1]);
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), true, &mut da, 0.0);
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g.data(), false, &mut db, 0.0);
                    accumulate(&mut grads, *a, Tensor::new(ta.shape().to_vec(), da)?);
                    accumulate(&mut grads, *b, Tensor::new(tb.shape().to_vec(), db)?);
                }
                Op::AddBias(x, b) => {
                    let c = g.cols();
                    let mut db = vec![0.0; c];
                    for (i, v) in g.data().iter().enumerate() {
                        db[i % c] += v;
                    }
                    let bshape = self.value(*b).shape().to_vec();
                    accumulate(&mut grads, *b, Tensor::new(bshape, db)?);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::ScaleBy(x, s) => {
                    let sv = self.value(*s).data()[0];
                    let ds: f64 = g.data().iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                    let sshape = self.value(*s).shape().to_vec();
                    accumulate(&mut grads, *s, Tensor::new(sshape, vec![ds])?);
                    let mut dx = g;
                    dx.scale_assign(sv);
                    accumulate(&mut grads, *x, dx);
                }
                Op::MulConst(x, c) => {
                    let mut dx = g;
                    dx.scale_assign(*c);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    for (d, v) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                        if *v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let e = g.cols();
                    let gv = self.value(*gain).data();
                    let mut dg = vec![0.0; e];
                    let mut db = vec![0.0; e];
                    let mut dx = Tensor::zeros(g.shape());
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = g.row(r);
                        let hr = &xhat[r * e..(r + 1) * e];
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..e {
                            dg[j] += gr[j] * hr[j];
                            db[j] += gr[j];
                            let dh = gr[j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[j];
                        }
                        let n = e as f64;
                        let out = dx.row_mut(r);
                        for j in 0..e {
                            let dh = gr[j] * gv[j];
                            out[j] = is / n * (n * dh - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                    let gshape = self.value(*gain).shape().to_vec();
                    let bshape = self.value(*bias).shape().to_vec();
                    accumulate(&mut grads, *gain, Tensor::new(gshape, dg)?);
                    accumulate(&mut grads, *bias, Tensor::new(bshape, db)?);
                    accumulate(&mut grads, *x, dx);
                }
                Op::Attention { q, k, v, heads, blocks, probs } => {
                    let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                    let e = tq.cols();
                    let d = e / heads;
                    let scale = 1.0 / (d as f64).sqrt();
                    let mut dq = Tensor::zeros(tq.shape());
                    let mut dk = Tensor::zeros(tk.shape());
                    let mut dv = Tensor::zeros(tv.shape());
                    let (qd, kd, vd, gd) = (tq.data(), tk.data(), tv.data(), g.data());
                    let mut pi = 0;
                    for b in blocks {
                        for h in 0..*heads {
                            let off = h * d;
                            let p = &probs[pi];
                            pi += 1;
                            let mut ds = vec![0.0; b.kv_len];
                            for i in 0..b.q_len {
                                let n = b.visible(i);
                                let prow = &p[i * b.kv_len..][..n];
                                let go = &gd[(b.q_start + i) * e + off..][..d];
                                let mut dot = 0.0;
                                for j in 0..n {
                                    let vj = &vd[(b.kv_start + j) * e + off..][..d];
                                    let dp: f64 = go.iter().zip(vj).map(|(a, c)| a * c).sum();
                                    ds[j] = dp;
                                    dot += prow[j] * dp;
                                    let dvj = &mut dv.data_mut()[(b.kv_start + j) * e + off..][..d];
                                    for (x, y) in dvj.iter_mut().zip(go) {
                                        *x += prow[j] * y;
                                    }
                                }
                                let qi = &qd[(b.q_start + i) * e + off..][..d];
                                for j in 0..n {
                                    let s = prow[j] * (ds[j] - dot) * scale;
                                    if s == 0.0 {
                                        continue;
                                    }
                                    let kj = &kd[(b.kv_start + j) * e + off..][..d];
                                    let dqi = &mut dq.data_mut()[(b.q_start + i) * e + off..][..d];
                                    for (x, y) in dqi.iter_mut().zip(kj) {
                                        *x += s * y;
                                    }
                                    let dkj = &mut dk.data_mut()[(b.kv_start + j) * e + off..][..d];
                                    for (x, y) in dkj.iter_mut().zip(qi) {
                                        *x += s * y;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *k, dk);
                    accumulate(&mut grads, *v, dv);
                }
                Op::Gather { table, ids } => {
                    let tt = self.value(*table);
                    let mut dt = Tensor::zeros(tt.shape());
                    for (r, id) in ids.iter().enumerate() {
                        if let Some(i) = *id {
                            for (x, y) in dt.row_mut(i).iter_mut().zip(g.row(r)) {
                                *x += y;
                            }
                        }
                    }
                    accumulate(&mut grads, *table, dt);
                }
                Op::GatherRows { src, idx } => {
                    let mut ds = Tensor::zeros(self.value(*src).shape());
                    for (r, &i) in idx.iter().enumerate() {
                        for (x, y) in ds.row_mut(i).iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads, *src, ds);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let t = self.value(*p);
                        let n = t.len();
                        let part = Tensor::new(t.shape().to_vec(), g.data()[start..start + n].to_vec())?;
                        start += n;
                        accumulate(&mut grads, *p, part);
                    }
                }
                Op::Reshape(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, g.reshape(&shape)?);
                }
                Op::Transpose(x) => {
                    let (r, c) = (g.shape()[0], g.shape()[1]);
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            out[j * r + i] = g.data()[i * c + j];
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![c, r], out)?);
                }
                Op::Dropout { x, mask } => {
                    let mut dx = g;
                    for (d, m) in dx.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::CrossEntropy { logits, targets, probs, count } => {
                    let gl = g.data()[0] / *count as f64;
                    let t = self.value(*logits);
                    let v = t.cols();
                    let mut dl = Tensor::zeros(t.shape());
                    for (r, target) in targets.iter().enumerate() {
                        let Some(y) = *target else { continue };
                        let row = dl.row_mut(r);
                        for (j, x) in row.iter_mut().enumerate() {
                            *x = gl * probs[r * v + j];
                        }
                        row[y] -= gl;
                    }
                    accumulate(&mut grads, *logits, dl);
                }
                Op::Sum(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::full(&shape, g.data()[0]));
                }
                Op::Im2col { x, geom } => {
                    let mut dx = Tensor::zeros(self.value(*x).shape());
                    let c = geom.c;
                    let gd = g.data();
                    let dxd = dx.data_mut();
                    for_each_patch_cell(geom, |dst, src| {
                        for t in 0..c {
                            dxd[src + t] += gd[dst + t];
                        }
                    });
                    accumulate(&mut grads, *x, dx);
                }
            }
        }

        let mut out: Vec<Tensor> = self.params.ids().map(|id| Tensor::zeros(self.params.get(id).shape())).collect();
        for (id, var) in &self.param_vars {
            if let Some(g) = grads[var.0].take() {
                out[id.0] = g;
            }
        }
        Ok(Gradients { grads: out })
    }
}

/// Visits every in-bounds `(output offset, input offset)` pair of an
/// im2col transform; both offsets point at the first of `c` channels.
fn for_each_patch_cell(g: &ConvGeom, mut f: impl FnMut(usize, usize)) {
    let row_len = g.k * g.k * g.c;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let base = (oy * g.ow + ox) * row_len;
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for kx in 0..g.k {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    let dst = base + (ky * g.k + kx) * g.c;
                    let src = (iy as usize * g.w + ix as usize) * g.c;
                    f(dst, src);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
impl Var {
    pub(crate) fn from_index_for_tests(i: usize) -> Self {
        Var(i)
    }
}
