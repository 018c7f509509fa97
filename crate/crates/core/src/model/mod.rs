//! The token decoder: sequence embeddings, attention layers with ReZero
//! residuals and optional cross-attention to an image context, the
//! sliding-window MLP variant, the loss, incremental decoding, and training.
//!
//! Row `j` of the logits is the distribution of model-input token `j` given
//! the tokens before it; row 0 sees only the learned start embedding.

mod config;
mod encoder;
mod train;

use std::f64::consts::LOG2_E;

pub use config::{Arch, ContextKind, EncoderConfig, ModelConfig};
pub use encoder::{coordinate_grid, ContextEncoder, EncoderBody, MixerBlock, MixerEncoder, ResNetEncoder};
pub use train::{train, MetricsRow, TrainConfig, TrainEvent};

use crate::dataset::{Token, TokenSequence, LINE, MOVE, STOP, TOKENS_PER_SEGMENT};
use crate::nn::{
    normal_tensor, softmax, AttnBlock, Checkpoint, Dense, Graph, KeyValue, LayerNorm, MultiHeadAttention, ParamId,
    ParamStore, Tensor, Var,
};
use crate::raster::BinaryGrid;
use crate::rng::{substream, Rng};
use crate::{Error, Result};

const EMBED_STD: f64 = 0.02;

/// Flat position in the full sequence of reduced-sequence token `r` when
/// opcodes are dropped.
pub fn reduced_flat_position(r: usize, t: Token) -> usize {
    let group = TOKENS_PER_SEGMENT * (r / 4);
    if t == STOP {
        group
    } else {
        group + [1, 2, 4, 5][r % 4]
    }
}

/// Tokens fed to the network and their flat positions in the full sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelInput {
    pub tokens: Vec<Token>,
    pub positions: Vec<usize>,
}

/// One training or evaluation item.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub tokens: &'a TokenSequence,
    pub image: Option<&'a BinaryGrid>,
}

#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub start: ParamId,
    pub value: ParamId,
    pub index: ParamId,
    pub kind: ParamId,
}

#[derive(Debug, Clone, Copy)]
enum EmbedRow {
    Start,
    Token { t: Token, pos: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct CrossBlock {
    pub norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub alpha: ParamId,
}

/// Pre-norm attention layer: causal self-attention, optional
/// cross-attention, feed-forward; each residual branch is ReZero-scaled.
#[derive(Debug, Clone, Copy)]
pub struct AttnLayer {
    pub self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub self_alpha: ParamId,
    pub cross: Option<CrossBlock>,
    pub ff_norm: LayerNorm,
    pub ff1: Dense,
    pub ff2: Dense,
    pub ff_alpha: ParamId,
}

/// Sliding-window MLP layer over joined windows `[rows, w * E]`.
#[derive(Debug, Clone, Copy)]
pub struct MlpLayer {
    pub norm: LayerNorm,
    pub dense1: Dense,
    pub dense2: Dense,
    pub alpha: ParamId,
}

#[derive(Debug, Clone)]
pub enum Stack {
    Decoder(Vec<AttnLayer>),
    Mlp { window: usize, layers: Vec<MlpLayer> },
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub embedding: Embedding,
    pub stack: Stack,
    pub encoder: Option<ContextEncoder>,
    pub final_norm: LayerNorm,
    pub output: Dense,
}

fn residual(g: &mut Graph, x: Var, branch: Var, alpha: ParamId, rate: f64) -> Result<Var> {
    let d = g.dropout(branch, rate)?;
    let a = g.param(alpha);
    let s = g.scale_by(d, a)?;
    g.add(x, s)
}

impl AttnLayer {
    fn new(store: &mut ParamStore, i: usize, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let e = cfg.embed_dim;
        let n = |s: &str| format!("layer{i}.{s}");
        let cross = if cfg.has_context() {
            Some(CrossBlock {
                norm: LayerNorm::new(store, &n("cross_ln"), e)?,
                attn: MultiHeadAttention::new(store, &n("cross"), e, cfg.heads, rng)?,
                alpha: store.add(n("cross_alpha"), Tensor::scalar(0.0))?,
            })
        } else {
            None
        };
        Ok(Self {
            self_norm: LayerNorm::new(store, &n("self_ln"), e)?,
            self_attn: MultiHeadAttention::new(store, &n("self"), e, cfg.heads, rng)?,
            self_alpha: store.add(n("self_alpha"), Tensor::scalar(0.0))?,
            cross,
            ff_norm: LayerNorm::new(store, &n("ff_ln"), e)?,
            ff1: Dense::new(store, &n("ff1"), e, cfg.fc_width(), rng)?,
            ff2: Dense::new(store, &n("ff2"), cfg.fc_width(), e, rng)?,
            ff_alpha: store.add(n("ff_alpha"), Tensor::scalar(0.0))?,
        })
    }

    fn cross_and_ff(&self, g: &mut Graph, x: Var, ctx: Option<(KeyValue, Vec<AttnBlock>)>, rate: f64) -> Result<Var> {
        let x = match (&self.cross, ctx) {
            (Some(c), Some((kv, blocks))) => {
                let h = c.norm.forward(g, x)?;
                let a = c.attn.forward_blocks(g, h, kv, blocks)?;
                residual(g, x, a, c.alpha, rate)?
            }
            (None, None) => x,
            (Some(_), None) => return Err(Error::InvalidArgument("image model needs a context".into())),
            (None, Some(_)) => return Err(Error::InvalidArgument("context supplied to a model without image input".into())),
        };
        let h = self.ff_norm.forward(g, x)?;
        let h = self.ff1.forward(g, h)?;
        let h = g.relu(h);
        let h = self.ff2.forward(g, h)?;
        residual(g, x, h, self.ff_alpha, rate)
    }

    /// Batched layer over concatenated sequences.
    fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        blocks: &[AttnBlock],
        ctx: Option<(Var, &[AttnBlock])>,
        rate: f64,
    ) -> Result<Var> {
        let h = self.self_norm.forward(g, x)?;
        let kv = self.self_attn.project_kv(g, h)?;
        let a = self.self_attn.forward_blocks(g, h, kv, blocks.to_vec())?;
        let x = residual(g, x, a, self.self_alpha, rate)?;
        let ctx = match (&self.cross, ctx) {
            (Some(c), Some((rows, cb))) => Some((c.attn.project_kv(g, rows)?, cb.to_vec())),
            (None, None) => None,
            (Some(_), None) => return Err(Error::InvalidArgument("image model needs a context".into())),
            (None, Some(_)) => return Err(Error::InvalidArgument("context supplied to a model without image input".into())),
        };
        self.cross_and_ff(g, x, ctx, rate)
    }
}

impl MlpLayer {
    fn new(store: &mut ParamStore, i: usize, cfg: &ModelConfig, window: usize, rng: &mut Rng) -> Result<Self> {
        let (e, f) = (cfg.embed_dim, cfg.fc_width());
        Ok(Self {
            norm: LayerNorm::new(store, &format!("mlp{i}.ln"), window * e)?,
            dense1: Dense::new(store, &format!("mlp{i}.dense1"), window * e, window * f, rng)?,
            dense2: Dense::new(store, &format!("mlp{i}.dense2"), f, e, rng)?,
            alpha: store.add(format!("mlp{i}.alpha"), Tensor::scalar(0.0))?,
        })
    }

    fn forward(&self, g: &mut Graph, x: Var, window: usize, rate: f64) -> Result<Var> {
        let rows = g.value(x).rows();
        let h = self.norm.forward(g, x)?;
        let h = self.dense1.forward(g, h)?;
        let h = g.reshape(h, &[rows * window, self.dense2.in_dim])?;
        let h = g.relu(h);
        let h = self.dense2.forward(g, h)?;
        let h = g.reshape(h, &[rows, window * self.dense2.out_dim])?;
        residual(g, x, h, self.alpha, rate)
    }
}

/// Window of row `j` within a sequence starting at `offset`: the `window`
/// most recent embedding rows, padded with the start row.
fn window_rows(offset: usize, j: usize, window: usize) -> impl Iterator<Item = usize> {
    (0..window).map(move |k| offset + (j + k + 1).saturating_sub(window))
}

impl Model {
    /// Freshly initialized model; every ReZero coefficient starts at 0.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = substream(seed, "init", 0);
        let mut p = ParamStore::new();
        let (e, v) = (config.embed_dim, config.vocab().size());
        let embedding = Embedding {
            start: p.add("embed.start", normal_tensor(&[1, e], EMBED_STD, &mut rng))?,
            value: p.add("embed.value", normal_tensor(&[v, e], EMBED_STD, &mut rng))?,
            index: p.add("embed.index", normal_tensor(&[config.i_max(), e], EMBED_STD, &mut rng))?,
            kind: p.add("embed.type", normal_tensor(&[3, e], EMBED_STD, &mut rng))?,
        };
        let encoder = ContextEncoder::new(&mut p, &config, &mut rng)?;
        let (stack, width) = match config.arch {
            Arch::Decoder => {
                let layers =
                    (0..config.layers).map(|i| AttnLayer::new(&mut p, i, &config, &mut rng)).collect::<Result<_>>()?;
                (Stack::Decoder(layers), e)
            }
            Arch::Mlp { window } => {
                let layers = (0..config.layers)
                    .map(|i| MlpLayer::new(&mut p, i, &config, window, &mut rng))
                    .collect::<Result<_>>()?;
                (Stack::Mlp { window, layers }, window * e)
            }
        };
        let final_norm = LayerNorm::new(&mut p, "final_ln", width)?;
        let output = Dense::new(&mut p, "output", width, v, &mut rng)?;
        Ok(Self { config, params: p, embedding, stack, encoder, final_norm, output })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(self.config.to_json(), &self.params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_json(&ckpt.manifest)?;
        let mut m = Self::new(config, 0)?;
        ckpt.load_into(&mut m.params)?;
        Ok(m)
    }

    /// ReZero coefficients in layer order.
    pub fn alphas(&self) -> Vec<ParamId> {
        match &self.stack {
            Stack::Decoder(layers) => layers
                .iter()
                .flat_map(|l| [Some(l.self_alpha), l.cross.map(|c| c.alpha), Some(l.ff_alpha)])
                .flatten()
                .collect(),
            Stack::Mlp { layers, .. } => layers.iter().map(|l| l.alpha).collect(),
        }
    }

    /// Maps a token sequence to the network input, dropping opcodes when
    /// the configuration asks for it.
    pub fn model_input(&self, seq: &TokenSequence) -> Result<ModelInput> {
        seq.validate_prefix(&self.config.vocab())?;
        if seq.len() > self.config.max_tokens() {
            return Err(Error::InvalidArgument(format!(
                "sequence of {} tokens exceeds the maximum of {}",
                seq.len(),
                self.config.max_tokens()
            )));
        }
        if self.config.use_opcode_tokens {
            return Ok(ModelInput { tokens: seq.tokens.clone(), positions: (0..seq.len()).collect() });
        }
        let positions = seq.reduced_positions();
        Ok(ModelInput { tokens: seq.without_opcodes().tokens, positions })
    }

    fn embed_rows(&self, g: &mut Graph, rows: &[EmbedRow]) -> Result<Var> {
        let e = &self.embedding;
        let mut start = Vec::with_capacity(rows.len());
        let (mut value, mut index, mut kind) = (Vec::new(), Vec::new(), Vec::new());
        let pos_emb = self.config.use_position_embeddings;
        for r in rows {
            match *r {
                EmbedRow::Start => {
                    start.push(Some(0));
                    value.push(None);
                    index.push(None);
                    kind.push(None);
                }
                EmbedRow::Token { t, pos } => {
                    start.push(None);
                    value.push(Some(t as usize));
                    index.push(pos_emb.then_some(pos / 3));
                    kind.push(pos_emb.then_some(pos % 3));
                }
            }
        }
        let mut sum = {
            let t = g.param(e.start);
            g.gather(t, start)?
        };
        let mut parts = vec![(e.value, value)];
        if pos_emb {
            parts.push((e.index, index));
            parts.push((e.kind, kind));
        }
        for (table, ids) in parts {
            let t = g.param(table);
            let v = g.gather(t, ids)?;
            sum = g.add(sum, v)?;
        }
        Ok(sum)
    }

    fn rows_for(input: &ModelInput) -> Vec<EmbedRow> {
        std::iter::once(EmbedRow::Start)
            .chain(input.tokens.iter().zip(&input.positions).map(|(&t, &pos)| EmbedRow::Token { t, pos }))
            .collect()
    }

    /// Sequence embedding `[n + 1, E]` of the model input on `g`.
    pub fn embed_graph(&self, g: &mut Graph, seq: &TokenSequence) -> Result<Var> {
        let input = self.model_input(seq)?;
        self.embed_rows(g, &Self::rows_for(&input))
    }

    pub fn embed(&self, seq: &TokenSequence) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let v = self.embed_graph(&mut g, seq)?;
        Ok(g.value(v).clone())
    }

    /// Context embedding `[N_H * N_W, E]` of one image.
    pub fn encode_image(&self, g: &mut Graph, img: &BinaryGrid) -> Result<Var> {
        self.encoder
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("context supplied to a model without image input".into()))?
            .encode(g, img)
    }

    /// Logits for a batch of examples concatenated along rows; also returns
    /// the model inputs so callers can line up targets.
    pub fn forward_graph(&self, g: &mut Graph, batch: &[Example]) -> Result<(Var, Vec<ModelInput>)> {
        let inputs: Vec<ModelInput> = batch.iter().map(|ex| self.model_input(ex.tokens)).collect::<Result<_>>()?;
        let rows: Vec<EmbedRow> = inputs.iter().flat_map(Self::rows_for).collect();
        let mut x = self.embed_rows(g, &rows)?;
        let rate = self.config.dropout;
        let mut offsets = Vec::with_capacity(inputs.len());
        let mut off = 0;
        for inp in &inputs {
            offsets.push(off);
            off += inp.tokens.len() + 1;
        }
        match &self.stack {
            Stack::Decoder(layers) => {
                let blocks: Vec<AttnBlock> = inputs
                    .iter()
                    .zip(&offsets)
                    .map(|(inp, &o)| AttnBlock {
                        q_start: o,
                        q_len: inp.tokens.len() + 1,
                        kv_start: o,
                        kv_len: inp.tokens.len() + 1,
                        causal_offset: Some(0),
                    })
                    .collect();
                let ctx = self.batch_context(g, batch, &inputs, &offsets)?;
                for l in layers {
                    let c = ctx.as_ref().map(|(v, b)| (*v, b.as_slice()));
                    x = l.forward(g, x, &blocks, c, rate)?;
                }
            }
            Stack::Mlp { window, layers } => {
                let idx: Vec<usize> = inputs
                    .iter()
                    .zip(&offsets)
                    .flat_map(|(inp, &o)| (0..=inp.tokens.len()).flat_map(move |j| window_rows(o, j, *window)))
                    .collect();
                let w = g.gather_rows(x, idx)?;
                x = g.reshape(w, &[off, window * self.config.embed_dim])?;
                for l in layers {
                    x = l.forward(g, x, *window, rate)?;
                }
            }
        }
        let y = self.final_norm.forward(g, x)?;
        Ok((self.output.forward(g, y)?, inputs))
    }

    fn batch_context(
        &self,
        g: &mut Graph,
        batch: &[Example],
        inputs: &[ModelInput],
        offsets: &[usize],
    ) -> Result<Option<(Var, Vec<AttnBlock>)>> {
        let with_image = batch.iter().filter(|ex| ex.image.is_some()).count();
        match (self.config.has_context(), with_image) {
            (false, 0) => return Ok(None),
            (false, _) => return Err(Error::InvalidArgument("context supplied to a model without image input".into())),
            (true, n) if n != batch.len() => {
                return Err(Error::InvalidArgument("image model needs an image for every example".into()))
            }
            _ => {}
        }
        let mut parts = Vec::with_capacity(batch.len());
        let mut blocks = Vec::with_capacity(batch.len());
        let mut c_off = 0;
        for ((ex, inp), &o) in batch.iter().zip(inputs).zip(offsets) {
            let c = self.encode_image(g, ex.image.expect("checked above"))?;
            let len = g.value(c).rows();
            parts.push(c);
            blocks.push(AttnBlock {
                q_start: o,
                q_len: inp.tokens.len() + 1,
                kv_start: c_off,
                kv_len: len,
                causal_offset: None,
            });
            c_off += len;
        }
        Ok(Some((g.concat_rows(parts)?, blocks)))
    }

    /// Logits `[n + 1, |vocab|]` over the model input of one sequence.
    pub fn forward(&self, seq: &TokenSequence, image: Option<&BinaryGrid>) -> Result<Tensor> {
        let mut g = Graph::new(&self.params);
        let (y, _) = self.forward_graph(&mut g, &[Example { tokens: seq, image }])?;
        Ok(g.value(y).clone())
    }

    /// Token-weighted mean NLL in nats over a batch, on `g`.
    pub fn loss_graph(&self, g: &mut Graph, batch: &[Example]) -> Result<Var> {
        let (logits, inputs) = self.forward_graph(g, batch)?;
        let targets = inputs
            .iter()
            .flat_map(|inp| inp.tokens.iter().map(|&t| Some(t as usize)).chain(std::iter::once(None)))
            .collect();
        g.cross_entropy(logits, targets)
    }

    /// Mean NLL of the model input in bits per token.
    pub fn nll_bits(&self, seq: &TokenSequence, image: Option<&BinaryGrid>) -> Result<f64> {
        let logits = self.forward(seq, image)?;
        loss_bits(&logits, &self.model_input(seq)?.tokens)
    }

    /// Starts incremental decoding; the first logits row is ready at once.
    pub fn decoder(&self, image: Option<&BinaryGrid>) -> Result<Decoder<'_>> {
        Decoder::new(self, image)
    }
}

/// Mean negative log-likelihood (nats) of `targets[j]` under softmax of
/// logits row `j`.
pub fn loss_nats(logits: &Tensor, targets: &[Token]) -> Result<f64> {
    if logits.rows() < targets.len() {
        return Err(Error::Shape(format!("{} logit rows for {} targets", logits.rows(), targets.len())));
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no targets".into()));
    }
    let mut total = 0.0;
    for (j, &t) in targets.iter().enumerate() {
        let row = logits.row(j);
        let t = t as usize;
        if t >= row.len() {
            return Err(Error::InvalidArgument(format!("target {t} outside vocabulary of {}", row.len())));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
    }
    Ok(total / targets.len() as f64)
}

/// [`loss_nats`] converted to bits.
pub fn loss_bits(logits: &Tensor, targets: &[Token]) -> Result<f64> {
    Ok(loss_nats(logits, targets)? * LOG2_E)
}

/// Incremental decoder that caches self-attention keys and values.
pub struct Decoder<'m> {
    model: &'m Model,
    input: ModelInput,
    self_cache: Vec<(Tensor, Tensor)>,
    cross: Vec<(Tensor, Tensor)>,
    /// Embedding rows so far (MLP variant only).
    embeddings: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl<'m> Decoder<'m> {
    fn new(model: &'m Model, image: Option<&BinaryGrid>) -> Result<Self> {
        let mut cross = Vec::new();
        match (image, &model.stack) {
            (Some(img), Stack::Decoder(layers)) => {
                let mut g = Graph::new(&model.params);
                let ctx = model.encode_image(&mut g, img)?;
                for l in layers {
                    let c = l.cross.as_ref().expect("image models have cross blocks");
                    let kv = c.attn.project_kv(&mut g, ctx)?;
                    cross.push((g.value(kv.key).clone(), g.value(kv.value).clone()));
                }
            }
            (Some(_), Stack::Mlp { .. }) => {
                return Err(Error::InvalidArgument("context supplied to a model without image input".into()))
            }
            (None, _) if model.config.has_context() => {
                return Err(Error::InvalidArgument("image model needs a context".into()))
            }
            (None, _) => {}
        }
        let e = model.config.embed_dim;
        let n_layers = if let Stack::Decoder(l) = &model.stack { l.len() } else { 0 };
        let mut d = Self {
            model,
            input: ModelInput { tokens: Vec::new(), positions: Vec::new() },
            self_cache: vec![(Tensor::zeros(&[0, e]), Tensor::zeros(&[0, e])); n_layers],
            cross,
            embeddings: Vec::new(),
            logits: Vec::new(),
        };
        d.step(EmbedRow::Start)?;
        Ok(d)
    }

    /// Logits for the next model-input token.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn input(&self) -> &ModelInput {
        &self.input
    }

    /// Flat position the next token would occupy, given its value.
    pub fn next_position(&self, t: Token) -> usize {
        let n = self.input.tokens.len();
        if self.model.config.use_opcode_tokens {
            n
        } else {
            reduced_flat_position(n, t)
        }
    }

    /// Appends a model-input token and computes the next logits row.
    pub fn push(&mut self, t: Token) -> Result<()> {
        let vocab = self.model.config.vocab();
        if t as usize >= vocab.size() {
            return Err(Error::InvalidArgument(format!("token {t} outside vocabulary")));
        }
        if !self.model.config.use_opcode_tokens && (t == MOVE || t == LINE) {
            return Err(Error::InvalidArgument("opcode token fed to a model without opcode inputs".into()));
        }
        let pos = self.next_position(t);
        if pos >= self.model.config.max_tokens() {
            return Err(Error::InvalidArgument("sequence exceeds the maximum length".into()));
        }
        self.input.tokens.push(t);
        self.input.positions.push(pos);
        self.step(EmbedRow::Token { t, pos })
    }

    fn step(&mut self, row: EmbedRow) -> Result<()> {
        let m = self.model;
        let mut g = Graph::new(&m.params);
        let mut x = m.embed_rows(&mut g, &[row])?;
        match &m.stack {
            Stack::Decoder(layers) => {
                for (li, l) in layers.iter().enumerate() {
                    let h = l.self_norm.forward(&mut g, x)?;
                    let kv = l.self_attn.project_kv(&mut g, h)?;
                    let (ck, cv) = &mut self.self_cache[li];
                    append_row(ck, g.value(kv.key));
                    append_row(cv, g.value(kv.value));
                    let n = ck.rows();
                    let kv = KeyValue { key: g.input(ck.clone()), value: g.input(cv.clone()) };
                    let block = AttnBlock { q_start: 0, q_len: 1, kv_start: 0, kv_len: n, causal_offset: None };
                    let a = l.self_attn.forward_blocks(&mut g, h, kv, vec![block])?;
                    x = residual(&mut g, x, a, l.self_alpha, 0.0)?;
                    let ctx = match self.cross.get(li) {
                        Some((k, v)) => {
                            let kv = KeyValue { key: g.input(k.clone()), value: g.input(v.clone()) };
                            let block =
                                AttnBlock { q_start: 0, q_len: 1, kv_start: 0, kv_len: k.rows(), causal_offset: None };
                            Some((kv, vec![block]))
                        }
                        None => None,
                    };
                    x = l.cross_and_ff(&mut g, x, ctx, 0.0)?;
                }
            }
            Stack::Mlp { window, layers } => {
                self.embeddings.push(g.value(x).data().to_vec());
                let j = self.embeddings.len() - 1;
                let joined: Vec<f64> =
                    window_rows(0, j, *window).flat_map(|r| self.embeddings[r].iter().copied()).collect();
                x = g.input(Tensor::new(vec![1, joined.len()], joined)?);
                for l in layers {
                    x = l.forward(&mut g, x, *window, 0.0)?;
                }
            }
        }
        let y = m.final_norm.forward(&mut g, x)?;
        let y = m.output.forward(&mut g, y)?;
        self.logits = g.value(y).data().to_vec();
        Ok(())
    }
}

fn append_row(t: &mut Tensor, row: &Tensor) {
    let cols = row.cols();
    let mut data = std::mem::replace(t, Tensor::zeros(&[0, cols])).into_data();
    data.extend_from_slice(row.data());
    *t = Tensor::new(vec![data.len() / cols, cols], data).expect("consistent width");
}

#[cfg(test)]
mod tests;
