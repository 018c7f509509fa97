//! Image encoders producing the context embedding `[N_H * N_W, E]`.

use super::config::{ContextKind, ModelConfig};
use crate::nn::{normal_tensor, Dense, Graph, LayerNorm, ParamId, ParamStore, Tensor, Var};
use crate::raster::BinaryGrid;
use crate::rng::Rng;
use crate::{Error, Result};

/// `k x k` convolution over a channels-last image, as im2col + dense.
#[derive(Debug, Clone, Copy)]
struct Conv {
    dense: Dense,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self { dense: Dense::new(store, name, k * k * cin, cout, rng)?, k, stride, pad: k / 2 })
    }

    fn forward(&self, g: &mut Graph, x: Var, h: usize, w: usize) -> Result<(Var, usize, usize)> {
        let cols = g.im2col(x, h, w, self.k, self.stride, self.pad)?;
        let oh = (h + 2 * self.pad - self.k) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.k) / self.stride + 1;
        Ok((self.dense.forward(g, cols)?, oh, ow))
    }
}

/// Pre-activation residual block: `conv(relu(conv(relu(x)))) + shortcut(x)`.
#[derive(Debug, Clone, Copy)]
struct ResBlock {
    conv1: Conv,
    conv2: Conv,
    shortcut: Option<Conv>,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut Rng) -> Result<Self> {
        let shortcut = if stride != 1 || cin != cout {
            Some(Conv::new(store, &format!("{name}.skip"), cin, cout, 1, stride, rng)?)
        } else {
            None
        };
        Ok(Self {
            conv1: Conv::new(store, &format!("{name}.conv1"), cin, cout, 3, stride, rng)?,
            conv2: Conv::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, rng)?,
            shortcut,
        })
    }

    fn forward(&self, g: &mut Graph, x: Var, h: usize, w: usize) -> Result<(Var, usize, usize)> {
        let a = g.relu(x);
        let (y, oh, ow) = self.conv1.forward(g, a, h, w)?;
        let y = g.relu(y);
        let (y, _, _) = self.conv2.forward(g, y, oh, ow)?;
        let skip = match &self.shortcut {
            Some(c) => c.forward(g, x, h, w)?.0,
            None => x,
        };
        Ok((g.add(y, skip)?, oh, ow))
    }
}

#[derive(Debug, Clone)]
pub struct ResNetEncoder {
    stem: Conv,
    blocks: Vec<ResBlock>,
    proj: Dense,
}

impl ResNetEncoder {
    fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let [c1, c2] = cfg.encoder.resnet_channels;
        let e = cfg.embed_dim;
        let stem = Conv::new(store, "ctx.stem", 1, c1, 3, 1, rng)?;
        let mut blocks = Vec::new();
        let mut cin = c1;
        for (s, cout) in [c1, c2, e].into_iter().enumerate() {
            blocks.push(ResBlock::new(store, &format!("ctx.stage{s}.block0"), cin, cout, 2, rng)?);
            blocks.push(ResBlock::new(store, &format!("ctx.stage{s}.block1"), cout, cout, 1, rng)?);
            cin = cout;
        }
        let proj = Dense::new(store, "ctx.proj", e, e, rng)?;
        Ok(Self { stem, blocks, proj })
    }

    fn forward(&self, g: &mut Graph, x: Var, h: usize, w: usize) -> Result<(Var, usize, usize)> {
        let (mut y, mut h, mut w) = self.stem.forward(g, x, h, w)?;
        for b in &self.blocks {
            (y, h, w) = b.forward(g, y, h, w)?;
        }
        let y = g.relu(y);
        Ok((self.proj.forward(g, y)?, h, w))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MixerBlock {
    pub token_norm: LayerNorm,
    pub token1: Dense,
    pub token2: Dense,
    pub channel_norm: LayerNorm,
    pub channel1: Dense,
    pub channel2: Dense,
}

impl MixerBlock {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = self.token_norm.forward(g, x)?;
        let y = g.transpose(y)?;
        let y = self.token1.forward(g, y)?;
        let y = g.relu(y);
        let y = self.token2.forward(g, y)?;
        let y = g.transpose(y)?;
        let x = g.add(x, y)?;
        let y = self.channel_norm.forward(g, x)?;
        let y = self.channel1.forward(g, y)?;
        let y = g.relu(y);
        let y = self.channel2.forward(g, y)?;
        g.add(x, y)
    }
}

#[derive(Debug, Clone)]
pub struct MixerEncoder {
    pub patch: usize,
    pub embed: Dense,
    pub blocks: Vec<MixerBlock>,
    pub norm: LayerNorm,
}

impl MixerEncoder {
    fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let p = cfg.encoder.mixer_patch;
        let e = cfg.embed_dim;
        let tokens = cfg.context_len();
        let (th, ch) = (cfg.encoder.mixer_token_hidden, cfg.channel_hidden());
        let embed = Dense::new(store, "ctx.patch", p * p, e, rng)?;
        let mut blocks = Vec::new();
        for b in 0..cfg.encoder.mixer_blocks {
            let n = format!("ctx.mixer{b}");
            blocks.push(MixerBlock {
                token_norm: LayerNorm::new(store, &format!("{n}.token_ln"), e)?,
                token1: Dense::new(store, &format!("{n}.token1"), tokens, th, rng)?,
                token2: Dense::new(store, &format!("{n}.token2"), th, tokens, rng)?,
                channel_norm: LayerNorm::new(store, &format!("{n}.channel_ln"), e)?,
                channel1: Dense::new(store, &format!("{n}.channel1"), e, ch, rng)?,
                channel2: Dense::new(store, &format!("{n}.channel2"), ch, e, rng)?,
            });
        }
        let norm = LayerNorm::new(store, "ctx.mixer_ln", e)?;
        Ok(Self { patch: p, embed, blocks, norm })
    }

    fn forward(&self, g: &mut Graph, x: Var, h: usize, w: usize) -> Result<(Var, usize, usize)> {
        let p = self.patch;
        if !h.is_multiple_of(p) || !w.is_multiple_of(p) {
            return Err(Error::Shape(format!("image {h}x{w} not divisible by patch {p}")));
        }
        let patches = g.im2col(x, h, w, p, p, 0)?;
        let mut y = self.embed.forward(g, patches)?;
        for b in &self.blocks {
            y = b.forward(g, y)?;
        }
        Ok((self.norm.forward(g, y)?, h / p, w / p))
    }
}

#[derive(Debug, Clone)]
pub enum EncoderBody {
    ResNet(ResNetEncoder),
    Mixer(MixerEncoder),
}

/// Encoder body plus the learned `2 x E` coordinate embedding.
#[derive(Debug, Clone)]
pub struct ContextEncoder {
    pub body: EncoderBody,
    pub coord: ParamId,
    spec: crate::raster::GridSpec,
}

impl ContextEncoder {
    pub(crate) fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) -> Result<Option<Self>> {
        let body = match cfg.context {
            ContextKind::None => return Ok(None),
            ContextKind::Resnet => EncoderBody::ResNet(ResNetEncoder::new(store, cfg, rng)?),
            ContextKind::Mixer => EncoderBody::Mixer(MixerEncoder::new(store, cfg, rng)?),
        };
        let std = (2.0 / (2 + cfg.embed_dim) as f64).sqrt();
        let coord = store.add("ctx.coord", normal_tensor(&[2, cfg.embed_dim], std, rng))?;
        Ok(Some(Self { body, coord, spec: cfg.grid }))
    }

    /// Context embedding of one image, `[N_H * N_W, E]`.
    pub fn encode(&self, g: &mut Graph, img: &BinaryGrid) -> Result<Var> {
        if img.spec() != self.spec {
            return Err(Error::Shape(format!("image {:?} does not match encoder grid {:?}", img.spec(), self.spec)));
        }
        let (h, w) = (img.height(), img.width());
        let pixels = Tensor::new(vec![h * w, 1], img.cells.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
        let x = g.input(pixels);
        let (y, fh, fw) = match &self.body {
            EncoderBody::ResNet(r) => r.forward(g, x, h, w)?,
            EncoderBody::Mixer(m) => m.forward(g, x, h, w)?,
        };
        let pos = g.input(coordinate_grid(fh, fw));
        let c = g.param(self.coord);
        let pe = g.matmul(pos, c)?;
        g.add(y, pe)
    }
}

/// Feature-cell centers as `(row, col)` normalized to `[-1, 1]`, row-major.
pub fn coordinate_grid(h: usize, w: usize) -> Tensor {
    let norm = |i: usize, n: usize| 2.0 * (i as f64 + 0.5) / n as f64 - 1.0;
    let mut data = Vec::with_capacity(h * w * 2);
    for r in 0..h {
        for c in 0..w {
            data.extend([norm(r, h), norm(c, w)]);
        }
    }
    Tensor::new(vec![h * w, 2], data).expect("consistent shape")
}
