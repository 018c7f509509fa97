use serde::{Deserialize, Serialize};

use crate::dataset::{Vocab, TOKENS_PER_SEGMENT};
use crate::raster::GridSpec;
use crate::{Error, Result};

/// Image encoder feeding the cross-attention sub-blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextKind {
    #[default]
    None,
    Resnet,
    Mixer,
}

/// Layer stack: attention decoder or the sliding-window MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    #[default]
    Decoder,
    Mlp { window: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// ResNet channels of the first two stages; the third uses the embedding width.
    pub resnet_channels: [usize; 2],
    pub mixer_patch: usize,
    pub mixer_blocks: usize,
    pub mixer_token_hidden: usize,
    /// Channel-mixing hidden width; `None` means twice the embedding width.
    pub mixer_channel_hidden: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { resnet_channels: [32, 64], mixer_patch: 8, mixer_blocks: 4, mixer_token_hidden: 256, mixer_channel_hidden: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_q: usize,
    /// Maximum segments per sequence; sizes the index table and `max_tokens`.
    pub n_segs: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width; `None` means four times the embedding width.
    pub n_fc: Option<usize>,
    pub dropout: f64,
    pub use_opcode_tokens: bool,
    pub use_position_embeddings: bool,
    pub context: ContextKind,
    pub arch: Arch,
    /// Leading segments drawn into the conditioning image.
    pub n_raster: usize,
    pub grid: GridSpec,
    pub encoder: EncoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_q: 256,
            n_segs: 100,
            embed_dim: 512,
            layers: 6,
            heads: 8,
            n_fc: None,
            dropout: 0.6,
            use_opcode_tokens: true,
            use_position_embeddings: true,
            context: ContextKind::None,
            arch: Arch::Decoder,
            n_raster: 25,
            grid: GridSpec::CONDITIONING,
            encoder: EncoderConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Small configuration used for CPU-scale experiments.
    pub fn desk_scale() -> Self {
        Self { embed_dim: 64, dropout: 0.0, ..Self::default() }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.n_q)
    }

    pub fn fc_width(&self) -> usize {
        self.n_fc.unwrap_or(4 * self.embed_dim)
    }

    pub fn channel_hidden(&self) -> usize {
        self.encoder.mixer_channel_hidden.unwrap_or(2 * self.embed_dim)
    }

    /// Rows of the triplet-index table.
    pub fn i_max(&self) -> usize {
        2 * self.n_segs + 1
    }

    pub fn max_tokens(&self) -> usize {
        TOKENS_PER_SEGMENT * self.n_segs + 1
    }

    pub fn has_context(&self) -> bool {
        self.context != ContextKind::None
    }

    /// Rows of the context embedding for the configured encoder.
    pub fn context_len(&self) -> usize {
        match self.context {
            ContextKind::None => 0,
            ContextKind::Resnet => stride_out(self.grid.height_px, 3) * stride_out(self.grid.width_px, 3),
            ContextKind::Mixer => {
                (self.grid.height_px / self.encoder.mixer_patch) * (self.grid.width_px / self.encoder.mixer_patch)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_q == 0 || self.n_segs == 0 || self.embed_dim == 0 || self.fc_width() == 0 {
            return bad("sizes must be positive".into());
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!("embedding width {} not divisible by {} heads", self.embed_dim, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        if let Arch::Mlp { window } = self.arch {
            if window == 0 {
                return bad("MLP window must be at least 1".into());
            }
            if self.has_context() {
                return bad("the MLP variant takes no image context".into());
            }
        }
        self.grid.validate()?;
        match self.context {
            ContextKind::Mixer => {
                let p = self.encoder.mixer_patch;
                if p == 0 || !self.grid.width_px.is_multiple_of(p) || !self.grid.height_px.is_multiple_of(p) {
                    return bad(format!("grid {}x{} not divisible by patch {p}", self.grid.width_px, self.grid.height_px));
                }
            }
            ContextKind::Resnet => {
                if self.encoder.resnet_channels.contains(&0) {
                    return bad("ResNet channels must be positive".into());
                }
            }
            ContextKind::None => {}
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

/// Output size after `stages` stride-2, padding-1, 3x3 convolutions.
pub(crate) fn stride_out(mut n: usize, stages: usize) -> usize {
    for _ in 0..stages {
        n = (n - 1) / 2 + 1;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_sizes() {
        let c = ModelConfig::default();
        assert_eq!((c.i_max(), c.max_tokens(), c.vocab().size(), c.fc_width()), (201, 601, 259, 2048));
        assert_eq!(ModelConfig { context: ContextKind::Resnet, ..c.clone() }.context_len(), 256);
        assert_eq!(ModelConfig { context: ContextKind::Mixer, ..c }.context_len(), 256);
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let c = ModelConfig { arch: Arch::Mlp { window: 10 }, ..ModelConfig::desk_scale() };
        assert_eq!(ModelConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(ModelConfig::from_json(r#"{"embed_dim": 10, "heads": 4}"#).is_err());
        assert!(ModelConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let mlp_ctx = ModelConfig { arch: Arch::Mlp { window: 3 }, context: ContextKind::Resnet, ..c };
        assert!(mlp_ctx.validate().is_err());
    }
}
