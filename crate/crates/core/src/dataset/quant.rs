use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Affine map between local metric coordinates and bins `1..=n_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Quantizer {
    pub lo: f64,
    pub hi: f64,
    pub n_q: usize,
}

impl Default for Quantizer {
    fn default() -> Self {
        Self { lo: -10.0, hi: 10.0, n_q: 256 }
    }
}

impl Quantizer {
    pub fn new(lo: f64, hi: f64, n_q: usize) -> Result<Self> {
        let q = Self { lo, hi, n_q };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || self.n_q == 0 || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid quantizer {self:?}")));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.n_q as f64
    }

    /// Bin index in `1..=n_q`; out-of-range input is clamped.
    pub fn quantize(&self, x: f64) -> usize {
        let t = ((x - self.lo) / (self.hi - self.lo) * self.n_q as f64).floor();
        let i = if t.is_nan() { 0.0 } else { t.clamp(0.0, (self.n_q - 1) as f64) };
        1 + i as usize
    }

    /// Center of bin `i`.
    pub fn dequantize(&self, i: usize) -> Result<f64> {
        if i == 0 || i > self.n_q {
            return Err(Error::InvalidArgument(format!("bin {i} outside 1..={}", self.n_q)));
        }
        Ok(self.lo + (i as f64 - 0.5) * self.bin_width())
    }
}
