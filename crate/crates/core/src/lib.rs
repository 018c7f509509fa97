//! Floor plans as sequences of line-drawing tokens.
//!
//! The crate converts vector floor plans into canonical segment sets,
//! extracts viewpoint-centered partial views, tokenizes them, and fits an
//! autoregressive attention decoder over the resulting token sequences. It
//! also provides sampling with nucleus filtering, the evaluation baselines,
//! and an occupancy-grid shortest-path experiment that uses sampled
//! completions to predict travel distances in unobserved space.
//!
//! Module map:
//!
//! - [`geometry`]: points, segments, spaces, and canonicalization.
//! - [`dataset`]: viewpoints, views, quantization, tokens, augmentation, splits.
//! - [`raster`]: binary rasterization of segment sets.
//! - [`nn`]: tensors, a reverse-mode tape, layers, and Adam.
//! - [`model`]: the decoder, context encoders, the windowed MLP, and training.
//! - [`infer`]: sampling, baselines, and evaluation metrics.
//! - [`distmap`]: occupancy grids, inflation, shortest paths, error statistics.

pub mod dataset;
pub mod distmap;
mod error;
pub mod geometry;
pub mod infer;
pub mod model;
pub mod nn;
pub mod raster;
pub mod rng;

pub use error::{Error, Result};

pub use dataset::{DatasetRecord, Quantizer, TokenSequence, Vocab};
pub use geometry::{CanonParams, FloorPlan, Point, Segment};
pub use model::{Model, ModelConfig};

pub use raster::{BinaryGrid, GridSpec};
