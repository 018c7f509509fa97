//! Dense tensors, a reverse-mode tape, neural building blocks, and Adam.

mod adam;
pub mod checkpoint;
mod graph;
mod layers;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use graph::{AttnBlock, Graph, Var, LAYERNORM_EPS};
pub use layers::{dropout, softmax, softmax_rows, Dense, KeyValue, LayerNorm, MultiHeadAttention};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
pub(crate) use params::normal_tensor;
