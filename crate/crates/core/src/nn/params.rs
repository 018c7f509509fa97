use std::collections::HashMap;

use rand_distr::{Distribution, Normal};

use super::Tensor;
use crate::rng::Rng;
use crate::{Error, Result};

/// Handle to a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
}

/// Named parameter tensors in registration order, with gradient slots.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: HashMap<String, usize>,
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub(crate) grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter `{name}`")));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(Entry { name, value, grad: None });
        Ok(ParamId(id))
    }

    /// Weight matrix `fan_in x fan_out` drawn with variance `2 / (fan_in + fan_out)`.
    pub fn add_dense_weight(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<ParamId> {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        self.add(name, normal_tensor(&[fan_in, fan_out], std, rng))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.entries[id.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Adds `scale * grads` into the gradient slots.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        if grads.grads.len() != self.entries.len() {
            return Err(Error::Shape("gradient count does not match parameter count".into()));
        }
        for (e, g) in self.entries.iter_mut().zip(&grads.grads) {
            if g.shape() != e.value.shape() {
                return Err(Error::Shape(format!("gradient shape mismatch for `{}`", e.name)));
            }
            let slot = e.grad.get_or_insert_with(|| Tensor::zeros(e.value.shape()));
            for (s, v) in slot.data_mut().iter_mut().zip(g.data()) {
                *s += scale * v;
            }
        }
        Ok(())
    }

    pub fn set_grad(&mut self, id: ParamId, g: Tensor) -> Result<()> {
        if g.shape() != self.entries[id.0].value.shape() {
            return Err(Error::Shape(format!("gradient shape mismatch for `{}`", self.entries[id.0].name)));
        }
        self.entries[id.0].grad = Some(g);
        Ok(())
    }
}

pub(crate) fn normal_tensor(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("sized")
}
