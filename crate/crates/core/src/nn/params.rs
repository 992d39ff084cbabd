use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Index of a tensor in a [`TensorStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

/// Trainable parameters.
pub type ParamStore = TensorStore;
/// Non-trainable state such as batch-norm running statistics.
pub type BufferStore = TensorStore;

impl TensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = &mut self.values[id.0];
        if cur.shape() != value.shape() {
            return Err(shape_err!("{}: {:?} vs {:?}", self.names[id.0], cur.shape(), value.shape()));
        }
        *cur = value;
        Ok(())
    }

    /// Total scalar count of the tensors in `range`.
    pub fn numel(&self, range: Range<usize>) -> usize {
        self.values[range].iter().map(Tensor::numel).sum()
    }

    pub fn total_numel(&self) -> usize {
        self.numel(0..self.len())
    }

    /// Adds every tensor as a leaf; the result is indexed by `ParamId.0`.
    pub fn bind(&self, graph: &mut Graph) -> Result<Vec<Var>> {
        self.values.iter().map(|v| graph.leaf(v.clone())).collect()
    }
}

/// Kaiming-uniform weights: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = libm::sqrt(6.0 / fan_in.max(1) as f64);
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

/// Everything a layer needs during a forward pass.
pub struct Forward<'a> {
    pub graph: &'a mut Graph,
    /// Parameter leaves indexed by `ParamId.0`.
    pub params: &'a [Var],
    pub buffers: &'a mut BufferStore,
    /// Batch norm uses batch statistics and updates running ones.
    pub train: bool,
}

impl Forward<'_> {
    pub fn p(&self, id: ParamId) -> Var {
        self.params[id.0]
    }
}
