//! Reverse-mode tensor substrate and the encoder, expander and baseline models.

mod baseline;
mod conformer;
mod expander;
pub(crate) mod gemm;
pub mod gradcheck;
mod graph;
mod layers;
mod params;
mod tensor;

use alloc::string::String;
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use baseline::{BaselineConfig, BaselineEncoder, ResidualBlock};
pub use conformer::{ConformerBlock, ConformerEncoder, EncoderConfig, MultiHeadAttention};
pub use expander::{Activation, Expander, ExpanderConfig};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use layers::{BatchNorm, Conv2d, DepthwiseConv1d, LayerNorm, Linear, BN_MOMENTUM, NORM_EPS};
pub use params::{kaiming_uniform, BufferStore, Forward, ParamId, ParamStore, TensorStore};
pub use tensor::Tensor;

use crate::dsp::MelSpectrogram;
use crate::error::Result;

/// Encoder architecture selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EncoderSpec {
    Conformer(EncoderConfig),
    Baseline(BaselineConfig),
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self::Conformer(EncoderConfig::default())
    }
}

impl EncoderSpec {
    pub fn embedding_dim(&self) -> usize {
        match self {
            Self::Conformer(c) => c.embedding_dim,
            Self::Baseline(c) => c.embedding_dim,
        }
    }

    pub fn set_embedding_dim(&mut self, dim: usize) {
        match self {
            Self::Conformer(c) => c.embedding_dim = dim,
            Self::Baseline(c) => c.embedding_dim = dim,
        }
    }

    pub fn input_dims(&self) -> (usize, usize) {
        match self {
            Self::Conformer(c) => (c.n_mels, c.n_frames),
            Self::Baseline(c) => (c.n_mels, c.n_frames),
        }
    }

    pub fn name(&self) -> String {
        String::from(match self {
            Self::Conformer(_) => "conformer",
            Self::Baseline(_) => "baseline",
        })
    }
}

#[derive(Debug, Clone)]
pub enum Encoder {
    Conformer(ConformerEncoder),
    Baseline(BaselineEncoder),
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        spec: &EncoderSpec,
        store: &mut ParamStore,
        buffers: &mut BufferStore,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match spec {
            EncoderSpec::Conformer(c) => Self::Conformer(ConformerEncoder::new(c.clone(), store, buffers, rng)?),
            EncoderSpec::Baseline(c) => Self::Baseline(BaselineEncoder::new(c.clone(), store, buffers, rng)?),
        })
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            Self::Conformer(e) => e.config.embedding_dim,
            Self::Baseline(e) => e.config.embedding_dim,
        }
    }

    pub fn param_range(&self) -> Range<usize> {
        match self {
            Self::Conformer(e) => e.param_range(),
            Self::Baseline(e) => e.param_range(),
        }
    }

    pub fn input_tensor(&self, specs: &[&MelSpectrogram]) -> Result<Tensor> {
        match self {
            Self::Conformer(e) => e.input_tensor(specs),
            Self::Baseline(e) => e.input_tensor(specs),
        }
    }

    pub fn forward(&self, fx: &mut Forward<'_>, input: Var) -> Result<Var> {
        match self {
            Self::Conformer(e) => e.forward(fx, input),
            Self::Baseline(e) => e.forward(fx, input),
        }
    }
}

/// Number of trainable scalars in the parameters `range` of `store`.
pub fn parameter_count(store: &ParamStore, range: Range<usize>) -> usize {
    store.numel(range)
}
