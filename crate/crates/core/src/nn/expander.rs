use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::Var;
use super::layers::Linear;
use super::params::{Forward, ParamStore};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Swish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpanderConfig {
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Default for ExpanderConfig {
    fn default() -> Self {
        Self { hidden_dim: 512, output_dim: 512, activation: Activation::Relu }
    }
}

/// Two-layer MLP applied to embeddings during self-supervised training.
#[derive(Debug, Clone)]
pub struct Expander {
    pub config: ExpanderConfig,
    l1: Linear,
    l2: Linear,
    params: Range<usize>,
}

impl Expander {
    pub fn new<R: Rng + ?Sized>(
        config: ExpanderConfig,
        input_dim: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || config.hidden_dim == 0 || config.output_dim == 0 {
            return Err(invalid!("expander dimensions must be positive"));
        }
        let start = store.len();
        let l1 = Linear::new(store, "expander.l1", input_dim, config.hidden_dim, true, rng);
        let l2 = Linear::new(store, "expander.l2", config.hidden_dim, config.output_dim, true, rng);
        Ok(Self { config, l1, l2, params: start..store.len() })
    }

    pub fn param_range(&self) -> Range<usize> {
        self.params.clone()
    }

    pub fn forward(&self, fx: &mut Forward<'_>, x: Var) -> Result<Var> {
        let h = self.l1.forward(fx, x)?;
        let h = match self.config.activation {
            Activation::Relu => fx.graph.relu(h)?,
            Activation::Swish => fx.graph.swish(h)?,
        };
        self.l2.forward(fx, h)
    }
}
