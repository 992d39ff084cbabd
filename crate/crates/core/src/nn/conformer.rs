//! Conformer encoder.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::Var;
use super::layers::{channels_last_layout, BatchNorm, DepthwiseConv1d, LayerNorm, Linear};
use super::params::{BufferStore, Forward, ParamStore};
use super::tensor::Tensor;
use crate::dsp::MelSpectrogram;
use crate::error::{invalid, shape_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_mels: usize,
    pub n_frames: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub conv_kernel: usize,
    pub ffn_dim: usize,
    pub n_blocks: usize,
    /// The head flattens `n_frames x model_dim` when it equals this value,
    /// otherwise it mean-pools over time.
    pub flatten_dim: usize,
    pub embedding_dim: usize,
    /// Multiplies dB spectrogram values on the way in.
    pub input_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_mels: 128,
            n_frames: 122,
            model_dim: 64,
            n_heads: 4,
            conv_kernel: 31,
            ffn_dim: 256,
            n_blocks: 2,
            flatten_dim: 2048,
            embedding_dim: 128,
            input_scale: 0.025,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.n_mels, self.n_frames, self.model_dim, self.n_heads, self.ffn_dim, self.embedding_dim];
        if dims.contains(&0) {
            return Err(invalid!("encoder dimensions must be positive: {self:?}"));
        }
        if self.model_dim % self.n_heads != 0 {
            return Err(invalid!("model_dim {} is not divisible by {} heads", self.model_dim, self.n_heads));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(invalid!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(invalid!("input_scale must be positive"));
        }
        Ok(())
    }

    pub fn flattens(&self) -> bool {
        self.n_frames * self.model_dim == self.flatten_dim
    }
}

/// Half-step feed-forward module body: LN, expand, swish, project.
#[derive(Debug, Clone)]
pub struct FeedForward {
    norm: LayerNorm,
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, rng),
        }
    }

    fn forward(&self, fx: &mut Forward<'_>, x: Var) -> Result<Var> {
        let h = self.norm.forward(fx, x)?;
        let h = self.up.forward(fx, h)?;
        let h = fx.graph.swish(h)?;
        self.down.forward(fx, h)
    }
}

/// Multi-head self-attention with a packed query/key/value projection.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(invalid!("model_dim {dim} is not divisible by {heads} heads"));
        }
        Ok(Self {
            qkv: Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, true, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, true, rng),
            heads,
        })
    }

    /// Returns the output and the attention node (for its weights).
    pub fn forward_with_weights(&self, fx: &mut Forward<'_>, x: Var) -> Result<(Var, Var)> {
        let qkv = self.qkv.forward(fx, x)?;
        let att = fx.graph.attention(qkv, self.heads)?;
        Ok((self.out.forward(fx, att)?, att))
    }

    pub fn forward(&self, fx: &mut Forward<'_>, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(fx, x)?.0)
    }
}

/// Pointwise expand, GLU, depthwise conv, batch norm, swish, pointwise.
#[derive(Debug, Clone)]
pub struct ConvModule {
    norm: LayerNorm,
    pw_in: Linear,
    depthwise: DepthwiseConv1d,
    bn: BatchNorm,
    pw_out: Linear,
}

impl ConvModule {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        buffers: &mut BufferStore,
        name: &str,
        dim: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            pw_in: Linear::new(store, &format!("{name}.pw_in"), dim, 2 * dim, true, rng),
            depthwise: DepthwiseConv1d::new(store, &format!("{name}.depthwise"), kernel, dim, rng)?,
            bn: BatchNorm::new(store, buffers, &format!("{name}.bn"), dim),
            pw_out: Linear::new(store, &format!("{name}.pw_out"), dim, dim, true, rng),
        })
    }

    fn forward(&self, fx: &mut Forward<'_>, x: Var) -> Result<Var> {
        let h = self.norm.forward(fx, x)?;
        let h = self.pw_in.forward(fx, h)?;
        let h = fx.graph.glu(h)?;
        let h = self.depthwise.forward(fx, h)?;
        let layout = channels_last_layout(fx.graph.shape(h));
        let h = self.bn.forward(fx, h, layout)?;
        let h = fx.graph.swish(h)?;
        self.pw_out.forward(fx, h)
    }
}

#[derive(Debug, Clone)]
pub struct ConformerBlock {
    ff1: FeedForward,
    norm_att: LayerNorm,
    attention: MultiHeadAttention,
    conv: ConvModule,
    ff2: FeedForward,
    norm_out: LayerNorm,
}

impl ConformerBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        buffers: &mut BufferStore,
        name: &str,
        config: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.model_dim;
        Ok(Self {
            ff1: FeedForward::new(store, &format!("{name}.ff1"), d, config.ffn_dim, rng),
            norm_att: LayerNorm::new(store, &format!("{name}.attention.norm"), d),
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), d, config.n_heads, rng)?,
            conv: ConvModule::new(store, buffers, &format!("{name}.conv"), d, config.conv_kernel, rng)?,
            ff2: FeedForward::new(store, &format!("{name}.ff2"), d, config.ffn_dim, rng),
            norm_out: LayerNorm::new(store, &format!("{name}.norm"), d),
        })
    }

    /// `x: [B, T, D]` to the same shape.
    pub fn forward(&self, fx: &mut Forward<'_>, x: Var) -> Result<Var> {
        let h = self.ff1.forward(fx, x)?;
        let h = fx.graph.scale(h, 0.5)?;
        let x = fx.graph.add(x, h)?;

        let h = self.norm_att.forward(fx, x)?;
        let h = self.attention.forward(fx, h)?;
        let x = fx.graph.add(x, h)?;

        let h = self.conv.forward(fx, x)?;
        let x = fx.graph.add(x, h)?;

        let h = self.ff2.forward(fx, x)?;
        let h = fx.graph.scale(h, 0.5)?;
        let x = fx.graph.add(x, h)?;
        self.norm_out.forward(fx, x)
    }
}

#[derive(Debug, Clone)]
pub struct ConformerEncoder {
    pub config: EncoderConfig,
    frontend: Linear,
    blocks: Vec<ConformerBlock>,
    head: Linear,
    params: Range<usize>,
}

impl ConformerEncoder {
    pub fn new<R: Rng + ?Sized>(
        config: EncoderConfig,
        store: &mut ParamStore,
        buffers: &mut BufferStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let start = store.len();
        let d = config.model_dim;
        let frontend = Linear::new(store, "encoder.frontend", config.n_mels, d, true, rng);
        let blocks = (0..config.n_blocks)
            .map(|i| ConformerBlock::new(store, buffers, &format!("encoder.block{i}"), &config, rng))
            .collect::<Result<Vec<_>>>()?;
        let head_in = if config.flattens() { config.flatten_dim } else { d };
        let head = Linear::new(store, "encoder.head", head_in, config.embedding_dim, true, rng);
        Ok(Self { config, frontend, blocks, head, params: start..store.len() })
    }

    pub fn param_range(&self) -> Range<usize> {
        self.params.clone()
    }

    /// `[B, n_frames, n_mels]` input, frames as rows.
    pub fn input_tensor(&self, specs: &[&MelSpectrogram]) -> Result<Tensor> {
        let (m, t) = (self.config.n_mels, self.config.n_frames);
        let mut data = Vec::with_capacity(specs.len() * m * t);
        for s in specs {
            if s.n_mels != m || s.n_frames != t {
                return Err(shape_err!("spectrogram {}x{} vs encoder {m}x{t}", s.n_mels, s.n_frames));
            }
            for f in 0..t {
                data.extend((0..m).map(|k| s.values[k * t + f] * self.config.input_scale));
            }
        }
        Tensor::new(alloc::vec![specs.len(), t, m], data)
    }

    /// `[B, n_frames, n_mels]` to `[B, embedding_dim]`.
    pub fn forward(&self, fx: &mut Forward<'_>, input: Var) -> Result<Var> {
        let shape = fx.graph.shape(input);
        if shape.len() != 3 || shape[1] != self.config.n_frames || shape[2] != self.config.n_mels {
            return Err(shape_err!(
                "encoder expects [B, {}, {}], got {shape:?}",
                self.config.n_frames,
                self.config.n_mels
            ));
        }
        let mut x = self.frontend.forward(fx, input)?;
        for block in &self.blocks {
            x = block.forward(fx, x)?;
        }
        let pooled = if self.config.flattens() { fx.graph.flatten(x)? } else { fx.graph.mean_pool_time(x)? };
        self.head.forward(fx, pooled)
    }
}
