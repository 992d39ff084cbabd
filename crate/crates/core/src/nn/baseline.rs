//! Small residual CNN over the spectrogram image.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::Var;
use super::layers::{nchw_layout, BatchNorm, Conv2d, Linear};
use super::params::{BufferStore, Forward, ParamStore};
use super::tensor::Tensor;
use crate::dsp::MelSpectrogram;
use crate::error::{invalid, shape_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub n_mels: usize,
    pub n_frames: usize,
    pub stem_channels: usize,
    /// Output channels of each stage; stages after the first halve the resolution.
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub embedding_dim: usize,
    pub input_scale: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            n_mels: 128,
            n_frames: 122,
            stem_channels: 8,
            stage_channels: vec![8, 16, 32],
            blocks_per_stage: 2,
            embedding_dim: 128,
            input_scale: 0.025,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mels == 0 || self.n_frames == 0 || self.stem_channels == 0 || self.embedding_dim == 0 {
            return Err(invalid!("baseline dimensions must be positive"));
        }
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) || self.blocks_per_stage == 0 {
            return Err(invalid!("baseline needs at least one non-empty stage"));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(invalid!("input_scale must be positive"));
        }
        Ok(())
    }
}

/// conv-BN-ReLU-conv-BN plus a shortcut, then ReLU.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub shortcut: Option<(Conv2d, BatchNorm)>,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        buffers: &mut BufferStore,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let shortcut = (stride != 1 || cin != cout).then(|| {
            (
                Conv2d::new(store, &format!("{name}.shortcut"), cin, cout, 1, stride, 0, rng),
                BatchNorm::new(store, buffers, &format!("{name}.shortcut_bn"), cout),
            )
        });
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, stride, 1, rng),
            bn1: BatchNorm::new(store, buffers, &format!("{name}.bn1"), cout),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, 1, rng),
            bn2: BatchNorm::new(store, buffers, &format!("{name}.bn2"), cout),
            shortcut,
        }
    }

    pub fn forward(&self, fx: &mut Forward<'_>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(fx, x)?;
        let h = self.bn1.forward(fx, h, nchw_layout(fx.graph.shape(h)))?;
        let h = fx.graph.relu(h)?;
        let h = self.conv2.forward(fx, h)?;
        let h = self.bn2.forward(fx, h, nchw_layout(fx.graph.shape(h)))?;
        let skip = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(fx, x)?;
                bn.forward(fx, s, nchw_layout(fx.graph.shape(s)))?
            }
            None => x,
        };
        let y = fx.graph.add(h, skip)?;
        fx.graph.relu(y)
    }
}

#[derive(Debug, Clone)]
pub struct BaselineEncoder {
    pub config: BaselineConfig,
    stem: Conv2d,
    stem_bn: BatchNorm,
    blocks: Vec<ResidualBlock>,
    head: Linear,
    params: Range<usize>,
}

impl BaselineEncoder {
    pub fn new<R: Rng + ?Sized>(
        config: BaselineConfig,
        store: &mut ParamStore,
        buffers: &mut BufferStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let start = store.len();
        let stem = Conv2d::new(store, "encoder.stem", 1, config.stem_channels, 3, 2, 1, rng);
        let stem_bn = BatchNorm::new(store, buffers, "encoder.stem_bn", config.stem_channels);
        let mut blocks = Vec::new();
        let mut cin = config.stem_channels;
        for (s, &cout) in config.stage_channels.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(ResidualBlock::new(store, buffers, &format!("encoder.stage{s}.block{b}"), cin, cout, stride, rng));
                cin = cout;
            }
        }
        let head = Linear::new(store, "encoder.head", cin, config.embedding_dim, true, rng);
        Ok(Self { config, stem, stem_bn, blocks, head, params: start..store.len() })
    }

    pub fn param_range(&self) -> Range<usize> {
        self.params.clone()
    }

    /// `[B, 1, n_mels, n_frames]` input.
    pub fn input_tensor(&self, specs: &[&MelSpectrogram]) -> Result<Tensor> {
        let (m, t) = (self.config.n_mels, self.config.n_frames);
        let mut data = Vec::with_capacity(specs.len() * m * t);
        for s in specs {
            if s.n_mels != m || s.n_frames != t {
                return Err(shape_err!("spectrogram {}x{} vs encoder {m}x{t}", s.n_mels, s.n_frames));
            }
            data.extend(s.values.iter().map(|v| v * self.config.input_scale));
        }
        Tensor::new(vec![specs.len(), 1, m, t], data)
    }

    pub fn forward(&self, fx: &mut Forward<'_>, input: Var) -> Result<Var> {
        let shape = fx.graph.shape(input);
        if shape.len() != 4 || shape[1] != 1 || shape[2] != self.config.n_mels || shape[3] != self.config.n_frames {
            return Err(shape_err!(
                "baseline expects [B, 1, {}, {}], got {shape:?}",
                self.config.n_mels,
                self.config.n_frames
            ));
        }
        let h = self.stem.forward(fx, input)?;
        let h = self.stem_bn.forward(fx, h, nchw_layout(fx.graph.shape(h)))?;
        let mut h = fx.graph.relu(h)?;
        for block in &self.blocks {
            h = block.forward(fx, h)?;
        }
        let pooled = fx.graph.global_avg_pool(h)?;
        self.head.forward(fx, pooled)
    }
}
