use alloc::format;

use rand::Rng;

use super::graph::Var;
use super::params::{kaiming_uniform, BufferStore, Forward, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{invalid, Result};

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.weight"), kaiming_uniform(&[fan_in, fan_out], fan_in, rng));
        let b = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, fx: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (w, b) = (fx.p(self.w), self.b.map(|b| fx.p(b)));
        fx.graph.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, fx: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (g, b) = (fx.p(self.gamma), fx.p(self.beta));
        fx.graph.layer_norm(x, g, b, NORM_EPS)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, buffers: &mut BufferStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: buffers.add(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: buffers.add(format!("{name}.running_var"), Tensor::full(&[channels], 1.0)),
        }
    }

    /// `layout` is `[outer, channels, inner]`.
    pub fn forward(&self, fx: &mut Forward<'_>, x: Var, layout: [usize; 3]) -> Result<Var> {
        let (g, b) = (fx.p(self.gamma), fx.p(self.beta));
        if fx.train {
            let (y, stats) = fx.graph.batch_norm_train(x, g, b, layout, NORM_EPS)?;
            for (id, batch) in [(self.running_mean, &stats.mean), (self.running_var, &stats.var)] {
                for (r, v) in fx.buffers.get_mut(id).data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
                }
            }
            Ok(y)
        } else {
            let mean = fx.buffers.get(self.running_mean).data();
            let var = fx.buffers.get(self.running_var).data();
            fx.graph.batch_norm_eval(x, g, b, layout, NORM_EPS, mean, var)
        }
    }
}

/// Depthwise convolution over time on `[B, T, C]`.
#[derive(Debug, Clone)]
pub struct DepthwiseConv1d {
    pub w: ParamId,
    pub b: ParamId,
}

impl DepthwiseConv1d {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, kernel: usize, channels: usize, rng: &mut R) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(invalid!("depthwise kernel size must be odd, got {kernel}"));
        }
        Ok(Self {
            w: store.add(format!("{name}.weight"), kaiming_uniform(&[kernel, channels], kernel, rng)),
            b: store.add(format!("{name}.bias"), Tensor::zeros(&[channels])),
        })
    }

    pub fn forward(&self, fx: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (w, b) = (fx.p(self.w), fx.p(self.b));
        fx.graph.depthwise_conv1d(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * kernel * kernel;
        Self {
            w: store.add(format!("{name}.weight"), kaiming_uniform(&[cout, cin, kernel, kernel], fan_in, rng)),
            b: store.add(format!("{name}.bias"), Tensor::zeros(&[cout])),
            stride,
            pad,
        }
    }

    pub fn forward(&self, fx: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (w, b) = (fx.p(self.w), fx.p(self.b));
        fx.graph.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Batch norm over the channel axis of `[B, C, H, W]`.
pub(crate) fn nchw_layout(shape: &[usize]) -> [usize; 3] {
    match shape {
        [b, c, h, w] => [*b, *c, h * w],
        _ => [1, shape.iter().product(), 1],
    }
}

/// Batch norm over the last axis of `[..., C]`.
pub(crate) fn channels_last_layout(shape: &[usize]) -> [usize; 3] {
    let c = shape.last().copied().unwrap_or(1);
    [shape.iter().product::<usize>() / c.max(1), c, 1]
}
