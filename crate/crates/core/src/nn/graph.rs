//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value; `backward` walks the
//! tape in reverse, so creation order is a valid topological order.

use alloc::vec;
use alloc::vec::Vec;

use super::gemm::{gemm, View};
use super::tensor::Tensor;
use crate::error::{invalid, shape_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Swish(Var),
    Glu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, layout: [usize; 3], xhat: Vec<f64>, rstd: Vec<f64>, batch_stats: bool },
    DepthwiseConv1d { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    MeanAxis { x: Var, layout: [usize; 3] },
    Reshape(Var),
    Attention { qkv: Var, heads: usize, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Per-channel statistics of a training-mode batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when the leaf did not influence the seeds.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{op}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn accumulate<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// `[B, T, C]` view of a tensor with at least 3 axes.
fn btc(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [b, t, c] => Ok((*b, *t, *c)),
        _ => Err(shape_err!("expected [batch, time, channels], got {shape:?}")),
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if size + 2 * pad < k {
        return Err(shape_err!("kernel {k} larger than padded input {}", size + 2 * pad));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one image `[cin, h, w]` into `[cin*kh*kw, oh*ow]`.
    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let n = self.out_len();
        for c in 0..self.cin {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * n;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            cols[row + oy * self.ow + ox] = if iy >= 0
                                && (iy as usize) < self.h
                                && ix >= 0
                                && (ix as usize) < self.w
                            {
                                img[(c * self.h + iy as usize) * self.w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back, accumulating.
    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let n = self.out_len();
        for c in 0..self.cin {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * n;
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                img[(c * self.h + iy as usize) * self.w + ix as usize] +=
                                    cols[row + oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Adds a leaf (input or parameter).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, "leaf")
    }

    /// `x[..., in] · w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.value(x), self.value(w));
        let (fan_in, fan_out) = match ws.shape() {
            [i, o] => (*i, *o),
            s => return Err(shape_err!("linear weight must be 2-D, got {s:?}")),
        };
        if xs.last_dim() != fan_in {
            return Err(shape_err!("linear: input {:?} vs weight {:?}", xs.shape(), ws.shape()));
        }
        let rows = xs.numel() / fan_in.max(1);
        let mut out = vec![0.0; rows * fan_out];
        if let Some(b) = b {
            let bias = self.value(b).data();
            if bias.len() != fan_out {
                return Err(shape_err!("linear bias has {} entries, expected {fan_out}", bias.len()));
            }
            for row in out.chunks_exact_mut(fan_out) {
                row.copy_from_slice(bias);
            }
        }
        gemm(
            rows,
            fan_in,
            fan_out,
            1.0,
            xs.data(),
            View::row_major(fan_in),
            ws.data(),
            View::row_major(fan_out),
            1.0,
            &mut out,
            View::row_major(fan_out),
        );
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = fan_out;
        self.push(Tensor::new(shape, out)?, Op::Linear { x, w, b }, "linear")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "add")?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| x * s).collect())?;
        self.push(t, Op::Scale(a, s), "scale")
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op, name: &str) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())?;
        self.push(t, op, name)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, |x| x.max(0.0), Op::Relu(a), "relu")
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&mut self, a: Var) -> Result<Var> {
        self.map(a, |x| x * sigmoid(x), Op::Swish(a), "swish")
    }

    /// Gated linear unit over the last axis: `a · sigmoid(g)` for `[a | g]`.
    pub fn glu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let d = ta.last_dim();
        if d % 2 != 0 {
            return Err(shape_err!("glu needs an even last axis, got {d}"));
        }
        let h = d / 2;
        let mut data = Vec::with_capacity(ta.numel() / 2);
        for row in ta.data().chunks_exact(d) {
            data.extend((0..h).map(|j| row[j] * sigmoid(row[h + j])));
        }
        let mut shape = ta.shape().to_vec();
        *shape.last_mut().unwrap() = h;
        self.push(Tensor::new(shape, data)?, Op::Glu(a), "glu")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let d = ta.last_dim();
        let mut data = ta.data().to_vec();
        data.chunks_exact_mut(d).for_each(softmax_row);
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(t, Op::Softmax(a), "softmax")
    }

    /// Normalizes each last-axis row, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.last_dim();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        if g.len() != d || b.len() != d {
            return Err(shape_err!("layer_norm: affine size {} / {} vs last axis {d}", g.len(), b.len()));
        }
        let rows = tx.numel() / d.max(1);
        let mut xhat = vec![0.0; tx.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for (r, row) in tx.data().chunks_exact(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / libm::sqrt(var + eps);
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        self.push(t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, "layer_norm")
    }

    fn bn_layout(&self, x: Var, layout: [usize; 3], gamma: Var, beta: Var) -> Result<()> {
        let n = self.value(x).numel();
        if layout.iter().product::<usize>() != n {
            return Err(shape_err!("batch_norm layout {layout:?} does not cover {n} values"));
        }
        let c = layout[1];
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(shape_err!("batch_norm affine size vs {c} channels"));
        }
        Ok(())
    }

    /// Batch norm with statistics of the current batch. `layout` is
    /// `[outer, channels, inner]`; statistics pool the outer and inner axes.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        layout: [usize; 3],
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        self.bn_layout(x, layout, gamma, beta)?;
        let [outer, c, inner] = layout;
        let m = (outer * inner) as f64;
        let data = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                mean[ch] += data[base..base + inner].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                var[ch] += data[base..base + inner].iter().map(|v| (v - mean[ch]) * (v - mean[ch])).sum::<f64>();
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / m).collect();
        let unbiased = if m > 1.0 { var.iter().map(|v| v / (m - 1.0)).collect() } else { biased.clone() };
        let rstd: Vec<f64> = biased.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        let stats = BatchStats { mean: mean.clone(), var: unbiased };
        let v = self.bn_apply(x, gamma, beta, layout, &mean, rstd, true)?;
        Ok((v, stats))
    }

    /// Batch norm as a fixed affine map from running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        layout: [usize; 3],
        eps: f64,
        mean: &[f64],
        var: &[f64],
    ) -> Result<Var> {
        self.bn_layout(x, layout, gamma, beta)?;
        if mean.len() != layout[1] || var.len() != layout[1] {
            return Err(shape_err!("batch_norm running stats vs {} channels", layout[1]));
        }
        let rstd = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        self.bn_apply(x, gamma, beta, layout, mean, rstd, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        layout: [usize; 3],
        mean: &[f64],
        rstd: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var> {
        let [outer, c, inner] = layout;
        let tx = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = tx.data();
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for i in base..base + inner {
                    let h = (data[i] - mean[ch]) * rstd[ch];
                    xhat[i] = h;
                    out[i] = h * g[ch] + b[ch];
                }
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        self.push(t, Op::BatchNorm { x, gamma, beta, layout, xhat, rstd, batch_stats }, "batch_norm")
    }

    /// Depthwise 1-D convolution along time with same padding.
    /// `x: [B, T, C]`, `w: [K, C]` with odd `K`, `b: [C]`.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (bsz, t, c) = btc(self.shape(x))?;
        let (k, wc) = match self.shape(w) {
            [k, wc] => (*k, *wc),
            s => return Err(shape_err!("depthwise kernel must be [K, C], got {s:?}")),
        };
        if wc != c || self.value(b).numel() != c {
            return Err(shape_err!("depthwise conv: {c} channels vs kernel {wc}"));
        }
        if k % 2 == 0 {
            return Err(invalid!("depthwise kernel size must be odd, got {k}"));
        }
        let pad = k / 2;
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![0.0; xd.len()];
        for bi in 0..bsz {
            let xb = &xd[bi * t * c..(bi + 1) * t * c];
            let ob = &mut out[bi * t * c..(bi + 1) * t * c];
            for ti in 0..t {
                let orow = &mut ob[ti * c..(ti + 1) * c];
                orow.copy_from_slice(bd);
                let lo = pad.saturating_sub(ti);
                let hi = k.min(t + pad - ti);
                for ki in lo..hi {
                    let src = ti + ki - pad;
                    let xrow = &xb[src * c..(src + 1) * c];
                    let wrow = &wd[ki * c..(ki + 1) * c];
                    for ch in 0..c {
                        orow[ch] += wrow[ch] * xrow[ch];
                    }
                }
            }
        }
        let tn = Tensor::new(vec![bsz, t, c], out)?;
        self.push(tn, Op::DepthwiseConv1d { x, w, b }, "depthwise_conv1d")
    }

    fn conv_geom(&self, x: Var, w: Var, stride: usize, pad: usize) -> Result<(usize, usize, ConvGeom)> {
        let (bsz, cin, h, wd) = match self.shape(x) {
            [b, c, h, w] => (*b, *c, *h, *w),
            s => return Err(shape_err!("conv2d input must be [B, C, H, W], got {s:?}")),
        };
        let (cout, wcin, kh, kw) = match self.shape(w) {
            [o, i, kh, kw] => (*o, *i, *kh, *kw),
            s => return Err(shape_err!("conv2d kernel must be [Cout, Cin, kh, kw], got {s:?}")),
        };
        if wcin != cin {
            return Err(shape_err!("conv2d: input has {cin} channels, kernel expects {wcin}"));
        }
        if stride == 0 {
            return Err(invalid!("conv2d stride must be positive"));
        }
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            kh,
            kw,
            oh: conv_out(h, kh, stride, pad)?,
            ow: conv_out(wd, kw, stride, pad)?,
            stride,
            pad,
        };
        Ok((bsz, cout, geom))
    }

    /// 2-D convolution, `x: [B, Cin, H, W]`, `w: [Cout, Cin, kh, kw]`, `b: [Cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (bsz, cout, g) = self.conv_geom(x, w, stride, pad)?;
        if self.value(b).numel() != cout {
            return Err(shape_err!("conv2d bias size vs {cout} output channels"));
        }
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let (patch, n) = (g.patch(), g.out_len());
        let img = g.cin * g.h * g.w;
        let mut cols = vec![0.0; patch * n];
        let mut out = vec![0.0; bsz * cout * n];
        for bi in 0..bsz {
            g.im2col(&xd[bi * img..(bi + 1) * img], &mut cols);
            let ob = &mut out[bi * cout * n..(bi + 1) * cout * n];
            for (co, row) in ob.chunks_exact_mut(n).enumerate() {
                row.fill(bd[co]);
            }
            gemm(cout, patch, n, 1.0, wd, View::row_major(patch), &cols, View::row_major(n), 1.0, ob, View::row_major(n));
        }
        let t = Tensor::new(vec![bsz, cout, g.oh, g.ow], out)?;
        self.push(t, Op::Conv2d { x, w, b, stride, pad }, "conv2d")
    }

    /// Mean over the middle axis of an `[outer, reduce, inner]` view; the
    /// result has shape `out_shape`.
    pub fn mean_axis(&mut self, x: Var, layout: [usize; 3], out_shape: Vec<usize>) -> Result<Var> {
        let [outer, r, inner] = layout;
        let xd = self.value(x).data();
        if outer * r * inner != xd.len() || r == 0 {
            return Err(shape_err!("mean layout {layout:?} vs {} values", xd.len()));
        }
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for ri in 0..r {
                let base = (o * r + ri) * inner;
                for (d, s) in dst.iter_mut().zip(&xd[base..base + inner]) {
                    *d += s;
                }
            }
            dst.iter_mut().for_each(|v| *v /= r as f64);
        }
        let t = Tensor::new(out_shape, out)?;
        self.push(t, Op::MeanAxis { x, layout }, "mean")
    }

    /// `[B, T, D] -> [B, D]`, averaging over time.
    pub fn mean_pool_time(&mut self, x: Var) -> Result<Var> {
        let (b, t, d) = btc(self.shape(x))?;
        self.mean_axis(x, [b, t, d], vec![b, d])
    }

    /// `[B, C, H, W] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (b, c, hw) = match self.shape(x) {
            [b, c, h, w] => (*b, *c, h * w),
            s => return Err(shape_err!("global pool input must be 4-D, got {s:?}")),
        };
        self.mean_axis(x, [b * c, hw, 1], vec![b, c])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, Op::Reshape(x), "reshape")
    }

    /// Keeps the leading axis and flattens the rest.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let b = s.first().copied().unwrap_or(1);
        let rest = s.iter().skip(1).product();
        self.reshape(x, vec![b, rest])
    }

    /// Scaled dot-product self-attention. `qkv: [B, T, 3D]` packs queries,
    /// keys and values; heads split `D` into contiguous slices. Returns the
    /// concatenated head outputs `[B, T, D]`.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Result<Var> {
        let (b, t, d3) = btc(self.shape(qkv))?;
        if d3 % 3 != 0 || heads == 0 || (d3 / 3) % heads != 0 {
            return Err(shape_err!("attention: width {d3} cannot hold q, k, v over {heads} heads"));
        }
        let d = d3 / 3;
        let dh = d / heads;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let src = self.value(qkv).data();
        let mut probs = vec![0.0; b * heads * t * t];
        let mut out = vec![0.0; b * t * d];
        let qkv_view = View { offset: 0, rs: d3, cs: 1 };
        for bi in 0..b {
            let base = bi * t * d3;
            for h in 0..heads {
                let p = &mut probs[(bi * heads + h) * t * t..(bi * heads + h + 1) * t * t];
                // S = Q Kᵀ
                gemm(
                    t,
                    dh,
                    t,
                    scale,
                    src,
                    qkv_view.at(base + h * dh),
                    src,
                    View { offset: base + d + h * dh, rs: 1, cs: d3 },
                    0.0,
                    p,
                    View::row_major(t),
                );
                p.chunks_exact_mut(t).for_each(softmax_row);
                gemm(
                    t,
                    t,
                    dh,
                    1.0,
                    p,
                    View::row_major(t),
                    src,
                    qkv_view.at(base + 2 * d + h * dh),
                    0.0,
                    &mut out,
                    View { offset: bi * t * d + h * dh, rs: d, cs: 1 },
                );
            }
        }
        let tn = Tensor::new(vec![b, t, d], out)?;
        self.push(tn, Op::Attention { qkv, heads, probs }, "attention")
    }

    /// Attention weights `[B, heads, T, T]` of an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Reverse pass. Seeds are `(output, dL/doutput)` pairs; gradients from
    /// several seeds and fan-out paths add up. Only leaf gradients are kept.
    pub fn backward(&self, seeds: &[(Var, &[f64])]) -> Result<Gradients> {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            if g.len() != self.value(*v).numel() {
                return Err(shape_err!("seed for node {} has {} values, expected {}", v.0, g.len(), self.value(*v).numel()));
            }
            let acc = accumulate(&mut grads, *v, g.len());
            acc.iter_mut().zip(g.iter()).for_each(|(a, b)| *a += b);
        }
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.backward_node(node, &dy, &mut grads);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(alloc::format!("gradient of node {i}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let numel = |v: Var| self.nodes[v.0].value.numel();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (fan_in, fan_out) = {
                    let s = self.shape(*w);
                    (s[0], s[1])
                };
                let rows = numel(*x) / fan_in.max(1);
                {
                    let dx = accumulate(grads, *x, numel(*x));
                    gemm(rows, fan_out, fan_in, 1.0, dy, View::row_major(fan_out), val(*w), View::transposed(fan_out), 1.0, dx, View::row_major(fan_in));
                }
                {
                    let dw = accumulate(grads, *w, numel(*w));
                    gemm(fan_in, rows, fan_out, 1.0, val(*x), View::transposed(fan_in), dy, View::row_major(fan_out), 1.0, dw, View::row_major(fan_out));
                }
                if let Some(b) = b {
                    let db = accumulate(grads, *b, fan_out);
                    for row in dy.chunks_exact(fan_out) {
                        db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    let g = accumulate(grads, *v, dy.len());
                    g.iter_mut().zip(dy).for_each(|(a, d)| *a += d);
                }
            }
            Op::Scale(a, s) => {
                let g = accumulate(grads, *a, dy.len());
                g.iter_mut().zip(dy).for_each(|(a, d)| *a += s * d);
            }
            Op::Relu(a) => {
                let x = val(*a);
                let g = accumulate(grads, *a, dy.len());
                for i in 0..dy.len() {
                    if x[i] > 0.0 {
                        g[i] += dy[i];
                    }
                }
            }
            Op::Swish(a) => {
                let x = val(*a);
                let g = accumulate(grads, *a, dy.len());
                for i in 0..dy.len() {
                    let s = sigmoid(x[i]);
                    g[i] += dy[i] * (s + x[i] * s * (1.0 - s));
                }
            }
            Op::Glu(a) => {
                let x = val(*a);
                let d = self.nodes[a.0].value.last_dim();
                let h = d / 2;
                let g = accumulate(grads, *a, x.len());
                for (r, dyr) in dy.chunks_exact(h).enumerate() {
                    let xr = &x[r * d..(r + 1) * d];
                    let gr = &mut g[r * d..(r + 1) * d];
                    for j in 0..h {
                        let s = sigmoid(xr[h + j]);
                        gr[j] += dyr[j] * s;
                        gr[h + j] += dyr[j] * xr[j] * s * (1.0 - s);
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let g = accumulate(grads, *a, y.len());
                for ((yr, dyr), gr) in y.chunks_exact(d).zip(dy.chunks_exact(d)).zip(g.chunks_exact_mut(d)) {
                    let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        gr[j] += yr[j] * (dyr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = node.value.last_dim();
                let gm = val(*gamma);
                {
                    let dg = accumulate(grads, *gamma, d);
                    for (hr, dyr) in xhat.chunks_exact(d).zip(dy.chunks_exact(d)) {
                        for j in 0..d {
                            dg[j] += dyr[j] * hr[j];
                        }
                    }
                }
                {
                    let db = accumulate(grads, *beta, d);
                    for dyr in dy.chunks_exact(d) {
                        db.iter_mut().zip(dyr).for_each(|(a, g)| *a += g);
                    }
                }
                let dx = accumulate(grads, *x, dy.len());
                let mut dh = vec![0.0; d];
                for (r, rs) in rstd.iter().enumerate() {
                    let hr = &xhat[r * d..(r + 1) * d];
                    let dyr = &dy[r * d..(r + 1) * d];
                    for j in 0..d {
                        dh[j] = dyr[j] * gm[j];
                    }
                    let m1 = dh.iter().sum::<f64>() / d as f64;
                    let m2 = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    let dxr = &mut dx[r * d..(r + 1) * d];
                    for j in 0..d {
                        dxr[j] += rs * (dh[j] - m1 - hr[j] * m2);
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, layout, xhat, rstd, batch_stats } => {
                let [outer, c, inner] = *layout;
                let gm = val(*gamma);
                let mut sum_dy = vec![0.0; c];
                let mut sum_dyh = vec![0.0; c];
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        for i in base..base + inner {
                            sum_dy[ch] += dy[i];
                            sum_dyh[ch] += dy[i] * xhat[i];
                        }
                    }
                }
                accumulate(grads, *gamma, c).iter_mut().zip(&sum_dyh).for_each(|(a, g)| *a += g);
                accumulate(grads, *beta, c).iter_mut().zip(&sum_dy).for_each(|(a, g)| *a += g);
                let m = (outer * inner) as f64;
                let dx = accumulate(grads, *x, dy.len());
                for o in 0..outer {
                    for ch in 0..c {
                        let base = (o * c + ch) * inner;
                        let k = gm[ch] * rstd[ch];
                        for i in base..base + inner {
                            dx[i] += if *batch_stats {
                                k * (dy[i] - sum_dy[ch] / m - xhat[i] * sum_dyh[ch] / m)
                            } else {
                                k * dy[i]
                            };
                        }
                    }
                }
            }
            Op::DepthwiseConv1d { x, w, b } => {
                let (bsz, t, c) = btc(self.shape(*x)).expect("checked in forward");
                let k = self.shape(*w)[0];
                let pad = k / 2;
                let (xd, wd) = (val(*x), val(*w));
                {
                    let db = accumulate(grads, *b, c);
                    for row in dy.chunks_exact(c) {
                        db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                    }
                }
                let mut dw = vec![0.0; k * c];
                {
                    let dx = accumulate(grads, *x, xd.len());
                    for bi in 0..bsz {
                        let off = bi * t * c;
                        for ti in 0..t {
                            let dyr = &dy[off + ti * c..off + (ti + 1) * c];
                            let lo = pad.saturating_sub(ti);
                            let hi = k.min(t + pad - ti);
                            for ki in lo..hi {
                                let src = off + (ti + ki - pad) * c;
                                for ch in 0..c {
                                    dx[src + ch] += wd[ki * c + ch] * dyr[ch];
                                    dw[ki * c + ch] += xd[src + ch] * dyr[ch];
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *w, k * c).iter_mut().zip(&dw).for_each(|(a, g)| *a += g);
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (bsz, cout, g) = self.conv_geom(*x, *w, *stride, *pad).expect("checked in forward");
                let (patch, n) = (g.patch(), g.out_len());
                let img = g.cin * g.h * g.w;
                let (xd, wd) = (val(*x), val(*w));
                {
                    let db = accumulate(grads, *b, cout);
                    for bi in 0..bsz {
                        for co in 0..cout {
                            let base = (bi * cout + co) * n;
                            db[co] += dy[base..base + n].iter().sum::<f64>();
                        }
                    }
                }
                let mut cols = vec![0.0; patch * n];
                let mut dcols = vec![0.0; patch * n];
                let mut dw = vec![0.0; cout * patch];
                {
                    let dx = accumulate(grads, *x, xd.len());
                    for bi in 0..bsz {
                        let dyb = &dy[bi * cout * n..(bi + 1) * cout * n];
                        g.im2col(&xd[bi * img..(bi + 1) * img], &mut cols);
                        gemm(cout, n, patch, 1.0, dyb, View::row_major(n), &cols, View::transposed(n), 1.0, &mut dw, View::row_major(patch));
                        gemm(patch, cout, n, 1.0, wd, View::transposed(patch), dyb, View::row_major(n), 0.0, &mut dcols, View::row_major(n));
                        g.col2im(&dcols, &mut dx[bi * img..(bi + 1) * img]);
                    }
                }
                accumulate(grads, *w, dw.len()).iter_mut().zip(&dw).for_each(|(a, g)| *a += g);
            }
            Op::MeanAxis { x, layout } => {
                let [outer, r, inner] = *layout;
                let dx = accumulate(grads, *x, outer * r * inner);
                let s = 1.0 / r as f64;
                for o in 0..outer {
                    let src = &dy[o * inner..(o + 1) * inner];
                    for ri in 0..r {
                        let base = (o * r + ri) * inner;
                        dx[base..base + inner].iter_mut().zip(src).for_each(|(a, g)| *a += g * s);
                    }
                }
            }
            Op::Reshape(a) => {
                accumulate(grads, *a, dy.len()).iter_mut().zip(dy).for_each(|(a, g)| *a += g);
            }
            Op::Attention { qkv, heads, probs } => {
                let (b, t, d3) = btc(self.shape(*qkv)).expect("checked in forward");
                let d = d3 / 3;
                let dh = d / heads;
                let scale = 1.0 / libm::sqrt(dh as f64);
                let src = val(*qkv);
                let mut dp = vec![0.0; t * t];
                let dq = accumulate(grads, *qkv, src.len());
                let qkv_view = View { offset: 0, rs: d3, cs: 1 };
                for bi in 0..b {
                    let base = bi * t * d3;
                    for h in 0..*heads {
                        let p = &probs[(bi * heads + h) * t * t..(bi * heads + h + 1) * t * t];
                        let dy_view = View { offset: bi * t * d + h * dh, rs: d, cs: 1 };
                        // dV += Pᵀ dO
                        gemm(t, t, dh, 1.0, p, View::transposed(t), dy, dy_view, 1.0, dq, qkv_view.at(base + 2 * d + h * dh));
                        // dP = dO Vᵀ
                        gemm(t, dh, t, 1.0, dy, dy_view, src, View { offset: base + 2 * d + h * dh, rs: 1, cs: d3 }, 0.0, &mut dp, View::row_major(t));
                        for (pr, dpr) in p.chunks_exact(t).zip(dp.chunks_exact_mut(t)) {
                            let dot: f64 = pr.iter().zip(dpr.iter()).map(|(a, b)| a * b).sum();
                            for j in 0..t {
                                dpr[j] = pr[j] * (dpr[j] - dot);
                            }
                        }
                        // dQ += scale dS K, dK += scale dSᵀ Q
                        gemm(t, t, dh, scale, &dp, View::row_major(t), src, qkv_view.at(base + d + h * dh), 1.0, dq, qkv_view.at(base + h * dh));
                        gemm(t, t, dh, scale, &dp, View::transposed(t), src, qkv_view.at(base + h * dh), 1.0, dq, qkv_view.at(base + d + h * dh));
                    }
                }
            }
        }
    }
}

fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}
