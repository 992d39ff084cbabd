//! LARS, Adam and plateau learning-rate decay.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::ParamStore;

pub trait Optimizer {
    /// Applies one update. `grads[i]` belongs to parameter `i` of `params`.
    fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()>;
    fn lr(&self) -> f64;
    fn set_lr(&mut self, lr: f64);
}

fn check_grads(params: &ParamStore, grads: &[Vec<f64>]) -> Result<()> {
    if grads.len() != params.len() {
        return Err(shape_err!("{} gradients for {} parameters", grads.len(), params.len()));
    }
    for ((_, name, p), g) in params.iter().zip(grads) {
        if p.numel() != g.len() {
            return Err(shape_err!("{name}: gradient has {} values, parameter {}", g.len(), p.numel()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("gradient of {name}")));
        }
    }
    Ok(())
}

fn l2(x: &[f64]) -> f64 {
    libm::sqrt(x.iter().map(|v| v * v).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LarsConfig {
    pub base_lr: f64,
    pub trust_coefficient: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Parameters whose name ends with one of these skip adaptation and decay.
    pub exempt_suffixes: Vec<String>,
}

impl Default for LarsConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.01,
            trust_coefficient: 0.001,
            momentum: 0.9,
            weight_decay: 1e-6,
            exempt_suffixes: [".bias", ".gamma", ".beta"].iter().map(|s| String::from(*s)).collect(),
        }
    }
}

impl LarsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.trust_coefficient > 0.0) {
            return Err(invalid!("LARS base_lr and trust_coefficient must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(invalid!("LARS momentum must lie in [0, 1) and weight_decay be >= 0"));
        }
        Ok(())
    }

    pub fn is_exempt(&self, name: &str) -> bool {
        self.exempt_suffixes.iter().any(|s| name.ends_with(s.as_str()))
    }
}

#[derive(Debug, Clone)]
pub struct Lars {
    pub config: LarsConfig,
    lr: f64,
    momentum: Vec<Vec<f64>>,
}

impl Lars {
    pub fn new(config: LarsConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { lr: config.base_lr, config, momentum: Vec::new() })
    }

    /// Update `-m` for one layer given its (possibly momentum-carrying) buffer.
    pub fn layer_update(&self, name: &str, w: &[f64], grad: &[f64], buf: &mut [f64]) {
        let exempt = self.config.is_exempt(name);
        let decay = if exempt { 0.0 } else { self.config.weight_decay };
        let g: Vec<f64> = grad.iter().zip(w).map(|(g, w)| g + decay * w).collect();
        let wn = l2(w);
        let local = if exempt || wn == 0.0 { 1.0 } else { self.config.trust_coefficient * wn / (l2(&g) + 1e-12) };
        let k = self.lr * local;
        for (m, gi) in buf.iter_mut().zip(&g) {
            *m = self.config.momentum * *m + k * gi;
        }
    }
}

impl Optimizer for Lars {
    fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        check_grads(params, grads)?;
        if self.momentum.len() != params.len() {
            self.momentum = params.iter().map(|(_, _, p)| vec![0.0; p.numel()]).collect();
        }
        let mut bufs = core::mem::take(&mut self.momentum);
        let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
        for (id, buf) in ids.into_iter().zip(bufs.iter_mut()) {
            let name = String::from(params.name(id));
            self.layer_update(&name, params.get(id).data(), &grads[id.0], buf);
            for (w, m) in params.get_mut(id).data_mut().iter_mut().zip(buf.iter()) {
                *w -= m;
            }
        }
        self.momentum = bufs;
        Ok(())
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.0005, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(invalid!("invalid Adam configuration {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    lr: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { lr: config.lr, config, t: 0, m: Vec::new(), v: Vec::new() })
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        check_grads(params, grads)?;
        if self.m.len() != params.len() {
            self.m = params.iter().map(|(_, _, p)| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - libm::pow(beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(beta2, self.t as f64);
        let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
        for id in ids {
            let (m, v, g) = (&mut self.m[id.0], &mut self.v[id.0], &grads[id.0]);
            for (k, w) in params.get_mut(id).data_mut().iter_mut().enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                *w -= self.lr * mhat / (libm::sqrt(vhat) + eps);
            }
        }
        Ok(())
    }

    fn lr(&self) -> f64 {
        self.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerSpec {
    Lars(LarsConfig),
    Adam(AdamConfig),
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::Lars(LarsConfig::default())
    }
}

impl OptimizerSpec {
    pub fn build(&self) -> Result<alloc::boxed::Box<dyn Optimizer>> {
        Ok(match self {
            Self::Lars(c) => alloc::boxed::Box::new(Lars::new(c.clone())?),
            Self::Adam(c) => alloc::boxed::Box::new(Adam::new(c.clone())?),
        })
    }
}

/// Divides the learning rate when the monitored loss stops improving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: u32,
    pub min_relative_improvement: f64,
    #[serde(skip)]
    pub best: Option<f64>,
    #[serde(skip)]
    pub epochs_since_improvement: u32,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self { factor: 10.0, patience: 3, min_relative_improvement: 1e-3, best: None, epochs_since_improvement: 0 }
    }
}

impl PlateauScheduler {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 1.0) || self.patience == 0 || !(self.min_relative_improvement >= 0.0) {
            return Err(invalid!("scheduler needs factor > 1, patience >= 1, min_relative_improvement >= 0"));
        }
        Ok(())
    }

    /// Records an epoch loss and returns the (possibly reduced) learning rate.
    /// Improvement means `loss < best - min_relative_improvement * |best|`,
    /// which keeps its meaning for negative losses.
    pub fn step(&mut self, epoch_loss: f64, lr: f64) -> f64 {
        match self.best {
            Some(best) if !(epoch_loss < best - self.min_relative_improvement * libm::fabs(best)) => {
                self.epochs_since_improvement += 1;
                if self.epochs_since_improvement >= self.patience {
                    self.epochs_since_improvement = 0;
                    return lr / self.factor;
                }
                lr
            }
            _ => {
                self.best = Some(epoch_loss);
                self.epochs_since_improvement = 0;
                lr
            }
        }
    }
}
