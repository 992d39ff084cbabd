//! Dataset splits, the logistic-regression probe and classification metrics.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::rng::{stream, STREAM_SPLIT};

/// What a split needs to know about a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub id: String,
    pub label: usize,
    /// Unix seconds.
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    /// Train strictly before `cutoff` (Unix seconds), test from `cutoff` on.
    TimeWise { cutoff: i64 },
    RandomByRecording { test_fraction: f64, seed: u64 },
    /// Keeps a fraction of the base split's training recordings.
    ReducedLabels { base: Box<SplitSpec>, keep_fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

pub fn make_split(records: &[RecordingMeta], spec: &SplitSpec) -> Result<Split> {
    let split = match spec {
        SplitSpec::TimeWise { cutoff } => {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for r in records {
                let ts = r.timestamp.ok_or_else(|| Error::Split(alloc::format!("recording {} has no timestamp", r.id)))?;
                if ts < *cutoff {
                    train.push(r.id.clone());
                } else {
                    test.push(r.id.clone());
                }
            }
            Split { train, test }
        }
        SplitSpec::RandomByRecording { test_fraction, seed } => {
            if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                return Err(invalid!("test_fraction must lie in (0, 1), got {test_fraction}"));
            }
            let n = records.len();
            if n < 2 {
                return Err(Error::Split(alloc::format!("{n} recordings cannot be split")));
            }
            let mut ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
            ids.sort();
            ids.dedup();
            ids.shuffle(&mut stream(*seed, STREAM_SPLIT, 0));
            let n_test = (libm::round(ids.len() as f64 * test_fraction) as usize).clamp(1, ids.len() - 1);
            let test = ids[..n_test].to_vec();
            let train = ids[n_test..].to_vec();
            Split { train, test }
        }
        SplitSpec::ReducedLabels { base, keep_fraction, seed } => {
            if !(*keep_fraction > 0.0 && *keep_fraction <= 1.0) {
                return Err(invalid!("keep_fraction must lie in (0, 1], got {keep_fraction}"));
            }
            let base = make_split(records, base)?;
            let train = reduce(records, &base.train, *keep_fraction, *seed);
            Split { train, test: base.test }
        }
    };
    if split.train.is_empty() || split.test.is_empty() {
        return Err(Error::Split(alloc::format!(
            "empty side: {} train, {} test recordings",
            split.train.len(),
            split.test.len()
        )));
    }
    Ok(split)
}

/// Shuffles each class, interleaves the classes and keeps the first
/// `round(n * fraction)` (at least one), so small fractions still spread
/// across classes.
fn reduce(records: &[RecordingMeta], train: &[String], fraction: f64, seed: u64) -> Vec<String> {
    let label_of: BTreeMap<&str, usize> = records.iter().map(|r| (r.id.as_str(), r.label)).collect();
    let mut by_class: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    let mut sorted = train.to_vec();
    sorted.sort();
    for id in sorted {
        by_class.entry(label_of[id.as_str()]).or_default().push(id);
    }
    let mut rng = stream(seed, STREAM_SPLIT, 1);
    for ids in by_class.values_mut() {
        ids.shuffle(&mut rng);
    }
    let mut order = Vec::with_capacity(train.len());
    let longest = by_class.values().map(Vec::len).max().unwrap_or(0);
    for i in 0..longest {
        for ids in by_class.values() {
            if let Some(id) = ids.get(i) {
                order.push(id.clone());
            }
        }
    }
    let keep = (libm::round(order.len() as f64 * fraction) as usize).max(1).min(order.len());
    order.truncate(keep);
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub l2_strength: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { l2_strength: 1e-4, max_iter: 5000, grad_tol: 1e-6 }
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub dim: usize,
    pub n_classes: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `dim x n_classes`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Classes seen during fitting; the rest are never predicted.
    pub present: Vec<bool>,
    pub iterations: usize,
    pub grad_norm: f64,
}

struct Problem<'a> {
    x: &'a [f64],
    y: &'a [usize],
    n: usize,
    d: usize,
    k: usize,
    l2: f64,
    present: &'a [bool],
}

impl Problem<'_> {
    fn logits(&self, theta: &[f64], row: usize, out: &mut [f64]) {
        let (d, k) = (self.d, self.k);
        let (w, b) = theta.split_at(d * k);
        out.copy_from_slice(b);
        let xr = &self.x[row * d..(row + 1) * d];
        for (j, xv) in xr.iter().enumerate() {
            let wr = &w[j * k..(j + 1) * k];
            for c in 0..k {
                out[c] += xv * wr[c];
            }
        }
        for c in 0..k {
            if !self.present[c] {
                out[c] = f64::NEG_INFINITY;
            }
        }
    }

    /// Objective and, when `grad` is given, its gradient.
    fn eval(&self, theta: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let (n, d, k) = (self.n, self.d, self.k);
        if let Some(g) = grad.as_deref_mut() {
            g.fill(0.0);
        }
        let mut z = vec![0.0; k];
        let mut loss = 0.0;
        for i in 0..n {
            self.logits(theta, i, &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + libm::log(z.iter().map(|v| libm::exp(v - max)).sum::<f64>());
            loss += lse - z[self.y[i]];
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = g.split_at_mut(d * k);
                let xr = &self.x[i * d..(i + 1) * d];
                for c in 0..k {
                    let p = libm::exp(z[c] - lse) - if c == self.y[i] { 1.0 } else { 0.0 };
                    let p = p / n as f64;
                    gb[c] += p;
                    for j in 0..d {
                        gw[j * k + c] += p * xr[j];
                    }
                }
            }
        }
        let w = &theta[..d * k];
        let reg = 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>();
        if let Some(g) = grad {
            for (gv, wv) in g[..d * k].iter_mut().zip(w) {
                *gv += self.l2 * wv;
            }
        }
        loss / n as f64 + reg
    }
}

/// Fits the probe by full-batch gradient descent with Armijo backtracking.
pub fn fit_probe(features: &[f64], dim: usize, labels: &[usize], n_classes: usize, config: &ProbeConfig) -> Result<ProbeModel> {
    let n = labels.len();
    if dim == 0 || features.len() != n * dim {
        return Err(shape_err!("{} feature values for {n} samples of dim {dim}", features.len()));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(String::from("probe features")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(invalid!("label {bad} outside {n_classes} classes"));
    }
    let mut present = vec![false; n_classes];
    labels.iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(invalid!("probe training needs at least two classes"));
    }

    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for r in features.chunks_exact(dim) {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for r in features.chunks_exact(dim) {
        for j in 0..dim {
            std[j] += (r[j] - mean[j]) * (r[j] - mean[j]);
        }
    }
    for s in std.iter_mut() {
        *s = libm::sqrt(*s / n as f64);
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let x: Vec<f64> = features
        .chunks_exact(dim)
        .flat_map(|r| (0..dim).map(|j| (r[j] - mean[j]) / std[j]).collect::<Vec<_>>())
        .collect();

    let k = n_classes;
    let prob = Problem { x: &x, y: labels, n, d: dim, k, l2: config.l2_strength, present: &present };
    let mut theta = vec![0.0; dim * k + k];
    let mut grad = vec![0.0; theta.len()];
    let mut trial = vec![0.0; theta.len()];
    let mut f = prob.eval(&theta, Some(&mut grad));
    let mut step = 1.0;
    let mut iterations = 0;
    let mut gnorm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
    while iterations < config.max_iter && gnorm > config.grad_tol {
        let g2 = gnorm * gnorm;
        step *= 2.0;
        loop {
            for ((t, th), g) in trial.iter_mut().zip(&theta).zip(&grad) {
                *t = th - step * g;
            }
            let ft = prob.eval(&trial, None);
            if ft <= f - 1e-4 * step * g2 || step < 1e-16 {
                break;
            }
            step *= 0.5;
        }
        core::mem::swap(&mut theta, &mut trial);
        f = prob.eval(&theta, Some(&mut grad));
        gnorm = libm::sqrt(grad.iter().map(|g| g * g).sum::<f64>());
        iterations += 1;
    }
    let bias = theta.split_off(dim * k);
    Ok(ProbeModel { dim, n_classes: k, mean, std, weights: theta, bias, present, iterations, grad_norm: gnorm })
}

impl ProbeModel {
    /// Class scores, `n x n_classes`; unseen classes score `-inf`.
    pub fn decision_function(&self, features: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim;
        if features.len() % d != 0 {
            return Err(shape_err!("{} values are not rows of dim {d}", features.len()));
        }
        let k = self.n_classes;
        let mut out = Vec::with_capacity(features.len() / d * k);
        for r in features.chunks_exact(d) {
            let mut z = self.bias.clone();
            for j in 0..d {
                let xv = (r[j] - self.mean[j]) / self.std[j];
                for c in 0..k {
                    z[c] += xv * self.weights[j * k + c];
                }
            }
            for c in 0..k {
                if !self.present[c] {
                    z[c] = f64::NEG_INFINITY;
                }
            }
            out.extend(z);
        }
        Ok(out)
    }

    pub fn predict(&self, features: &[f64]) -> Result<Vec<usize>> {
        let k = self.n_classes;
        Ok(self
            .decision_function(features)?
            .chunks_exact(k)
            .map(|z| {
                let mut best = 0;
                for c in 1..k {
                    if z[c] > z[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let k = confusion.len();
        if confusion.iter().any(|r| r.len() != k) {
            return Err(shape_err!("confusion matrix must be square"));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(invalid!("no evaluated samples"));
        }
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion[c][c] as f64;
                let support: usize = confusion[c].iter().sum();
                let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
                let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let recall = if support == 0 { 0.0 } else { tp / support as f64 };
                let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
                ClassMetrics { precision, recall, f1, support }
            })
            .collect();
        let weighted_f1 = per_class.iter().map(|m| m.support as f64 / total as f64 * m.f1).sum();
        Ok(Self { accuracy: correct as f64 / total as f64, weighted_f1, per_class, confusion })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(shape_err!("{} labels vs {} predictions", truth.len(), predicted.len()));
        }
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(invalid!("class id outside {n_classes} classes"));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }
}

pub fn evaluate(model: &ProbeModel, features: &[f64], labels: &[usize]) -> Result<Metrics> {
    if labels.is_empty() {
        return Err(invalid!("empty test set"));
    }
    let predicted = model.predict(features)?;
    Metrics::from_predictions(labels, &predicted, model.n_classes)
}
