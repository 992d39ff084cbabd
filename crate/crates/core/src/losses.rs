//! VICReg and contrastive losses on batch embedding matrices, with gradients.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::gemm::{gemm, View};

/// `n x d` row-major embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEmbeddings {
    pub n: usize,
    pub d: usize,
    pub values: Vec<f64>,
}

impl BatchEmbeddings {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n * d != values.len() || d == 0 {
            return Err(shape_err!("{n}x{d} embeddings from {} values", values.len()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("embedding entry {i}")));
        }
        Ok(Self { n, d, values })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    fn need_two(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid!("batch statistics need at least 2 rows, got {}", self.n));
        }
        Ok(())
    }

    fn centered(&self) -> (Vec<f64>, Vec<f64>) {
        let (n, d) = (self.n, self.d);
        let mut mean = vec![0.0; d];
        for r in self.values.chunks_exact(d) {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut c = self.values.clone();
        for r in c.chunks_exact_mut(d) {
            r.iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
        }
        (c, mean)
    }

    /// Per-column standard deviation with the unbiased divisor.
    pub fn column_std(&self) -> Result<Vec<f64>> {
        self.need_two()?;
        let (c, _) = self.centered();
        let mut var = vec![0.0; self.d];
        for r in c.chunks_exact(self.d) {
            var.iter_mut().zip(r).for_each(|(s, v)| *s += v * v);
        }
        Ok(var.iter().map(|s| libm::sqrt(s / (self.n - 1) as f64)).collect())
    }

    /// Mean absolute off-diagonal Pearson correlation between columns.
    /// Constant columns contribute zero correlation.
    pub fn mean_abs_correlation(&self) -> Result<f64> {
        self.need_two()?;
        let d = self.d;
        if d < 2 {
            return Ok(0.0);
        }
        let cov = self.covariance_matrix();
        let mut sum = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    let denom = libm::sqrt(cov[i * d + i] * cov[j * d + j]);
                    if denom > 0.0 {
                        sum += libm::fabs(cov[i * d + j] / denom);
                    }
                }
            }
        }
        Ok(sum / (d * (d - 1)) as f64)
    }

    /// `d x d` sample covariance with the `n - 1` divisor.
    pub fn covariance_matrix(&self) -> Vec<f64> {
        let (n, d) = (self.n, self.d);
        let (c, _) = self.centered();
        let mut cov = vec![0.0; d * d];
        let scale = 1.0 / (n.max(2) - 1) as f64;
        gemm(d, n, d, scale, &c, View::transposed(d), &c, View::row_major(d), 0.0, &mut cov, View::row_major(d));
        cov
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceForm {
    /// `|gamma - S|`.
    Abs,
    /// `max(0, gamma - S)`.
    Hinge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub variance_form: VarianceForm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::new(5.0, 5.0, 1.0)
    }
}

impl LossWeights {
    pub fn new(lambda: f64, mu: f64, nu: f64) -> Self {
        Self { lambda, mu, nu, gamma: 1.0, epsilon: 1e-4, variance_form: VarianceForm::Abs }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.lambda) && ok(self.mu) && ok(self.nu)) {
            return Err(invalid!("loss weights must be finite and non-negative"));
        }
        if !(self.gamma > 0.0 && self.epsilon > 0.0) {
            return Err(invalid!("gamma and epsilon must be positive"));
        }
        Ok(())
    }
}

/// A scalar and its gradient with respect to the embedding entries.
#[derive(Debug, Clone, PartialEq)]
pub struct WithGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

pub fn variance_term(z: &BatchEmbeddings, gamma: f64, epsilon: f64, form: VarianceForm) -> Result<f64> {
    Ok(variance_term_grad(z, gamma, epsilon, form)?.value)
}

pub fn variance_term_grad(z: &BatchEmbeddings, gamma: f64, epsilon: f64, form: VarianceForm) -> Result<WithGrad> {
    z.need_two()?;
    let (n, d) = (z.n, z.d);
    let (c, _) = z.centered();
    let mut var = vec![0.0; d];
    for r in c.chunks_exact(d) {
        var.iter_mut().zip(r).for_each(|(s, v)| *s += v * v);
    }
    let mut value = 0.0;
    // dterm/dz_ij = coef_j * (z_ij - mean_j)
    let mut coef = vec![0.0; d];
    for j in 0..d {
        let s = libm::sqrt(var[j] / (n - 1) as f64 + epsilon);
        let gap = gamma - s;
        let slope = match form {
            VarianceForm::Abs => {
                value += libm::fabs(gap);
                if gap > 0.0 {
                    -1.0
                } else if gap < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            VarianceForm::Hinge => {
                value += gap.max(0.0);
                if gap > 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        };
        coef[j] = slope / (d as f64 * s * (n - 1) as f64);
    }
    let grad = c.chunks_exact(d).flat_map(|r| r.iter().zip(&coef).map(|(v, k)| v * k)).collect();
    Ok(WithGrad { value: value / d as f64, grad })
}

pub fn covariance_term(z: &BatchEmbeddings) -> Result<f64> {
    Ok(covariance_term_grad(z)?.value)
}

pub fn covariance_term_grad(z: &BatchEmbeddings) -> Result<WithGrad> {
    z.need_two()?;
    let (n, d) = (z.n, z.d);
    let (c, _) = z.centered();
    let mut cov = z.covariance_matrix();
    let mut value = 0.0;
    for i in 0..d {
        cov[i * d + i] = 0.0;
        value += cov[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>();
    }
    // centred rows sum to zero, so the mean's dependence drops out
    let mut grad = vec![0.0; n * d];
    let scale = 4.0 / (d as f64 * (n - 1) as f64);
    gemm(n, d, d, scale, &c, View::row_major(d), &cov, View::row_major(d), 0.0, &mut grad, View::row_major(d));
    Ok(WithGrad { value: value / d as f64, grad })
}

/// Gradients of the invariance term with respect to both batches.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

pub fn invariance_term(a: &BatchEmbeddings, b: &BatchEmbeddings) -> Result<f64> {
    Ok(invariance_term_grad(a, b)?.value)
}

/// Batch mean of the negative cosine similarity of paired rows.
pub fn invariance_term_grad(a: &BatchEmbeddings, b: &BatchEmbeddings) -> Result<PairGrad> {
    if a.n != b.n || a.d != b.d {
        return Err(shape_err!("invariance: {}x{} vs {}x{}", a.n, a.d, b.n, b.d));
    }
    if a.n == 0 {
        return Err(invalid!("invariance of an empty batch"));
    }
    let (n, d) = (a.n, a.d);
    let mut value = 0.0;
    let mut grad_a = vec![0.0; n * d];
    let mut grad_b = vec![0.0; n * d];
    for i in 0..n {
        let (x, y) = (a.row(i), b.row(i));
        let nx = norm(x);
        let ny = norm(y);
        if nx == 0.0 || ny == 0.0 {
            return Err(Error::ZeroNorm(i));
        }
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let cos = dot / (nx * ny);
        value -= cos;
        let k = -1.0 / n as f64;
        for j in 0..d {
            grad_a[i * d + j] = k * (y[j] / (nx * ny) - cos * x[j] / (nx * nx));
            grad_b[i * d + j] = k * (x[j] / (nx * ny) - cos * y[j] / (ny * ny));
        }
    }
    Ok(PairGrad { value: value / n as f64, grad_a, grad_b })
}

fn norm(x: &[f64]) -> f64 {
    libm::sqrt(x.iter().map(|v| v * v).sum::<f64>())
}

/// Raw components, weighted total and gradients of the VICReg objective.
#[derive(Debug, Clone, PartialEq)]
pub struct VicRegOutput {
    pub invariance: f64,
    pub variance_a: f64,
    pub variance_b: f64,
    pub covariance_a: f64,
    pub covariance_b: f64,
    pub total: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// `lambda * s(Z, Z') + mu * (v(Z) + v(Z')) + nu * (c(Z) + c(Z'))`.
pub fn vicreg_loss(a: &BatchEmbeddings, b: &BatchEmbeddings, w: &LossWeights) -> Result<VicRegOutput> {
    w.validate()?;
    let inv = invariance_term_grad(a, b)?;
    let va = variance_term_grad(a, w.gamma, w.epsilon, w.variance_form)?;
    let vb = variance_term_grad(b, w.gamma, w.epsilon, w.variance_form)?;
    let ca = covariance_term_grad(a)?;
    let cb = covariance_term_grad(b)?;
    let total = w.lambda * inv.value + w.mu * (va.value + vb.value) + w.nu * (ca.value + cb.value);
    let combine = |gi: &[f64], gv: &[f64], gc: &[f64]| -> Vec<f64> {
        (0..gi.len()).map(|k| w.lambda * gi[k] + w.mu * gv[k] + w.nu * gc[k]).collect()
    };
    Ok(VicRegOutput {
        invariance: inv.value,
        variance_a: va.value,
        variance_b: vb.value,
        covariance_a: ca.value,
        covariance_b: cb.value,
        total,
        grad_a: combine(&inv.grad_a, &va.grad, &ca.grad),
        grad_b: combine(&inv.grad_b, &vb.grad, &cb.grad),
    })
}

/// Embeddings with class labels for supervised contrastive training.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub embeddings: BatchEmbeddings,
    pub labels: Vec<usize>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOutput {
    pub sum: f64,
    /// `sum / n`.
    pub mean: f64,
    /// Gradient of `sum`.
    pub grad: Vec<f64>,
}

/// L2-normalized rows and the row norms.
fn normalize_rows(z: &BatchEmbeddings) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut u = z.values.clone();
    let mut norms = Vec::with_capacity(z.n);
    for (i, r) in u.chunks_exact_mut(z.d).enumerate() {
        let nr = norm(r);
        if nr == 0.0 {
            return Err(Error::ZeroNorm(i));
        }
        r.iter_mut().for_each(|v| *v /= nr);
        norms.push(nr);
    }
    Ok((u, norms))
}

/// Shared core: for each anchor `i`, softmax over `a != i` of `u_i . u_a / tau`,
/// loss `-(1/|P(i)|) sum_{p in P(i)} log p_ip`. Returns the summed loss and
/// its gradient with respect to `u`.
fn contrastive_core(u: &[f64], n: usize, d: usize, tau: f64, positives: &[Vec<usize>]) -> (f64, Vec<f64>) {
    let mut sim = vec![0.0; n * n];
    gemm(n, d, n, 1.0 / tau, u, View::row_major(d), u, View::transposed(d), 0.0, &mut sim, View::row_major(n));
    let mut dlogits = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        let row = &sim[i * n..(i + 1) * n];
        let max = (0..n).filter(|&a| a != i).map(|a| row[a]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| libm::exp(row[a] - max)).sum();
        let log_denom = max + libm::log(denom);
        let k = 1.0 / positives[i].len() as f64;
        for &p in &positives[i] {
            total -= k * (row[p] - log_denom);
        }
        let drow = &mut dlogits[i * n..(i + 1) * n];
        for a in 0..n {
            if a != i {
                drow[a] = libm::exp(row[a] - log_denom);
            }
        }
        for &p in &positives[i] {
            drow[p] -= k;
        }
    }
    // sim_ia = u_i . u_a / tau, so dU = (G + G^T) U / tau
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for a in 0..n {
            sym[i * n + a] = dlogits[i * n + a] + dlogits[a * n + i];
        }
    }
    let mut grad = vec![0.0; n * d];
    gemm(n, n, d, 1.0 / tau, &sym, View::row_major(n), u, View::row_major(d), 0.0, &mut grad, View::row_major(d));
    (total, grad)
}

/// Chain rule through `u = z / |z|`.
fn unnormalize_grad(du: &[f64], u: &[f64], norms: &[f64], d: usize) -> Vec<f64> {
    let mut g = du.to_vec();
    for (i, r) in g.chunks_exact_mut(d).enumerate() {
        let ur = &u[i * d..(i + 1) * d];
        let proj: f64 = r.iter().zip(ur).map(|(a, b)| a * b).sum();
        for j in 0..d {
            r[j] = (r[j] - proj * ur[j]) / norms[i];
        }
    }
    g
}

/// NT-Xent over `2N` rows where row `i` pairs with row `(i + N) mod 2N`,
/// using cosine similarity.
pub fn ntxent_loss(z: &BatchEmbeddings, temperature: f64) -> Result<ContrastiveOutput> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(invalid!("temperature must be positive, got {temperature}"));
    }
    let n = z.n;
    if n < 2 || n % 2 != 0 {
        return Err(invalid!("NT-Xent needs an even number of rows >= 2, got {n}"));
    }
    let half = n / 2;
    let positives: Vec<Vec<usize>> = (0..n).map(|i| vec![(i + half) % n]).collect();
    let (u, norms) = normalize_rows(z)?;
    let (sum, du) = contrastive_core(&u, n, z.d, temperature, &positives);
    Ok(ContrastiveOutput { sum, mean: sum / n as f64, grad: unnormalize_grad(&du, &u, &norms, z.d) })
}

/// Supervised contrastive loss: every other same-label row is a positive.
pub fn supcon_loss(batch: &LabeledBatch, normalize: bool) -> Result<ContrastiveOutput> {
    let t = batch.temperature;
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid!("temperature must be positive, got {t}"));
    }
    let z = &batch.embeddings;
    let n = z.n;
    if batch.labels.len() != n {
        return Err(shape_err!("{} labels for {n} rows", batch.labels.len()));
    }
    let positives: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&p| p != i && batch.labels[p] == batch.labels[i]).collect())
        .collect();
    if let Some(i) = positives.iter().position(Vec::is_empty) {
        return Err(Error::EmptyPositiveSet(i));
    }
    let (sum, grad) = if normalize {
        let (u, norms) = normalize_rows(z)?;
        let (sum, du) = contrastive_core(&u, n, z.d, t, &positives);
        (sum, unnormalize_grad(&du, &u, &norms, z.d))
    } else {
        contrastive_core(&z.values, n, z.d, t, &positives)
    };
    Ok(ContrastiveOutput { sum, mean: sum / n as f64, grad })
}
