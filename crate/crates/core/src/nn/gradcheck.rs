//! Central finite-difference gradient checks.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const STEP: f64 = 1e-5;
/// Second, finer step used to detect kinks inside `STEP`.
pub const KINK_RATIO: f64 = 1e-2;
pub const KINK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Norm-wise relative error per input.
    pub rel_errors: Vec<f64>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Norm floor of the relative error. Gradients that vanish identically (a
/// bias feeding a batch norm) leave only round-off in the difference quotient.
pub const NORM_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, NORM_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| libm::sqrt(v.map(|x| x * x).sum::<f64>());
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    diff / scale.max(NORM_FLOOR)
}

/// Checks `build` against central differences of the scalar `<r, output>`
/// for a random projection `r`. At most `max_coords` randomly chosen
/// coordinates per input are perturbed (`None` checks all of them).
pub fn check<F>(inputs: &[Tensor], seed: u64, max_coords: Option<usize>, mut build: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = Graph::new();
    let leaves = inputs.iter().map(|t| graph.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
    let out = build(&mut graph, &leaves)?;
    let proj: Vec<f64> = (0..graph.value(out).numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grads = graph.backward(&[(out, &proj)])?;

    let mut eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves = tensors.iter().map(|t| g.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = build(&mut g, &leaves)?;
        Ok(g.value(out).data().iter().zip(&proj).map(|(a, b)| a * b).sum())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut rel_errors = Vec::with_capacity(inputs.len());
    let mut coords_checked = 0;
    for (i, leaf) in leaves.iter().enumerate() {
        let n = inputs[i].numel();
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let full = grads.get(*leaf).map(<[f64]>::to_vec).unwrap_or_else(|| alloc::vec![0.0; n]);
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        for &c in &coords {
            let orig = work[i].data()[c];
            let mut central = |h: f64| -> Result<f64> {
                work[i].data_mut()[c] = orig + h;
                let up = eval(&work)?;
                work[i].data_mut()[c] = orig - h;
                let down = eval(&work)?;
                work[i].data_mut()[c] = orig;
                Ok((up - down) / (2.0 * h))
            };
            let coarse = central(STEP)?;
            let fine = central(STEP * KINK_RATIO)?;
            // a ReLU kink within STEP makes the two disagree; the finer step
            // then sits on the correct side
            let smooth = (coarse - fine).abs() <= KINK_TOL * coarse.abs().max(1.0);
            numeric.push(if smooth { coarse } else { fine });
            analytic.push(full[c]);
        }
        coords_checked += coords.len();
        rel_errors.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheckReport { rel_errors, coords_checked })
}
