//! Per-sample inference timing.

use std::time::Instant;

use anyhow::{ensure, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// Wall time per sample of each pass, in milliseconds.
    pub per_pass_ms: Vec<f64>,
    /// Running minimum of `per_pass_ms`.
    pub running_min_ms: Vec<f64>,
    pub min_per_sample_ms: f64,
}

/// Runs `pass` (which processes `samples` samples) `passes` times and
/// reports the minimum per-sample time.
pub fn inference_timer(passes: usize, samples: usize, mut pass: impl FnMut() -> Result<()>) -> Result<TimingReport> {
    ensure!(passes > 0 && samples > 0, "need at least one pass and one sample");
    let mut per_pass_ms = Vec::with_capacity(passes);
    let mut running_min_ms = Vec::with_capacity(passes);
    let mut best = f64::INFINITY;
    for _ in 0..passes {
        let start = Instant::now();
        pass()?;
        let ms = start.elapsed().as_secs_f64() * 1e3 / samples as f64;
        best = best.min(ms);
        per_pass_ms.push(ms);
        running_min_ms.push(best);
    }
    Ok(TimingReport { per_pass_ms, running_min_ms, min_per_sample_ms: best })
}
