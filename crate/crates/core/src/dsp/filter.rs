//! Butterworth low-/high-pass filters as cascades of second-order sections.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{invalid, Result};

/// Default filter order for every augmentation.
pub const BUTTERWORTH_ORDER: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    LowPass,
    HighPass,
}

/// One normalized biquad section (`a0 = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    fn design(kind: FilterKind, cutoff_hz: f64, sample_rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let (sin_w, cos_w) = (libm::sin(w0), libm::cos(w0));
        let alpha = sin_w / (2.0 * q);
        let a0 = 1.0 + alpha;
        let (b0, b1, b2) = match kind {
            FilterKind::LowPass => ((1.0 - cos_w) / 2.0, 1.0 - cos_w, (1.0 - cos_w) / 2.0),
            FilterKind::HighPass => ((1.0 + cos_w) / 2.0, -(1.0 + cos_w), (1.0 + cos_w) / 2.0),
        };
        Self {
            b0: b0 / a0,
            b1: b1 / a0,
            b2: b2 / a0,
            a1: -2.0 * cos_w / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// Transposed direct form II, zero initial state.
    fn run(&self, data: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for x in data.iter_mut() {
            let input = *x;
            let y = self.b0 * input + s1;
            s1 = self.b1 * input - self.a1 * y + s2;
            s2 = self.b2 * input - self.a2 * y;
            *x = y;
        }
    }
}

/// Even-order Butterworth filter, bilinear-transformed with the cutoff
/// prewarped so the -3 dB point lands exactly on `cutoff_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    pub kind: FilterKind,
    pub cutoff_hz: f64,
    pub sample_rate: f64,
    pub sections: Vec<Biquad>,
}

impl Butterworth {
    pub fn new(kind: FilterKind, order: usize, cutoff_hz: f64, sample_rate: f64) -> Result<Self> {
        if order == 0 || order % 2 != 0 {
            return Err(invalid!("Butterworth order must be even and positive, got {order}"));
        }
        if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate / 2.0) {
            return Err(invalid!(
                "cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)",
                sample_rate / 2.0
            ));
        }
        let sections = (0..order / 2)
            .map(|k| {
                let theta = (2 * k + 1) as f64 * PI / (2 * order) as f64;
                Biquad::design(kind, cutoff_hz, sample_rate, 1.0 / (2.0 * libm::sin(theta)))
            })
            .collect();
        Ok(Self { kind, cutoff_hz, sample_rate, sections })
    }

    pub fn lowpass(cutoff_hz: f64, sample_rate: f64) -> Result<Self> {
        Self::new(FilterKind::LowPass, BUTTERWORTH_ORDER, cutoff_hz, sample_rate)
    }

    pub fn highpass(cutoff_hz: f64, sample_rate: f64) -> Result<Self> {
        Self::new(FilterKind::HighPass, BUTTERWORTH_ORDER, cutoff_hz, sample_rate)
    }

    /// Causal filtering from rest.
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out = input.to_vec();
        for s in &self.sections {
            s.run(&mut out);
        }
        out
    }
}
