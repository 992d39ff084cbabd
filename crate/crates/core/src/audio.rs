//! Audio clips, band-limited resampling and fixed-length windowing.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Working sample rate of the pipeline.
pub const WORKING_RATE: u32 = 16_000;

/// A mono amplitude sequence with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub recording_id: String,
    /// Seconds from the start of the source recording.
    pub offset_s: f64,
    /// Recording start as Unix seconds (UTC), when known.
    pub timestamp: Option<i64>,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid!("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(alloc::format!("audio sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            recording_id: String::new(),
            offset_s: 0.0,
            timestamp: None,
        })
    }

    pub fn with_recording(mut self, recording_id: impl Into<String>, timestamp: Option<i64>) -> Self {
        self.recording_id = recording_id.into();
        self.timestamp = timestamp;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean square amplitude.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    /// Same provenance, new samples.
    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
            recording_id: self.recording_id.clone(),
            offset_s: self.offset_s,
            timestamp: self.timestamp,
        }
    }
}

pub(crate) fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Zero crossings of the interpolation kernel on each side, measured at the
/// lower of the two rates (64 taps per phase).
const ZERO_CROSSINGS: usize = 32;
const TABLE_DENSITY: usize = 512;
const KAISER_BETA: f64 = 8.6;
/// Passband edge as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;

/// Zeroth-order modified Bessel function of the first kind.
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= (half / k) * (half / k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

/// Kaiser-windowed sinc interpolator usable at any rate ratio.
///
/// Rational ratios visit a finite set of kernel phases, which makes this the
/// polyphase filter; irrational ratios (pitch shifting) reuse the same table.
#[derive(Debug, Clone)]
pub struct SincResampler {
    table: Vec<f64>,
}

impl Default for SincResampler {
    fn default() -> Self {
        Self::new()
    }
}

impl SincResampler {
    pub fn new() -> Self {
        let len = ZERO_CROSSINGS * TABLE_DENSITY + 2;
        let i0_beta = bessel_i0(KAISER_BETA);
        let table = (0..len)
            .map(|i| {
                let x = i as f64 / TABLE_DENSITY as f64;
                if x >= ZERO_CROSSINGS as f64 {
                    return 0.0;
                }
                let u = x / ZERO_CROSSINGS as f64;
                let window = bessel_i0(KAISER_BETA * libm::sqrt(1.0 - u * u)) / i0_beta;
                let arg = PI * ROLLOFF * x;
                let sinc = if arg == 0.0 { 1.0 } else { libm::sin(arg) / arg };
                ROLLOFF * sinc * window
            })
            .collect();
        Self { table }
    }

    fn kernel(&self, x: f64) -> f64 {
        let pos = libm::fabs(x) * TABLE_DENSITY as f64;
        let idx = pos as usize;
        if idx + 1 >= self.table.len() {
            return 0.0;
        }
        let frac = pos - idx as f64;
        self.table[idx] + frac * (self.table[idx + 1] - self.table[idx])
    }

    /// Resamples `input` by `ratio = output rate / input rate`, producing
    /// `out_len` samples. Samples outside the input are treated as zero.
    pub fn process(&self, input: &[f64], ratio: f64, out_len: usize) -> Vec<f64> {
        let scale = ratio.min(1.0);
        let reach = ZERO_CROSSINGS as f64 / scale;
        let n = input.len() as i64;
        (0..out_len)
            .map(|k| {
                let t = k as f64 / ratio;
                let first = (libm::ceil(t - reach) as i64).max(0);
                let last = (libm::floor(t + reach) as i64).min(n - 1);
                let mut acc = 0.0;
                let mut i = first;
                while i <= last {
                    acc += input[i as usize] * self.kernel((t - i as f64) * scale);
                    i += 1;
                }
                acc * scale
            })
            .collect()
    }
}

/// Converts `clip` to `target_rate`. Equal rates return an exact copy.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(invalid!("target rate must be positive"));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let src = clip.sample_rate as u64;
    let tgt = target_rate as u64;
    let out_len = ((clip.len() as u64 * tgt + src - 1) / src) as usize;
    let ratio = tgt as f64 / src as f64;
    let samples = SincResampler::new().process(&clip.samples, ratio, out_len);
    let mut out = clip.with_samples(samples);
    out.sample_rate = target_rate;
    Ok(out)
}

/// Cuts consecutive non-overlapping windows of `window_s` seconds. The
/// trailing partial window is dropped; a clip shorter than one window
/// yields no windows.
pub fn window_fixed(clip: &AudioClip, window_s: f64) -> Result<Vec<AudioClip>> {
    if !(window_s > 0.0) || !window_s.is_finite() {
        return Err(invalid!("window length must be positive, got {window_s}"));
    }
    let len = libm::round(window_s * clip.sample_rate as f64) as usize;
    if len == 0 {
        return Err(invalid!("window of {window_s} s is shorter than one sample"));
    }
    let rate = clip.sample_rate as f64;
    Ok(clip
        .samples
        .chunks_exact(len)
        .enumerate()
        .map(|(i, chunk)| AudioClip {
            samples: chunk.to_vec(),
            sample_rate: clip.sample_rate,
            recording_id: clip.recording_id.clone(),
            offset_s: clip.offset_s + (i * len) as f64 / rate,
            timestamp: clip.timestamp,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn sine(freq: f64, rate: u32, seconds: f64, amp: f64) -> Vec<f64> {
        let n = (seconds * rate as f64) as usize;
        (0..n)
            .map(|i| amp * libm::sin(2.0 * PI * freq * i as f64 / rate as f64))
            .collect()
    }

    /// Single-bin DFT amplitude estimate of a real tone.
    fn tone_amplitude(x: &[f64], freq: f64, rate: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * freq * i as f64 / rate;
            re += v * libm::cos(ph);
            im += v * libm::sin(ph);
        }
        2.0 * libm::sqrt(re * re + im * im) / x.len() as f64
    }

    #[test]
    fn equal_rate_is_identity() {
        let clip = AudioClip::new(sine(440.0, 16_000, 0.5, 0.3), 16_000).unwrap();
        assert_eq!(resample(&clip, 16_000).unwrap(), clip);
    }

    #[test]
    fn downsampled_sine_keeps_amplitude() {
        let clip = AudioClip::new(sine(1000.0, 48_000, 1.0, 0.5), 48_000).unwrap();
        let out = resample(&clip, 16_000).unwrap();
        assert_eq!(out.sample_rate, 16_000);
        assert_eq!(out.len(), 16_000);
        // skip the zero-padded edges
        let body = &out.samples[800..15_200];
        let amp = tone_amplitude(body, 1000.0, 16_000.0);
        assert!((amp - 0.5).abs() / 0.5 < 0.01, "amplitude {amp}");
    }

    #[test]
    fn image_frequency_is_suppressed() {
        let a = sine(7000.0, 48_000, 1.0, 0.4);
        let b = sine(10_000.0, 48_000, 1.0, 0.4);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let out = resample(&AudioClip::new(mix, 48_000).unwrap(), 16_000).unwrap();
        let body = &out.samples[800..15_200];
        let keep = tone_amplitude(body, 7000.0, 16_000.0);
        // 10 kHz folds to 6 kHz at the new rate
        let alias = tone_amplitude(body, 6000.0, 16_000.0);
        let db = 20.0 * libm::log10(keep / alias);
        assert!(db >= 60.0, "suppression {db} dB");
    }

    #[test]
    fn duration_is_preserved() {
        let clip = AudioClip::new(vec![0.1; 44_101], 44_100).unwrap();
        let out = resample(&clip, 16_000).unwrap();
        assert!((out.duration_s() - clip.duration_s()).abs() <= 1.0 / 16_000.0);
    }

    #[test]
    fn windows_follow_the_remainder_rule() {
        let rate = 100;
        let mk = |secs: f64| AudioClip::new(vec![0.0; (secs * rate as f64) as usize], rate).unwrap();
        let w = window_fixed(&mk(10.0), 2.0).unwrap();
        assert_eq!(w.len(), 5);
        let offsets: Vec<f64> = w.iter().map(|c| c.offset_s).collect();
        assert_eq!(offsets, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
        assert_eq!(window_fixed(&mk(9.5), 2.0).unwrap().len(), 4);
        assert!(window_fixed(&mk(1.9), 2.0).unwrap().is_empty());
        assert!(window_fixed(&mk(1.0), 0.0).is_err());
    }

    #[test]
    fn rejects_non_finite_samples() {
        assert!(AudioClip::new(vec![0.0, f64::NAN], 8000).is_err());
        assert!(AudioClip::new(vec![0.0], 0).is_err());
    }

    proptest! {
        #[test]
        fn windows_concatenate_to_a_prefix(
            samples in proptest::collection::vec(-1.0f64..1.0, 0..400),
            window in 1usize..50,
        ) {
            let clip = AudioClip::new(samples.clone(), 10).unwrap().with_recording("r", None);
            let windows = window_fixed(&clip, window as f64 / 10.0).unwrap();
            let joined: Vec<f64> = windows.iter().flat_map(|w| w.samples.iter().copied()).collect();
            prop_assert_eq!(&samples[..joined.len()], &joined[..]);
            prop_assert!(samples.len() - joined.len() < window);
            for w in &windows {
                prop_assert_eq!(w.recording_id.as_str(), "r");
            }
        }
    }
}
