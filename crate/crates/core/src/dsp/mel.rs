//! Mel scale, triangular filterbank, STFT power and log-Mel spectrograms.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::fft::Fft;
use crate::audio::AudioClip;
use crate::error::{invalid, Error, Result};

/// `2595 * log10(1 + f / 700)`.
pub fn hz_to_mel(hz: f64) -> Result<f64> {
    if !(hz >= 0.0) {
        return Err(invalid!("frequency must be non-negative, got {hz}"));
    }
    Ok(2595.0 * libm::log10(1.0 + hz / 700.0))
}

/// Inverse of [`hz_to_mel`].
pub fn mel_to_hz(mel: f64) -> Result<f64> {
    if !(mel >= 0.0) {
        return Err(invalid!("mel value must be non-negative, got {mel}"));
    }
    Ok(700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0))
}

/// STFT and Mel projection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub floor_db: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_mels: 128,
            n_fft: 1024,
            hop: 256,
            f_min: 0.0,
            f_max: 8000.0,
            floor_db: -80.0,
        }
    }
}

impl MelConfig {
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.n_fft {
            0
        } else {
            1 + (n_samples - self.n_fft) / self.hop
        }
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }
}

/// One triangle, stored sparsely from its first non-zero bin.
#[derive(Debug, Clone, PartialEq)]
struct Band {
    start: usize,
    weights: Vec<f64>,
}

/// Half-overlapping triangular filters equally spaced on the Mel axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_fft: usize,
    pub sample_rate: u32,
    pub f_min: f64,
    pub f_max: f64,
    /// `n_mels + 2` breakpoints in Hz; row `k` spans `breakpoints[k..=k + 2]`.
    pub breakpoints: Vec<f64>,
    bands: Vec<Band>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Result<Self> {
        if n_mels == 0 || n_fft < 2 || sample_rate == 0 {
            return Err(invalid!("filterbank needs n_mels >= 1, n_fft >= 2 and a positive rate"));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(f_min >= 0.0 && f_min < f_max && f_max <= nyquist) {
            return Err(invalid!(
                "frequency bounds must satisfy 0 <= f_min < f_max <= {nyquist}, got [{f_min}, {f_max}]"
            ));
        }
        let (m_lo, m_hi) = (hz_to_mel(f_min)?, hz_to_mel(f_max)?);
        let step = (m_hi - m_lo) / (n_mels + 1) as f64;
        let breakpoints = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + step * i as f64))
            .collect::<Result<Vec<_>>>()?;
        let n_bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let mut bands = Vec::with_capacity(n_mels);
        for k in 0..n_mels {
            let (lo, mid, hi) = (breakpoints[k], breakpoints[k + 1], breakpoints[k + 2]);
            let row: Vec<f64> = (0..n_bins)
                .map(|b| {
                    let f = b as f64 * bin_hz;
                    if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    }
                })
                .collect();
            let peak = row.iter().cloned().fold(0.0, f64::max);
            if peak <= 0.0 {
                return Err(invalid!(
                    "mel filter {k} ({lo:.2}-{hi:.2} Hz) contains no FFT bin; increase n_fft or lower n_mels"
                ));
            }
            let start = row.iter().position(|w| *w > 0.0).unwrap_or(0);
            let end = row.iter().rposition(|w| *w > 0.0).unwrap_or(0);
            let weights = row[start..=end].iter().map(|w| w / peak).collect();
            bands.push(Band { start, weights });
        }
        Ok(Self { n_mels, n_fft, sample_rate, f_min, f_max, breakpoints, bands })
    }

    pub fn from_config(cfg: &MelConfig) -> Result<Self> {
        Self::new(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.f_min, cfg.f_max)
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Centre frequency of row `k`.
    pub fn center_hz(&self, k: usize) -> f64 {
        self.breakpoints[k + 1]
    }

    /// Dense `n_mels x n_bins` weight matrix.
    pub fn weights(&self) -> Vec<Vec<f64>> {
        self.bands
            .iter()
            .map(|band| {
                let mut row = vec![0.0; self.n_bins()];
                row[band.start..band.start + band.weights.len()].copy_from_slice(&band.weights);
                row
            })
            .collect()
    }

    /// Projects one power spectrum (`n_bins` values) onto the filters.
    pub fn project(&self, power: &[f64], out: &mut [f64]) {
        for (o, band) in out.iter_mut().zip(&self.bands) {
            *o = band
                .weights
                .iter()
                .zip(&power[band.start..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

/// Analysis window applied to each STFT frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowFn {
    Hann,
    Rectangular,
}

impl WindowFn {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowFn::Rectangular => vec![1.0; n],
            WindowFn::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / n as f64))
                .collect(),
        }
    }
}

/// Power spectrogram, bin-major: `values[bin * n_frames + frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub n_bins: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
}

impl PowerSpectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.n_frames + frame]
    }
}

/// Reusable STFT state.
#[derive(Debug, Clone)]
pub struct Stft {
    fft: Fft,
    window: Vec<f64>,
    hop: usize,
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize, window_fn: WindowFn) -> Result<Self> {
        if n_fft == 0 || hop == 0 {
            return Err(invalid!("n_fft and hop must be positive"));
        }
        Ok(Self { fft: Fft::new(n_fft), window: window_fn.coefficients(n_fft), hop })
    }

    /// Calls `sink(frame, power)` for every frame; `power` has `n_fft/2 + 1` bins.
    pub fn for_each_frame(&self, samples: &[f64], mut sink: impl FnMut(usize, &[f64])) -> Result<usize> {
        let n_fft = self.fft.len();
        if samples.len() < n_fft {
            return Err(Error::TooShort(alloc::format!(
                "clip has {} samples, STFT needs at least {n_fft}",
                samples.len()
            )));
        }
        let n_frames = 1 + (samples.len() - n_fft) / self.hop;
        let (mut re, mut im) = (vec![0.0; n_fft], vec![0.0; n_fft]);
        let mut power = vec![0.0; n_fft / 2 + 1];
        for frame in 0..n_frames {
            let chunk = &samples[frame * self.hop..frame * self.hop + n_fft];
            for ((r, x), w) in re.iter_mut().zip(chunk).zip(&self.window) {
                *r = x * w;
            }
            im.iter_mut().for_each(|v| *v = 0.0);
            self.fft.forward(&mut re, &mut im);
            for (b, p) in power.iter_mut().enumerate() {
                *p = re[b] * re[b] + im[b] * im[b];
            }
            sink(frame, &power);
        }
        Ok(n_frames)
    }
}

/// `|DFT|^2` of windowed frames, without centring or padding.
pub fn stft_power(clip: &AudioClip, n_fft: usize, hop: usize, window_fn: WindowFn) -> Result<PowerSpectrogram> {
    let stft = Stft::new(n_fft, hop, window_fn)?;
    let n_bins = n_fft / 2 + 1;
    let n_frames = MelConfig { n_fft, hop, ..MelConfig::default() }.n_frames(clip.len()).max(1);
    let mut values = vec![0.0; n_bins * n_frames];
    stft.for_each_frame(&clip.samples, |frame, power| {
        for (b, p) in power.iter().enumerate() {
            values[b * n_frames + frame] = *p;
        }
    })?;
    Ok(PowerSpectrogram { n_bins, n_frames, values })
}

/// Log-power Mel spectrogram, row-major `n_mels x n_frames`, in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    pub n_mels: usize,
    pub n_frames: usize,
    pub frame_rate: f64,
    pub values: Vec<f64>,
    pub recording_id: String,
    pub offset_s: f64,
}

impl MelSpectrogram {
    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.n_frames + frame]
    }

    pub fn row(&self, mel: usize) -> &[f64] {
        &self.values[mel * self.n_frames..(mel + 1) * self.n_frames]
    }
}

/// Filterbank plus STFT, ready to featurize many clips.
#[derive(Debug, Clone)]
pub struct MelFrontend {
    pub config: MelConfig,
    pub filterbank: MelFilterbank,
    stft: Stft,
}

impl MelFrontend {
    pub fn new(config: MelConfig) -> Result<Self> {
        let filterbank = MelFilterbank::from_config(&config)?;
        let stft = Stft::new(config.n_fft, config.hop, WindowFn::Hann)?;
        Ok(Self { config, filterbank, stft })
    }

    pub fn compute(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        if clip.sample_rate != self.filterbank.sample_rate {
            return Err(invalid!(
                "clip rate {} Hz does not match filterbank rate {} Hz",
                clip.sample_rate,
                self.filterbank.sample_rate
            ));
        }
        let n_mels = self.filterbank.n_mels;
        let n_frames = self.config.n_frames(clip.len());
        let floor = libm::pow(10.0, self.config.floor_db / 10.0);
        let mut values = vec![0.0; n_mels * n_frames.max(1)];
        let mut mel = vec![0.0; n_mels];
        self.stft.for_each_frame(&clip.samples, |frame, power| {
            self.filterbank.project(power, &mut mel);
            for (m, e) in mel.iter().enumerate() {
                values[m * n_frames + frame] = 10.0 * libm::log10(e.max(floor));
            }
        })?;
        Ok(MelSpectrogram {
            n_mels,
            n_frames,
            frame_rate: self.config.frame_rate(),
            values,
            recording_id: clip.recording_id.clone(),
            offset_s: clip.offset_s,
        })
    }
}

/// `10 log10(max(fb . P, 10^(floor_db / 10)))` with a Hann-windowed STFT.
pub fn mel_spectrogram(
    clip: &AudioClip,
    fb: &MelFilterbank,
    n_fft: usize,
    hop: usize,
    floor_db: f64,
) -> Result<MelSpectrogram> {
    let config = MelConfig {
        sample_rate: fb.sample_rate,
        n_mels: fb.n_mels,
        n_fft,
        hop,
        f_min: fb.f_min,
        f_max: fb.f_max,
        floor_db,
    };
    if fb.n_fft != n_fft {
        return Err(invalid!("filterbank built for n_fft={} but STFT uses {n_fft}", fb.n_fft));
    }
    let frontend = MelFrontend { config, filterbank: fb.clone(), stft: Stft::new(n_fft, hop, WindowFn::Hann)? };
    frontend.compute(clip)
}
