//! Time-domain augmentations that turn one window into a positive pair.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{mean_power, AudioClip, SincResampler};
use crate::dsp::fft::Fft;
use crate::dsp::Butterworth;
use crate::error::{invalid, Error, Result};

/// Legal gain range in dB.
pub const GAIN_DOMAIN_DB: (f64, f64) = (-6.0, 6.0);
/// Legal pitch-shift range in semitones.
pub const PITCH_DOMAIN_SEMITONES: (f64, f64) = (-2.0, 2.0);
/// Legal reverberation time range in seconds.
pub const RT60_DOMAIN_S: (f64, f64) = (0.1, 0.4);

/// One member of an augmentation family, with the range its parameter is
/// drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum AugmentationSpec {
    Identity,
    GaussianNoise { snr_db: (f64, f64) },
    LowPass { cutoff_hz: (f64, f64) },
    MixUp { sigma_s: f64, cutoff_hz: f64 },
    Gain { gain_db: (f64, f64) },
    PolarityInversion,
    PitchShift { semitones: (f64, f64) },
    Reverb { rt60_s: (f64, f64) },
}

fn check_range(name: &str, (lo, hi): (f64, f64), domain: (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(invalid!("{name} range [{lo}, {hi}] is empty or not finite"));
    }
    if lo < domain.0 || hi > domain.1 {
        return Err(invalid!("{name} range [{lo}, {hi}] exceeds [{}, {}]", domain.0, domain.1));
    }
    Ok(())
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

impl AugmentationSpec {
    /// Identity, Gaussian noise, low-pass and MixUp.
    pub fn default_family() -> Vec<Self> {
        vec![
            Self::Identity,
            Self::GaussianNoise { snr_db: (0.3, 0.5) },
            Self::LowPass { cutoff_hz: (100.0, 1000.0) },
            Self::MixUp { sigma_s: 50.0, cutoff_hz: 1000.0 },
        ]
    }

    /// The default family plus gain, polarity, pitch and reverb.
    pub fn expanded_family() -> Vec<Self> {
        let mut family = Self::default_family();
        family.extend([
            Self::Gain { gain_db: GAIN_DOMAIN_DB },
            Self::PolarityInversion,
            Self::PitchShift { semitones: PITCH_DOMAIN_SEMITONES },
            Self::Reverb { rt60_s: RT60_DOMAIN_S },
        ]);
        family
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::GaussianNoise { .. } => "noise",
            Self::LowPass { .. } => "lowpass",
            Self::MixUp { .. } => "mixup",
            Self::Gain { .. } => "gain",
            Self::PolarityInversion => "polarity",
            Self::PitchShift { .. } => "pitch",
            Self::Reverb { .. } => "reverb",
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        match *self {
            Self::Identity | Self::PolarityInversion => Ok(()),
            Self::GaussianNoise { snr_db } => check_range("snr_db", snr_db, (f64::MIN, f64::MAX)),
            Self::LowPass { cutoff_hz } => {
                check_range("cutoff_hz", cutoff_hz, (f64::MIN_POSITIVE, nyquist))?;
                if cutoff_hz.1 >= nyquist {
                    return Err(invalid!("cutoff {} Hz must stay below Nyquist", cutoff_hz.1));
                }
                Ok(())
            }
            Self::MixUp { sigma_s, cutoff_hz } => {
                if !(sigma_s >= 0.0 && sigma_s.is_finite()) {
                    return Err(invalid!("MixUp sigma must be finite and non-negative"));
                }
                if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
                    return Err(invalid!("MixUp cutoff {cutoff_hz} Hz must lie in (0, {nyquist})"));
                }
                Ok(())
            }
            Self::Gain { gain_db } => check_range("gain_db", gain_db, GAIN_DOMAIN_DB),
            Self::PitchShift { semitones } => check_range("semitones", semitones, PITCH_DOMAIN_SEMITONES),
            Self::Reverb { rt60_s } => check_range("rt60_s", rt60_s, RT60_DOMAIN_S),
        }
    }

    /// Applies the augmentation and clips the result to `[-1, 1]`,
    /// reporting how many samples were clipped.
    pub fn apply(&self, ctx: &RecordingContext<'_>, anchor: &AudioClip, rng: &mut impl Rng) -> Result<Augmented> {
        self.validate(anchor.sample_rate)?;
        let clip = match *self {
            Self::Identity => apply_identity(anchor),
            Self::GaussianNoise { snr_db } => apply_gaussian_noise(anchor, snr_db, rng)?,
            Self::LowPass { cutoff_hz } => apply_lowpass(anchor, cutoff_hz, rng)?,
            Self::MixUp { sigma_s, cutoff_hz } => apply_mixup(ctx, anchor, sigma_s, cutoff_hz, rng)?,
            Self::Gain { gain_db } => apply_gain(anchor, gain_db, rng)?,
            Self::PolarityInversion => apply_polarity(anchor),
            Self::PitchShift { semitones } => apply_pitch(anchor, semitones, rng)?,
            Self::Reverb { rt60_s } => apply_reverb(anchor, rt60_s, rng)?,
        };
        Ok(Augmented::clipped(clip))
    }
}

/// An augmented view and the number of samples clipped into `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub clip: AudioClip,
    pub clipped: usize,
}

impl Augmented {
    fn clipped(mut clip: AudioClip) -> Self {
        let mut clipped = 0;
        for s in clip.samples.iter_mut() {
            if s.abs() > 1.0 {
                *s = s.clamp(-1.0, 1.0);
                clipped += 1;
            }
        }
        Self { clip, clipped }
    }
}

/// The full recording an anchor window was cut from (needed by MixUp).
#[derive(Debug, Clone, Copy)]
pub struct RecordingContext<'a> {
    pub samples: &'a [f64],
    pub sample_rate: u32,
    pub anchor_offset_s: f64,
}

impl<'a> RecordingContext<'a> {
    pub fn new(samples: &'a [f64], sample_rate: u32, anchor: &AudioClip) -> Result<Self> {
        let ctx = Self { samples, sample_rate, anchor_offset_s: anchor.offset_s };
        let start = libm::round(anchor.offset_s * sample_rate as f64) as usize;
        if sample_rate != anchor.sample_rate || start + anchor.len() > samples.len() {
            return Err(invalid!(
                "anchor at {} s ({} samples) does not lie inside the recording",
                anchor.offset_s,
                anchor.len()
            ));
        }
        Ok(ctx)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

pub fn apply_identity(clip: &AudioClip) -> AudioClip {
    clip.clone()
}

/// Adds white Gaussian noise whose power sits `snr` dB below the clip's
/// power, with `snr` drawn uniformly from `snr_range_db`. Unclipped.
pub fn apply_gaussian_noise(clip: &AudioClip, snr_range_db: (f64, f64), rng: &mut impl Rng) -> Result<AudioClip> {
    check_range("snr_db", snr_range_db, (f64::MIN, f64::MAX))?;
    let signal = clip.power();
    if signal <= 0.0 {
        return Err(Error::SilentInput);
    }
    let snr = draw(rng, snr_range_db);
    let sigma = libm::sqrt(signal / libm::pow(10.0, snr / 10.0));
    let samples = clip
        .samples
        .iter()
        .map(|s| {
            let z: f64 = StandardNormal.sample(rng);
            s + sigma * z
        })
        .collect();
    Ok(clip.with_samples(samples))
}

/// Sixth-order Butterworth low-pass with a cutoff drawn uniformly from
/// `cutoff_range_hz`.
pub fn apply_lowpass(clip: &AudioClip, cutoff_range_hz: (f64, f64), rng: &mut impl Rng) -> Result<AudioClip> {
    let nyquist = clip.sample_rate as f64 / 2.0;
    check_range("cutoff_hz", cutoff_range_hz, (f64::MIN_POSITIVE, nyquist))?;
    let cutoff = draw(rng, cutoff_range_hz);
    let filter = Butterworth::lowpass(cutoff, clip.sample_rate as f64)?;
    Ok(clip.with_samples(filter.apply(&clip.samples)))
}

/// Low-passed anchor plus a high-passed neighbour window whose start time is
/// drawn from `Normal(recording centre, sigma_s)`, clamped into the recording.
pub fn apply_mixup(
    ctx: &RecordingContext<'_>,
    anchor: &AudioClip,
    sigma_s: f64,
    cutoff_hz: f64,
    rng: &mut impl Rng,
) -> Result<AudioClip> {
    let rate = anchor.sample_rate as f64;
    let win = anchor.len();
    if ctx.samples.len() < win {
        return Err(Error::TooShort(format!(
            "recording of {:.3} s is shorter than one {:.3} s window",
            ctx.duration_s(),
            anchor.duration_s()
        )));
    }
    let centre = ctx.duration_s() / 2.0;
    let drawn = if sigma_s > 0.0 {
        Normal::new(centre, sigma_s)
            .map_err(|e| invalid!("MixUp sigma: {e}"))?
            .sample(rng)
    } else {
        centre
    };
    let latest = ((ctx.samples.len() - win) as f64) / rate;
    let start_s = drawn.clamp(0.0, latest);
    let start = (libm::round(start_s * rate) as usize).min(ctx.samples.len() - win);
    let neighbour = &ctx.samples[start..start + win];
    let low = Butterworth::lowpass(cutoff_hz, rate)?.apply(&anchor.samples);
    let high = Butterworth::highpass(cutoff_hz, rate)?.apply(neighbour);
    Ok(anchor.with_samples(low.iter().zip(&high).map(|(a, b)| a + b).collect()))
}

/// Scales amplitudes by `10^(g / 20)`, `g` drawn from `gain_range_db`.
pub fn apply_gain(clip: &AudioClip, gain_range_db: (f64, f64), rng: &mut impl Rng) -> Result<AudioClip> {
    check_range("gain_db", gain_range_db, GAIN_DOMAIN_DB)?;
    Ok(gain(clip, draw(rng, gain_range_db)))
}

pub fn gain(clip: &AudioClip, gain_db: f64) -> AudioClip {
    let factor = libm::pow(10.0, gain_db / 20.0);
    clip.with_samples(clip.samples.iter().map(|s| s * factor).collect())
}

pub fn apply_polarity(clip: &AudioClip) -> AudioClip {
    clip.with_samples(clip.samples.iter().map(|s| -s).collect())
}

pub fn apply_pitch(clip: &AudioClip, semitone_range: (f64, f64), rng: &mut impl Rng) -> Result<AudioClip> {
    check_range("semitones", semitone_range, PITCH_DOMAIN_SEMITONES)?;
    Ok(pitch_shift(clip, draw(rng, semitone_range)))
}

/// Shifts pitch by resampling (which also changes duration) and then
/// trimming or zero-padding back to the original length.
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> AudioClip {
    let factor = libm::pow(2.0, semitones / 12.0);
    let out_len = libm::ceil(clip.len() as f64 / factor) as usize;
    let mut samples = SincResampler::new().process(&clip.samples, 1.0 / factor, out_len);
    samples.resize(clip.len(), 0.0);
    clip.with_samples(samples)
}

pub fn apply_reverb(clip: &AudioClip, rt60_range_s: (f64, f64), rng: &mut impl Rng) -> Result<AudioClip> {
    check_range("rt60_s", rt60_range_s, RT60_DOMAIN_S)?;
    let rt60 = draw(rng, rt60_range_s);
    let ir = synthetic_impulse_response(rt60, clip.sample_rate, rng);
    Ok(clip.with_samples(convolve_truncated(&clip.samples, &ir)))
}

/// White noise under an envelope that decays by 60 dB over `rt60_s`,
/// normalized to unit energy.
pub fn synthetic_impulse_response(rt60_s: f64, sample_rate: u32, rng: &mut impl Rng) -> Vec<f64> {
    let len = (libm::ceil(rt60_s * sample_rate as f64) as usize).max(1);
    let decay = libm::log(1000.0) / (rt60_s * sample_rate as f64);
    let mut ir: Vec<f64> = (0..len)
        .map(|n| {
            let z: f64 = StandardNormal.sample(rng);
            z * libm::exp(-decay * n as f64)
        })
        .collect();
    let energy = libm::sqrt(ir.iter().map(|v| v * v).sum::<f64>());
    if energy > 0.0 {
        ir.iter_mut().for_each(|v| *v /= energy);
    }
    ir
}

/// Linear convolution via FFT, keeping the first `signal.len()` outputs.
pub fn convolve_truncated(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let full = signal.len() + kernel.len() - 1;
    let n = full.next_power_of_two();
    let fft = Fft::new(n);
    let (mut ar, mut ai) = (vec![0.0; n], vec![0.0; n]);
    let (mut br, mut bi) = (vec![0.0; n], vec![0.0; n]);
    ar[..signal.len()].copy_from_slice(signal);
    br[..kernel.len()].copy_from_slice(kernel);
    fft.forward(&mut ar, &mut ai);
    fft.forward(&mut br, &mut bi);
    // multiply and conjugate so a second forward transform inverts
    let (mut pr, mut pi) = (vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        pr[k] = ar[k] * br[k] - ai[k] * bi[k];
        pi[k] = -(ar[k] * bi[k] + ai[k] * br[k]);
    }
    fft.forward(&mut pr, &mut pi);
    pr.truncate(signal.len());
    pr.iter_mut().for_each(|v| *v /= n as f64);
    pr
}

/// Which family members produced a pair, and from which anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProvenance {
    pub anchor_id: String,
    pub specs: [usize; 2],
    pub stream_id: u64,
    pub clipped: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivePair {
    pub view_a: AudioClip,
    pub view_b: AudioClip,
    pub provenance: PairProvenance,
}

/// Draws two family members independently and uniformly (with replacement)
/// and applies each to `anchor`.
pub fn sample_pair(
    family: &[AugmentationSpec],
    ctx: &RecordingContext<'_>,
    anchor: &AudioClip,
    rng: &mut impl Rng,
    stream_id: u64,
) -> Result<PositivePair> {
    if family.is_empty() {
        return Err(invalid!("augmentation family is empty"));
    }
    let ia = rng.gen_range(0..family.len());
    let ib = rng.gen_range(0..family.len());
    let a = family[ia].apply(ctx, anchor, rng)?;
    let b = family[ib].apply(ctx, anchor, rng)?;
    Ok(PositivePair {
        provenance: PairProvenance {
            anchor_id: format!("{}@{:.3}", anchor.recording_id, anchor.offset_s),
            specs: [ia, ib],
            stream_id,
            clipped: [a.clipped, b.clipped],
        },
        view_a: a.clip,
        view_b: b.clip,
    })
}

/// Mean power of a sample slice.
pub fn power(samples: &[f64]) -> f64 {
    mean_power(samples)
}
