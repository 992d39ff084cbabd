//! Synthetic harmonic "vessel" recordings standing in for a labelled corpus.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Duration, TimeZone, Utc};
use hydroembed_core::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::manifest::{Manifest, ManifestEntry};
use crate::wav::write_wav16;

const STREAM_SYNTH: &str = "synth";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub fundamental_hz: f64,
    /// Level of harmonics 2, 3, ... relative to the fundamental.
    pub harmonics_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDatasetSpec {
    pub classes: Vec<ClassSpec>,
    /// Per-recording fundamental jitter, uniform in +-this percentage.
    pub frequency_jitter_pct: f64,
    /// Per-recording level jitter, uniform in +-this many dB.
    pub amplitude_jitter_db: f64,
    /// Fundamental amplitude in dB re full scale.
    pub signal_level_db: f64,
    /// White-noise RMS in dB re full scale.
    pub noise_floor_db: f64,
    pub recordings_per_class: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    /// Recording `i` (classes interleaved) starts at `start + i * interval_days`.
    pub start: DateTime<Utc>,
    pub interval_days: f64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        let class = |name: &str, f: f64| ClassSpec { name: name.into(), fundamental_hz: f, harmonics_db: vec![-6.0, -12.0] };
        Self {
            classes: vec![class("cargo", 90.0), class("tanker", 170.0), class("tug", 330.0), class("passenger", 620.0)],
            frequency_jitter_pct: 2.0,
            amplitude_jitter_db: 3.0,
            signal_level_db: -20.0,
            noise_floor_db: -40.0,
            recordings_per_class: 6,
            duration_s: 16.0,
            sample_rate: 16_000,
            start: Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap(),
            interval_days: 12.0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 || self.recordings_per_class == 0 {
            bail!("need at least two classes and one recording per class");
        }
        if !(self.duration_s > 0.0) || self.sample_rate == 0 || !(self.interval_days >= 0.0) {
            bail!("duration, sample rate and interval must be positive");
        }
        if !(0.0..50.0).contains(&self.frequency_jitter_pct) || !(self.amplitude_jitter_db >= 0.0) {
            bail!("jitter out of range");
        }
        for c in &self.classes {
            if !(c.fundamental_hz > 0.0 && c.fundamental_hz < 1000.0) {
                bail!("class {} fundamental {} Hz must lie in (0, 1000)", c.name, c.fundamental_hz);
            }
        }
        let mut f: Vec<f64> = self.classes.iter().map(|c| c.fundamental_hz).collect();
        f.sort_by(f64::total_cmp);
        for w in f.windows(2) {
            if w[1] < 1.15 * w[0] {
                bail!("fundamentals {} and {} Hz are closer than 15%", w[0], w[1]);
            }
        }
        Ok(())
    }

    pub fn n_recordings(&self) -> usize {
        self.classes.len() * self.recordings_per_class
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecording {
    pub recording_id: String,
    pub label: String,
    pub timestamp: DateTime<Utc>,
    pub fundamental_hz: f64,
    pub samples: Vec<f64>,
}

fn db(x: f64) -> f64 {
    10f64.powf(x / 20.0)
}

/// Recording `index` of the dataset; deterministic in `(seed, index)`.
pub fn synthesize(spec: &SyntheticDatasetSpec, seed: u64, index: usize) -> SyntheticRecording {
    let k = spec.classes.len();
    let class = &spec.classes[index % k];
    let mut rng = stream(seed, STREAM_SYNTH, index as u64);
    let jitter = spec.frequency_jitter_pct / 100.0;
    let f0 = class.fundamental_hz * (1.0 + rng.gen_range(-jitter..=jitter));
    let level = db(spec.signal_level_db + rng.gen_range(-spec.amplitude_jitter_db..=spec.amplitude_jitter_db));
    let partials: Vec<(f64, f64, f64)> = std::iter::once(0.0)
        .chain(class.harmonics_db.iter().copied())
        .enumerate()
        .map(|(h, rel)| ((h + 1) as f64 * f0, level * db(rel), rng.gen_range(0.0..2.0 * PI)))
        .filter(|(f, _, _)| *f < spec.sample_rate as f64 / 2.0)
        .collect();
    // slow amplitude modulation so windows of one recording differ
    let am_rate = rng.gen_range(0.05..0.3);
    let am_phase = rng.gen_range(0.0..2.0 * PI);
    let noise = db(spec.noise_floor_db);
    let rate = spec.sample_rate as f64;
    let n = (spec.duration_s * rate).round() as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate;
            let envelope = 1.0 + 0.3 * (2.0 * PI * am_rate * t + am_phase).sin();
            let tone: f64 = partials.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum();
            let w: f64 = StandardNormal.sample(&mut rng);
            envelope * tone + noise * w
        })
        .collect();
    let offset_ms = (index as f64 * spec.interval_days * 86_400_000.0).round() as i64;
    SyntheticRecording {
        recording_id: format!("{}-{:02}", class.name, index / k),
        label: class.name.clone(),
        timestamp: spec.start + Duration::milliseconds(offset_ms),
        fundamental_hz: f0,
        samples,
    }
}

/// Writes every recording as 16-bit WAV plus `manifest.jsonl` into `dir`.
pub fn generate_synthetic_dataset(spec: &SyntheticDatasetSpec, seed: u64, dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut entries = Vec::with_capacity(spec.n_recordings());
    for i in 0..spec.n_recordings() {
        let rec = synthesize(spec, seed, i);
        let file = PathBuf::from(format!("{}.wav", rec.recording_id));
        write_wav16(dir.join(&file), &rec.samples, spec.sample_rate)?;
        entries.push(ManifestEntry {
            path: file,
            recording_id: rec.recording_id,
            label: Some(rec.label),
            timestamp: Some(rec.timestamp),
            duration_s: rec.samples.len() as f64 / spec.sample_rate as f64,
        });
    }
    let manifest = Manifest::new(entries, dir)?;
    manifest.write(dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
