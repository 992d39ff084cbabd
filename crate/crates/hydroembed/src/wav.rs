//! WAV decoding to mono `[-1, 1]` clips and 16-bit encoding.

use std::path::{Path, PathBuf};

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use hydroembed_core::audio::AudioClip;

#[derive(Debug, thiserror::Error)]
pub enum WavError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: hound::Error },
    #[error("{path}: unsupported encoding ({detail})")]
    Unsupported { path: PathBuf, detail: String },
    #[error("{path}: file contains no audio")]
    Empty { path: PathBuf },
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: hound::Error },
    #[error("{path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
}

/// Reads a PCM (8/16/24/32-bit integer) or 32-bit float WAV file, averaging
/// channels and dividing by the format's full-scale value.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, WavError> {
    let path = path.as_ref();
    let read_err = |source| WavError::Read { path: path.to_owned(), source };
    let reader = WavReader::open(path).map_err(read_err)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let full_scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<Result<_, _>>()
                .map_err(read_err)?
        }
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()
            .map_err(read_err)?,
        (format, bits) => {
            return Err(WavError::Unsupported { path: path.to_owned(), detail: format!("{format:?} {bits}-bit") })
        }
    };
    if channels == 0 || interleaved.len() < channels {
        return Err(WavError::Empty { path: path.to_owned() });
    }
    let mono: Vec<f64> =
        interleaved.chunks_exact(channels).map(|frame| frame.iter().sum::<f64>() / channels as f64).collect();
    AudioClip::new(mono, spec.sample_rate)
        .map_err(|e| WavError::Invalid { path: path.to_owned(), detail: e.to_string() })
}

/// Writes mono 16-bit PCM, rounding `x * 32768` and saturating at full scale.
pub fn write_wav16(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<(), WavError> {
    let path = path.as_ref();
    let write_err = |source| WavError::Write { path: path.to_owned(), source };
    let spec = WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut writer = WavWriter::create(path, spec).map_err(write_err)?;
    for &s in samples {
        let q = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(q).map_err(write_err)?;
    }
    writer.finalize().map_err(write_err)
}
