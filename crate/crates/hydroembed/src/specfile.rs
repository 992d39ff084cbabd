//! Flat binary spectrogram container: `n_mels`, `n_frames` (u32) and
//! `frame_rate` (f32), little-endian, then mel-major f32 values.

use std::io::{Read, Write};

use anyhow::{bail, Result};
use hydroembed_core::dsp::MelSpectrogram;

pub fn write_spectrogram(mut w: impl Write, spec: &MelSpectrogram) -> Result<()> {
    w.write_all(&(spec.n_mels as u32).to_le_bytes())?;
    w.write_all(&(spec.n_frames as u32).to_le_bytes())?;
    w.write_all(&(spec.frame_rate as f32).to_le_bytes())?;
    for v in &spec.values {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Values come back rounded to f32; provenance fields are empty.
pub fn read_spectrogram(mut r: impl Read) -> Result<MelSpectrogram> {
    let mut word = [0u8; 4];
    let mut next = |r: &mut dyn Read| -> Result<[u8; 4]> {
        r.read_exact(&mut word)?;
        Ok(word)
    };
    let n_mels = u32::from_le_bytes(next(&mut r)?) as usize;
    let n_frames = u32::from_le_bytes(next(&mut r)?) as usize;
    let frame_rate = f32::from_le_bytes(next(&mut r)?) as f64;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n_mels * n_frames * 4 {
        bail!("spectrogram body has {} bytes, expected {}", bytes.len(), n_mels * n_frames * 4);
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    Ok(MelSpectrogram { n_mels, n_frames, frame_rate, values, recording_id: String::new(), offset_s: 0.0 })
}
