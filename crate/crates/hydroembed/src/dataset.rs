//! Manifest-backed corpora at the working rate.

use anyhow::{Context, Result};
use hydroembed_core::audio::{resample, WORKING_RATE};
use hydroembed_core::probe::RecordingMeta;
use hydroembed_core::train::{Corpus, Recording};

use crate::manifest::Manifest;
use crate::wav::load_wav;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    /// Class names; a recording's label indexes this list.
    pub classes: Vec<String>,
    pub metas: Vec<RecordingMeta>,
}

impl Dataset {
    /// Decodes, resamples to the working rate and windows every recording.
    /// Unlabelled recordings get no class and are left out of `metas`.
    pub fn load(manifest: &Manifest, window_s: f64) -> Result<Self> {
        let classes = manifest.classes();
        let mut recordings = Vec::with_capacity(manifest.entries.len());
        let mut metas = Vec::new();
        for entry in &manifest.entries {
            let clip = load_wav(manifest.resolve(entry))?;
            let clip = resample(&clip, WORKING_RATE).with_context(|| format!("resampling {}", entry.recording_id))?;
            let label = entry.label.as_ref().map(|l| classes.binary_search(l).expect("label listed in classes"));
            let timestamp = entry.timestamp.map(|t| t.timestamp());
            if let Some(label) = label {
                metas.push(RecordingMeta { id: entry.recording_id.clone(), label, timestamp });
            }
            recordings.push(Recording {
                id: entry.recording_id.clone(),
                samples: clip.samples,
                sample_rate: WORKING_RATE,
                label,
                timestamp,
            });
        }
        Ok(Self { corpus: Corpus::new(recordings, window_s)?, classes, metas })
    }
}
