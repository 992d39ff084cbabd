//! JSON-lines recording manifests.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub recording_id: String,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.recording_id.as_str()) {
                bail!("duplicate recording_id {:?}", e.recording_id);
            }
            if !(e.duration_s > 0.0) {
                bail!("recording {:?} has non-positive duration {}", e.recording_id, e.duration_s);
            }
        }
        Ok(Self { entries, base_dir: base_dir.into() })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            entries.push(entry);
        }
        Self::new(entries, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        fs::write(path, out).with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    /// Sorted distinct labels; a label's class index is its position here.
    pub fn classes(&self) -> Vec<String> {
        let mut c: Vec<String> = self.entries.iter().filter_map(|e| e.label.clone()).collect();
        c.sort();
        c.dedup();
        c
    }
}
