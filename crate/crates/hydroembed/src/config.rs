//! The experiment description shared by every command.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hydroembed_core::augment::AugmentationSpec;
use hydroembed_core::dsp::MelConfig;
use hydroembed_core::losses::LossWeights;
use hydroembed_core::nn::{EncoderSpec, ExpanderConfig};
use hydroembed_core::optim::{OptimizerSpec, PlateauScheduler};
use hydroembed_core::probe::{ProbeConfig, SplitSpec};
use hydroembed_core::train::{LossSpec, Model, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::synth::SyntheticDatasetSpec;

/// 2017-12-01T00:00:00Z.
pub const DEFAULT_CUTOFF: i64 = 1_512_086_400;

/// Which representation the probe is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeFeatures {
    Encoder,
    Expander,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedFamily {
    pub name: String,
    pub augmentations: Vec<AugmentationSpec>,
}

/// Values visited by each sweep axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `(lambda, mu, nu)` triples.
    pub loss_weights: Vec<[f64; 3]>,
    pub embedding_sizes: Vec<usize>,
    pub label_fractions: Vec<f64>,
    pub augmentation_families: Vec<NamedFamily>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let default = AugmentationSpec::default_family();
        let without = |kind: &str| NamedFamily {
            name: format!("no-{kind}"),
            augmentations: default.iter().filter(|a| a.name() != kind).cloned().collect(),
        };
        Self {
            loss_weights: vec![[1.0, 1.0, 1.0], [5.0, 5.0, 1.0], [25.0, 25.0, 1.0]],
            embedding_sizes: vec![32, 64, 128, 256, 512],
            label_fractions: vec![0.1, 0.25, 0.5, 1.0],
            augmentation_families: vec![
                NamedFamily { name: "default".into(), augmentations: default.clone() },
                without("noise"),
                without("lowpass"),
                without("mixup"),
                NamedFamily { name: "expanded".into(), augmentations: AugmentationSpec::expanded_family() },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// JSON-lines manifest of the corpus.
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub synthetic: SyntheticDatasetSpec,
    pub window_s: f64,
    pub mel: MelConfig,
    pub encoder: EncoderSpec,
    pub expander: ExpanderConfig,
    pub augmentations: Vec<AugmentationSpec>,
    pub loss: LossSpec,
    pub optimizer: OptimizerSpec,
    pub scheduler: PlateauScheduler,
    pub batch_size: usize,
    pub epochs: usize,
    /// Pretraining uses the training side of this split (of its base split
    /// for reduced-label splits); the probe uses both sides.
    pub split: SplitSpec,
    pub probe: ProbeConfig,
    pub probe_features: ProbeFeatures,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: 0,
            manifest: PathBuf::from("data/manifest.jsonl"),
            out_dir: PathBuf::from("runs/default"),
            synthetic: SyntheticDatasetSpec::default(),
            window_s: 2.0,
            mel: MelConfig::default(),
            encoder: EncoderSpec::default(),
            expander: ExpanderConfig::default(),
            augmentations: train.augmentations,
            loss: train.loss,
            optimizer: train.optimizer,
            scheduler: train.scheduler,
            batch_size: train.batch_size,
            epochs: train.epochs,
            split: SplitSpec::TimeWise { cutoff: DEFAULT_CUTOFF },
            probe: ProbeConfig::default(),
            probe_features: ProbeFeatures::Encoder,
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            loss: self.loss.clone(),
            optimizer: self.optimizer.clone(),
            scheduler: self.scheduler.clone(),
            augmentations: self.augmentations.clone(),
        }
    }

    pub fn build_model(&self) -> Result<Model> {
        Ok(Model::new(&self.encoder, &self.expander, self.seed)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0) {
            bail!("window_s must be positive");
        }
        let samples = (self.window_s * self.mel.sample_rate as f64).round() as usize;
        let frames = self.mel.n_frames(samples);
        let (n_mels, n_frames) = self.encoder.input_dims();
        if (n_mels, n_frames) != (self.mel.n_mels, frames) {
            bail!(
                "encoder expects {n_mels} mels x {n_frames} frames but {} s windows give {} x {frames}",
                self.window_s,
                self.mel.n_mels
            );
        }
        match &self.encoder {
            EncoderSpec::Conformer(c) => c.validate()?,
            EncoderSpec::Baseline(c) => c.validate()?,
        }
        self.train_config().validate(self.mel.sample_rate)?;
        self.synthetic.validate()?;
        Ok(())
    }

    /// VICReg weights, if the configured loss is VICReg.
    pub fn loss_weights(&self) -> Option<&LossWeights> {
        match &self.loss {
            LossSpec::Vicreg(w) => Some(w),
            _ => None,
        }
    }
}
