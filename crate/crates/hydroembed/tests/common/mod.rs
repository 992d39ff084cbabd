#![allow(dead_code)]

use std::path::Path;

use hydroembed::synth::{generate_synthetic_dataset, SyntheticDatasetSpec};
use hydroembed::ExperimentConfig;
use hydroembed_core::dsp::MelConfig;
use hydroembed_core::nn::{EncoderConfig, EncoderSpec, ExpanderConfig};
use hydroembed_core::probe::SplitSpec;

/// A small corpus and model that train in well under a second.
pub fn tiny_config(root: &Path) -> ExperimentConfig {
    let synthetic = SyntheticDatasetSpec { recordings_per_class: 2, duration_s: 2.0, ..SyntheticDatasetSpec::default() };
    let data = root.join("data");
    generate_synthetic_dataset(&synthetic, 0, &data).unwrap();
    let config = ExperimentConfig {
        seed: 4,
        manifest: data.join("manifest.jsonl"),
        out_dir: root.join("run"),
        synthetic,
        window_s: 0.5,
        mel: MelConfig { n_mels: 16, n_fft: 256, hop: 128, ..MelConfig::default() },
        encoder: EncoderSpec::Conformer(EncoderConfig {
            n_mels: 16,
            n_frames: 61,
            model_dim: 8,
            n_heads: 2,
            conv_kernel: 3,
            ffn_dim: 16,
            n_blocks: 1,
            embedding_dim: 8,
            ..EncoderConfig::default()
        }),
        expander: ExpanderConfig { hidden_dim: 16, output_dim: 16, ..ExpanderConfig::default() },
        batch_size: 12,
        epochs: 1,
        split: SplitSpec::RandomByRecording { test_fraction: 0.25, seed: 0 },
        ..ExperimentConfig::default()
    };
    config.validate().unwrap();
    config
}
