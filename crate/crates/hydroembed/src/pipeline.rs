//! Pretraining, probing and sweeps over an [`ExperimentConfig`].

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hydroembed_core::dsp::{MelFrontend, MelSpectrogram};
use hydroembed_core::losses::{BatchEmbeddings, LossWeights};
use hydroembed_core::probe::{evaluate, fit_probe, make_split, Metrics, Split, SplitSpec};
use hydroembed_core::train::{LogRecord, LossSpec, Model, RecordKind, Trainer};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{ExperimentConfig, ProbeFeatures};
use crate::dataset::Dataset;
use crate::manifest::Manifest;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";

/// Rows per forward pass when extracting embeddings.
const EMBED_CHUNK: usize = 64;

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let manifest = Manifest::read(&config.manifest)?;
    Dataset::load(&manifest, config.window_s)
}

/// The split whose training side feeds pretraining: reduced-label splits
/// pretrain on their unreduced base.
fn pretrain_split(spec: &SplitSpec) -> &SplitSpec {
    match spec {
        SplitSpec::ReducedLabels { base, .. } => pretrain_split(base),
        other => other,
    }
}

pub fn pretrain_pool(config: &ExperimentConfig, data: &Dataset) -> Result<Vec<usize>> {
    let split = make_split(&data.metas, pretrain_split(&config.split))?;
    Ok(data.corpus.windows_of(&split.train))
}

pub fn write_log(path: &Path, log: &[LogRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in log {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    r.deserialize().collect::<Result<_, _>>().with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: Model,
    pub log: Vec<LogRecord>,
}

/// Trains from the configured seed and writes the checkpoint, its sidecar,
/// the config and the training log into `out`.
pub fn pretrain(config: &ExperimentConfig, data: &Dataset, out: &Path) -> Result<PretrainOutcome> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut model = config.build_model()?;
    let pool = pretrain_pool(config, data)?;
    let frontend = MelFrontend::new(config.mel.clone())?;
    let mut trainer = Trainer::new(config.train_config(), config.seed, &data.corpus, pool, frontend)?;
    let log = trainer.run(&mut model).context("pretraining")?;
    fs::write(out.join(CONFIG_FILE), config.to_json()?)?;
    checkpoint::save(out.join(CHECKPOINT_FILE), &model, config)?;
    write_log(&out.join(TRAIN_LOG_FILE), &log)?;
    Ok(PretrainOutcome { model, log })
}

/// Un-augmented spectrograms of `windows`.
pub fn featurize(config: &ExperimentConfig, data: &Dataset, windows: &[usize]) -> Result<Vec<MelSpectrogram>> {
    let frontend = MelFrontend::new(config.mel.clone())?;
    windows.iter().map(|&w| Ok(frontend.compute(&data.corpus.windows[w].clip)?)).collect()
}

/// Row-major `[windows.len(), dim]` eval-mode embeddings.
pub fn embed_windows(
    model: &mut Model,
    config: &ExperimentConfig,
    data: &Dataset,
    windows: &[usize],
    features: ProbeFeatures,
) -> Result<Vec<f64>> {
    let specs = featurize(config, data, windows)?;
    let through = features == ProbeFeatures::Expander;
    let mut out = Vec::with_capacity(windows.len() * model.output_dim(through));
    for chunk in specs.chunks(EMBED_CHUNK) {
        let refs: Vec<&MelSpectrogram> = chunk.iter().collect();
        out.extend(model.embed(&refs, through)?);
    }
    Ok(out)
}

/// Mean per-dimension standard deviation and mean absolute off-diagonal
/// correlation of a set of embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadStats {
    pub mean_std: f64,
    pub mean_abs_correlation: f64,
}

pub fn spread_stats(values: Vec<f64>, dim: usize) -> Result<SpreadStats> {
    let z = BatchEmbeddings::new(values.len() / dim, dim, values)?;
    let std = z.column_std()?;
    Ok(SpreadStats {
        mean_std: std.iter().sum::<f64>() / dim as f64,
        mean_abs_correlation: z.mean_abs_correlation()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub classes: Vec<String>,
    pub features: ProbeFeatures,
    pub feature_dim: usize,
    pub encoder_parameters: usize,
    pub train_recordings: usize,
    pub test_recordings: usize,
    pub train_windows: usize,
    pub test_windows: usize,
    pub metrics: Metrics,
}

/// Fits the probe on the training side of the configured split and scores
/// the test side.
pub fn probe(model: &mut Model, config: &ExperimentConfig, data: &Dataset) -> Result<ProbeReport> {
    let split: Split = make_split(&data.metas, &config.split)?;
    let train = data.corpus.windows_of(&split.train);
    let test = data.corpus.windows_of(&split.test);
    if train.is_empty() || test.is_empty() {
        bail!("split leaves {} train and {} test windows", train.len(), test.len());
    }
    let labels = |ws: &[usize]| -> Vec<usize> { ws.iter().map(|&w| data.corpus.label(w).unwrap()).collect() };
    let dim = model.output_dim(config.probe_features == ProbeFeatures::Expander);
    let x_train = embed_windows(model, config, data, &train, config.probe_features)?;
    let x_test = embed_windows(model, config, data, &test, config.probe_features)?;
    let fitted = fit_probe(&x_train, dim, &labels(&train), data.classes.len(), &config.probe)?;
    let metrics = evaluate(&fitted, &x_test, &labels(&test))?;
    Ok(ProbeReport {
        classes: data.classes.clone(),
        features: config.probe_features,
        feature_dim: dim,
        encoder_parameters: model.encoder_parameters(),
        train_recordings: split.train.len(),
        test_recordings: split.test.len(),
        train_windows: train.len(),
        test_windows: test.len(),
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub train_windows: usize,
    pub test_windows: usize,
}

impl MetricsRow {
    fn new(model: &str, r: &ProbeReport) -> Self {
        Self {
            model: model.into(),
            accuracy: r.metrics.accuracy,
            weighted_f1: r.metrics.weighted_f1,
            train_windows: r.train_windows,
            test_windows: r.test_windows,
        }
    }
}

/// Probes the checkpoint in `run` and, as a reference row, the same
/// architecture at initialization. Writes `metrics.json` (pretrained) and
/// `metrics.csv` (both).
pub fn probe_run(run: &Path, manifest: Option<&Path>, split: Option<SplitSpec>) -> Result<(ProbeReport, ProbeReport)> {
    let (mut model, mut config) = checkpoint::load(run.join(CHECKPOINT_FILE))?;
    if let Some(m) = manifest {
        config.manifest = m.to_owned();
    }
    if let Some(s) = split {
        config.split = s;
    }
    let data = load_dataset(&config)?;
    let trained = probe(&mut model, &config, &data)?;
    let untrained = probe(&mut config.build_model()?, &config, &data)?;
    fs::write(run.join(METRICS_JSON_FILE), serde_json::to_string_pretty(&trained)? + "\n")?;
    let mut w = csv::Writer::from_path(run.join(METRICS_CSV_FILE))?;
    w.serialize(MetricsRow::new("pretrained", &trained))?;
    w.serialize(MetricsRow::new("untrained", &untrained))?;
    w.flush()?;
    Ok((trained, untrained))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    LossWeights,
    EmbeddingSize,
    LabelFraction,
    AugmentationFamily,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::LossWeights => "loss_weights",
            Self::EmbeddingSize => "embedding_size",
            Self::LabelFraction => "label_fraction",
            Self::AugmentationFamily => "augmentation_family",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub encoder_parameters: usize,
    pub probe_train_recordings: usize,
    pub probe_train_windows: usize,
    pub invariance: f64,
    pub variance: f64,
    pub covariance: f64,
    pub total: f64,
}

fn sweep_row(axis: SweepAxis, value: String, log: &[LogRecord], report: &ProbeReport) -> SweepRow {
    let last = log.iter().rev().find(|r| r.kind == RecordKind::Epoch);
    let pick = |f: fn(&LogRecord) -> f64| last.map_or(f64::NAN, f);
    SweepRow {
        axis: axis.name().into(),
        value,
        accuracy: report.metrics.accuracy,
        weighted_f1: report.metrics.weighted_f1,
        encoder_parameters: report.encoder_parameters,
        probe_train_recordings: report.train_recordings,
        probe_train_windows: report.train_windows,
        invariance: pick(|r| r.invariance),
        variance: pick(|r| r.variance_a + r.variance_b),
        covariance: pick(|r| r.covariance_a + r.covariance_b),
        total: pick(|r| r.total),
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

/// One configuration per axis value, labelled by its value string.
pub fn sweep_cells(config: &ExperimentConfig, axis: SweepAxis) -> Result<Vec<(String, ExperimentConfig)>> {
    let mut cells = Vec::new();
    match axis {
        SweepAxis::LossWeights => {
            let base = match &config.loss {
                LossSpec::Vicreg(w) => w.clone(),
                _ => LossWeights::default(),
            };
            for &[l, m, n] in &config.sweep.loss_weights {
                let mut c = config.clone();
                c.loss = LossSpec::Vicreg(LossWeights { lambda: l, mu: m, nu: n, ..base.clone() });
                cells.push((format!("{};{};{}", fmt_num(l), fmt_num(m), fmt_num(n)), c));
            }
        }
        SweepAxis::EmbeddingSize => {
            for &d in &config.sweep.embedding_sizes {
                let mut c = config.clone();
                c.encoder.set_embedding_dim(d);
                cells.push((d.to_string(), c));
            }
        }
        SweepAxis::LabelFraction => {
            for &f in &config.sweep.label_fractions {
                let mut c = config.clone();
                c.split = SplitSpec::ReducedLabels { base: Box::new(config.split.clone()), keep_fraction: f, seed: config.seed };
                cells.push((fmt_num(f), c));
            }
        }
        SweepAxis::AugmentationFamily => {
            for fam in &config.sweep.augmentation_families {
                let mut c = config.clone();
                c.augmentations = fam.augmentations.clone();
                cells.push((fam.name.clone(), c));
            }
        }
    }
    if cells.is_empty() {
        bail!("sweep axis {} has no values", axis.name());
    }
    for (_, c) in &cells {
        c.validate()?;
    }
    Ok(cells)
}

fn slug(value: &str) -> String {
    value.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

pub fn sweep_csv_path(out: &Path, axis: SweepAxis) -> PathBuf {
    out.join(format!("sweep_{}.csv", axis.name()))
}

/// Pretrains and probes every cell of `axis` under `out/sweep/<axis>/`.
/// Label-fraction cells share one pretraining run, since the reduced split
/// only affects the probe.
pub fn sweep(config: &ExperimentConfig, axis: SweepAxis, out: &Path) -> Result<Vec<SweepRow>> {
    let cells = sweep_cells(config, axis)?;
    let data = load_dataset(config)?;
    let mut rows = Vec::with_capacity(cells.len());
    let mut shared: Option<PretrainOutcome> = None;
    for (value, cell) in cells {
        let dir = out.join("sweep").join(axis.name()).join(slug(&value));
        let outcome = match (&shared, axis) {
            (Some(o), SweepAxis::LabelFraction) => o.clone(),
            _ => {
                let o = pretrain(&cell, &data, &dir)?;
                if axis == SweepAxis::LabelFraction {
                    shared = Some(o.clone());
                }
                o
            }
        };
        let mut model = outcome.model.clone();
        let report = probe(&mut model, &cell, &data)?;
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(METRICS_JSON_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
        rows.push(sweep_row(axis, value, &outcome.log, &report));
    }
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(sweep_csv_path(out, axis))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}
