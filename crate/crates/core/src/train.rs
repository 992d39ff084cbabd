//! Pretraining loop: positive pairs, two encoder passes, loss, optimizer step.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::audio::{window_fixed, AudioClip};
use crate::augment::{sample_pair, AugmentationSpec, RecordingContext};
use crate::dsp::{MelFrontend, MelSpectrogram};
use crate::error::{invalid, shape_err, Error, Result};
use crate::losses::{ntxent_loss, supcon_loss, vicreg_loss, BatchEmbeddings, LabeledBatch, LossWeights};
use crate::nn::{BufferStore, Encoder, EncoderSpec, Expander, ExpanderConfig, Forward, Graph, ParamStore, Var};
use crate::optim::{Optimizer, OptimizerSpec, PlateauScheduler};
use crate::rng::{stream, STREAM_AUGMENT, STREAM_DATA_ORDER, STREAM_INIT};

/// Objective used during pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LossSpec {
    Vicreg(LossWeights),
    Ntxent { temperature: f64 },
    /// Needs labelled recordings.
    Supcon { temperature: f64 },
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::Vicreg(LossWeights::default())
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Vicreg(w) => w.validate(),
            Self::Ntxent { temperature } | Self::Supcon { temperature } => {
                if *temperature > 0.0 && temperature.is_finite() {
                    Ok(())
                } else {
                    Err(invalid!("temperature must be positive"))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossSpec,
    pub optimizer: OptimizerSpec,
    pub scheduler: PlateauScheduler,
    pub augmentations: Vec<AugmentationSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 10,
            loss: LossSpec::default(),
            optimizer: OptimizerSpec::default(),
            scheduler: PlateauScheduler::default(),
            augmentations: AugmentationSpec::default_family(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.batch_size < 2 || self.epochs == 0 {
            return Err(invalid!("batch_size must be >= 2 and epochs >= 1"));
        }
        if self.augmentations.is_empty() {
            return Err(invalid!("augmentation family is empty"));
        }
        for a in &self.augmentations {
            a.validate(sample_rate)?;
        }
        self.scheduler.validate()?;
        self.loss.validate()
    }
}

/// A decoded recording at the working rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub label: Option<usize>,
    pub timestamp: Option<i64>,
}

/// An anchor window and the recording it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub recording: usize,
    pub clip: AudioClip,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub recordings: Vec<Recording>,
    pub windows: Vec<Window>,
}

impl Corpus {
    pub fn new(recordings: Vec<Recording>, window_s: f64) -> Result<Self> {
        let mut windows = Vec::new();
        for (i, r) in recordings.iter().enumerate() {
            let clip = AudioClip::new(r.samples.clone(), r.sample_rate)?.with_recording(r.id.clone(), r.timestamp);
            windows.extend(window_fixed(&clip, window_s)?.into_iter().map(|clip| Window { recording: i, clip }));
        }
        Ok(Self { recordings, windows })
    }

    pub fn label(&self, window: usize) -> Option<usize> {
        self.recordings[self.windows[window].recording].label
    }

    /// Windows whose recording id is in `ids`, in corpus order.
    pub fn windows_of(&self, ids: &[String]) -> Vec<usize> {
        (0..self.windows.len()).filter(|&w| ids.contains(&self.recordings[self.windows[w].recording].id)).collect()
    }
}

/// Encoder, expander and their tensors.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder_spec: EncoderSpec,
    pub encoder: Encoder,
    pub expander: Expander,
    pub params: ParamStore,
    pub buffers: BufferStore,
}

impl Model {
    pub fn new(encoder_spec: &EncoderSpec, expander: &ExpanderConfig, seed: u64) -> Result<Self> {
        let mut rng = stream(seed, STREAM_INIT, 0);
        let mut params = ParamStore::new();
        let mut buffers = BufferStore::new();
        let encoder = Encoder::new(encoder_spec, &mut params, &mut buffers, &mut rng)?;
        let expander = Expander::new(expander.clone(), encoder.embedding_dim(), &mut params, &mut rng)?;
        Ok(Self { encoder_spec: encoder_spec.clone(), encoder, expander, params, buffers })
    }

    pub fn encoder_parameters(&self) -> usize {
        self.params.numel(self.encoder.param_range())
    }

    /// Embeddings (`[B, d]` row-major) in evaluation mode, optionally passed
    /// through the expander.
    pub fn embed(&mut self, specs: &[&MelSpectrogram], through_expander: bool) -> Result<Vec<f64>> {
        let mut graph = Graph::new();
        let vars = self.params.bind(&mut graph)?;
        let input = graph.leaf(self.encoder.input_tensor(specs)?)?;
        let mut fx = Forward { graph: &mut graph, params: &vars, buffers: &mut self.buffers, train: false };
        let mut out = self.encoder.forward(&mut fx, input)?;
        if through_expander {
            out = self.expander.forward(&mut fx, out)?;
        }
        Ok(graph.value(out).data().to_vec())
    }

    pub fn output_dim(&self, through_expander: bool) -> usize {
        if through_expander {
            self.expander.config.output_dim
        } else {
            self.encoder.embedding_dim()
        }
    }
}

/// Row kind in the training log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Step,
    Epoch,
}

/// Loss components of one step, or their epoch means. Contrastive losses
/// report only `total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub kind: RecordKind,
    pub epoch: usize,
    /// Global step index; for epoch rows, the number of steps taken so far.
    pub step: usize,
    pub invariance: f64,
    pub variance_a: f64,
    pub variance_b: f64,
    pub covariance_a: f64,
    pub covariance_b: f64,
    pub total: f64,
    pub lr: f64,
}

/// Stacked two-view features for one batch.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub windows: Vec<usize>,
    pub view_a: Vec<MelSpectrogram>,
    pub view_b: Vec<MelSpectrogram>,
}

pub struct Trainer<'c> {
    pub config: TrainConfig,
    pub seed: u64,
    pub corpus: &'c Corpus,
    /// Indices into `corpus.windows` used for training.
    pub pool: Vec<usize>,
    pub frontend: MelFrontend,
    pub optimizer: Box<dyn Optimizer>,
    pub scheduler: PlateauScheduler,
    pub epoch: usize,
    pub step: usize,
}

impl<'c> Trainer<'c> {
    pub fn new(config: TrainConfig, seed: u64, corpus: &'c Corpus, pool: Vec<usize>, frontend: MelFrontend) -> Result<Self> {
        config.validate(frontend.config.sample_rate)?;
        if pool.len() < 2 {
            return Err(invalid!("need at least two training windows, got {}", pool.len()));
        }
        if pool.iter().any(|&w| w >= corpus.windows.len()) {
            return Err(invalid!("window index out of range"));
        }
        if matches!(config.loss, LossSpec::Supcon { .. }) && pool.iter().any(|&w| corpus.label(w).is_none()) {
            return Err(invalid!("supervised contrastive training needs labelled windows"));
        }
        let optimizer = config.optimizer.build()?;
        let scheduler = config.scheduler.clone();
        Ok(Self { config, seed, corpus, pool, frontend, optimizer, scheduler, epoch: 0, step: 0 })
    }

    /// Shuffled batches of window indices for `epoch`; a trailing batch with
    /// fewer than two windows is dropped.
    pub fn batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order = self.pool.clone();
        order.shuffle(&mut stream(self.seed, STREAM_DATA_ORDER, epoch as u64));
        order.chunks(self.config.batch_size).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
    }

    /// Augments window `w` for `epoch` and featurizes both views. Depends
    /// only on its arguments, so calls may run in any order.
    pub fn prepare_pair(&self, epoch: usize, w: usize) -> Result<(MelSpectrogram, MelSpectrogram)> {
        let window = &self.corpus.windows[w];
        let rec = &self.corpus.recordings[window.recording];
        let stream_id = (epoch * self.corpus.windows.len() + w) as u64;
        let mut rng = stream(self.seed, STREAM_AUGMENT, stream_id);
        let ctx = RecordingContext::new(&rec.samples, rec.sample_rate, &window.clip)?;
        let pair = sample_pair(&self.config.augmentations, &ctx, &window.clip, &mut rng, stream_id)?;
        Ok((self.frontend.compute(&pair.view_a)?, self.frontend.compute(&pair.view_b)?))
    }

    pub fn prepare_batch(&self, epoch: usize, windows: &[usize]) -> Result<PreparedBatch> {
        let mut view_a = Vec::with_capacity(windows.len());
        let mut view_b = Vec::with_capacity(windows.len());
        for &w in windows {
            let (a, b) = self.prepare_pair(epoch, w)?;
            view_a.push(a);
            view_b.push(b);
        }
        Ok(PreparedBatch { windows: windows.to_vec(), view_a, view_b })
    }

    /// One optimizer step on a prepared batch.
    pub fn train_step(&mut self, model: &mut Model, batch: &PreparedBatch) -> Result<LogRecord> {
        let n = batch.windows.len();
        if n < 2 || batch.view_a.len() != n || batch.view_b.len() != n {
            return Err(shape_err!("batch of {n} windows with {}/{} views", batch.view_a.len(), batch.view_b.len()));
        }
        let mut graph = Graph::new();
        let vars = model.params.bind(&mut graph)?;
        let (za, zb) = {
            let mut fx = Forward { graph: &mut graph, params: &vars, buffers: &mut model.buffers, train: true };
            let mut pass = |views: &[MelSpectrogram]| -> Result<Var> {
                let refs: Vec<&MelSpectrogram> = views.iter().collect();
                let x = fx.graph.leaf(model.encoder.input_tensor(&refs)?)?;
                let e = model.encoder.forward(&mut fx, x)?;
                model.expander.forward(&mut fx, e)
            };
            (pass(&batch.view_a)?, pass(&batch.view_b)?)
        };
        let d = graph.shape(za)[1];
        let a = BatchEmbeddings::new(n, d, graph.value(za).data().to_vec())?;
        let b = BatchEmbeddings::new(n, d, graph.value(zb).data().to_vec())?;
        let lr = self.optimizer.lr();
        let mut record = LogRecord {
            kind: RecordKind::Step,
            epoch: self.epoch,
            step: self.step,
            invariance: 0.0,
            variance_a: 0.0,
            variance_b: 0.0,
            covariance_a: 0.0,
            covariance_b: 0.0,
            total: 0.0,
            lr,
        };
        let (grad_a, grad_b) = match &self.config.loss {
            LossSpec::Vicreg(w) => {
                let out = vicreg_loss(&a, &b, w)?;
                record.invariance = out.invariance;
                record.variance_a = out.variance_a;
                record.variance_b = out.variance_b;
                record.covariance_a = out.covariance_a;
                record.covariance_b = out.covariance_b;
                record.total = out.total;
                (out.grad_a, out.grad_b)
            }
            LossSpec::Ntxent { temperature } => {
                let out = ntxent_loss(&stack(&a, &b)?, *temperature)?;
                record.total = out.mean;
                split_mean_grad(out.grad, n, d)
            }
            LossSpec::Supcon { temperature } => {
                let labels: Vec<usize> = batch.windows.iter().map(|&w| self.corpus.label(w).unwrap_or(0)).collect();
                let lb = LabeledBatch {
                    embeddings: stack(&a, &b)?,
                    labels: labels.iter().chain(&labels).copied().collect(),
                    temperature: *temperature,
                };
                let out = supcon_loss(&lb, true)?;
                record.total = out.mean;
                split_mean_grad(out.grad, n, d)
            }
        };
        if !record.total.is_finite() {
            return Err(Error::NonFinite(String::from("training loss")));
        }
        let grads = graph.backward(&[(za, &grad_a), (zb, &grad_b)])?;
        let per_param: Vec<Vec<f64>> = vars
            .iter()
            .zip(model.params.iter())
            .map(|(v, (_, _, p))| grads.get(*v).map_or_else(|| vec![0.0; p.numel()], <[f64]>::to_vec))
            .collect();
        self.optimizer.step(&mut model.params, &per_param)?;
        self.step += 1;
        Ok(record)
    }

    /// Closes an epoch: feeds the mean total loss to the scheduler and returns
    /// the epoch row (with the learning rate used during the epoch).
    pub fn finish_epoch(&mut self, steps: &[LogRecord]) -> Result<LogRecord> {
        if steps.is_empty() {
            return Err(invalid!("epoch {} had no steps", self.epoch));
        }
        let k = steps.len() as f64;
        let mean = |f: fn(&LogRecord) -> f64| steps.iter().map(f).sum::<f64>() / k;
        let lr = self.optimizer.lr();
        let record = LogRecord {
            kind: RecordKind::Epoch,
            epoch: self.epoch,
            step: self.step,
            invariance: mean(|r| r.invariance),
            variance_a: mean(|r| r.variance_a),
            variance_b: mean(|r| r.variance_b),
            covariance_a: mean(|r| r.covariance_a),
            covariance_b: mean(|r| r.covariance_b),
            total: mean(|r| r.total),
            lr,
        };
        let next = self.scheduler.step(record.total, lr);
        self.optimizer.set_lr(next);
        self.epoch += 1;
        Ok(record)
    }

    /// Runs every remaining epoch with sequential featurization.
    pub fn run(&mut self, model: &mut Model) -> Result<Vec<LogRecord>> {
        let mut log = Vec::new();
        while self.epoch < self.config.epochs {
            let mut steps = Vec::new();
            for windows in self.batches(self.epoch) {
                let batch = self.prepare_batch(self.epoch, &windows)?;
                let record = self
                    .train_step(model, &batch)
                    .map_err(|e| Error::TrainingAborted { step: self.step, reason: e.to_string() })?;
                steps.push(record);
            }
            let epoch = self.finish_epoch(&steps)?;
            log.extend(steps);
            log.push(epoch);
        }
        Ok(log)
    }
}

fn stack(a: &BatchEmbeddings, b: &BatchEmbeddings) -> Result<BatchEmbeddings> {
    let values = a.values.iter().chain(&b.values).copied().collect();
    BatchEmbeddings::new(a.n + b.n, a.d, values)
}

/// Splits the gradient of a summed loss over `2n` rows into the two views,
/// rescaled to the gradient of the per-anchor mean.
fn split_mean_grad(mut grad: Vec<f64>, n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let k = 1.0 / (2 * n) as f64;
    grad.iter_mut().for_each(|g| *g *= k);
    let b = grad.split_off(n * d);
    (grad, b)
}
