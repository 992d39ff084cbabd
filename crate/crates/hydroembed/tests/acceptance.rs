//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, Result};
use hydroembed::config::ProbeFeatures;
use hydroembed::dataset::Dataset;
use hydroembed::pipeline::{
    embed_windows, pretrain, probe, spread_stats, SpreadStats, CHECKPOINT_FILE, TRAIN_LOG_FILE,
};
use hydroembed::synth::generate_synthetic_dataset;
use hydroembed::timing::inference_timer;
use hydroembed::ExperimentConfig;
use hydroembed_core::audio::AudioClip;
use hydroembed_core::augment::*;
use hydroembed_core::dsp::filter::Butterworth;
use hydroembed_core::dsp::mel::*;
use hydroembed_core::losses::*;
use hydroembed_core::nn::gradcheck::{check, relative_error};
use hydroembed_core::nn::*;
use hydroembed_core::optim::*;
use hydroembed_core::probe::{evaluate, fit_probe, make_split};
use hydroembed_core::rng::{stream, StreamRng};
use hydroembed_core::train::{LogRecord, Model, RecordKind};
use rand::Rng;
use rustfft::{num_complex::Complex, FftPlanner};

const DESK_CONFIG: &str = include_str!("../../../configs/desk.json");
const DESK_SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

fn main() {
    let started = Instant::now();
    let desk = OnceCell::new();
    let desk = || desk.get_or_init(|| DeskRuns::run().map_err(|e| format!("{e:#}")));
    let criteria: Vec<(&str, Box<dyn Fn() -> Result<Outcome> + '_>)> = vec![
        ("gradient suite", Box::new(gradient_suite)),
        ("loss oracle equivalence", Box::new(loss_oracles)),
        ("hand-value checks", Box::new(hand_values)),
        ("anti-collapse", Box::new(|| anti_collapse(desk_ref(desk())?))),
        ("loss-weight sensitivity", Box::new(|| weight_sensitivity(desk_ref(desk())?))),
        ("end-to-end probe", Box::new(|| end_to_end_probe(desk_ref(desk())?))),
        ("dsp checks", Box::new(dsp_checks)),
        ("augmentation checks", Box::new(augmentation_checks)),
        ("optimizer checks", Box::new(|| optimizer_checks(desk_ref(desk())?))),
        ("determinism", Box::new(|| determinism(desk_ref(desk())?))),
        ("timing harness", Box::new(timing_harness)),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {:>2} {name}: {detail} ({:.1} s)", i + 1, t.elapsed().as_secs_f64());
        if !pass {
            failed.push(i + 1);
        }
    }
    println!("acceptance: {} of {} passed in {:.0} s", criteria.len() - failed.len(), criteria.len(), started.elapsed().as_secs_f64());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

fn desk_ref(r: &Result<DeskRuns, String>) -> Result<&DeskRuns> {
    r.as_ref().map_err(|e| anyhow!("desk runs failed: {e}"))
}

fn randn(shape: &[usize], r: &mut StreamRng) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

// ---------------------------------------------------------------- 1

fn op_error(seed: u64, inputs: Vec<Tensor>, f: impl FnMut(&mut Graph, &[Var]) -> hydroembed_core::Result<Var>) -> Result<f64> {
    Ok(check(&inputs, seed, None, f)?.max_rel_error())
}

fn model_error(
    seed: u64,
    input: Tensor,
    store: &ParamStore,
    buffers: &BufferStore,
    max_coords: Option<usize>,
    mut f: impl FnMut(&mut Forward<'_>, Var) -> hydroembed_core::Result<Var>,
) -> Result<f64> {
    let mut inputs = vec![input];
    inputs.extend(store.iter().map(|(_, _, t)| t.clone()));
    let report = check(&inputs, seed, max_coords, |g, v| {
        let mut bufs = buffers.clone();
        let mut fx = Forward { graph: g, params: &v[1..], buffers: &mut bufs, train: true };
        f(&mut fx, v[0])
    })?;
    Ok(report.max_rel_error())
}

fn numeric_grad(values: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let mut v = values.to_vec();
    (0..v.len())
        .map(|k| {
            let o = v[k];
            v[k] = o + h;
            let up = f(&v);
            v[k] = o - h;
            let down = f(&v);
            v[k] = o;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn emb(n: usize, d: usize, values: Vec<f64>) -> BatchEmbeddings {
    BatchEmbeddings::new(n, d, values).unwrap()
}

fn gradient_suite() -> Result<Outcome> {
    let t = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    let toy = EncoderConfig {
        n_mels: 6,
        n_frames: 8,
        model_dim: 16,
        n_heads: 4,
        conv_kernel: 3,
        ffn_dim: 32,
        n_blocks: 2,
        flatten_dim: 0,
        embedding_dim: 5,
        input_scale: 1.0,
    };
    for seed in 0..20u64 {
        let mut r = stream(seed, "acceptance-grad", 0);
        let x = randn(&[3, 6], &mut r);
        let y = randn(&[3, 6], &mut r);
        note("relu", op_error(seed, vec![x.clone()], |g, v| g.relu(v[0]))?);
        note("swish", op_error(seed, vec![x.clone()], |g, v| g.swish(v[0]))?);
        note("glu", op_error(seed, vec![x.clone()], |g, v| g.glu(v[0]))?);
        note("softmax", op_error(seed, vec![x.clone()], |g, v| g.softmax(v[0]))?);
        note("residual_add", op_error(seed, vec![x.clone(), y], |g, v| g.add(v[0], v[1]))?);
        note("flatten", op_error(seed, vec![x], |g, v| g.flatten(v[0]))?);

        let x = randn(&[2, 3, 5], &mut r);
        let (w, b) = (randn(&[5, 4], &mut r), randn(&[4], &mut r));
        note("linear", op_error(seed, vec![x.clone(), w, b], |g, v| g.linear(v[0], v[1], Some(v[2])))?);
        let (gamma, beta) = (randn(&[5], &mut r), randn(&[5], &mut r));
        note(
            "layer_norm",
            op_error(seed, vec![x.clone(), gamma.clone(), beta.clone()], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5))?,
        );
        note(
            "batch_norm",
            op_error(seed, vec![x.clone(), gamma, beta], |g, v| Ok(g.batch_norm_train(v[0], v[1], v[2], [6, 5, 1], 1e-5)?.0))?,
        );

        let x = randn(&[2, 7, 3], &mut r);
        let (w, b) = (randn(&[5, 3], &mut r), randn(&[3], &mut r));
        note("depthwise_conv1d", op_error(seed, vec![x.clone(), w, b], |g, v| g.depthwise_conv1d(v[0], v[1], v[2]))?);
        let (w, b) = (randn(&[3, 4], &mut r), randn(&[4], &mut r));
        note("pointwise_conv", op_error(seed, vec![x.clone(), w, b], |g, v| g.linear(v[0], v[1], Some(v[2])))?);
        note("mean_pool", op_error(seed, vec![x], |g, v| g.mean_pool_time(v[0]))?);
        let qkv = randn(&[2, 5, 12], &mut r);
        note("attention", op_error(seed, vec![qkv], |g, v| g.attention(v[0], 2))?);
        let img = randn(&[2, 2, 5, 6], &mut r);
        let (k, kb) = (randn(&[3, 2, 3, 3], &mut r), randn(&[3], &mut r));
        note("conv2d", op_error(seed, vec![img.clone(), k, kb], |g, v| g.conv2d(v[0], v[1], v[2], 2, 1))?);
        note("global_avg_pool", op_error(seed, vec![img], |g, v| g.global_avg_pool(v[0]))?);

        let mut cfg = toy.clone();
        if seed % 2 == 0 {
            cfg.flatten_dim = cfg.n_frames * cfg.model_dim;
        }
        let mut store = ParamStore::new();
        let mut buffers = BufferStore::new();
        let enc = ConformerEncoder::new(cfg, &mut store, &mut buffers, &mut r)?;
        let x = randn(&[2, 8, 6], &mut r);
        note("conformer encoder", model_error(seed, x, &store, &buffers, Some(16), |fx, x| enc.forward(fx, x))?);

        let bcfg = BaselineConfig {
            n_mels: 8,
            n_frames: 6,
            stem_channels: 2,
            stage_channels: vec![2, 3],
            blocks_per_stage: 2,
            embedding_dim: 4,
            input_scale: 1.0,
        };
        let mut store = ParamStore::new();
        let mut buffers = BufferStore::new();
        let enc = BaselineEncoder::new(bcfg, &mut store, &mut buffers, &mut r)?;
        let x = randn(&[3, 1, 8, 6], &mut r);
        note("baseline encoder", model_error(seed, x, &store, &buffers, Some(16), |fx, x| enc.forward(fx, x))?);

        let mut store = ParamStore::new();
        let exp = Expander::new(ExpanderConfig { hidden_dim: 7, output_dim: 6, activation: Activation::Relu }, 5, &mut store, &mut r)?;
        let x = randn(&[4, 5], &mut r);
        note("expander", model_error(seed, x, &store, &BufferStore::new(), None, |fx, x| exp.forward(fx, x))?);

        let (n, d) = (6, 4);
        let a = emb(n, d, (0..n * d).map(|_| r.gen_range(-2.0..2.0)).collect());
        let b = emb(n, d, (0..n * d).map(|_| r.gen_range(-2.0..2.0)).collect());
        let w = LossWeights::new(5.0, 5.0, 1.0);
        let out = vicreg_loss(&a, &b, &w)?;
        let num = numeric_grad(&a.values, |v| vicreg_loss(&emb(n, d, v.to_vec()), &b, &w).unwrap().total);
        note("vicreg", relative_error(&out.grad_a, &num));
        let nt = ntxent_loss(&a, 0.3)?;
        let num = numeric_grad(&a.values, |v| ntxent_loss(&emb(n, d, v.to_vec()), 0.3).unwrap().sum);
        note("ntxent", relative_error(&nt.grad, &num));
        let labels = vec![0, 0, 1, 1, 1, 0];
        let batch = LabeledBatch { embeddings: a.clone(), labels: labels.clone(), temperature: 0.5 };
        let sc = supcon_loss(&batch, true)?;
        let num = numeric_grad(&a.values, |v| {
            let bb = LabeledBatch { embeddings: emb(n, d, v.to_vec()), labels: labels.clone(), temperature: 0.5 };
            supcon_loss(&bb, true).unwrap().sum
        });
        note("supcon", relative_error(&sc.grad, &num));
    }
    let elapsed = t.elapsed();
    let (name, max) = worst.iter().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, v)| (*k, *v)).unwrap();
    outcome(
        max <= 1e-4 && elapsed < Duration::from_secs(120),
        format!("{} checks x 20 seeds, max rel err {max:.2e} ({name}), {:.1} s", worst.len(), elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2

fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nx * ny)
}

fn column(z: &BatchEmbeddings, j: usize) -> Vec<f64> {
    (0..z.n).map(|i| z.values[i * z.d + j]).collect()
}

fn brute_vicreg(a: &BatchEmbeddings, b: &BatchEmbeddings, w: &LossWeights) -> f64 {
    let var = |z: &BatchEmbeddings| {
        let mut s = 0.0;
        for j in 0..z.d {
            let c = column(z, j);
            let m = c.iter().sum::<f64>() / z.n as f64;
            let v = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (z.n - 1) as f64;
            let sd = (v + w.epsilon).sqrt();
            s += match w.variance_form {
                VarianceForm::Abs => (w.gamma - sd).abs(),
                VarianceForm::Hinge => (w.gamma - sd).max(0.0),
            };
        }
        s / z.d as f64
    };
    let cov = |z: &BatchEmbeddings| {
        let mut s = 0.0;
        for p in 0..z.d {
            for q in 0..z.d {
                if p == q {
                    continue;
                }
                let (cp, cq) = (column(z, p), column(z, q));
                let (mp, mq) = (cp.iter().sum::<f64>() / z.n as f64, cq.iter().sum::<f64>() / z.n as f64);
                let c: f64 = (0..z.n).map(|i| (cp[i] - mp) * (cq[i] - mq)).sum::<f64>() / (z.n - 1) as f64;
                s += c * c;
            }
        }
        s / z.d as f64
    };
    let inv = (0..a.n).map(|i| -cosine(a.row(i), b.row(i))).sum::<f64>() / a.n as f64;
    w.lambda * inv + w.mu * (var(a) + var(b)) + w.nu * (cov(a) + cov(b))
}

fn brute_supcon(z: &BatchEmbeddings, positives: &dyn Fn(usize, usize) -> bool, tau: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..z.n {
        let mut den = 0.0;
        for a in 0..z.n {
            if a != i {
                den += (cosine(z.row(i), z.row(a)) / tau).exp();
            }
        }
        let mut inner = 0.0;
        let mut count = 0;
        for p in 0..z.n {
            if p != i && positives(i, p) {
                inner += ((cosine(z.row(i), z.row(p)) / tau).exp() / den).ln();
                count += 1;
            }
        }
        total -= inner / count as f64;
    }
    total
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn loss_oracles() -> Result<Outcome> {
    let mut r = stream(2, "acceptance-oracle", 0);
    let (mut e_v, mut e_n, mut e_s, mut e_reduce) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let (n, d) = (2 * r.gen_range(2..5), r.gen_range(2..6));
        let a = emb(n, d, (0..n * d).map(|_| r.gen_range(-2.0..2.0)).collect());
        let b = emb(n, d, (0..n * d).map(|_| r.gen_range(-2.0..2.0)).collect());
        let mut w = LossWeights::new(r.gen_range(0.0..25.0), r.gen_range(0.0..25.0), r.gen_range(0.0..2.0));
        if r.gen_bool(0.5) {
            w.variance_form = VarianceForm::Hinge;
        }
        e_v = e_v.max(rel(vicreg_loss(&a, &b, &w)?.total, brute_vicreg(&a, &b, &w)));
        let tau = r.gen_range(0.05..1.0);
        let half = n / 2;
        e_n = e_n.max(rel(ntxent_loss(&a, tau)?.sum, brute_supcon(&a, &|i, p| p == (i + half) % n, tau)));
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let batch = LabeledBatch { embeddings: b.clone(), labels: labels.clone(), temperature: tau };
        e_s = e_s.max(rel(supcon_loss(&batch, true)?.sum, brute_supcon(&b, &|i, p| labels[i] == labels[p], tau)));
        let pair_labels: Vec<usize> = (0..n).map(|i| i % half).collect();
        let batch = LabeledBatch { embeddings: a.clone(), labels: pair_labels, temperature: tau };
        e_reduce = e_reduce.max(rel(supcon_loss(&batch, true)?.sum, ntxent_loss(&a, tau)?.sum));
    }
    let max = e_v.max(e_n).max(e_s).max(e_reduce);
    outcome(
        max <= 1e-10,
        format!("50 batches each: vicreg {e_v:.1e}, ntxent {e_n:.1e}, supcon {e_s:.1e}, supcon with |P(i)| = 1 vs ntxent {e_reduce:.1e}"),
    )
}

// ---------------------------------------------------------------- 3

fn hand_values() -> Result<Outcome> {
    let same = emb(4, 3, [0.3, -1.0, 2.0].repeat(4));
    let var = variance_term(&same, 1.0, 1e-4, VarianceForm::Abs)?;
    let a = 0.5f64.sqrt();
    let cov = covariance_term(&emb(2, 2, vec![a, a, -a, -a]))?;
    let mut r = stream(3, "acceptance-hand", 0);
    let z = emb(5, 4, (0..20).map(|_| r.gen_range(-1.0..1.0)).collect());
    let inv = invariance_term(&z, &z)?;
    let ident = emb(4, 3, [0.5, -0.2, 0.1].repeat(4));
    let sc = supcon_loss(&LabeledBatch { embeddings: ident, labels: vec![0; 4], temperature: 0.5 }, true)?.sum;
    let pass = (var - 0.99).abs() <= 1e-12
        && (cov - 1.0).abs() <= 1e-12
        && (inv + 1.0).abs() <= 1e-12
        && (sc - 4.0 * 3f64.ln()).abs() <= 1e-9;
    outcome(pass, format!("variance {var:.12}, covariance {cov:.12}, invariance {inv:.12}, supcon {sc:.9} (4 log 3 = {:.9})", 4.0 * 3f64.ln()))
}

// ---------------------------------------------------------------- desk runs

struct DeskRun {
    out: PathBuf,
    log: Vec<LogRecord>,
    model: Model,
    elapsed: Duration,
    encoder: SpreadStats,
    expander: SpreadStats,
}

struct DeskRuns {
    _dir: tempfile::TempDir,
    base: ExperimentConfig,
    data: Dataset,
    runs: BTreeMap<String, DeskRun>,
}

impl DeskRuns {
    fn run() -> Result<Self> {
        let dir = tempfile::tempdir()?;
        let mut base = ExperimentConfig::from_json(DESK_CONFIG)?;
        let manifest = generate_synthetic_dataset(&base.synthetic, base.seed, dir.path().join("data"))?;
        base.manifest = dir.path().join("data").join("manifest.jsonl");
        let data = Dataset::load(&manifest, base.window_s)?;
        let mut runs = BTreeMap::new();
        let mut plan = vec![("invariance-only".to_string(), (1.0, 0.0, 0.0), base.seed)];
        for &s in &DESK_SEEDS {
            plan.push((format!("5-5-1-seed{s}"), (5.0, 5.0, 1.0), s));
            plan.push((format!("25-25-1-seed{s}"), (25.0, 25.0, 1.0), s));
        }
        plan.push(("5-5-1-seed0-rerun".to_string(), (5.0, 5.0, 1.0), 0));
        for (name, (l, m, n), seed) in plan {
            let mut config = base.clone();
            config.seed = seed;
            let mut w = config.loss_weights().copied().unwrap_or_default();
            (w.lambda, w.mu, w.nu) = (l, m, n);
            config.loss = hydroembed_core::train::LossSpec::Vicreg(w);
            let out = dir.path().join("runs").join(&name);
            let t = Instant::now();
            let mut outcome = pretrain(&config, &data, &out)?;
            let elapsed = t.elapsed();
            let all: Vec<usize> = (0..data.corpus.windows.len()).collect();
            let enc = embed_windows(&mut outcome.model, &config, &data, &all, ProbeFeatures::Encoder)?;
            let exp = embed_windows(&mut outcome.model, &config, &data, &all, ProbeFeatures::Expander)?;
            let encoder = spread_stats(enc, outcome.model.output_dim(false))?;
            let expander = spread_stats(exp, outcome.model.output_dim(true))?;
            eprintln!(
                "desk run {name}: {:.0} s, encoder std {:.3} |corr| {:.3}, expander std {:.3} |corr| {:.3}",
                elapsed.as_secs_f64(),
                encoder.mean_std,
                encoder.mean_abs_correlation,
                expander.mean_std,
                expander.mean_abs_correlation
            );
            runs.insert(name, DeskRun { out, log: outcome.log, model: outcome.model, elapsed, encoder, expander });
        }
        Ok(Self { _dir: dir, base, data, runs })
    }

    fn get(&self, name: &str) -> Result<&DeskRun> {
        self.runs.get(name).ok_or_else(|| anyhow!("missing desk run {name}"))
    }
}

// ---------------------------------------------------------------- 4

fn anti_collapse(desk: &DeskRuns) -> Result<Outcome> {
    let inv = desk.get("invariance-only")?;
    let main = desk.get("5-5-1-seed0")?;
    let slowest = inv.elapsed.max(main.elapsed);
    let pass = inv.encoder.mean_std < 0.05
        && (0.5..=1.5).contains(&main.expander.mean_std)
        && main.expander.mean_abs_correlation < 0.3
        && slowest < Duration::from_secs(600);
    outcome(
        pass,
        format!(
            "(1,0,0) embedding std {:.4} (< 0.05); (5,5,1) expander std {:.3} (in [0.5, 1.5]), |corr| {:.3} (< 0.3); slowest run {:.0} s",
            inv.encoder.mean_std,
            main.expander.mean_std,
            main.expander.mean_abs_correlation,
            slowest.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn weight_sensitivity(desk: &DeskRuns) -> Result<Outcome> {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in DESK_SEEDS {
        let low = desk.get(&format!("5-5-1-seed{s}"))?.encoder.mean_abs_correlation;
        let high = desk.get(&format!("25-25-1-seed{s}"))?.encoder.mean_abs_correlation;
        pass &= high > low;
        parts.push(format!("seed {s}: {high:.3} vs {low:.3}"));
    }
    outcome(pass, format!("embedding |corr| (25,25,1) vs (5,5,1): {}", parts.join("; ")))
}

// ---------------------------------------------------------------- 6

/// Log energy in octave bands from 31.25 Hz to 8 kHz, computed with an
/// independent FFT of the Hann-windowed waveform.
fn octave_features(samples: &[f64], rate: f64) -> Vec<f64> {
    let n = samples.len();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .enumerate()
        .map(|(i, v)| Complex::new(v * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut edges = vec![31.25];
    while *edges.last().unwrap() < rate / 2.0 {
        edges.push(edges.last().unwrap() * 2.0);
    }
    edges
        .windows(2)
        .map(|e| {
            let lo = (e[0] * n as f64 / rate).ceil() as usize;
            let hi = ((e[1] * n as f64 / rate).ceil() as usize).min(n / 2);
            let energy: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            10.0 * (energy + 1e-12).log10()
        })
        .collect()
}

fn end_to_end_probe(desk: &DeskRuns) -> Result<Outcome> {
    let base = &desk.base;
    let run = desk.get("5-5-1-seed0")?;
    let mut model = run.model.clone();
    let report = probe(&mut model, base, &desk.data)?;

    let split = make_split(&desk.data.metas, &base.split)?;
    let corpus = &desk.data.corpus;
    let train = corpus.windows_of(&split.train);
    let test = corpus.windows_of(&split.test);
    let feats = |ws: &[usize]| -> Vec<f64> {
        ws.iter()
            .flat_map(|&w| {
                let clip = &corpus.windows[w].clip;
                octave_features(&clip.samples, clip.sample_rate as f64)
            })
            .collect()
    };
    let labels = |ws: &[usize]| -> Vec<usize> { ws.iter().map(|&w| corpus.label(w).unwrap()).collect() };
    let dim = octave_features(&corpus.windows[0].clip.samples, 16_000.0).len();
    let fitted = fit_probe(&feats(&train), dim, &labels(&train), desk.data.classes.len(), &base.probe)?;
    let oracle = evaluate(&fitted, &feats(&test), &labels(&test))?;

    let pass = base.epochs <= 10 && base.batch_size == 64 && report.metrics.accuracy >= 0.95 && oracle.accuracy >= 0.99;
    outcome(
        pass,
        format!(
            "time-wise split {}/{} recordings: pretrained probe {:.4} (>= 0.95), octave-band oracle {:.4} (>= 0.99)",
            report.train_recordings, report.test_recordings, report.metrics.accuracy, oracle.accuracy
        ),
    )
}

// ---------------------------------------------------------------- 7

fn dsp_checks() -> Result<Outcome> {
    let mel1000 = hz_to_mel(1000.0)?;
    let cfg = MelConfig::default();
    let fb = MelFilterbank::from_config(&cfg)?;
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let rows = fb.weights();
    let mut triangular = rows.len() == 128;
    for (k, row) in rows.iter().enumerate() {
        let peak = row.iter().cloned().fold(0.0, f64::max);
        let p = row.iter().position(|w| *w == peak).unwrap();
        triangular &= (peak - 1.0).abs() < 1e-12
            && row.iter().all(|w| *w >= 0.0)
            && row[..=p].windows(2).all(|w| w[0] <= w[1])
            && row[p..].windows(2).all(|w| w[0] >= w[1]);
        // support stays strictly inside the breakpoints
        let (lo, hi) = (fb.breakpoints[k], fb.breakpoints[k + 2]);
        triangular &= row.iter().enumerate().all(|(b, w)| *w == 0.0 || (b as f64 * bin_hz > lo && (b as f64 * bin_hz) < hi));
    }
    let mut overlap = true;
    for k in 0..rows.len() - 1 {
        // filter k+1 starts at filter k's centre and peaks where filter k ends
        overlap &= fb.breakpoints[k + 1] == fb.center_hz(k) && fb.center_hz(k + 1) == fb.breakpoints[k + 2];
        let next = &rows[k + 1];
        let peak_next = next.iter().position(|w| *w == 1.0).unwrap() as f64 * bin_hz;
        let last = rows[k].iter().rposition(|w| *w > 0.0).unwrap() as f64 * bin_hz;
        overlap &= (peak_next - last).abs() <= bin_hz + 1e-9;
    }

    let mut r = stream(7, "acceptance-dsp", 0);
    let samples: Vec<f64> = (0..32_000)
        .map(|i| 0.1 * (2.0 * PI * 440.0 * i as f64 / 16_000.0).sin() + 0.01 * r.gen_range(-1.0..1.0))
        .collect();
    let clip = AudioClip::new(samples.clone(), 16_000)?;
    let loud = AudioClip::new(samples.iter().map(|v| v * 10.0).collect(), 16_000)?;
    let frontend = MelFrontend::new(cfg.clone())?;
    let (quiet_m, loud_m) = (frontend.compute(&clip)?, frontend.compute(&loud)?);
    let mut shift_err = 0.0f64;
    let mut cells = 0;
    for (q, l) in quiet_m.values.iter().zip(&loud_m.values) {
        if *q > cfg.floor_db {
            shift_err = shift_err.max((l - q - 20.0).abs());
            cells += 1;
        }
    }
    let pass = (mel1000 - 999.99).abs() <= 0.05 && triangular && overlap && quiet_m.n_frames == 122 && cells > 0 && shift_err <= 1e-3;
    outcome(
        pass,
        format!(
            "mel(1000) = {mel1000:.4}; 128 filters triangular {triangular}, half-overlap {overlap}; frames {}; +20 dB shift err {shift_err:.1e} over {cells} cells",
            quiet_m.n_frames
        ),
    )
}

// ---------------------------------------------------------------- 8

fn spectrum(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .enumerate()
        .map(|(i, v)| Complex::new(v * (0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..n / 2].iter().map(|c| c.norm_sqr()).collect()
}

fn band_db(power: &[f64], n: usize, lo_hz: f64, hi_hz: f64) -> f64 {
    let bin = 16_000.0 / n as f64;
    let e: f64 = power.iter().enumerate().filter(|(k, _)| (*k as f64 * bin) >= lo_hz && (*k as f64 * bin) < hi_hz).map(|(_, p)| p).sum();
    10.0 * e.log10()
}

fn augmentation_checks() -> Result<Outcome> {
    let tone = |f: f64, amp: f64, n: usize| -> Vec<f64> { (0..n).map(|i| amp * (2.0 * PI * f * i as f64 / 16_000.0).sin()).collect() };
    let clip = |s: Vec<f64>| -> Result<AudioClip> { Ok(AudioClip::new(s, 16_000)?.with_recording("acc", None)) };

    // noise SNR at the ends and middle of the range, 100 trials each
    let sig = clip(tone(440.0, 0.25, 32_000))?;
    let mut snr_err = 0.0f64;
    for target in [0.3, 0.4, 0.5] {
        let mut total = 0.0;
        for trial in 0..100 {
            let out = apply_gaussian_noise(&sig, (target, target), &mut stream(8, "acceptance-snr", trial))?;
            let noise: Vec<f64> = out.samples.iter().zip(&sig.samples).map(|(o, s)| o - s).collect();
            total += 10.0 * (sig.power() / power(&noise)).log10();
        }
        snr_err = snr_err.max((total / 100.0 - target).abs());
    }

    // MixUp: anchor tones at 200 and 500 Hz plus a 2 kHz component, neighbour noise
    let n = 32_000;
    let anchor_s: Vec<f64> = tone(200.0, 0.2, n).iter().zip(tone(500.0, 0.2, n)).zip(tone(2000.0, 0.2, n)).map(|((a, b), c)| a + b + c).collect();
    let mut r = stream(8, "acceptance-mixup", 0);
    let mut recording: Vec<f64> = (0..16_000 * 20).map(|_| 0.02 * r.gen_range(-1.0..1.0)).collect();
    recording[..n].copy_from_slice(&anchor_s);
    let anchor = clip(anchor_s.clone())?;
    let ctx = RecordingContext::new(&recording, 16_000, &anchor)?;
    let mixed = apply_mixup(&ctx, &anchor, 50.0, 1000.0, &mut stream(8, "acceptance-mixup", 1))?;
    let low = Butterworth::lowpass(1000.0, 16_000.0)?.apply(&anchor_s);
    // skip the filter start-up transient
    let tail = 4_000;
    let (p_mix, p_low, p_anchor) = (spectrum(&mixed.samples[tail..]), spectrum(&low[tail..]), spectrum(&anchor_s[tail..]));
    let m = n - tail;
    let low_band_diff = (band_db(&p_mix, m, 0.0, 1000.0) - band_db(&p_low, m, 0.0, 1000.0)).abs();
    let leakage = band_db(&p_low, m, 1950.0, 2050.0) - band_db(&p_anchor, m, 1950.0, 2050.0);

    let mut r = stream(8, "acceptance-polarity", 0);
    let x = clip((0..1000).map(|_| r.gen_range(-1.0..1.0)).collect())?;
    let involution = apply_polarity(&apply_polarity(&x)) == x;

    let family = AugmentationSpec::default_family();
    let short: Vec<f64> = tone(300.0, 0.3, 1024);
    let short_clip = clip(short.clone())?;
    let short_ctx = RecordingContext::new(&short, 16_000, &short_clip)?;
    let mut counts = [[0usize; 4]; 2];
    for trial in 0..10_000 {
        let pair = sample_pair(&family, &short_ctx, &short_clip, &mut stream(8, "acceptance-family", trial), trial)?;
        counts[0][pair.provenance.specs[0]] += 1;
        counts[1][pair.provenance.specs[1]] += 1;
    }
    let freqs: Vec<f64> = counts.iter().flatten().map(|c| *c as f64 / 10_000.0).collect();
    let uniform = freqs.iter().all(|f| (0.23..=0.27).contains(f));
    let (fmin, fmax) = freqs.iter().fold((1.0f64, 0.0f64), |(a, b), f| (a.min(*f), b.max(*f)));

    let pass = snr_err <= 0.05 && low_band_diff <= 1.0 && leakage <= -30.0 && involution && uniform;
    outcome(
        pass,
        format!(
            "SNR err {snr_err:.3} dB; MixUp low band diff {low_band_diff:.3} dB, 2 kHz leakage {leakage:.1} dB; polarity involution {involution}; family frequencies in [{fmin:.4}, {fmax:.4}]"
        ),
    )
}

// ---------------------------------------------------------------- 9

fn optimizer_checks(desk: &DeskRuns) -> Result<Outcome> {
    let mut r = stream(9, "acceptance-lars", 0);
    let lars = Lars::new(LarsConfig { weight_decay: 0.0, momentum: 0.0, ..LarsConfig::default() })?;
    let mut lars_err = 0.0f64;
    for _ in 0..50 {
        let n = r.gen_range(1..40);
        let w: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let c = 10f64.powf(r.gen_range(-3.0..3.0));
        let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
        lars.layer_update("layer.weight", &w, &g, &mut a);
        let gs: Vec<f64> = g.iter().map(|v| v * c).collect();
        lars.layer_update("layer.weight", &w, &gs, &mut b);
        lars_err = a.iter().zip(&b).fold(lars_err, |m, (x, y)| m.max((x - y).abs()));
    }

    let walk = |losses: &[f64], sched: PlateauScheduler| -> Vec<f64> {
        let mut s = sched;
        let mut lr = 0.01;
        losses.iter().map(|l| {
            lr = s.step(*l, lr);
            lr
        }).collect()
    };
    let traces = walk(&[1.0, 0.5, 0.25], PlateauScheduler::default()) == vec![0.01, 0.01, 0.01]
        && walk(&[1.0, 1.0, 1.0, 1.0], PlateauScheduler::default()) == vec![0.01, 0.01, 0.01, 0.001]
        && walk(&[1.0, 1.0 - 1e-3], PlateauScheduler { patience: 1, ..PlateauScheduler::default() }) == vec![0.01, 0.001]
        && walk(&[1.0, 0.998], PlateauScheduler { patience: 1, ..PlateauScheduler::default() }) == vec![0.01, 0.01];

    let mut monotone = true;
    let mut rows = 0;
    for run in desk.runs.values() {
        let lrs: Vec<f64> = run.log.iter().filter(|r| r.kind == RecordKind::Epoch).map(|r| r.lr).collect();
        rows += lrs.len();
        monotone &= lrs.windows(2).all(|w| w[1] <= w[0]);
    }
    let pass = lars_err <= 1e-12 && traces && monotone;
    outcome(
        pass,
        format!("LARS scale invariance err {lars_err:.1e}; plateau walk-throughs {traces}; lr non-increasing over {} runs ({rows} epochs) {monotone}", desk.runs.len()),
    )
}

// ---------------------------------------------------------------- 10

fn same_bytes(a: &Path, b: &Path) -> Result<bool> {
    Ok(std::fs::read(a)? == std::fs::read(b)?)
}

fn determinism(desk: &DeskRuns) -> Result<Outcome> {
    let a = desk.get("5-5-1-seed0")?;
    let b = desk.get("5-5-1-seed0-rerun")?;
    let log = same_bytes(&a.out.join(TRAIN_LOG_FILE), &b.out.join(TRAIN_LOG_FILE))?;
    let ckpt = same_bytes(&a.out.join(CHECKPOINT_FILE), &b.out.join(CHECKPOINT_FILE))?;
    outcome(log && ckpt, format!("training logs identical {log}, checkpoints identical {ckpt}"))
}

// ---------------------------------------------------------------- 11

fn timing_harness() -> Result<Outcome> {
    let config = ExperimentConfig::from_json(DESK_CONFIG)?;
    let mut model = config.build_model()?;
    let frontend = MelFrontend::new(config.mel.clone())?;
    let mut r = stream(11, "acceptance-timing", 0);
    let samples: Vec<f64> = (0..(config.window_s * 16_000.0) as usize).map(|_| 0.1 * r.gen_range(-1.0..1.0)).collect();
    let spec = frontend.compute(&AudioClip::new(samples, 16_000)?)?;
    let desk = inference_timer(10, 1, || {
        model.embed(&[&spec], false)?;
        Ok(())
    })?;
    let noop = inference_timer(10, 1, || Ok(()))?;
    let is_min = desk.per_pass_ms.iter().cloned().fold(f64::INFINITY, f64::min) == desk.min_per_sample_ms && desk.per_pass_ms.len() == 10;
    let overhead = noop.min_per_sample_ms / desk.min_per_sample_ms;
    let pass = is_min && desk.min_per_sample_ms < 100.0 && overhead < 0.01;
    outcome(
        pass,
        format!(
            "desk encoder {:.2} ms per 2 s sample (min of 10 passes, < 100 ms); no-op overhead {:.4}% (< 1%)",
            desk.min_per_sample_ms,
            overhead * 100.0
        ),
    )
}
