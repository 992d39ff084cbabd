mod common;

use std::fs;

use hydroembed::checkpoint;
use hydroembed::config::ProbeFeatures;
use hydroembed::pipeline::*;
use hydroembed::report::{compare_axis_values, report};
use hydroembed::timing::inference_timer;
use hydroembed::ExperimentConfig;
use hydroembed_core::losses::LossWeights;
use hydroembed_core::nn::{BaselineConfig, EncoderSpec};
use hydroembed_core::optim::{AdamConfig, OptimizerSpec};
use hydroembed_core::train::{LossSpec, RecordKind};

use common::tiny_config;

#[test]
fn log_has_one_row_per_step_plus_epoch_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let data = load_dataset(&config).unwrap();
    // 6 training recordings x 4 windows, batches of 12
    assert_eq!(pretrain_pool(&config, &data).unwrap().len(), 24);
    pretrain(&config, &data, &config.out_dir).unwrap();
    let log = read_log(&config.out_dir.join(TRAIN_LOG_FILE)).unwrap();
    let kinds: Vec<RecordKind> = log.iter().map(|r| r.kind).collect();
    assert_eq!(kinds, vec![RecordKind::Step, RecordKind::Step, RecordKind::Epoch]);
    let header = fs::read_to_string(config.out_dir.join(TRAIN_LOG_FILE)).unwrap();
    assert!(header.starts_with("kind,epoch,step,invariance,variance_a,variance_b,covariance_a,covariance_b,total,lr\n"));
}

#[test]
fn logged_totals_are_recomputable() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    config.epochs = 2;
    let w = LossWeights::new(25.0, 25.0, 1.0);
    config.loss = LossSpec::Vicreg(w.clone());
    let data = load_dataset(&config).unwrap();
    pretrain(&config, &data, &config.out_dir).unwrap();
    let log = read_log(&config.out_dir.join(TRAIN_LOG_FILE)).unwrap();
    for r in log.iter().filter(|r| r.kind == RecordKind::Step) {
        let recomputed = w.lambda * r.invariance
            + w.mu * (r.variance_a + r.variance_b)
            + w.nu * (r.covariance_a + r.covariance_b);
        assert!((recomputed - r.total).abs() <= 1e-9 * r.total.abs().max(1.0), "step {}", r.step);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let data = load_dataset(&config).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pretrain(&config, &data, &a).unwrap();
    pretrain(&config, &data, &b).unwrap();
    for f in [TRAIN_LOG_FILE, CHECKPOINT_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let mut other = config.clone();
    other.seed += 1;
    pretrain(&other, &data, &b).unwrap();
    assert_ne!(fs::read(a.join(TRAIN_LOG_FILE)).unwrap(), fs::read(b.join(TRAIN_LOG_FILE)).unwrap());
}

#[test]
fn probe_uses_encoder_embeddings_from_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let data = load_dataset(&config).unwrap();
    let mut trained = pretrain(&config, &data, &config.out_dir).unwrap().model;
    let (report, untrained) = probe_run(&config.out_dir, None, None).unwrap();
    assert_eq!(report.feature_dim, 8);
    assert_eq!(report.features, ProbeFeatures::Encoder);
    assert_eq!(report.train_windows + report.test_windows, 32);
    assert_eq!(report.metrics.confusion.iter().flatten().sum::<usize>(), report.test_windows);
    assert_eq!(untrained.test_windows, report.test_windows);
    // the reloaded model scores exactly like the in-memory one
    assert_eq!(probe(&mut trained, &config, &data).unwrap(), report);
    let csv = fs::read_to_string(config.out_dir.join(METRICS_CSV_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let mut expander = config.clone();
    expander.probe_features = ProbeFeatures::Expander;
    assert_eq!(probe(&mut trained, &expander, &data).unwrap().feature_dim, 16);
}

#[test]
fn mismatched_sidecar_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let data = load_dataset(&config).unwrap();
    pretrain(&config, &data, &config.out_dir).unwrap();
    let ckpt = config.out_dir.join(CHECKPOINT_FILE);
    let mut wrong = config.clone();
    wrong.encoder.set_embedding_dim(9);
    fs::write(checkpoint::sidecar_path(&ckpt), wrong.to_json().unwrap()).unwrap();
    assert!(checkpoint::load(&ckpt).is_err());
    assert!(probe_run(&config.out_dir, None, None).is_err());
}

#[test]
fn divergence_aborts_with_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    config.epochs = 2;
    config.optimizer = OptimizerSpec::Adam(AdamConfig { lr: 1e300, ..AdamConfig::default() });
    let data = load_dataset(&config).unwrap();
    let err = pretrain(&config, &data, &config.out_dir).unwrap_err();
    assert!(format!("{err:#}").contains("training aborted at step 1"), "{err:#}");
}

#[test]
fn contrastive_losses_and_baseline_encoder_train() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_config(dir.path());
    let data = load_dataset(&base).unwrap();
    for loss in [LossSpec::Ntxent { temperature: 0.5 }, LossSpec::Supcon { temperature: 0.1 }] {
        let mut c = base.clone();
        c.loss = loss;
        c.optimizer = OptimizerSpec::Adam(AdamConfig::default());
        let log = pretrain(&c, &data, &dir.path().join("c")).unwrap().log;
        assert!(log.iter().all(|r| r.total.is_finite() && r.total > 0.0 && r.invariance == 0.0));
    }
    let mut c = base.clone();
    c.encoder = EncoderSpec::Baseline(BaselineConfig {
        n_mels: 16,
        n_frames: 61,
        stem_channels: 2,
        stage_channels: vec![2, 4],
        blocks_per_stage: 1,
        embedding_dim: 6,
        ..BaselineConfig::default()
    });
    let mut model = pretrain(&c, &data, &dir.path().join("b")).unwrap().model;
    assert_eq!(probe(&mut model, &c, &data).unwrap().feature_dim, 6);
}

#[test]
fn sweeps_emit_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    config.sweep.embedding_sizes = vec![4, 8, 16];
    config.sweep.label_fractions = vec![1.0, 0.34];
    let out = dir.path().join("sweeps");

    let rows = sweep(&config, SweepAxis::LossWeights, &out).unwrap();
    let values: Vec<&str> = rows.iter().map(|r| r.value.as_str()).collect();
    assert_eq!(values, vec!["1;1;1", "5;5;1", "25;25;1"]);

    let rows = sweep(&config, SweepAxis::EmbeddingSize, &out).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.windows(2).all(|w| w[0].encoder_parameters < w[1].encoder_parameters));

    let rows = sweep(&config, SweepAxis::LabelFraction, &out).unwrap();
    // 6 training recordings: all of them, then round(6 * 0.34) = 2
    assert_eq!(rows.iter().map(|r| r.probe_train_recordings).collect::<Vec<_>>(), vec![6, 2]);
    assert_eq!(rows.iter().map(|r| r.probe_train_windows).collect::<Vec<_>>(), vec![24, 8]);
    // shared pretraining: identical final losses
    assert_eq!(rows[0].total, rows[1].total);

    let written = report(&out).unwrap();
    let sorted = fs::read_to_string(out.join("report/sweep_label_fraction.csv")).unwrap();
    let first: Vec<&str> = sorted.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(first, vec!["0.34", "1"]);
    assert!(written.iter().any(|p| p.ends_with("sweep_loss_weights.csv")));
}

#[test]
fn report_is_idempotent_and_tidy() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = tiny_config(dir.path());
    config.epochs = 2;
    let data = load_dataset(&config).unwrap();
    pretrain(&config, &data, &config.out_dir).unwrap();
    probe_run(&config.out_dir, None, None).unwrap();
    let files = report(&config.out_dir).unwrap();
    let first: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
    let again = report(&config.out_dir).unwrap();
    assert_eq!(files, again);
    assert_eq!(first, again.iter().map(|p| fs::read(p).unwrap()).collect::<Vec<_>>());

    let loss = fs::read_to_string(config.out_dir.join("report/loss.csv")).unwrap();
    assert_eq!(loss.lines().next().unwrap(), "step,epoch,invariance,variance,covariance,total");
    assert!(loss.lines().all(|l| l.split(',').count() == 6));
    assert_eq!(loss.lines().count(), 1 + 4);
    let epochs = fs::read_to_string(config.out_dir.join("report/epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 1 + 2);
    let confusion = fs::read_to_string(config.out_dir.join("report/confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 1 + 16);

    assert!(report(&dir.path().join("nothing")).is_err());
}

#[test]
fn axis_values_sort_numerically() {
    let mut v = vec!["25;25;1", "5;5;1", "1;1;1", "0.5", "expanded", "default"];
    v.sort_by(|a, b| compare_axis_values(a, b));
    assert_eq!(v, vec!["0.5", "1;1;1", "5;5;1", "25;25;1", "default", "expanded"]);
}

#[test]
fn timer_reports_the_minimum_pass() {
    let delays = [3u64, 1, 2, 1, 4];
    let mut i = 0;
    let t = inference_timer(5, 2, || {
        std::thread::sleep(std::time::Duration::from_millis(10 * delays[i]));
        i += 1;
        Ok(())
    })
    .unwrap();
    let min = t.per_pass_ms.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(t.min_per_sample_ms, min);
    let mean = t.per_pass_ms.iter().sum::<f64>() / 5.0;
    assert!(t.min_per_sample_ms < mean);
    assert!(t.running_min_ms.windows(2).all(|w| w[1] <= w[0]));
    assert!((5.0..9.0).contains(&t.min_per_sample_ms), "{}", t.min_per_sample_ms);
    assert!(inference_timer(0, 1, || Ok(())).is_err());
}

#[test]
fn config_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let p = dir.path().join("c.json");
    fs::write(&p, config.to_json().unwrap()).unwrap();
    assert_eq!(ExperimentConfig::read(&p).unwrap(), config);
}
