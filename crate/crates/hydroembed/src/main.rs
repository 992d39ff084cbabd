use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hydroembed::pipeline::{self, SweepAxis};
use hydroembed::{report, synth, ExperimentConfig};

#[derive(Parser)]
#[command(version, about = "Self-supervised embeddings for hydrophone audio")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut config = match &self.config {
            Some(p) => ExperimentConfig::read(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            config.seed = s;
        }
        let out = self.out.clone().unwrap_or_else(|| config.out_dir.clone());
        config.out_dir = out.clone();
        Ok((config, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Writes the synthetic corpus (WAV files and manifest.jsonl).
    Synth(Common),
    /// Pretrains the encoder and writes checkpoint and training log.
    Pretrain(Common),
    /// Fits and scores the linear probe on a pretrained run directory.
    Probe(Common),
    /// Pretrains and probes once per value of one axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: SweepAxis,
    },
    /// Regenerates plot-data CSVs for a run directory.
    Report(Common),
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(c) => {
            let (config, _) = c.load()?;
            let dir = match &c.out {
                Some(d) => d.clone(),
                None => config.manifest.parent().map(PathBuf::from).unwrap_or_default(),
            };
            let manifest = synth::generate_synthetic_dataset(&config.synthetic, config.seed, &dir)?;
            println!("wrote {} recordings to {}", manifest.entries.len(), dir.display());
        }
        Command::Pretrain(c) => {
            let (config, out) = c.load()?;
            let data = pipeline::load_dataset(&config)?;
            let outcome = pipeline::pretrain(&config, &data, &out)?;
            if let Some(last) = outcome.log.last() {
                println!("epoch {} total {:.6} lr {}", last.epoch, last.total, last.lr);
            }
        }
        Command::Probe(c) => {
            let (_, out) = c.load()?;
            let (manifest, split) = match &c.config {
                Some(p) => {
                    let cfg = ExperimentConfig::read(p)?;
                    (Some(cfg.manifest), Some(cfg.split))
                }
                None => (None, None),
            };
            let (trained, untrained) = pipeline::probe_run(&out, manifest.as_deref(), split)
                .with_context(|| format!("probing {}", out.display()))?;
            println!(
                "pretrained accuracy {:.4} weighted F1 {:.4}; untrained accuracy {:.4}",
                trained.metrics.accuracy, trained.metrics.weighted_f1, untrained.metrics.accuracy
            );
        }
        Command::Sweep { common, axis } => {
            let (config, out) = common.load()?;
            for row in pipeline::sweep(&config, axis, &out)? {
                println!("{} = {}: accuracy {:.4} weighted F1 {:.4}", row.axis, row.value, row.accuracy, row.weighted_f1);
            }
        }
        Command::Report(c) => {
            let (_, out) = c.load()?;
            for path in report::report(&out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
