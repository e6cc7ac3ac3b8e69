//! `train --baseline bf|br`.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use rfd_reid::data::DatasetManifest;
use rfd_reid::nn::{write_checkpoint, BackboneConfig, EmbeddingSource};
use rfd_reid::train::{train_bf, train_br, write_report_csv, TrainConfig};

use crate::config::{self, overlay, parse_named, require, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Identity feature network.
    Bf,
    /// Resolution network.
    Br,
}

impl Baseline {
    pub fn source(self) -> EmbeddingSource {
        match self {
            Baseline::Bf => EmbeddingSource::Feature,
            Baseline::Br => EmbeddingSource::Resolution,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub baseline: Option<Baseline>,
    pub manifest: Option<PathBuf>,
    /// Checkpoint path.
    pub out: Option<PathBuf>,
    /// Loss CSV; defaults to `<out>.loss.csv`.
    pub report: Option<PathBuf>,
    pub seed: u64,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            baseline: None,
            manifest: None,
            out: None,
            report: None,
            seed: 0,
            backbone: BackboneConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with top-level settings plus `[backbone]` and `[train]` tables.
    #[arg(long, env = "RFD_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "RFD_BASELINE", value_parser = parse_named::<Baseline>)]
    pub baseline: Option<Baseline>,
    #[arg(long, env = "RFD_MANIFEST")]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = "RFD_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "RFD_REPORT")]
    pub report: Option<PathBuf>,
    #[arg(long, env = "RFD_SEED")]
    pub seed: Option<u64>,
    /// Fixed iteration count, overriding iterations per identity.
    #[arg(long, env = "RFD_ITERATIONS")]
    pub iterations: Option<u64>,
    #[arg(long, env = "RFD_ITERATIONS_PER_IDENTITY")]
    pub iterations_per_identity: Option<u64>,
    #[arg(long, env = "RFD_LR")]
    pub lr: Option<f64>,
}

impl TrainArgs {
    pub fn resolve(&self) -> CliResult<TrainRunConfig> {
        let mut cfg: TrainRunConfig = config::load(self.config.as_deref())?;
        let args = self;
        overlay!(cfg, args: baseline, manifest, out, report, seed);
        if let Some(n) = self.iterations {
            cfg.train.total_iterations = Some(n);
        }
        if let Some(n) = self.iterations_per_identity {
            cfg.train.iterations_per_identity = n;
        }
        if let Some(lr) = self.lr {
            cfg.train.learning_rate = lr;
        }
        Ok(cfg)
    }
}

pub fn run(args: TrainArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let baseline = require(&cfg.baseline, "baseline")?;
    let input = require(&cfg.manifest, "manifest")?;
    let out = require(&cfg.out, "out")?;
    let report_path = cfg.report.clone().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    config::echo(&cfg, &config::sidecar(&out))?;
    let manifest = DatasetManifest::read(&input)?;
    let (model, mut report) = match baseline {
        Baseline::Bf => train_bf(&manifest, &cfg.backbone, &cfg.train, cfg.seed)?,
        Baseline::Br => train_br(&manifest, &cfg.backbone, &cfg.train, cfg.seed)?,
    };
    let hash = write_checkpoint(&model, &out)?;
    report.checkpoint = Some(hash);
    write_report_csv(&report, &report_path)?;

    // Wall-clock timings vary run to run, so they live apart from the loss log.
    let mut timing = String::from("iteration,elapsed_seconds\n");
    for (row, t) in report.rows.iter().zip(&report.elapsed_seconds) {
        let _ = writeln!(timing, "{},{t}", row.iteration);
    }
    let mut timing_path = out.as_os_str().to_owned();
    timing_path.push(".timing.csv");
    config::write_bytes(&PathBuf::from(timing_path), timing.as_bytes())?;
    log::info!("{} trained for {} iterations, {} classes", report.source, report.iterations, report.class_count);
    Ok(())
}
