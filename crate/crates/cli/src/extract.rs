//! `extract`: checkpoint + manifest → feature store.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use rfd_reid::data::DatasetManifest;
use rfd_reid::eval::extract_store;
use rfd_reid::nn::{sha256_hex, Checkpoint};
use rfd_reid::store::write_store;
use rfd_reid::Error;

use crate::config::{self, io_error, overlay, parse_named, require, CliResult};
use crate::train::Baseline;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub checkpoint: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Refuse checkpoints of the other network.
    pub expect: Option<Baseline>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, env = "RFD_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "RFD_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = "RFD_MANIFEST")]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = "RFD_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "RFD_EXPECT", value_parser = parse_named::<Baseline>)]
    pub expect: Option<Baseline>,
}

pub fn run(args: ExtractArgs) -> CliResult<()> {
    let mut cfg: ExtractConfig = config::load(args.config.as_deref())?;
    overlay!(cfg, args: checkpoint, manifest, out, expect);
    let ckpt_path = require(&cfg.checkpoint, "checkpoint")?;
    let input = require(&cfg.manifest, "manifest")?;
    let out = require(&cfg.out, "out")?;
    config::echo(&cfg, &config::sidecar(&out))?;
    let bytes = fs::read(&ckpt_path).map_err(|e| io_error(&ckpt_path, e))?;
    let model = Checkpoint::from_bytes(&bytes)?.model;
    if let Some(expect) = cfg.expect {
        if model.source != expect.source() {
            return Err(Error::RoleMismatch {
                expected: expect.source().to_string(),
                found: model.source.to_string(),
            }
            .into());
        }
    }
    let manifest = DatasetManifest::read(&input)?;
    let store = extract_store(&model, &sha256_hex(&bytes), &manifest.records, manifest.interpolation)?;
    write_store(&store, &out)?;
    Ok(())
}
