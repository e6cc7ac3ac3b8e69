//! `eval` and `sweep`: protocols + feature stores → CMC reports.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use rfd_reid::eval::{evaluate_stores, EvalProtocol, EvalReport, GalleryMode, ProtocolResult, DEFAULT_K_MAX};
use rfd_reid::matching::{FusionConfig, FusionSign};
use rfd_reid::store::{read_store, FeatureStore};
use rfd_reid::Error;

use crate::config::{self, io_error, overlay, parse_named, require, CliError, CliResult};

fn parse_gallery(s: &str) -> Result<GalleryMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Split numbers present under `data` as `split_<k>` directories.
fn discover_splits(data: &Path) -> CliResult<Vec<usize>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(data).map_err(|e| io_error(data, e))? {
        let entry = entry.map_err(|e| io_error(data, e))?;
        if let Some(k) = entry.file_name().to_str().and_then(|n| n.strip_prefix("split_")).and_then(|k| k.parse().ok()) {
            out.push(k);
        }
    }
    out.sort_unstable();
    if out.is_empty() {
        return Err(Error::Malformed(format!("no split_<k> directories under {}", data.display())).into());
    }
    Ok(out)
}

struct Inputs {
    protocols: Vec<EvalProtocol>,
    bf: HashMap<usize, FeatureStore>,
    br: HashMap<usize, FeatureStore>,
}

fn load_inputs(data: &Path, stores: &Path, splits: &Option<Vec<usize>>, galleries: &[GalleryMode], need_br: bool) -> CliResult<Inputs> {
    let splits = match splits {
        Some(s) => s.clone(),
        None => discover_splits(data)?,
    };
    let mut inputs = Inputs {
        protocols: Vec::new(),
        bf: HashMap::new(),
        br: HashMap::new(),
    };
    for &k in &splits {
        for mode in galleries {
            inputs.protocols.push(EvalProtocol::read(&data.join(format!("split_{k}")).join(format!("protocol_{mode}.json")))?);
        }
        inputs.bf.insert(k, read_store(&stores.join(format!("split_{k}.bf.store")))?);
        if need_br {
            inputs.br.insert(k, read_store(&stores.join(format!("split_{k}.br.store")))?);
        }
    }
    Ok(inputs)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_report(report: &EvalReport, out: &Path) -> CliResult<()> {
    config::write_bytes(out, &report.to_csv()?)?;
    config::write_bytes(&out.with_extension("json"), &report.to_json()?)
}

fn write_matrices(results: &[ProtocolResult], dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    for r in results {
        let stem = format!("split_{}_{}", r.split, r.protocol);
        r.d_f.write(&dir.join(format!("{stem}_D_f.dmat")))?;
        if let Some(d_r) = &r.d_r {
            d_r.write(&dir.join(format!("{stem}_D_r.dmat")))?;
        }
        for (f, d) in &r.fused {
            d.write(&dir.join(format!("{stem}_fused_{}_{}.dmat", f.sign, f.lambda)))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Output directory of `synth`.
    pub data: Option<PathBuf>,
    /// Directory holding `split_<k>.bf.store` and `split_<k>.br.store`.
    pub stores: Option<PathBuf>,
    pub gallery: GalleryMode,
    pub rfd: bool,
    pub lambda: f64,
    pub sign: FusionSign,
    pub k_max: usize,
    /// Splits to score; all present when unset.
    pub splits: Option<Vec<usize>>,
    /// CSV report; the JSON report is written beside it.
    pub out: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            data: None,
            stores: None,
            gallery: GalleryMode::MultiReso,
            rfd: false,
            lambda: FusionConfig::default().lambda,
            sign: FusionSign::Paper,
            k_max: DEFAULT_K_MAX,
            splits: None,
            out: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = "RFD_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "RFD_DATA")]
    pub data: Option<PathBuf>,
    #[arg(long, env = "RFD_STORES")]
    pub stores: Option<PathBuf>,
    /// `single` or `multi`.
    #[arg(long, env = "RFD_GALLERY", value_parser = parse_gallery)]
    pub gallery: Option<GalleryMode>,
    /// Also score the fused distance.
    #[arg(long, env = "RFD_RFD")]
    pub rfd: bool,
    #[arg(long, env = "RFD_LAMBDA")]
    pub lambda: Option<f64>,
    #[arg(long, env = "RFD_SIGN", value_parser = parse_named::<FusionSign>)]
    pub sign: Option<FusionSign>,
    #[arg(long, env = "RFD_K_MAX")]
    pub k_max: Option<usize>,
    #[arg(long, env = "RFD_SPLITS", value_delimiter = ',')]
    pub splits: Option<Vec<usize>>,
    #[arg(long, env = "RFD_OUT")]
    pub out: Option<PathBuf>,
}

pub fn run_eval(args: EvalArgs) -> CliResult<()> {
    let mut cfg: EvalConfig = config::load(args.config.as_deref())?;
    overlay!(cfg, args: data, stores, gallery, lambda, sign, k_max, splits, out);
    cfg.rfd |= args.rfd;
    let data = require(&cfg.data, "data")?;
    let stores = require(&cfg.stores, "stores")?;
    let out = require(&cfg.out, "out")?;
    config::echo(&cfg, &config::sidecar(&out))?;
    let fusions = if cfg.rfd {
        vec![FusionConfig {
            lambda: cfg.lambda,
            sign: cfg.sign,
        }]
    } else {
        Vec::new()
    };
    let inputs = load_inputs(&data, &stores, &cfg.splits, &[cfg.gallery], cfg.rfd)?;
    let (report, results) = evaluate_stores(&inputs.protocols, &inputs.bf, &inputs.br, &fusions, cfg.k_max)?;
    write_report(&report, &out)?;
    write_matrices(&results, &with_suffix(&out, ".matrices"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub data: Option<PathBuf>,
    pub stores: Option<PathBuf>,
    pub galleries: Vec<GalleryMode>,
    pub lambdas: Vec<f64>,
    pub signs: Vec<FusionSign>,
    pub k_max: usize,
    pub splits: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            data: None,
            stores: None,
            galleries: vec![GalleryMode::SingleReso, GalleryMode::MultiReso],
            lambdas: vec![0.0, 0.05, 0.1, 0.2, 0.5, 1.0],
            signs: vec![FusionSign::Paper, FusionSign::Inverted],
            k_max: DEFAULT_K_MAX,
            splits: None,
            out: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, env = "RFD_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "RFD_DATA")]
    pub data: Option<PathBuf>,
    #[arg(long, env = "RFD_STORES")]
    pub stores: Option<PathBuf>,
    #[arg(long, env = "RFD_GALLERIES", value_delimiter = ',', value_parser = parse_gallery)]
    pub galleries: Option<Vec<GalleryMode>>,
    #[arg(long, env = "RFD_LAMBDAS", value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, env = "RFD_SIGNS", value_delimiter = ',', value_parser = parse_named::<FusionSign>)]
    pub signs: Option<Vec<FusionSign>>,
    #[arg(long, env = "RFD_K_MAX")]
    pub k_max: Option<usize>,
    #[arg(long, env = "RFD_SPLITS", value_delimiter = ',')]
    pub splits: Option<Vec<usize>>,
    #[arg(long, env = "RFD_OUT")]
    pub out: Option<PathBuf>,
}

pub fn run_sweep(args: SweepArgs) -> CliResult<()> {
    let mut cfg: SweepConfig = config::load(args.config.as_deref())?;
    overlay!(cfg, args: data, stores, galleries, lambdas, signs, k_max, splits, out);
    let data = require(&cfg.data, "data")?;
    let stores = require(&cfg.stores, "stores")?;
    let out = require(&cfg.out, "out")?;
    if cfg.galleries.is_empty() || cfg.lambdas.is_empty() || cfg.signs.is_empty() {
        return Err(CliError::Usage("galleries, lambdas and signs must be non-empty".into()));
    }
    config::echo(&cfg, &config::sidecar(&out))?;
    let fusions: Vec<FusionConfig> = cfg.signs.iter().flat_map(|&sign| cfg.lambdas.iter().map(move |&lambda| FusionConfig { lambda, sign })).collect();
    let inputs = load_inputs(&data, &stores, &cfg.splits, &cfg.galleries, true)?;
    let (report, _) = evaluate_stores(&inputs.protocols, &inputs.bf, &inputs.br, &fusions, cfg.k_max)?;
    write_report(&report, &out)
}
