//! `synth` and `pseudo-label`.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use rfd_reid::data::{
    apply_bins, build_mlr, generate_toy_corpus, make_splits, parse_index, scan_corpus, BinningMode, DatasetManifest, Interpolation, PixelBins, Provenance,
    ToyCorpusSpec, REAL_RESOLUTION_CLASSES,
};
use rfd_reid::eval::{build_protocols, protocol_images};
use rfd_reid::rng::derive_seed;

use crate::config::{self, io_error, overlay, parse_named, require, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    /// Render a toy corpus.
    Toy,
    /// Scan a directory of `<identity>_<camera>_<seq>.<ext>` files.
    Dir,
    /// Read a CSV index.
    Index,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub source: CorpusSource,
    /// Directory (`dir`) or CSV file (`index`).
    pub corpus: Option<PathBuf>,
    /// Provenance of a `dir` or `index` corpus. Toy corpora are real when a
    /// height range is set, synthetic otherwise.
    pub provenance: Provenance,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub splits: u32,
    pub scales: Vec<u32>,
    pub interpolation: Interpolation,
    pub binning: BinningMode,
    pub toy_identities: u32,
    pub toy_cameras: u32,
    pub toy_images_per_camera: u32,
    pub toy_height: u32,
    pub toy_width: u32,
    pub toy_real_height_min: Option<u32>,
    pub toy_real_height_max: Option<u32>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let toy = ToyCorpusSpec::default();
        SynthConfig {
            source: CorpusSource::Toy,
            corpus: None,
            provenance: Provenance::Synthetic,
            out: None,
            seed: 0,
            splits: 10,
            scales: vec![2, 3, 4],
            interpolation: Interpolation::Bicubic,
            binning: BinningMode::EqualWidth,
            toy_identities: toy.identities,
            toy_cameras: toy.cameras,
            toy_images_per_camera: toy.images_per_camera,
            toy_height: toy.height,
            toy_width: toy.width,
            toy_real_height_min: None,
            toy_real_height_max: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML file with any of the settings below.
    #[arg(long, env = "RFD_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "RFD_SOURCE", value_parser = parse_named::<CorpusSource>)]
    pub source: Option<CorpusSource>,
    #[arg(long, env = "RFD_CORPUS")]
    pub corpus: Option<PathBuf>,
    #[arg(long, env = "RFD_PROVENANCE", value_parser = parse_named::<Provenance>)]
    pub provenance: Option<Provenance>,
    /// Output directory.
    #[arg(long, env = "RFD_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "RFD_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "RFD_SPLITS")]
    pub splits: Option<u32>,
    /// Degradation scales of the multi-resolution training copies.
    #[arg(long, env = "RFD_SCALES", value_delimiter = ',')]
    pub scales: Option<Vec<u32>>,
    #[arg(long, env = "RFD_INTERPOLATION", value_parser = parse_named::<Interpolation>)]
    pub interpolation: Option<Interpolation>,
    #[arg(long, env = "RFD_BINNING", value_parser = parse_named::<BinningMode>)]
    pub binning: Option<BinningMode>,
    #[arg(long, env = "RFD_TOY_IDENTITIES")]
    pub toy_identities: Option<u32>,
    #[arg(long, env = "RFD_TOY_CAMERAS")]
    pub toy_cameras: Option<u32>,
    #[arg(long, env = "RFD_TOY_IMAGES_PER_CAMERA")]
    pub toy_images_per_camera: Option<u32>,
    #[arg(long, env = "RFD_TOY_HEIGHT")]
    pub toy_height: Option<u32>,
    #[arg(long, env = "RFD_TOY_WIDTH")]
    pub toy_width: Option<u32>,
    #[arg(long, env = "RFD_TOY_REAL_HEIGHT_MIN")]
    pub toy_real_height_min: Option<u32>,
    #[arg(long, env = "RFD_TOY_REAL_HEIGHT_MAX")]
    pub toy_real_height_max: Option<u32>,
}

impl SynthArgs {
    pub fn resolve(&self) -> CliResult<SynthConfig> {
        let mut cfg: SynthConfig = config::load(self.config.as_deref())?;
        let args = self;
        overlay!(cfg, args: source, corpus, provenance, out, seed, splits, scales, interpolation, binning);
        overlay!(cfg, args: toy_identities, toy_cameras, toy_images_per_camera, toy_height, toy_width, toy_real_height_min, toy_real_height_max);
        Ok(cfg)
    }
}

fn load_corpus(cfg: &SynthConfig, out: &Path) -> CliResult<DatasetManifest> {
    let manifest = match cfg.source {
        CorpusSource::Toy => {
            let real_height_range = match (cfg.toy_real_height_min, cfg.toy_real_height_max) {
                (None, None) => None,
                (Some(lo), Some(hi)) => Some((lo, hi)),
                _ => return Err(CliError::Usage("toy_real_height_min and toy_real_height_max go together".into())),
            };
            let spec = ToyCorpusSpec {
                identities: cfg.toy_identities,
                cameras: cfg.toy_cameras,
                images_per_camera: cfg.toy_images_per_camera,
                height: cfg.toy_height,
                width: cfg.toy_width,
                real_height_range,
            };
            let m = generate_toy_corpus(&out.join("corpus"), &spec, derive_seed(cfg.seed, "toy"))?;
            DatasetManifest::new(m.records, m.provenance, cfg.interpolation)
        }
        CorpusSource::Dir => {
            let dir = require(&cfg.corpus, "corpus")?;
            DatasetManifest::new(scan_corpus(&dir)?, cfg.provenance, cfg.interpolation)
        }
        CorpusSource::Index => {
            let path = require(&cfg.corpus, "corpus")?;
            let file = File::open(&path).map_err(|e| io_error(&path, e))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            let records = parse_index(file)?
                .into_iter()
                .map(|mut r| {
                    if Path::new(&r.path).is_relative() {
                        r.path = base.join(&r.path).to_string_lossy().into_owned();
                    }
                    r
                })
                .collect();
            DatasetManifest::new(records, cfg.provenance, cfg.interpolation)
        }
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Label real records by pixel-count bins fitted on `fit`.
fn label_real(fit: &DatasetManifest, target: &DatasetManifest, mode: BinningMode) -> CliResult<DatasetManifest> {
    let counts: Vec<u64> = fit.records.iter().map(|r| r.pixel_count).collect();
    let bins = PixelBins::fit(&counts, REAL_RESOLUTION_CLASSES, mode)?;
    Ok(target.with_records(apply_bins(&target.records, &bins)))
}

pub fn run(args: SynthArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let out = require(&cfg.out, "out")?;
    config::echo(&cfg, &out.join("synth.config.toml"))?;
    let corpus = load_corpus(&cfg, &out)?;
    corpus.write(&out.join("corpus.json"))?;
    let scales: BTreeSet<u32> = cfg.scales.iter().copied().collect();
    let splits = make_splits(&corpus, cfg.splits, derive_seed(cfg.seed, "splits"))?;
    let protocols = build_protocols(&splits, derive_seed(cfg.seed, "protocol"))?;
    for (k, split) in splits.iter().enumerate() {
        let dir = out.join(format!("split_{k}"));
        let train = match corpus.provenance {
            Provenance::Synthetic => {
                let mlr = build_mlr(&split.train, &scales, cfg.interpolation, derive_seed(cfg.seed, &format!("mlr/split{k}")))?;
                split.train.merge(&mlr)?
            }
            Provenance::Real => label_real(&split.train, &split.train, cfg.binning)?,
        };
        train.write(&dir.join("train.json"))?;
        split.query.write(&dir.join("query.json"))?;
        split.gallery.write(&dir.join("gallery.json"))?;
        let mine: Vec<_> = protocols.iter().filter(|p| p.split == k).cloned().collect();
        for p in &mine {
            p.write(&dir.join(format!("protocol_{}.json", p.mode)))?;
        }
        protocol_images(&mine)?.write(&dir.join("eval_images.json"))?;
        log::info!("split {k}: {} train records, {} identities", train.records.len(), train.identity_count);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoLabelConfig {
    pub manifest: Option<PathBuf>,
    /// Manifest whose pixel counts fix the bins; defaults to `manifest`.
    pub fit: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: BinningMode,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig {
            manifest: None,
            fit: None,
            out: None,
            mode: BinningMode::EqualWidth,
        }
    }
}

#[derive(Debug, Args)]
pub struct PseudoLabelArgs {
    #[arg(long, env = "RFD_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "RFD_MANIFEST")]
    pub manifest: Option<PathBuf>,
    #[arg(long, env = "RFD_FIT")]
    pub fit: Option<PathBuf>,
    #[arg(long, env = "RFD_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "RFD_MODE", value_parser = parse_named::<BinningMode>)]
    pub mode: Option<BinningMode>,
}

pub fn run_pseudo_label(args: PseudoLabelArgs) -> CliResult<()> {
    let mut cfg: PseudoLabelConfig = config::load(args.config.as_deref())?;
    overlay!(cfg, args: manifest, fit, out, mode);
    let input = require(&cfg.manifest, "manifest")?;
    let out = require(&cfg.out, "out")?;
    config::echo(&cfg, &config::sidecar(&out))?;
    let manifest = DatasetManifest::read(&input)?;
    let fit = match &cfg.fit {
        Some(p) => DatasetManifest::read(p)?,
        None => manifest.clone(),
    };
    let mut target = manifest.clone();
    target.provenance = Provenance::Real;
    target.resolution_class_count = REAL_RESOLUTION_CLASSES;
    let labelled = label_real(&fit, &target, cfg.mode)?;
    labelled.validate()?;
    labelled.write(&out)?;
    Ok(())
}
