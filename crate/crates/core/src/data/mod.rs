//! Multi-resolution dataset construction: degradation, resolution labels
//! and train/test splits.

mod corpus;
mod mlr;
mod pseudo;
mod record;
mod resample;
mod splits;

pub use corpus::{generate_toy_corpus, load_image, load_record, parse_corpus_name, parse_index, save_image, scan_corpus, CorpusName, IndexRow, ToyCorpusSpec};
pub use mlr::{build_mlr, degraded_id, scale_label};
pub(crate) use mlr::draw_scale;
pub use pseudo::{apply_bins, pseudo_label_resolutions, BinningMode, PixelBins};
pub use record::{DatasetManifest, ImageRecord, Provenance, REAL_RESOLUTION_CLASSES, SYNTHETIC_RESOLUTION_CLASSES};
pub use resample::{degrade, resize, Image, Interpolation};
pub use splits::{make_splits, multi_camera_identities, Split};
