use std::collections::BTreeSet;

use rand::Rng;

use super::record::{DatasetManifest, ImageRecord, Provenance, SYNTHETIC_RESOLUTION_CLASSES};
use super::resample::Interpolation;
use crate::error::{ensure, Result};
use crate::rng::rng_for;

/// Resolution class of a known degradation scale: HR → 0, ×2 → 1, ×3 → 2, ×4 → 3.
pub fn scale_label(scale: u32) -> u32 {
    scale - 1
}

/// Id of the copy of `image_id` degraded by `scale`.
pub fn degraded_id(image_id: &str, scale: u32) -> String {
    format!("{image_id}@x{scale}")
}

/// Pick a uniformly random scale for one image. The stream depends only on
/// `(seed, tag)`.
pub(crate) fn draw_scale(scales: &[u32], seed: u64, tag: &str) -> u32 {
    let mut rng = rng_for(seed, tag);
    scales[rng.random_range(0..scales.len())]
}

/// Produce one degraded copy of every HR record, each with a scale drawn
/// uniformly from `scales`. Identity labels are kept; the resolution label
/// follows the scale. Scale 1 yields an unmodified HR copy labelled 0.
///
/// The returned manifest holds only the copies; merge it with the input to
/// obtain the mixed HR+LR training set.
pub fn build_mlr(manifest_hr: &DatasetManifest, scales: &BTreeSet<u32>, interpolation: Interpolation, rng_seed: u64) -> Result<DatasetManifest> {
    ensure!(!scales.is_empty(), "scale set must not be empty");
    ensure!(
        scales.iter().all(|s| (1..=SYNTHETIC_RESOLUTION_CLASSES).contains(s)),
        "scales must lie in 1..={SYNTHETIC_RESOLUTION_CLASSES}, got {scales:?}"
    );
    ensure!(
        manifest_hr.records.iter().all(ImageRecord::is_original),
        "build_mlr expects HR originals only"
    );
    let scales: Vec<u32> = scales.iter().copied().collect();
    let records = manifest_hr
        .records
        .iter()
        .map(|r| {
            let scale = draw_scale(&scales, rng_seed, &format!("mlr/{}", r.image_id));
            ImageRecord {
                image_id: degraded_id(&r.image_id, scale),
                resolution_label: scale_label(scale),
                degradation_scale: scale,
                ..r.clone()
            }
        })
        .collect();
    let out = DatasetManifest::new(records, Provenance::Synthetic, interpolation);
    out.validate()?;
    Ok(out)
}
