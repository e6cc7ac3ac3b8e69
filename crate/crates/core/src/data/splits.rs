use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use super::record::{DatasetManifest, ImageRecord};
use crate::error::{ensure, Result};
use crate::rng::rng_for;

/// One train/test partition. `query` and `gallery` hold the test identities.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: DatasetManifest,
    pub query: DatasetManifest,
    pub gallery: DatasetManifest,
}

/// Identities observed by at least two cameras.
pub fn multi_camera_identities(manifest: &DatasetManifest) -> BTreeSet<u32> {
    let mut cams: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for r in &manifest.records {
        cams.entry(r.identity).or_default().insert(r.camera);
    }
    cams.into_iter().filter(|(_, c)| c.len() >= 2).map(|(id, _)| id).collect()
}

/// Draw `split_count` random identity partitions.
///
/// Identities seen by a single camera are discarded first. The rest are
/// shuffled and halved, the train side taking the extra identity when the
/// count is odd (751/750 on Market-1501, 25/25 on CAVIAR after discarding).
/// For every test identity one query image is drawn per camera holding at
/// least two of its images, so every camera keeps a gallery image and each
/// query has a cross-camera match; if no camera qualifies, a single query
/// comes from a random camera.
pub fn make_splits(manifest: &DatasetManifest, split_count: u32, rng_seed: u64) -> Result<Vec<Split>> {
    ensure!(split_count >= 1, "split_count must be >= 1");
    let eligible: Vec<u32> = multi_camera_identities(manifest).into_iter().collect();
    ensure!(
        eligible.len() >= 2,
        "need at least 2 multi-camera identities to split, found {}",
        eligible.len()
    );
    let by_identity = manifest.by_identity();
    (0..split_count)
        .map(|k| {
            let mut ids = eligible.clone();
            ids.shuffle(&mut rng_for(rng_seed, &format!("split/{k}")));
            let n_train = ids.len().div_ceil(2);
            let train_ids: BTreeSet<u32> = ids[..n_train].iter().copied().collect();
            let test_ids: BTreeSet<u32> = ids[n_train..].iter().copied().collect();

            let train = manifest.records.iter().filter(|r| train_ids.contains(&r.identity)).cloned().collect();

            let mut query_ids = BTreeSet::new();
            for id in &test_ids {
                let recs = &by_identity[id];
                let mut per_cam: BTreeMap<u32, Vec<&ImageRecord>> = BTreeMap::new();
                for r in recs {
                    per_cam.entry(r.camera).or_default().push(r);
                }
                let mut picked_any = false;
                for (cam, imgs) in &per_cam {
                    if imgs.len() >= 2 {
                        let mut rng = rng_for(rng_seed, &format!("split/{k}/query/{id}/{cam}"));
                        query_ids.insert(imgs[rng.random_range(0..imgs.len())].image_id.clone());
                        picked_any = true;
                    }
                }
                if !picked_any {
                    let mut rng = rng_for(rng_seed, &format!("split/{k}/query/{id}"));
                    let cams: Vec<_> = per_cam.keys().collect();
                    let cam = cams[rng.random_range(0..cams.len())];
                    query_ids.insert(per_cam[cam][0].image_id.clone());
                }
            }
            let (query, gallery): (Vec<ImageRecord>, Vec<ImageRecord>) = manifest
                .records
                .iter()
                .filter(|r| test_ids.contains(&r.identity))
                .cloned()
                .partition(|r| query_ids.contains(&r.image_id));
            Ok(Split {
                train: manifest.with_records(train),
                query: manifest.with_records(query),
                gallery: manifest.with_records(gallery),
            })
        })
        .collect()
}
