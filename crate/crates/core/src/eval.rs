//! Query/gallery protocols, CMC scoring and evaluation reports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::data::{degraded_id, draw_scale, load_record, scale_label, DatasetManifest, ImageRecord, Interpolation, Provenance, Split};
use crate::error::{ensure, Error, Result};
use crate::matching::{feature_distance_matrix, fuse, resolution_similarity_matrix, DistanceMatrix, FusionConfig, FusionSign};
use crate::nn::{Backbone, EmbeddingSource};
use crate::rng::rng_for;
use crate::store::FeatureStore;

/// Scales a query (or a degraded gallery image) is drawn from.
pub const QUERY_SCALES: [u32; 3] = [2, 3, 4];

/// Default length of a CMC curve.
pub const DEFAULT_K_MAX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GalleryMode {
    #[serde(rename = "single_reso")]
    SingleReso,
    #[serde(rename = "multi_reso")]
    MultiReso,
}

impl fmt::Display for GalleryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GalleryMode::SingleReso => "single_reso",
            GalleryMode::MultiReso => "multi_reso",
        })
    }
}

impl FromStr for GalleryMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "single_reso" => Ok(GalleryMode::SingleReso),
            "multi" | "multi_reso" => Ok(GalleryMode::MultiReso),
            _ => Err(Error::invalid(format!("unknown gallery mode {s:?}; expected single or multi"))),
        }
    }
}

/// One query/gallery split ready for scoring. A gallery item is ignored
/// for a query when it shares both identity and camera with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub mode: GalleryMode,
    pub split: usize,
    pub split_seed: u64,
    pub provenance: Provenance,
    pub interpolation: Interpolation,
    pub query: Vec<ImageRecord>,
    pub gallery: Vec<ImageRecord>,
    /// Queries dropped for lacking a cross-camera match.
    pub excluded_queries: Vec<String>,
}

fn degraded(r: &ImageRecord, scale: u32) -> ImageRecord {
    ImageRecord {
        image_id: degraded_id(&r.image_id, scale),
        resolution_label: scale_label(scale),
        degradation_scale: scale,
        ..r.clone()
    }
}

/// Whether gallery item `g` counts for query `q`.
pub fn is_valid_pair(q: &ImageRecord, g: &ImageRecord) -> bool {
    !(q.identity == g.identity && q.camera == g.camera)
}

/// Build a protocol from a split's query and gallery sets.
///
/// Synthetic data: queries are degraded by a random scale in {2,3,4}; the
/// single-resolution gallery is HR, the multi-resolution gallery keeps each
/// image HR or degrades it with probability 1/2. Real data: images keep
/// their native resolution; the multi-resolution gallery holds one random
/// image per identity.
pub fn build_protocol(query: &DatasetManifest, gallery: &DatasetManifest, mode: GalleryMode, split: usize, seed: u64) -> Result<EvalProtocol> {
    ensure!(!query.records.is_empty() && !gallery.records.is_empty(), "protocol needs non-empty query and gallery sets");
    let q_ids: BTreeSet<&str> = query.records.iter().map(|r| r.image_id.as_str()).collect();
    ensure!(gallery.records.iter().all(|r| !q_ids.contains(r.image_id.as_str())), "query and gallery sets overlap");
    let tag = |kind: &str, id: &str| format!("protocol/{mode}/{split}/{kind}/{id}");
    let provenance = gallery.provenance;
    let (queries, gallery_records): (Vec<ImageRecord>, Vec<ImageRecord>) = match provenance {
        Provenance::Synthetic => {
            ensure!(
                query.records.iter().chain(&gallery.records).all(ImageRecord::is_original),
                "synthetic protocols are built from HR originals"
            );
            let q = query
                .records
                .iter()
                .map(|r| degraded(r, draw_scale(&QUERY_SCALES, seed, &tag("query", &r.image_id))))
                .collect();
            let g = match mode {
                GalleryMode::SingleReso => gallery.records.clone(),
                GalleryMode::MultiReso => gallery
                    .records
                    .iter()
                    .map(|r| {
                        let mut rng = rng_for(seed, &tag("gallery", &r.image_id));
                        if rng.random_bool(0.5) {
                            r.clone()
                        } else {
                            degraded(r, QUERY_SCALES[rng.random_range(0..QUERY_SCALES.len())])
                        }
                    })
                    .collect(),
            };
            (q, g)
        }
        Provenance::Real => {
            let g = match mode {
                GalleryMode::SingleReso => gallery.records.clone(),
                GalleryMode::MultiReso => gallery
                    .by_identity()
                    .into_iter()
                    .map(|(id, recs)| {
                        let mut rng = rng_for(seed, &tag("gallery", &id.to_string()));
                        recs[rng.random_range(0..recs.len())].clone()
                    })
                    .collect(),
            };
            (query.records.clone(), g)
        }
    };
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for q in queries {
        if gallery_records.iter().any(|g| g.identity == q.identity && is_valid_pair(&q, g)) {
            kept.push(q);
        } else {
            log::warn!("{mode} split {split}: query {} has no cross-camera match; excluded", q.image_id);
            excluded.push(q.image_id);
        }
    }
    ensure!(!kept.is_empty(), "no query in split {split} has a cross-camera match in the {mode} gallery");
    Ok(EvalProtocol {
        mode,
        split,
        split_seed: seed,
        provenance,
        interpolation: gallery.interpolation,
        query: kept,
        gallery: gallery_records,
        excluded_queries: excluded,
    })
}

/// Protocols of both modes for every split.
pub fn build_protocols(splits: &[Split], seed: u64) -> Result<Vec<EvalProtocol>> {
    let mut out = Vec::new();
    for (k, s) in splits.iter().enumerate() {
        for mode in [GalleryMode::SingleReso, GalleryMode::MultiReso] {
            out.push(build_protocol(&s.query, &s.gallery, mode, k, seed)?);
        }
    }
    Ok(out)
}

impl EvalProtocol {
    pub fn query_ids(&self) -> Vec<String> {
        self.query.iter().map(|r| r.image_id.clone()).collect()
    }

    pub fn gallery_ids(&self) -> Vec<String> {
        self.gallery.iter().map(|r| r.image_id.clone()).collect()
    }

    /// Every image the protocol needs embeddings for, first occurrence
    /// wins.
    pub fn images(&self) -> Vec<ImageRecord> {
        let mut seen = BTreeSet::new();
        self.query.iter().chain(&self.gallery).filter(|r| seen.insert(r.image_id.clone())).cloned().collect()
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&container::read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_json()?)
    }
}

/// Union of several protocols' images as one manifest.
pub fn protocol_images(protocols: &[EvalProtocol]) -> Result<DatasetManifest> {
    ensure!(!protocols.is_empty(), "no protocols given");
    let mut seen = BTreeSet::new();
    let records = protocols.iter().flat_map(EvalProtocol::images).filter(|r| seen.insert(r.image_id.clone())).collect();
    let p = &protocols[0];
    let mut m = DatasetManifest::new(records, p.provenance, p.interpolation);
    if p.provenance == Provenance::Real {
        m.resolution_class_count = crate::data::REAL_RESOLUTION_CLASSES;
    }
    Ok(m)
}

/// Cumulative match characteristic, `rank_hits[k-1]` being the rank-k
/// score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcResult {
    pub rank_hits: Vec<f64>,
    pub query_count: usize,
    pub split_count: usize,
}

impl CmcResult {
    pub fn at(&self, k: usize) -> f64 {
        self.rank_hits[(k.min(self.rank_hits.len())).max(1) - 1]
    }

    pub fn r1(&self) -> f64 {
        self.at(1)
    }

    pub fn r5(&self) -> f64 {
        self.at(5)
    }

    pub fn r10(&self) -> f64 {
        self.at(10)
    }

    /// Arithmetic mean of per-split curves.
    pub fn mean(results: &[CmcResult]) -> Result<CmcResult> {
        ensure!(!results.is_empty(), "nothing to average");
        let k = results[0].rank_hits.len();
        ensure!(results.iter().all(|r| r.rank_hits.len() == k), "curves differ in length");
        Ok(CmcResult {
            rank_hits: (0..k).map(|i| results.iter().map(|r| r.rank_hits[i]).sum::<f64>() / results.len() as f64).collect(),
            query_count: results.iter().map(|r| r.query_count).sum(),
            split_count: results.iter().map(|r| r.split_count).sum(),
        })
    }
}

/// 0-based position of the first correct match per query, after removing
/// same-identity same-camera gallery items and sorting the rest by
/// distance, ties by gallery index.
pub fn first_match_positions(values: &[f64], query: &[(u32, u32)], gallery: &[(u32, u32)]) -> Result<Vec<usize>> {
    ensure!(values.len() == query.len() * gallery.len(), "matrix size does not match the id lists");
    ensure!(values.iter().all(|v| v.is_finite()), "distances must be finite");
    let g = gallery.len();
    let mut out = Vec::with_capacity(query.len());
    let mut order: Vec<usize> = Vec::with_capacity(g);
    for (qi, &(qid, qcam)) in query.iter().enumerate() {
        let row = &values[qi * g..(qi + 1) * g];
        order.clear();
        order.extend((0..g).filter(|&j| !(gallery[j].0 == qid && gallery[j].1 == qcam)));
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        match order.iter().position(|&j| gallery[j].0 == qid) {
            Some(p) => out.push(p),
            None => return Err(Error::invalid(format!("query {qi} has no valid gallery match"))),
        }
    }
    Ok(out)
}

/// CMC curve of length `k_max` from raw `(identity, camera)` lists.
pub fn cmc_raw(values: &[f64], query: &[(u32, u32)], gallery: &[(u32, u32)], k_max: usize) -> Result<CmcResult> {
    ensure!(k_max >= 1, "k_max must be >= 1");
    ensure!(!query.is_empty(), "no queries");
    let pos = first_match_positions(values, query, gallery)?;
    let n = pos.len() as f64;
    Ok(CmcResult {
        rank_hits: (1..=k_max).map(|k| pos.iter().filter(|&&p| p < k).count() as f64 / n).collect(),
        query_count: pos.len(),
        split_count: 1,
    })
}

fn meta(records: &[ImageRecord]) -> Vec<(u32, u32)> {
    records.iter().map(|r| (r.identity, r.camera)).collect()
}

pub fn cmc(d: &DistanceMatrix, protocol: &EvalProtocol, k_max: usize) -> Result<CmcResult> {
    ensure!(
        d.query_ids == protocol.query_ids() && d.gallery_ids == protocol.gallery_ids(),
        "distance matrix ids do not follow the protocol order"
    );
    cmc_raw(&d.values, &meta(&protocol.query), &meta(&protocol.gallery), k_max)
}

/// How a row's distances were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Baseline,
    Rfd(FusionSign),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Baseline => "bf",
            Method::Rfd(FusionSign::Paper) => "bf+rfd",
            Method::Rfd(FusionSign::Inverted) => "bf+rfd:inverted",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bf" => Ok(Method::Baseline),
            "bf+rfd" => Ok(Method::Rfd(FusionSign::Paper)),
            "bf+rfd:inverted" => Ok(Method::Rfd(FusionSign::Inverted)),
            _ => Err(Error::invalid(format!("unknown method {s:?}"))),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// One protocol/method/λ/split result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub protocol: GalleryMode,
    pub method: Method,
    pub lambda: f64,
    pub split: usize,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R5")]
    pub r5: f64,
    #[serde(rename = "R10")]
    pub r10: f64,
    pub cmc: Vec<f64>,
    pub query_count: usize,
}

/// Mean over splits of one protocol/method/λ group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub protocol: GalleryMode,
    pub method: Method,
    pub lambda: f64,
    pub split_count: usize,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R5")]
    pub r5: f64,
    #[serde(rename = "R10")]
    pub r10: f64,
    pub cmc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub aggregate: Vec<AggregateRow>,
}

pub const REPORT_CSV_HEADER: [&str; 7] = ["protocol", "method", "lambda", "split", "R1", "R5", "R10"];

impl EvalReport {
    pub fn from_rows(rows: Vec<ReportRow>) -> Result<Self> {
        let mut groups: BTreeMap<(GalleryMode, Method, u64), Vec<&ReportRow>> = BTreeMap::new();
        for r in &rows {
            groups.entry((r.protocol, r.method, r.lambda.to_bits())).or_default().push(r);
        }
        let mut aggregate = Vec::new();
        for ((protocol, method, lambda), members) in groups {
            let curves: Vec<CmcResult> = members
                .iter()
                .map(|r| CmcResult {
                    rank_hits: r.cmc.clone(),
                    query_count: r.query_count,
                    split_count: 1,
                })
                .collect();
            let m = CmcResult::mean(&curves)?;
            let n = members.len() as f64;
            aggregate.push(AggregateRow {
                protocol,
                method,
                lambda: f64::from_bits(lambda),
                split_count: members.len(),
                r1: members.iter().map(|r| r.r1).sum::<f64>() / n,
                r5: members.iter().map(|r| r.r5).sum::<f64>() / n,
                r10: members.iter().map(|r| r.r10).sum::<f64>() / n,
                cmc: m.rank_hits,
            });
        }
        Ok(EvalReport { rows, aggregate })
    }

    /// Concatenate reports and recompute the aggregate.
    pub fn combine(reports: Vec<EvalReport>) -> Result<Self> {
        Self::from_rows(reports.into_iter().flat_map(|r| r.rows).collect())
    }

    pub fn aggregate_for(&self, protocol: GalleryMode, method: Method, lambda: f64) -> Option<&AggregateRow> {
        self.aggregate.iter().find(|a| a.protocol == protocol && a.method == method && a.lambda == lambda)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.protocol.to_string(),
                r.method.to_string(),
                r.lambda.to_string(),
                r.split.to_string(),
                r.r1.to_string(),
                r.r5.to_string(),
                r.r10.to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    /// Parse and check the JSON report: every row's R-values agree with
    /// its curve, curves are monotone in `[0, 1]`, and the aggregate equals
    /// the mean of its rows.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let report: EvalReport = serde_json::from_slice(bytes)?;
        for r in &report.rows {
            let c = &r.cmc;
            let bad = c.is_empty()
                || c.iter().any(|v| !(0.0..=1.0).contains(v))
                || c.windows(2).any(|w| w[1] < w[0])
                || c[0] != r.r1
                || c[4.min(c.len() - 1)] != r.r5
                || c[9.min(c.len() - 1)] != r.r10;
            if bad {
                return Err(Error::Malformed(format!("report row {} {} split {} is inconsistent", r.protocol, r.method, r.split)));
            }
        }
        let expect = Self::from_rows(report.rows.clone())?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        let same = expect.aggregate.len() == report.aggregate.len()
            && expect.aggregate.iter().zip(&report.aggregate).all(|(a, b)| {
                a.protocol == b.protocol && a.method == b.method && a.lambda == b.lambda && a.split_count == b.split_count && close(a.r1, b.r1) && close(a.r5, b.r5) && close(a.r10, b.r10)
            });
        if !same {
            return Err(Error::Malformed("report aggregate does not match its rows".into()));
        }
        Ok(report)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Self::from_json(&container::read_file(path)?)
    }
}

/// Embed `records` with `model` into a feature store.
pub fn extract_store(model: &Backbone, checkpoint_hash: &str, records: &[ImageRecord], interpolation: Interpolation) -> Result<FeatureStore> {
    let mut ids = Vec::with_capacity(records.len());
    let mut vectors = Vec::with_capacity(records.len());
    for r in records {
        let input = model.prepare_input(&load_record(r, interpolation)?)?;
        vectors.push(model.embed(&input, r.image_id.clone())?.vector);
        ids.push(r.image_id.clone());
    }
    FeatureStore::new(model.source, checkpoint_hash, ids, vectors)
}

/// Matrices and scores of one protocol.
#[derive(Debug, Clone)]
pub struct ProtocolResult {
    pub protocol: GalleryMode,
    pub split: usize,
    pub d_f: DistanceMatrix,
    pub d_r: Option<DistanceMatrix>,
    pub fused: Vec<(FusionConfig, DistanceMatrix)>,
    pub rows: Vec<ReportRow>,
}

fn row(p: &EvalProtocol, method: Method, lambda: f64, c: &CmcResult) -> ReportRow {
    ReportRow {
        protocol: p.mode,
        method,
        lambda,
        split: p.split,
        r1: c.r1(),
        r5: c.r5(),
        r10: c.r10(),
        cmc: c.rank_hits.clone(),
        query_count: c.query_count,
    }
}

/// Score one protocol from precomputed stores: the feature network alone,
/// then once per fusion setting when a resolution store is given.
pub fn evaluate_protocol(protocol: &EvalProtocol, bf: &FeatureStore, br: Option<&FeatureStore>, fusions: &[FusionConfig], k_max: usize) -> Result<ProtocolResult> {
    bf.require_source(EmbeddingSource::Feature)?;
    ensure!(fusions.is_empty() || br.is_some(), "fusion requested without a resolution-network store");
    let (qi, gi) = (protocol.query_ids(), protocol.gallery_ids());
    let d_f = feature_distance_matrix(&bf.select(&qi)?, &bf.select(&gi)?, &qi, &gi)?;
    let base = cmc(&d_f, protocol, k_max)?;
    let mut rows = vec![row(protocol, Method::Baseline, 0.0, &base)];
    let mut fused = Vec::new();
    let d_r = match br {
        Some(br) if !fusions.is_empty() => {
            br.require_source(EmbeddingSource::Resolution)?;
            let d_r = resolution_similarity_matrix(&br.select(&qi)?, &br.select(&gi)?, &qi, &gi)?;
            for &f in fusions {
                let d = fuse(&d_f, &d_r, f)?;
                rows.push(row(protocol, Method::Rfd(f.sign), f.lambda, &cmc(&d, protocol, k_max)?));
                fused.push((f, d));
            }
            Some(d_r)
        }
        _ => None,
    };
    Ok(ProtocolResult {
        protocol: protocol.mode,
        split: protocol.split,
        d_f,
        d_r,
        fused,
        rows,
    })
}

/// Evaluate protocols with one pair of stores per split; `br` is indexed
/// like `bf` by split number.
pub fn evaluate_stores(protocols: &[EvalProtocol], bf: &HashMap<usize, FeatureStore>, br: &HashMap<usize, FeatureStore>, fusions: &[FusionConfig], k_max: usize) -> Result<(EvalReport, Vec<ProtocolResult>)> {
    let mut results = Vec::new();
    for p in protocols {
        let bf_store = bf.get(&p.split).ok_or_else(|| Error::invalid(format!("no feature store for split {}", p.split)))?;
        let br_store = if fusions.is_empty() {
            None
        } else {
            Some(br.get(&p.split).ok_or_else(|| Error::invalid(format!("fusion requested but no resolution store for split {}", p.split)))?)
        };
        results.push(evaluate_protocol(p, bf_store, br_store, fusions, k_max)?);
    }
    let report = EvalReport::from_rows(results.iter().flat_map(|r| r.rows.clone()).collect())?;
    Ok((report, results))
}

/// Extract embeddings with the given networks and evaluate every protocol.
/// All protocols share the networks, so they should come from one split.
pub fn evaluate_run(bf: (&Backbone, &str), br: Option<(&Backbone, &str)>, protocols: &[EvalProtocol], fusions: &[FusionConfig], k_max: usize) -> Result<(EvalReport, Vec<ProtocolResult>)> {
    ensure!(fusions.is_empty() || br.is_some(), "fusion requested without a resolution-network checkpoint");
    ensure!(bf.0.source == EmbeddingSource::Feature, "first checkpoint must be a feature network");
    let images = protocol_images(protocols)?;
    let bf_store = extract_store(bf.0, bf.1, &images.records, images.interpolation)?;
    let br_store = match br {
        Some((m, h)) if !fusions.is_empty() => Some(extract_store(m, h, &images.records, images.interpolation)?),
        _ => None,
    };
    let splits: BTreeSet<usize> = protocols.iter().map(|p| p.split).collect();
    let bf_map: HashMap<usize, FeatureStore> = splits.iter().map(|&s| (s, bf_store.clone())).collect();
    let br_map: HashMap<usize, FeatureStore> = match br_store {
        Some(s) => splits.iter().map(|&k| (k, s.clone())).collect(),
        None => HashMap::new(),
    };
    evaluate_stores(protocols, &bf_map, &br_map, fusions, k_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_splits;
    use proptest::prelude::*;
    use rand::Rng;

    fn manifest(ids: u32, cams: u32, per_cam: u32, provenance: Provenance) -> DatasetManifest {
        let mut records = Vec::new();
        for id in 0..ids {
            for cam in 0..cams {
                for s in 0..per_cam {
                    records.push(ImageRecord::original(format!("{id}_{cam}_{s}"), id, cam, 32, 96, ""));
                }
            }
        }
        DatasetManifest::new(records, provenance, Interpolation::Bicubic)
    }

    #[test]
    fn single_reso_gallery_is_hr_and_queries_degraded() {
        let splits = make_splits(&manifest(10, 2, 3, Provenance::Synthetic), 1, 4).unwrap();
        let p = build_protocol(&splits[0].query, &splits[0].gallery, GalleryMode::SingleReso, 0, 4).unwrap();
        assert!(p.gallery.iter().all(|r| r.degradation_scale == 1));
        assert!(p.query.iter().all(|r| QUERY_SCALES.contains(&r.degradation_scale)));
        let q: BTreeSet<_> = p.query_ids().into_iter().collect();
        assert!(p.gallery_ids().iter().all(|g| !q.contains(g)));
        assert_eq!(p, build_protocol(&splits[0].query, &splits[0].gallery, GalleryMode::SingleReso, 0, 4).unwrap());
    }

    #[test]
    fn multi_reso_synthetic_gallery_mixes_resolutions() {
        let splits = make_splits(&manifest(40, 2, 4, Provenance::Synthetic), 1, 1).unwrap();
        let p = build_protocol(&splits[0].query, &splits[0].gallery, GalleryMode::MultiReso, 0, 1).unwrap();
        let hr = p.gallery.iter().filter(|r| r.degradation_scale == 1).count();
        assert!(hr > 0 && hr < p.gallery.len());
        assert_eq!(p.gallery.len(), splits[0].gallery.records.len());
    }

    #[test]
    fn multi_reso_real_gallery_has_one_image_per_identity() {
        let splits = make_splits(&manifest(12, 2, 3, Provenance::Real), 1, 2).unwrap();
        let p = build_protocol(&splits[0].query, &splits[0].gallery, GalleryMode::MultiReso, 0, 2).unwrap();
        let ids: Vec<u32> = p.gallery.iter().map(|r| r.identity).collect();
        let distinct: BTreeSet<u32> = ids.iter().copied().collect();
        assert_eq!(ids.len(), distinct.len());
        for q in &p.query {
            let g = p.gallery.iter().find(|g| g.identity == q.identity).unwrap();
            assert_ne!(g.camera, q.camera);
        }
        assert_eq!(p.query.len() + p.excluded_queries.len(), splits[0].query.records.len());
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let q = [(0, 0), (1, 0)];
        let g = [(0, 1), (1, 1), (2, 1)];
        let d = [0.1, 0.5, 0.9, 0.7, 0.2, 0.3];
        let c = cmc_raw(&d, &q, &g, 10).unwrap();
        assert_eq!((c.r1(), c.r5(), c.r10()), (1.0, 1.0, 1.0));
    }

    #[test]
    fn match_at_position_seven_counts_for_rank_ten_only() {
        let q = [(0, 0)];
        let mut g: Vec<(u32, u32)> = (1..=10).map(|i| (i, 1)).collect();
        g[6] = (0, 1);
        let d: Vec<f64> = (0..10).map(f64::from).collect();
        let c = cmc_raw(&d, &q, &g, 10).unwrap();
        assert_eq!((c.r1(), c.r5(), c.r10()), (0.0, 0.0, 1.0));
        assert_eq!(first_match_positions(&d, &q, &g).unwrap(), vec![6]);
    }

    #[test]
    fn same_camera_match_is_ignored_and_ties_go_to_lower_index() {
        let q = [(0, 0)];
        let g = [(0, 0), (1, 1), (0, 1)];
        assert_eq!(first_match_positions(&[0.0, 0.5, 0.5], &q, &g).unwrap(), vec![1]);
        let g2 = [(0, 1), (1, 1)];
        assert_eq!(first_match_positions(&[0.5, 0.5], &q, &g2).unwrap(), vec![0]);
        assert!(first_match_positions(&[0.0], &q, &[(0, 0)]).is_err());
    }

    /// Rank of the first true match by counting, without sorting.
    fn oracle(values: &[f64], q: &[(u32, u32)], g: &[(u32, u32)], k_max: usize) -> Vec<f64> {
        let mut hits = vec![0.0; k_max];
        for (qi, &(qid, qcam)) in q.iter().enumerate() {
            let d = |j: usize| values[qi * g.len() + j];
            let valid = |j: usize| !(g[j].0 == qid && g[j].1 == qcam);
            let best = (0..g.len())
                .filter(|&j| valid(j) && g[j].0 == qid)
                .map(|m| (0..g.len()).filter(|&j| valid(j) && (d(j) < d(m) || (d(j) == d(m) && j < m))).count())
                .min()
                .unwrap();
            for (k, h) in hits.iter_mut().enumerate() {
                if best <= k {
                    *h += 1.0;
                }
            }
        }
        hits.iter().map(|h| h / q.len() as f64).collect()
    }

    /// Random instances where each query takes the identity of some gallery
    /// item and the other camera, so a valid match always exists.
    fn instance() -> impl Strategy<Value = (Vec<(u32, u32)>, Vec<(u32, u32)>, Vec<f64>)> {
        (1usize..=8, 2usize..=12).prop_flat_map(|(nq, ng)| {
            (
                proptest::collection::vec(0usize..ng, nq),
                proptest::collection::vec((0u32..3, 0u32..2), ng),
                proptest::collection::vec(prop_oneof![0.0f64..1.0, Just(0.5)], nq * ng),
            )
                .prop_map(|(picks, g, d)| {
                    let q = picks.iter().map(|&j| (g[j].0, 1 - g[j].1)).collect();
                    (q, g, d)
                })
        })
    }

    proptest! {
        #[test]
        fn matches_counting_oracle((q, g, d) in instance()) {
            prop_assert_eq!(cmc_raw(&d, &q, &g, 12).unwrap().rank_hits, oracle(&d, &q, &g, 12));
        }

        #[test]
        fn monotone_and_invariant_under_increasing_maps((q, g, d) in instance()) {
            let c = cmc_raw(&d, &q, &g, 12).unwrap();
            prop_assert!(c.rank_hits.windows(2).all(|w| w[0] <= w[1]));
            let mapped: Vec<f64> = d.iter().map(|v| (3.0 * v).exp() + 1.0).collect();
            prop_assert_eq!(cmc_raw(&mapped, &q, &g, 12).unwrap().rank_hits, c.rank_hits);
        }

        #[test]
        fn worse_distractor_never_helps((q, g, d) in instance(), id in 0u32..3, cam in 0u32..2) {
            let before = cmc_raw(&d, &q, &g, 12).unwrap();
            let mut g2 = g.clone();
            g2.push((id, cam));
            let mut d2 = Vec::new();
            for row in d.chunks(g.len()) {
                d2.extend_from_slice(row);
                d2.push(10.0);
            }
            let after = cmc_raw(&d2, &q, &g2, 12).unwrap();
            for (a, b) in after.rank_hits.iter().zip(&before.rank_hits) {
                prop_assert!(a <= b);
            }
        }

        #[test]
        fn gallery_permutation_with_distinct_distances((q, g, d) in instance(), rot in 0usize..12) {
            let n = g.len();
            let mut d = d;
            for (i, v) in d.iter_mut().enumerate() {
                *v += i as f64 * 1e-9;
            }
            let perm: Vec<usize> = (0..n).map(|j| (j + rot) % n).collect();
            let g2: Vec<_> = perm.iter().map(|&j| g[j]).collect();
            let d2: Vec<f64> = d.chunks(n).flat_map(|row| perm.iter().map(|&j| row[j]).collect::<Vec<_>>()).collect();
            prop_assert_eq!(cmc_raw(&d, &q, &g, 12).unwrap().rank_hits, cmc_raw(&d2, &q, &g2, 12).unwrap().rank_hits);
        }
    }

    fn report_row(split: usize, method: Method, r1: f64) -> ReportRow {
        let cmc: Vec<f64> = (0..10).map(|k| (r1 + k as f64 * 0.05).min(1.0)).collect();
        ReportRow {
            protocol: GalleryMode::MultiReso,
            method,
            lambda: if method == Method::Baseline { 0.0 } else { 0.1 },
            split,
            r1: cmc[0],
            r5: cmc[4],
            r10: cmc[9],
            cmc,
            query_count: 5,
        }
    }

    #[test]
    fn aggregate_is_the_mean_of_splits() {
        let rows: Vec<ReportRow> = (0..10).map(|s| report_row(s, Method::Baseline, s as f64 / 20.0)).chain((0..10).map(|s| report_row(s, Method::Rfd(FusionSign::Paper), 0.3))).collect();
        let r = EvalReport::from_rows(rows).unwrap();
        let a = r.aggregate_for(GalleryMode::MultiReso, Method::Baseline, 0.0).unwrap();
        assert_eq!(a.split_count, 10);
        assert!((a.r1 - 0.225).abs() < 1e-12);
        assert!((r.aggregate_for(GalleryMode::MultiReso, Method::Rfd(FusionSign::Paper), 0.1).unwrap().r1 - 0.3).abs() < 1e-12);
        let json = r.to_json().unwrap();
        assert_eq!(EvalReport::from_json(&json).unwrap(), r);
        let csv = String::from_utf8(r.to_csv().unwrap()).unwrap();
        assert!(csv.starts_with("protocol,method,lambda,split,R1,R5,R10\n"));
        assert!(csv.contains("multi_reso,bf+rfd,0.1,3,0.3,"));
        let mut broken = r.clone();
        broken.aggregate[0].r1 += 0.5;
        assert!(EvalReport::from_json(&broken.to_json().unwrap()).is_err());
    }

    #[test]
    fn method_labels_roundtrip() {
        for m in [Method::Baseline, Method::Rfd(FusionSign::Paper), Method::Rfd(FusionSign::Inverted)] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn lambda_zero_fusion_equals_baseline() {
        let splits = make_splits(&manifest(8, 2, 3, Provenance::Synthetic), 1, 0).unwrap();
        let p = build_protocol(&splits[0].query, &splits[0].gallery, GalleryMode::MultiReso, 0, 0).unwrap();
        let imgs = p.images();
        let ids: Vec<String> = imgs.iter().map(|r| r.image_id.clone()).collect();
        let mut rng = rng_for(0, "test/eval-stores");
        let mut vecs = |n: usize| -> Vec<Vec<f32>> { (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect() };
        let bf = FeatureStore::new(EmbeddingSource::Feature, "a", ids.clone(), vecs(ids.len())).unwrap();
        let br = FeatureStore::new(EmbeddingSource::Resolution, "b", ids.clone(), vecs(ids.len())).unwrap();
        let zero = FusionConfig {
            lambda: 0.0,
            sign: FusionSign::Paper,
        };
        let res = evaluate_protocol(&p, &bf, Some(&br), &[zero], 10).unwrap();
        assert_eq!(res.rows[0].cmc, res.rows[1].cmc);
        assert!(evaluate_protocol(&p, &bf, None, &[zero], 10).is_err());
        assert!(matches!(evaluate_protocol(&p, &br, None, &[], 10), Err(Error::RoleMismatch { .. })));
    }
}
