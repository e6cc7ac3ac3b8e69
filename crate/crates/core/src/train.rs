//! Training loop shared by the feature and resolution networks.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_record, DatasetManifest};
use crate::error::{ensure, Error, Result};
use crate::losses::{batch_hard_triplet_with_grad, id_loss_with_grad, PkSampler, DEFAULT_MARGIN};
use crate::nn::{Backbone, BackboneConfig, EmbeddingSource, FeatureMap};
use crate::rng::{derive_seed, rng_for};

/// Random erasing: with `probability`, overwrite one rectangle covering
/// `area` of the input (fraction range) with the per-channel mean, which
/// is zero after normalisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErasingConfig {
    pub probability: f64,
    pub area_min: f64,
    pub area_max: f64,
    pub aspect_min: f64,
    pub aspect_max: f64,
}

impl Default for ErasingConfig {
    fn default() -> Self {
        ErasingConfig {
            probability: 0.5,
            area_min: 0.02,
            area_max: 0.4,
            aspect_min: 0.3,
            aspect_max: 1.0 / 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Total iterations are `iterations_per_identity × identity_count`
    /// unless `total_iterations` is set.
    pub iterations_per_identity: u64,
    pub total_iterations: Option<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 penalty added to every gradient.
    pub weight_decay: f64,
    pub dropout: f32,
    /// Identities per batch for the feature network.
    pub p: usize,
    /// Images per identity for the feature network.
    pub k: usize,
    /// Images per class for the resolution network; its batch is
    /// `classes × resolution_k`.
    pub resolution_k: usize,
    pub margin: f64,
    /// Apply the triplet term when training on resolution labels.
    pub resolution_triplet: bool,
    pub flip_probability: f64,
    /// Record losses every this many iterations.
    pub log_every: u64,
    pub erasing: ErasingConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            iterations_per_identity: 500,
            total_iterations: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 5e-4,
            dropout: 0.5,
            p: 8,
            k: 4,
            resolution_k: 16,
            margin: DEFAULT_MARGIN,
            resolution_triplet: false,
            flip_probability: 0.5,
            log_every: 1,
            erasing: ErasingConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning rate must be positive");
        ensure!((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), "Adam betas must lie in [0, 1)");
        ensure!(self.epsilon > 0.0, "Adam epsilon must be positive");
        ensure!(self.weight_decay >= 0.0, "weight decay must be non-negative");
        ensure!((0.0..1.0).contains(&self.dropout), "dropout must lie in [0, 1)");
        ensure!(self.p >= 1 && self.k >= 2 && self.resolution_k >= 2, "batch needs P >= 1, K >= 2");
        ensure!(self.margin >= 0.0, "margin must be non-negative");
        ensure!((0.0..=1.0).contains(&self.flip_probability), "flip probability must lie in [0, 1]");
        let e = &self.erasing;
        ensure!(
            (0.0..=1.0).contains(&e.probability) && 0.0 < e.area_min && e.area_min <= e.area_max && e.area_max <= 1.0 && 0.0 < e.aspect_min && e.aspect_min <= e.aspect_max,
            "invalid random-erasing parameters"
        );
        ensure!(self.log_every >= 1, "log_every must be >= 1");
        Ok(())
    }

    pub fn iterations(&self, identity_count: usize) -> u64 {
        self.total_iterations.unwrap_or(self.iterations_per_identity * identity_count as u64)
    }

    /// Learning rate at 0-based iteration `t` of `total`: divided by ten
    /// from `⌈total/2⌉` on.
    pub fn lr_at(&self, t: u64, total: u64) -> f64 {
        if t < total.div_ceil(2) {
            self.learning_rate
        } else {
            self.learning_rate / 10.0
        }
    }
}

/// One recorded point of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: u64,
    pub id_loss: f64,
    pub triplet_loss: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub source: EmbeddingSource,
    pub seed: u64,
    pub iterations: u64,
    pub class_count: usize,
    pub rows: Vec<LossRow>,
    /// Wall-clock seconds since the start, one per row. Not part of the
    /// reproducible CSV.
    pub elapsed_seconds: Vec<f64>,
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "id_loss", "triplet_loss", "total", "lr"])?;
        for r in &self.rows {
            w.serialize((r.iteration, r.id_loss, r.triplet_loss, r.total, r.lr))?;
        }
        w.into_inner().map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Vec<LossRow>> {
        let mut r = csv::Reader::from_reader(bytes);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        ensure!(header == ["iteration", "id_loss", "triplet_loss", "total", "lr"], "unexpected loss-curve header {header:?}");
        r.deserialize().map(|row| Ok(row?)).collect()
    }

    /// Mean total loss over the first and last `n` recorded rows.
    pub fn head_tail_means(&self, n: usize) -> (f64, f64) {
        let n = n.min(self.rows.len()).max(1);
        let mean = |rows: &[LossRow]| rows.iter().map(|r| r.total).sum::<f64>() / rows.len().max(1) as f64;
        (mean(&self.rows[..n.min(self.rows.len())]), mean(&self.rows[self.rows.len().saturating_sub(n)..]))
    }
}

/// Prepared network inputs with integer class targets.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub inputs: Vec<FeatureMap>,
    /// Class index in `0..class_count` per input.
    pub targets: Vec<u32>,
    pub class_count: usize,
}

/// Load every record's (degraded) pixels and prepare them for `config`.
pub fn prepare_inputs(manifest: &DatasetManifest, config: &BackboneConfig) -> Result<Vec<FeatureMap>> {
    manifest
        .records
        .iter()
        .map(|r| crate::nn::prepare_input(config, &load_record(r, manifest.interpolation)?))
        .collect()
}

/// Identity targets: identities mapped, in ascending order, onto
/// `0..identity_count`.
pub fn identity_targets(manifest: &DatasetManifest) -> (Vec<u32>, BTreeMap<u32, u32>) {
    let map: BTreeMap<u32, u32> = manifest.identities().into_iter().enumerate().map(|(i, id)| (id, i as u32)).collect();
    (manifest.records.iter().map(|r| map[&r.identity]).collect(), map)
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f32], grads: &[f32], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps, wd) = (lr as f32, cfg.epsilon as f32, cfg.weight_decay as f32);
        for i in 0..params.len() {
            let g = grads[i] + wd * params[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

fn flip(input: &FeatureMap) -> FeatureMap {
    let mut out = input.clone();
    let w = input.width;
    for row in out.data.chunks_mut(w) {
        row.reverse();
    }
    out
}

fn erase<R: Rng>(input: &mut FeatureMap, cfg: &ErasingConfig, rng: &mut R) {
    let (h, w) = (input.height, input.width);
    let area = (h * w) as f64;
    for _ in 0..100 {
        let target = area * rng.random_range(cfg.area_min..=cfg.area_max);
        let aspect = rng.random_range(cfg.aspect_min.ln()..=cfg.aspect_max.ln()).exp();
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh >= h || ew >= w {
            continue;
        }
        let y0 = rng.random_range(0..=h - eh);
        let x0 = rng.random_range(0..=w - ew);
        let plane = h * w;
        for c in 0..input.channels {
            for y in y0..y0 + eh {
                input.data[c * plane + y * w + x0..c * plane + y * w + x0 + ew].fill(0.0);
            }
        }
        return;
    }
}

/// Training-time augmentation: horizontal flip, then random erasing.
pub fn augment<R: Rng>(input: &FeatureMap, cfg: &TrainConfig, rng: &mut R) -> FeatureMap {
    let mut x = if rng.random_bool(cfg.flip_probability) { flip(input) } else { input.clone() };
    if rng.random_bool(cfg.erasing.probability) {
        erase(&mut x, &cfg.erasing, rng);
    }
    x
}

/// Everything that fixes one training run.
pub struct TrainJob<'a> {
    pub set: &'a TrainingSet,
    pub backbone: BackboneConfig,
    pub config: &'a TrainConfig,
    pub source: EmbeddingSource,
    pub p: usize,
    pub k: usize,
    pub triplet: bool,
    pub iterations: u64,
    pub seed: u64,
}

/// Run the loop: per step, a P×K batch, summed-head cross-entropy averaged
/// over the batch plus batch-hard triplet over the branch embeddings,
/// then one Adam update.
pub fn train(job: &TrainJob) -> Result<(Backbone, TrainReport)> {
    let cfg = job.config;
    cfg.validate()?;
    let set = job.set;
    ensure!(set.inputs.len() == set.targets.len(), "inputs and targets differ in length");
    ensure!(set.targets.iter().all(|&t| (t as usize) < set.class_count), "target out of range");
    let mut backbone = job.backbone.clone();
    backbone.dropout = cfg.dropout;
    let mut model = Backbone::new(backbone, set.class_count, job.source, job.seed)?;
    let mut sampler = PkSampler::new(&set.targets, job.p, job.k, derive_seed(job.seed, "train/batches"))?;
    let mut rng: ChaCha8Rng = rng_for(job.seed, "train/augment");
    let mut adam = Adam::new(model.param_count());
    let mut grads = vec![0.0f32; model.param_count()];
    let mut report = TrainReport {
        source: job.source,
        seed: job.seed,
        iterations: job.iterations,
        class_count: set.class_count,
        rows: Vec::new(),
        elapsed_seconds: Vec::new(),
        checkpoint: None,
    };
    let start = Instant::now();
    for t in 0..job.iterations {
        let batch = sampler.next_batch();
        let n = batch.items.len();
        let mut outputs = Vec::with_capacity(n);
        for &(i, _) in &batch.items {
            let x = augment(&set.inputs[i], cfg, &mut rng);
            outputs.push(model.forward_train(&x, &mut rng)?);
        }
        let labels = batch.labels();
        let mut id_total = 0.0;
        let mut grad_logits = Vec::with_capacity(n);
        for ((out, _), &target) in outputs.iter().zip(&labels) {
            let (l, g) = id_loss_with_grad(&out.class_logits, target as usize)?;
            id_total += l;
            grad_logits.push(g.into_iter().map(|h| h.into_iter().map(|v| (v / n as f64) as f32).collect::<Vec<f32>>()).collect::<Vec<_>>());
        }
        let id_loss = id_total / n as f64;
        let branch_count = outputs[0].0.embeddings.len();
        let (triplet_loss, grad_emb) = if job.triplet {
            let branches: Vec<Vec<Vec<f64>>> = (0..branch_count)
                .map(|b| outputs.iter().map(|(o, _)| o.embeddings[b].iter().map(|&v| f64::from(v)).collect()).collect())
                .collect();
            batch_hard_triplet_with_grad(&branches, &labels, cfg.margin)?
        } else {
            (0.0, vec![vec![Vec::new(); n]; branch_count])
        };
        let total = id_loss + triplet_loss;
        ensure!(total.is_finite(), "non-finite loss at iteration {t}");
        grads.fill(0.0);
        for (i, (out, cache)) in outputs.iter().enumerate() {
            let ge: Vec<Vec<f32>> = (0..branch_count)
                .map(|b| {
                    if job.triplet {
                        grad_emb[b][i].iter().map(|&v| v as f32).collect()
                    } else {
                        vec![0.0; out.embeddings[b].len()]
                    }
                })
                .collect();
            model.backward(cache, &ge, &grad_logits[i], &mut grads)?;
        }
        drop(outputs);
        let lr = cfg.lr_at(t, job.iterations);
        adam.update(&mut model.params, &grads, lr, cfg);
        if t % cfg.log_every == 0 || t + 1 == job.iterations {
            report.rows.push(LossRow {
                iteration: t,
                id_loss,
                triplet_loss,
                total,
                lr,
            });
            report.elapsed_seconds.push(start.elapsed().as_secs_f64());
            log::debug!("{} iter {t}: id {id_loss:.4} triplet {triplet_loss:.4} lr {lr:e}", job.source);
        }
    }
    Ok((model, report))
}

/// Train the feature network on identity labels of an HR+LR manifest.
pub fn train_bf(manifest: &DatasetManifest, backbone: &BackboneConfig, config: &TrainConfig, seed: u64) -> Result<(Backbone, TrainReport)> {
    let inputs = prepare_inputs(manifest, backbone)?;
    train_bf_prepared(manifest, inputs, backbone, config, seed)
}

/// As [`train_bf`] with inputs already prepared, one per record.
pub fn train_bf_prepared(manifest: &DatasetManifest, inputs: Vec<FeatureMap>, backbone: &BackboneConfig, config: &TrainConfig, seed: u64) -> Result<(Backbone, TrainReport)> {
    manifest.validate()?;
    manifest.validate_for_training()?;
    ensure!(inputs.len() == manifest.records.len(), "one prepared input per record is required");
    let (targets, map) = identity_targets(manifest);
    let set = TrainingSet {
        inputs,
        targets,
        class_count: map.len(),
    };
    train(&TrainJob {
        set: &set,
        backbone: backbone.clone(),
        config,
        source: EmbeddingSource::Feature,
        p: config.p,
        k: config.k,
        triplet: true,
        iterations: config.iterations(map.len()),
        seed,
    })
}

/// Train the resolution network on resolution labels; the batch holds
/// every class with `resolution_k` images each.
pub fn train_br(manifest: &DatasetManifest, backbone: &BackboneConfig, config: &TrainConfig, seed: u64) -> Result<(Backbone, TrainReport)> {
    ensure!(manifest.resolution_class_count >= 2, "resolution network needs R >= 2, got {}", manifest.resolution_class_count);
    let inputs = prepare_inputs(manifest, backbone)?;
    train_br_prepared(manifest, inputs, backbone, config, seed)
}

pub fn train_br_prepared(manifest: &DatasetManifest, inputs: Vec<FeatureMap>, backbone: &BackboneConfig, config: &TrainConfig, seed: u64) -> Result<(Backbone, TrainReport)> {
    let r = manifest.resolution_class_count as usize;
    ensure!(r >= 2, "resolution network needs R >= 2, got {r}");
    manifest.validate()?;
    ensure!(inputs.len() == manifest.records.len(), "one prepared input per record is required");
    let set = TrainingSet {
        inputs,
        targets: manifest.records.iter().map(|x| x.resolution_label).collect(),
        class_count: r,
    };
    train(&TrainJob {
        set: &set,
        backbone: backbone.clone(),
        config,
        source: EmbeddingSource::Resolution,
        p: r,
        k: config.resolution_k,
        triplet: config.resolution_triplet,
        iterations: config.iterations(manifest.identity_count as usize),
        seed,
    })
}

/// Predicted class: argmax of the logits summed over all heads, ties to
/// the lowest class.
pub fn predict_class(model: &Backbone, input: &FeatureMap) -> Result<usize> {
    let out = model.forward(input)?;
    let mut sum = vec![0.0f64; model.class_count];
    for head in &out.class_logits {
        for (s, &v) in sum.iter_mut().zip(head) {
            *s += f64::from(v);
        }
    }
    let mut best = 0;
    for (c, &v) in sum.iter().enumerate() {
        if v > sum[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Fraction of inputs whose predicted class equals the target.
pub fn classification_accuracy(model: &Backbone, inputs: &[FeatureMap], targets: &[u32]) -> Result<f64> {
    ensure!(!inputs.is_empty() && inputs.len() == targets.len(), "need matching non-empty inputs and targets");
    let mut hits = 0;
    for (x, &t) in inputs.iter().zip(targets) {
        if predict_class(model, x)? == t as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / inputs.len() as f64)
}

/// Write the loss curve as CSV.
pub fn write_report_csv(report: &TrainReport, path: &Path) -> Result<()> {
    crate::container::write_file(path, &report.to_csv()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny() -> BackboneConfig {
        BackboneConfig {
            input_height: 48,
            input_width: 16,
            stem_stride: 1,
            widths: [4, 4, 8, 8],
            embed_dim: 6,
            reduction_ratio: 2,
            ..BackboneConfig::default()
        }
    }

    fn toy_set(classes: u32, per_class: usize) -> TrainingSet {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut rng = rng_for(1, "test/toy-set");
        for c in 0..classes {
            let base: Vec<f32> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            for _ in 0..per_class {
                let mut x = FeatureMap::zeros(3, 48, 16);
                for ch in 0..3 {
                    for v in &mut x.data[ch * 768..(ch + 1) * 768] {
                        *v = base[ch] + rng.random_range(-0.3..0.3);
                    }
                }
                inputs.push(x);
                targets.push(c);
            }
        }
        TrainingSet {
            inputs,
            targets,
            class_count: classes as usize,
        }
    }

    fn job<'a>(set: &'a TrainingSet, cfg: &'a TrainConfig, iterations: u64) -> TrainJob<'a> {
        TrainJob {
            set,
            backbone: tiny(),
            config: cfg,
            source: EmbeddingSource::Feature,
            p: 4,
            k: 2,
            triplet: true,
            iterations,
            seed: 9,
        }
    }

    #[test]
    fn schedule_drops_tenfold_at_half() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0, 7), 2e-4);
        assert_eq!(c.lr_at(3, 7), 2e-4);
        assert_eq!(c.lr_at(4, 7), 2e-5);
        assert_eq!(c.lr_at(4, 8), 2e-5);
        assert_eq!(c.lr_at(3, 8), 2e-4);
        assert_eq!(c.iterations(24), 12_000);
    }

    #[test]
    fn zero_iterations_returns_initialisation() {
        let set = toy_set(4, 3);
        let cfg = TrainConfig::default();
        let (model, report) = train(&job(&set, &cfg, 0)).unwrap();
        let mut cfg_b = tiny();
        cfg_b.dropout = cfg.dropout;
        let init = Backbone::new(cfg_b, 4, EmbeddingSource::Feature, 9).unwrap();
        assert_eq!(model.params, init.params);
        assert!(report.rows.is_empty());
    }

    #[test]
    fn same_seed_same_curve_and_weights() {
        let set = toy_set(4, 3);
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let (m1, r1) = train(&job(&set, &cfg, 4)).unwrap();
        let (m2, r2) = train(&job(&set, &cfg, 4)).unwrap();
        assert_eq!(r1.rows, r2.rows);
        assert_eq!(m1.params, m2.params);
        assert_eq!(r1.rows.len(), 4);
        assert!(r1.rows.iter().all(|r| r.total.is_finite()));
    }

    #[test]
    fn loss_descends_on_separable_toy_data() {
        let set = toy_set(4, 6);
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let (_, report) = train(&job(&set, &cfg, 60)).unwrap();
        let (first, last) = report.head_tail_means(10);
        assert!(last < first, "first {first} last {last}");
    }

    #[test]
    fn csv_roundtrip_and_header() {
        let report = TrainReport {
            source: EmbeddingSource::Feature,
            seed: 0,
            iterations: 2,
            class_count: 2,
            rows: vec![LossRow {
                iteration: 0,
                id_loss: 1.5,
                triplet_loss: 0.25,
                total: 1.75,
                lr: 2e-4,
            }],
            elapsed_seconds: vec![0.1],
            checkpoint: None,
        };
        let csv = report.to_csv().unwrap();
        assert!(csv.starts_with(b"iteration,id_loss,triplet_loss,total,lr\n"));
        assert_eq!(TrainReport::from_csv(&csv).unwrap(), report.rows);
    }

    #[test]
    fn augmentation_preserves_shape_and_flip_is_involution() {
        let set = toy_set(1, 1);
        let x = &set.inputs[0];
        assert_eq!(flip(&flip(x)).data, x.data);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(augment(x, &TrainConfig::default(), &mut rng).shape(), x.shape());
        }
        let mut y = x.clone();
        let always = ErasingConfig {
            probability: 1.0,
            ..ErasingConfig::default()
        };
        erase(&mut y, &always, &mut rng);
        let zeros = y.data.iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 0 && zeros % 3 == 0);
    }

    #[test]
    fn resolution_training_rejects_single_class() {
        let m = DatasetManifest::new(Vec::new(), crate::data::Provenance::Synthetic, crate::data::Interpolation::Bicubic);
        let mut m1 = m.clone();
        m1.resolution_class_count = 1;
        assert!(train_br_prepared(&m1, Vec::new(), &tiny(), &TrainConfig::default(), 0).is_err());
    }

    #[test]
    fn accuracy_counts_argmax() {
        let set = toy_set(3, 2);
        let model = Backbone::new(tiny(), 3, EmbeddingSource::Resolution, 0).unwrap();
        let preds: Vec<u32> = set.inputs.iter().map(|x| predict_class(&model, x).unwrap() as u32).collect();
        assert_eq!(classification_accuracy(&model, &set.inputs, &preds).unwrap(), 1.0);
    }
}
