//! Summed multi-head cross-entropy, batch-hard triplet loss, and the
//! P×K batch sampler both rely on.
//!
//! Losses are evaluated in `f64`; callers convert network outputs.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;

use crate::data::DatasetManifest;
use crate::error::{ensure, Result};
use crate::rng::rng_for;

/// Triplet margin used when none is configured.
pub const DEFAULT_MARGIN: f64 = 0.3;

fn log_softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let lse = max + logits.iter().map(|&v| (f64::from(v) - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| f64::from(v) - lse).collect()
}

/// Cross-entropy `-Σ_b Σ_c q_b(c) log p_b(c)` over explicit probability and
/// one-hot target vectors, one pair per head.
pub fn id_loss_from_probabilities(probabilities: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    ensure!(!probabilities.is_empty(), "need at least one classification head");
    ensure!(probabilities.len() == targets.len(), "head count mismatch between probabilities and targets");
    let mut total = 0.0;
    for (p, q) in probabilities.iter().zip(targets) {
        ensure!(p.len() == q.len() && !p.is_empty(), "probability and target lengths differ");
        ensure!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-5, "probabilities must sum to 1");
        ensure!(
            q.iter().all(|&v| v == 0.0 || v == 1.0) && q.iter().filter(|&&v| v == 1.0).count() == 1,
            "targets must be one-hot"
        );
        for (&pc, &qc) in p.iter().zip(q) {
            if qc == 1.0 {
                total -= pc.ln();
            }
        }
    }
    Ok(total)
}

/// Softmax cross-entropy summed over heads, and its gradient with respect
/// to every head's logits.
pub fn id_loss_with_grad(logits: &[Vec<f32>], target: usize) -> Result<(f64, Vec<Vec<f64>>)> {
    ensure!(!logits.is_empty(), "need at least one classification head");
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for head in logits {
        ensure!(
            target < head.len(),
            "target class {target} out of range for {} classes",
            head.len()
        );
        let ls = log_softmax(head);
        total -= ls[target];
        grads.push(
            ls.iter()
                .enumerate()
                .map(|(c, &l)| l.exp() - if c == target { 1.0 } else { 0.0 })
                .collect(),
        );
    }
    Ok((total, grads))
}

pub fn id_loss(logits: &[Vec<f32>], target: usize) -> Result<f64> {
    Ok(id_loss_with_grad(logits, target)?.0)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Hardest positive and negative index per anchor, ties to the lowest index.
pub fn hardest_pairs(items: &[Vec<f64>], labels: &[u32]) -> Vec<(usize, usize)> {
    let n = items.len();
    (0..n)
        .map(|a| {
            let mut pos = (usize::MAX, f64::NEG_INFINITY);
            let mut neg = (usize::MAX, f64::INFINITY);
            for j in 0..n {
                if j == a {
                    continue;
                }
                let d = distance(&items[a], &items[j]);
                if labels[j] == labels[a] {
                    if d > pos.1 {
                        pos = (j, d);
                    }
                } else if d < neg.1 {
                    neg = (j, d);
                }
            }
            (pos.0, neg.0)
        })
        .collect()
}

fn check_batch(branches: &[Vec<Vec<f64>>], labels: &[u32]) -> Result<()> {
    ensure!(!branches.is_empty(), "need at least one triplet branch");
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    ensure!(counts.len() >= 2, "batch needs at least two labels to form negatives");
    if let Some((l, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(crate::Error::invalid(format!("label {l} appears once in the batch; no positive exists")));
    }
    for b in branches {
        ensure!(b.len() == labels.len(), "branch has {} embeddings for {} labels", b.len(), labels.len());
        let d = b[0].len();
        ensure!(b.iter().all(|e| e.len() == d), "ragged embedding dimensions");
        ensure!(b.iter().flatten().all(|v| v.is_finite()), "embeddings must be finite");
    }
    Ok(())
}

/// Batch-hard triplet loss summed over branches, each branch averaged over
/// anchors, with its gradient with respect to every embedding.
pub fn batch_hard_triplet_with_grad(branches: &[Vec<Vec<f64>>], labels: &[u32], margin: f64) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    ensure!(margin >= 0.0, "margin must be non-negative");
    check_batch(branches, labels)?;
    let n = labels.len();
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(branches.len());
    for items in branches {
        let dim = items[0].len();
        let mut g = vec![vec![0.0; dim]; n];
        let mut branch_loss = 0.0;
        for (a, (p, q)) in hardest_pairs(items, labels).into_iter().enumerate() {
            let d_ap = distance(&items[a], &items[p]);
            let d_an = distance(&items[a], &items[q]);
            let l = d_ap - d_an + margin;
            if l <= 0.0 {
                continue;
            }
            branch_loss += l;
            let scale = 1.0 / n as f64;
            for k in 0..dim {
                if d_ap > 0.0 {
                    let u = (items[a][k] - items[p][k]) / d_ap * scale;
                    g[a][k] += u;
                    g[p][k] -= u;
                }
                if d_an > 0.0 {
                    let v = (items[a][k] - items[q][k]) / d_an * scale;
                    g[a][k] -= v;
                    g[q][k] += v;
                }
            }
        }
        total += branch_loss / n as f64;
        grads.push(g);
    }
    Ok((total, grads))
}

pub fn batch_hard_triplet(branches: &[Vec<Vec<f64>>], labels: &[u32], margin: f64) -> Result<f64> {
    Ok(batch_hard_triplet_with_grad(branches, labels, margin)?.0)
}

/// A batch of `p` labels with `k` items each, grouped by label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PkBatch {
    pub p: usize,
    pub k: usize,
    /// `(item index, label)` pairs.
    pub items: Vec<(usize, u32)>,
}

impl PkBatch {
    pub fn labels(&self) -> Vec<u32> {
        self.items.iter().map(|&(_, l)| l).collect()
    }
}

/// Draws P×K batches from a labelled item list.
///
/// Each batch picks `p` distinct labels uniformly among labels with at
/// least two items, then `k` items per label without replacement; a label
/// with fewer than `k` items contributes all of them, topped up by uniform
/// draws with replacement.
pub struct PkSampler {
    groups: Vec<(u32, Vec<usize>)>,
    p: usize,
    k: usize,
    rng: ChaCha8Rng,
}

impl PkSampler {
    pub fn new(labels: &[u32], p: usize, k: usize, seed: u64) -> Result<Self> {
        ensure!(p >= 1 && k >= 2, "P must be >= 1 and K >= 2, got P={p} K={k}");
        let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        let groups: Vec<_> = map.into_iter().filter(|(_, v)| v.len() >= 2).collect();
        ensure!(
            groups.len() >= p,
            "need {p} labels with at least two items, found {}",
            groups.len()
        );
        Ok(PkSampler {
            groups,
            p,
            k,
            rng: rng_for(seed, "pk-sampler"),
        })
    }

    pub fn next_batch(&mut self) -> PkBatch {
        let chosen: Vec<usize> = rand::seq::index::sample(&mut self.rng, self.groups.len(), self.p).into_vec();
        let mut chosen = chosen;
        chosen.sort_unstable();
        let mut items = Vec::with_capacity(self.p * self.k);
        for g in chosen {
            let (label, members) = &self.groups[g];
            let mut pool = members.clone();
            pool.shuffle(&mut self.rng);
            if pool.len() >= self.k {
                pool.truncate(self.k);
            } else {
                while pool.len() < self.k {
                    let extra = *members.choose(&mut self.rng).unwrap();
                    pool.push(extra);
                }
            }
            items.extend(pool.into_iter().map(|i| (i, *label)));
        }
        PkBatch {
            p: self.p,
            k: self.k,
            items,
        }
    }
}

/// One P×K batch over a manifest's identities; item indices refer to
/// `manifest.records`.
pub fn sample_pk(manifest: &DatasetManifest, p: usize, k: usize, rng_seed: u64) -> Result<PkBatch> {
    let labels: Vec<u32> = manifest.records.iter().map(|r| r.identity).collect();
    Ok(PkSampler::new(&labels, p, k, rng_seed)?.next_batch())
}
