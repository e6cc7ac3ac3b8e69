//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p rfd-cli --test acceptance`. The toy experiment
//! trains ten small networks and takes several minutes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rfd_reid::data::{
    apply_bins, build_mlr, degrade, degraded_id, generate_toy_corpus, make_splits, BinningMode, Image, ImageRecord, Interpolation, PixelBins, ToyCorpusSpec,
};
use rfd_reid::eval::{build_protocol, cmc_raw, evaluate_run, GalleryMode, Method};
use rfd_reid::losses::{batch_hard_triplet, batch_hard_triplet_with_grad, id_loss, id_loss_from_probabilities, DEFAULT_MARGIN};
use rfd_reid::matching::{feature_distance_matrix, fuse, resolution_similarity, resolution_similarity_matrix, FusionConfig, FusionSign};
use rfd_reid::nn::{channel_attention_backward, channel_attention_raw, channel_gate, global_average_pool_raw, BackboneConfig, ChannelAttentionParams, EmbeddingSource};
use rfd_reid::store::FeatureStore;
use rfd_reid::train::{classification_accuracy, prepare_inputs, train_bf_prepared, train_br_prepared, TrainConfig};

const ORACLE_REL: f64 = 1e-6;
const GRAD_REL: f64 = 1e-4;
const ORACLE_INSTANCES: usize = 200;
const CMC_TRIALS: usize = 500;
const TOY_SEEDS: u64 = 5;
const TOY_IDENTITIES: u32 = 32;
const TOY_LAMBDA: f64 = 0.1;
/// RFD may trail the baseline by at most one rank-1 percentage point.
const TOY_R1_TOLERANCE: f64 = 0.01;
/// Held-out resolution accuracy must beat chance by this much.
const TOY_ACCURACY_MARGIN: f64 = 0.2;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

/// Failures collected by a check; the first few are reported.
#[derive(Default)]
struct Failures(Vec<String>);

impl Failures {
    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.0.push(msg());
        }
    }

    fn outcome(self, summary: String) -> Outcome {
        if self.0.is_empty() {
            Outcome::new(true, summary)
        } else {
            let n = self.0.len();
            let shown: Vec<_> = self.0.into_iter().take(3).collect();
            Outcome::new(false, format!("{summary}; {n} failures, e.g. {}", shown.join(" | ")))
        }
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs() + 1e-12
}

fn grad_close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= GRAD_REL * analytic.abs().max(numeric.abs()) + 1e-8
}

fn rvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn oracle_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn oracle_gap(u: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut z = vec![0.0; c];
    for l in 0..c {
        let mut s = 0.0;
        for i in 0..h {
            for j in 0..w {
                s += u[l * h * w + i * w + j];
            }
        }
        z[l] = s / (h * w) as f64;
    }
    z
}

fn oracle_gate(z: &[f64], w1: &[f64], w2: &[f64], c: usize, hidden: usize) -> Vec<f64> {
    let mut a = vec![0.0; hidden];
    for j in 0..hidden {
        let mut s = 0.0;
        for l in 0..c {
            s += w1[j * c + l] * z[l];
        }
        a[j] = if s > 0.0 { s } else { 0.0 };
    }
    (0..c)
        .map(|l| {
            let mut s = 0.0;
            for j in 0..hidden {
                s += w2[l * hidden + j] * a[j];
            }
            oracle_sigmoid(s)
        })
        .collect()
}

fn random_attention(rng: &mut ChaCha8Rng) -> (usize, usize, usize, ChannelAttentionParams<f64>) {
    let r = [1usize, 2, 4][rng.random_range(0..3)];
    let c = r * rng.random_range(1..=4);
    let (h, w) = (rng.random_range(1..=5), rng.random_range(1..=5));
    let hidden = c / r;
    let scale = rng.random_range(0.3..3.0);
    let w1 = rvec(rng, hidden * c).into_iter().map(|v| v * scale).collect();
    let w2 = rvec(rng, hidden * c).into_iter().map(|v| v * scale).collect();
    (c, h, w, ChannelAttentionParams::new(w1, w2, c, r).unwrap())
}

/// Labels for a batch of `n` items: at least two labels, each used at least twice.
fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    let p = rng.random_range(2..=n / 2);
    let mut labels: Vec<u32> = (0..p as u32).flat_map(|l| [l, l]).collect();
    while labels.len() < n {
        labels.push(rng.random_range(0..p as u32));
    }
    labels.shuffle(rng);
    labels
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Triplet loss by enumerating every (anchor, positive, negative) triple.
fn exhaustive_triplet(branches: &[Vec<Vec<f64>>], labels: &[u32], margin: f64) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for items in branches {
        let mut sum = 0.0;
        for a in 0..n {
            let mut worst: f64 = 0.0;
            for p in 0..n {
                if p == a || labels[p] != labels[a] {
                    continue;
                }
                for q in 0..n {
                    if labels[q] == labels[a] {
                        continue;
                    }
                    worst = worst.max(euclid(&items[a], &items[p]) - euclid(&items[a], &items[q]) + margin);
                }
            }
            sum += worst;
        }
        total += sum / n as f64;
    }
    total
}

fn math_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0001);
    let mut f = Failures::default();
    for t in 0..ORACLE_INSTANCES {
        let (c, h, w, params) = random_attention(&mut rng);
        let u = rvec(&mut rng, c * h * w);
        let z = global_average_pool_raw(&u, c, h, w).unwrap();
        let z_ref = oracle_gap(&u, c, h, w);
        f.check(z.iter().zip(&z_ref).all(|(a, b)| rel_close(*a, *b, ORACLE_REL)), || format!("pooling instance {t}"));
        let gates = channel_gate(&z_ref, &params).unwrap();
        let gates_ref = oracle_gate(&z_ref, &params.w1, &params.w2, c, params.hidden());
        f.check(gates.iter().zip(&gates_ref).all(|(a, b)| rel_close(*a, *b, ORACLE_REL)), || format!("gate instance {t}"));
        let (out, _) = channel_attention_raw(&u, c, h, w, &params).unwrap();
        let n = h * w;
        f.check(out.iter().enumerate().all(|(i, v)| rel_close(*v, gates_ref[i / n] * u[i], ORACLE_REL)), || format!("scaling instance {t}"));

        let d = rng.random_range(1..=16);
        let a: Vec<f32> = (0..d).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        let b: Vec<f32> = (0..d).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        if a.iter().all(|v| *v == 0.0) || b.iter().all(|v| *v == 0.0) {
            continue;
        }
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        let na = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        let cos = resolution_similarity(&a, &b).unwrap();
        f.check(rel_close(cos, dot / (na * nb), ORACLE_REL), || format!("cosine instance {t}: {cos} vs {}", dot / (na * nb)));
    }

    let mut uniform_cases = 0;
    for heads in 1..=6 {
        for classes in [2usize, 4, 5, 10, 751] {
            let logits = vec![vec![0.0f32; classes]; heads];
            let expect = heads as f64 * (classes as f64).ln();
            let got = id_loss(&logits, classes - 1).unwrap();
            let probs = vec![vec![1.0 / classes as f64; classes]; heads];
            let mut onehot = vec![0.0; classes];
            onehot[0] = 1.0;
            let from_p = id_loss_from_probabilities(&probs, &vec![onehot; heads]).unwrap();
            f.check(rel_close(got, expect, ORACLE_REL) && rel_close(from_p, expect, ORACLE_REL), || format!("uniform cross-entropy B={heads} C={classes}: {got}, {from_p} vs {expect}"));
            uniform_cases += 1;
        }
    }

    let mut batches = 0;
    for t in 0..ORACLE_INSTANCES {
        let n = rng.random_range(4..=16);
        let labels = random_labels(&mut rng, n);
        let dim = rng.random_range(1..=6);
        let quantise = rng.random_bool(0.3);
        let branches: Vec<Vec<Vec<f64>>> = (0..rng.random_range(1..=3))
            .map(|_| {
                (0..n)
                    .map(|_| rvec(&mut rng, dim).into_iter().map(|v| if quantise { (v * 2.0).round() / 2.0 } else { v }).collect())
                    .collect()
            })
            .collect();
        let got = batch_hard_triplet(&branches, &labels, DEFAULT_MARGIN).unwrap();
        let expect = exhaustive_triplet(&branches, &labels, DEFAULT_MARGIN);
        f.check(rel_close(got, expect, ORACLE_REL), || format!("triplet batch {t} (n={n}): {got} vs {expect}"));
        batches += 1;
    }
    f.outcome(format!(
        "{ORACLE_INSTANCES} instances each of pooling, gate, scaling and cosine at {ORACLE_REL:e} relative; {uniform_cases} uniform cross-entropy cases; {batches} triplet batches of 4..=16 items vs enumeration"
    ))
}

fn attention_loss(u: &[f64], c: usize, h: usize, w: usize, p: &ChannelAttentionParams<f64>, r: &[f64]) -> f64 {
    channel_attention_raw(u, c, h, w, p).unwrap().0.iter().zip(r).map(|(a, b)| a * b).sum()
}

fn central_diff(mut eval: impl FnMut(f64) -> f64, x: f64, eps: f64) -> f64 {
    (eval(x + eps) - eval(x - eps)) / (2.0 * eps)
}

/// Whether the smallest gap between `values[best]` and any other entry exceeds `gap`.
fn clear_winner(values: &[f64], best: usize, gap: f64) -> bool {
    values.iter().enumerate().all(|(i, v)| i == best || (v - values[best]).abs() > gap)
}

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0002);
    let eps = 1e-6;
    let mut f = Failures::default();
    let (mut att_done, mut att_skipped, mut coords) = (0, 0, 0usize);
    while att_done < 100 {
        let (c, h, w, params) = random_attention(&mut rng);
        let u = rvec(&mut rng, c * h * w);
        let r = rvec(&mut rng, c * h * w);
        let (_, cache) = channel_attention_raw(&u, c, h, w, &params).unwrap();
        // ReLU kinks make the finite difference meaningless.
        if cache.hidden_pre.iter().any(|a| a.abs() < 1e-3) {
            att_skipped += 1;
            continue;
        }
        let g = channel_attention_backward(&u, h, w, &params, &cache, &r);
        for i in 0..u.len() {
            let num = central_diff(
                |x| {
                    let mut v = u.clone();
                    v[i] = x;
                    attention_loss(&v, c, h, w, &params, &r)
                },
                u[i],
                eps,
            );
            f.check(grad_close(g.input[i], num), || format!("attention input grad {i}: {} vs {num}", g.input[i]));
        }
        for i in 0..params.w1.len() {
            let num = central_diff(
                |x| {
                    let mut p = params.clone();
                    p.w1[i] = x;
                    attention_loss(&u, c, h, w, &p, &r)
                },
                params.w1[i],
                eps,
            );
            f.check(grad_close(g.w1[i], num), || format!("attention w1 grad {i}: {} vs {num}", g.w1[i]));
            let num = central_diff(
                |x| {
                    let mut p = params.clone();
                    p.w2[i] = x;
                    attention_loss(&u, c, h, w, &p, &r)
                },
                params.w2[i],
                eps,
            );
            f.check(grad_close(g.w2[i], num), || format!("attention w2 grad {i}: {} vs {num}", g.w2[i]));
        }
        coords += u.len() + 2 * params.w1.len();
        att_done += 1;
    }

    let (mut tri_done, mut tri_skipped) = (0, 0);
    while tri_done < 100 {
        let n = rng.random_range(4..=10);
        let labels = random_labels(&mut rng, n);
        let dim = rng.random_range(1..=4);
        let branches: Vec<Vec<Vec<f64>>> = (0..rng.random_range(1..=3)).map(|_| (0..n).map(|_| rvec(&mut rng, dim)).collect()).collect();
        // Skip ties between hardest candidates, hinges at zero and coincident points.
        let mut smooth = true;
        for items in &branches {
            for a in 0..n {
                let d: Vec<f64> = (0..n).map(|j| euclid(&items[a], &items[j])).collect();
                let pos: Vec<usize> = (0..n).filter(|&j| j != a && labels[j] == labels[a]).collect();
                let neg: Vec<usize> = (0..n).filter(|&j| labels[j] != labels[a]).collect();
                let hp = *pos.iter().max_by(|&&x, &&y| d[x].total_cmp(&d[y])).unwrap();
                let hn = *neg.iter().min_by(|&&x, &&y| d[x].total_cmp(&d[y])).unwrap();
                let dp: Vec<f64> = pos.iter().map(|&j| d[j]).collect();
                let dn: Vec<f64> = neg.iter().map(|&j| d[j]).collect();
                smooth &= clear_winner(&dp, pos.iter().position(|&j| j == hp).unwrap(), 1e-3);
                smooth &= clear_winner(&dn, neg.iter().position(|&j| j == hn).unwrap(), 1e-3);
                smooth &= (d[hp] - d[hn] + DEFAULT_MARGIN).abs() > 1e-3;
                smooth &= d.iter().enumerate().all(|(j, v)| j == a || *v > 1e-3);
            }
        }
        if !smooth {
            tri_skipped += 1;
            continue;
        }
        let (_, grads) = batch_hard_triplet_with_grad(&branches, &labels, DEFAULT_MARGIN).unwrap();
        for (b, items) in branches.iter().enumerate() {
            for i in 0..n {
                for k in 0..dim {
                    let num = central_diff(
                        |x| {
                            let mut br = branches.clone();
                            br[b][i][k] = x;
                            batch_hard_triplet(&br, &labels, DEFAULT_MARGIN).unwrap()
                        },
                        items[i][k],
                        eps,
                    );
                    f.check(grad_close(grads[b][i][k], num), || format!("triplet grad b{b} i{i} k{k}: {} vs {num}", grads[b][i][k]));
                }
            }
            coords += n * dim;
        }
        tri_done += 1;
    }
    f.outcome(format!(
        "{att_done} attention and {tri_done} triplet instances, {coords} coordinates at {GRAD_REL:e} relative (skipped {att_skipped} near ReLU kinks, {tri_skipped} near ties)"
    ))
}

/// Random CMC instance in which every query has a valid match.
fn random_cmc_instance(rng: &mut ChaCha8Rng, max_q: usize, max_g: usize, tie_prone: bool) -> (Vec<f64>, Vec<(u32, u32)>, Vec<(u32, u32)>) {
    let g_len = rng.random_range(1..=max_g);
    let ids = rng.random_range(1..=4u32);
    let gallery: Vec<(u32, u32)> = (0..g_len).map(|_| (rng.random_range(0..ids), rng.random_range(0..2u32))).collect();
    let query: Vec<(u32, u32)> = (0..rng.random_range(1..=max_q))
        .map(|_| {
            let (id, cam) = gallery[rng.random_range(0..g_len)];
            (id, 1 - cam)
        })
        .collect();
    let values = (0..query.len() * g_len)
        .map(|_| if tie_prone { f64::from(rng.random_range(0..4u8)) } else { rng.random_range(0.0..2.0) })
        .collect();
    (values, query, gallery)
}

fn invariant_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0003);
    let mut f = Failures::default();
    let trials = 100;
    for t in 0..trials {
        // CMC: monotone, bounded, unchanged by increasing maps and column permutations.
        let (values, q, g) = random_cmc_instance(&mut rng, 8, 12, false);
        let c = cmc_raw(&values, &q, &g, 20).unwrap();
        f.check(c.rank_hits.windows(2).all(|w| w[0] <= w[1]) && c.rank_hits.iter().all(|v| (0.0..=1.0).contains(v)), || format!("cmc monotone {t}"));
        f.check(*c.rank_hits.last().unwrap() == 1.0, || format!("cmc reaches 1 at k >= G, trial {t}"));
        let mapped: Vec<f64> = values.iter().map(|v| 3.0 * v.exp() + 1.0).collect();
        f.check(cmc_raw(&mapped, &q, &g, 20).unwrap().rank_hits == c.rank_hits, || format!("cmc increasing map {t}"));
        let mut perm: Vec<usize> = (0..g.len()).collect();
        perm.shuffle(&mut rng);
        let gp: Vec<(u32, u32)> = perm.iter().map(|&j| g[j]).collect();
        let vp: Vec<f64> = (0..q.len()).flat_map(|i| perm.iter().map(move |&j| (i, j))).map(|(i, j)| values[i * g.len() + j]).collect();
        f.check(cmc_raw(&vp, &q, &gp, 20).unwrap().rank_hits == c.rank_hits, || format!("cmc gallery permutation {t}"));

        // Fusion: linear in λ for both signs, λ = 0 returns D_f.
        let (nq, ng, d) = (rng.random_range(1..=5), rng.random_range(1..=6), rng.random_range(1..=6));
        let vecs = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f32>> { (0..n).map(|_| (0..d).map(|_| rng.random_range(0.05f32..1.0)).collect()).collect() };
        let (qf, gf, qr, gr) = (vecs(&mut rng, nq), vecs(&mut rng, ng), vecs(&mut rng, nq), vecs(&mut rng, ng));
        let qi: Vec<String> = (0..nq).map(|i| format!("q{i}")).collect();
        let gi: Vec<String> = (0..ng).map(|i| format!("g{i}")).collect();
        let d_f = feature_distance_matrix(&qf, &gf, &qi, &gi).unwrap();
        let d_r = resolution_similarity_matrix(&qr, &gr, &qi, &gi).unwrap();
        let (l1, l2) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
        for sign in [FusionSign::Paper, FusionSign::Inverted] {
            let at = |lambda: f64| fuse(&d_f, &d_r, FusionConfig { lambda, sign }).unwrap().values;
            let (a, b, ab) = (at(l1), at(l2), at(l1 + l2));
            let lin = (0..a.len()).all(|i| ((ab[i] - d_f.values[i]) - (a[i] - d_f.values[i]) - (b[i] - d_f.values[i])).abs() <= 1e-9);
            f.check(lin, || format!("fusion linearity {sign} trial {t}"));
            f.check(at(0.0) == d_f.values, || format!("fusion at zero {sign} trial {t}"));
        }

        // Pseudo-labels: monotone in pixel count, equivariant under permutation.
        let n = rng.random_range(1..=40);
        let records: Vec<ImageRecord> = (0..n)
            .map(|i| {
                let h = rng.random_range(8..=200u32);
                ImageRecord::original(format!("r{i}"), i as u32, 1, rng.random_range(4..=80u32), h, "x.png")
            })
            .collect();
        for mode in [BinningMode::EqualWidth, BinningMode::EqualFrequency] {
            let counts: Vec<u64> = records.iter().map(|r| r.pixel_count).collect();
            let bins = PixelBins::fit(&counts, 5, mode).unwrap();
            let labelled = apply_bins(&records, &bins);
            let mut by_count: Vec<(u64, u32)> = labelled.iter().map(|r| (r.pixel_count, r.resolution_label)).collect();
            by_count.sort();
            f.check(by_count.windows(2).all(|w| w[0].1 <= w[1].1) && by_count.iter().all(|p| p.1 < 5), || format!("pseudo-label monotone {mode:?} trial {t}"));
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rng);
            let sc: Vec<u64> = shuffled.iter().map(|r| r.pixel_count).collect();
            let relabelled = apply_bins(&shuffled, &PixelBins::fit(&sc, 5, mode).unwrap());
            let expect: BTreeMap<&str, u32> = labelled.iter().map(|r| (r.image_id.as_str(), r.resolution_label)).collect();
            f.check(relabelled.iter().all(|r| expect[r.image_id.as_str()] == r.resolution_label), || format!("pseudo-label permutation {mode:?} trial {t}"));
        }

        // Degradation keeps the image shape.
        let (h, w) = (rng.random_range(8..=40), rng.random_range(4..=20));
        let img = Image::new(h, w, 3, (0..h * w * 3).map(|_| rng.random_range(0.0f32..1.0)).collect()).unwrap();
        for scale in 1..=4 {
            for interp in [Interpolation::Bilinear, Interpolation::Bicubic] {
                let out = degrade(&img, scale, interp).unwrap();
                f.check((out.height, out.width, out.channels) == (h, w, 3) && out.data.iter().all(|v| v.is_finite()), || format!("degrade shape {h}x{w} x{scale} {interp:?}"));
            }
        }

        // Feature stores round-trip bit-exactly.
        let (count, dim) = (rng.random_range(1..=6), rng.random_range(1..=8));
        let emb: Vec<Vec<f32>> = (0..count).map(|_| (0..dim).map(|_| f32::from_bits(rng.random::<u32>() & 0xBFFF_FFFF)).collect()).collect();
        let source = if rng.random_bool(0.5) { EmbeddingSource::Feature } else { EmbeddingSource::Resolution };
        let store = FeatureStore::new(source, "0f", (0..count).map(|i| format!("img{i}")).collect(), emb).unwrap();
        let bytes = store.to_bytes().unwrap();
        let back = FeatureStore::from_bytes(&bytes).unwrap();
        let bit_equal = back.header == store.header && back.embeddings.iter().flatten().zip(store.embeddings.iter().flatten()).all(|(a, b)| a.to_bits() == b.to_bits());
        f.check(bit_equal && back.to_bytes().unwrap() == bytes, || format!("store roundtrip trial {t}"));
    }
    f.outcome(format!("{trials} random instances each of CMC, fusion, pseudo-label, degradation and store properties"))
}

/// Rank-k hit rate computed the obvious way: for each k, rank the valid
/// gallery and look for the identity in the first k.
fn naive_cmc(values: &[f64], q: &[(u32, u32)], g: &[(u32, u32)], k_max: usize) -> Vec<f64> {
    let mut hits = vec![0usize; k_max];
    for (qi, &(qid, qcam)) in q.iter().enumerate() {
        let mut ranked: Vec<(f64, usize)> = Vec::new();
        for (gi, &(gid, gcam)) in g.iter().enumerate() {
            if !(gid == qid && gcam == qcam) {
                ranked.push((values[qi * g.len() + gi], gi));
            }
        }
        ranked.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for k in 1..=k_max {
            if ranked.iter().take(k).any(|&(_, gi)| g[gi].0 == qid) {
                hits[k - 1] += 1;
            }
        }
    }
    hits.iter().map(|&h| h as f64 / q.len() as f64).collect()
}

fn protocol_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0004);
    let mut f = Failures::default();
    for t in 0..CMC_TRIALS {
        let (values, q, g) = random_cmc_instance(&mut rng, 8, 12, t % 2 == 0);
        let k_max = rng.random_range(1..=15);
        let got = cmc_raw(&values, &q, &g, k_max).unwrap().rank_hits;
        let expect = naive_cmc(&values, &q, &g, k_max);
        f.check(got == expect, || format!("trial {t}: {got:?} vs {expect:?}"));
    }
    f.outcome(format!("{CMC_TRIALS} trials with Q <= 8, G <= 12, half of them tie-heavy"))
}

fn toy_backbone() -> BackboneConfig {
    BackboneConfig {
        input_height: 96,
        input_width: 32,
        stem_stride: 1,
        widths: [8, 16, 32, 64],
        embed_dim: 32,
        reduction_ratio: 8,
        ..Default::default()
    }
}

struct ToyRun {
    accuracy: f64,
    r1_bf: f64,
    r1_paper: f64,
    r1_inverted: f64,
}

fn toy_seed(seed: u64) -> ToyRun {
    let dir = tempfile::tempdir().unwrap();
    let spec = ToyCorpusSpec {
        identities: TOY_IDENTITIES,
        ..Default::default()
    };
    let corpus = generate_toy_corpus(dir.path(), &spec, seed).unwrap();
    let split = make_splits(&corpus, 1, seed).unwrap().remove(0);
    let mlr = build_mlr(&split.train, &BTreeSet::from([2, 3, 4]), Interpolation::Bicubic, seed).unwrap();
    let train = split.train.merge(&mlr).unwrap();
    let cfg = toy_backbone();
    let inputs = prepare_inputs(&train, &cfg).unwrap();
    let bf_cfg = TrainConfig {
        learning_rate: 1e-3,
        total_iterations: Some(300),
        ..Default::default()
    };
    let br_cfg = TrainConfig {
        learning_rate: 1e-3,
        total_iterations: Some(400),
        ..Default::default()
    };
    let (bf, _) = train_bf_prepared(&train, inputs.clone(), &cfg, &bf_cfg, seed).unwrap();
    let (br, _) = train_br_prepared(&train, inputs, &cfg, &br_cfg, seed).unwrap();

    // Held-out resolution accuracy: every test image at all four resolutions.
    let mut held = Vec::new();
    for r in split.query.records.iter().chain(&split.gallery.records) {
        for s in 1..=4 {
            held.push(ImageRecord {
                image_id: degraded_id(&r.image_id, s),
                degradation_scale: s,
                resolution_label: s - 1,
                ..r.clone()
            });
        }
    }
    let held = split.gallery.with_records(held);
    let held_inputs = prepare_inputs(&held, &cfg).unwrap();
    let targets: Vec<u32> = held.records.iter().map(|r| r.resolution_label).collect();
    let accuracy = classification_accuracy(&br, &held_inputs, &targets).unwrap();

    let protocol = build_protocol(&split.query, &split.gallery, GalleryMode::MultiReso, 0, seed).unwrap();
    let fusions = [FusionSign::Paper, FusionSign::Inverted].map(|sign| FusionConfig { lambda: TOY_LAMBDA, sign });
    let (report, _) = evaluate_run((&bf, "bf"), Some((&br, "br")), &[protocol], &fusions, 20).unwrap();
    let r1 = |m: Method| report.rows.iter().find(|r| r.method == m).unwrap().r1;
    ToyRun {
        accuracy,
        r1_bf: r1(Method::Baseline),
        r1_paper: r1(Method::Rfd(FusionSign::Paper)),
        r1_inverted: r1(Method::Rfd(FusionSign::Inverted)),
    }
}

fn toy_experiment() -> Outcome {
    let start = Instant::now();
    let runs: Vec<ToyRun> = (0..TOY_SEEDS)
        .map(|seed| {
            let r = toy_seed(seed);
            println!(
                "  toy seed {seed}: B-R held-out accuracy {:.3}; multi-reso R1 bf {:.3}, rfd paper {:.3}, rfd inverted {:.3}",
                r.accuracy, r.r1_bf, r.r1_paper, r.r1_inverted
            );
            r
        })
        .collect();
    let n = runs.len() as f64;
    let mean = |f: fn(&ToyRun) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let (acc, bf, paper, inverted) = (mean(|r| r.accuracy), mean(|r| r.r1_bf), mean(|r| r.r1_paper), mean(|r| r.r1_inverted));
    let best = paper.max(inverted);
    let chance = 1.0 / 4.0;
    let rank_ok = best >= bf - TOY_R1_TOLERANCE;
    let acc_ok = acc > chance + TOY_ACCURACY_MARGIN;
    Outcome::new(
        rank_ok && acc_ok,
        format!(
            "{TOY_SEEDS} seeds, {TOY_IDENTITIES} identities: mean R1 bf {bf:.4}, rfd best-of-sign {best:.4} (paper {paper:.4}, inverted {inverted:.4}), need >= {:.4}; B-R held-out accuracy {acc:.4}, need > {:.2}; {:.0}s",
            bf - TOY_R1_TOLERANCE,
            chance + TOY_ACCURACY_MARGIN,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn rfd(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rfd")).args(args).current_dir(dir).env_clear().output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("rfd {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Every file under `root` except wall-clock timing logs, with its bytes.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            stack.extend(fs::read_dir(&p).unwrap().map(|e| e.unwrap().path()));
        } else if !p.to_string_lossy().ends_with(".timing.csv") {
            out.insert(p.clone(), fs::read(&p).unwrap());
        }
    }
    out
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("train.toml"),
        "[backbone]\ninput_height = 96\ninput_width = 32\nwidths = [4, 8, 8, 16]\nembed_dim = 8\nreduction_ratio = 4\n\n[train]\ntotal_iterations = 4\np = 2\nk = 2\nresolution_k = 2\n",
    )
    .unwrap();
    // (stage, arguments of the first run, sidecar, output roots)
    let stages: Vec<(&str, Vec<&str>, &str, Vec<&str>)> = vec![
        ("synth", vec!["synth", "--out", "data", "--toy-identities", "6", "--splits", "1", "--seed", "7"], "data/synth.config.toml", vec!["data"]),
        ("pseudo-label", vec!["pseudo-label", "--manifest", "data/corpus.json", "--out", "real.json", "--mode", "equal_frequency"], "real.json.config.toml", vec!["real.json"]),
        ("train bf", vec!["train", "--config", "train.toml", "--baseline", "bf", "--manifest", "data/split_0/train.json", "--out", "ck/bf.ckpt", "--seed", "3"], "ck/bf.ckpt.config.toml", vec!["ck/bf.ckpt", "ck/bf.ckpt.loss.csv"]),
        ("train br", vec!["train", "--config", "train.toml", "--baseline", "br", "--manifest", "data/split_0/train.json", "--out", "ck/br.ckpt", "--seed", "3"], "ck/br.ckpt.config.toml", vec!["ck/br.ckpt", "ck/br.ckpt.loss.csv"]),
        ("extract bf", vec!["extract", "--checkpoint", "ck/bf.ckpt", "--manifest", "data/split_0/eval_images.json", "--out", "st/split_0.bf.store", "--expect", "bf"], "st/split_0.bf.store.config.toml", vec!["st/split_0.bf.store"]),
        ("extract br", vec!["extract", "--checkpoint", "ck/br.ckpt", "--manifest", "data/split_0/eval_images.json", "--out", "st/split_0.br.store", "--expect", "br"], "st/split_0.br.store.config.toml", vec!["st/split_0.br.store"]),
        ("eval", vec!["eval", "--data", "data", "--stores", "st", "--gallery", "multi", "--rfd", "--lambda", "0.1", "--out", "rep/eval.csv"], "rep/eval.csv.config.toml", vec!["rep/eval.csv", "rep/eval.json", "rep/eval.csv.matrices"]),
        ("sweep", vec!["sweep", "--data", "data", "--stores", "st", "--lambdas", "0,0.1,0.3", "--out", "rep/sweep.csv"], "rep/sweep.csv.config.toml", vec!["rep/sweep.csv", "rep/sweep.json"]),
        (
            "plot",
            vec!["plot", "--report", "rep/sweep.json", "--out", "plots", "--protocol", "data/split_0/protocol_multi_reso.json", "--matrix", "rep/eval.csv.matrices/split_0_multi_reso_fused_paper_0.1.dmat", "--strips", "2"],
            "plots/plot.config.toml",
            vec!["plots"],
        ),
    ];
    let mut f = Failures::default();
    let mut files = 0;
    for (name, args, sidecar, roots) in &stages {
        if let Err(e) = rfd(dir, args) {
            return Outcome::new(false, format!("{name}: {e}"));
        }
        let before: Vec<_> = roots.iter().map(|r| snapshot(&dir.join(r))).collect();
        if let Err(e) = rfd(dir, &[args[0], "--config", sidecar]) {
            return Outcome::new(false, format!("{name} from sidecar: {e}"));
        }
        for (root, old) in roots.iter().zip(before) {
            let new = snapshot(&dir.join(root));
            files += old.len();
            f.check(!old.is_empty() && old == new, || format!("{name}: {root} differs after re-running from {sidecar}"));
        }
    }
    f.outcome(format!("{} stages re-run from their echoed configs, {files} files byte-identical", stages.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("math-oracles", math_oracles),
        ("gradients", gradient_suite),
        ("invariants", invariant_suite),
        ("protocol-oracle", protocol_oracle),
        ("toy-experiment", toy_experiment),
        ("reproducibility", reproducibility),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let outcome = check();
        println!("{} {name}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
        failed += usize::from(!outcome.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
