//! The embedding network: a small residual backbone with channel attention
//! after every stage, whose last stage is cloned into one global branch and
//! two horizontally partitioned local branches.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::attention::{channel_attention_backward, channel_attention_raw, global_average_pool_raw, ChannelAttentionParams, GateCache};
use super::conv::{Conv2d, ConvCache, Linear};
use super::params::ParamLayout;
use super::tensor::FeatureMap;
use crate::data::{resize, Image, Interpolation};
use crate::error::{ensure, Error, Result};
use crate::rng::rng_for;

/// Per-channel normalisation applied to `[0, 1]` RGB input.
pub const INPUT_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const INPUT_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Which of the two networks produced an embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmbeddingSource {
    /// Identity feature network.
    #[serde(rename = "B-F")]
    Feature,
    /// Resolution network.
    #[serde(rename = "B-R")]
    Resolution,
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingSource::Feature => "B-F",
            EmbeddingSource::Resolution => "B-R",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// Stride of the stem convolution.
    pub stem_stride: usize,
    /// Output channels of the four stages.
    pub widths: [usize; 4],
    /// Dimension of each branch embedding.
    pub embed_dim: usize,
    pub reduction_ratio: usize,
    /// Run the global branch's last stage at stride 1.
    pub global_stride_one: bool,
    /// Build channel-attention modules. `false` removes them entirely.
    pub attention: bool,
    pub dropout: f32,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_height: 384,
            input_width: 128,
            stem_stride: 2,
            widths: [16, 32, 64, 128],
            embed_dim: 128,
            reduction_ratio: 16,
            global_stride_one: true,
            attention: true,
            dropout: 0.5,
        }
    }
}

/// Horizontal stripe counts of the three branches.
pub const BRANCH_PARTS: [usize; 3] = [1, 2, 3];

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

impl BackboneConfig {
    /// Spatial size after the shared stages (input of the cloned stage).
    pub fn shared_output_size(&self) -> (usize, usize) {
        let mut h = (self.input_height - 1) / self.stem_stride + 1;
        let mut w = (self.input_width - 1) / self.stem_stride + 1;
        for _ in 0..3 {
            h = half(h);
            w = half(w);
        }
        (h, w)
    }

    /// Spatial size of a branch's final map.
    pub fn branch_output_size(&self, branch: usize) -> (usize, usize) {
        let (h, w) = self.shared_output_size();
        if branch == 0 && self.global_stride_one {
            (h, w)
        } else {
            (half(h), half(w))
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embed_dim * BRANCH_PARTS.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.input_height >= 1 && self.input_width >= 1, "input size must be positive");
        ensure!(self.stem_stride >= 1, "stem stride must be >= 1");
        ensure!(self.widths.iter().all(|&w| w >= 1), "stage widths must be positive");
        ensure!(self.embed_dim >= 1, "embedding dimension must be positive");
        ensure!((0.0..1.0).contains(&self.dropout), "dropout must be in [0, 1)");
        if self.attention {
            ensure!(
                self.reduction_ratio >= 1 && self.widths.iter().all(|w| w % self.reduction_ratio == 0),
                "reduction ratio {} must divide every stage width {:?}",
                self.reduction_ratio,
                self.widths
            );
        }
        let (h, _) = self.branch_output_size(2);
        ensure!(
            h >= 3,
            "input height {} leaves {h} rows for the 3-part branch; need at least 3",
            self.input_height
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    w1: usize,
    w2: usize,
    channels: usize,
    reduction: usize,
}

impl Attention {
    fn params(&self, params: &[f32]) -> ChannelAttentionParams<f32> {
        let n = self.channels * self.channels / self.reduction;
        ChannelAttentionParams {
            w1: params[self.w1..self.w1 + n].to_vec(),
            w2: params[self.w2..self.w2 + n].to_vec(),
            channels: self.channels,
            reduction_ratio: self.reduction,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    conv1: Conv2d,
    conv2: Conv2d,
    shortcut: Conv2d,
}

struct BlockCache {
    c1: ConvCache,
    h1: FeatureMap,
    c2: ConvCache,
    c3: ConvCache,
    out: FeatureMap,
}

fn relu_inplace(x: &mut FeatureMap) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn relu_mask(grad: &mut FeatureMap, activated: &FeatureMap) {
    for (g, &a) in grad.data.iter_mut().zip(&activated.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

impl Block {
    fn forward(&self, p: &[f32], x: &FeatureMap) -> (FeatureMap, BlockCache) {
        let (mut h1, c1) = self.conv1.forward(p, x);
        relu_inplace(&mut h1);
        let (mut out, c2) = self.conv2.forward(p, &h1);
        let (sc, c3) = self.shortcut.forward(p, x);
        out.data.iter_mut().zip(&sc.data).for_each(|(a, b)| *a += b);
        relu_inplace(&mut out);
        let cache = BlockCache {
            c1,
            h1,
            c2,
            c3,
            out: out.clone(),
        };
        (out, cache)
    }

    fn backward(&self, p: &[f32], cache: &BlockCache, mut dout: FeatureMap, grads: &mut [f32], need_input: bool) -> Option<FeatureMap> {
        relu_mask(&mut dout, &cache.out);
        let mut dh1 = self.conv2.backward(p, &cache.c2, &dout, grads, true).unwrap();
        relu_mask(&mut dh1, &cache.h1);
        let dx1 = self.conv1.backward(p, &cache.c1, &dh1, grads, need_input);
        let dx2 = self.shortcut.backward(p, &cache.c3, &dout, grads, need_input);
        match (dx1, dx2) {
            (Some(mut a), Some(b)) => {
                a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
                Some(a)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct Branch {
    block: Block,
    attention: Option<Attention>,
    parts: usize,
    reduce_whole: Linear,
    reduce_parts: Vec<Linear>,
    classifiers: Vec<Linear>,
}

#[derive(Debug, Clone)]
struct Arch {
    stem: Conv2d,
    stages: [Block; 3],
    attention: [Option<Attention>; 3],
    branches: Vec<Branch>,
}

fn conv(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Conv2d {
    let weight = layout.add(format!("{name}.weight"), &[cout, cin, kernel, kernel]);
    let bias = layout.add(format!("{name}.bias"), &[cout]);
    Conv2d {
        weight,
        bias,
        in_channels: cin,
        out_channels: cout,
        kernel,
        stride,
        padding: kernel / 2,
    }
}

fn linear(layout: &mut ParamLayout, name: &str, fin: usize, fout: usize) -> Linear {
    let weight = layout.add(format!("{name}.weight"), &[fout, fin]);
    let bias = layout.add(format!("{name}.bias"), &[fout]);
    Linear {
        weight,
        bias,
        in_features: fin,
        out_features: fout,
    }
}

fn block(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, stride: usize) -> Block {
    Block {
        conv1: conv(layout, &format!("{name}.conv1"), cin, cout, 3, stride),
        conv2: conv(layout, &format!("{name}.conv2"), cout, cout, 3, 1),
        shortcut: conv(layout, &format!("{name}.shortcut"), cin, cout, 1, stride),
    }
}

fn attention(layout: &mut ParamLayout, cfg: &BackboneConfig, name: &str, channels: usize) -> Option<Attention> {
    cfg.attention.then(|| {
        let hidden = channels / cfg.reduction_ratio;
        Attention {
            w1: layout.add(format!("{name}.w1"), &[hidden, channels]),
            w2: layout.add(format!("{name}.w2"), &[channels, hidden]),
            channels,
            reduction: cfg.reduction_ratio,
        }
    })
}

impl Arch {
    fn build(cfg: &BackboneConfig, class_count: usize) -> (Arch, ParamLayout) {
        let mut l = ParamLayout::default();
        let w = cfg.widths;
        let stem = conv(&mut l, "stem", 3, w[0], 3, cfg.stem_stride);
        let mut stages = Vec::new();
        let mut attn = Vec::new();
        let mut cin = w[0];
        for (i, &cout) in w.iter().take(3).enumerate() {
            stages.push(block(&mut l, &format!("stage{i}"), cin, cout, 2));
            attn.push(attention(&mut l, cfg, &format!("stage{i}.attention"), cout));
            cin = cout;
        }
        let names = ["global", "part2", "part3"];
        let branches = BRANCH_PARTS
            .iter()
            .zip(names)
            .enumerate()
            .map(|(b, (&parts, name))| {
                let stride = if b == 0 && cfg.global_stride_one { 1 } else { 2 };
                let block = block(&mut l, &format!("{name}.stage3"), w[2], w[3], stride);
                let attention = attention(&mut l, cfg, &format!("{name}.stage3.attention"), w[3]);
                let reduce_whole = linear(&mut l, &format!("{name}.reduce"), w[3], cfg.embed_dim);
                let (reduce_parts, classifiers) = if parts == 1 {
                    (Vec::new(), vec![linear(&mut l, &format!("{name}.classifier"), cfg.embed_dim, class_count)])
                } else {
                    let reduce = (0..parts).map(|i| linear(&mut l, &format!("{name}.strip{i}.reduce"), w[3], cfg.embed_dim)).collect();
                    let cls = (0..parts).map(|i| linear(&mut l, &format!("{name}.strip{i}.classifier"), cfg.embed_dim, class_count)).collect();
                    (reduce, cls)
                };
                Branch {
                    block,
                    attention,
                    parts,
                    reduce_whole,
                    reduce_parts,
                    classifiers,
                }
            })
            .collect();
        let arch = Arch {
            stem,
            stages: [stages[0], stages[1], stages[2]],
            attention: [attn[0], attn[1], attn[2]],
            branches,
        };
        (arch, l)
    }
}

/// Everything the network emits for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutputs {
    /// Branch-level embeddings (global, 2-part, 3-part), the triplet inputs.
    pub embeddings: Vec<Vec<f32>>,
    /// One logit vector per classification head: global, 2 strips, 3 strips.
    pub class_logits: Vec<Vec<f32>>,
    /// Number of classification heads.
    pub branch_count_id: usize,
    /// Number of triplet branches.
    pub branch_count_tri: usize,
    /// `(C, H, W)` of each branch's final feature map.
    pub branch_map_shapes: Vec<(usize, usize, usize)>,
}

/// A final per-image feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub source: EmbeddingSource,
    pub image_id: String,
}

struct BranchCache {
    block: BlockCache,
    pre_attention: FeatureMap,
    gate: Option<GateCache<f32>>,
    map: FeatureMap,
    whole: Vec<f32>,
    strips: Vec<Vec<f32>>,
    strip_rows: Vec<(usize, usize)>,
    strip_embeddings: Vec<Vec<f32>>,
    /// Dropout-scaled classifier inputs and their masks (1/(1-p) or 0).
    head_inputs: Vec<Vec<f32>>,
    head_masks: Vec<Vec<f32>>,
}

/// Activations of one training forward pass.
pub struct ForwardCache {
    stem: ConvCache,
    stem_out: FeatureMap,
    stages: Vec<(BlockCache, FeatureMap, Option<GateCache<f32>>)>,
    branches: Vec<BranchCache>,
}

/// Trainable embedding network.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub class_count: usize,
    pub source: EmbeddingSource,
    pub layout: ParamLayout,
    pub params: Vec<f32>,
    /// Force every attention gate to 1.
    pub attention_bypass: bool,
    arch: Arch,
}

fn strip_rows(height: usize, parts: usize) -> Vec<(usize, usize)> {
    (0..parts).map(|i| (i * height / parts, (i + 1) * height / parts)).collect()
}

fn pool_rows(map: &FeatureMap, rows: (usize, usize)) -> Vec<f32> {
    let n = ((rows.1 - rows.0) * map.width) as f32;
    (0..map.channels)
        .map(|c| map.channel(c)[rows.0 * map.width..rows.1 * map.width].iter().sum::<f32>() / n)
        .collect()
}

fn unpool_rows(grad: &mut FeatureMap, rows: (usize, usize), d: &[f32]) {
    let n = ((rows.1 - rows.0) * grad.width) as f32;
    let plane = grad.plane_len();
    let w = grad.width;
    for (c, &g) in d.iter().enumerate() {
        let add = g / n;
        grad.data[c * plane + rows.0 * w..c * plane + rows.1 * w].iter_mut().for_each(|v| *v += add);
    }
}

impl Backbone {
    /// A freshly initialised network. Initial weights depend only on
    /// `(config, class_count, source, seed)`.
    pub fn new(config: BackboneConfig, class_count: usize, source: EmbeddingSource, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(config, class_count, source)?;
        for entry in net.layout.entries.clone() {
            let mut rng = rng_for(seed, &format!("init/{source}/{}", entry.name));
            let slot = &mut net.params[entry.range()];
            let fan_in: usize = entry.shape[1..].iter().product::<usize>().max(1);
            if entry.name.ends_with(".bias") {
                continue;
            } else if entry.name.ends_with(".w1") || entry.name.ends_with(".w2") {
                let b = 1.0 / (fan_in as f32).sqrt();
                slot.iter_mut().for_each(|w| *w = rng.random_range(-b..b));
            } else if entry.name.contains("classifier") {
                let dist = Normal::new(0.0f32, (1.0 / fan_in as f32).sqrt()).unwrap();
                slot.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
            } else {
                let dist = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).unwrap();
                slot.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
            }
        }
        Ok(net)
    }

    /// A network with every weight zero.
    pub fn zeroed(config: BackboneConfig, class_count: usize, source: EmbeddingSource) -> Result<Self> {
        config.validate()?;
        ensure!(class_count >= 1, "class count must be >= 1");
        let (arch, layout) = Arch::build(&config, class_count);
        Ok(Backbone {
            params: vec![0.0; layout.total()],
            config,
            class_count,
            source,
            layout,
            attention_bypass: false,
            arch,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    /// Resize to the configured input size and normalise into a
    /// `3 × H × W` tensor.
    pub fn prepare_input(&self, image: &Image) -> Result<FeatureMap> {
        prepare_input(&self.config, image)
    }

    fn check_input(&self, input: &FeatureMap) -> Result<()> {
        ensure!(
            input.shape() == (3, self.config.input_height, self.config.input_width),
            "network expects a 3x{}x{} input, got {}x{}x{}",
            self.config.input_height,
            self.config.input_width,
            input.channels,
            input.height,
            input.width
        );
        Ok(())
    }

    fn attend(&self, attn: Option<Attention>, x: FeatureMap) -> Result<(FeatureMap, FeatureMap, Option<GateCache<f32>>)> {
        match attn {
            Some(a) if !self.attention_bypass => {
                let (data, cache) = channel_attention_raw(&x.data, x.channels, x.height, x.width, &a.params(&self.params))?;
                Ok((FeatureMap { data, ..x.clone() }, x, Some(cache)))
            }
            _ => Ok((x.clone(), x, None)),
        }
    }

    fn run<R: Rng>(&self, input: &FeatureMap, mut dropout_rng: Option<&mut R>) -> Result<(BranchOutputs, ForwardCache)> {
        self.check_input(input)?;
        let p = &self.params;
        let arch = &self.arch;
        let (mut x, stem) = arch.stem.forward(p, input);
        relu_inplace(&mut x);
        let stem_out = x.clone();
        let mut stages = Vec::with_capacity(3);
        for i in 0..3 {
            let (y, bc) = arch.stages[i].forward(p, &x);
            let (mut out, pre, gate) = self.attend(arch.attention[i], y)?;
            out.stage_id = i + 1;
            stages.push((bc, pre, gate));
            x = out;
        }
        let keep = 1.0 - self.config.dropout;
        let mut branches = Vec::with_capacity(3);
        let mut outputs = BranchOutputs {
            embeddings: Vec::new(),
            class_logits: Vec::new(),
            branch_count_id: 0,
            branch_count_tri: arch.branches.len(),
            branch_map_shapes: Vec::new(),
        };
        for br in &arch.branches {
            let (y, bc) = br.block.forward(p, &x);
            let (mut map, pre, gate) = self.attend(br.attention, y)?;
            map.stage_id = 4;
            outputs.branch_map_shapes.push(map.shape());
            let whole = global_average_pool_raw(&map.data, map.channels, map.height, map.width)?;
            let embedding = br.reduce_whole.forward(p, &whole);
            let rows = if br.parts == 1 { Vec::new() } else { strip_rows(map.height, br.parts) };
            let strips: Vec<Vec<f32>> = rows.iter().map(|&r| pool_rows(&map, r)).collect();
            let strip_embeddings: Vec<Vec<f32>> = strips.iter().zip(&br.reduce_parts).map(|(s, lin)| lin.forward(p, s)).collect();
            let head_sources: Vec<&Vec<f32>> = if br.parts == 1 { vec![&embedding] } else { strip_embeddings.iter().collect() };
            let mut head_inputs = Vec::new();
            let mut head_masks = Vec::new();
            for (src, cls) in head_sources.into_iter().zip(&br.classifiers) {
                let mask: Vec<f32> = match dropout_rng.as_deref_mut() {
                    Some(rng) if self.config.dropout > 0.0 => src.iter().map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 }).collect(),
                    _ => vec![1.0; src.len()],
                };
                let inp: Vec<f32> = src.iter().zip(&mask).map(|(a, m)| a * m).collect();
                outputs.class_logits.push(cls.forward(p, &inp));
                head_inputs.push(inp);
                head_masks.push(mask);
            }
            outputs.embeddings.push(embedding);
            branches.push(BranchCache {
                block: bc,
                pre_attention: pre,
                gate,
                map,
                whole,
                strips,
                strip_rows: rows,
                strip_embeddings,
                head_inputs,
                head_masks,
            });
        }
        outputs.branch_count_id = outputs.class_logits.len();
        Ok((
            outputs,
            ForwardCache {
                stem,
                stem_out,
                stages,
                branches,
            },
        ))
    }

    /// Inference pass: no dropout, bit-deterministic.
    pub fn forward(&self, input: &FeatureMap) -> Result<BranchOutputs> {
        Ok(self.run::<rand_chacha::ChaCha8Rng>(input, None)?.0)
    }

    /// Training pass with dropout drawn from `rng`, keeping activations for
    /// [`Backbone::backward`].
    pub fn forward_train<R: Rng>(&self, input: &FeatureMap, rng: &mut R) -> Result<(BranchOutputs, ForwardCache)> {
        self.run(input, Some(rng))
    }

    /// Concatenated branch embeddings of one prepared input.
    pub fn embed(&self, input: &FeatureMap, image_id: impl Into<String>) -> Result<Embedding> {
        let out = self.forward(input)?;
        Ok(Embedding {
            vector: out.embeddings.concat(),
            source: self.source,
            image_id: image_id.into(),
        })
    }

    /// Accumulate parameter gradients into `grads` given upstream gradients
    /// of the branch embeddings and of every head's logits.
    pub fn backward(&self, cache: &ForwardCache, grad_embeddings: &[Vec<f32>], grad_logits: &[Vec<f32>], grads: &mut [f32]) -> Result<()> {
        ensure!(grads.len() == self.params.len(), "gradient buffer has the wrong length");
        ensure!(
            grad_embeddings.len() == self.arch.branches.len() && grad_logits.len() == self.arch.branches.iter().map(|b| b.classifiers.len()).sum::<usize>(),
            "upstream gradient counts do not match the network heads"
        );
        let p = &self.params;
        let mut head = 0;
        let mut grad_shared: Option<FeatureMap> = None;
        for (bi, (br, bc)) in self.arch.branches.iter().zip(&cache.branches).enumerate() {
            let mut d_embedding = grad_embeddings[bi].clone();
            let mut d_strip_embeddings = vec![vec![0.0f32; self.config.embed_dim]; bc.strip_embeddings.len()];
            for (hi, cls) in br.classifiers.iter().enumerate() {
                let d_in = cls.backward(p, &bc.head_inputs[hi], &grad_logits[head], grads);
                head += 1;
                let target = if br.parts == 1 { &mut d_embedding } else { &mut d_strip_embeddings[hi] };
                for ((t, d), m) in target.iter_mut().zip(&d_in).zip(&bc.head_masks[hi]) {
                    *t += d * m;
                }
            }
            let mut d_map = FeatureMap::zeros(bc.map.channels, bc.map.height, bc.map.width);
            let d_whole = br.reduce_whole.backward(p, &bc.whole, &d_embedding, grads);
            unpool_rows(&mut d_map, (0, bc.map.height), &d_whole);
            for (si, lin) in br.reduce_parts.iter().enumerate() {
                let d_strip = lin.backward(p, &bc.strips[si], &d_strip_embeddings[si], grads);
                unpool_rows(&mut d_map, bc.strip_rows[si], &d_strip);
            }
            let d_block = self.attend_backward(br.attention, &bc.pre_attention, bc.gate.as_ref(), d_map, grads);
            let d_x = br.block.backward(p, &bc.block, d_block, grads, true).unwrap();
            match grad_shared.as_mut() {
                Some(g) => g.data.iter_mut().zip(&d_x.data).for_each(|(a, b)| *a += b),
                None => grad_shared = Some(d_x),
            }
        }
        let mut d = grad_shared.expect("three branches");
        for i in (0..3).rev() {
            let (bc, pre, gate) = &cache.stages[i];
            let d_block = self.attend_backward(self.arch.attention[i], pre, gate.as_ref(), d, grads);
            d = self.arch.stages[i].backward(p, bc, d_block, grads, true).unwrap();
        }
        relu_mask(&mut d, &cache.stem_out);
        self.arch.stem.backward(p, &cache.stem, &d, grads, false);
        Ok(())
    }

    fn attend_backward(&self, attn: Option<Attention>, pre: &FeatureMap, gate: Option<&GateCache<f32>>, d_out: FeatureMap, grads: &mut [f32]) -> FeatureMap {
        match (attn, gate) {
            (Some(a), Some(cache)) => {
                let params = a.params(&self.params);
                let g = channel_attention_backward(&pre.data, pre.height, pre.width, &params, cache, &d_out.data);
                let n = g.w1.len();
                grads[a.w1..a.w1 + n].iter_mut().zip(&g.w1).for_each(|(x, y)| *x += y);
                grads[a.w2..a.w2 + n].iter_mut().zip(&g.w2).for_each(|(x, y)| *x += y);
                FeatureMap { data: g.input, ..d_out }
            }
            _ => d_out,
        }
    }

    /// Copy every parameter whose name and shape also exist in `other`.
    pub fn copy_matching_params(&mut self, other: &Backbone) -> usize {
        let mut copied = 0;
        for e in &self.layout.entries {
            if let Some(o) = other.layout.get(&e.name).filter(|o| o.shape == e.shape) {
                self.params[e.range()].copy_from_slice(&other.params[o.range()]);
                copied += 1;
            }
        }
        copied
    }

    /// Replace all weights, checking the length.
    pub fn set_params(&mut self, params: Vec<f32>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Corruption {
                what: "weight vector".into(),
                expected: self.params.len() * 4,
                actual: params.len() * 4,
            });
        }
        self.params = params;
        Ok(())
    }
}

/// Resize to the configured input size and normalise into a `3 × H × W`
/// tensor.
pub fn prepare_input(config: &BackboneConfig, image: &Image) -> Result<FeatureMap> {
    ensure!(image.channels == 3, "network input must have 3 channels, got {}", image.channels);
    let img = resize(image, config.input_height, config.input_width, Interpolation::Bilinear)?;
    let (h, w) = (img.height, img.width);
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[(c * h + y) * w + x] = (img.at(y, x, c) - INPUT_MEAN[c]) / INPUT_STD[c];
            }
        }
    }
    FeatureMap::new(3, h, w, data)
}
