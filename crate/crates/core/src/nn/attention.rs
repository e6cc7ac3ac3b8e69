//! Channel attention: squeeze each channel to its spatial mean, excite
//! through a bias-free bottleneck (`W1`, ReLU, `W2`, sigmoid) and rescale
//! the channels by the resulting gates.
//!
//! The math is generic over the float type so gradient checks can run the
//! exact same code in `f64`.

use num_traits::Float;
use rand::Rng;

use super::tensor::FeatureMap;
use crate::error::{ensure, Result};

/// Bottleneck weights of one attention module.
///
/// `w1` is `hidden × channels` and `w2` is `channels × hidden`, both
/// row-major, with `hidden = channels / reduction_ratio`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttentionParams<T = f32> {
    pub w1: Vec<T>,
    pub w2: Vec<T>,
    pub channels: usize,
    pub reduction_ratio: usize,
}

impl<T: Float> ChannelAttentionParams<T> {
    pub fn new(w1: Vec<T>, w2: Vec<T>, channels: usize, reduction_ratio: usize) -> Result<Self> {
        let p = ChannelAttentionParams {
            w1,
            w2,
            channels,
            reduction_ratio,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn zeros(channels: usize, reduction_ratio: usize) -> Result<Self> {
        ensure!(
            reduction_ratio >= 1 && channels % reduction_ratio == 0,
            "reduction ratio {reduction_ratio} must divide channel count {channels}"
        );
        let hidden = channels / reduction_ratio;
        Self::new(vec![T::zero(); hidden * channels], vec![T::zero(); hidden * channels], channels, reduction_ratio)
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction_ratio
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.channels >= 1, "attention needs at least one channel");
        ensure!(
            self.reduction_ratio >= 1 && self.channels % self.reduction_ratio == 0,
            "reduction ratio {} must divide channel count {}",
            self.reduction_ratio,
            self.channels
        );
        let expect = self.hidden() * self.channels;
        ensure!(
            self.w1.len() == expect && self.w2.len() == expect,
            "attention weights have {} and {} entries, expected {expect} each",
            self.w1.len(),
            self.w2.len()
        );
        Ok(())
    }
}

fn sigmoid<T: Float>(x: T) -> T {
    // Stable on both tails.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Per-channel spatial mean of a channel-major `c × h × w` buffer.
pub fn global_average_pool_raw<T: Float>(u: &[T], channels: usize, height: usize, width: usize) -> Result<Vec<T>> {
    ensure!(height >= 1 && width >= 1, "cannot pool an empty spatial extent ({height}x{width})");
    let n = height * width;
    ensure!(u.len() == channels * n, "buffer has {} values, expected {channels}x{height}x{width}", u.len());
    let inv = T::from(n).unwrap().recip();
    Ok(u.chunks_exact(n).map(|plane| plane.iter().fold(T::zero(), |a, &b| a + b) * inv).collect())
}

/// Per-channel spatial mean.
pub fn global_average_pool(u: &FeatureMap) -> Result<Vec<f32>> {
    global_average_pool_raw(&u.data, u.channels, u.height, u.width)
}

/// Intermediate values of the excitation, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GateCache<T> {
    pub squeezed: Vec<T>,
    pub hidden_pre: Vec<T>,
    pub gates: Vec<T>,
}

fn gate_with_cache<T: Float>(z: &[T], params: &ChannelAttentionParams<T>) -> Result<GateCache<T>> {
    params.validate()?;
    let c = params.channels;
    ensure!(z.len() == c, "descriptor has length {}, attention expects {c}", z.len());
    let h = params.hidden();
    let hidden_pre: Vec<T> = (0..h)
        .map(|j| {
            params.w1[j * c..(j + 1) * c]
                .iter()
                .zip(z)
                .fold(T::zero(), |a, (&w, &x)| a + w * x)
        })
        .collect();
    let gates = (0..c)
        .map(|l| {
            let s = params.w2[l * h..(l + 1) * h]
                .iter()
                .zip(&hidden_pre)
                .fold(T::zero(), |a, (&w, &x)| a + w * x.max(T::zero()));
            sigmoid(s)
        })
        .collect();
    Ok(GateCache {
        squeezed: z.to_vec(),
        hidden_pre,
        gates,
    })
}

/// `σ(W2 · relu(W1 · z))`.
pub fn channel_gate<T: Float>(z: &[T], params: &ChannelAttentionParams<T>) -> Result<Vec<T>> {
    Ok(gate_with_cache(z, params)?.gates)
}

/// Rescale every channel of `u` by its gate. Returns the output buffer and
/// the cache needed by [`channel_attention_backward`].
pub fn channel_attention_raw<T: Float>(u: &[T], channels: usize, height: usize, width: usize, params: &ChannelAttentionParams<T>) -> Result<(Vec<T>, GateCache<T>)> {
    ensure!(
        params.channels == channels,
        "attention built for {} channels applied to {channels}",
        params.channels
    );
    let z = global_average_pool_raw(u, channels, height, width)?;
    let cache = gate_with_cache(&z, params)?;
    let n = height * width;
    let mut out = u.to_vec();
    for (plane, &g) in out.chunks_exact_mut(n).zip(&cache.gates) {
        plane.iter_mut().for_each(|v| *v = *v * g);
    }
    Ok((out, cache))
}

pub fn channel_attention(u: &FeatureMap, params: &ChannelAttentionParams) -> Result<FeatureMap> {
    let (data, _) = channel_attention_raw(&u.data, u.channels, u.height, u.width, params)?;
    Ok(FeatureMap { data, ..u.clone() })
}

/// Gradients of one attention module.
#[derive(Debug, Clone)]
pub struct AttentionGrads<T> {
    pub input: Vec<T>,
    pub w1: Vec<T>,
    pub w2: Vec<T>,
}

/// Backward pass of [`channel_attention_raw`] given the upstream gradient
/// of its output.
pub fn channel_attention_backward<T: Float>(u: &[T], height: usize, width: usize, params: &ChannelAttentionParams<T>, cache: &GateCache<T>, grad_out: &[T]) -> AttentionGrads<T> {
    let c = params.channels;
    let h = params.hidden();
    let n = height * width;
    let inv_n = T::from(n).unwrap().recip();

    // out_l = g_l * u_l
    let mut grad_input: Vec<T> = grad_out
        .chunks_exact(n)
        .zip(&cache.gates)
        .flat_map(|(go, &g)| go.iter().map(move |&v| v * g))
        .collect();
    let grad_gate: Vec<T> = grad_out
        .chunks_exact(n)
        .zip(u.chunks_exact(n))
        .map(|(go, ui)| go.iter().zip(ui).fold(T::zero(), |a, (&x, &y)| a + x * y))
        .collect();
    // g = σ(s)
    let grad_s: Vec<T> = grad_gate
        .iter()
        .zip(&cache.gates)
        .map(|(&dg, &g)| dg * g * (T::one() - g))
        .collect();
    // s = W2 relu(a)
    let mut grad_w2 = vec![T::zero(); c * h];
    let mut grad_relu = vec![T::zero(); h];
    for l in 0..c {
        for j in 0..h {
            let a = cache.hidden_pre[j];
            grad_w2[l * h + j] = grad_s[l] * a.max(T::zero());
            grad_relu[j] = grad_relu[j] + grad_s[l] * params.w2[l * h + j];
        }
    }
    let grad_a: Vec<T> = grad_relu
        .iter()
        .zip(&cache.hidden_pre)
        .map(|(&g, &a)| if a > T::zero() { g } else { T::zero() })
        .collect();
    // a = W1 z
    let mut grad_w1 = vec![T::zero(); h * c];
    let mut grad_z = vec![T::zero(); c];
    for j in 0..h {
        for l in 0..c {
            grad_w1[j * c + l] = grad_a[j] * cache.squeezed[l];
            grad_z[l] = grad_z[l] + grad_a[j] * params.w1[j * c + l];
        }
    }
    // z = mean(u)
    for (plane, &dz) in grad_input.chunks_exact_mut(n).zip(&grad_z) {
        let add = dz * inv_n;
        plane.iter_mut().for_each(|v| *v = *v + add);
    }
    AttentionGrads {
        input: grad_input,
        w1: grad_w1,
        w2: grad_w2,
    }
}

/// Uniform `±1/sqrt(fan_in)` initialisation of both bottleneck layers.
pub fn init_attention<R: Rng>(channels: usize, reduction_ratio: usize, rng: &mut R) -> Result<ChannelAttentionParams<f32>> {
    let mut p = ChannelAttentionParams::<f32>::zeros(channels, reduction_ratio)?;
    let h = p.hidden();
    let b1 = 1.0 / (channels as f32).sqrt();
    let b2 = 1.0 / (h as f32).sqrt();
    p.w1.iter_mut().for_each(|w| *w = rng.random_range(-b1..b1));
    p.w2.iter_mut().for_each(|w| *w = rng.random_range(-b2..b2));
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_examples() {
        let ones = FeatureMap::new(8, 4, 4, vec![1.0; 128]).unwrap();
        assert_eq!(global_average_pool(&ones).unwrap(), vec![1.0; 8]);
        let mut data = vec![0.0; 2 * 2 * 2];
        data[1] = 2.0;
        data[2] = 2.0;
        let m = FeatureMap::new(2, 2, 2, data).unwrap();
        assert_eq!(global_average_pool(&m).unwrap()[0], 1.0);
        assert!(global_average_pool_raw::<f32>(&[], 1, 0, 3).is_err());
    }

    #[test]
    fn zero_weights_give_half_gates() {
        let p = ChannelAttentionParams::<f32>::zeros(16, 4).unwrap();
        let n = channel_gate(&[3.0; 16], &p).unwrap();
        assert!(n.iter().all(|&v| v == 0.5));
        let u = FeatureMap::new(16, 2, 3, (0..96).map(|i| i as f32).collect()).unwrap();
        let out = channel_attention(&u, &p).unwrap();
        assert_eq!(out.shape(), u.shape());
        for (a, b) in out.data.iter().zip(&u.data) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn saturated_row_drives_gate_to_one() {
        let mut p = ChannelAttentionParams::<f32>::zeros(4, 2).unwrap();
        // hidden unit 0 copies z_0; gate 2 reads it with a huge weight
        p.w1[0] = 1.0;
        p.w2[2 * 2] = 1e4;
        let n = channel_gate(&[1.0, 0.0, 0.0, 0.0], &p).unwrap();
        assert!((n[2] - 1.0).abs() < 1e-6);
        assert_eq!(n[0], 0.5);
        assert_eq!(n[1], 0.5);
        assert_eq!(n[3], 0.5);
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let p = ChannelAttentionParams::<f32>::zeros(8, 2).unwrap();
        assert!(channel_gate(&[0.0; 7], &p).is_err());
        let u = FeatureMap::zeros(4, 2, 2);
        assert!(channel_attention(&u, &p).is_err());
        assert!(ChannelAttentionParams::<f32>::zeros(10, 4).is_err());
        assert!(ChannelAttentionParams::new(vec![0.0f32; 3], vec![0.0; 4], 4, 2).is_err());
    }
}
