//! 2-D convolution via im2col and SGEMM, with its backward pass.

use super::tensor::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Column buffer of one forward call.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub columns: Vec<f32>,
    pub in_height: usize,
    pub in_width: usize,
}

#[allow(clippy::too_many_arguments)]
fn sgemm(m: usize, k: usize, n: usize, a: &[f32], rsa: isize, csa: isize, b: &[f32], rsb: isize, csb: isize, beta: f32, c: &mut [f32], rsc: isize) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: all strides describe in-bounds views of the given slices.
    unsafe {
        matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, 1);
    }
}

impl Conv2d {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        let oh = (height + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (width + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn im2col(&self, x: &FeatureMap, oh: usize, ow: usize) -> Vec<f32> {
        let k = self.kernel;
        let p = oh * ow;
        let mut col = vec![0.0f32; self.in_channels * k * k * p];
        for ci in 0..self.in_channels {
            let plane = x.channel(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= x.height as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.width..][..x.width];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && (ix as usize) < x.width {
                                row[oy * ow + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, dcol: &[f32], height: usize, width: usize, oh: usize, ow: usize) -> FeatureMap {
        let k = self.kernel;
        let p = oh * ow;
        let mut dx = FeatureMap::zeros(self.in_channels, height, width);
        for ci in 0..self.in_channels {
            let plane = &mut dx.data[ci * height * width..][..height * width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &dcol[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= height as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && (ix as usize) < width {
                                plane[iy as usize * width + ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, params: &[f32], x: &FeatureMap) -> (FeatureMap, ConvCache) {
        debug_assert_eq!(x.channels, self.in_channels);
        let (oh, ow) = self.output_size(x.height, x.width);
        let p = oh * ow;
        let r = self.in_channels * self.kernel * self.kernel;
        let columns = self.im2col(x, oh, ow);
        let w = &params[self.weight..self.weight + self.weight_len()];
        let b = &params[self.bias..self.bias + self.out_channels];
        let mut y = FeatureMap::zeros(self.out_channels, oh, ow);
        for (co, plane) in y.data.chunks_exact_mut(p).enumerate() {
            plane.fill(b[co]);
        }
        sgemm(self.out_channels, r, p, w, r as isize, 1, &columns, p as isize, 1, 1.0, &mut y.data, p as isize);
        (
            y,
            ConvCache {
                columns,
                in_height: x.height,
                in_width: x.width,
            },
        )
    }

    /// Accumulate weight and bias gradients into `grads` and return the
    /// gradient with respect to the input.
    pub fn backward(&self, params: &[f32], cache: &ConvCache, dy: &FeatureMap, grads: &mut [f32], need_input_grad: bool) -> Option<FeatureMap> {
        let p = dy.height * dy.width;
        let r = self.in_channels * self.kernel * self.kernel;
        {
            let gw = &mut grads[self.weight..self.weight + self.weight_len()];
            sgemm(self.out_channels, p, r, &dy.data, p as isize, 1, &cache.columns, 1, p as isize, 1.0, gw, r as isize);
        }
        for (co, plane) in dy.data.chunks_exact(p).enumerate() {
            grads[self.bias + co] += plane.iter().sum::<f32>();
        }
        if !need_input_grad {
            return None;
        }
        let w = &params[self.weight..self.weight + self.weight_len()];
        let mut dcol = vec![0.0f32; r * p];
        sgemm(r, self.out_channels, p, w, 1, r as isize, &dy.data, p as isize, 1, 0.0, &mut dcol, p as isize);
        Some(self.col2im(&dcol, cache.in_height, cache.in_width, dy.height, dy.width))
    }
}

/// Fully connected layer `y = W x + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn forward(&self, params: &[f32], x: &[f32]) -> Vec<f32> {
        let w = &params[self.weight..self.weight + self.in_features * self.out_features];
        let b = &params[self.bias..self.bias + self.out_features];
        w.chunks_exact(self.in_features)
            .zip(b)
            .map(|(row, &bias)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>())
            .collect()
    }

    pub fn backward(&self, params: &[f32], x: &[f32], dy: &[f32], grads: &mut [f32]) -> Vec<f32> {
        let (ni, no) = (self.in_features, self.out_features);
        let w = &params[self.weight..self.weight + ni * no];
        let mut dx = vec![0.0f32; ni];
        for o in 0..no {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            grads[self.bias + o] += g;
            let gw = &mut grads[self.weight + o * ni..self.weight + (o + 1) * ni];
            for i in 0..ni {
                gw[i] += g * x[i];
                dx[i] += g * w[o * ni + i];
            }
        }
        dx
    }
}
