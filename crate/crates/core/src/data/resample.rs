//! Separable image resampling and synthetic resolution degradation.
//!
//! Both kernels use half-pixel alignment: output sample `d` of an axis
//! resized from `n_in` to `n_out` reads the input at
//! `s = (d + 0.5) * n_in / n_out - 0.5`. Taps that fall outside the image
//! are clamped to the nearest edge pixel. No antialiasing prefilter is
//! applied, so the degradation is exactly "sample down, sample back up".
//!
//! * bilinear: taps `floor(s)` and `floor(s) + 1`, value `a + t * (b - a)`
//!   with `t = s - floor(s)`.
//! * bicubic: four taps `floor(s) - 1 ..= floor(s) + 2` weighted by the
//!   Keys cubic convolution kernel with `a = -0.5`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Resampling kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Bilinear,
    Bicubic,
}

impl std::str::FromStr for Interpolation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bilinear" => Ok(Interpolation::Bilinear),
            "bicubic" => Ok(Interpolation::Bicubic),
            other => Err(format!("unknown interpolation `{other}`")),
        }
    }
}

/// Interleaved `height × width × channels` image with `f32` samples,
/// nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == height * width * channels,
            "image buffer has {} samples, expected {height}x{width}x{channels}",
            data.len()
        );
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f32 {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    /// Mirror around the vertical axis.
    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    *out.at_mut(y, x, c) = self.at(y, self.width - 1 - x, c);
                }
            }
        }
        out
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Image {
            height: h as usize,
            width: w as usize,
            channels: 3,
            data: img.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect(),
        }
    }

    /// Quantize to 8 bits, clamping to `[0, 1]`. Requires three channels.
    pub fn to_rgb8(&self) -> image::RgbImage {
        assert_eq!(self.channels, 3, "to_rgb8 needs a three-channel image");
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer sized by construction")
    }
}

struct Taps {
    index: [usize; 4],
    weight: [f32; 4],
}

fn keys_cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

fn axis_taps(n_in: usize, n_out: usize, interp: Interpolation) -> Vec<Taps> {
    let scale = n_in as f64 / n_out as f64;
    let last = n_in as isize - 1;
    let clamp = |i: isize| i.clamp(0, last) as usize;
    (0..n_out)
        .map(|d| {
            let s = (d as f64 + 0.5) * scale - 0.5;
            let base = s.floor();
            let t = s - base;
            let base = base as isize;
            match interp {
                Interpolation::Bilinear => Taps {
                    index: [clamp(base), clamp(base + 1), 0, 0],
                    weight: [0.0, t as f32, 0.0, 0.0],
                },
                Interpolation::Bicubic => {
                    let mut index = [0; 4];
                    let mut weight = [0.0; 4];
                    for k in 0..4 {
                        let off = k as isize - 1;
                        index[k] = clamp(base + off);
                        weight[k] = keys_cubic(t - off as f64) as f32;
                    }
                    Taps { index, weight }
                }
            }
        })
        .collect()
}

#[inline]
fn apply(taps: &Taps, interp: Interpolation, sample: impl Fn(usize) -> f32) -> f32 {
    match interp {
        Interpolation::Bilinear => {
            let a = sample(taps.index[0]);
            let b = sample(taps.index[1]);
            a + taps.weight[1] * (b - a)
        }
        Interpolation::Bicubic => (0..4).map(|k| taps.weight[k] * sample(taps.index[k])).sum(),
    }
}

/// Resize to `new_height × new_width`.
pub fn resize(image: &Image, new_height: usize, new_width: usize, interp: Interpolation) -> Result<Image> {
    ensure!(
        image.height > 0 && image.width > 0 && image.channels > 0,
        "cannot resample an image with zero extent ({}x{}x{})",
        image.height,
        image.width,
        image.channels
    );
    ensure!(
        new_height > 0 && new_width > 0,
        "cannot resample to zero extent ({new_height}x{new_width})"
    );
    if new_height == image.height && new_width == image.width {
        return Ok(image.clone());
    }
    let ch = image.channels;

    // Horizontal pass.
    let taps_x = axis_taps(image.width, new_width, interp);
    let mut tmp = vec![0.0f32; image.height * new_width * ch];
    for y in 0..image.height {
        let row = &image.data[y * image.width * ch..(y + 1) * image.width * ch];
        for (x, taps) in taps_x.iter().enumerate() {
            for c in 0..ch {
                tmp[(y * new_width + x) * ch + c] = apply(taps, interp, |i| row[i * ch + c]);
            }
        }
    }

    // Vertical pass.
    let taps_y = axis_taps(image.height, new_height, interp);
    let mut out = vec![0.0f32; new_height * new_width * ch];
    for (y, taps) in taps_y.iter().enumerate() {
        for x in 0..new_width {
            for c in 0..ch {
                out[(y * new_width + x) * ch + c] = apply(taps, interp, |i| tmp[(i * new_width + x) * ch + c]);
            }
        }
    }
    Ok(Image {
        height: new_height,
        width: new_width,
        channels: ch,
        data: out,
    })
}

/// Simulate a lower capture resolution: downsample by `scale` to
/// `⌊H/scale⌋ × ⌊W/scale⌋`, then upsample back to `H × W`.
///
/// `scale == 1` returns the input unchanged.
pub fn degrade(image: &Image, scale: u32, interp: Interpolation) -> Result<Image> {
    ensure!(scale >= 1, "degradation scale must be >= 1, got {scale}");
    ensure!(
        image.height > 0 && image.width > 0 && image.channels > 0,
        "cannot degrade an image with zero extent ({}x{}x{})",
        image.height,
        image.width,
        image.channels
    );
    if scale == 1 {
        return Ok(image.clone());
    }
    let r = scale as usize;
    let (low_h, low_w) = (image.height / r, image.width / r);
    ensure!(
        low_h >= 1 && low_w >= 1,
        "scale {scale} is too large for a {}x{} image",
        image.height,
        image.width
    );
    let low = resize(image, low_h, low_w, interp)?;
    resize(&low, image.height, image.width, interp)
}
