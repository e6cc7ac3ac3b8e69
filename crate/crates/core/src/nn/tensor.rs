use crate::error::{ensure, Result};

/// A `channels × height × width` activation, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Vec<f32>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Index of the producing stage, 0 for non-stage activations.
    pub stage_id: usize,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            channels >= 1 && height >= 1 && width >= 1,
            "feature map needs C, H, W >= 1, got {channels}x{height}x{width}"
        );
        ensure!(
            data.len() == channels * height * width,
            "feature map buffer has {} values, expected {channels}x{height}x{width}",
            data.len()
        );
        Ok(FeatureMap {
            data,
            channels,
            height,
            width,
            stage_id: 0,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            data: vec![0.0; channels * height * width],
            channels,
            height,
            width,
            stage_id: 0,
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
