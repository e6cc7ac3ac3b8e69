//! Resolution pseudo-labels for real multi-resolution data, from binning
//! the images' total pixel counts.

use serde::{Deserialize, Serialize};

use super::record::ImageRecord;
use crate::error::{ensure, Result};

/// How bin boundaries are placed over the pixel-count range.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningMode {
    /// Intervals of equal length over `[min, max]`.
    #[default]
    EqualWidth,
    /// Intervals holding (as near as ties allow) equal numbers of images.
    EqualFrequency,
}

/// Bin boundaries fitted on one record set and frozen for later use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBins {
    pub min: u64,
    pub max: u64,
    pub bin_count: u32,
    pub mode: BinningMode,
    /// Lower edges of bins `1..bin_count` (equal-frequency mode only).
    pub edges: Vec<u64>,
}

impl PixelBins {
    pub fn fit(pixel_counts: &[u64], bin_count: u32, mode: BinningMode) -> Result<Self> {
        ensure!(!pixel_counts.is_empty(), "cannot fit resolution bins on an empty set");
        ensure!(bin_count >= 1, "bin count must be >= 1");
        ensure!(pixel_counts.iter().all(|&p| p > 0), "pixel counts must be positive");
        let min = *pixel_counts.iter().min().unwrap();
        let max = *pixel_counts.iter().max().unwrap();
        let edges = match mode {
            BinningMode::EqualWidth => Vec::new(),
            BinningMode::EqualFrequency => {
                let mut sorted = pixel_counts.to_vec();
                sorted.sort_unstable();
                let n = sorted.len();
                (1..bin_count as usize)
                    .map(|b| sorted[(b * n / bin_count as usize).min(n - 1)])
                    .collect()
            }
        };
        Ok(PixelBins {
            min,
            max,
            bin_count,
            mode,
            edges,
        })
    }

    /// Label of a pixel count. Values outside the fitted range clamp into
    /// the first or last bin.
    pub fn label(&self, pixel_count: u64) -> u32 {
        let last = self.bin_count - 1;
        match self.mode {
            BinningMode::EqualWidth => {
                if self.max == self.min {
                    return 0;
                }
                let p = pixel_count.clamp(self.min, self.max);
                // floor((p - min) * bins / (max - min)), exact in integers
                let num = u128::from(p - self.min) * u128::from(self.bin_count);
                let den = u128::from(self.max - self.min);
                ((num / den) as u32).min(last)
            }
            BinningMode::EqualFrequency => {
                if self.max == self.min {
                    return 0;
                }
                self.edges.iter().filter(|&&e| pixel_count >= e).count() as u32
            }
        }
    }
}

/// Assign equal-width pixel-count bins fitted on `records` themselves.
pub fn pseudo_label_resolutions(records: &[ImageRecord], bin_count: u32) -> Result<Vec<ImageRecord>> {
    let counts: Vec<u64> = records.iter().map(|r| r.pixel_count).collect();
    let bins = PixelBins::fit(&counts, bin_count, BinningMode::EqualWidth)?;
    Ok(apply_bins(records, &bins))
}

pub fn apply_bins(records: &[ImageRecord], bins: &PixelBins) -> Vec<ImageRecord> {
    records
        .iter()
        .map(|r| ImageRecord {
            resolution_label: bins.label(r.pixel_count),
            ..r.clone()
        })
        .collect()
}
