//! Query × gallery distance matrices and their fusion.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{ensure, Error, Result};

const MAGIC: &[u8; 8] = b"RFDDMAT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixRole {
    #[serde(rename = "D_f")]
    Feature,
    #[serde(rename = "D_r")]
    Resolution,
    #[serde(rename = "fused")]
    Fused,
}

/// Which way the resolution similarity enters the fused distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionSign {
    /// `D_f − λ·D_r`
    #[default]
    Paper,
    /// `D_f + λ·D_r`
    Inverted,
}

impl fmt::Display for FusionSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionSign::Paper => "paper",
            FusionSign::Inverted => "inverted",
        })
    }
}

impl FromStr for FusionSign {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(FusionSign::Paper),
            "inverted" => Ok(FusionSign::Inverted),
            _ => Err(Error::invalid(format!("unknown fusion sign {s:?}; expected paper or inverted"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub lambda: f64,
    pub sign: FusionSign,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            lambda: 0.1,
            sign: FusionSign::Paper,
        }
    }
}

/// Row-major `Q × G` matrix with its row and column ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub values: Vec<f64>,
    pub role: MatrixRole,
    pub query_ids: Vec<String>,
    pub gallery_ids: Vec<String>,
    /// Fusion weight, for fused matrices.
    pub lambda: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixHeader {
    role: MatrixRole,
    lambda: Option<f64>,
    rows: usize,
    cols: usize,
    query_ids: Vec<String>,
    gallery_ids: Vec<String>,
}

impl DistanceMatrix {
    pub fn rows(&self) -> usize {
        self.query_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.gallery_ids.len()
    }

    pub fn get(&self, q: usize, g: usize) -> f64 {
        self.values[q * self.cols() + g]
    }

    pub fn row(&self, q: usize) -> &[f64] {
        &self.values[q * self.cols()..(q + 1) * self.cols()]
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.values.len() == self.rows() * self.cols(), "matrix holds {} values for {}x{}", self.values.len(), self.rows(), self.cols());
        ensure!(self.values.iter().all(|v| v.is_finite()), "matrix has non-finite entries");
        match self.role {
            MatrixRole::Feature => ensure!(self.values.iter().all(|&v| v >= 0.0), "feature distances must be non-negative"),
            MatrixRole::Resolution => ensure!(self.values.iter().all(|&v| (-1.0..=1.0).contains(&v)), "cosine similarities must lie in [-1, 1]"),
            MatrixRole::Fused => {}
        }
        Ok(())
    }

    /// Header JSON followed by row-major little-endian f32 values.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = MatrixHeader {
            role: self.role,
            lambda: self.lambda,
            rows: self.rows(),
            cols: self.cols(),
            query_ids: self.query_ids.clone(),
            gallery_ids: self.gallery_ids.clone(),
        };
        let payload: Vec<f32> = self.values.iter().map(|&v| v as f32).collect();
        container::encode(MAGIC, VERSION, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, payload): (MatrixHeader, _) = container::decode(MAGIC, VERSION, bytes)?;
        if h.query_ids.len() != h.rows || h.gallery_ids.len() != h.cols {
            return Err(Error::Malformed("matrix id lists disagree with its shape".into()));
        }
        let n = h.rows.checked_mul(h.cols).ok_or_else(|| Error::Malformed("matrix shape overflows".into()))?;
        let values = container::payload_f32("distance matrix", payload, n)?;
        let m = DistanceMatrix {
            values: values.into_iter().map(f64::from).collect(),
            role: h.role,
            query_ids: h.query_ids,
            gallery_ids: h.gallery_ids,
            lambda: h.lambda,
        };
        m.validate().map_err(|e| Error::Malformed(e.to_string()))?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt()
}

/// Cosine of the angle between two non-zero vectors.
pub fn resolution_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    ensure!(a.len() == b.len(), "vector lengths differ: {} vs {}", a.len(), b.len());
    let (na, nb) = (norm(a), norm(b));
    ensure!(na > 0.0 && nb > 0.0, "cosine similarity of a zero vector is undefined");
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn check_sets(query: &[Vec<f32>], gallery: &[Vec<f32>], query_ids: &[String], gallery_ids: &[String]) -> Result<()> {
    ensure!(query.len() == query_ids.len() && gallery.len() == gallery_ids.len(), "embedding and id counts differ");
    let d = query.first().or(gallery.first()).map_or(0, Vec::len);
    ensure!(query.iter().chain(gallery).all(|v| v.len() == d), "embedding dimensions differ");
    Ok(())
}

fn normalized(v: &[f32]) -> Result<Vec<f64>> {
    let n = norm(v);
    ensure!(n > 0.0, "cannot normalise a zero embedding");
    Ok(v.iter().map(|&x| f64::from(x) / n).collect())
}

/// Euclidean distances between L2-normalised query and gallery embeddings.
pub fn feature_distance_matrix(query: &[Vec<f32>], gallery: &[Vec<f32>], query_ids: &[String], gallery_ids: &[String]) -> Result<DistanceMatrix> {
    check_sets(query, gallery, query_ids, gallery_ids)?;
    let q: Vec<Vec<f64>> = query.iter().map(|v| normalized(v)).collect::<Result<_>>()?;
    let g: Vec<Vec<f64>> = gallery.iter().map(|v| normalized(v)).collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(q.len() * g.len());
    for a in &q {
        for b in &g {
            values.push(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt());
        }
    }
    Ok(DistanceMatrix {
        values,
        role: MatrixRole::Feature,
        query_ids: query_ids.to_vec(),
        gallery_ids: gallery_ids.to_vec(),
        lambda: None,
    })
}

/// Cosine similarities between query and gallery resolution embeddings.
pub fn resolution_similarity_matrix(query: &[Vec<f32>], gallery: &[Vec<f32>], query_ids: &[String], gallery_ids: &[String]) -> Result<DistanceMatrix> {
    check_sets(query, gallery, query_ids, gallery_ids)?;
    let mut values = Vec::with_capacity(query.len() * gallery.len());
    for a in query {
        for b in gallery {
            values.push(resolution_similarity(a, b)?);
        }
    }
    Ok(DistanceMatrix {
        values,
        role: MatrixRole::Resolution,
        query_ids: query_ids.to_vec(),
        gallery_ids: gallery_ids.to_vec(),
        lambda: None,
    })
}

/// Entrywise `D_f − λ·D_r`, or `D_f + λ·D_r` with the inverted sign.
pub fn fuse(d_f: &DistanceMatrix, d_r: &DistanceMatrix, config: FusionConfig) -> Result<DistanceMatrix> {
    ensure!(config.lambda >= 0.0 && config.lambda.is_finite(), "lambda must be a finite non-negative number");
    ensure!(d_f.role == MatrixRole::Feature && d_r.role == MatrixRole::Resolution, "fuse expects a feature distance and a resolution similarity matrix");
    ensure!(
        d_f.query_ids == d_r.query_ids && d_f.gallery_ids == d_r.gallery_ids && d_f.values.len() == d_r.values.len(),
        "matrices differ in shape or id order"
    );
    let s = match config.sign {
        FusionSign::Paper => -config.lambda,
        FusionSign::Inverted => config.lambda,
    };
    Ok(DistanceMatrix {
        values: d_f.values.iter().zip(&d_r.values).map(|(f, r)| f + s * r).collect(),
        role: MatrixRole::Fused,
        query_ids: d_f.query_ids.clone(),
        gallery_ids: d_f.gallery_ids.clone(),
        lambda: Some(config.lambda),
    })
}
