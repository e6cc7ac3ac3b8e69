//! Embedding files: one header plus an `N × d` little-endian f32 block.
//!
//! Byte layout:
//!
//! | offset | size | content |
//! |---|---|---|
//! | 0 | 8 | `RFDSTORE` |
//! | 8 | 4 | format version, u32 LE (currently 1) |
//! | 12 | 4 | header length `h`, u32 LE |
//! | 16 | h | UTF-8 JSON header |
//! | 16+h | 4·N·d | embeddings, row-major f32 LE |
//!
//! The header holds `source` (`"B-F"` or `"B-R"`), `dim`, `count`,
//! `checkpoint_hash` and the ordered `image_ids`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{ensure, Error, Result};
use crate::nn::EmbeddingSource;

const MAGIC: &[u8; 8] = b"RFDSTORE";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreHeader {
    pub source: EmbeddingSource,
    pub dim: usize,
    pub count: usize,
    pub checkpoint_hash: String,
    pub image_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub header: StoreHeader,
    /// One vector per id, in header order.
    pub embeddings: Vec<Vec<f32>>,
}

impl FeatureStore {
    pub fn new(source: EmbeddingSource, checkpoint_hash: impl Into<String>, image_ids: Vec<String>, embeddings: Vec<Vec<f32>>) -> Result<Self> {
        ensure!(!embeddings.is_empty(), "a feature store needs at least one embedding");
        ensure!(image_ids.len() == embeddings.len(), "{} ids for {} embeddings", image_ids.len(), embeddings.len());
        let dim = embeddings[0].len();
        ensure!(dim > 0 && embeddings.iter().all(|e| e.len() == dim), "embedding dimensions are inconsistent");
        let mut seen = BTreeSet::new();
        for id in &image_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(FeatureStore {
            header: StoreHeader {
                source,
                dim,
                count: embeddings.len(),
                checkpoint_hash: checkpoint_hash.into(),
                image_ids,
            },
            embeddings,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        container::encode(MAGIC, VERSION, &self.header, &self.embeddings.concat())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload): (StoreHeader, _) = container::decode(MAGIC, VERSION, bytes)?;
        if header.image_ids.len() != header.count || header.dim == 0 || header.count == 0 {
            return Err(Error::Malformed(format!("store header inconsistent: count {} dim {} ids {}", header.count, header.dim, header.image_ids.len())));
        }
        let n = header.count.checked_mul(header.dim).ok_or_else(|| Error::Malformed("store shape overflows".into()))?;
        let flat = container::payload_f32("embedding blob", payload, n)?;
        let embeddings = flat.chunks(header.dim).map(<[f32]>::to_vec).collect();
        Self::new(header.source, header.checkpoint_hash, header.image_ids, embeddings)
    }

    /// Error unless the store was produced by the expected network.
    pub fn require_source(&self, expected: EmbeddingSource) -> Result<()> {
        if self.header.source != expected {
            return Err(Error::RoleMismatch {
                expected: expected.to_string(),
                found: self.header.source.to_string(),
            });
        }
        Ok(())
    }

    /// Embeddings for `ids` in the given order.
    pub fn select(&self, ids: &[String]) -> Result<Vec<Vec<f32>>> {
        let index: std::collections::HashMap<&str, usize> = self.header.image_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|&i| self.embeddings[i].clone())
                    .ok_or_else(|| Error::invalid(format!("image {id} is missing from the {} store", self.header.source)))
            })
            .collect()
    }
}

pub fn write_store(store: &FeatureStore, path: &Path) -> Result<()> {
    container::write_file(path, &store.to_bytes()?)
}

pub fn read_store(path: &Path) -> Result<FeatureStore> {
    FeatureStore::from_bytes(&container::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> FeatureStore {
        FeatureStore::new(
            EmbeddingSource::Feature,
            "abc",
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![1.0, 2.0, 3.0, 4.0], vec![-0.5, 0.0, f32::MIN_POSITIVE, 7.25], vec![0.1, 0.2, 0.3, 0.4]],
        )
        .unwrap()
    }

    #[test]
    fn blob_is_count_times_dim_floats() {
        let s = sample();
        let bytes = s.to_bytes().unwrap();
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        assert_eq!(&bytes[..8], b"RFDSTORE");
        assert_eq!(bytes.len() - 16 - header_len, 48);
    }

    #[test]
    fn roundtrip_is_bit_exact_and_deterministic() {
        let s = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.store");
        write_store(&s, &p).unwrap();
        let back = read_store(&p).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes().unwrap(), s.to_bytes().unwrap());
    }

    #[test]
    fn rejects_duplicates_truncation_and_versions() {
        let err = FeatureStore::new(EmbeddingSource::Feature, "", vec!["a".into(), "a".into()], vec![vec![1.0], vec![2.0]]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ref id) if id == "a"));
        let bytes = sample().to_bytes().unwrap();
        match FeatureStore::from_bytes(&bytes[..bytes.len() - 4]) {
            Err(Error::Corruption { expected, actual, .. }) => assert_eq!((expected, actual), (48, 44)),
            other => panic!("{other:?}"),
        }
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(FeatureStore::from_bytes(&v2), Err(Error::Version { found: 2, .. })));
        assert!(FeatureStore::new(EmbeddingSource::Feature, "", vec!["a".into(), "b".into()], vec![vec![1.0], vec![2.0, 3.0]]).is_err());
        assert!(FeatureStore::new(EmbeddingSource::Feature, "", vec![], vec![]).is_err());
    }

    #[test]
    fn role_check() {
        let s = sample();
        assert!(s.require_source(EmbeddingSource::Feature).is_ok());
        assert!(matches!(s.require_source(EmbeddingSource::Resolution), Err(Error::RoleMismatch { .. })));
    }

    #[test]
    fn select_follows_requested_order() {
        let s = sample();
        let got = s.select(&["c".into(), "a".into()]).unwrap();
        assert_eq!(got, vec![s.embeddings[2].clone(), s.embeddings[0].clone()]);
        assert!(s.select(&["z".into()]).is_err());
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(rows in proptest::collection::vec(proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 3), 1..8), br: bool) {
            let ids: Vec<String> = (0..rows.len()).map(|i| format!("img{i}")).collect();
            let source = if br { EmbeddingSource::Resolution } else { EmbeddingSource::Feature };
            let s = FeatureStore::new(source, "h", ids, rows).unwrap();
            let back = FeatureStore::from_bytes(&s.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back.header, s.header);
            for (a, b) in back.embeddings.iter().flatten().zip(s.embeddings.iter().flatten()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
