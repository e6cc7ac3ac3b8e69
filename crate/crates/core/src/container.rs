//! Single-file artifact framing shared by feature stores, checkpoints and
//! distance matrices.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                               |
//! |--------|------|-------------------------------------|
//! | 0      | 8    | magic, identifies the artifact kind |
//! | 8      | 4    | format version (`u32`)              |
//! | 12     | 4    | header length `n` in bytes (`u32`)  |
//! | 16     | n    | UTF-8 JSON header                   |
//! | 16+n   | rest | payload of `f32` values             |

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) const PREFIX_LEN: usize = 16;

/// Encode a header and an `f32` payload into one byte buffer.
pub(crate) fn encode<H: Serialize>(magic: &[u8; 8], version: u32, header: &H, payload: &[f32]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let header_len = u32::try_from(header.len()).map_err(|_| Error::invalid("artifact header exceeds 4 GiB"))?;
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len() * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Split a byte buffer into its parsed header and raw payload bytes.
pub(crate) fn decode<'a, H: DeserializeOwned>(magic: &[u8; 8], version: u32, bytes: &'a [u8]) -> Result<(H, &'a [u8])> {
    if bytes.len() < PREFIX_LEN {
        return Err(Error::Corruption {
            what: "artifact prefix".into(),
            expected: PREFIX_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..8] != magic {
        return Err(Error::Malformed(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..8]),
            String::from_utf8_lossy(magic)
        )));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if found != version {
        return Err(Error::Version {
            found,
            supported: version,
        });
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let rest = &bytes[PREFIX_LEN..];
    if rest.len() < header_len {
        return Err(Error::Corruption {
            what: "artifact header".into(),
            expected: PREFIX_LEN + header_len,
            actual: bytes.len(),
        });
    }
    let header = serde_json::from_slice(&rest[..header_len])?;
    Ok((header, &rest[header_len..]))
}

/// Decode exactly `expected` little-endian `f32` values.
pub(crate) fn payload_f32(what: &str, payload: &[u8], expected: usize) -> Result<Vec<f32>> {
    let expected_bytes = expected
        .checked_mul(4)
        .ok_or_else(|| Error::Malformed(format!("{what}: declared size overflows")))?;
    if payload.len() != expected_bytes {
        return Err(Error::Corruption {
            what: what.to_string(),
            expected: expected_bytes,
            actual: payload.len(),
        });
    }
    Ok(payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
