//! Cross-resolution person re-identification.
//!
//! Two independently trained embedding networks share one architecture: a
//! feature network trained on identities and a resolution network trained
//! on resolution classes. At match time the resolution network's cosine
//! similarity matrix is subtracted, scaled, from the feature distance
//! matrix.

pub mod data;
pub mod nn;
pub mod error;
pub mod eval;
pub mod losses;
pub mod matching;
pub mod rng;
pub mod store;
pub mod train;

mod container;

pub use error::{Error, Result};
