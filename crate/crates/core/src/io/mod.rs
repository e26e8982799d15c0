//! File formats and synthetic data.

pub mod checkpoint;
pub mod cif;
pub mod manifest;
pub mod toy;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use cif::{parse_cif, write_cif, write_cif_named, CifError};
pub use manifest::{DatasetManifest, Split};
pub use toy::{toy_dataset, ToyError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    Cif { path: String, source: CifError },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Toy(#[from] ToyError),
}

/// Reads and parses a CIF file, tagging errors with the path.
pub fn read_cif(path: &std::path::Path) -> Result<crate::crystal::CrystalStructure, IoError> {
    let text = std::fs::read_to_string(path)?;
    parse_cif(&text).map_err(|source| IoError::Cif { path: path.display().to_string(), source })
}
