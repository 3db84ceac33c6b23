//! File formats: Touchstone v1 S-parameters, CSV spectra and dispersion
//! tables, run configuration and content hashes.

mod config;
mod csv;
mod touchstone;

pub use self::config::{load_config, CalibrationConfig, ConfigError, CrystalConfig, RunConfig};
pub use self::csv::{read_dispersion_csv, read_spectrum_csv, write_dispersion_csv, write_spectrum_csv, CsvError};
pub use self::touchstone::{
    parse_touchstone, read_touchstone, write_touchstone, FreqUnit, Ports, TouchstoneError, TouchstoneFormat,
    TouchstoneRecord,
};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Touchstone(#[from] TouchstoneError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
}

/// First 16 hex digits of the SHA-256 of the value's JSON encoding.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config values serialize to JSON");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
