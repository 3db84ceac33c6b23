//! The campaign manifest: every artifact of a `simulate` call with the
//! hashes that identify it. Paths are relative to the campaign directory.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use pbg_core::Polarization;

use crate::error::{read_json, HarnessError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "pbg-campaign/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed { error: String },
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub polarization: Polarization,
    pub hash: String,
    pub path: Option<String>,
    pub status: RunStatus,
    pub cached: bool,
    pub steps: Option<usize>,
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub label: String,
    pub aff: f64,
    pub layers: usize,
    pub polarization: Polarization,
    /// Thickness used when converting phase delay to index.
    pub thickness: f64,
    pub run_hash: String,
    pub reference_hash: String,
    pub raw: Option<String>,
    pub norm: Option<String>,
    pub status: RunStatus,
    pub cached: bool,
    pub steps: Option<usize>,
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub campaign_hash: String,
    /// Directory holding the artifacts, relative to the manifest.
    pub campaign_dir: String,
    /// Fully defaulted configuration as TOML.
    pub config: String,
    /// Solver runs performed by the call that wrote this manifest.
    pub fdtd_invocations: usize,
    pub references: Vec<ReferenceEntry>,
    pub runs: Vec<RunEntry>,
    pub warnings: Vec<String>,
}

impl Manifest {
    pub fn all_ok(&self) -> bool {
        self.references.iter().all(|r| r.status.is_ok()) && self.runs.iter().all(|r| r.status.is_ok())
    }

    pub fn failures(&self) -> Vec<String> {
        let refs = self.references.iter().filter_map(|r| match &r.status {
            RunStatus::Failed { error } => Some(format!("reference {}: {error}", r.polarization.as_str())),
            RunStatus::Ok => None,
        });
        let runs = self.runs.iter().filter_map(|r| match &r.status {
            RunStatus::Failed { error } => Some(format!("{}: {error}", r.label)),
            RunStatus::Ok => None,
        });
        refs.chain(runs).collect()
    }
}

/// A manifest together with the directory its paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl LoadedManifest {
    /// Accepts the manifest file itself or the directory containing it.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let manifest: Manifest = read_json(&file)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(HarnessError::Campaign(format!(
                "{}: unsupported manifest format '{}'",
                file.display(),
                manifest.format
            )));
        }
        let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
        let root = base.join(&manifest.campaign_dir);
        Ok(Self { manifest, root })
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }
}
