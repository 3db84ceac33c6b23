//! Expansion of a run configuration into solver runs, their execution on a
//! worker pool, and the on-disk cache of raw and reference spectra.
//!
//! Layout under the output directory:
//!
//! ```text
//! <out>/manifest.json
//! <out>/<campaign-hash>/raw/<label>-<run-hash>.s2p
//! <out>/<campaign-hash>/ref/<pol>-<reference-hash>.s2p
//! <out>/<campaign-hash>/norm/<label>-<run-hash>.s2p
//! <out>/<campaign-hash>/analysis/
//! ```

use rayon::prelude::*;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use pbg_core::analysis::normalize;
use pbg_core::fdtd::{reference_key, run_reference, run_transmission, DomainDims, SimOutput};
use pbg_core::geometry::{fitted_cell_size, rasterize};
use pbg_core::io::{config_hash, read_touchstone, write_touchstone, CrystalConfig, Ports, RunConfig, TouchstoneFormat};
use pbg_core::{ComplexSpectrum, CrystalSpec, Polarization, SimConfig, SweepSpec};

use crate::error::{read_file, write_file, write_json, HarnessError};
use crate::manifest::{Manifest, ReferenceEntry, RunEntry, RunStatus, MANIFEST_FILE, MANIFEST_FORMAT};

/// One crystal run of a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub label: String,
    pub aff: f64,
    pub layers: usize,
    pub polarization: Polarization,
    pub spec: CrystalSpec,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub config: RunConfig,
    /// Solver settings shared by every run, slot sized for the thickest crystal.
    pub sim: SimConfig,
    pub dims: DomainDims,
    pub runs: Vec<PlannedRun>,
    pub hash: String,
}

#[derive(Serialize)]
struct RunKey<'a> {
    spec: &'a CrystalSpec,
    polarization: Polarization,
    sweep: &'a SweepSpec,
    sim: &'a SimConfig,
}

#[derive(Serialize)]
struct CampaignKey<'a> {
    crystal: &'a CrystalConfig,
    sweep: &'a SweepSpec,
    sim: &'a SimConfig,
}

pub fn run_label(aff: f64, layers: usize, pol: Polarization) -> String {
    format!("aff{aff:.2}-N{layers:02}-{}", pol.as_str())
}

/// True when the sorted, distinct layer counts form one unbroken range.
pub fn layers_contiguous(layers: &[usize]) -> bool {
    let mut sorted = layers.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.windows(2).all(|w| w[1] == w[0] + 1)
}

impl Campaign {
    pub fn plan(config: &RunConfig) -> Result<Self, HarnessError> {
        let crystal = &config.crystal;
        if crystal.affs.is_empty() || crystal.layers.is_empty() || crystal.polarizations.is_empty() {
            return Err(HarnessError::Campaign("aff, layers and pol must each name at least one value".into()));
        }
        if config.layer_unwrap && !layers_contiguous(&crystal.layers) {
            return Err(HarnessError::Campaign(format!(
                "layer unwrapping needs contiguous layer counts, got {:?}",
                crystal.layers
            )));
        }
        config.sim.validate()?;
        config.sim.check_sweep(&config.sweep)?;

        let mut specs = Vec::new();
        for &aff in &crystal.affs {
            for &layers in &crystal.layers {
                specs.push((aff, layers, crystal.spec(aff, layers)?));
            }
        }
        let slot = specs.iter().map(|(_, _, s)| s.thickness()).fold(0.0, f64::max);
        let sim = SimConfig { slot_length: Some(slot), ..config.sim };
        let period = specs[0].2.transverse_period();
        let (cell_size, ny) = fitted_cell_size(period, sim.cell_size);
        let dims = DomainDims { ny, cell_size, slot_length: slot };

        let mut runs = Vec::new();
        for (aff, layers, spec) in &specs {
            for &pol in &crystal.polarizations {
                let hash = config_hash(&RunKey { spec, polarization: pol, sweep: &config.sweep, sim: &sim });
                runs.push(PlannedRun {
                    label: run_label(*aff, *layers, pol),
                    aff: *aff,
                    layers: *layers,
                    polarization: pol,
                    spec: *spec,
                    hash,
                });
            }
        }
        let mut hashes: Vec<&str> = runs.iter().map(|r| r.hash.as_str()).collect();
        hashes.sort_unstable();
        if let Some(w) = hashes.windows(2).find(|w| w[0] == w[1]) {
            return Err(HarnessError::Campaign(format!("duplicate run (hash {}) in the campaign", w[0])));
        }
        let hash = config_hash(&CampaignKey { crystal, sweep: &config.sweep, sim: &sim });
        Ok(Self { config: config.clone(), sim, dims, runs, hash })
    }

    pub fn polarizations(&self) -> Vec<Polarization> {
        let mut pols = self.config.crystal.polarizations.clone();
        pols.sort();
        pols.dedup();
        pols
    }

    pub fn reference_hash(&self, pol: Polarization) -> String {
        reference_key(&self.dims, pol, &self.config.sweep, &self.sim)
    }
}

/// Execution settings of [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Execution {
    pub jobs: usize,
    /// Reuse raw and reference spectra already present under the output directory.
    pub use_cache: bool,
}

impl Default for Execution {
    fn default() -> Self {
        Self { jobs: 1, use_cache: true }
    }
}

fn find_cached(out: &Path, kind: &str, hash: &str) -> Option<PathBuf> {
    let suffix = format!("-{hash}.s2p");
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out).ok()?.filter_map(|e| e.ok()).map(|e| e.path().join(kind)).collect();
    dirs.sort();
    dirs.into_iter().find_map(|dir| {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir).ok()?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        files.sort();
        files.into_iter().find(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(&suffix)))
    })
}

fn load_spectrum(path: &Path) -> Result<ComplexSpectrum, HarnessError> {
    let bytes = read_file(path)?;
    read_touchstone(&bytes).map_err(|source| HarnessError::Touchstone { path: path.to_path_buf(), source })
}

pub(crate) fn save_spectrum(path: &Path, spectrum: &ComplexSpectrum) -> Result<(), HarnessError> {
    write_file(path, &write_touchstone(spectrum, TouchstoneFormat::RI, Ports::Two))
}

pub(crate) fn read_spectrum(path: &Path) -> Result<ComplexSpectrum, HarnessError> {
    load_spectrum(path)
}

fn diag_of(spectrum: &ComplexSpectrum) -> (Option<usize>, Option<bool>) {
    let steps = spectrum.meta.extra.get("steps").and_then(|s| s.parse().ok());
    let converged = spectrum.meta.extra.get("converged").and_then(|s| s.parse().ok());
    (steps, converged)
}

struct Outcome<T> {
    value: Result<T, String>,
    cached: bool,
}

/// Fetch from the disk cache or compute, then store under `target`.
fn cached_or_run(
    out: &Path,
    kind: &str,
    hash: &str,
    target: &Path,
    exec: Execution,
    invocations: &AtomicUsize,
    run: impl FnOnce() -> Result<SimOutput, HarnessError>,
) -> Outcome<ComplexSpectrum> {
    if exec.use_cache {
        if let Some(path) = find_cached(out, kind, hash) {
            if let Ok(spectrum) = load_spectrum(&path) {
                if path != target {
                    if let Err(e) = save_spectrum(target, &spectrum) {
                        return Outcome { value: Err(e.to_string()), cached: true };
                    }
                }
                return Outcome { value: Ok(spectrum), cached: true };
            }
        }
    }
    invocations.fetch_add(1, Ordering::SeqCst);
    let value = run().and_then(|mut output| {
        output.spectrum.meta.extra.insert("config_hash".into(), hash.to_string());
        save_spectrum(target, &output.spectrum)?;
        Ok(output.spectrum)
    });
    Outcome { value: value.map_err(|e| e.to_string()), cached: false }
}

/// Run every crystal and reference of the campaign, persist the spectra and
/// write the manifest. Failed runs are recorded without stopping the others.
pub fn simulate(campaign: &Campaign, out: &Path, exec: Execution) -> Result<Manifest, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(exec.jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Campaign(format!("cannot start worker pool: {e}")))?;
    let dir = out.join(&campaign.hash);
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let invocations = AtomicUsize::new(0);
    let sweep = &campaign.config.sweep;
    let sim = &campaign.sim;

    let pols = campaign.polarizations();
    let references: Vec<(ReferenceEntry, Option<ComplexSpectrum>)> = pool.install(|| {
        pols.par_iter()
            .map(|&pol| {
                let hash = campaign.reference_hash(pol);
                let rel = format!("ref/{}-{hash}.s2p", pol.as_str());
                let outcome = cached_or_run(out, "ref", &hash, &dir.join(&rel), exec, &invocations, || {
                    Ok(run_reference(&campaign.dims, pol, sweep, sim)?)
                });
                let (steps, converged) = outcome.value.as_ref().map(diag_of).unwrap_or((None, None));
                let (status, path, spectrum) = match outcome.value {
                    Ok(s) => (RunStatus::Ok, Some(rel), Some(s)),
                    Err(error) => (RunStatus::Failed { error }, None, None),
                };
                (ReferenceEntry { polarization: pol, hash, path, status, cached: outcome.cached, steps, converged }, spectrum)
            })
            .collect()
    });

    let runs: Vec<RunEntry> = pool.install(|| {
        campaign
            .runs
            .par_iter()
            .map(|run| {
                let reference_hash = campaign.reference_hash(run.polarization);
                let reference = references.iter().find(|(e, _)| e.polarization == run.polarization).and_then(|(_, s)| s.as_ref());
                let raw_rel = format!("raw/{}-{}.s2p", run.label, run.hash);
                let norm_rel = format!("norm/{}-{}.s2p", run.label, run.hash);
                let mut entry = RunEntry {
                    label: run.label.clone(),
                    aff: run.aff,
                    layers: run.layers,
                    polarization: run.polarization,
                    thickness: run.spec.thickness(),
                    run_hash: run.hash.clone(),
                    reference_hash,
                    raw: None,
                    norm: None,
                    status: RunStatus::Ok,
                    cached: false,
                    steps: None,
                    converged: None,
                };
                let Some(reference) = reference else {
                    entry.status = RunStatus::Failed { error: "reference run failed".into() };
                    return entry;
                };
                let outcome = cached_or_run(out, "raw", &run.hash, &dir.join(&raw_rel), exec, &invocations, || {
                    let grid = rasterize(&run.spec, sim.cell_size)?;
                    let mut output = run_transmission(&grid, run.polarization, sweep, sim)?;
                    let extra = &mut output.spectrum.meta.extra;
                    extra.insert("label".into(), run.label.clone());
                    extra.insert("aff".into(), format!("{}", run.aff));
                    output.spectrum.meta.layers = Some(run.layers);
                    Ok(output)
                });
                entry.cached = outcome.cached;
                let raw = match outcome.value {
                    Ok(raw) => raw,
                    Err(error) => {
                        entry.status = RunStatus::Failed { error };
                        return entry;
                    }
                };
                (entry.steps, entry.converged) = diag_of(&raw);
                entry.raw = Some(raw_rel);
                let norm = normalize(&raw, reference).map_err(HarnessError::from).and_then(|t| {
                    save_spectrum(&dir.join(&norm_rel), &t)?;
                    Ok(t)
                });
                match norm {
                    Ok(_) => entry.norm = Some(norm_rel),
                    Err(e) => entry.status = RunStatus::Failed { error: e.to_string() },
                }
                entry
            })
            .collect()
    });

    let mut warnings = Vec::new();
    for r in &references {
        if r.0.converged == Some(false) {
            warnings.push(format!("reference {} stopped at max_steps before the energy criterion", r.0.polarization.as_str()));
        }
    }
    for r in &runs {
        if r.converged == Some(false) {
            warnings.push(format!("{} stopped at max_steps before the energy criterion", r.label));
        }
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        campaign_hash: campaign.hash.clone(),
        campaign_dir: campaign.hash.clone(),
        config: campaign.config.to_toml(),
        fdtd_invocations: invocations.load(Ordering::SeqCst),
        references: references.into_iter().map(|(e, _)| e).collect(),
        runs,
        warnings,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
