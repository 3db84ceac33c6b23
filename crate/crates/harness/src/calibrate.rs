//! Slab calibration: simulate homogeneous sheets of known index at several
//! thicknesses and recover the index from the slope of the phase delay.

use serde::{Deserialize, Serialize};
use std::path::Path;

use pbg_core::analysis::{fit_slab_index, normalize, SlabRunFit};
use pbg_core::fdtd::{run_reference, run_transmission, DomainDims};
use pbg_core::io::{CalibrationConfig, RunConfig};
use pbg_core::{PermittivityGrid, Polarization, SimConfig, SweepSpec};

use crate::error::{write_json, HarnessError};

pub const CALIBRATION_FILE: &str = "calibration.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub target_index: f64,
    pub tolerance: f64,
    pub fitted_index: f64,
    pub relative_error: f64,
    pub passed: bool,
    pub cell_size: f64,
    pub polarization: Polarization,
    pub runs: Vec<SlabRunFit>,
}

/// Simulate every slab against one shared vacuum reference and fit the index.
pub fn run_calibration(cal: &CalibrationConfig, sweep: &SweepSpec, sim: &SimConfig) -> Result<CalibrationReport, HarnessError> {
    let mut distinct = cal.thicknesses.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(HarnessError::Campaign(format!(
            "calibration needs at least two distinct slab thicknesses, got {:?}",
            cal.thicknesses
        )));
    }
    if let Some(d) = distinct.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(HarnessError::Campaign(format!("slab thickness must be positive, got {d}")));
    }
    // normal incidence on a homogeneous sheet: both polarizations coincide
    let pol = Polarization::TE;
    let slot = distinct[distinct.len() - 1];
    let sim = SimConfig { slot_length: Some(slot), ..*sim };
    let dims = DomainDims { ny: 1, cell_size: sim.cell_size, slot_length: slot };
    let reference = run_reference(&dims, pol, sweep, &sim)?;
    let mut runs = Vec::with_capacity(cal.thicknesses.len());
    for &d in &cal.thicknesses {
        let grid = PermittivityGrid::slab(d, cal.index, sim.cell_size);
        let raw = run_transmission(&grid, pol, sweep, &sim)?;
        runs.push((d, normalize(&raw.spectrum, &reference.spectrum)?));
    }
    let fit = fit_slab_index(&runs)?;
    let relative_error = (fit.index - cal.index) / cal.index;
    Ok(CalibrationReport {
        target_index: cal.index,
        tolerance: cal.tolerance,
        fitted_index: fit.index,
        relative_error,
        passed: relative_error.abs() <= cal.tolerance,
        cell_size: sim.cell_size,
        polarization: pol,
        runs: fit.runs,
    })
}

/// Run the configured calibration; writes `calibration.json` when `out` is given.
pub fn cmd_calibrate(config: &RunConfig, out: Option<&Path>) -> Result<CalibrationReport, HarnessError> {
    let report = run_calibration(&config.calibration, &config.sweep, &config.sim)?;
    if let Some(dir) = out {
        write_json(&dir.join(CALIBRATION_FILE), &report)?;
    }
    Ok(report)
}
