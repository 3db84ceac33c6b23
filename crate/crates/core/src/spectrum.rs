//! Frequency-indexed complex amplitudes shared by the solver, the analysis
//! chain and the file formats.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::fdtd::Polarization;

/// Relative tolerance on the spacing of a frequency grid.
pub const UNIFORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("frequency and value arrays differ in length ({freqs} vs {values})")]
    LengthMismatch { freqs: usize, values: usize },
    #[error("frequencies are not strictly ascending at index {index}")]
    NotAscending { index: usize },
    #[error("frequency grid is not uniform at index {index}")]
    NotUniform { index: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Raw,
    Reference,
    Normalized,
}

impl RunKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunKind::Raw => "raw",
            RunKind::Reference => "reference",
            RunKind::Normalized => "normalized",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "raw" => Some(RunKind::Raw),
            "reference" => Some(RunKind::Reference),
            "normalized" => Some(RunKind::Normalized),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub kind: RunKind,
    pub polarization: Option<Polarization>,
    pub layers: Option<usize>,
    /// Sample thickness used when inverting phase delay to an index.
    pub thickness: Option<f64>,
    /// Free-form provenance (config hash, grid parameters, conventions, file comments).
    pub extra: BTreeMap<String, String>,
}

impl SpectrumMeta {
    pub fn new(kind: RunKind) -> Self {
        Self { kind, polarization: None, layers: None, thickness: None, extra: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSpectrum {
    pub freqs: Vec<f64>,
    pub values: Vec<Complex64>,
    pub meta: SpectrumMeta,
}

impl ComplexSpectrum {
    /// Build a spectrum, enforcing a strictly ascending, uniform grid.
    pub fn new(freqs: Vec<f64>, values: Vec<Complex64>, meta: SpectrumMeta) -> Result<Self, SpectrumError> {
        if freqs.len() != values.len() {
            return Err(SpectrumError::LengthMismatch { freqs: freqs.len(), values: values.len() });
        }
        check_grid(&freqs)?;
        Ok(Self { freqs, values, meta })
    }

    pub fn empty(meta: SpectrumMeta) -> Self {
        Self { freqs: Vec::new(), values: Vec::new(), meta }
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn magnitude_db(&self) -> Vec<f64> {
        self.values.iter().map(|v| 20.0 * v.norm().log10()).collect()
    }

    pub fn phases(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.arg()).collect()
    }
}

/// Check strict ascent and uniform spacing (within [`UNIFORM_TOL`] of the span).
pub fn check_grid(freqs: &[f64]) -> Result<(), SpectrumError> {
    for (index, f) in freqs.iter().enumerate() {
        if !f.is_finite() {
            return Err(SpectrumError::NonFinite { index });
        }
    }
    for (index, w) in freqs.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(SpectrumError::NotAscending { index: index + 1 });
        }
    }
    if freqs.len() > 2 {
        let n = freqs.len() - 1;
        let step = (freqs[n] - freqs[0]) / n as f64;
        let scale = freqs[n].abs().max(freqs[0].abs());
        for (index, f) in freqs.iter().enumerate() {
            if (f - (freqs[0] + index as f64 * step)).abs() > UNIFORM_TOL * scale {
                return Err(SpectrumError::NotUniform { index });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_checks() {
        assert!(check_grid(&[1.0, 2.0, 3.0]).is_ok());
        assert_eq!(check_grid(&[1.0, 1.0]), Err(SpectrumError::NotAscending { index: 1 }));
        assert_eq!(check_grid(&[1.0, 2.0, 3.5, 4.0]), Err(SpectrumError::NotUniform { index: 2 }));
        assert!(ComplexSpectrum::new(vec![1.0], vec![], SpectrumMeta::new(RunKind::Raw)).is_err());
    }
}
