//! Broadband transmission through bulk two-dimensional hexagonal photonic
//! crystals and the extraction of phase and group indices from the
//! transmitted phase.
//!
//! * [`geometry`] builds rod lattices parameterized by air-filling fraction
//!   and rasterizes them to permittivity grids.
//! * [`fdtd`] simulates plane-wave transmission for both polarizations.
//! * [`analysis`] normalizes, unwraps and inverts the transmitted phase.
//! * [`io`] reads and writes Touchstone, CSV and configuration files.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod fdtd;
pub mod geometry;
pub mod io;
pub mod spectrum;

pub use analysis::{AnalysisOptions, BandgapReport, DispersionResult, Regime, RegimeSegments};
pub use fdtd::{Polarization, SimConfig, SweepSpec, C0};
pub use geometry::{CrystalSpec, Orientation, PermittivityGrid, RodModel};
pub use spectrum::{ComplexSpectrum, RunKind, SpectrumMeta};
