//! Orchestration of transmission campaigns: expansion of a configuration into
//! solver runs, cached execution, analysis across layer counts, slab
//! calibration and report generation.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod calibrate;
pub mod campaign;
mod error;
pub mod manifest;
pub mod report;

pub use analyze::{analyze_group, cmd_analyze, AnalysisOverrides, AnalysisReport, SpectrumInput};
pub use calibrate::{cmd_calibrate, run_calibration, CalibrationReport};
pub use campaign::{simulate, Campaign, Execution};
pub use error::HarnessError;
pub use manifest::{LoadedManifest, Manifest};
pub use report::{cmd_report, ReportSummary};
