//! Campaign analysis: per-layer phase delay with the cross-layer slip
//! correction, phase and group index, gap reports, velocity regimes and the
//! far-from-gap dispersion check.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use pbg_core::analysis::{
    band_attenuation, check_far_from_gap, classify_regimes, detect_bandgap, superluminal_bandwidth, superluminal_run_within, unwrap_freq,
    unwrap_layers, AnalysisError, FarFromGapCheck,
};
use pbg_core::io::{load_config, write_dispersion_csv, write_spectrum_csv};
use pbg_core::{AnalysisOptions, BandgapReport, ComplexSpectrum, DispersionResult, Polarization, RegimeSegments};

use crate::campaign::{layers_contiguous, read_spectrum};
use crate::error::{write_file, write_json, HarnessError};
use crate::manifest::LoadedManifest;

pub const ANALYSIS_FILE: &str = "analysis.json";
pub const ANALYSIS_FORMAT: &str = "pbg-analysis/1";

/// A normalized spectrum with the bookkeeping the analysis needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumInput {
    pub label: String,
    pub aff: f64,
    pub layers: usize,
    pub polarization: Polarization,
    pub thickness: f64,
    pub t: ComplexSpectrum,
}

/// Per-spectrum slip counts chosen across the frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCorrection {
    pub m: BTreeMap<usize, i64>,
    /// Fraction of frequencies whose own slip count equals the chosen one.
    pub agreement: BTreeMap<usize, f64>,
    /// Whether an empty-crystal anchor (zero delay at `N = 0`) preceded the series.
    pub anchored: bool,
}

fn mode(values: &[i64]) -> (i64, usize) {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    // ties go to the smallest |m|, then the smallest m
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.abs().cmp(&a.0.abs())).then_with(|| b.0.cmp(&a.0)))
        .unwrap_or((0, 0))
}

/// Apply the cross-layer slip correction at every frequency and keep, for each
/// layer count, the slip count most frequencies agree on.
///
/// `phases` maps layer count to a frequency-unwrapped phase delay. When the
/// series starts at one layer, a zero-delay empty crystal is prepended.
pub fn layer_corrections(phases: &BTreeMap<usize, Vec<f64>>, threshold: f64) -> Result<LayerCorrection, AnalysisError> {
    let Some((&first, first_phase)) = phases.iter().next() else {
        return Ok(LayerCorrection { m: BTreeMap::new(), agreement: BTreeMap::new(), anchored: false });
    };
    let len = first_phase.len();
    if phases.values().any(|p| p.len() != len) {
        return Err(AnalysisError::GridMismatch("phase spectra differ in length".into()));
    }
    let anchored = first == 1;
    let mut per_layer: BTreeMap<usize, Vec<i64>> = phases.keys().map(|&n| (n, Vec::with_capacity(len))).collect();
    for k in 0..len {
        let mut column: BTreeMap<usize, f64> = phases.iter().map(|(&n, p)| (n, p[k])).collect();
        if anchored {
            column.insert(0, 0.0);
        }
        let unwrapped = unwrap_layers(&column, threshold)?;
        for (n, slips) in per_layer.iter_mut() {
            slips.push(unwrapped.slips[n]);
        }
    }
    let mut m = BTreeMap::new();
    let mut agreement = BTreeMap::new();
    for (n, slips) in per_layer {
        let (value, count) = mode(&slips);
        m.insert(n, value);
        agreement.insert(n, if len == 0 { 1.0 } else { count as f64 / len as f64 });
    }
    Ok(LayerCorrection { m, agreement, anchored })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAnalysis {
    pub label: String,
    pub aff: f64,
    pub layers: usize,
    pub polarization: Polarization,
    pub thickness: f64,
    pub m_correction: i64,
    pub m_agreement: Option<f64>,
    /// Normalized spectrum and dispersion tables, relative to the campaign directory.
    pub spectrum: Option<String>,
    pub dispersion: Option<String>,
    pub gap: Option<BandgapReport>,
    pub regimes: Option<RegimeSegments>,
    pub far_from_gap: Option<FarFromGapCheck>,
    /// Layer count whose gap bounded the far-from-gap check.
    pub far_from_gap_reference: Option<usize>,
    /// Attenuation inside the series reference gap, dB; defined even when this
    /// run has no gap of its own.
    pub attenuation_in_reference_gap: Option<f64>,
    /// Widest contiguous `n_g < 1` run inside the gap, Hz.
    pub superluminal_in_gap: Option<f64>,
    /// Total `n_g < 1` bandwidth over the sweep, Hz.
    pub superluminal_bandwidth: Option<f64>,
    pub min_group_index_in_gap: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzedRun {
    pub summary: RunAnalysis,
    pub t: ComplexSpectrum,
    pub dispersion: Option<DispersionResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub aff: f64,
    pub polarization: Polarization,
    pub layers: Vec<usize>,
    pub layer_unwrap_applied: bool,
    /// Gap of the largest layer count that shows one; bounds the far-from-gap
    /// check for runs without a gap of their own.
    pub reference_gap: Option<(usize, BandgapReport)>,
    pub correction: Option<LayerCorrection>,
    pub notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAnalysis {
    pub summary: GroupSummary,
    pub runs: Vec<AnalyzedRun>,
}

/// Analyze the spectra of one (AFF, polarization) series.
pub fn analyze_group(inputs: &[SpectrumInput], opts: &AnalysisOptions, layer_unwrap: bool) -> Result<GroupAnalysis, AnalysisError> {
    let mut inputs: Vec<&SpectrumInput> = inputs.iter().collect();
    inputs.sort_by_key(|s| s.layers);
    let (aff, polarization) = inputs.first().map_or((f64::NAN, Polarization::TE), |s| (s.aff, s.polarization));
    let layers: Vec<usize> = inputs.iter().map(|s| s.layers).collect();
    let phases: BTreeMap<usize, Vec<f64>> = inputs.iter().map(|s| (s.layers, unwrap_freq(&s.t.phases()))).collect();
    if phases.len() != inputs.len() {
        return Err(AnalysisError::Invalid("duplicate layer counts in one series".into()));
    }

    let mut notice = None;
    let correction = if !layer_unwrap {
        None
    } else if !layers_contiguous(&layers) {
        notice = Some(format!("layer counts {layers:?} are not contiguous: layer unwrap skipped, frequency-only unwrap used"));
        None
    } else {
        Some(layer_corrections(&phases, opts.slip_threshold)?)
    };

    let gaps: Vec<Option<BandgapReport>> = inputs
        .iter()
        .map(|input| {
            detect_bandgap(&input.t, opts.threshold_db).map(|mut g| {
                g.polarization = Some(input.polarization);
                g
            })
        })
        .collect();
    let reference_gap = inputs.iter().zip(&gaps).rev().find_map(|(input, g)| g.map(|g| (input.layers, g)));

    let mut runs = Vec::with_capacity(inputs.len());
    for (input, gap) in inputs.into_iter().zip(gaps) {
        let m = correction.as_ref().map_or(0, |c| c.m[&input.layers]);
        let m_agreement = correction.as_ref().map(|c| c.agreement[&input.layers]);
        let t = &input.t;
        let mut summary = RunAnalysis {
            label: input.label.clone(),
            aff: input.aff,
            layers: input.layers,
            polarization: input.polarization,
            thickness: input.thickness,
            m_correction: m,
            m_agreement,
            spectrum: None,
            dispersion: None,
            gap,
            regimes: None,
            far_from_gap: None,
            far_from_gap_reference: None,
            attenuation_in_reference_gap: reference_gap.and_then(|(_, g)| band_attenuation(t, g.f_low, g.f_high)),
            superluminal_in_gap: None,
            superluminal_bandwidth: None,
            min_group_index_in_gap: None,
            notes: Vec::new(),
        };
        if !(input.thickness > 0.0) {
            summary.notes.push("empty crystal: no phase index".into());
            runs.push(AnalyzedRun { summary, t: t.clone(), dispersion: None });
            continue;
        }
        let phi: Vec<f64> = phases[&input.layers].iter().map(|p| p + std::f64::consts::TAU * m as f64).collect();
        let mut result = DispersionResult::from_phase(&t.freqs, phi, input.thickness, m, opts.smoothing_half_width)?;
        result.layers = Some(input.layers);
        result.polarization = Some(input.polarization);
        summary.regimes = Some(classify_regimes(&result.n_g, &result.freqs, opts.zero_tol));
        summary.superluminal_bandwidth = Some(superluminal_bandwidth(&result.n_g, &result.freqs));
        let bound = gap.map(|g| (input.layers, g)).or(reference_gap);
        if let Some((layers, g)) = bound {
            summary.far_from_gap = Some(check_far_from_gap(&result, &g, opts.far_margin, opts.far_limit));
            summary.far_from_gap_reference = Some(layers);
        }
        match &summary.gap {
            Some(g) => {
                summary.superluminal_in_gap = Some(superluminal_run_within(&result.n_g, &result.freqs, g.f_low, g.f_high));
                summary.min_group_index_in_gap = result
                    .freqs
                    .iter()
                    .zip(&result.n_g)
                    .filter(|(f, _)| g.contains(**f))
                    .map(|(_, n)| *n)
                    .reduce(f64::min);
            }
            None => summary.notes.push(format!("no gap {} dB below the passband", opts.threshold_db)),
        }
        runs.push(AnalyzedRun { summary, t: t.clone(), dispersion: Some(result) });
    }
    let summary =
        GroupSummary { aff, polarization, layers, layer_unwrap_applied: correction.is_some(), reference_gap, correction, notice };
    Ok(GroupAnalysis { summary, runs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub format: String,
    pub campaign_hash: String,
    pub campaign_dir: String,
    pub options: AnalysisOptions,
    pub layer_unwrap: bool,
    pub groups: Vec<GroupSummary>,
    pub runs: Vec<RunAnalysis>,
    /// Runs missing from the analysis, with the reason.
    pub skipped: Vec<String>,
}

impl AnalysisReport {
    /// Labels of runs whose far-from-gap check failed.
    pub fn far_from_gap_failures(&self) -> Vec<&str> {
        self.runs
            .iter()
            .filter(|r| r.far_from_gap.is_some_and(|c| !c.passed))
            .map(|r| r.label.as_str())
            .collect()
    }

    pub fn checks_passed(&self) -> bool {
        self.skipped.is_empty() && self.far_from_gap_failures().is_empty()
    }
}

/// Overrides applied on top of the options recorded in the campaign config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AnalysisOverrides {
    pub threshold_db: Option<f64>,
    pub zero_tol: Option<f64>,
}

/// Group the manifest's spectra, analyze each series and write
/// `<out>/analysis.json` plus one dispersion table per run.
pub fn cmd_analyze(input: &Path, out: &Path, overrides: AnalysisOverrides) -> Result<AnalysisReport, HarnessError> {
    let loaded = LoadedManifest::load(input)?;
    let manifest = &loaded.manifest;
    let config = load_config(manifest.config.as_bytes())?;
    let mut opts = config.analysis;
    if let Some(v) = overrides.threshold_db {
        opts.threshold_db = v;
    }
    if let Some(v) = overrides.zero_tol {
        opts.zero_tol = v;
    }

    let mut skipped = Vec::new();
    let mut groups: BTreeMap<(String, Polarization), Vec<SpectrumInput>> = BTreeMap::new();
    for run in &manifest.runs {
        let Some(norm) = run.norm.as_deref().filter(|_| run.status.is_ok()) else {
            skipped.push(format!("{}: no normalized spectrum", run.label));
            continue;
        };
        let t = read_spectrum(&loaded.resolve(norm))?;
        let thickness = t.meta.thickness.unwrap_or(run.thickness);
        let input = SpectrumInput { label: run.label.clone(), aff: run.aff, layers: run.layers, polarization: run.polarization, thickness, t };
        groups.entry((format!("{:.6}", run.aff), run.polarization)).or_default().push(input);
    }

    let dir = out.join(&manifest.campaign_dir);
    let mut report = AnalysisReport {
        format: ANALYSIS_FORMAT.into(),
        campaign_hash: manifest.campaign_hash.clone(),
        campaign_dir: manifest.campaign_dir.clone(),
        options: opts,
        layer_unwrap: config.layer_unwrap,
        groups: Vec::new(),
        runs: Vec::new(),
        skipped,
    };
    for inputs in groups.values() {
        let group = analyze_group(inputs, &opts, config.layer_unwrap)?;
        for run in group.runs {
            let mut summary = run.summary;
            let rel = format!("analysis/{}.spectrum.csv", summary.label);
            write_file(&dir.join(&rel), &write_spectrum_csv(&run.t))?;
            summary.spectrum = Some(rel);
            if let Some(result) = &run.dispersion {
                let rel = format!("analysis/{}.dispersion.csv", summary.label);
                write_file(&dir.join(&rel), &write_dispersion_csv(result, opts.zero_tol))?;
                summary.dispersion = Some(rel);
            }
            report.runs.push(summary);
        }
        report.groups.push(group.summary);
    }
    write_json(&out.join(ANALYSIS_FILE), &report)?;
    Ok(report)
}
