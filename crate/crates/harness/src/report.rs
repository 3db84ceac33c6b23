//! Plot-ready columnar files and a plain-text summary built from one or more
//! analysis directories.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pbg_core::io::{read_dispersion_csv, read_spectrum_csv};
use pbg_core::{Polarization, Regime};

use crate::analyze::{AnalysisReport, RunAnalysis, ANALYSIS_FILE};
use crate::error::{read_file, read_json, write_file, HarnessError};

pub const SUMMARY_FILE: &str = "summary.txt";

/// Gap of the highest-AFF series against each other AFF at a shared layer count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffComparison {
    pub polarization: Polarization,
    pub layers: usize,
    pub high_aff: f64,
    pub low_aff: f64,
    pub high_width: f64,
    pub low_width: f64,
    pub high_depth_db: f64,
    pub low_depth_db: f64,
}

impl AffComparison {
    pub fn high_wider_and_deeper(&self) -> bool {
        self.high_width > self.low_width && self.high_depth_db > self.low_depth_db
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub files: Vec<String>,
    pub aff_comparisons: Vec<AffComparison>,
    pub far_from_gap_failures: Vec<String>,
    pub text: String,
}

struct Series<'a> {
    aff: f64,
    polarization: Polarization,
    runs: Vec<(&'a RunAnalysis, PathBuf)>,
}

fn series_name(aff: f64, pol: Polarization) -> String {
    format!("aff{aff:.2}-{}", pol.as_str())
}

fn ghz(f: f64) -> String {
    format!("{:.3}", f / 1e9)
}

/// Columns `freq_hz` followed by one column per layer count.
fn write_table(path: &Path, freqs: &[f64], columns: &[(usize, Vec<f64>)]) -> Result<(), HarnessError> {
    let mut out = String::from("freq_hz");
    for (n, _) in columns {
        let _ = write!(out, ",N{n:02}");
    }
    out.push('\n');
    for (k, f) in freqs.iter().enumerate() {
        let _ = write!(out, "{f:e}");
        for (_, col) in columns {
            let _ = write!(out, ",{:e}", col[k]);
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

fn csv_err(path: &Path, source: pbg_core::io::CsvError) -> HarnessError {
    HarnessError::Csv { path: path.to_path_buf(), source }
}

/// Read every analysis under `inputs` and write transmission, phase-index and
/// group-index tables per series plus `summary.txt` into `out`.
pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> Result<ReportSummary, HarnessError> {
    let mut reports = Vec::new();
    for input in inputs {
        let file = if input.is_dir() { input.join(ANALYSIS_FILE) } else { input.clone() };
        let report: AnalysisReport = read_json(&file)?;
        let base = file.parent().map(Path::to_path_buf).unwrap_or_default().join(&report.campaign_dir);
        reports.push((report, base));
    }

    let mut series: BTreeMap<(String, Polarization), Series> = BTreeMap::new();
    for (report, base) in &reports {
        for run in &report.runs {
            let key = (format!("{:.6}", run.aff), run.polarization);
            series
                .entry(key)
                .or_insert_with(|| Series { aff: run.aff, polarization: run.polarization, runs: Vec::new() })
                .runs
                .push((run, base.clone()));
        }
    }

    let mut files = Vec::new();
    let mut text = String::new();
    let _ = writeln!(text, "analyses: {}", reports.len());
    for (report, _) in &reports {
        let o = &report.options;
        let _ = writeln!(
            text,
            "  campaign {}: threshold {} dB, zero_tol {}, layer unwrap {}, far-from-gap margin {} GHz limit {}",
            report.campaign_hash,
            o.threshold_db,
            o.zero_tol,
            report.layer_unwrap,
            o.far_margin / 1e9,
            o.far_limit
        );
        for g in &report.groups {
            if let Some(notice) = &g.notice {
                let _ = writeln!(text, "  notice ({}): {notice}", series_name(g.aff, g.polarization));
            }
        }
        for s in &report.skipped {
            let _ = writeln!(text, "  skipped: {s}");
        }
    }

    let _ = writeln!(text, "\ngaps");
    for s in series.values_mut() {
        s.runs.sort_by_key(|(r, _)| r.layers);
        let name = series_name(s.aff, s.polarization);
        let mut freqs = Vec::new();
        let (mut db, mut n, mut ng) = (Vec::new(), Vec::new(), Vec::new());
        for (run, base) in &s.runs {
            if let Some(rel) = &run.spectrum {
                let path = base.join(rel);
                let t = read_spectrum_csv(&read_file(&path)?).map_err(|e| csv_err(&path, e))?;
                freqs = t.freqs.clone();
                db.push((run.layers, t.magnitude_db()));
            }
            if let Some(rel) = &run.dispersion {
                let path = base.join(rel);
                let (d, _) = read_dispersion_csv(&read_file(&path)?).map_err(|e| csv_err(&path, e))?;
                n.push((run.layers, d.n));
                ng.push((run.layers, d.n_g));
            }
            match &run.gap {
                Some(g) => {
                    let _ = writeln!(
                        text,
                        "  {}: {}-{} GHz, centre {} GHz, width {} GHz, depth {:.1} dB, m = {}",
                        run.label,
                        ghz(g.f_low),
                        ghz(g.f_high),
                        ghz(g.f_center),
                        ghz(g.width()),
                        g.depth_db,
                        run.m_correction
                    );
                }
                None => {
                    let _ = writeln!(text, "  {}: no gap, m = {}", run.label, run.m_correction);
                }
            }
        }
        for (family, columns) in [("transmission", &db), ("phase_index", &n), ("group_index", &ng)] {
            if columns.is_empty() {
                continue;
            }
            let rel = format!("{family}/{name}.csv");
            write_table(&out.join(&rel), &freqs, columns)?;
            files.push(rel);
        }
    }

    let _ = writeln!(text, "\nvelocity regimes at the largest layer count");
    for s in series.values() {
        let Some((run, _)) = s.runs.last() else { continue };
        let _ = write!(text, "  {}:", run.label);
        let Some(regimes) = &run.regimes else {
            let _ = writeln!(text, " none");
            continue;
        };
        let mut any = false;
        for seg in regimes.segments.iter().filter(|seg| seg.regime != Regime::Subluminal) {
            let _ = write!(text, " {} {}-{} GHz;", seg.regime.label(), ghz(seg.f_start), ghz(seg.f_end));
            any = true;
        }
        if !any {
            let _ = write!(text, " subluminal throughout");
        }
        let _ = writeln!(text);
        if let (Some(width), Some(min)) = (run.superluminal_in_gap, run.min_group_index_in_gap) {
            let _ = writeln!(text, "    widest n_g < 1 run inside the gap {} GHz, minimum n_g in the gap {min:.3}", ghz(width));
        }
    }

    let mut comparisons = Vec::new();
    let mut by_pol: BTreeMap<Polarization, Vec<&Series>> = BTreeMap::new();
    for s in series.values() {
        by_pol.entry(s.polarization).or_default().push(s);
    }
    for (pol, list) in &by_pol {
        let Some(high) = list.iter().max_by(|a, b| a.aff.total_cmp(&b.aff)) else { continue };
        for low in list.iter().filter(|s| s.aff < high.aff) {
            let shared = high
                .runs
                .iter()
                .filter_map(|(r, _)| r.gap.map(|g| (r.layers, g)))
                .filter_map(|(n, hg)| low.runs.iter().find(|(r, _)| r.layers == n).map(|(r, _)| (n, hg, r.gap)))
                .max_by_key(|(n, _, _)| *n);
            if let Some((layers, hg, lg)) = shared {
                comparisons.push(AffComparison {
                    polarization: *pol,
                    layers,
                    high_aff: high.aff,
                    low_aff: low.aff,
                    high_width: hg.width(),
                    low_width: lg.map_or(0.0, |g| g.width()),
                    high_depth_db: hg.depth_db,
                    low_depth_db: lg.map_or(0.0, |g| g.depth_db),
                });
            }
        }
    }
    if !comparisons.is_empty() {
        let _ = writeln!(text, "\nAFF comparison");
        for c in &comparisons {
            let verdict = if c.high_wider_and_deeper() {
                format!("AFF {:.2} gap wider and deeper than AFF {:.2}", c.high_aff, c.low_aff)
            } else {
                format!("AFF {:.2} gap NOT both wider and deeper than AFF {:.2}", c.high_aff, c.low_aff)
            };
            let _ = writeln!(
                text,
                "  {} N = {}: {verdict} (width {} vs {} GHz, depth {:.1} vs {:.1} dB)",
                c.polarization.as_str(),
                c.layers,
                ghz(c.high_width),
                ghz(c.low_width),
                c.high_depth_db,
                c.low_depth_db
            );
        }
    }

    let mut failures = Vec::new();
    let _ = writeln!(text, "\nfar-from-gap dispersion check");
    for (report, _) in &reports {
        for run in &report.runs {
            if let Some(check) = run.far_from_gap.filter(|c| !c.passed) {
                let worst = check.worst_freq.map_or("-".to_string(), ghz);
                let _ = writeln!(
                    text,
                    "  FAILED {}: max |w dn/dw| = {:.3} at {worst} GHz (limit {})",
                    run.label, check.max_abs, check.limit
                );
                failures.push(run.label.clone());
            }
        }
    }
    if failures.is_empty() {
        let _ = writeln!(text, "  all runs with a detected gap passed");
    }

    write_file(&out.join(SUMMARY_FILE), text.as_bytes())?;
    files.push(SUMMARY_FILE.to_string());
    Ok(ReportSummary { files, aff_comparisons: comparisons, far_from_gap_failures: failures, text })
}
