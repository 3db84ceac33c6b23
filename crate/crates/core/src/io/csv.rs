//! Columnar text files. Metadata travels as `# key=value` lines ahead of the
//! header row; numbers use Rust's shortest round-trip formatting.

use num_complex::Complex64;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

use crate::analysis::{DispersionResult, Regime};
use crate::fdtd::{Polarization, C0};
use crate::spectrum::{check_grid, ComplexSpectrum, RunKind, SpectrumMeta};

const SPECTRUM_HEADER: &str = "freq_hz,re,im";
const DISPERSION_HEADER: &str = "freq_hz,delta_phi,n,n_g,dn_domega,regime";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing header row '{0}'")]
    MissingHeader(&'static str),
    #[error("input is not valid UTF-8")]
    Encoding,
}

fn perr(line: usize, message: impl Into<String>) -> CsvError {
    CsvError::Parse { line, message: message.into() }
}

struct Table {
    meta: BTreeMap<String, String>,
    /// (line number, fields)
    rows: Vec<(usize, Vec<String>)>,
}

fn parse_table(bytes: &[u8], header: &'static str) -> Result<Table, CsvError> {
    let text = std::str::from_utf8(bytes).map_err(|_| CsvError::Encoding)?;
    let mut meta = BTreeMap::new();
    let mut rows = Vec::new();
    let mut seen_header = false;
    let width = header.split(',').count();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(kv) = line.strip_prefix('#') {
            let (k, v) = kv.split_once('=').ok_or_else(|| perr(line_no, "metadata line must be '# key=value'"))?;
            meta.insert(k.trim().to_string(), v.trim().to_string());
            continue;
        }
        if !seen_header {
            if line != header {
                return Err(perr(line_no, format!("expected header '{header}'")));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != width {
            return Err(perr(line_no, format!("expected {width} columns, found {}", fields.len())));
        }
        rows.push((line_no, fields));
    }
    if !seen_header {
        return Err(CsvError::MissingHeader(header));
    }
    Ok(Table { meta, rows })
}

fn num(field: &str, line: usize, column: &str) -> Result<f64, CsvError> {
    let v: f64 = field.parse().map_err(|_| perr(line, format!("bad {column} value '{field}'")))?;
    if !v.is_finite() {
        return Err(perr(line, format!("non-finite {column} value '{field}'")));
    }
    Ok(v)
}

fn check_freqs(freqs: &[f64], rows: &[(usize, Vec<String>)]) -> Result<(), CsvError> {
    check_grid(freqs).map_err(|e| {
        let line = match &e {
            crate::spectrum::SpectrumError::NotAscending { index }
            | crate::spectrum::SpectrumError::NotUniform { index }
            | crate::spectrum::SpectrumError::NonFinite { index } => rows.get(*index).map_or(0, |r| r.0),
            _ => 0,
        };
        perr(line, e.to_string())
    })
}

fn write_meta(out: &mut String, meta: &SpectrumMeta) {
    let _ = writeln!(out, "# kind={}", meta.kind.as_str());
    if let Some(p) = meta.polarization {
        let _ = writeln!(out, "# polarization={}", p.as_str());
    }
    if let Some(n) = meta.layers {
        let _ = writeln!(out, "# layers={n}");
    }
    if let Some(d) = meta.thickness {
        let _ = writeln!(out, "# thickness={d:e}");
    }
    for (k, v) in &meta.extra {
        if v.contains('\n') || k.contains('=') {
            continue;
        }
        let _ = writeln!(out, "# x.{k}={v}");
    }
}

fn read_meta(map: &BTreeMap<String, String>, line_hint: usize) -> Result<SpectrumMeta, CsvError> {
    let kind = match map.get("kind") {
        Some(k) => RunKind::parse(k).ok_or_else(|| perr(line_hint, format!("unknown kind '{k}'")))?,
        None => RunKind::Normalized,
    };
    let mut meta = SpectrumMeta::new(kind);
    if let Some(p) = map.get("polarization") {
        meta.polarization = Some(Polarization::parse(p).ok_or_else(|| perr(line_hint, format!("unknown polarization '{p}'")))?);
    }
    if let Some(n) = map.get("layers") {
        meta.layers = Some(n.parse().map_err(|_| perr(line_hint, format!("bad layers '{n}'")))?);
    }
    if let Some(d) = map.get("thickness") {
        meta.thickness = Some(num(d, line_hint, "thickness")?);
    }
    for (k, v) in map {
        if let Some(key) = k.strip_prefix("x.") {
            meta.extra.insert(key.to_string(), v.clone());
        }
    }
    Ok(meta)
}

pub fn write_spectrum_csv(spectrum: &ComplexSpectrum) -> Vec<u8> {
    let mut out = String::new();
    write_meta(&mut out, &spectrum.meta);
    let _ = writeln!(out, "{SPECTRUM_HEADER}");
    for (f, v) in spectrum.freqs.iter().zip(&spectrum.values) {
        let _ = writeln!(out, "{f:e},{:e},{:e}", v.re, v.im);
    }
    out.into_bytes()
}

pub fn read_spectrum_csv(bytes: &[u8]) -> Result<ComplexSpectrum, CsvError> {
    let table = parse_table(bytes, SPECTRUM_HEADER)?;
    let meta = read_meta(&table.meta, 1)?;
    let mut freqs = Vec::with_capacity(table.rows.len());
    let mut values = Vec::with_capacity(table.rows.len());
    for (line, f) in &table.rows {
        freqs.push(num(&f[0], *line, "freq_hz")?);
        values.push(Complex64::new(num(&f[1], *line, "re")?, num(&f[2], *line, "im")?));
    }
    check_freqs(&freqs, &table.rows)?;
    Ok(ComplexSpectrum { freqs, values, meta })
}

/// `zero_tol` selects the labels written to the `regime` column.
pub fn write_dispersion_csv(result: &DispersionResult, zero_tol: f64) -> Vec<u8> {
    let mut out = String::new();
    let _ = writeln!(out, "# thickness={:e}", result.thickness);
    let _ = writeln!(out, "# c={:e}", result.c);
    let _ = writeln!(out, "# m_correction={}", result.m_correction);
    let _ = writeln!(out, "# zero_tol={zero_tol:e}");
    if let Some(n) = result.layers {
        let _ = writeln!(out, "# layers={n}");
    }
    if let Some(p) = result.polarization {
        let _ = writeln!(out, "# polarization={}", p.as_str());
    }
    let smoothing = result.smoothing_half_width.map_or("none".to_string(), |h| h.to_string());
    let _ = writeln!(out, "# smoothing_half_width={smoothing}");
    let _ = writeln!(out, "{DISPERSION_HEADER}");
    for k in 0..result.freqs.len() {
        let regime = Regime::classify(result.n_g[k], zero_tol).map_or("undefined", |r| r.label());
        let _ = writeln!(
            out,
            "{:e},{:e},{:e},{:e},{:e},{regime}",
            result.freqs[k], result.delta_phi[k], result.n[k], result.n_g[k], result.dn_domega[k]
        );
    }
    out.into_bytes()
}

/// Read a dispersion table; returns the result and the regime labels.
pub fn read_dispersion_csv(bytes: &[u8]) -> Result<(DispersionResult, Vec<Regime>), CsvError> {
    let table = parse_table(bytes, DISPERSION_HEADER)?;
    let meta = &table.meta;
    let thickness = num(meta.get("thickness").ok_or_else(|| perr(1, "missing '# thickness='"))?, 1, "thickness")?;
    let c = match meta.get("c") {
        Some(v) => num(v, 1, "c")?,
        None => C0,
    };
    let m_correction = match meta.get("m_correction") {
        Some(v) => v.parse().map_err(|_| perr(1, format!("bad m_correction '{v}'")))?,
        None => 0,
    };
    let layers = match meta.get("layers") {
        Some(v) => Some(v.parse().map_err(|_| perr(1, format!("bad layers '{v}'")))?),
        None => None,
    };
    let polarization = match meta.get("polarization") {
        Some(p) => Some(Polarization::parse(p).ok_or_else(|| perr(1, format!("unknown polarization '{p}'")))?),
        None => None,
    };
    let smoothing_half_width = match meta.get("smoothing_half_width").map(String::as_str) {
        None | Some("none") => None,
        Some(v) => Some(v.parse().map_err(|_| perr(1, format!("bad smoothing_half_width '{v}'")))?),
    };
    let len = table.rows.len();
    let (mut freqs, mut delta_phi, mut n, mut n_g, mut dn, mut regimes) =
        (Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len));
    for (line, f) in &table.rows {
        freqs.push(num(&f[0], *line, "freq_hz")?);
        delta_phi.push(num(&f[1], *line, "delta_phi")?);
        n.push(num(&f[2], *line, "n")?);
        n_g.push(num(&f[3], *line, "n_g")?);
        dn.push(num(&f[4], *line, "dn_domega")?);
        regimes.push(Regime::parse(&f[5]).ok_or_else(|| perr(*line, format!("unknown regime '{}'", f[5])))?);
    }
    check_freqs(&freqs, &table.rows)?;
    let result = DispersionResult {
        freqs,
        delta_phi,
        n,
        n_g,
        dn_domega: dn,
        m_correction,
        thickness,
        c,
        layers,
        polarization,
        smoothing_half_width,
    };
    Ok((result, regimes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_result() -> DispersionResult {
        let freqs: Vec<f64> = (0..50).map(|k| 8e9 + k as f64 * 15e6).collect();
        let phi: Vec<f64> = freqs.iter().map(|f| 1e-9 * f + (f * 1e-9).sin()).collect();
        let mut r = DispersionResult::from_phase(&freqs, phi, 0.2, 2, None).unwrap();
        r.layers = Some(18);
        r.polarization = Some(Polarization::TM);
        r
    }

    #[test]
    fn dispersion_round_trip_and_labels() {
        let r = sample_result();
        let bytes = write_dispersion_csv(&r, 0.05);
        let (back, labels) = read_dispersion_csv(&bytes).unwrap();
        assert_eq!(back, r);
        let expected: Vec<Regime> = r.regimes(0.05).into_iter().map(Option::unwrap).collect();
        assert_eq!(labels, expected);
        let text = String::from_utf8(bytes).unwrap();
        for label in labels.iter().map(Regime::label) {
            assert!(text.contains(&format!(",{label}\n")));
        }
    }

    #[test]
    fn nan_group_index_rejected() {
        let text = "# thickness=1e-1\nfreq_hz,delta_phi,n,n_g,dn_domega,regime\n1e9,0,1,NaN,0,subluminal\n";
        match read_dispersion_csv(text.as_bytes()) {
            Err(CsvError::Parse { line: 3, message }) => assert!(message.contains("n_g")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_spectrum_rows() {
        assert_eq!(read_spectrum_csv(b"1,2,3\n").unwrap_err(), perr(1, format!("expected header '{SPECTRUM_HEADER}'")));
        assert!(matches!(read_spectrum_csv(b"freq_hz,re,im\n1,2\n"), Err(CsvError::Parse { line: 2, .. })));
        assert!(matches!(read_spectrum_csv(b"freq_hz,re,im\n2,0,0\n1,0,0\n"), Err(CsvError::Parse { line: 3, .. })));
        assert_eq!(read_spectrum_csv(b"# kind=raw\n"), Err(CsvError::MissingHeader(SPECTRUM_HEADER)));
    }
}
