//! Touchstone v1.0 (`.s1p` / `.s2p`) reader and writer.

use num_complex::Complex64;
use std::f64::consts::PI;
use std::fmt::Write as _;
use thiserror::Error;

use crate::fdtd::Polarization;
use crate::spectrum::{check_grid, ComplexSpectrum, RunKind, SpectrumError, SpectrumMeta};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TouchstoneError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing option line ('# <unit> S <format> R <ohms>')")]
    MissingOptionLine,
    #[error("input is not valid UTF-8")]
    Encoding,
}

fn perr(line: usize, message: impl Into<String>) -> TouchstoneError {
    TouchstoneError::Parse { line, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreqUnit {
    Hz,
    KHz,
    MHz,
    GHz,
}

impl FreqUnit {
    fn exponent(&self) -> i32 {
        match self {
            FreqUnit::Hz => 0,
            FreqUnit::KHz => 3,
            FreqUnit::MHz => 6,
            FreqUnit::GHz => 9,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            FreqUnit::Hz => "HZ",
            FreqUnit::KHz => "KHZ",
            FreqUnit::MHz => "MHZ",
            FreqUnit::GHz => "GHZ",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TouchstoneFormat {
    RI,
    MA,
    DB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ports {
    One,
    /// Written as a reciprocal transmission-only two-port: `S21 = S12 = t`,
    /// reflections recorded as zero.
    Two,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TouchstoneRecord {
    pub unit: FreqUnit,
    pub format: TouchstoneFormat,
    pub impedance: f64,
    pub ports: usize,
    pub comments: Vec<String>,
    /// Frequencies in Hz.
    pub freqs: Vec<f64>,
    /// One row per frequency: `[S11]` or `[S11, S21, S12, S22]`.
    pub data: Vec<Vec<Complex64>>,
}

/// Parse a decimal token scaled by `10^exp` without an intermediate rounding,
/// so unit conversion is exact.
fn parse_scaled(token: &str, exp: i32) -> Option<f64> {
    if exp == 0 {
        return token.parse().ok().filter(|v: &f64| v.is_finite());
    }
    let (mantissa, e) = match token.find(['e', 'E']) {
        Some(pos) => (&token[..pos], token[pos + 1..].parse::<i32>().ok()?),
        None => (token, 0),
    };
    if mantissa.is_empty() || !mantissa.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | '+' | '-')) {
        return None;
    }
    format!("{mantissa}e{}", e.checked_add(exp)?).parse().ok().filter(|v: &f64| v.is_finite())
}

pub fn parse_touchstone(bytes: &[u8]) -> Result<TouchstoneRecord, TouchstoneError> {
    let text = std::str::from_utf8(bytes).map_err(|_| TouchstoneError::Encoding)?;
    let mut option: Option<(FreqUnit, TouchstoneFormat, f64)> = None;
    let mut comments = Vec::new();
    let mut freqs = Vec::new();
    let mut data = Vec::new();
    let mut ports = None;
    let mut last_line = 0;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let (content, comment) = match raw_line.find('!') {
            Some(pos) => (&raw_line[..pos], Some(raw_line[pos + 1..].trim())),
            None => (raw_line, None),
        };
        if let Some(c) = comment {
            comments.push(c.to_string());
        }
        let content = content.trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            return Err(perr(line_no, format!("Touchstone v2.0 keyword '{content}' is not supported (v1.0 only)")));
        }
        if let Some(rest) = content.strip_prefix('#') {
            if option.is_some() {
                return Err(perr(line_no, "duplicate option line"));
            }
            option = Some(parse_option_line(rest, line_no)?);
            continue;
        }
        let (unit, format, _) = option.ok_or(TouchstoneError::MissingOptionLine)?;
        let tokens: Vec<&str> = content.split_whitespace().collect();
        let arity = match ports {
            Some(p) => 1 + 2 * p * p,
            None => match tokens.len() {
                3 => {
                    ports = Some(1);
                    3
                }
                9 => {
                    ports = Some(2);
                    9
                }
                n => return Err(perr(line_no, format!("data row has {n} fields; expected 3 (1-port) or 9 (2-port)"))),
            },
        };
        if tokens.len() != arity {
            return Err(perr(line_no, format!("data row has {} fields; expected {arity}", tokens.len())));
        }
        let f = parse_scaled(tokens[0], unit.exponent()).ok_or_else(|| perr(line_no, format!("bad frequency '{}'", tokens[0])))?;
        if f < 0.0 {
            return Err(perr(line_no, "negative frequency"));
        }
        if let Some(&prev) = freqs.last() {
            if f <= prev {
                return Err(perr(line_no, format!("frequency {f:e} Hz does not ascend (previous {prev:e} Hz)")));
            }
        }
        let mut row = Vec::with_capacity(arity / 2);
        for pair in tokens[1..].chunks(2) {
            let a: f64 = pair[0].parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| perr(line_no, format!("bad number '{}'", pair[0])))?;
            let b: f64 = pair[1].parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| perr(line_no, format!("bad number '{}'", pair[1])))?;
            row.push(match format {
                TouchstoneFormat::RI => Complex64::new(a, b),
                TouchstoneFormat::MA => Complex64::from_polar(a, b * PI / 180.0),
                TouchstoneFormat::DB => Complex64::from_polar(10f64.powf(a / 20.0), b * PI / 180.0),
            });
        }
        freqs.push(f);
        data.push(row);
        last_line = line_no;
    }
    let (unit, format, impedance) = option.ok_or(TouchstoneError::MissingOptionLine)?;
    match check_grid(&freqs) {
        Ok(()) => {}
        Err(SpectrumError::NotUniform { index }) => {
            return Err(perr(last_line, format!("frequency grid is not uniform at row {}", index + 1)))
        }
        Err(e) => return Err(perr(last_line, e.to_string())),
    }
    Ok(TouchstoneRecord { unit, format, impedance, ports: ports.unwrap_or(0), comments, freqs, data })
}

fn parse_option_line(rest: &str, line_no: usize) -> Result<(FreqUnit, TouchstoneFormat, f64), TouchstoneError> {
    let tokens: Vec<String> = rest.split_whitespace().map(|t| t.to_ascii_uppercase()).collect();
    let (mut unit, mut format, mut impedance) = (FreqUnit::GHz, TouchstoneFormat::MA, 50.0);
    let mut k = 0;
    while k < tokens.len() {
        match tokens[k].as_str() {
            "HZ" => unit = FreqUnit::Hz,
            "KHZ" => unit = FreqUnit::KHz,
            "MHZ" => unit = FreqUnit::MHz,
            "GHZ" => unit = FreqUnit::GHz,
            "S" => {}
            "Y" | "Z" | "H" | "G" => {
                return Err(perr(line_no, format!("parameter type {} is not supported (S only)", tokens[k])))
            }
            "RI" => format = TouchstoneFormat::RI,
            "MA" => format = TouchstoneFormat::MA,
            "DB" => format = TouchstoneFormat::DB,
            "R" => {
                k += 1;
                impedance = tokens
                    .get(k)
                    .and_then(|t| t.parse().ok())
                    .filter(|z: &f64| *z > 0.0 && z.is_finite())
                    .ok_or_else(|| perr(line_no, "option 'R' needs a positive impedance"))?;
            }
            other => return Err(perr(line_no, format!("unknown option '{other}'"))),
        }
        k += 1;
    }
    Ok((unit, format, impedance))
}

const META_PREFIX: &str = "pbg.";

/// Parse and select one parameter: S21 for two-ports, S11 for one-ports.
/// `key=value` comments starting with `pbg.` restore the spectrum metadata;
/// all other comments are kept under `extra["comments"]`.
pub fn read_touchstone(bytes: &[u8]) -> Result<ComplexSpectrum, TouchstoneError> {
    let rec = parse_touchstone(bytes)?;
    let column = if rec.ports == 2 { 1 } else { 0 };
    let values = rec.data.iter().map(|row| row[column]).collect();
    let mut meta = SpectrumMeta::new(RunKind::Normalized);
    let mut free = Vec::new();
    for c in &rec.comments {
        let parsed = c.strip_prefix(META_PREFIX).and_then(|kv| kv.split_once('='));
        match parsed {
            Some(("kind", v)) => meta.kind = RunKind::parse(v.trim()).unwrap_or(meta.kind),
            Some(("polarization", v)) => meta.polarization = Polarization::parse(v),
            Some(("layers", v)) => meta.layers = v.trim().parse().ok(),
            Some(("thickness", v)) => meta.thickness = v.trim().parse().ok(),
            Some((k, v)) => {
                meta.extra.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => free.push(c.clone()),
        }
    }
    if !free.is_empty() {
        meta.extra.insert("comments".into(), free.join("\n"));
    }
    Ok(ComplexSpectrum { freqs: rec.freqs, values, meta })
}

pub fn write_touchstone(spectrum: &ComplexSpectrum, format: TouchstoneFormat, ports: Ports) -> Vec<u8> {
    let mut out = String::new();
    let meta = &spectrum.meta;
    let _ = writeln!(out, "! {META_PREFIX}kind={}", meta.kind.as_str());
    if let Some(p) = meta.polarization {
        let _ = writeln!(out, "! {META_PREFIX}polarization={}", p.as_str());
    }
    if let Some(n) = meta.layers {
        let _ = writeln!(out, "! {META_PREFIX}layers={n}");
    }
    if let Some(d) = meta.thickness {
        let _ = writeln!(out, "! {META_PREFIX}thickness={d:e}");
    }
    for (k, v) in &meta.extra {
        if k == "comments" || v.contains('\n') {
            continue;
        }
        let _ = writeln!(out, "! {META_PREFIX}{k}={v}");
    }
    let fmt_label = match format {
        TouchstoneFormat::RI => "RI",
        TouchstoneFormat::MA => "MA",
        TouchstoneFormat::DB => "DB",
    };
    let _ = writeln!(out, "# {} S {fmt_label} R 50", FreqUnit::Hz.label());
    let pair = |v: Complex64| match format {
        TouchstoneFormat::RI => format!("{:e} {:e}", v.re, v.im),
        TouchstoneFormat::MA => format!("{:e} {:e}", v.norm(), v.arg().to_degrees()),
        TouchstoneFormat::DB => {
            let db = if v.norm() > 0.0 { 20.0 * v.norm().log10() } else { -300.0 };
            format!("{db:e} {:e}", v.arg().to_degrees())
        }
    };
    let zero = Complex64::new(0.0, 0.0);
    for (f, v) in spectrum.freqs.iter().zip(&spectrum.values) {
        match ports {
            Ports::One => {
                let _ = writeln!(out, "{f:e} {}", pair(*v));
            }
            Ports::Two => {
                let z = pair(zero);
                let _ = writeln!(out, "{f:e} {z} {} {} {z}", pair(*v), pair(*v));
            }
        }
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ri_one_port_row() {
        let s = read_touchstone(b"# GHz S RI R 50\n10 0.5 0.0\n").unwrap();
        assert_eq!(s.freqs, vec![10e9]);
        assert_eq!(s.values, vec![Complex64::new(0.5, 0.0)]);
    }

    #[test]
    fn ma_and_db_rows() {
        let s = read_touchstone(b"# MHz S MA R 50\n100 1 90\n").unwrap();
        assert!((s.values[0] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        assert_eq!(s.freqs[0], 1e8);
        let s = read_touchstone(b"# Hz S DB R 50\n100 -20 0\n").unwrap();
        assert!((s.values[0] - Complex64::new(0.1, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn two_port_selects_s21() {
        let text = "! measured\n# kHz S RI R 50\n1 0.1 0 0.7 0.2 0.7 0.2 0.1 0\n2 0.1 0 0.6 0.3 0.6 0.3 0.1 0\n";
        let s = read_touchstone(text.as_bytes()).unwrap();
        assert_eq!(s.values[1], Complex64::new(0.6, 0.3));
        assert_eq!(s.freqs, vec![1e3, 2e3]);
        assert_eq!(s.meta.extra["comments"], "measured");
    }

    #[test]
    fn unit_conversion_is_exact() {
        let s = read_touchstone(b"# GHz S RI R 50\n8.015 1 0\n8.030 1 0\n").unwrap();
        assert_eq!(s.freqs, vec![8.015e9, 8.030e9]);
        let s = read_touchstone(b"# GHz S RI R 50\n8.015E+00 1 0\n").unwrap();
        assert_eq!(s.freqs, vec![8.015e9]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(read_touchstone(b"10 0.5 0\n"), Err(TouchstoneError::MissingOptionLine));
        assert_eq!(read_touchstone(b"! only\n"), Err(TouchstoneError::MissingOptionLine));
        match read_touchstone(b"# GHz S RI R 50\n10 0.5 0\n9 0.5 0\n") {
            Err(TouchstoneError::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        match read_touchstone(b"# GHz S RI R 50\n10 0.5 0\n11 0.5\n") {
            Err(TouchstoneError::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        match read_touchstone(b"[Version] 2.0\n# GHz S RI R 50\n") {
            Err(TouchstoneError::Parse { line: 1, message }) => assert!(message.contains("v2.0")),
            other => panic!("{other:?}"),
        }
        assert!(read_touchstone(b"# GHz Z RI R 50\n").is_err());
    }

    #[test]
    fn empty_spectrum_round_trips() {
        let s = ComplexSpectrum::empty(SpectrumMeta::new(RunKind::Normalized));
        let bytes = write_touchstone(&s, TouchstoneFormat::RI, Ports::Two);
        let back = read_touchstone(&bytes).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn ma_round_trip_at_half_turn() {
        let freqs = vec![1e9, 2e9];
        let values = vec![Complex64::new(-0.5, 0.0), Complex64::new(-0.5, -1e-300)];
        let s = ComplexSpectrum::new(freqs, values.clone(), SpectrumMeta::new(RunKind::Normalized)).unwrap();
        let back = read_touchstone(&write_touchstone(&s, TouchstoneFormat::MA, Ports::One)).unwrap();
        for (a, b) in back.values.iter().zip(&values) {
            assert!((a.norm() - b.norm()).abs() < 1e-15);
            let turns = (a.arg() - b.arg()) / (2.0 * PI);
            assert!((turns - turns.round()).abs() < 1e-12);
        }
    }
}
