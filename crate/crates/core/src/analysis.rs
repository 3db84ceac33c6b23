//! Measurement-processing chain: normalization against a reference, phase
//! unwrapping along frequency and along layer count, inversion of the
//! phase-delay model `dphi = (w/c) d (n - 1)` to a phase index, the group
//! index `n_g = n + w dn/dw`, bandgap detection and velocity-regime
//! classification.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

use crate::fdtd::{Polarization, C0};
use crate::spectrum::{check_grid, ComplexSpectrum, RunKind};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("frequency grids differ: {0}")]
    GridMismatch(String),
    #[error("reference magnitude {magnitude:e} at {freq:e} Hz is below 1e-9 of its peak")]
    VanishingReference { freq: f64, magnitude: f64 },
    #[error("layer counts are not contiguous: {0} is followed by {1}")]
    NonContiguousLayers(usize, usize),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Tunables of the processing chain; every output records the values used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub threshold_db: f64,
    pub zero_tol: f64,
    /// Half-width of a local quadratic fit applied to `n` before
    /// differentiation (`None` = raw central differences).
    pub smoothing_half_width: Option<usize>,
    /// Layer-to-layer phase change treated as a 2 pi slip.
    pub slip_threshold: f64,
    /// Frequency margin around the gap excluded from the far-from-gap check.
    pub far_margin: f64,
    /// Largest `|w dn/dw|` tolerated far from the gap.
    pub far_limit: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self { threshold_db: 10.0, zero_tol: 0.05, smoothing_half_width: None, slip_threshold: PI, far_margin: 1.0e9, far_limit: 0.1 }
    }
}

/// Fold an angle into `(-pi, pi]`, leaving in-range values untouched.
pub fn fold_phase(x: f64) -> f64 {
    if x > -PI && x <= PI {
        return x;
    }
    let r = (x + PI).rem_euclid(TWO_PI) - PI;
    if r <= -PI {
        r + TWO_PI
    } else {
        r
    }
}

/// `t = sample / reference`, pointwise.
pub fn normalize(sample: &ComplexSpectrum, reference: &ComplexSpectrum) -> Result<ComplexSpectrum, AnalysisError> {
    if sample.len() != reference.len() {
        return Err(AnalysisError::GridMismatch(format!("{} vs {} points", sample.len(), reference.len())));
    }
    for (a, b) in sample.freqs.iter().zip(&reference.freqs) {
        if (a - b).abs() > 1e-9 * a.abs().max(b.abs()) {
            return Err(AnalysisError::GridMismatch(format!("{a:e} Hz vs {b:e} Hz")));
        }
    }
    let peak = reference.values.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    for (f, v) in reference.freqs.iter().zip(&reference.values) {
        if !(v.norm() >= 1e-9 * peak) || v.norm() == 0.0 {
            return Err(AnalysisError::VanishingReference { freq: *f, magnitude: v.norm() });
        }
    }
    let values = sample.values.iter().zip(&reference.values).map(|(s, r)| s / r).collect();
    let mut meta = sample.meta.clone();
    meta.kind = RunKind::Normalized;
    Ok(ComplexSpectrum { freqs: sample.freqs.clone(), values, meta })
}

/// Unwrap along an ordered axis: the first sample folded to `(-pi, pi]`, each
/// consecutive difference folded to `(-pi, pi]`.
pub fn unwrap_freq(wrapped: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(wrapped.len());
    if let Some(&first) = wrapped.first() {
        out.push(fold_phase(first));
    }
    for k in 1..wrapped.len() {
        let prev = out[k - 1];
        out.push(prev + fold_phase(wrapped[k] - wrapped[k - 1]));
    }
    out
}

/// Outcome of the cross-layer slip correction at one frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerUnwrap {
    pub corrected: BTreeMap<usize, f64>,
    /// Cumulative slip count `m(N)`; the correction applied is `2 pi m(N)`.
    pub slips: BTreeMap<usize, i64>,
}

/// Correct 2 pi slips across a contiguous series of layer counts.
///
/// Scanning `N` upwards, a step below `-threshold` (a sharp drop) raises the
/// cumulative count `m` by one; a rise above `threshold` lowers it. With the
/// default threshold of pi the corrected steps all lie in `(-pi, pi]`.
pub fn unwrap_layers(phase_by_layers: &BTreeMap<usize, f64>, threshold: f64) -> Result<LayerUnwrap, AnalysisError> {
    if !(PI..TWO_PI).contains(&threshold) {
        return Err(AnalysisError::Invalid(format!("slip threshold {threshold} must lie in [pi, 2 pi)")));
    }
    let mut corrected = BTreeMap::new();
    let mut slips = BTreeMap::new();
    let mut m: i64 = 0;
    let mut prev: Option<(usize, f64)> = None;
    for (&layers, &raw) in phase_by_layers {
        if let Some((prev_layers, prev_value)) = prev {
            if layers != prev_layers + 1 {
                return Err(AnalysisError::NonContiguousLayers(prev_layers, layers));
            }
            let mut step = raw + TWO_PI * m as f64 - prev_value;
            while step <= -threshold {
                m += 1;
                step += TWO_PI;
            }
            while step > threshold {
                m -= 1;
                step -= TWO_PI;
            }
        }
        let value = raw + TWO_PI * m as f64;
        corrected.insert(layers, value);
        slips.insert(layers, m);
        prev = Some((layers, value));
    }
    Ok(LayerUnwrap { corrected, slips })
}

/// Invert the phase-delay model: `n = 1 + c dphi / (w d)`.
pub fn phase_to_index(delta_phi: &[f64], thickness: f64, freqs: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if !(thickness > 0.0 && thickness.is_finite()) {
        return Err(AnalysisError::Invalid(format!("thickness must be positive, got {thickness}")));
    }
    if delta_phi.len() != freqs.len() {
        return Err(AnalysisError::GridMismatch(format!("{} phases vs {} frequencies", delta_phi.len(), freqs.len())));
    }
    if let Some(f) = freqs.iter().find(|f| !(**f > 0.0)) {
        return Err(AnalysisError::Invalid(format!("frequency {f} is not positive")));
    }
    Ok(delta_phi.iter().zip(freqs).map(|(phi, f)| 1.0 + C0 * phi / (TWO_PI * f * thickness)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupIndex {
    pub n_g: Vec<f64>,
    /// `dn/dw` in s/rad.
    pub dn_domega: Vec<f64>,
}

/// Least-squares quadratic through the samples within `half` points of each
/// index, evaluated at that index.
fn smooth_quadratic(values: &[f64], half: usize) -> Vec<f64> {
    let len = values.len();
    (0..len)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half).min(len - 1);
            // normal equations in the local offset t = i - k
            let mut s = [0.0f64; 5];
            let mut r = [0.0f64; 3];
            for (i, v) in values.iter().enumerate().take(hi + 1).skip(lo) {
                let t = i as f64 - k as f64;
                let mut tp = 1.0;
                for (e, slot) in s.iter_mut().enumerate() {
                    *slot += tp;
                    if e < 3 {
                        r[e] += tp * v;
                    }
                    tp *= t;
                }
            }
            let a = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
            solve3(a, r).map(|c| c[0]).unwrap_or(values[k])
        })
        .collect()
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, slot) in out.iter_mut().enumerate() {
        let mut m = a;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        *slot = det(m) / d;
    }
    Some(out)
}

/// `n_g = n + w dn/dw` with central differences inside the grid and
/// second-order one-sided differences at the ends.
pub fn group_index(n: &[f64], freqs: &[f64], smoothing_half_width: Option<usize>) -> Result<GroupIndex, AnalysisError> {
    if n.len() < 3 {
        return Err(AnalysisError::Invalid(format!("group index needs at least 3 points, got {}", n.len())));
    }
    if n.len() != freqs.len() {
        return Err(AnalysisError::GridMismatch(format!("{} indices vs {} frequencies", n.len(), freqs.len())));
    }
    check_grid(freqs).map_err(|e| AnalysisError::GridMismatch(e.to_string()))?;
    let smoothed;
    let n_used = match smoothing_half_width {
        Some(h) if h > 0 => {
            smoothed = smooth_quadratic(n, h);
            &smoothed[..]
        }
        _ => n,
    };
    let len = n.len();
    let h = TWO_PI * (freqs[len - 1] - freqs[0]) / (len - 1) as f64;
    let mut dn = vec![0.0; len];
    dn[0] = (-3.0 * n_used[0] + 4.0 * n_used[1] - n_used[2]) / (2.0 * h);
    dn[len - 1] = (3.0 * n_used[len - 1] - 4.0 * n_used[len - 2] + n_used[len - 3]) / (2.0 * h);
    for k in 1..len - 1 {
        dn[k] = (n_used[k + 1] - n_used[k - 1]) / (2.0 * h);
    }
    let n_g = (0..len).map(|k| n_used[k] + TWO_PI * freqs[k] * dn[k]).collect();
    Ok(GroupIndex { n_g, dn_domega: dn })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandgapReport {
    pub f_low: f64,
    pub f_high: f64,
    pub f_center: f64,
    /// Passband level minus the lowest in-gap level.
    pub depth_db: f64,
    pub passband_db: f64,
    pub threshold_db: f64,
    pub polarization: Option<Polarization>,
}

impl BandgapReport {
    pub fn width(&self) -> f64 {
        self.f_high - self.f_low
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.f_low && f <= self.f_high
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NEG_INFINITY;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Longest contiguous run at least `threshold_db` below the median level.
pub fn detect_bandgap(t: &ComplexSpectrum, threshold_db: f64) -> Option<BandgapReport> {
    if t.len() < 2 {
        return None;
    }
    let db: Vec<f64> = t.values.iter().map(|v| 20.0 * v.norm().max(1e-300).log10()).collect();
    let passband = median(&db);
    let level = passband - threshold_db;
    let below: Vec<bool> = db.iter().map(|&x| x <= level).collect();

    let (mut best, mut run_start) = (None::<(usize, usize)>, None::<usize>);
    for k in 0..=below.len() {
        let inside = k < below.len() && below[k];
        match (inside, run_start) {
            (true, None) => run_start = Some(k),
            (false, Some(s)) => {
                if best.is_none_or(|(bs, be)| k - s > be - bs + 1) {
                    best = Some((s, k - 1));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    let (s, e) = best?;
    let f = &t.freqs;
    let cross = |a: usize, b: usize| {
        let (ya, yb) = (db[a], db[b]);
        if (yb - ya).abs() < f64::EPSILON {
            f[b]
        } else {
            f[a] + (level - ya) / (yb - ya) * (f[b] - f[a])
        }
    };
    let f_low = if s == 0 { f[0] } else { cross(s - 1, s) };
    let f_high = if e + 1 >= f.len() { f[f.len() - 1] } else { cross(e, e + 1) };
    if !(f_high > f_low) {
        return None;
    }
    let min_in_gap = db[s..=e].iter().copied().fold(f64::INFINITY, f64::min);
    Some(BandgapReport {
        f_low,
        f_high,
        f_center: 0.5 * (f_low + f_high),
        depth_db: passband - min_in_gap,
        passband_db: passband,
        threshold_db,
        polarization: t.meta.polarization,
    })
}

/// Passband median level minus the lowest level inside `[f_low, f_high]`, dB.
/// Defined whether or not a gap crosses the detection threshold.
pub fn band_attenuation(t: &ComplexSpectrum, f_low: f64, f_high: f64) -> Option<f64> {
    let db: Vec<f64> = t.values.iter().map(|v| 20.0 * v.norm().max(1e-300).log10()).collect();
    let lowest = t
        .freqs
        .iter()
        .zip(&db)
        .filter(|(f, _)| **f >= f_low && **f <= f_high)
        .map(|(_, x)| *x)
        .reduce(f64::min)?;
    Some(median(&db) - lowest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subluminal,
    Superluminal,
    Infinite,
    Negative,
}

impl Regime {
    pub fn classify(n_g: f64, zero_tol: f64) -> Option<Self> {
        if !n_g.is_finite() {
            None
        } else if n_g >= 1.0 {
            Some(Regime::Subluminal)
        } else if n_g.abs() <= zero_tol {
            Some(Regime::Infinite)
        } else if n_g > 0.0 {
            Some(Regime::Superluminal)
        } else {
            Some(Regime::Negative)
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Regime::Subluminal => "subluminal",
            Regime::Superluminal => "superluminal",
            Regime::Infinite => "infinite",
            Regime::Negative => "negative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Regime::Subluminal, Regime::Superluminal, Regime::Infinite, Regime::Negative].into_iter().find(|r| r.label() == s)
    }

    /// Faster than light in the group sense (`n_g < 1`).
    pub fn is_superluminal(&self) -> bool {
        !matches!(self, Regime::Subluminal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeSegment {
    pub f_start: f64,
    pub f_end: f64,
    /// Index range `[first, last]` into the frequency grid.
    pub first: usize,
    pub last: usize,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSegments {
    pub zero_tol: f64,
    pub segments: Vec<RegimeSegment>,
}

pub fn classify_regimes(n_g: &[f64], freqs: &[f64], zero_tol: f64) -> RegimeSegments {
    let mut segments: Vec<RegimeSegment> = Vec::new();
    let mut last_defined: Option<usize> = None;
    for (k, (&g, &f)) in n_g.iter().zip(freqs).enumerate() {
        let Some(regime) = Regime::classify(g, zero_tol) else {
            continue;
        };
        match segments.last_mut() {
            Some(seg) if seg.regime == regime && last_defined == Some(k.wrapping_sub(1)) => {
                seg.last = k;
                seg.f_end = f;
            }
            _ => segments.push(RegimeSegment { f_start: f, f_end: f, first: k, last: k, regime }),
        }
        last_defined = Some(k);
    }
    RegimeSegments { zero_tol, segments }
}

/// Widest contiguous run with `n_g < 1` whose points lie inside `[f_low, f_high]`,
/// measured as point count times grid step.
pub fn superluminal_run_within(n_g: &[f64], freqs: &[f64], f_low: f64, f_high: f64) -> f64 {
    if freqs.len() < 2 {
        return 0.0;
    }
    let step = (freqs[freqs.len() - 1] - freqs[0]) / (freqs.len() - 1) as f64;
    let (mut best, mut run) = (0usize, 0usize);
    for (&g, &f) in n_g.iter().zip(freqs) {
        if f >= f_low && f <= f_high && g < 1.0 {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best as f64 * step
}

/// Total bandwidth with `n_g < 1`, point count times grid step.
pub fn superluminal_bandwidth(n_g: &[f64], freqs: &[f64]) -> f64 {
    if freqs.len() < 2 {
        return 0.0;
    }
    let step = (freqs[freqs.len() - 1] - freqs[0]) / (freqs.len() - 1) as f64;
    n_g.iter().filter(|g| **g < 1.0).count() as f64 * step
}

/// Per-spectrum dispersion extracted from an unwrapped phase delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionResult {
    pub freqs: Vec<f64>,
    pub delta_phi: Vec<f64>,
    pub n: Vec<f64>,
    pub n_g: Vec<f64>,
    pub dn_domega: Vec<f64>,
    /// 2 pi slip count added to this spectrum by the cross-layer correction.
    pub m_correction: i64,
    pub thickness: f64,
    pub c: f64,
    pub layers: Option<usize>,
    pub polarization: Option<Polarization>,
    pub smoothing_half_width: Option<usize>,
}

impl DispersionResult {
    /// Build from an unwrapped phase delay (already including any 2 pi m).
    pub fn from_phase(
        freqs: &[f64],
        delta_phi: Vec<f64>,
        thickness: f64,
        m_correction: i64,
        smoothing_half_width: Option<usize>,
    ) -> Result<Self, AnalysisError> {
        let n = phase_to_index(&delta_phi, thickness, freqs)?;
        let GroupIndex { n_g, dn_domega } = group_index(&n, freqs, smoothing_half_width)?;
        Ok(Self {
            freqs: freqs.to_vec(),
            delta_phi,
            n,
            n_g,
            dn_domega,
            m_correction,
            thickness,
            c: C0,
            layers: None,
            polarization: None,
            smoothing_half_width,
        })
    }

    pub fn regimes(&self, zero_tol: f64) -> Vec<Option<Regime>> {
        self.n_g.iter().map(|&g| Regime::classify(g, zero_tol)).collect()
    }
}

/// Unwrapped phase delay of a normalized spectrum plus a whole number of turns.
pub fn phase_delay(t: &ComplexSpectrum, m_correction: i64) -> Vec<f64> {
    unwrap_freq(&t.phases()).into_iter().map(|p| p + TWO_PI * m_correction as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarFromGapCheck {
    pub passed: bool,
    /// Largest `|w dn/dw|` outside the widened gap.
    pub max_abs: f64,
    pub worst_freq: Option<f64>,
    pub margin: f64,
    pub limit: f64,
}

/// Dispersion must vanish away from the gap: `max |w dn/dw| < limit` outside
/// `[f_low - margin, f_high + margin]`.
pub fn check_far_from_gap(result: &DispersionResult, gap: &BandgapReport, margin: f64, limit: f64) -> FarFromGapCheck {
    let (lo, hi) = (gap.f_low - margin, gap.f_high + margin);
    let mut max_abs = 0.0f64;
    let mut worst_freq = None;
    for (&f, &dn) in result.freqs.iter().zip(&result.dn_domega) {
        if f >= lo && f <= hi {
            continue;
        }
        let v = (TWO_PI * f * dn).abs();
        if !v.is_finite() || v > max_abs {
            max_abs = if v.is_finite() { v } else { f64::INFINITY };
            worst_freq = Some(f);
        }
    }
    FarFromGapCheck { passed: max_abs < limit, max_abs, worst_freq, margin, limit }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabRunFit {
    pub thickness: f64,
    /// `d(dphi)/dw` in s.
    pub slope: f64,
    pub intercept: f64,
    pub index: f64,
    pub rms_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabFit {
    /// Thickness-weighted mean index.
    pub index: f64,
    pub runs: Vec<SlabRunFit>,
}

/// Fit `dphi(w)` of each slab with a straight line and convert the slope to an
/// index through `n = 1 + c slope / d`.
pub fn fit_slab_index(runs: &[(f64, ComplexSpectrum)]) -> Result<SlabFit, AnalysisError> {
    let mut thicknesses: Vec<f64> = runs.iter().map(|(d, _)| *d).collect();
    if let Some(d) = thicknesses.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(AnalysisError::Invalid(format!("slab thickness must be positive, got {d}")));
    }
    thicknesses.sort_by(|a, b| a.total_cmp(b));
    thicknesses.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(b.abs()));
    if thicknesses.len() < 2 {
        return Err(AnalysisError::Invalid("slab fit needs at least two distinct thicknesses".into()));
    }
    let mut fits = Vec::with_capacity(runs.len());
    for (d, t) in runs {
        if t.len() < 2 {
            return Err(AnalysisError::Invalid("slab spectrum needs at least two points".into()));
        }
        let phi = unwrap_freq(&t.phases());
        let w: Vec<f64> = t.freqs.iter().map(|f| TWO_PI * f).collect();
        let (slope, intercept) = linear_fit(&w, &phi);
        let rms = (w.iter().zip(&phi).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        fits.push(SlabRunFit { thickness: *d, slope, intercept, index: 1.0 + C0 * slope / d, rms_residual: rms });
    }
    let total: f64 = fits.iter().map(|r| r.thickness).sum();
    let index = fits.iter().map(|r| r.thickness * r.index).sum::<f64>() / total;
    Ok(SlabFit { index, runs: fits })
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Multiply every value by a unit phasor (used by invariance checks).
pub fn rotate(t: &ComplexSpectrum, angle: f64) -> ComplexSpectrum {
    let ph = Complex64::from_polar(1.0, angle);
    ComplexSpectrum { freqs: t.freqs.clone(), values: t.values.iter().map(|v| v * ph).collect(), meta: t.meta.clone() }
}
