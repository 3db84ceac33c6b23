use num_complex::Complex64;
use pbg_core::analysis::{group_index, phase_to_index};
use pbg_core::{SweepSpec, C0};
use std::f64::consts::PI;

const STRENGTH: f64 = 0.02;

/// Single Lorentz oscillator, fields varying as exp(-iwt).
fn permittivity(w: f64, w0: f64, gamma: f64) -> (Complex64, Complex64) {
    let den = Complex64::new(w0 * w0 - w * w, -gamma * w);
    let eps = 1.0 + STRENGTH * w0 * w0 / den;
    let deps = STRENGTH * w0 * w0 * Complex64::new(2.0 * w, gamma) / (den * den);
    (eps, deps)
}

/// `(n, n_g)` from the closed-form derivative of `sqrt(eps)`.
fn closed_form(w: f64, w0: f64, gamma: f64) -> (f64, f64) {
    let (eps, deps) = permittivity(w, w0, gamma);
    let root = eps.sqrt();
    let dn = (deps / (2.0 * root)).re;
    (root.re, root.re + w * dn)
}

#[test]
fn lorentz_group_index_matches_closed_form() {
    let sweep = SweepSpec::default();
    let freqs = sweep.freqs();
    let w0 = 2.0 * PI * 11e9;
    let gamma = 2.0 * PI * 200e6;
    let thickness = 0.2;
    let delta_phi: Vec<f64> = freqs
        .iter()
        .map(|f| {
            let w = 2.0 * PI * f;
            w * thickness * (closed_form(w, w0, gamma).0 - 1.0) / C0
        })
        .collect();
    let n = phase_to_index(&delta_phi, thickness, &freqs).unwrap();
    let g = group_index(&n, &freqs, None).unwrap();
    let mut checked = 0;
    for (k, f) in freqs.iter().enumerate() {
        let w = 2.0 * PI * f;
        if (w - w0).abs() < 5.0 * gamma {
            continue;
        }
        let (n_exact, ng_exact) = closed_form(w, w0, gamma);
        assert!((n[k] - n_exact).abs() < 1e-12, "{f:e} Hz: n {} vs {n_exact}", n[k]);
        let rel = (g.n_g[k] - ng_exact).abs() / ng_exact.abs();
        assert!(rel < 1e-3, "{f:e} Hz: n_g {} vs {ng_exact} ({rel})", g.n_g[k]);
        checked += 1;
    }
    assert!(checked > 250);
}

#[test]
fn closed_form_agrees_with_fine_differences() {
    // the oracle itself against a fine central difference
    let (w0, gamma) = (2.0 * PI * 11e9, 2.0 * PI * 200e6);
    for f in [8.5e9, 10.0e9, 12.2e9, 13.9e9] {
        let w = 2.0 * PI * f;
        let h = w * 1e-6;
        let dn = (closed_form(w + h, w0, gamma).0 - closed_form(w - h, w0, gamma).0) / (2.0 * h);
        let (n, ng) = closed_form(w, w0, gamma);
        assert!((n + w * dn - ng).abs() < 1e-7);
    }
}
