use num_complex::Complex64;
use pbg_core::analysis::normalize;
use pbg_core::fdtd::{run_probes, run_reference, run_transmission, DomainDims, RunLength, C0};
use pbg_core::geometry::rasterize;
use pbg_core::{CrystalSpec, PermittivityGrid, Polarization, SimConfig, SweepSpec};
use std::f64::consts::PI;

/// Characteristic-matrix transmission of a homogeneous layer between vacuum
/// half-spaces, referred to the same length of vacuum.
fn layer_transmission(index: f64, thickness: f64, f: f64) -> Complex64 {
    let k0 = 2.0 * PI * f / C0;
    let delta = index * k0 * thickness;
    let (c, s) = (delta.cos(), delta.sin());
    let i = Complex64::i();
    // [[m11, m12], [m21, m22]] for normal incidence, admittances relative to vacuum,
    // fields varying as exp(-iwt)
    let m11 = Complex64::new(c, 0.0);
    let m12 = -i * s / index;
    let m21 = -i * s * index;
    let m22 = Complex64::new(c, 0.0);
    let t = 2.0 / (m11 + m12 + m21 + m22);
    t * (-i * k0 * thickness).exp()
}

#[test]
fn transfer_matrix_oracle_sanity() {
    // index 1 is free space; a half-wave layer is transparent
    assert!((layer_transmission(1.0, 0.05, 9e9) - 1.0).norm() < 1e-12);
    let f = 10e9;
    let d = C0 / (2.0 * 1.61 * f);
    assert!((layer_transmission(1.61, d, f).norm() - 1.0).abs() < 1e-12);
}

#[test]
fn slab_matches_transfer_matrix() {
    let sweep = SweepSpec::default();
    let cfg = SimConfig::default();
    let (index, thickness) = (1.61, 0.05);
    for pol in [Polarization::TE, Polarization::TM] {
        let grid = PermittivityGrid::slab(thickness, index, cfg.cell_size);
        let raw = run_transmission(&grid, pol, &sweep, &cfg).unwrap();
        let reference = run_reference(&DomainDims::of_grid(&grid, &cfg), pol, &sweep, &cfg).unwrap();
        let t = normalize(&raw.spectrum, &reference.spectrum).unwrap();
        assert_eq!(t.len(), 401);
        for (f, v) in t.freqs.iter().zip(&t.values) {
            let oracle = layer_transmission(index, thickness, *f);
            let mag = (v.norm() - oracle.norm()).abs() / oracle.norm();
            let phase = (v / oracle).arg().to_degrees().abs();
            assert!(mag < 0.02, "{pol:?} {f:e} Hz: magnitude error {mag}");
            assert!(phase < 2.0, "{pol:?} {f:e} Hz: phase error {phase} deg");
        }
    }
}

#[test]
fn empty_slot_matches_reference() {
    let sweep = SweepSpec::default();
    let cfg = SimConfig { front_gap: 10e-3, probe_offset: 10e-3, ..SimConfig::default() };
    let grid = PermittivityGrid::vacuum(40, 4, cfg.cell_size);
    let raw = run_transmission(&grid, Polarization::TM, &sweep, &cfg).unwrap();
    let reference = run_reference(&DomainDims::of_grid(&grid, &cfg), Polarization::TM, &sweep, &cfg).unwrap();
    for (a, b) in raw.spectrum.values.iter().zip(&reference.spectrum.values) {
        assert!((a - b).norm() <= 0.01 * b.norm());
    }
}

#[test]
fn free_space_phase_accumulates_with_distance() {
    let sweep = SweepSpec::default();
    let cfg = SimConfig { probe_offset: 40e-3, ..SimConfig::default() };
    let dims = DomainDims { ny: 2, cell_size: cfg.cell_size, slot_length: 0.0 };
    for pol in [Polarization::TE, Polarization::TM] {
        let layout = pbg_core::fdtd::DomainLayout::new(&dims, &cfg);
        let near = layout.slot_start + 4;
        let far = near + 120;
        let length = 120.0 * cfg.cell_size;
        let (spectra, _, _) = run_probes(None, &dims, pol, &sweep, &cfg, &[near, far]).unwrap();
        for (k, f) in sweep.freqs().iter().enumerate() {
            let ratio = spectra[1][k] / spectra[0][k];
            let expected = 2.0 * PI * f * length / C0;
            let err = (ratio * Complex64::from_polar(1.0, -expected)).arg().to_degrees().abs();
            assert!(err < 1.0, "{pol:?} {f:e} Hz: {err} deg");
        }
    }
}

#[test]
fn crystal_transmission_is_passive_and_repeatable() {
    let sweep = SweepSpec::default();
    let cfg = SimConfig::default();
    let spec = CrystalSpec::tube_for_aff(0.60, 6.35e-3, 1.61, 3).unwrap();
    let grid = rasterize(&spec, cfg.cell_size).unwrap();
    let dims = DomainDims::of_grid(&grid, &cfg);
    for pol in [Polarization::TE, Polarization::TM] {
        let a = run_transmission(&grid, pol, &sweep, &cfg).unwrap();
        let b = run_transmission(&grid, pol, &sweep, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.diagnostics.converged);
        let reference = run_reference(&dims, pol, &sweep, &cfg).unwrap();
        let t = normalize(&a.spectrum, &reference.spectrum).unwrap();
        let worst = t.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(worst <= 1.02, "{pol:?}: |t| reaches {worst}");
    }
}

#[test]
fn truncated_run_is_flagged() {
    let sweep = SweepSpec::default();
    let cfg = SimConfig { run_length: RunLength::Auto { max_steps: 500 }, ..SimConfig::default() };
    let grid = PermittivityGrid::slab(0.01, 1.61, cfg.cell_size);
    let out = run_transmission(&grid, Polarization::TE, &sweep, &cfg).unwrap();
    assert!(!out.diagnostics.converged);
    assert_eq!(out.diagnostics.steps, 500);
    assert_eq!(out.spectrum.meta.extra["converged"], "false");
}
