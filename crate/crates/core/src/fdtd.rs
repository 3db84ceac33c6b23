//! Two-dimensional Yee-grid time-domain solver for plane-wave transmission
//! through a rasterized crystal.
//!
//! The domain is periodic along y and terminated by CPML layers at both ends
//! of the propagation axis. A soft line source spanning the whole period
//! launches a Gaussian-modulated sinusoid; the transverse average of the
//! field on a probe line past the crystal is Fourier-accumulated at every
//! sweep frequency while the simulation runs.
//!
//! Both polarizations share one kernel. The scalar field `u` lives at cell
//! centres and the pair `(p, q)` on the y- and x-faces:
//!
//! * TE (E along the rods): `u = Ez`, `p = -eta0 Hx`, `q = eta0 Hy`
//! * TM (H along the rods): `u = eta0 Hz`, `p = Ex`, `q = -Ey`
//!
//! with updates `p += cp dy(u)`, `q += cq dx(u)`, `u += cu (dx(q) + dy(p))`.
//!
//! Phase convention: fields evolve as `exp(-i w t)` and spectra are
//! accumulated with the kernel `exp(+i w t)`, so extra optical path shows up
//! as a positive phase of the sample/reference ratio.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

use crate::geometry::PermittivityGrid;
use crate::spectrum::{ComplexSpectrum, RunKind, SpectrumMeta};

pub const C0: f64 = 299_792_458.0;

/// Human-readable phase convention recorded in spectrum metadata.
pub const PHASE_CONVENTION: &str = "exp(-iwt) fields, exp(+iwt) transform; phase delay positive";

const ENERGY_INTERVAL: usize = 25;
const PHASOR_RESYNC: usize = 4096;
const BLOWUP_FACTOR: f64 = 1e6;
/// Polynomial grading order of the CPML conductivity.
const PML_ORDER: i32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FdtdError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error(
        "numerical instability at step {step}: field {field:.3e} exceeds {limit:.1e} x source amplitude \
         (courant_factor = {courant}, limit 1/sqrt(2); pml_cells = {pml_cells})"
    )]
    Unstable { step: usize, field: f64, limit: f64, courant: f64, pml_cells: usize },
}

/// TE has E perpendicular to the plane of periodicity
/// (along the rods), TM has E in that plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Polarization {
    TE,
    TM,
}

impl Polarization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Polarization::TE => "TE",
            Polarization::TM => "TM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TE" => Some(Polarization::TE),
            "TM" => Some(Polarization::TM),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub f_start: f64,
    pub f_stop: f64,
    pub f_step: f64,
}

impl Default for SweepSpec {
    /// 8-14 GHz in 15 MHz steps (401 points).
    fn default() -> Self {
        Self { f_start: 8e9, f_stop: 14e9, f_step: 15e6 }
    }
}

impl SweepSpec {
    pub fn new(f_start: f64, f_stop: f64, f_step: f64) -> Result<Self, FdtdError> {
        let s = Self { f_start, f_stop, f_step };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), FdtdError> {
        if !(self.f_start.is_finite() && self.f_stop.is_finite() && self.f_step.is_finite()) {
            return Err(FdtdError::Config("sweep parameters must be finite".into()));
        }
        if !(self.f_start < self.f_stop) {
            return Err(FdtdError::Config(format!("sweep start {} must be below stop {}", self.f_start, self.f_stop)));
        }
        if !(self.f_step > 0.0) {
            return Err(FdtdError::Config(format!("sweep step must be positive, got {}", self.f_step)));
        }
        Ok(())
    }

    pub fn points(&self) -> usize {
        ((self.f_stop - self.f_start) / self.f_step).round() as usize + 1
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..self.points()).map(|k| self.f_start + k as f64 * self.f_step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RunLength {
    /// Run until the domain energy falls below `energy_threshold` of its peak.
    Auto { max_steps: usize },
    Steps(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Nominal cell size; crystal grids refine it to close the transverse period.
    pub cell_size: f64,
    pub courant_factor: f64,
    pub pml_cells: usize,
    pub source_center_freq: f64,
    /// Full width of the source spectrum at -20 dB.
    pub source_bandwidth: f64,
    /// Source-to-slot distance.
    pub front_gap: f64,
    /// Slot-exit-to-probe distance.
    pub probe_offset: f64,
    /// Probe-to-PML distance.
    pub back_gap: f64,
    /// Length reserved for the structure; `None` uses the grid length.
    pub slot_length: Option<f64>,
    pub run_length: RunLength,
    pub energy_threshold: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cell_size: 0.25e-3,
            courant_factor: 0.99 / SQRT_2,
            pml_cells: 12,
            source_center_freq: 11e9,
            source_bandwidth: 10e9,
            front_gap: 20e-3,
            probe_offset: 30e-3,
            back_gap: 10e-3,
            slot_length: None,
            run_length: RunLength::Auto { max_steps: 400_000 },
            energy_threshold: 1e-6,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), FdtdError> {
        let mut problems = Vec::new();
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            problems.push(format!("cell_size must be positive, got {}", self.cell_size));
        }
        if !(self.courant_factor > 0.0 && self.courant_factor < 1.0 / SQRT_2) {
            problems.push(format!("courant_factor {} must lie in (0, 1/sqrt(2)) for 2D stability", self.courant_factor));
        }
        if self.pml_cells < 8 {
            problems.push(format!("pml_cells {} is below the minimum of 8", self.pml_cells));
        }
        if !(self.source_center_freq > 0.0 && self.source_bandwidth > 0.0) {
            problems.push("source centre frequency and bandwidth must be positive".to_string());
        }
        for (name, v) in [("front_gap", self.front_gap), ("probe_offset", self.probe_offset), ("back_gap", self.back_gap)] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be non-negative, got {v}"));
            }
        }
        if let Some(s) = self.slot_length {
            if !(s >= 0.0 && s.is_finite()) {
                problems.push(format!("slot_length must be non-negative, got {s}"));
            }
        }
        if !(self.energy_threshold > 0.0 && self.energy_threshold < 1.0) {
            problems.push(format!("energy_threshold must be in (0, 1), got {}", self.energy_threshold));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FdtdError::Config(problems.join("; ")))
        }
    }

    /// Gaussian envelope standard deviation in time.
    pub fn source_sigma_t(&self) -> f64 {
        // amplitude spectrum exp(-(2 pi df sigma)^2 / 2) reaches 0.1 at df = bandwidth / 2
        (2.0 * 10f64.ln()).sqrt() / (PI * self.source_bandwidth)
    }

    pub fn source_delay(&self) -> f64 {
        6.0 * self.source_sigma_t()
    }

    /// Source amplitude spectrum at `f`, relative to its peak.
    pub fn source_relative_amplitude(&self, f: f64) -> f64 {
        let s = self.source_sigma_t();
        (-(2.0 * PI * (f - self.source_center_freq) * s).powi(2) / 2.0).exp()
    }

    pub fn check_sweep(&self, sweep: &SweepSpec) -> Result<(), FdtdError> {
        sweep.validate()?;
        for f in [sweep.f_start, sweep.f_stop] {
            if self.source_relative_amplitude(f) < 0.1 {
                return Err(FdtdError::Config(format!(
                    "sweep frequency {f:e} Hz lies outside the -20 dB source band ({:e} +/- {:e} Hz)",
                    self.source_center_freq,
                    self.source_bandwidth / 2.0
                )));
            }
        }
        Ok(())
    }
}

/// Transverse shape of the computational domain; everything a reference run
/// needs to match its crystal run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainDims {
    pub ny: usize,
    pub cell_size: f64,
    pub slot_length: f64,
}

impl DomainDims {
    pub fn of_grid(grid: &PermittivityGrid, cfg: &SimConfig) -> Self {
        Self { ny: grid.ny, cell_size: grid.cell_size, slot_length: cfg.slot_length.unwrap_or(grid.length()) }
    }
}

/// Column indices of the domain features along x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainLayout {
    pub nx: usize,
    pub ny: usize,
    pub cell_size: f64,
    pub dt: f64,
    pub pml: usize,
    pub source: usize,
    pub slot_start: usize,
    pub slot_cells: usize,
    pub probe: usize,
}

impl DomainLayout {
    pub fn new(dims: &DomainDims, cfg: &SimConfig) -> Self {
        let dx = dims.cell_size;
        let cells = |len: f64| (len / dx).round() as usize;
        let pml = cfg.pml_cells;
        let source = pml + 4;
        let slot_start = source + cells(cfg.front_gap).max(1);
        let slot_cells = (dims.slot_length / dx - 1e-9).ceil().max(0.0) as usize;
        let probe = slot_start + slot_cells + cells(cfg.probe_offset).max(1);
        let nx = probe + cells(cfg.back_gap).max(2) + pml;
        Self { nx, ny: dims.ny, cell_size: dx, dt: cfg.courant_factor * dx / C0, pml, source, slot_start, slot_cells, probe }
    }
}

/// Leapfrog field state and running-DFT accumulators.
pub struct SimState {
    layout: DomainLayout,
    courant: f64,
    u: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    cu: Vec<f64>,
    cp: Vec<f64>,
    cq: Vec<f64>,
    // CPML memory for the x-derivatives, one row of ny per PML column
    psi_u: Vec<f64>,
    psi_q: Vec<f64>,
    pml_u: Vec<(f64, f64)>,
    pml_q: Vec<(f64, f64)>,
    pml_cols: Vec<Option<usize>>,
    omegas: Vec<f64>,
    phasors: Vec<Complex64>,
    rotators: Vec<Complex64>,
    probes: Vec<usize>,
    accumulators: Vec<Vec<Complex64>>,
    source_amplitude: f64,
    source_sigma: f64,
    source_delay: f64,
    source_omega: f64,
    step_index: usize,
}

/// Per-cell relative permittivity for the whole domain (vacuum outside the slot).
fn domain_permittivity(layout: &DomainLayout, grid: Option<&PermittivityGrid>) -> Vec<f64> {
    let (nx, ny) = (layout.nx, layout.ny);
    let mut eps = vec![1.0; nx * ny];
    if let Some(g) = grid {
        for i in 0..g.nx.min(layout.slot_cells) {
            let di = layout.slot_start + i;
            eps[di * ny..(di + 1) * ny].copy_from_slice(&g.eps[i * ny..(i + 1) * ny]);
        }
    }
    eps
}

impl SimState {
    /// Set up a state without validating `courant` (stability is only
    /// enforced by [`SimConfig::validate`]).
    pub fn new(
        layout: DomainLayout,
        eps: &[f64],
        pol: Polarization,
        courant: f64,
        sweep_freqs: &[f64],
        probes: Vec<usize>,
        cfg: &SimConfig,
    ) -> Self {
        let (nx, ny) = (layout.nx, layout.ny);
        assert_eq!(eps.len(), nx * ny);
        let s = courant;
        let n = nx * ny;
        let (mut cu, mut cp, mut cq) = (vec![s; n], vec![s; n], vec![s; n]);
        match pol {
            Polarization::TE => {
                for (c, e) in cu.iter_mut().zip(eps) {
                    *c = s / e;
                }
            }
            Polarization::TM => {
                // face permittivities by arithmetic mean of the adjacent cells
                for i in 0..nx {
                    for j in 0..ny {
                        let here = eps[i * ny + j];
                        let up = eps[i * ny + (j + 1) % ny];
                        cp[i * ny + j] = s / (0.5 * (here + up));
                        let right = if i + 1 < nx { eps[(i + 1) * ny + j] } else { here };
                        cq[i * ny + j] = s / (0.5 * (here + right));
                    }
                }
            }
        }

        let pml = layout.pml;
        let mut pml_cols = vec![None; nx];
        let mut pml_u = Vec::new();
        let mut pml_q = Vec::new();
        let alpha = 2.0 * PI * 0.5e9 * layout.dt;
        let sigma_max = 0.8 * (PML_ORDER as f64 + 1.0) * s;
        let coeffs = |depth: f64| {
            let depth = depth.clamp(0.0, 1.0);
            let sigma = sigma_max * depth.powi(PML_ORDER);
            let a = alpha * (1.0 - depth);
            let b = (-(sigma + a)).exp();
            let c = if sigma > 0.0 { sigma / (sigma + a) * (b - 1.0) } else { 0.0 };
            (b, c)
        };
        let right_edge = (nx - 1 - pml) as f64;
        for (i, slot) in pml_cols.iter_mut().enumerate() {
            let x = i as f64;
            if i < pml || i >= nx - pml {
                *slot = Some(pml_u.len());
                let depth = |x: f64| if x < pml as f64 { (pml as f64 - x) / pml as f64 } else { (x - right_edge) / pml as f64 };
                pml_u.push(coeffs(depth(x)));
                pml_q.push(coeffs(depth(x + 0.5)));
            }
        }
        let rows = pml_u.len();

        let dt = layout.dt;
        let omegas: Vec<f64> = sweep_freqs.iter().map(|f| 2.0 * PI * f).collect();
        let rotators = omegas.iter().map(|w| Complex64::from_polar(1.0, w * dt)).collect();
        let accumulators = vec![vec![Complex64::new(0.0, 0.0); omegas.len()]; probes.len()];
        Self {
            layout,
            courant,
            u: vec![0.0; n],
            p: vec![0.0; n],
            q: vec![0.0; n],
            cu,
            cp,
            cq,
            psi_u: vec![0.0; rows * ny],
            psi_q: vec![0.0; rows * ny],
            pml_u,
            pml_q,
            pml_cols,
            phasors: vec![Complex64::new(1.0, 0.0); omegas.len()],
            omegas,
            rotators,
            probes,
            accumulators,
            source_amplitude: 1.0,
            source_sigma: cfg.source_sigma_t(),
            source_delay: cfg.source_delay(),
            source_omega: 2.0 * PI * cfg.source_center_freq,
            step_index: 0,
        }
    }

    pub fn with_source_amplitude(mut self, amplitude: f64) -> Self {
        self.source_amplitude = amplitude;
        self
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn layout(&self) -> &DomainLayout {
        &self.layout
    }

    pub fn field(&self) -> &[f64] {
        &self.u
    }

    pub fn source_value(&self, step: usize) -> f64 {
        let t = step as f64 * self.layout.dt - self.source_delay;
        self.source_amplitude * (-(t / self.source_sigma).powi(2) / 2.0).exp() * (self.source_omega * t).sin()
    }

    pub fn source_active(&self) -> bool {
        (self.step_index as f64) * self.layout.dt < 2.0 * self.source_delay
    }

    /// Electromagnetic energy in normalized units (`eps |E|^2 + |eta0 H|^2` summed).
    pub fn energy(&self) -> f64 {
        let s = self.courant;
        let mut total = 0.0;
        for k in 0..self.u.len() {
            total += s / self.cu[k] * self.u[k] * self.u[k]
                + s / self.cp[k] * self.p[k] * self.p[k]
                + s / self.cq[k] * self.q[k] * self.q[k];
        }
        total
    }

    pub fn max_field(&self) -> f64 {
        self.u.iter().chain(&self.p).chain(&self.q).fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn probe_value(&self, column: usize) -> f64 {
        let ny = self.layout.ny;
        // fixed-order sum keeps runs bit-reproducible
        self.u[column * ny..(column + 1) * ny].iter().sum::<f64>() / ny as f64
    }

    /// Advance one leapfrog step: faces first, then the cell-centred field,
    /// then the soft source and the running transforms.
    pub fn step(&mut self) -> Result<(), FdtdError> {
        let DomainLayout { nx, ny, .. } = self.layout;

        for i in 0..nx {
            let row = i * ny;
            let pml = self.pml_cols[i];
            for j in 0..ny {
                let k = row + j;
                let up = if j + 1 < ny { k + 1 } else { row };
                self.p[k] += self.cp[k] * (self.u[up] - self.u[k]);
                let next = if i + 1 < nx { self.u[k + ny] } else { 0.0 };
                let mut dxu = next - self.u[k];
                if let Some(r) = pml {
                    let (b, c) = self.pml_q[r];
                    let psi = &mut self.psi_q[r * ny + j];
                    *psi = b * *psi + c * dxu;
                    dxu += *psi;
                }
                self.q[k] += self.cq[k] * dxu;
            }
        }

        for i in 0..nx {
            let row = i * ny;
            let pml = self.pml_cols[i];
            for j in 0..ny {
                let k = row + j;
                let down = if j > 0 { k - 1 } else { row + ny - 1 };
                let prev = if i > 0 { self.q[k - ny] } else { 0.0 };
                let mut dxq = self.q[k] - prev;
                if let Some(r) = pml {
                    let (b, c) = self.pml_u[r];
                    let psi = &mut self.psi_u[r * ny + j];
                    *psi = b * *psi + c * dxq;
                    dxq += *psi;
                }
                self.u[k] += self.cu[k] * (dxq + self.p[k] - self.p[down]);
            }
        }

        self.step_index += 1;
        let n = self.step_index;
        let src = self.source_value(n);
        if src != 0.0 {
            let row = self.layout.source * ny;
            for v in &mut self.u[row..row + ny] {
                *v += src;
            }
        }

        if n.is_multiple_of(PHASOR_RESYNC) {
            let t = n as f64 * self.layout.dt;
            for (ph, w) in self.phasors.iter_mut().zip(&self.omegas) {
                *ph = Complex64::from_polar(1.0, w * t);
            }
        } else {
            for (ph, r) in self.phasors.iter_mut().zip(&self.rotators) {
                *ph *= r;
            }
        }
        for (slot, &col) in self.probes.iter().enumerate() {
            let v = self.probe_value(col);
            if !v.is_finite() {
                return Err(self.unstable(f64::INFINITY));
            }
            for (acc, ph) in self.accumulators[slot].iter_mut().zip(&self.phasors) {
                *acc += ph * v;
            }
        }
        Ok(())
    }

    fn unstable(&self, field: f64) -> FdtdError {
        FdtdError::Unstable {
            step: self.step_index,
            field,
            limit: BLOWUP_FACTOR,
            courant: self.courant,
            pml_cells: self.layout.pml,
        }
    }

    /// Error out if any field is non-finite or has grown past the blow-up limit.
    pub fn check_stability(&self) -> Result<f64, FdtdError> {
        let m = self.max_field();
        if !m.is_finite() || m > BLOWUP_FACTOR * self.source_amplitude.abs().max(f64::MIN_POSITIVE) {
            return Err(self.unstable(m));
        }
        Ok(m)
    }

    /// Accumulated transforms per probe, scaled by `dt`.
    pub fn spectra(&self) -> Vec<Vec<Complex64>> {
        let dt = self.layout.dt;
        self.accumulators.iter().map(|acc| acc.iter().map(|v| v * dt).collect()).collect()
    }
}

/// Diagnostics of one time-domain run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub steps: usize,
    /// False when the run hit `max_steps` before the energy criterion.
    pub converged: bool,
    pub final_energy_ratio: f64,
    /// Largest field magnitude seen, in units of the source amplitude.
    pub peak_field: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub spectrum: ComplexSpectrum,
    pub diagnostics: RunDiagnostics,
}

/// Run to completion and return per-probe spectra.
pub fn run_probes(
    grid: Option<&PermittivityGrid>,
    dims: &DomainDims,
    pol: Polarization,
    sweep: &SweepSpec,
    cfg: &SimConfig,
    probes: &[usize],
) -> Result<(Vec<Vec<Complex64>>, RunDiagnostics, DomainLayout), FdtdError> {
    cfg.validate()?;
    cfg.check_sweep(sweep)?;
    let layout = DomainLayout::new(dims, cfg);
    if let Some(g) = grid {
        if g.ny != dims.ny || (g.cell_size - dims.cell_size).abs() > 1e-12 * dims.cell_size {
            return Err(FdtdError::Config("grid does not match the domain dimensions".into()));
        }
        if g.nx > layout.slot_cells {
            return Err(FdtdError::Config(format!(
                "structure of {} cells does not fit the {}-cell slot",
                g.nx, layout.slot_cells
            )));
        }
    }
    let probes: Vec<usize> = if probes.is_empty() { vec![layout.probe] } else { probes.to_vec() };
    if probes.iter().any(|&p| p <= layout.pml || p >= layout.nx - layout.pml) {
        return Err(FdtdError::Config("probe column inside the absorbing layer".into()));
    }
    let eps = domain_permittivity(&layout, grid);
    let mut state = SimState::new(layout, &eps, pol, cfg.courant_factor, &sweep.freqs(), probes, cfg);

    let max_steps = match cfg.run_length {
        RunLength::Auto { max_steps } => max_steps,
        RunLength::Steps(n) => n,
    };
    let auto = matches!(cfg.run_length, RunLength::Auto { .. });
    let mut peak_energy = 0.0f64;
    let mut peak_field = 0.0f64;
    let mut ratio = 1.0;
    let mut converged = !auto;
    while state.step_index() < max_steps {
        state.step()?;
        if state.step_index().is_multiple_of(ENERGY_INTERVAL) {
            peak_field = peak_field.max(state.check_stability()?);
            let e = state.energy();
            peak_energy = peak_energy.max(e);
            ratio = if peak_energy > 0.0 { e / peak_energy } else { 0.0 };
            if auto && !state.source_active() && ratio < cfg.energy_threshold {
                converged = true;
                break;
            }
        }
    }
    let diagnostics = RunDiagnostics { steps: state.step_index(), converged, final_energy_ratio: ratio, peak_field };
    Ok((state.spectra(), diagnostics, layout))
}

fn run_meta(kind: RunKind, pol: Polarization, layout: &DomainLayout, diag: &RunDiagnostics) -> SpectrumMeta {
    let mut meta = SpectrumMeta::new(kind);
    meta.polarization = Some(pol);
    let extra = &mut meta.extra;
    extra.insert("phase_convention".into(), PHASE_CONVENTION.into());
    extra.insert("cell_size".into(), format!("{:e}", layout.cell_size));
    extra.insert("nx".into(), layout.nx.to_string());
    extra.insert("ny".into(), layout.ny.to_string());
    extra.insert("dt".into(), format!("{:e}", layout.dt));
    extra.insert("steps".into(), diag.steps.to_string());
    extra.insert("converged".into(), diag.converged.to_string());
    meta
}

/// Raw probe spectrum behind `grid`.
pub fn run_transmission(grid: &PermittivityGrid, pol: Polarization, sweep: &SweepSpec, cfg: &SimConfig) -> Result<SimOutput, FdtdError> {
    let dims = DomainDims::of_grid(grid, cfg);
    let (spectra, diagnostics, layout) = run_probes(Some(grid), &dims, pol, sweep, cfg, &[])?;
    let mut meta = run_meta(RunKind::Raw, pol, &layout, &diagnostics);
    meta.thickness = Some(grid.thickness);
    let spectrum = ComplexSpectrum { freqs: sweep.freqs(), values: spectra.into_iter().next().unwrap_or_default(), meta };
    Ok(SimOutput { spectrum, diagnostics })
}

/// Vacuum run on the same domain as a crystal run: the normalization denominator.
pub fn run_reference(dims: &DomainDims, pol: Polarization, sweep: &SweepSpec, cfg: &SimConfig) -> Result<SimOutput, FdtdError> {
    let (spectra, diagnostics, layout) = run_probes(None, dims, pol, sweep, cfg, &[])?;
    let meta = run_meta(RunKind::Reference, pol, &layout, &diagnostics);
    let values = spectra.into_iter().next().unwrap_or_default();
    if let Some(k) = values.iter().position(|v| v.norm() == 0.0) {
        return Err(FdtdError::Config(format!("reference spectrum vanishes at {:e} Hz", sweep.freqs()[k])));
    }
    Ok(SimOutput { spectrum: ComplexSpectrum { freqs: sweep.freqs(), values, meta }, diagnostics })
}

#[derive(Serialize)]
struct ReferenceKey<'a> {
    dims: &'a DomainDims,
    pol: Polarization,
    sweep: &'a SweepSpec,
    cfg: &'a SimConfig,
}

/// Content hash identifying a reference run.
pub fn reference_key(dims: &DomainDims, pol: Polarization, sweep: &SweepSpec, cfg: &SimConfig) -> String {
    crate::io::config_hash(&ReferenceKey { dims, pol, sweep, cfg })
}

/// In-memory reference cache keyed by [`reference_key`].
#[derive(Default)]
pub struct ReferenceCache {
    entries: Mutex<HashMap<String, SimOutput>>,
    runs: AtomicUsize,
}

impl ReferenceCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of solver invocations made through this cache.
    pub fn invocations(&self) -> usize {
        self.runs.load(Ordering::SeqCst)
    }

    pub fn get_or_run(&self, dims: &DomainDims, pol: Polarization, sweep: &SweepSpec, cfg: &SimConfig) -> Result<SimOutput, FdtdError> {
        let key = reference_key(dims, pol, sweep, cfg);
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        self.runs.fetch_add(1, Ordering::SeqCst);
        let mut out = run_reference(dims, pol, sweep, cfg)?;
        out.spectrum.meta.extra.insert("config_hash".into(), key.clone());
        self.entries.lock().unwrap().entry(key).or_insert(out.clone());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        SimConfig { cell_size: 0.5e-3, front_gap: 5e-3, probe_offset: 5e-3, back_gap: 5e-3, ..SimConfig::default() }
    }

    #[test]
    fn default_sweep_has_401_points() {
        let s = SweepSpec::default();
        assert_eq!(s.points(), 401);
        assert!((s.freqs()[400] - 14e9).abs() < 1.0);
        assert!(SweepSpec::new(14e9, 8e9, 15e6).is_err());
        assert!(SweepSpec::new(8e9, 14e9, 0.0).is_err());
    }

    #[test]
    fn source_covers_6_to_16_ghz() {
        let cfg = SimConfig::default();
        assert!((cfg.source_relative_amplitude(6e9) - 0.1).abs() < 1e-9);
        assert!((cfg.source_relative_amplitude(16e9) - 0.1).abs() < 1e-9);
        assert!(cfg.check_sweep(&SweepSpec::default()).is_ok());
        assert!(cfg.check_sweep(&SweepSpec { f_start: 2e9, f_stop: 14e9, f_step: 1e8 }).is_err());
    }

    #[test]
    fn config_validation_lists_problems() {
        let cfg = SimConfig { courant_factor: 0.8, pml_cells: 4, ..SimConfig::default() };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("courant_factor") && err.contains("pml_cells"), "{err}");
    }

    #[test]
    fn zero_source_keeps_zero_fields() {
        let cfg = small_cfg();
        let dims = DomainDims { ny: 3, cell_size: cfg.cell_size, slot_length: 5e-3 };
        let layout = DomainLayout::new(&dims, &cfg);
        let eps = vec![1.0; layout.nx * layout.ny];
        let mut st = SimState::new(layout, &eps, Polarization::TM, cfg.courant_factor, &[1e10], vec![layout.probe], &cfg)
            .with_source_amplitude(0.0);
        for _ in 0..200 {
            st.step().unwrap();
        }
        assert!(st.field().iter().all(|&v| v == 0.0));
        assert_eq!(st.energy(), 0.0);
    }

    #[test]
    fn super_courant_step_is_reported_unstable() {
        let cfg = small_cfg();
        let dims = DomainDims { ny: 4, cell_size: cfg.cell_size, slot_length: 5e-3 };
        let layout = DomainLayout::new(&dims, &cfg);
        let eps = vec![1.0; layout.nx * layout.ny];
        let mut st = SimState::new(layout, &eps, Polarization::TE, 1.2, &[1e10], vec![layout.probe], &cfg);
        let mut failure = None;
        for _ in 0..5000 {
            if let Err(e) = st.step().and_then(|_| st.check_stability().map(|_| ())) {
                failure = Some(e);
                break;
            }
        }
        let msg = failure.expect("blow-up not detected").to_string();
        assert!(msg.contains("courant_factor = 1.2"), "{msg}");
    }

    #[test]
    fn energy_decays_after_source_in_vacuum() {
        let cfg = small_cfg();
        let dims = DomainDims { ny: 2, cell_size: cfg.cell_size, slot_length: 10e-3 };
        let layout = DomainLayout::new(&dims, &cfg);
        let eps = vec![1.0; layout.nx * layout.ny];
        let mut st = SimState::new(layout, &eps, Polarization::TE, cfg.courant_factor, &[1e10], vec![layout.probe], &cfg);
        let mut start = 0.0f64;
        while st.source_active() {
            st.step().unwrap();
            start = start.max(st.energy());
        }
        let mut last = st.energy();
        for _ in 0..40 {
            for _ in 0..10 {
                st.step().unwrap();
            }
            let e = st.energy();
            // the staggered-time energy is only approximately conserved
            assert!(e <= last + 1e-9 * start, "energy rose from {last} to {e}");
            last = e;
        }
        assert!(last < 1e-6 * start, "residual {} of {start}", last);
    }
}
