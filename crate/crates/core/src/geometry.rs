//! Hexagonal (triangular) rod-lattice crystals and their rasterization onto a
//! uniform permittivity grid.
//!
//! Propagation is along +x. The transverse (y) direction is periodic with one
//! rod per row per period, so a single supercell column describes a crystal of
//! infinite width. Rows are numbered from the entry face; row `k` sits at
//! `x = k * layer_spacing` and is shifted by half a transverse period when `k`
//! is odd.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Default grid budget: 64 M cells (~0.5 GB of `f64` permittivity).
pub const DEFAULT_MAX_CELLS: usize = 64 * 1024 * 1024;

/// Number of sub-samples per axis used to smooth boundary cells (4 x 4 = 16).
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("air-filling fraction {aff} is outside the reachable range [{min}, {max})")]
    AffOutOfRange { aff: f64, min: f64, max: f64 },
    #[error("invalid crystal: {0}")]
    InvalidSpec(String),
    #[error("cell size {cell_size} m does not resolve rods of radius {radius} m (need <= R/8)")]
    UnderResolved { cell_size: f64, radius: f64 },
    #[error("grid of {cells} cells exceeds the budget of {budget} cells")]
    Resource { cells: usize, budget: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub enum Orientation {
    /// Propagation perpendicular to the close-packed rows.
    GammaM,
    /// Propagation along the close-packed rows.
    GammaK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
pub enum RodModel {
    Solid,
    /// Hollow rods that touch their neighbours (`a = 2R`).
    Tube,
}

/// Geometric and material description of a finite stack of rod rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrystalSpec {
    pub outer_radius: f64,
    /// Zero for solid rods.
    pub inner_radius: f64,
    pub lattice_constant: f64,
    pub rod_index: f64,
    pub layers: usize,
    pub orientation: Orientation,
    pub rod_model: RodModel,
}

/// `pi / (2 sqrt 3)`: area fraction of touching circles in a triangular lattice.
pub fn touching_fill_fraction() -> f64 {
    PI / (2.0 * 3f64.sqrt())
}

/// Smallest air-filling fraction reachable by a triangular lattice of
/// non-overlapping rods (the interstitial air between touching solid rods).
pub fn interstitial_aff() -> f64 {
    1.0 - touching_fill_fraction()
}

fn unit_cell_area(a: f64) -> f64 {
    0.5 * 3f64.sqrt() * a * a
}

impl CrystalSpec {
    /// Touching hollow rods of outer radius `outer_radius` with the wall
    /// thickness chosen to reach `aff`.
    pub fn tube_for_aff(aff: f64, outer_radius: f64, rod_index: f64, layers: usize) -> Result<Self, GeometryError> {
        let inner = tube_inner_radius_for_aff(aff, outer_radius)?;
        let spec = Self {
            outer_radius,
            inner_radius: inner,
            lattice_constant: 2.0 * outer_radius,
            rod_index,
            layers,
            orientation: Orientation::GammaM,
            rod_model: RodModel::Tube,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Non-touching solid rods on a lattice of constant `lattice_constant`.
    pub fn solid_for_aff(aff: f64, lattice_constant: f64, rod_index: f64, layers: usize) -> Result<Self, GeometryError> {
        let radius = solid_rod_radius_for_aff(aff, lattice_constant)?;
        let spec = Self {
            outer_radius: radius,
            inner_radius: 0.0,
            lattice_constant,
            rod_index,
            layers,
            orientation: Orientation::GammaM,
            rod_model: RodModel::Solid,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let mut problems = Vec::new();
        let (r, big_r, a) = (self.inner_radius, self.outer_radius, self.lattice_constant);
        if !(r.is_finite() && big_r.is_finite() && a.is_finite() && self.rod_index.is_finite()) {
            problems.push("non-finite parameter".to_string());
        }
        if !(0.0 <= r && r < big_r) && !(big_r == 0.0 && r == 0.0) {
            problems.push(format!("need 0 <= inner_radius ({r}) < outer_radius ({big_r})"));
        }
        if a <= 0.0 {
            problems.push(format!("lattice constant must be positive, got {a}"));
        }
        if big_r > a / 2.0 * (1.0 + 1e-12) {
            problems.push(format!("outer_radius {big_r} exceeds half the lattice constant {a}"));
        }
        if self.rod_index < 1.0 {
            problems.push(format!("rod index {} is below 1", self.rod_index));
        }
        match self.rod_model {
            RodModel::Tube => {
                if (a - 2.0 * big_r).abs() > 1e-12 * a.max(1.0) {
                    problems.push(format!("tube model requires touching rods, got a = {a}, R = {big_r}"));
                }
            }
            RodModel::Solid => {
                if r != 0.0 {
                    problems.push(format!("solid rods cannot have an inner radius ({r})"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(GeometryError::InvalidSpec(problems.join("; ")))
        }
    }

    /// Distance between consecutive rows along the propagation axis.
    pub fn layer_spacing(&self) -> f64 {
        match self.orientation {
            Orientation::GammaM => 0.5 * 3f64.sqrt() * self.lattice_constant,
            Orientation::GammaK => 0.5 * self.lattice_constant,
        }
    }

    /// Period of the structure along the transverse (y) axis.
    pub fn transverse_period(&self) -> f64 {
        match self.orientation {
            Orientation::GammaM => self.lattice_constant,
            Orientation::GammaK => 3f64.sqrt() * self.lattice_constant,
        }
    }

    /// Sample thickness between the outer tangent planes of the first and
    /// last rows: `(N - 1) * spacing + 2R`, zero for an empty crystal.
    pub fn thickness(&self) -> f64 {
        if self.layers == 0 {
            0.0
        } else {
            (self.layers - 1) as f64 * self.layer_spacing() + 2.0 * self.outer_radius
        }
    }

    fn rod_eps(&self) -> f64 {
        self.rod_index * self.rod_index
    }
}

/// Air area per unit cell divided by the unit-cell area `(sqrt3/2) a^2`.
pub fn aff_of_spec(spec: &CrystalSpec) -> f64 {
    let r = match spec.rod_model {
        RodModel::Solid => 0.0,
        RodModel::Tube => spec.inner_radius,
    };
    let dielectric = PI * (spec.outer_radius.powi(2) - r.powi(2));
    1.0 - dielectric / unit_cell_area(spec.lattice_constant)
}

/// Inner radius of touching tubes (outer radius `outer_radius`) giving `aff`.
pub fn tube_inner_radius_for_aff(aff: f64, outer_radius: f64) -> Result<f64, GeometryError> {
    let min = interstitial_aff();
    // allow the boundary to be hit through rounding
    if !(aff >= min - 1e-12 && aff < 1.0) {
        return Err(GeometryError::AffOutOfRange { aff, min, max: 1.0 });
    }
    let ratio2 = (1.0 - (1.0 - aff) / touching_fill_fraction()).max(0.0);
    Ok(outer_radius * ratio2.sqrt())
}

/// Radius of solid rods on a lattice of constant `a` giving `aff`.
pub fn solid_rod_radius_for_aff(aff: f64, a: f64) -> Result<f64, GeometryError> {
    let min = interstitial_aff();
    if !(aff > min && aff <= 1.0) {
        return Err(GeometryError::AffOutOfRange { aff, min, max: 1.0 });
    }
    let radius = a * ((1.0 - aff) * 3f64.sqrt() / (2.0 * PI)).sqrt();
    if radius >= a / 2.0 {
        return Err(GeometryError::AffOutOfRange { aff, min, max: 1.0 });
    }
    Ok(radius)
}

/// Rod centres of one transverse period, row by row from the entry face.
/// Row `k` is at `x = k * spacing` and `y = (k mod 2) * period / 2`.
pub fn build_lattice(spec: &CrystalSpec) -> Vec<(f64, f64)> {
    let spacing = spec.layer_spacing();
    let period = spec.transverse_period();
    (0..spec.layers)
        .map(|k| (k as f64 * spacing, if k % 2 == 1 { 0.5 * period } else { 0.0 }))
        .collect()
}

/// Rasterized relative permittivity. Index `(i, j)` with `i` along the
/// propagation axis; storage is row-major in `i` (`eps[i * ny + j]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermittivityGrid {
    pub eps: Vec<f64>,
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    pub transverse_period: f64,
    /// Physical thickness of the structure; `nx * cell_size >= thickness`.
    pub thickness: f64,
}

impl PermittivityGrid {
    pub fn vacuum(nx: usize, ny: usize, cell_size: f64) -> Self {
        Self {
            eps: vec![1.0; nx * ny],
            cell_size,
            nx,
            ny,
            transverse_period: ny as f64 * cell_size,
            thickness: nx as f64 * cell_size,
        }
    }

    /// Homogeneous slab of thickness `thickness` one cell wide transversely.
    /// The final, partially filled cell gets the volume-averaged permittivity.
    pub fn slab(thickness: f64, index: f64, cell_size: f64) -> Self {
        let nx = (thickness / cell_size - 1e-9).ceil().max(0.0) as usize;
        let eps_rod = index * index;
        let eps = (0..nx)
            .map(|i| {
                let fill = ((thickness - i as f64 * cell_size) / cell_size).clamp(0.0, 1.0);
                1.0 + fill * (eps_rod - 1.0)
            })
            .collect();
        Self { eps, cell_size, nx, ny: 1, transverse_period: cell_size, thickness }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.eps[i * self.ny + j]
    }

    pub fn length(&self) -> f64 {
        self.nx as f64 * self.cell_size
    }

    /// Area-integrated `(eps - 1)` over the grid.
    pub fn integrated_contrast(&self) -> f64 {
        self.eps.iter().map(|e| e - 1.0).sum::<f64>() * self.cell_size * self.cell_size
    }
}

/// Grid cell size that closes the transverse period exactly for a requested
/// nominal size: `period / round(period / nominal)`.
pub fn fitted_cell_size(period: f64, nominal: f64) -> (f64, usize) {
    let ny = ((period / nominal).round() as usize).max(1);
    (period / ny as f64, ny)
}

pub fn rasterize(spec: &CrystalSpec, cell_size: f64) -> Result<PermittivityGrid, GeometryError> {
    rasterize_with_budget(spec, cell_size, DEFAULT_MAX_CELLS)
}

/// Rasterize the crystal with the entry tangent plane at `x = 0`.
///
/// The nominal `cell_size` is adjusted so that an integer number of cells
/// spans the transverse period.
pub fn rasterize_with_budget(spec: &CrystalSpec, cell_size: f64, max_cells: usize) -> Result<PermittivityGrid, GeometryError> {
    spec.validate()?;
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(GeometryError::InvalidSpec(format!("cell size must be positive, got {cell_size}")));
    }
    if spec.layers > 0 && cell_size > spec.outer_radius / 8.0 * (1.0 + 1e-9) {
        return Err(GeometryError::UnderResolved { cell_size, radius: spec.outer_radius });
    }
    let period = spec.transverse_period();
    let (dx, ny) = fitted_cell_size(period, cell_size);
    let thickness = spec.thickness();
    let nx = (thickness / dx - 1e-9).ceil().max(0.0) as usize;
    let cells = nx.saturating_mul(ny);
    if cells > max_cells {
        return Err(GeometryError::Resource { cells, budget: max_cells });
    }

    let shape = RodShape::new(spec);
    let eps_rod = spec.rod_eps();
    let mut eps = vec![1.0; cells];
    for i in 0..nx {
        let xc = (i as f64 + 0.5) * dx;
        for j in 0..ny {
            let yc = (j as f64 + 0.5) * dx;
            let fill = if shape.near_boundary(xc, yc, dx) {
                let mut inside = 0usize;
                for si in 0..SUPERSAMPLE {
                    let xs = i as f64 * dx + (si as f64 + 0.5) * dx / SUPERSAMPLE as f64;
                    for sj in 0..SUPERSAMPLE {
                        let ys = j as f64 * dx + (sj as f64 + 0.5) * dx / SUPERSAMPLE as f64;
                        if shape.contains(xs, ys) {
                            inside += 1;
                        }
                    }
                }
                inside as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
            } else if shape.contains(xc, yc) {
                1.0
            } else {
                0.0
            };
            eps[i * ny + j] = 1.0 + fill * (eps_rod - 1.0);
        }
    }
    Ok(PermittivityGrid { eps, cell_size: dx, nx, ny, transverse_period: period, thickness })
}

/// Point-membership queries against the periodic rod arrangement, in grid
/// coordinates (entry tangent plane at `x = 0`).
struct RodShape {
    outer: f64,
    inner: f64,
    spacing: f64,
    period: f64,
    layers: usize,
}

impl RodShape {
    fn new(spec: &CrystalSpec) -> Self {
        let inner = match spec.rod_model {
            RodModel::Solid => 0.0,
            RodModel::Tube => spec.inner_radius,
        };
        Self {
            outer: spec.outer_radius,
            inner,
            spacing: spec.layer_spacing(),
            period: spec.transverse_period(),
            layers: spec.layers,
        }
    }

    /// Rows whose rods come within `reach` of abscissa `x`, with the signed
    /// offsets `(dx, dy)` to the nearest periodic image of each row's rod.
    fn nearby(&self, x: f64, y: f64, reach: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let rel = x - self.outer;
        let lo = ((rel - reach) / self.spacing).floor().max(0.0) as usize;
        let hi = ((rel + reach) / self.spacing).ceil().max(0.0) as usize;
        let hi = hi.min(self.layers.saturating_sub(1));
        (lo..=hi).filter(move |_| self.layers > 0).filter_map(move |k| {
            let cx = self.outer + k as f64 * self.spacing;
            let ddx = x - cx;
            if ddx.abs() > reach {
                return None;
            }
            let cy = if k % 2 == 1 { 0.5 * self.period } else { 0.0 };
            let mut ddy = (y - cy).rem_euclid(self.period);
            if ddy > 0.5 * self.period {
                ddy -= self.period;
            }
            Some((ddx, ddy))
        })
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (o2, i2) = (self.outer * self.outer, self.inner * self.inner);
        self.nearby(x, y, self.outer).any(|(dx, dy)| {
            let d2 = dx * dx + dy * dy;
            d2 <= o2 && d2 >= i2
        })
    }

    fn near_boundary(&self, x: f64, y: f64, cell: f64) -> bool {
        self.nearby(x, y, self.outer + cell).any(|(dx, dy)| {
            let d = (dx * dx + dy * dy).sqrt();
            (d - self.outer).abs() < cell || (self.inner > 0.0 && (d - self.inner).abs() < cell)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const R: f64 = 6.35e-3;

    #[test]
    fn empty_lattice_is_all_air() {
        let spec = CrystalSpec { outer_radius: 0.0, inner_radius: 0.0, lattice_constant: 0.0127, rod_index: 1.61, layers: 3, orientation: Orientation::GammaM, rod_model: RodModel::Solid };
        assert_eq!(aff_of_spec(&spec), 1.0);
    }

    #[test]
    fn touching_solid_rods() {
        let spec = CrystalSpec { outer_radius: R, inner_radius: 0.0, lattice_constant: 2.0 * R, rod_index: 1.61, layers: 3, orientation: Orientation::GammaM, rod_model: RodModel::Solid };
        assert!((aff_of_spec(&spec) - 0.09310).abs() < 1e-5);
    }

    #[test]
    fn inner_radius_boundaries() {
        assert_eq!(tube_inner_radius_for_aff(interstitial_aff(), R).unwrap(), 0.0);
        let r60 = tube_inner_radius_for_aff(0.60, R).unwrap();
        assert!((r60 / R - 0.7476).abs() < 1e-4, "{}", r60 / R);
        assert!((r60 - 4.748e-3).abs() < 1e-6);
        let r32 = tube_inner_radius_for_aff(0.32, R).unwrap();
        assert!((r32 / R - 0.5002).abs() < 1e-4, "{}", r32 / R);
        assert!(matches!(tube_inner_radius_for_aff(0.05, R), Err(GeometryError::AffOutOfRange { .. })));
        assert!(tube_inner_radius_for_aff(1.0, R).is_err());
    }

    #[test]
    fn solid_radius() {
        let a = 0.0127;
        assert_eq!(solid_rod_radius_for_aff(1.0, a).unwrap(), 0.0);
        assert!((solid_rod_radius_for_aff(0.60, a).unwrap() / a - 0.3321).abs() < 1e-4);
        let near = solid_rod_radius_for_aff(interstitial_aff() + 1e-9, a).unwrap();
        assert!(near < a / 2.0 && near / a > 0.4999);
        assert!(solid_rod_radius_for_aff(interstitial_aff(), a).is_err());
    }

    #[test]
    fn lattice_rows() {
        let spec = CrystalSpec::tube_for_aff(0.6, R, 1.61, 0).unwrap();
        assert!(build_lattice(&spec).is_empty());
        let spec = spec.with_layers(2);
        let pts = build_lattice(&spec);
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0], (0.0, 0.0));
        assert!((pts[1].0 - 10.999e-3).abs() < 1e-6);
        assert!((pts[1].1 - 0.0127 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn thickness_convention() {
        let spec = CrystalSpec::tube_for_aff(0.6, R, 1.61, 18).unwrap();
        let h = 0.5 * 3f64.sqrt() * 0.0127;
        assert!((spec.thickness() - (17.0 * h + 0.0127)).abs() < 1e-15);
        assert_eq!(spec.with_layers(0).thickness(), 0.0);
        assert_eq!(spec.with_layers(1).thickness(), 2.0 * R);
    }

    #[test]
    fn tube_requires_touching() {
        let mut spec = CrystalSpec::tube_for_aff(0.6, R, 1.61, 2).unwrap();
        spec.lattice_constant = 0.015;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn empty_spec_rasterizes_to_vacuum() {
        let spec = CrystalSpec::tube_for_aff(0.6, R, 1.61, 0).unwrap();
        let grid = rasterize(&spec, 0.25e-3).unwrap();
        assert_eq!(grid.nx, 0);
        assert!(grid.eps.iter().all(|&e| e == 1.0));
    }

    #[test]
    fn solid_rod_interior_takes_acrylic_permittivity() {
        let a = 0.0127;
        let spec = CrystalSpec::solid_for_aff(0.6, a, 1.61, 1).unwrap();
        let grid = rasterize(&spec, 0.2e-3).unwrap();
        // cell nearest the rod centre at (R, 0)
        let i = (spec.outer_radius / grid.cell_size) as usize;
        assert!((grid.at(i, 0) - 2.5921).abs() < 1e-12);
        assert!(grid.eps.iter().all(|&e| (1.0..=2.5921 + 1e-12).contains(&e)));
    }

    #[test]
    fn transverse_period_closes() {
        let spec = CrystalSpec::tube_for_aff(0.6, R, 1.61, 4).unwrap();
        let grid = rasterize(&spec, 0.25e-3).unwrap();
        assert_eq!(grid.ny, 51);
        assert!((grid.ny as f64 * grid.cell_size - grid.transverse_period).abs() < 1e-15);
    }

    #[test]
    fn budget_and_resolution_errors() {
        let spec = CrystalSpec::tube_for_aff(0.6, R, 1.61, 18).unwrap();
        assert!(matches!(rasterize_with_budget(&spec, 0.25e-3, 1000), Err(GeometryError::Resource { .. })));
        assert!(matches!(rasterize(&spec, 1e-3), Err(GeometryError::UnderResolved { .. })));
    }

    #[test]
    fn slab_grid_partial_cell() {
        let g = PermittivityGrid::slab(1.05e-3, 1.5, 0.5e-3);
        assert_eq!(g.nx, 3);
        assert!((g.eps[2] - (1.0 + 0.1 * 1.25)).abs() < 1e-9);
        assert!((g.integrated_contrast() / g.cell_size - 1.05e-3 * 1.25).abs() < 1e-12);
    }
}
