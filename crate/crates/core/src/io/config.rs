//! Run configuration: a TOML document with `[crystal]`, `[sweep]`, `[sim]`,
//! `[analysis]` and `[calibration]` sections. Every key is optional except
//! `crystal.aff` and `crystal.layers`.
//!
//! ```toml
//! [crystal]
//! aff = 0.60              # or a list: [0.60, 0.32]
//! layers = "1..=18"       # integer, list of integers or inclusive range
//! pol = "both"            # "TE", "TM", "both" or a list
//! rod_model = "tube"      # "tube" (touching hollow rods) or "solid"
//! orientation = "GammaM"  # or "GammaK"
//!
//! [sweep]
//! f_start = 8e9
//! f_stop = 14e9
//! f_step = 15e6
//! ```

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;
use toml::{Table, Value};

use crate::analysis::AnalysisOptions;
use crate::fdtd::{Polarization, RunLength, SimConfig, SweepSpec};
use crate::geometry::{interstitial_aff, CrystalSpec, Orientation, RodModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub struct ConfigError {
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration ({} problem(s)):", self.problems.len())?;
        for p in &self.problems {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalConfig {
    pub affs: Vec<f64>,
    pub layers: Vec<usize>,
    pub polarizations: Vec<Polarization>,
    pub outer_radius: f64,
    pub rod_index: f64,
    pub rod_model: RodModel,
    /// Used by the solid-rod model; tubes always touch (`a = 2R`).
    pub lattice_constant: f64,
    pub orientation: Orientation,
}

impl Default for CrystalConfig {
    fn default() -> Self {
        Self {
            affs: vec![0.60],
            layers: vec![18],
            polarizations: vec![Polarization::TE, Polarization::TM],
            outer_radius: 6.35e-3,
            rod_index: 1.61,
            rod_model: RodModel::Tube,
            lattice_constant: 12.7e-3,
            orientation: Orientation::GammaM,
        }
    }
}

impl CrystalConfig {
    pub fn spec(&self, aff: f64, layers: usize) -> Result<CrystalSpec, crate::geometry::GeometryError> {
        let spec = match self.rod_model {
            RodModel::Tube => CrystalSpec::tube_for_aff(aff, self.outer_radius, self.rod_index, layers)?,
            RodModel::Solid => CrystalSpec::solid_for_aff(aff, self.lattice_constant, self.rod_index, layers)?,
        };
        Ok(spec.with_orientation(self.orientation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub index: f64,
    pub thicknesses: Vec<f64>,
    /// Relative tolerance on the fitted index.
    pub tolerance: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { index: 1.61, thicknesses: vec![0.01, 0.02, 0.04], tolerance: 0.02 }
    }
}

/// Fully defaulted, validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub crystal: CrystalConfig,
    pub sweep: SweepSpec,
    pub sim: SimConfig,
    pub analysis: AnalysisOptions,
    pub calibration: CalibrationConfig,
    /// Whether the cross-layer slip correction is applied during analysis.
    pub layer_unwrap: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            crystal: CrystalConfig::default(),
            sweep: SweepSpec::default(),
            sim: SimConfig::default(),
            analysis: AnalysisOptions::default(),
            calibration: CalibrationConfig::default(),
            layer_unwrap: true,
        }
    }
}

impl RunConfig {
    /// The run description as TOML, defaults included.
    pub fn to_toml(&self) -> String {
        let mut root = Table::new();
        let mut crystal = Table::new();
        crystal.insert("aff".into(), Value::Array(self.crystal.affs.iter().map(|&a| Value::Float(a)).collect()));
        crystal.insert("layers".into(), Value::Array(self.crystal.layers.iter().map(|&n| Value::Integer(n as i64)).collect()));
        crystal.insert(
            "pol".into(),
            Value::Array(self.crystal.polarizations.iter().map(|p| Value::String(p.as_str().into())).collect()),
        );
        crystal.insert("outer_radius".into(), Value::Float(self.crystal.outer_radius));
        crystal.insert("rod_index".into(), Value::Float(self.crystal.rod_index));
        let model = match self.crystal.rod_model {
            RodModel::Tube => "tube",
            RodModel::Solid => "solid",
        };
        crystal.insert("rod_model".into(), Value::String(model.into()));
        crystal.insert("lattice_constant".into(), Value::Float(self.crystal.lattice_constant));
        let orient = match self.crystal.orientation {
            Orientation::GammaM => "GammaM",
            Orientation::GammaK => "GammaK",
        };
        crystal.insert("orientation".into(), Value::String(orient.into()));
        root.insert("crystal".into(), Value::Table(crystal));

        let mut sweep = Table::new();
        sweep.insert("f_start".into(), Value::Float(self.sweep.f_start));
        sweep.insert("f_stop".into(), Value::Float(self.sweep.f_stop));
        sweep.insert("f_step".into(), Value::Float(self.sweep.f_step));
        root.insert("sweep".into(), Value::Table(sweep));

        let s = &self.sim;
        let mut sim = Table::new();
        for (k, v) in [
            ("cell_size", s.cell_size),
            ("courant_factor", s.courant_factor),
            ("source_center_freq", s.source_center_freq),
            ("source_bandwidth", s.source_bandwidth),
            ("front_gap", s.front_gap),
            ("probe_offset", s.probe_offset),
            ("back_gap", s.back_gap),
            ("energy_threshold", s.energy_threshold),
        ] {
            sim.insert(k.into(), Value::Float(v));
        }
        sim.insert("pml_cells".into(), Value::Integer(s.pml_cells as i64));
        let max_steps = match s.run_length {
            RunLength::Auto { max_steps } | RunLength::Steps(max_steps) => max_steps,
        };
        sim.insert("max_steps".into(), Value::Integer(max_steps as i64));
        root.insert("sim".into(), Value::Table(sim));

        let a = &self.analysis;
        let mut analysis = Table::new();
        for (k, v) in [
            ("threshold_db", a.threshold_db),
            ("zero_tol", a.zero_tol),
            ("slip_threshold", a.slip_threshold),
            ("far_margin", a.far_margin),
            ("far_limit", a.far_limit),
        ] {
            analysis.insert(k.into(), Value::Float(v));
        }
        analysis.insert("smoothing_half_width".into(), Value::Integer(a.smoothing_half_width.unwrap_or(0) as i64));
        analysis.insert("layer_unwrap".into(), Value::Boolean(self.layer_unwrap));
        root.insert("analysis".into(), Value::Table(analysis));

        let mut cal = Table::new();
        cal.insert("index".into(), Value::Float(self.calibration.index));
        cal.insert("thicknesses".into(), Value::Array(self.calibration.thicknesses.iter().map(|&d| Value::Float(d)).collect()));
        cal.insert("tolerance".into(), Value::Float(self.calibration.tolerance));
        root.insert("calibration".into(), Value::Table(cal));
        toml::to_string(&root).expect("tables serialize")
    }
}

struct Reader<'a> {
    section: &'static str,
    table: Option<&'a Table>,
    problems: &'a mut Vec<String>,
    known: Vec<&'static str>,
}

impl<'a> Reader<'a> {
    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.known.push(key);
        self.table.and_then(|t| t.get(key))
    }

    fn f64(&mut self, key: &'static str, default: f64) -> f64 {
        match self.get(key) {
            None => default,
            Some(Value::Float(v)) => *v,
            Some(Value::Integer(v)) => *v as f64,
            Some(other) => {
                let section = self.section;
                self.problems.push(format!("{section}.{key}: expected a number, got {other}"));
                default
            }
        }
    }

    fn usize(&mut self, key: &'static str, default: usize) -> usize {
        match self.get(key) {
            None => default,
            Some(Value::Integer(v)) if *v >= 0 => *v as usize,
            Some(other) => {
                let section = self.section;
                self.problems.push(format!("{section}.{key}: expected a non-negative integer, got {other}"));
                default
            }
        }
    }

    fn bool(&mut self, key: &'static str, default: bool) -> bool {
        match self.get(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                let section = self.section;
                self.problems.push(format!("{section}.{key}: expected true/false, got {other}"));
                default
            }
        }
    }

    fn finish(self) {
        if let Some(t) = self.table {
            for key in t.keys() {
                if !self.known.contains(&key.as_str()) {
                    self.problems.push(format!("unknown key '{}.{key}'", self.section));
                }
            }
        }
    }
}

fn parse_layers(value: &Value, problems: &mut Vec<String>) -> Vec<usize> {
    match value {
        Value::Integer(n) if *n >= 0 => vec![*n as usize],
        Value::Array(items) => {
            let mut out = Vec::new();
            for item in items {
                match item {
                    Value::Integer(n) if *n >= 0 => out.push(*n as usize),
                    other => problems.push(format!("crystal.layers: '{other}' is not a non-negative integer")),
                }
            }
            out
        }
        Value::String(s) => match s.split_once("..=") {
            Some((a, b)) => match (a.trim().parse::<usize>(), b.trim().parse::<usize>()) {
                (Ok(a), Ok(b)) if a <= b => (a..=b).collect(),
                _ => {
                    problems.push(format!("crystal.layers: bad range '{s}' (use \"first..=last\")"));
                    Vec::new()
                }
            },
            None => {
                problems.push(format!("crystal.layers: bad range '{s}' (use \"first..=last\")"));
                Vec::new()
            }
        },
        other => {
            problems.push(format!("crystal.layers: unsupported value {other}"));
            Vec::new()
        }
    }
}

fn parse_pols(value: &Value, problems: &mut Vec<String>) -> Vec<Polarization> {
    let one = |s: &str, problems: &mut Vec<String>| -> Vec<Polarization> {
        if s.eq_ignore_ascii_case("both") {
            return vec![Polarization::TE, Polarization::TM];
        }
        match Polarization::parse(s) {
            Some(p) => vec![p],
            None => {
                problems.push(format!("crystal.pol: unknown polarization '{s}'"));
                Vec::new()
            }
        }
    };
    match value {
        Value::String(s) => one(s, problems),
        Value::Array(items) => {
            let mut out = Vec::new();
            for item in items {
                match item {
                    Value::String(s) => out.extend(one(s, problems)),
                    other => problems.push(format!("crystal.pol: '{other}' is not a string")),
                }
            }
            out.sort();
            out.dedup();
            out
        }
        other => {
            problems.push(format!("crystal.pol: unsupported value {other}"));
            Vec::new()
        }
    }
}

fn section<'a>(root: &'a Table, name: &'static str, problems: &mut Vec<String>) -> Option<&'a Table> {
    match root.get(name) {
        None => None,
        Some(Value::Table(t)) => Some(t),
        Some(_) => {
            problems.push(format!("'{name}' must be a section"));
            None
        }
    }
}

/// Parse and validate a run configuration, reporting every problem found.
pub fn load_config(bytes: &[u8]) -> Result<RunConfig, ConfigError> {
    let text = std::str::from_utf8(bytes).map_err(|_| ConfigError { problems: vec!["configuration is not UTF-8".into()] })?;
    let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError { problems: vec![e.to_string()] })?;
    let mut problems = Vec::new();
    for key in root.keys() {
        if !["crystal", "sweep", "sim", "analysis", "calibration"].contains(&key.as_str()) {
            problems.push(format!("unknown section '{key}'"));
        }
    }
    let mut cfg = RunConfig::default();

    let crystal_table = section(&root, "crystal", &mut problems);
    let sweep_table = section(&root, "sweep", &mut problems);
    let sim_table = section(&root, "sim", &mut problems);
    let analysis_table = section(&root, "analysis", &mut problems);
    let calibration_table = section(&root, "calibration", &mut problems);

    {
        let mut r = Reader { section: "crystal", table: crystal_table, problems: &mut problems, known: Vec::new() };
        let c = &mut cfg.crystal;
        match r.get("aff") {
            Some(Value::Float(v)) => c.affs = vec![*v],
            Some(Value::Integer(v)) => c.affs = vec![*v as f64],
            Some(Value::Array(items)) => {
                c.affs = items
                    .iter()
                    .filter_map(|i| match i {
                        Value::Float(v) => Some(*v),
                        Value::Integer(v) => Some(*v as f64),
                        other => {
                            r.problems.push(format!("crystal.aff: '{other}' is not a number"));
                            None
                        }
                    })
                    .collect()
            }
            Some(other) => r.problems.push(format!("crystal.aff: unsupported value {other}")),
            None => r.problems.push("crystal.aff is required".into()),
        }
        match r.get("layers") {
            Some(v) => c.layers = parse_layers(v, r.problems),
            None => r.problems.push("crystal.layers is required".into()),
        }
        if let Some(v) = r.get("pol") {
            c.polarizations = parse_pols(v, r.problems);
        }
        c.outer_radius = r.f64("outer_radius", c.outer_radius);
        c.rod_index = r.f64("rod_index", c.rod_index);
        c.lattice_constant = r.f64("lattice_constant", c.lattice_constant);
        match r.get("rod_model") {
            None => {}
            Some(Value::String(s)) if s.eq_ignore_ascii_case("tube") => c.rod_model = RodModel::Tube,
            Some(Value::String(s)) if s.eq_ignore_ascii_case("solid") => c.rod_model = RodModel::Solid,
            Some(other) => r.problems.push(format!("crystal.rod_model: expected \"tube\" or \"solid\", got {other}")),
        }
        match r.get("orientation") {
            None => {}
            Some(Value::String(s)) if s.eq_ignore_ascii_case("gammam") => c.orientation = Orientation::GammaM,
            Some(Value::String(s)) if s.eq_ignore_ascii_case("gammak") => c.orientation = Orientation::GammaK,
            Some(other) => r.problems.push(format!("crystal.orientation: expected \"GammaM\" or \"GammaK\", got {other}")),
        }
        r.finish();
    }
    {
        let mut r = Reader { section: "sweep", table: sweep_table, problems: &mut problems, known: Vec::new() };
        let s = &mut cfg.sweep;
        s.f_start = r.f64("f_start", s.f_start);
        s.f_stop = r.f64("f_stop", s.f_stop);
        s.f_step = r.f64("f_step", s.f_step);
        r.finish();
    }
    {
        let mut r = Reader { section: "sim", table: sim_table, problems: &mut problems, known: Vec::new() };
        let s = &mut cfg.sim;
        s.cell_size = r.f64("cell_size", s.cell_size);
        s.courant_factor = r.f64("courant_factor", s.courant_factor);
        s.pml_cells = r.usize("pml_cells", s.pml_cells);
        s.source_center_freq = r.f64("source_center_freq", s.source_center_freq);
        s.source_bandwidth = r.f64("source_bandwidth", s.source_bandwidth);
        s.front_gap = r.f64("front_gap", s.front_gap);
        s.probe_offset = r.f64("probe_offset", s.probe_offset);
        s.back_gap = r.f64("back_gap", s.back_gap);
        s.energy_threshold = r.f64("energy_threshold", s.energy_threshold);
        let default_max = match s.run_length {
            RunLength::Auto { max_steps } | RunLength::Steps(max_steps) => max_steps,
        };
        s.run_length = RunLength::Auto { max_steps: r.usize("max_steps", default_max) };
        r.finish();
    }
    {
        let mut r = Reader { section: "analysis", table: analysis_table, problems: &mut problems, known: Vec::new() };
        let a = &mut cfg.analysis;
        a.threshold_db = r.f64("threshold_db", a.threshold_db);
        a.zero_tol = r.f64("zero_tol", a.zero_tol);
        a.slip_threshold = r.f64("slip_threshold", a.slip_threshold);
        a.far_margin = r.f64("far_margin", a.far_margin);
        a.far_limit = r.f64("far_limit", a.far_limit);
        let h = r.usize("smoothing_half_width", 0);
        a.smoothing_half_width = (h > 0).then_some(h);
        cfg.layer_unwrap = r.bool("layer_unwrap", cfg.layer_unwrap);
        r.finish();
    }
    {
        let mut r = Reader { section: "calibration", table: calibration_table, problems: &mut problems, known: Vec::new() };
        let c = &mut cfg.calibration;
        c.index = r.f64("index", c.index);
        c.tolerance = r.f64("tolerance", c.tolerance);
        match r.get("thicknesses") {
            None => {}
            Some(Value::Array(items)) => {
                c.thicknesses = items
                    .iter()
                    .filter_map(|i| match i {
                        Value::Float(v) => Some(*v),
                        Value::Integer(v) => Some(*v as f64),
                        other => {
                            r.problems.push(format!("calibration.thicknesses: '{other}' is not a number"));
                            None
                        }
                    })
                    .collect()
            }
            Some(other) => r.problems.push(format!("calibration.thicknesses: expected a list, got {other}")),
        }
        r.finish();
    }

    validate(&cfg, &mut problems);
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { problems })
    }
}

fn validate(cfg: &RunConfig, problems: &mut Vec<String>) {
    let c = &cfg.crystal;
    if c.affs.is_empty() {
        problems.push("crystal.aff: at least one value is needed".into());
    }
    if c.layers.is_empty() {
        problems.push("crystal.layers: at least one value is needed".into());
    }
    if c.polarizations.is_empty() {
        problems.push("crystal.pol: at least one polarization is needed".into());
    }
    for &aff in &c.affs {
        if let Err(e) = c.spec(aff, 1) {
            let reason = if aff < interstitial_aff() {
                format!(" (below the interstitial minimum {:.4})", interstitial_aff())
            } else {
                String::new()
            };
            problems.push(format!("crystal.aff = {aff}: {e}{reason}"));
        }
    }
    let mut sorted = c.layers.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != c.layers.len() {
        problems.push("crystal.layers: duplicate layer counts".into());
    }
    if let Err(e) = cfg.sweep.validate() {
        problems.push(format!("sweep: {e}"));
    }
    if let Err(e) = cfg.sim.validate() {
        problems.push(format!("sim: {e}"));
    }
    if cfg.sweep.validate().is_ok() && cfg.sim.validate().is_ok() {
        if let Err(e) = cfg.sim.check_sweep(&cfg.sweep) {
            problems.push(format!("sweep/sim: {e}"));
        }
    }
    let a = &cfg.analysis;
    if !(a.threshold_db > 0.0) {
        problems.push(format!("analysis.threshold_db must be positive, got {}", a.threshold_db));
    }
    if !(a.zero_tol >= 0.0 && a.zero_tol < 1.0) {
        problems.push(format!("analysis.zero_tol must lie in [0, 1), got {}", a.zero_tol));
    }
    if !(a.slip_threshold >= std::f64::consts::PI && a.slip_threshold < 2.0 * std::f64::consts::PI) {
        problems.push(format!("analysis.slip_threshold must lie in [pi, 2 pi), got {}", a.slip_threshold));
    }
    if !(a.far_margin >= 0.0) || !(a.far_limit > 0.0) {
        problems.push("analysis.far_margin must be >= 0 and far_limit > 0".into());
    }
    let cal = &cfg.calibration;
    if !(cal.index >= 1.0) {
        problems.push(format!("calibration.index must be >= 1, got {}", cal.index));
    }
    if cal.thicknesses.iter().any(|d| !(*d > 0.0)) {
        problems.push("calibration.thicknesses must all be positive".into());
    }
    if !(cal.tolerance > 0.0) {
        problems.push(format!("calibration.tolerance must be positive, got {}", cal.tolerance));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_is_fully_defaulted() {
        let cfg = load_config(b"[crystal]\naff = 0.60\nlayers = 18\npol = \"TM\"\n").unwrap();
        assert_eq!(cfg.crystal.affs, vec![0.60]);
        assert_eq!(cfg.crystal.layers, vec![18]);
        assert_eq!(cfg.crystal.polarizations, vec![Polarization::TM]);
        assert_eq!(cfg.sweep, SweepSpec::default());
        assert_eq!(cfg.sim, SimConfig::default());
        // the echoed description re-loads to the same run
        let echoed = load_config(cfg.to_toml().as_bytes()).unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn low_aff_rejected() {
        let err = load_config(b"[crystal]\naff = 0.05\nlayers = 18\n").unwrap_err();
        assert!(err.problems.iter().any(|p| p.contains("0.0931")), "{err}");
    }

    #[test]
    fn sweep_points() {
        let cfg = load_config(b"[crystal]\naff = 0.6\nlayers = \"1..=18\"\n[sweep]\nf_start = 8e9\nf_stop = 14e9\nf_step = 15e6\n").unwrap();
        assert_eq!(cfg.sweep.points(), 401);
        assert_eq!(cfg.crystal.layers, (1..=18).collect::<Vec<_>>());
    }

    #[test]
    fn every_problem_is_listed() {
        let text = b"[crystal]\naff = 0.05\nlayers = 3\ncolour = 1\n[sim]\ncourant_factor = 0.9\npml_cells = 2\n[bogus]\n";
        let err = load_config(text).unwrap_err();
        let all = err.to_string();
        for needle in ["0.05", "colour", "courant_factor", "pml_cells", "bogus"] {
            assert!(all.contains(needle), "missing '{needle}' in {all}");
        }
    }
}
