use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use pbg_core::io::{load_config, RunConfig};
use pbg_core::Orientation;
use pbg_harness::{cmd_analyze, cmd_calibrate, cmd_report, simulate, AnalysisOverrides, Campaign, Execution, HarnessError};

#[derive(Parser)]
#[command(name = "pbg", version, about = "Photonic-crystal transmission campaigns: simulate, analyze, calibrate, report")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the crystal and reference simulations of a configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        sim: SimFlags,
        /// Recompute spectra even when cached copies exist.
        #[arg(long)]
        no_cache: bool,
    },
    /// Extract phase and group indices, gaps and regimes from a simulated campaign.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold_db: Option<f64>,
        #[arg(long)]
        zero_tol: Option<f64>,
    },
    /// Fit the index of simulated homogeneous slabs.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Write plot-ready tables and a summary from one or more analyses.
    Report {
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SimFlags {
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Grid cell size in metres, overriding the configuration.
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long, value_enum)]
    orientation: Option<OrientationArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    #[value(name = "GammaM", alias = "gammam")]
    GammaM,
    #[value(name = "GammaK", alias = "gammak")]
    GammaK,
}

fn load(path: &Path) -> Result<RunConfig, HarnessError> {
    let bytes = std::fs::read(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    Ok(load_config(&bytes)?)
}

fn apply(config: &mut RunConfig, flags: &SimFlags) {
    if let Some(cell) = flags.resolution {
        config.sim.cell_size = cell;
    }
    match flags.orientation {
        Some(OrientationArg::GammaM) => config.crystal.orientation = Orientation::GammaM,
        Some(OrientationArg::GammaK) => config.crystal.orientation = Orientation::GammaK,
        None => {}
    }
}

/// `Ok(true)` when every run succeeded and every check passed.
fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Simulate { config, out, sim, no_cache } => {
            let mut cfg = load(&config)?;
            apply(&mut cfg, &sim);
            cfg.sim.validate()?;
            let campaign = Campaign::plan(&cfg)?;
            let manifest = simulate(&campaign, &out, Execution { jobs: sim.jobs, use_cache: !no_cache })?;
            println!(
                "campaign {}: {} runs, {} solver invocations",
                manifest.campaign_hash,
                manifest.runs.len(),
                manifest.fdtd_invocations
            );
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            for f in manifest.failures() {
                eprintln!("failed: {f}");
            }
            Ok(manifest.all_ok())
        }
        Command::Analyze { input, out, threshold_db, zero_tol } => {
            let report = cmd_analyze(&input, &out, AnalysisOverrides { threshold_db, zero_tol })?;
            for run in &report.runs {
                match &run.gap {
                    Some(g) => println!(
                        "{}: gap {:.3}-{:.3} GHz, depth {:.1} dB, m = {}",
                        run.label,
                        g.f_low / 1e9,
                        g.f_high / 1e9,
                        g.depth_db,
                        run.m_correction
                    ),
                    None => println!("{}: no gap, m = {}", run.label, run.m_correction),
                }
            }
            for g in &report.groups {
                if let Some(notice) = &g.notice {
                    eprintln!("notice: {notice}");
                }
            }
            for s in &report.skipped {
                eprintln!("skipped: {s}");
            }
            for label in report.far_from_gap_failures() {
                eprintln!("far-from-gap check failed: {label}");
            }
            Ok(report.checks_passed())
        }
        Command::Calibrate { config, out, sim } => {
            let mut cfg = match config {
                Some(path) => load(&path)?,
                None => RunConfig::default(),
            };
            apply(&mut cfg, &sim);
            let report = cmd_calibrate(&cfg, out.as_deref())?;
            for r in &report.runs {
                println!("slab {:.1} mm: n = {:.4}", r.thickness * 1e3, r.index);
            }
            println!(
                "fitted n = {:.4}, target {:.4}, error {:+.2}% (tolerance {:.1}%): {}",
                report.fitted_index,
                report.target_index,
                100.0 * report.relative_error,
                100.0 * report.tolerance,
                if report.passed { "PASS" } else { "FAIL" }
            );
            Ok(report.passed)
        }
        Command::Report { inputs, out } => {
            let summary = cmd_report(&inputs, &out)?;
            print!("{}", summary.text);
            Ok(summary.far_from_gap_failures.is_empty())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
