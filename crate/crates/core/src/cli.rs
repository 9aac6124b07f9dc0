//! The `cahn-spectral` command line.
//!
//! ```text
//! cahn-spectral run <config> [--out DIR]
//! cahn-spectral validate <config>
//! cahn-spectral invariants [--out DIR] [--seed S]
//! cahn-spectral version
//! ```
//!
//! The worker count comes from `CAHN_SPECTRAL_WORKERS` and defaults to the
//! available parallelism. Reports do not depend on it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ExperimentConfig, Study, Validation};
use crate::error::{Error, Result};
use crate::experiments::{
    estimate_linear_strong_error, estimate_spatial_pair, estimate_strong_error_spatial, estimate_strong_error_temporal,
    estimate_weak_error_temporal, fit_rate, Axis, ErrorReport, RateFit, StudySetup,
};
use crate::invariants::{run_all, InvariantOptions, InvariantReport};

pub const WORKERS_ENV: &str = "CAHN_SPECTRAL_WORKERS";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "cahn-spectral", version, about = "Convergence studies for the stochastic Cahn-Hilliard equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the study described by a configuration file.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration (or a report.json) without computing anything.
    Validate { config: PathBuf },
    /// Run the property suites.
    Invariants {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the tool version.
    Version,
}

/// Worker count from the environment, else the available parallelism.
pub fn workers() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Everything a run writes to `report.json`. Contains no timestamps, so equal
/// configurations give byte-identical files.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ErrorReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<RateFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_error: Option<String>,
    /// Strong errors from the same paths as a spatial weak study.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub strong_companion: Option<ErrorReport>,
    /// Per level: weak estimate ≤ strong estimate · sup‖Φ′‖ + 2·SE.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_value_bound: Option<Vec<bool>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invariants: Option<InvariantReport>,
    pub caveat: &'static str,
}

const CAVEAT: &str = "errors are measured against a finer numerical reference driven by the same noise, \
not against the exact solution; the difference is of the order of the reference resolution";

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    /// Seconds since the Unix epoch.
    timestamp: u64,
    seed: u64,
    workers: usize,
    config: &'a ExperimentConfig,
    files: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn gnuplot_script(report: &ErrorReport, t_end: f64, study: Study) -> String {
    let (xlabel, xexpr) = match report.axis {
        Axis::Time => ("tau", format!("({t_end:?}/$1)")),
        Axis::Space => ("1/N", "(1.0/$1)".to_string()),
    };
    format!(
        "# {name}: |estimate| against {xlabel} with 2-standard-error bars\n\
         set datafile separator ','\n\
         set logscale xy\n\
         set key top left\n\
         set xlabel '{xlabel}'\n\
         set ylabel '|estimate|'\n\
         set title '{name}'\n\
         plot 'report.csv' skip 1 using {xexpr}:(abs($2)):(2*$3) with yerrorbars title 'estimate', \\\n     \
         'report.csv' skip 1 using {xexpr}:(abs($2)) with lines notitle\n",
        name = study.name(),
    )
}

fn invariants_csv(r: &InvariantReport) -> String {
    let mut s = String::from("suite,check,passed\n");
    for c in &r.checks {
        s.push_str(&format!("{},{},{}\n", c.suite, c.name, c.passed));
    }
    s
}

/// Runs a validated configuration and writes every artifact into `dir`.
/// Returns the report and whether every invariant held (always true for
/// rate studies).
pub fn execute(config: &ExperimentConfig, dir: &Path, workers: usize) -> Result<(RunReport, bool)> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    let setup = StudySetup {
        model: &config.model,
        paths: config.paths,
        seed: config.seed,
        workers,
    };
    let mut out = RunReport {
        tool: "cahn-spectral",
        config: config.clone(),
        report: None,
        fit: None,
        fit_error: None,
        strong_companion: None,
        mean_value_bound: None,
        invariants: None,
        caveat: CAVEAT,
    };
    let mut files = vec!["report.json".to_string(), "report.csv".to_string()];
    let mut all_ok = true;
    if config.study == Study::Invariants {
        let r = run_all(&InvariantOptions {
            seed: config.seed,
            ..Default::default()
        })?;
        all_ok = r.all_passed();
        fs::write(dir.join("report.csv"), invariants_csv(&r))?;
        out.invariants = Some(r);
    } else {
        let levels = config.levels.as_ref().expect("validated");
        let (list, reference) = (&levels.list, levels.reference);
        let model = &config.model;
        let report = match config.study {
            Study::TemporalWeak => estimate_weak_error_temporal(&setup, list, reference, model.n, &config.functional)?,
            Study::TemporalStrong => estimate_strong_error_temporal(&setup, list, reference, model.n)?,
            Study::LinearOracle => estimate_linear_strong_error(&setup, list, reference, model.n)?,
            Study::SpatialStrong => estimate_strong_error_spatial(&setup, list, reference, model.m)?,
            Study::SpatialWeak => {
                let (weak, strong) = estimate_spatial_pair(&setup, list, reference, model.m, &config.functional)?;
                let lip = config.functional.first_derivative_bound();
                out.mean_value_bound = Some(
                    (0..weak.grid.len())
                        .map(|i| weak.estimates[i].abs() <= strong.estimates[i] * lip + 2.0 * weak.std_errors[i])
                        .collect(),
                );
                out.strong_companion = Some(strong);
                weak
            }
            Study::Invariants => unreachable!(),
        };
        match fit_rate(&report.points(), None) {
            Ok(f) => out.fit = Some(f),
            Err(e) => out.fit_error = Some(e.to_string()),
        }
        fs::write(dir.join("report.csv"), report.to_csv())?;
        fs::write(dir.join("plot.gp"), gnuplot_script(&report, model.t_end, config.study))?;
        files.push("plot.gp".into());
        if config.output.noise_table {
            let (m_ref, n_ref) = if config.study.is_temporal() {
                (reference, model.n)
            } else {
                (model.m, reference)
            };
            let table = setup.noise_table(config.study.name(), 0, m_ref, n_ref)?;
            table.write_to(std::io::BufWriter::new(fs::File::create(dir.join("noise_table.bin"))?))?;
            files.push("noise_table.bin".into());
        }
        out.report = Some(report);
    }
    write_json(&dir.join("report.json"), &out)?;
    files.push("manifest.json".into());
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            tool: "cahn-spectral",
            version: VERSION,
            timestamp,
            seed: config.seed,
            workers,
            config,
            files,
        },
    )?;
    Ok((out, all_ok))
}

fn print_validation(w: &mut dyn Write, config: &ExperimentConfig, v: &Validation) -> Result<()> {
    writeln!(w, "study: {}", config.study.name())?;
    for line in &v.ok_lines {
        writeln!(w, "{line}")?;
    }
    for line in &v.warnings {
        writeln!(w, "warning: {line}")?;
    }
    writeln!(w, "cost estimate: {} mode-steps (paths x steps x modes)", v.cost)?;
    Ok(())
}

fn print_invariants(w: &mut dyn Write, r: &InvariantReport) -> Result<()> {
    for c in &r.checks {
        writeln!(w, "{} {}::{}  {}", if c.passed { "PASS" } else { "FAIL" }, c.suite, c.name, c.detail)?;
    }
    writeln!(w, "{} passed, {} failed", r.passed, r.failed)?;
    Ok(())
}

/// Dispatches a parsed command. Returns the process exit code.
pub fn dispatch(cli: Cli, w: &mut dyn Write) -> Result<u8> {
    match cli.command {
        Command::Version => {
            writeln!(w, "cahn-spectral {VERSION}")?;
            Ok(0)
        }
        Command::Validate { config } => {
            let c = ExperimentConfig::load(&config)?;
            let v = c.validate()?;
            print_validation(w, &c, &v)?;
            Ok(0)
        }
        Command::Run { config, out } => {
            let c = ExperimentConfig::load(&config)?;
            let v = c.validate()?;
            print_validation(w, &c, &v)?;
            let dir = out.unwrap_or_else(|| c.output.dir.clone());
            let (report, ok) = execute(&c, &dir, workers()?)?;
            if let Some(r) = &report.invariants {
                print_invariants(w, r)?;
            }
            if let Some(r) = &report.report {
                for i in 0..r.grid.len() {
                    writeln!(w, "level {:>5}  estimate {:>12.5e}  std_error {:.3e}", r.grid[i], r.estimates[i], r.std_errors[i])?;
                }
            }
            match (&report.fit, &report.fit_error) {
                (Some(f), _) => writeln!(
                    w,
                    "slope {:.4}{}",
                    f.slope,
                    f.ci95.map_or(String::new(), |c| format!(" +/- {c:.4} (95%)"))
                )?,
                (None, Some(e)) => writeln!(w, "fit: {e}")?,
                _ => {}
            }
            writeln!(w, "wrote {}", dir.display())?;
            Ok(if ok { 0 } else { 1 })
        }
        Command::Invariants { out, seed } => {
            let opts = InvariantOptions {
                seed: seed.unwrap_or(InvariantOptions::default().seed),
                ..Default::default()
            };
            let r = run_all(&opts)?;
            print_invariants(w, &r)?;
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                write_json(&dir.join("invariants.json"), &r)?;
            }
            Ok(if r.all_passed() { 0 } else { 1 })
        }
    }
}

/// Entry point of the binary.
pub fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match dispatch(cli, &mut lock) {
        Ok(code) => std::process::ExitCode::from(code),
        Err(e) => {
            let _ = lock.flush();
            eprintln!("error: {e}");
            std::process::ExitCode::from(2)
        }
    }
}
