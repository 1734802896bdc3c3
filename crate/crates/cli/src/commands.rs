use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::Serialize;
use vpp_cosim::cosim::{self, BusViolations, CommMode, RunMetrics, RunReport};
use vpp_cosim::netsim;

use crate::config::{ConfigError, Mode, Overrides, ScenarioConfig};
use crate::plots;

/// Failure classes mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<vpp_cosim::Error> for CliError {
    fn from(e: vpp_cosim::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.json";
pub const COMPARE_FILE: &str = "compare.json";

pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> CliResult<ScenarioConfig> {
    let cfg = match path {
        Some(p) => ScenarioConfig::from_file(p)?,
        None => ScenarioConfig::default().resolved(Path::new(".")),
    };
    Ok(cfg.with_overrides(overrides))
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

/// Generates a delay trace. `out` is the CSV path; defaults to
/// `der_downlink_delay.csv` inside the configured output directory.
pub fn simulate_net(cfg: &ScenarioConfig, out: Option<&Path>) -> CliResult<PathBuf> {
    cfg.validate_network()?;
    let path = match out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => p.to_owned(),
        Some(dir) => dir.join(netsim::DEFAULT_TRACE_FILE),
        None => cfg.run.out_dir.join(netsim::DEFAULT_TRACE_FILE),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let trace = netsim::simulate_downlink(&cfg.network)?;
    netsim::write_trace(&trace, &path)?;
    log::info!("wrote {} records to {}", trace.records.len(), path.display());
    Ok(path)
}

fn write_outputs(cfg: &ScenarioConfig, report: &RunReport, out_dir: &Path, with_plots: bool) -> anyhow::Result<()> {
    create_dir(out_dir)?;
    let mut echo = cfg.clone();
    echo.run.out_dir = out_dir.to_owned();
    write_json(&out_dir.join(EFFECTIVE_CONFIG_FILE), &echo)?;
    cosim::write_run_csv(report, out_dir.join("run.csv"))?;
    cosim::write_setpoints_csv(report, out_dir.join("der_setpoints.csv"))?;
    cosim::write_metrics_json(&report.metrics, out_dir.join("metrics.json"))?;
    if with_plots {
        plots::plot_p0(&report.history, &out_dir.join("p0_tracking.svg"))?;
        plots::plot_voltages(&report.history, &out_dir.join("voltages.svg"))?;
    }
    Ok(())
}

pub fn run(cfg: &ScenarioConfig, with_plots: bool) -> CliResult<RunMetrics> {
    let scenario = cfg.build_scenario()?;
    let report = cosim::run(&scenario)?;
    write_outputs(cfg, &report, &cfg.run.out_dir, with_plots)?;
    log::info!(
        "{} run: {} steps, tracking RMS {:.3e}, {} upper / {} lower violations",
        report.mode,
        report.metrics.steps,
        report.metrics.tracking_rms,
        report.metrics.upper_violation_count,
        report.metrics.lower_violation_count
    );
    Ok(report.metrics)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantSummary {
    pub mode: String,
    pub out_dir: PathBuf,
    pub tracking_rms: f64,
    pub tracking_max_abs: f64,
    pub terminal_tracking_error: f64,
    pub upper_violation_count: u64,
    pub lower_violation_count: u64,
    pub voltage: Vec<BusViolations>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub ideal: VariantSummary,
    pub delayed: VariantSummary,
    /// Delayed over ideal tracking RMS; `null` when the ideal RMS is zero
    /// and the delayed one is not.
    pub rms_ratio: Option<f64>,
}

fn summary(report: &RunReport, out_dir: &Path) -> VariantSummary {
    let m = &report.metrics;
    VariantSummary {
        mode: report.mode.clone(),
        out_dir: out_dir.to_owned(),
        tracking_rms: m.tracking_rms,
        tracking_max_abs: m.tracking_max_abs,
        terminal_tracking_error: m.terminal_tracking_error,
        upper_violation_count: m.upper_violation_count,
        lower_violation_count: m.lower_violation_count,
        voltage: m.voltage.clone(),
    }
}

pub fn rms_ratio(ideal: f64, delayed: f64) -> Option<f64> {
    if ideal == delayed {
        Some(1.0)
    } else if ideal == 0.0 {
        None
    } else {
        Some(delayed / ideal)
    }
}

/// Runs the ideal variant and the configured one on identical inputs.
/// Results go to `out/ideal` and `out/delayed`.
pub fn compare(cfg: &ScenarioConfig, with_plots: bool) -> CliResult<CompareReport> {
    if cfg.run.mode == Mode::Ideal {
        log::warn!("configured mode is ideal; both variants will be identical");
    }
    let ideal_scenario = cfg.build_scenario_with(CommMode::Ideal)?;
    let delayed_scenario = cfg.build_scenario()?;

    let (ideal, delayed) = std::thread::scope(|s| {
        let a = s.spawn(|| cosim::run(&ideal_scenario));
        let b = s.spawn(|| cosim::run(&delayed_scenario));
        (
            a.join().expect("ideal run panicked"),
            b.join().expect("delayed run panicked"),
        )
    });
    let (ideal, delayed) = (ideal?, delayed?);

    let out = &cfg.run.out_dir;
    let (ideal_dir, delayed_dir) = (out.join("ideal"), out.join("delayed"));
    let mut ideal_cfg = cfg.clone();
    ideal_cfg.run.mode = Mode::Ideal;
    write_outputs(&ideal_cfg, &ideal, &ideal_dir, with_plots)?;
    write_outputs(cfg, &delayed, &delayed_dir, with_plots)?;

    let report = CompareReport {
        rms_ratio: rms_ratio(ideal.metrics.tracking_rms, delayed.metrics.tracking_rms),
        ideal: summary(&ideal, &ideal_dir),
        delayed: summary(&delayed, &delayed_dir),
    };
    write_json(&out.join(COMPARE_FILE), &report)?;
    match report.rms_ratio {
        Some(r) => log::info!("tracking RMS ratio (delayed / ideal): {r:.4}"),
        None => log::info!("tracking RMS ratio (delayed / ideal): infinite"),
    }
    Ok(report)
}

/// Loads every referenced file and returns the effective config as JSON.
pub fn validate_config(cfg: &ScenarioConfig) -> CliResult<String> {
    cfg.validate_network()?;
    cfg.build_scenario()?;
    serde_json::to_string_pretty(cfg).map_err(|e| CliError::Runtime(e.into()))
}
