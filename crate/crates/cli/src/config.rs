//! Scenario configuration file.
//!
//! One JSON document with the sections `feeder`, `profiles`, `control`,
//! `network` and `run`. Relative paths are resolved against the directory
//! holding the config file. Every field except the file paths has a default,
//! and the defaults reproduce the reference experiment settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vpp_cosim::cosim::{CommMode, DerParams, P0Schedule, Scenario};
use vpp_cosim::dispatch::ControlParams;
use vpp_cosim::feeder::FeederGraph;
use vpp_cosim::netsim::{self, NetConfig};
use vpp_cosim::profiles::{ProfileManifest, ProfileSet, Source, Unit};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] vpp_cosim::Error),
}

type Result<T> = std::result::Result<T, ConfigError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederSection {
    pub path: PathBuf,
    /// An extra DER bus on top of those flagged in the feeder file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra_der_bus: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilesSection {
    /// Profile manifest (JSON). Mutually exclusive with `constant_p_avail_pu`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Nominal feeder loads and this availability on every DER.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_p_avail_pu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub alpha: f64,
    pub nu: f64,
    pub epsilon: f64,
    pub tracking_band: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub c_p: f64,
    pub c_q: f64,
    /// Inverter apparent power rating, kVA.
    pub s_rating_kva: f64,
    /// Defaults to every DER bus.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monitored_buses: Option<Vec<usize>>,
}

impl Default for ControlSection {
    fn default() -> Self {
        let p = ControlParams::default();
        Self {
            alpha: p.alpha,
            nu: p.nu,
            epsilon: p.epsilon,
            tracking_band: p.tracking_band,
            v_min: p.v_min,
            v_max: p.v_max,
            c_p: 3.0,
            c_q: 1.0,
            s_rating_kva: 100.0,
            monitored_buses: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Ideal,
    Trace,
    Simulate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: Mode,
    /// Delay trace CSV for `mode = trace`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    /// Seconds since midnight of the first control step.
    pub start_time_s: f64,
    pub horizon_steps: usize,
    pub control_interval_s: f64,
    /// `[start, end)` seconds since midnight; defaults to the whole run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dispatch_window: Option<[f64; 2]>,
    /// Feeder-head reference, per-unit: `{"constant": x}` or a CSV path.
    pub p0_set: Source,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: Mode::Ideal,
            trace: None,
            start_time_s: 0.0,
            horizon_steps: 600,
            control_interval_s: 1.0,
            dispatch_window: None,
            p0_set: Source::Constant { constant: 0.0 },
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feeder: Option<FeederSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<ProfilesSection>,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub network: NetConfig,
    #[serde(default)]
    pub run: RunSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub trace: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn absolute(base_dir: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() {
        p.to_owned()
    } else {
        base_dir.join(p)
    };
    std::path::absolute(&joined).unwrap_or(joined)
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ScenarioConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(cfg.resolved(base))
    }

    /// Copy with every path made absolute against `base_dir`.
    pub fn resolved(mut self, base_dir: &Path) -> Self {
        if let Some(f) = &mut self.feeder {
            f.path = absolute(base_dir, &f.path);
        }
        if let Some(p) = self.profiles.as_mut().and_then(|p| p.path.as_mut()) {
            *p = absolute(base_dir, p);
        }
        if let Some(t) = &mut self.run.trace {
            *t = absolute(base_dir, t);
        }
        if let Source::File(p) = &mut self.run.p0_set {
            *p = absolute(base_dir, p);
        }
        self.run.out_dir = absolute(base_dir, &self.run.out_dir);
        self
    }

    /// Applies command-line overrides; relative paths there are taken from
    /// the working directory.
    pub fn with_overrides(mut self, o: &Overrides) -> Self {
        let cwd = Path::new(".");
        if let Some(m) = o.mode {
            self.run.mode = m;
        }
        if let Some(t) = &o.trace {
            self.run.trace = Some(absolute(cwd, t));
            if o.mode.is_none() {
                self.run.mode = Mode::Trace;
            }
        }
        if let Some(s) = o.seed {
            self.network.seed = s;
        }
        if let Some(out) = &o.out {
            self.run.out_dir = absolute(cwd, out);
        }
        self
    }

    pub fn validate_network(&self) -> Result<()> {
        self.network.validate()?;
        Ok(())
    }

    pub fn comm_mode(&self) -> Result<CommMode> {
        Ok(match self.run.mode {
            Mode::Ideal => CommMode::Ideal,
            Mode::Simulate => {
                self.network.validate()?;
                CommMode::Simulate(self.network.clone())
            }
            Mode::Trace => {
                let Some(path) = &self.run.trace else {
                    return invalid("mode `trace` needs a trace file (run.trace or --trace)");
                };
                CommMode::Trace(netsim::read_trace(path)?)
            }
        })
    }

    /// Loads every referenced file and assembles the scenario.
    pub fn build_scenario(&self) -> Result<Scenario> {
        self.build_scenario_with(self.comm_mode()?)
    }

    pub fn build_scenario_with(&self, comm: CommMode) -> Result<Scenario> {
        let Some(feeder_cfg) = &self.feeder else {
            return invalid("missing `feeder` section");
        };
        if !feeder_cfg.path.exists() {
            return invalid(format!("feeder file not found: {}", feeder_cfg.path.display()));
        }
        let mut feeder = FeederGraph::from_json_file(&feeder_cfg.path)?;
        if let Some(b) = feeder_cfg.extra_der_bus {
            feeder.add_der(b)?;
        }

        let run = &self.run;
        let profiles = match &self.profiles {
            Some(ProfilesSection {
                path: Some(p),
                constant_p_avail_pu: None,
            }) => {
                if !p.exists() {
                    return invalid(format!("profile manifest not found: {}", p.display()));
                }
                let manifest = ProfileManifest::from_json_file(p)?;
                let base = p.parent().unwrap_or(Path::new("."));
                ProfileSet::from_manifest(&manifest, base, &feeder, run.control_interval_s)?
            }
            Some(ProfilesSection {
                path: None,
                constant_p_avail_pu: Some(v),
            }) => ProfileSet::constant(&feeder, *v),
            _ => return invalid("`profiles` needs exactly one of `path` or `constant_p_avail_pu`"),
        };

        let c = &self.control;
        let params = ControlParams {
            alpha: c.alpha,
            nu: c.nu,
            epsilon: c.epsilon,
            tracking_band: c.tracking_band,
            v_min: c.v_min,
            v_max: c.v_max,
            monitored_buses: c.monitored_buses.clone().unwrap_or_else(|| feeder.der_buses()),
        };

        let p0_set = match &run.p0_set {
            Source::Constant { constant } => P0Schedule::Constant(*constant),
            Source::File(p) => {
                if !p.exists() {
                    return invalid(format!("P0 reference file not found: {}", p.display()));
                }
                P0Schedule::Series(run.p0_set.load(Path::new("."), Unit::PerUnit)?).resampled(run.control_interval_s)?
            }
        };

        let start = run.start_time_s;
        let end = start + run.horizon_steps as f64 * run.control_interval_s;
        let scenario = Scenario {
            der: DerParams {
                s_rating: c.s_rating_kva / feeder.base_kva,
                c_p: c.c_p,
                c_q: c.c_q,
            },
            feeder,
            profiles,
            params,
            comm,
            p0_set,
            start_time_s: start,
            horizon_steps: run.horizon_steps,
            control_interval_s: run.control_interval_s,
            dispatch_window: run.dispatch_window.map_or((start, end), |[a, b]| (a, b)),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}
