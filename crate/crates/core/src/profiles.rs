//! Load and PV availability time series.
//!
//! Source data (hourly irradiance, load shapes) is read from two-column CSV
//! files, resampled to the control interval with linear interpolation, and
//! converted to per-unit on the feeder's power base.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::feeder::FeederGraph;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    #[default]
    Raw,
    PerUnit,
    Kw,
    Kvar,
    WattsPerM2,
    /// Dimensionless multiplier on a nominal value.
    Multiplier,
}

/// Uniformly sampled series. A single-sample series is treated as constant
/// for all time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    /// Seconds since midnight of the first sample.
    pub start_time: f64,
    pub resolution_s: f64,
    pub values: Vec<f64>,
    #[serde(default)]
    pub unit: Unit,
}

impl TimeSeries {
    pub fn constant(value: f64, unit: Unit) -> Self {
        Self {
            start_time: 0.0,
            resolution_s: 1.0,
            values: vec![value],
            unit,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.values.len() == 1
    }

    /// Time of the last sample.
    pub fn end_time(&self) -> f64 {
        self.start_time + self.resolution_s * (self.values.len().saturating_sub(1)) as f64
    }

    pub fn covers(&self, t: f64) -> bool {
        self.is_constant() || (t >= self.start_time - 1e-9 && t <= self.end_time() + 1e-9)
    }

    /// Linearly interpolated value at `t`, or `None` outside the series.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        if self.is_constant() {
            return self.values.first().copied();
        }
        if !self.covers(t) {
            return None;
        }
        let x = ((t - self.start_time) / self.resolution_s).max(0.0);
        let last = self.values.len() - 1;
        let i = (x.floor() as usize).min(last);
        let frac = x - i as f64;
        if i == last || frac <= 1e-12 {
            return Some(self.values[i]);
        }
        let (a, b) = (self.values[i], self.values[i + 1]);
        Some((a + frac * (b - a)).clamp(a.min(b), a.max(b)))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, k: f64, unit: Unit) -> Self {
        Self {
            values: self.values.iter().map(|v| v * k).collect(),
            unit,
            ..self.clone()
        }
    }
}

/// Resamples `series` on a grid of `target_resolution_s` starting at its
/// first sample. Knot values are reproduced exactly.
pub fn interpolate_linear(series: &TimeSeries, target_resolution_s: f64) -> Result<TimeSeries> {
    if !(target_resolution_s > 0.0) {
        return Err(Error::Config(format!(
            "target resolution must be positive, got {target_resolution_s}"
        )));
    }
    match series.values.len() {
        0 => return Err(Error::Config("cannot interpolate an empty series".into())),
        1 => {
            log::warn!("interpolating a single-sample series; holding it constant");
            return Ok(TimeSeries {
                resolution_s: target_resolution_s,
                ..series.clone()
            });
        }
        _ => {}
    }
    let span = series.end_time() - series.start_time;
    let n = (span / target_resolution_s + 1e-9).floor() as usize + 1;
    let values = (0..n)
        .map(|k| {
            let t = series.start_time + k as f64 * target_resolution_s;
            series.value_at(t).unwrap_or(series.values[series.values.len() - 1])
        })
        .collect();
    Ok(TimeSeries {
        start_time: series.start_time,
        resolution_s: target_resolution_s,
        values,
        unit: series.unit,
    })
}

/// Available PV power, `capacity_kw * min(1, G / G_ref)`, in kW.
pub fn scale_irradiance_to_pv(irradiance: &TimeSeries, capacity_kw: f64, irradiance_ref: f64) -> Result<TimeSeries> {
    if !(irradiance_ref > 0.0) {
        return Err(Error::Config(format!(
            "irradiance_ref must be positive, got {irradiance_ref}"
        )));
    }
    if !(capacity_kw >= 0.0) {
        return Err(Error::Config(format!(
            "capacity_kw must be non-negative, got {capacity_kw}"
        )));
    }
    let mut clamped = 0usize;
    let values = irradiance
        .values
        .iter()
        .map(|&g| {
            if g < 0.0 {
                clamped += 1;
            }
            capacity_kw * (g.max(0.0) / irradiance_ref).min(1.0)
        })
        .collect();
    if clamped > 0 {
        log::warn!("clamped {clamped} negative irradiance samples to zero");
    }
    Ok(TimeSeries {
        values,
        unit: Unit::Kw,
        ..irradiance.clone()
    })
}

/// Reads a `time_sec,value` CSV with a header row and uniform spacing.
pub fn load_profile_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_profile_csv(file, &path.display().to_string())
}

pub fn parse_profile_csv(reader: impl std::io::Read, source: &str) -> Result<TimeSeries> {
    let err = |line: usize, msg: String| Error::Parse {
        path: source.to_owned(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.len() != 2 {
        return Err(err(1, format!("expected header `time_sec,value`, got {header:?}")));
    }

    let mut times: Vec<f64> = Vec::new();
    let mut lines = Vec::new();
    let mut values = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != 2 {
            return Err(err(line, format!("expected 2 fields, found {}", row.len())));
        }
        let t: f64 = row[0]
            .parse()
            .map_err(|e| err(line, format!("bad time {:?}: {e}", &row[0])))?;
        let v: f64 = row[1]
            .parse()
            .map_err(|e| err(line, format!("bad value {:?}: {e}", &row[1])))?;
        if !t.is_finite() || !v.is_finite() {
            return Err(err(line, "non-finite sample".into()));
        }
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(err(line, format!("time {t} is not after previous time {prev}")));
            }
        }
        times.push(t);
        lines.push(line);
        values.push(v);
    }
    if times.is_empty() {
        return Err(err(1, "profile has no samples".into()));
    }
    let resolution_s = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
    for (i, w) in times.windows(2).enumerate() {
        if ((w[1] - w[0]) - resolution_s).abs() > 1e-6 * resolution_s {
            return Err(err(
                lines[i + 1],
                format!("non-uniform spacing: {} s after {} s", w[1] - w[0], resolution_s),
            ));
        }
    }
    Ok(TimeSeries {
        start_time: times[0],
        resolution_s,
        values,
        unit: Unit::Raw,
    })
}

/// Where a series comes from: a CSV file or a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Constant { constant: f64 },
    File(PathBuf),
}

impl Source {
    pub fn load(&self, base_dir: &Path, unit: Unit) -> Result<TimeSeries> {
        match self {
            Source::Constant { constant } => Ok(TimeSeries::constant(*constant, unit)),
            Source::File(p) => {
                let mut s = load_profile_csv(resolve(base_dir, p))?;
                s.unit = unit;
                Ok(s)
            }
        }
    }

    pub fn resolved(&self, base_dir: &Path) -> Source {
        match self {
            Source::File(p) => Source::File(resolve(base_dir, p)),
            c => c.clone(),
        }
    }
}

pub(crate) fn resolve(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base_dir.join(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvSpec {
    /// Irradiance in W/m^2.
    pub irradiance: Source,
    #[serde(default = "default_capacity_kw")]
    pub capacity_kw: f64,
    #[serde(default = "default_irradiance_ref")]
    pub irradiance_ref: f64,
}

fn default_capacity_kw() -> f64 {
    100.0
}

fn default_irradiance_ref() -> f64 {
    1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadOverride {
    pub bus: usize,
    pub p_kw: Source,
    pub q_kvar: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvOverride {
    pub bus: usize,
    pub availability_kw: Source,
}

/// JSON manifest naming the series used by a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileManifest {
    /// Multiplier applied to every bus's nominal load from the feeder file.
    #[serde(default = "unit_shape")]
    pub load_shape: Source,
    #[serde(default)]
    pub loads: Vec<LoadOverride>,
    pub pv: PvSpec,
    #[serde(default)]
    pub pv_overrides: Vec<PvOverride>,
}

fn unit_shape() -> Source {
    Source::Constant { constant: 1.0 }
}

impl ProfileManifest {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })
    }

    /// Copy with all file paths made absolute against `base_dir`.
    pub fn resolved(&self, base_dir: &Path) -> Self {
        Self {
            load_shape: self.load_shape.resolved(base_dir),
            loads: self
                .loads
                .iter()
                .map(|l| LoadOverride {
                    bus: l.bus,
                    p_kw: l.p_kw.resolved(base_dir),
                    q_kvar: l.q_kvar.resolved(base_dir),
                })
                .collect(),
            pv: PvSpec {
                irradiance: self.pv.irradiance.resolved(base_dir),
                ..self.pv.clone()
            },
            pv_overrides: self
                .pv_overrides
                .iter()
                .map(|o| PvOverride {
                    bus: o.bus,
                    availability_kw: o.availability_kw.resolved(base_dir),
                })
                .collect(),
        }
    }
}

/// Loads and DER availability for one instant, per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSample {
    /// Indexed by bus - 1.
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    /// Aligned with [`ProfileSet::der_buses`].
    pub p_avail: Vec<f64>,
}

/// All series needed by a run, resampled to the control interval.
#[derive(Debug, Clone)]
pub struct ProfileSet {
    power_base_kva: f64,
    nominal_p: Vec<f64>,
    nominal_q: Vec<f64>,
    load_shape: TimeSeries,
    load_overrides: BTreeMap<usize, (TimeSeries, TimeSeries)>,
    der_buses: Vec<usize>,
    /// kW availability per DER.
    availability: Vec<TimeSeries>,
}

impl ProfileSet {
    /// Nominal feeder loads and a fixed per-unit availability on every DER.
    pub fn constant(feeder: &FeederGraph, p_avail_pu: f64) -> Self {
        let der_buses = feeder.der_buses();
        Self {
            power_base_kva: feeder.base_kva,
            nominal_p: feeder.load_p(),
            nominal_q: feeder.load_q(),
            load_shape: TimeSeries::constant(1.0, Unit::Multiplier),
            load_overrides: BTreeMap::new(),
            availability: vec![TimeSeries::constant(p_avail_pu * feeder.base_kva, Unit::Kw); der_buses.len()],
            der_buses,
        }
    }

    pub fn from_manifest(
        manifest: &ProfileManifest,
        base_dir: &Path,
        feeder: &FeederGraph,
        control_interval_s: f64,
    ) -> Result<Self> {
        let resample = |s: TimeSeries| -> Result<TimeSeries> {
            if s.is_constant() {
                Ok(s)
            } else {
                interpolate_linear(&s, control_interval_s)
            }
        };
        let der_buses = feeder.der_buses();

        let load_shape = resample(manifest.load_shape.load(base_dir, Unit::Multiplier)?)?;
        let mut load_overrides = BTreeMap::new();
        for o in &manifest.loads {
            if o.bus == 0 || feeder.bus(o.bus).is_none() {
                return Err(Error::Config(format!("load profile for unknown bus {}", o.bus)));
            }
            let p = resample(o.p_kw.load(base_dir, Unit::Kw)?)?;
            let q = resample(o.q_kvar.load(base_dir, Unit::Kvar)?)?;
            load_overrides.insert(o.bus, (p, q));
        }

        let irradiance = resample(manifest.pv.irradiance.load(base_dir, Unit::WattsPerM2)?)?;
        let default_pv = scale_irradiance_to_pv(&irradiance, manifest.pv.capacity_kw, manifest.pv.irradiance_ref)?;
        let mut availability = vec![default_pv; der_buses.len()];
        for o in &manifest.pv_overrides {
            let idx = der_buses
                .iter()
                .position(|&b| b == o.bus)
                .ok_or_else(|| Error::Config(format!("PV profile for bus {} which has no DER", o.bus)))?;
            let s = resample(o.availability_kw.load(base_dir, Unit::Kw)?)?;
            if s.values.iter().any(|&v| v < 0.0) {
                return Err(Error::Config(format!("negative PV availability for bus {}", o.bus)));
            }
            availability[idx] = s;
        }

        Ok(Self {
            power_base_kva: feeder.base_kva,
            nominal_p: feeder.load_p(),
            nominal_q: feeder.load_q(),
            load_shape,
            load_overrides,
            der_buses,
            availability,
        })
    }

    pub fn der_buses(&self) -> &[usize] {
        &self.der_buses
    }

    /// Latest time covered by every series (`f64::INFINITY` if all constant).
    pub fn horizon_end(&self) -> f64 {
        let end = |s: &TimeSeries| if s.is_constant() { f64::INFINITY } else { s.end_time() };
        std::iter::once(&self.load_shape)
            .chain(self.load_overrides.values().flat_map(|(p, q)| [p, q]))
            .chain(&self.availability)
            .map(end)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn sample(&self, t: f64) -> Result<ProfileSample> {
        let exhausted = |what: &str| Error::Scenario(format!("{what} profile does not cover t = {t} s"));
        let shape = self.load_shape.value_at(t).ok_or_else(|| exhausted("load shape"))?;
        let mut load_p: Vec<f64> = self.nominal_p.iter().map(|v| v * shape).collect();
        let mut load_q: Vec<f64> = self.nominal_q.iter().map(|v| v * shape).collect();
        for (&bus, (p, q)) in &self.load_overrides {
            load_p[bus - 1] = p.value_at(t).ok_or_else(|| exhausted("load"))? / self.power_base_kva;
            load_q[bus - 1] = q.value_at(t).ok_or_else(|| exhausted("load"))? / self.power_base_kva;
        }
        let p_avail = self
            .availability
            .iter()
            .map(|s| {
                s.value_at(t)
                    .map(|kw| kw / self.power_base_kva)
                    .ok_or_else(|| exhausted("PV availability"))
            })
            .collect::<Result<_>>()?;
        Ok(ProfileSample {
            load_p,
            load_q,
            p_avail,
        })
    }
}
