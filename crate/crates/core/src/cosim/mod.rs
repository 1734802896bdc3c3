//! Closed loop of feeder, dispatch and downlink on a shared control clock.
//!
//! Per control step `k`:
//!
//! 1. sample loads and PV availability at `t_k`;
//! 2. evaluate voltages and `P0` for the current setpoints;
//! 3. update the duals at the feeder;
//! 4. deliver duals to each DER according to the communication mode, holding
//!    the last delivered values when nothing arrives;
//! 5. each DER takes one projected gradient step with the duals it holds;
//! 6. record the plant evaluated at the new setpoints.

mod metrics;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dispatch::{self, ControlParams, DerState, DualState};
use crate::feeder::{FeederGraph, InjectionVector, SensitivityModel};
use crate::netsim::{self, DelayTrace, NetConfig, StepDelivery, StepSchedule};
use crate::profiles::{interpolate_linear, ProfileSample, ProfileSet, TimeSeries};
use crate::{Error, Result};

pub use metrics::{compute_metrics, BusViolations, RunMetrics, StalenessHistogram};
pub use report::{write_metrics_json, write_run_csv, write_setpoints_csv, RunReport};

#[derive(Debug, Clone)]
pub enum CommMode {
    Ideal,
    Trace(DelayTrace),
    Simulate(NetConfig),
}

impl CommMode {
    pub fn name(&self) -> &'static str {
        match self {
            CommMode::Ideal => "ideal",
            CommMode::Trace(_) => "trace",
            CommMode::Simulate(_) => "simulate",
        }
    }
}

/// Feeder-head reference, per-unit.
#[derive(Debug, Clone, PartialEq)]
pub enum P0Schedule {
    Constant(f64),
    Series(TimeSeries),
}

impl P0Schedule {
    pub fn value_at(&self, t: f64) -> Result<f64> {
        match self {
            P0Schedule::Constant(v) => Ok(*v),
            P0Schedule::Series(s) => s
                .value_at(t)
                .ok_or_else(|| Error::Scenario(format!("P0 reference does not cover t = {t} s"))),
        }
    }

    /// Resamples a series reference to the control interval.
    pub fn resampled(self, control_interval_s: f64) -> Result<Self> {
        match self {
            P0Schedule::Series(s) if !s.is_constant() => {
                Ok(P0Schedule::Series(interpolate_linear(&s, control_interval_s)?))
            }
            other => Ok(other),
        }
    }
}

/// Per-DER inverter data shared by the fleet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerParams {
    /// Apparent power rating, per-unit.
    pub s_rating: f64,
    pub c_p: f64,
    pub c_q: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub feeder: FeederGraph,
    pub profiles: ProfileSet,
    pub params: ControlParams,
    pub der: DerParams,
    pub comm: CommMode,
    pub p0_set: P0Schedule,
    /// Time of step 0, seconds since midnight.
    pub start_time_s: f64,
    pub horizon_steps: usize,
    pub control_interval_s: f64,
    /// `[start, end)` in seconds since midnight during which `P0` is tracked.
    pub dispatch_window: (f64, f64),
}

impl Scenario {
    pub fn time_of(&self, k: usize) -> f64 {
        self.start_time_s + k as f64 * self.control_interval_s
    }

    pub fn end_time_s(&self) -> f64 {
        self.time_of(self.horizon_steps)
    }

    pub fn tracking_active(&self, t: f64) -> bool {
        t >= self.dispatch_window.0 && t < self.dispatch_window.1
    }

    /// Absolute control step of scenario step 0 on the trace clock.
    pub fn first_step(&self) -> u64 {
        (self.start_time_s / self.control_interval_s).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps == 0 {
            return Err(Error::Config("horizon must be at least one step".into()));
        }
        if !(self.control_interval_s > 0.0) {
            return Err(Error::Config("control interval must be positive".into()));
        }
        if !(self.start_time_s >= 0.0) {
            return Err(Error::Config("start time must be non-negative".into()));
        }
        if !(self.der.s_rating > 0.0 && self.der.c_p > 0.0 && self.der.c_q > 0.0) {
            return Err(Error::Config(
                "DER rating and objective weights must be positive".into(),
            ));
        }
        if self.dispatch_window.0 > self.dispatch_window.1 {
            return Err(Error::Config("dispatch window ends before it starts".into()));
        }
        self.params.validate(self.feeder.n())?;
        if self.profiles.der_buses() != self.feeder.der_buses().as_slice() {
            return Err(Error::Config(
                "profile set was built for a different DER placement".into(),
            ));
        }
        let last_t = self.time_of(self.horizon_steps - 1);
        if self.profiles.horizon_end() < last_t - 1e-9 {
            return Err(Error::Scenario(format!(
                "profiles end at {} s but the run needs {} s",
                self.profiles.horizon_end(),
                last_t
            )));
        }
        Ok(())
    }
}

/// One row of the run history, recorded after the DER update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t_sec: f64,
    pub p0: f64,
    pub q0: f64,
    /// Reference in force (the uncontrolled baseline outside the window).
    pub p0_set: f64,
    pub tracking: bool,
    /// Over the monitored buses.
    pub voltages: Vec<f64>,
    /// Over the DERs.
    pub p_set: Vec<f64>,
    pub q_set: Vec<f64>,
    /// Feeder updates not yet reflected in each DER's duals.
    pub dual_age: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct History {
    pub monitored_buses: Vec<usize>,
    pub der_buses: Vec<usize>,
    pub control_interval_s: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub steps: Vec<StepRecord>,
    /// Per DER: `delay_steps -> count` of delivered packets.
    pub deliveries: Vec<BTreeMap<u64, u64>>,
}

/// Closed-loop simulation state, advanced one step at a time.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    model: SensitivityModel,
    schedule: Option<StepSchedule>,
    k: usize,
    ders: Vec<DerState>,
    duals_feeder: DualState,
    /// Duals produced at each step so far, indexed by step.
    dual_log: Vec<DualState>,
    duals_at_der: Vec<DualState>,
    history: History,
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        scenario.validate()?;
        let model = scenario.feeder.build_sensitivity()?;
        let der_buses = scenario.feeder.der_buses();
        let n_der = der_buses.len() as u32;
        let first_step = scenario.first_step();
        let last_t = scenario.time_of(scenario.horizon_steps - 1);

        let schedule = match &scenario.comm {
            CommMode::Ideal => None,
            CommMode::Trace(trace) => Some(schedule_from(trace, scenario, n_der, first_step, last_t)?),
            CommMode::Simulate(cfg) => {
                let trace = netsim::simulate_downlink(cfg)?;
                Some(schedule_from(&trace, scenario, n_der, first_step, last_t)?)
            }
        };

        let m = scenario.params.monitored_buses.len();
        let DerParams { s_rating, c_p, c_q } = scenario.der;
        let ders: Vec<DerState> = der_buses
            .iter()
            .map(|&b| DerState::new(b, s_rating, c_p, c_q))
            .collect();
        Ok(Self {
            scenario,
            model,
            schedule,
            k: 0,
            duals_feeder: DualState::zeros(m),
            dual_log: Vec::with_capacity(scenario.horizon_steps),
            duals_at_der: vec![DualState::zeros(m); ders.len()],
            history: History {
                monitored_buses: scenario.params.monitored_buses.clone(),
                der_buses,
                control_interval_s: scenario.control_interval_s,
                v_min: scenario.params.v_min,
                v_max: scenario.params.v_max,
                steps: Vec::with_capacity(scenario.horizon_steps),
                deliveries: vec![BTreeMap::new(); ders.len()],
            },
            ders,
        })
    }

    pub fn step_count(&self) -> usize {
        self.k
    }

    pub fn is_done(&self) -> bool {
        self.k >= self.scenario.horizon_steps
    }

    pub fn model(&self) -> &SensitivityModel {
        &self.model
    }

    pub fn ders(&self) -> &[DerState] {
        &self.ders
    }

    pub fn duals_feeder(&self) -> &DualState {
        &self.duals_feeder
    }

    pub fn duals_at_der(&self) -> &[DualState] {
        &self.duals_at_der
    }

    /// Duals the feeder produced at step `k`.
    pub fn duals_produced_at(&self, k: usize) -> Option<&DualState> {
        self.dual_log.get(k)
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    fn injections(&self, sample: &ProfileSample) -> Result<InjectionVector> {
        let mut inj = InjectionVector::from_loads(&sample.load_p, &sample.load_q)?;
        for der in &self.ders {
            inj.add_at_bus(der.bus, der.p_set, der.q_set);
        }
        Ok(inj)
    }

    fn monitored(&self, v: &[f64]) -> Vec<f64> {
        self.scenario.params.monitored_buses.iter().map(|&b| v[b - 1]).collect()
    }

    pub fn step(&mut self) -> Result<()> {
        if self.is_done() {
            return Err(Error::Scenario("horizon already reached".into()));
        }
        let sc = self.scenario;
        let k = self.k;
        let t = sc.time_of(k);

        let sample = sc.profiles.sample(t)?;
        for (der, &p_avail) in self.ders.iter_mut().zip(&sample.p_avail) {
            der.p_avail = p_avail;
        }

        let inj = self.injections(&sample)?;
        let v = self.model.evaluate_voltages(&inj)?;
        let (p0, _) = self.model.evaluate_feeder_head(&inj)?;

        let tracking = sc.tracking_active(t);
        let p0_set = if tracking {
            sc.p0_set.value_at(t)?
        } else {
            // uncontrolled baseline: every DER at full availability
            sample.load_p.iter().sum::<f64>() - sample.p_avail.iter().sum::<f64>()
        };
        let mut duals = dispatch::update_duals(&self.duals_feeder, &self.monitored(&v), p0, p0_set, &sc.params)?;
        if !tracking {
            duals.lambda = 0.0;
            duals.zeta = 0.0;
        }
        self.dual_log.push(duals.clone());
        self.duals_feeder = duals;

        match &self.schedule {
            None => {
                for held in &mut self.duals_at_der {
                    held.clone_from(&self.duals_feeder);
                }
            }
            Some(schedule) => {
                let abs_step = sc.first_step() + k as u64;
                for (i, held) in self.duals_at_der.iter_mut().enumerate() {
                    let StepDelivery::Delivered { src_step, delay_steps } = schedule.get(i as u32 + 1, abs_step) else {
                        continue;
                    };
                    *self.history.deliveries[i].entry(delay_steps).or_default() += 1;
                    // packets sent before the run carry no run duals
                    let Some(src) = src_step.checked_sub(sc.first_step()) else {
                        continue;
                    };
                    if let Some(d) = self.dual_log.get(src as usize) {
                        if d.step_index > held.step_index {
                            held.clone_from(d);
                        }
                    }
                }
            }
        }

        for (der, held) in self.ders.iter_mut().zip(&self.duals_at_der) {
            *der = dispatch::update_der(der, held, &self.model, &sc.params)?;
        }

        let inj = self.injections(&sample)?;
        let v = self.model.evaluate_voltages(&inj)?;
        let (p0, q0) = self.model.evaluate_feeder_head(&inj)?;
        self.history.steps.push(StepRecord {
            t_sec: t,
            p0,
            q0,
            p0_set,
            tracking,
            voltages: self.monitored(&v),
            p_set: self.ders.iter().map(|d| d.p_set).collect(),
            q_set: self.ders.iter().map(|d| d.q_set).collect(),
            dual_age: self
                .duals_at_der
                .iter()
                .map(|d| self.duals_feeder.step_index - d.step_index)
                .collect(),
        });
        self.k += 1;
        Ok(())
    }

    pub fn into_history(self) -> History {
        self.history
    }
}

fn schedule_from(
    trace: &DelayTrace,
    scenario: &Scenario,
    n_der: u32,
    first_step: u64,
    last_t: f64,
) -> Result<StepSchedule> {
    if trace.n_der() < n_der {
        return Err(Error::Config(format!(
            "delay trace covers {} DERs but the feeder has {n_der}",
            trace.n_der()
        )));
    }
    if trace.horizon_s() < last_t {
        return Err(Error::Scenario(format!(
            "delay trace ends at {} s but the run needs {last_t} s",
            trace.horizon_s()
        )));
    }
    netsim::derive_step_delays_window(
        trace,
        scenario.control_interval_s,
        first_step,
        scenario.horizon_steps,
        n_der,
    )
}

/// Runs the full horizon and computes metrics.
pub fn run(scenario: &Scenario) -> Result<RunReport> {
    let mut sim = Simulation::new(scenario)?;
    while !sim.is_done() {
        sim.step()?;
    }
    let history = sim.into_history();
    let metrics = compute_metrics(&history)?;
    Ok(RunReport {
        mode: scenario.comm.name().to_owned(),
        history,
        metrics,
    })
}
