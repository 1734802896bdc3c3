//! Primal-dual VPP dispatch.
//!
//! The feeder-level controller runs projected gradient ascent on the
//! epsilon-regularized Lagrangian to update the voltage duals (`gamma`, `mu`)
//! and the feeder-head tracking duals (`lambda`, `zeta`). Each DER then takes a
//! projected gradient step on the same Lagrangian using whichever duals it
//! currently holds and projects onto its inverter capability set.

use serde::{Deserialize, Serialize};

use crate::feeder::SensitivityModel;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    /// Lower-voltage duals, one per monitored bus.
    pub gamma: Vec<f64>,
    /// Upper-voltage duals, one per monitored bus.
    pub mu: Vec<f64>,
    /// Over-tracking dual (`P0 - P0_set > E`).
    pub lambda: f64,
    /// Under-tracking dual (`P0_set - P0 > E`).
    pub zeta: f64,
    /// Number of feeder updates folded into this state.
    pub step_index: u64,
}

impl DualState {
    pub fn zeros(n_monitored: usize) -> Self {
        Self {
            gamma: vec![0.0; n_monitored],
            mu: vec![0.0; n_monitored],
            lambda: 0.0,
            zeta: 0.0,
            step_index: 0,
        }
    }

    /// Squared Euclidean norm over all multipliers.
    pub fn norm_sq(&self) -> f64 {
        self.gamma.iter().chain(&self.mu).map(|v| v * v).sum::<f64>()
            + self.lambda * self.lambda
            + self.zeta * self.zeta
    }

    pub fn is_nonnegative(&self) -> bool {
        self.gamma.iter().chain(&self.mu).all(|&v| v >= 0.0) && self.lambda >= 0.0 && self.zeta >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerState {
    pub bus: usize,
    pub p_set: f64,
    pub q_set: f64,
    pub p_avail: f64,
    pub s_rating: f64,
    pub c_p: f64,
    pub c_q: f64,
}

impl DerState {
    /// A DER idling at `(0, 0)`.
    pub fn new(bus: usize, s_rating: f64, c_p: f64, c_q: f64) -> Self {
        Self {
            bus,
            p_set: 0.0,
            q_set: 0.0,
            p_avail: 0.0,
            s_rating,
            c_p,
            c_q,
        }
    }

    /// Local cost `c_p (P_av - P)^2 + c_q Q^2`.
    pub fn objective(&self, p: f64, q: f64) -> f64 {
        let short = self.p_avail - p;
        self.c_p * short * short + self.c_q * q * q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub alpha: f64,
    pub nu: f64,
    pub epsilon: f64,
    pub tracking_band: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Bus ids (1-based) whose voltage limits are enforced.
    pub monitored_buses: Vec<usize>,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            nu: 1e-3,
            epsilon: 1e-4,
            tracking_band: 0.001,
            v_min: 0.95,
            v_max: 1.05,
            monitored_buses: Vec::new(),
        }
    }
}

impl ControlParams {
    pub fn validate(&self, n_buses: usize) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("nu", self.nu),
            ("epsilon", self.epsilon),
            ("tracking_band", self.tracking_band),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.v_min < self.v_max) {
            return Err(Error::Config(format!(
                "v_min ({}) must be below v_max ({})",
                self.v_min, self.v_max
            )));
        }
        if let Some(&b) = self.monitored_buses.iter().find(|&&b| b == 0 || b > n_buses) {
            return Err(Error::Config(format!(
                "monitored bus {b} is not a load bus of the feeder"
            )));
        }
        Ok(())
    }
}

/// Feeder-level dual step. `voltages[j]` is the magnitude at
/// `params.monitored_buses[j]`.
pub fn update_duals(
    d: &DualState,
    voltages: &[f64],
    p0: f64,
    p0_set: f64,
    params: &ControlParams,
) -> Result<DualState> {
    let m = params.monitored_buses.len();
    if voltages.len() != m {
        return Err(Error::dim("monitored voltage vector", m, voltages.len()));
    }
    if d.gamma.len() != m || d.mu.len() != m {
        return Err(Error::dim("voltage dual vector", m, d.gamma.len().min(d.mu.len())));
    }
    let ControlParams {
        alpha,
        epsilon,
        tracking_band,
        v_min,
        v_max,
        ..
    } = *params;
    let ascend = |x: f64, residual: f64| (x + alpha * (residual - epsilon * x)).max(0.0);

    Ok(DualState {
        gamma: d
            .gamma
            .iter()
            .zip(voltages)
            .map(|(&g, &v)| ascend(g, v_min - v))
            .collect(),
        mu: d
            .mu
            .iter()
            .zip(voltages)
            .map(|(&mu, &v)| ascend(mu, v - v_max))
            .collect(),
        lambda: ascend(d.lambda, p0 - p0_set - tracking_band),
        zeta: ascend(d.zeta, p0_set - p0 - tracking_band),
        step_index: d.step_index + 1,
    })
}

/// Gradient of the Lagrangian with respect to this DER's `(P, Q)`.
pub fn der_gradient(
    der: &DerState,
    d: &DualState,
    model: &SensitivityModel,
    params: &ControlParams,
) -> Result<(f64, f64)> {
    let n = model.n();
    if der.bus == 0 || der.bus > n {
        return Err(Error::Config(format!(
            "DER bus {} outside the model's 1..={n}",
            der.bus
        )));
    }
    let m = params.monitored_buses.len();
    if d.gamma.len() != m || d.mu.len() != m {
        return Err(Error::dim("voltage dual vector", m, d.gamma.len().min(d.mu.len())));
    }
    let col = der.bus - 1;

    let mut g_p = -2.0 * der.c_p * (der.p_avail - der.p_set) + params.nu * der.p_set;
    let mut g_q = 2.0 * der.c_q * der.q_set + params.nu * der.q_set;
    for (j, &bus) in params.monitored_buses.iter().enumerate() {
        let price = d.mu[j] - d.gamma[j];
        g_p += price * model.voltage_p[(bus - 1, col)];
        g_q += price * model.voltage_q[(bus - 1, col)];
    }
    // only P0 enters the tracking terms
    let tracking = d.lambda - d.zeta;
    g_p += tracking * model.head_p[(0, col)];
    g_q += tracking * model.head_q[(0, col)];
    Ok((g_p, g_q))
}

/// Euclidean projection onto `{0 <= P <= min(p_avail, s_rating), P^2 + Q^2 <= s_rating^2}`.
///
/// # Panics
///
/// On non-finite input, negative `p_avail`, or non-positive `s_rating`.
pub fn project_capability(p: f64, q: f64, p_avail: f64, s_rating: f64) -> (f64, f64) {
    assert!(
        p.is_finite() && q.is_finite() && p_avail.is_finite() && s_rating.is_finite(),
        "project_capability: non-finite input ({p}, {q}, {p_avail}, {s_rating})"
    );
    assert!(
        p_avail >= 0.0,
        "project_capability: p_avail must be >= 0, got {p_avail}"
    );
    assert!(
        s_rating > 0.0,
        "project_capability: s_rating must be > 0, got {s_rating}"
    );

    let p_max = p_avail.min(s_rating);
    let s2 = s_rating * s_rating;

    // projection onto the slab alone
    let p_clamped = p.clamp(0.0, p_max);
    if p_clamped * p_clamped + q * q <= s2 {
        return (p_clamped, q);
    }
    // projection onto the disc alone
    let scale = s_rating / p.hypot(q);
    let (p_disc, q_disc) = (p * scale, q * scale);
    if (0.0..=p_max).contains(&p_disc) {
        return (p_disc, q_disc);
    }
    // corner where the violated slab face meets the circle
    let p_edge = if p_disc > p_max { p_max } else { 0.0 };
    let q_room = (s2 - p_edge * p_edge).max(0.0).sqrt();
    (p_edge, q.signum() * q.abs().min(q_room))
}

/// One projected gradient step for a DER, using the duals it holds.
pub fn update_der(
    der: &DerState,
    duals: &DualState,
    model: &SensitivityModel,
    params: &ControlParams,
) -> Result<DerState> {
    let (g_p, g_q) = der_gradient(der, duals, model, params)?;
    let (p_set, q_set) = project_capability(
        der.p_set - params.alpha * g_p,
        der.q_set - params.alpha * g_q,
        der.p_avail,
        der.s_rating,
    );
    Ok(DerState {
        p_set,
        q_set,
        ..der.clone()
    })
}
