//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use vpp_cosim::cosim::{CommMode, DerParams, P0Schedule, Scenario};
use vpp_cosim::dispatch::{ControlParams, DerState, DualState};
use vpp_cosim::feeder::{Bus, FeederGraph, InjectionVector, Line, SensitivityModel};
use vpp_cosim::profiles::ProfileSet;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn desk_feeder() -> FeederGraph {
    FeederGraph::from_json_file(data_dir().join("desk5.json")).expect("desk feeder")
}

pub fn ieee37_feeder() -> FeederGraph {
    FeederGraph::from_json_file(data_dir().join("ieee37_equiv.json")).expect("ieee37 feeder")
}

pub const DESK_P_AVAIL: f64 = 0.28;
pub const DESK_S_RATING: f64 = 0.3;
pub const DESK_P0_SET: f64 = 0.3;

pub fn desk_params() -> ControlParams {
    ControlParams {
        monitored_buses: vec![2, 3, 4],
        ..ControlParams::default()
    }
}

/// Desk feeder, constant profiles, a feasible constant reference.
pub fn desk_scenario(comm: CommMode, horizon_steps: usize) -> Scenario {
    let feeder = desk_feeder();
    Scenario {
        profiles: ProfileSet::constant(&feeder, DESK_P_AVAIL),
        feeder,
        params: desk_params(),
        der: DerParams {
            s_rating: DESK_S_RATING,
            c_p: 3.0,
            c_q: 1.0,
        },
        comm,
        p0_set: P0Schedule::Constant(DESK_P0_SET),
        start_time_s: 0.0,
        horizon_steps,
        control_interval_s: 1.0,
        dispatch_window: (0.0, horizon_steps as f64),
    }
}

/// Dykstra's alternating projections onto the slab `0 <= P <= p_avail` and
/// the disc of radius `s`.
pub fn dykstra(p: f64, q: f64, p_avail: f64, s: f64) -> (f64, f64) {
    // For p_avail >= s the upper face is redundant; at p_avail = s it is also
    // tangent to the disc, where the iteration only converges sublinearly.
    let p_avail = if p_avail >= s { f64::INFINITY } else { p_avail };
    let (mut x, mut y) = (p, q);
    let (mut ip, mut iq) = (0.0, 0.0); // slab increment
    let (mut jp, mut jq) = (0.0, 0.0); // disc increment
    for _ in 0..1_000_000 {
        let (ap, aq) = (x + ip, y + iq);
        let (sp, sq) = (ap.clamp(0.0, p_avail), aq);
        ip = ap - sp;
        iq = aq - sq;

        let (bp, bq) = (sp + jp, sq + jq);
        let r = bp.hypot(bq);
        let (dp, dq) = if r > s { (bp * s / r, bq * s / r) } else { (bp, bq) };
        jp = bp - dp;
        jq = bq - dq;

        let change = (dp - x).powi(2) + (dq - y).powi(2) + (sp - dp).powi(2) + (sq - dq).powi(2);
        x = dp;
        y = dq;
        if change < 1e-32 {
            break;
        }
    }
    (x, y)
}

/// The dispatch Lagrangian restricted to the primal terms, evaluated through
/// the model's forward maps. `ders` holds every DER; the dual penalty
/// `-(eps/2)|d|^2` is omitted since it does not depend on the setpoints.
pub fn lagrangian(
    model: &SensitivityModel,
    loads: &InjectionVector,
    ders: &[DerState],
    d: &DualState,
    params: &ControlParams,
    p0_set: f64,
) -> f64 {
    let mut inj = loads.clone();
    for der in ders {
        inj.add_at_bus(der.bus, der.p_set, der.q_set);
    }
    let v = model.evaluate_voltages(&inj).unwrap();
    let (p0, _) = model.evaluate_feeder_head(&inj).unwrap();

    let mut l = 0.0;
    for der in ders {
        l += der.objective(der.p_set, der.q_set);
        l += 0.5 * params.nu * (der.p_set * der.p_set + der.q_set * der.q_set);
    }
    for (j, &bus) in params.monitored_buses.iter().enumerate() {
        let vj = v[bus - 1];
        l += d.gamma[j] * (params.v_min - vj) + d.mu[j] * (vj - params.v_max);
    }
    l += d.lambda * (p0 - p0_set - params.tracking_band);
    l += d.zeta * (p0_set - p0 - params.tracking_band);
    l
}

/// Central differences of [`lagrangian`] in DER `i`'s `(P, Q)`.
pub fn fd_gradient(
    model: &SensitivityModel,
    loads: &InjectionVector,
    ders: &[DerState],
    i: usize,
    d: &DualState,
    params: &ControlParams,
    h: f64,
) -> (f64, f64) {
    let at = |dp: f64, dq: f64| {
        let mut ds = ders.to_vec();
        ds[i].p_set += dp;
        ds[i].q_set += dq;
        lagrangian(model, loads, &ds, d, params, 0.0)
    };
    (
        (at(h, 0.0) - at(-h, 0.0)) / (2.0 * h),
        (at(0.0, h) - at(0.0, -h)) / (2.0 * h),
    )
}

/// Kolmogorov-Smirnov statistic of `samples` against `U(a, b)`.
pub fn ks_uniform(samples: &mut [f64], a: f64, b: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - a) / (b - a)).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Critical value of the one-sample KS test at significance 0.01.
pub fn ks_critical_001(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Random radial feeder with `n_buses` buses including the head.
pub fn random_feeder(rng: &mut impl Rng, n_buses: usize) -> FeederGraph {
    let buses = (0..n_buses)
        .map(|id| Bus {
            id,
            load_p: 0.0,
            load_q: 0.0,
            has_der: false,
            label: None,
        })
        .collect();
    let lines = (1..n_buses)
        .map(|to| Line {
            from: rng.random_range(0..to),
            to,
            r: rng.random_range(0.001..0.03),
            x: rng.random_range(0.001..0.03),
        })
        .collect();
    FeederGraph {
        base_kva: 1000.0,
        base_kv: 4.16,
        v_nom: 1.0,
        buses,
        lines,
    }
}

pub fn random_injections(rng: &mut impl Rng, n: usize, bound: f64) -> InjectionVector {
    InjectionVector {
        p: (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
        q: (0..n).map(|_| rng.random_range(-bound..=bound)).collect(),
    }
}

pub fn random_duals(rng: &mut impl Rng, m: usize) -> DualState {
    DualState {
        gamma: (0..m).map(|_| rng.random_range(0.0..2.0)).collect(),
        mu: (0..m).map(|_| rng.random_range(0.0..2.0)).collect(),
        lambda: rng.random_range(0.0..2.0),
        zeta: rng.random_range(0.0..2.0),
        step_index: 0,
    }
}
