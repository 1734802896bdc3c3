use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::History;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusViolations {
    pub bus: usize,
    /// Number of separate excursions above `v_max`.
    pub upper_count: u64,
    /// Samples spent above `v_max`.
    pub upper_steps: u64,
    pub upper_duration_s: f64,
    pub lower_count: u64,
    pub lower_steps: u64,
    pub lower_duration_s: f64,
    pub v_min_seen: f64,
    pub v_max_seen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalenessHistogram {
    pub der_id: u32,
    pub bus: usize,
    pub delivered: u64,
    /// `delay_steps -> count`.
    pub counts: BTreeMap<u64, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steps: usize,
    pub dispatch_steps: usize,
    pub tracking_rms: f64,
    pub tracking_max_abs: f64,
    /// `|P0 - P0_set|` at the last step inside the dispatch window.
    pub terminal_tracking_error: f64,
    pub upper_violation_count: u64,
    pub upper_violation_steps: u64,
    pub lower_violation_count: u64,
    pub lower_violation_steps: u64,
    pub voltage: Vec<BusViolations>,
    pub staleness: Vec<StalenessHistogram>,
}

pub fn compute_metrics(history: &History) -> Result<RunMetrics> {
    if history.steps.is_empty() {
        return Err(Error::Scenario("cannot compute metrics of an empty history".into()));
    }
    let errors: Vec<f64> = history
        .steps
        .iter()
        .filter(|s| s.tracking)
        .map(|s| s.p0 - s.p0_set)
        .collect();
    let tracking_rms = if errors.is_empty() {
        0.0
    } else {
        (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
    };
    let tracking_max_abs = errors.iter().fold(0.0, |m: f64, e| m.max(e.abs()));
    let terminal_tracking_error = errors.last().map_or(0.0, |e| e.abs());

    let dt = history.control_interval_s;
    let voltage: Vec<BusViolations> = history
        .monitored_buses
        .iter()
        .enumerate()
        .map(|(j, &bus)| {
            let series = history.steps.iter().map(|s| s.voltages[j]);
            let (upper_count, upper_steps) = excursions(series.clone().map(|v| v > history.v_max));
            let (lower_count, lower_steps) = excursions(series.clone().map(|v| v < history.v_min));
            BusViolations {
                bus,
                upper_count,
                upper_steps,
                upper_duration_s: upper_steps as f64 * dt,
                lower_count,
                lower_steps,
                lower_duration_s: lower_steps as f64 * dt,
                v_min_seen: series.clone().fold(f64::INFINITY, f64::min),
                v_max_seen: series.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();

    let staleness = history
        .deliveries
        .iter()
        .zip(&history.der_buses)
        .enumerate()
        .map(|(i, (counts, &bus))| StalenessHistogram {
            der_id: i as u32 + 1,
            bus,
            delivered: counts.values().sum(),
            counts: counts.clone(),
        })
        .collect();

    Ok(RunMetrics {
        steps: history.steps.len(),
        dispatch_steps: errors.len(),
        tracking_rms,
        tracking_max_abs,
        terminal_tracking_error,
        upper_violation_count: voltage.iter().map(|b| b.upper_count).sum(),
        upper_violation_steps: voltage.iter().map(|b| b.upper_steps).sum(),
        lower_violation_count: voltage.iter().map(|b| b.lower_count).sum(),
        lower_violation_steps: voltage.iter().map(|b| b.lower_steps).sum(),
        voltage,
        staleness,
    })
}

/// `(number of runs of true, number of true samples)`.
fn excursions(flags: impl Iterator<Item = bool>) -> (u64, u64) {
    let mut runs = 0;
    let mut total = 0;
    let mut inside = false;
    for f in flags {
        if f {
            total += 1;
            if !inside {
                runs += 1;
            }
        }
        inside = f;
    }
    (runs, total)
}
