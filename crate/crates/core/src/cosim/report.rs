use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{History, RunMetrics};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: String,
    pub history: History,
    pub metrics: RunMetrics,
}

impl RunReport {
    /// `t_sec,p0,p0_set,v_<bus>...`, one row per step.
    pub fn run_csv(&self) -> String {
        let h = &self.history;
        let mut out = String::from("t_sec,p0,p0_set");
        for b in &h.monitored_buses {
            write!(out, ",v_{b}").unwrap();
        }
        out.push('\n');
        for s in &h.steps {
            write!(out, "{:.6},{:.9},{:.9}", s.t_sec, s.p0, s.p0_set).unwrap();
            for v in &s.voltages {
                write!(out, ",{v:.9}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// `t_sec,p_<bus>...,q_<bus>...,age_<bus>...`, one row per step.
    pub fn setpoints_csv(&self) -> String {
        let h = &self.history;
        let mut out = String::from("t_sec");
        for prefix in ["p", "q", "age"] {
            for b in &h.der_buses {
                write!(out, ",{prefix}_{b}").unwrap();
            }
        }
        out.push('\n');
        for s in &h.steps {
            write!(out, "{:.6}", s.t_sec).unwrap();
            for v in s.p_set.iter().chain(&s.q_set) {
                write!(out, ",{v:.9}").unwrap();
            }
            for a in &s.dual_age {
                write!(out, ",{a}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_run_csv(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    write_string(path.as_ref(), &report.run_csv())
}

pub fn write_setpoints_csv(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    write_string(path.as_ref(), &report.setpoints_csv())
}

pub fn write_metrics_json(metrics: &RunMetrics, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(metrics).map_err(|source| Error::Json {
        path: path.to_owned(),
        source,
    })?;
    write_string(path, &(text + "\n"))
}
