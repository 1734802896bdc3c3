//! Radial feeder description and its LinDistFlow sensitivity model.
//!
//! Buses are indexed `0..=N` with bus 0 the feeder head. Vectors over the
//! non-head buses (injections, voltages) have length `N` and position `i - 1`
//! holds bus `i`.
//!
//! Linearizing the squared-voltage branch-flow equations around flat start
//! with zero injection gives, for a bus `n`,
//!
//! ```text
//! |V_n| ~= v_nom + (1 / v_nom) * sum_m (R_nm p_m + X_nm q_m)
//! ```
//!
//! where `R_nm` (`X_nm`) is the resistance (reactance) of the path shared by
//! the routes from the head to `n` and to `m`. The feeder-head power is taken
//! lossless: `P0 = -sum p`, `Q0 = -sum q`.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    /// Active load, per-unit.
    #[serde(default)]
    pub load_p: f64,
    /// Reactive load, per-unit.
    #[serde(default)]
    pub load_q: f64,
    #[serde(default)]
    pub has_der: bool,
    /// Free-form name of the bus in its source data set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series resistance, per-unit.
    pub r: f64,
    /// Series reactance, per-unit.
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederGraph {
    #[serde(default = "default_base_kva")]
    pub base_kva: f64,
    #[serde(default)]
    pub base_kv: f64,
    pub v_nom: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
}

fn default_base_kva() -> f64 {
    1000.0
}

/// Net active and reactive injections at buses `1..=N`, per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionVector {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl InjectionVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    /// Injections produced by loads alone: `-P_l`, `-Q_l`.
    pub fn from_loads(load_p: &[f64], load_q: &[f64]) -> Result<Self> {
        if load_p.len() != load_q.len() {
            return Err(Error::dim("reactive load vector", load_p.len(), load_q.len()));
        }
        Ok(Self {
            p: load_p.iter().map(|l| -l).collect(),
            q: load_q.iter().map(|l| -l).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Adds a DER output at `bus` (1-based).
    pub fn add_at_bus(&mut self, bus: usize, p: f64, q: f64) {
        self.p[bus - 1] += p;
        self.q[bus - 1] += q;
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            p: self.p.iter().map(|v| v * k).collect(),
            q: self.q.iter().map(|v| v * k).collect(),
        }
    }
}

/// Tree orientation of a validated feeder.
#[derive(Debug, Clone)]
pub struct Topology {
    /// `parent[b]` for `b >= 1`; `parent[0] == 0`.
    pub parent: Vec<usize>,
    /// Index into `FeederGraph::lines` of the line feeding bus `b` (`b >= 1`).
    pub parent_line: Vec<usize>,
    pub depth: Vec<usize>,
    /// Buses in breadth-first order from the head.
    pub order: Vec<usize>,
}

impl FeederGraph {
    pub fn from_json_str(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut feeder: FeederGraph = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })?;
        feeder.buses.sort_by_key(|b| b.id);
        feeder.topology()?;
        Ok(feeder)
    }

    /// Number of non-head buses.
    pub fn n(&self) -> usize {
        self.buses.len().saturating_sub(1)
    }

    pub fn bus(&self, id: usize) -> Option<&Bus> {
        self.buses.get(id).filter(|b| b.id == id)
    }

    /// Bus ids carrying a DER, ascending.
    pub fn der_buses(&self) -> Vec<usize> {
        self.buses.iter().filter(|b| b.has_der).map(|b| b.id).collect()
    }

    pub fn load_p(&self) -> Vec<f64> {
        self.buses.iter().skip(1).map(|b| b.load_p).collect()
    }

    pub fn load_q(&self) -> Vec<f64> {
        self.buses.iter().skip(1).map(|b| b.load_q).collect()
    }

    /// Flags an additional bus as hosting a DER.
    pub fn add_der(&mut self, id: usize) -> Result<()> {
        if id == 0 {
            return Err(Error::Config("the feeder head cannot host a DER".into()));
        }
        let n = self.n();
        let bus = self
            .buses
            .get_mut(id)
            .filter(|b| b.id == id)
            .ok_or_else(|| Error::Config(format!("unknown bus {id} (feeder has buses 0..={n})")))?;
        bus.has_der = true;
        Ok(())
    }

    /// Checks bus/line data and orients the lines into a tree rooted at bus 0.
    pub fn topology(&self) -> Result<Topology> {
        if !(self.v_nom > 0.0 && self.v_nom.is_finite()) {
            return Err(Error::Config(format!("v_nom must be positive, got {}", self.v_nom)));
        }
        if self.buses.is_empty() {
            return Err(Error::Config("feeder has no buses".into()));
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.id != i {
                return Err(Error::Config(format!(
                    "bus ids must be unique and contiguous from 0; position {i} holds id {}",
                    bus.id
                )));
            }
            if !bus.load_p.is_finite() || !bus.load_q.is_finite() {
                return Err(Error::Config(format!("bus {i} has a non-finite load")));
            }
        }
        let head = &self.buses[0];
        if head.has_der || head.load_p != 0.0 || head.load_q != 0.0 {
            return Err(Error::Config(
                "bus 0 (feeder head) must carry no load and no DER".into(),
            ));
        }

        let nb = self.buses.len();
        if self.lines.len() != nb - 1 {
            return Err(Error::Structure(format!(
                "a radial feeder with {nb} buses needs {} lines, found {}",
                nb - 1,
                self.lines.len()
            )));
        }
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nb];
        for (k, line) in self.lines.iter().enumerate() {
            if line.from >= nb || line.to >= nb {
                return Err(Error::Config(format!(
                    "line {k} ({} - {}) references an unknown bus",
                    line.from, line.to
                )));
            }
            if line.from == line.to {
                return Err(Error::Structure(format!(
                    "line {k} is a self loop at bus {}",
                    line.from
                )));
            }
            if !(line.r >= 0.0 && line.r.is_finite()) || !line.x.is_finite() {
                return Err(Error::Config(format!(
                    "line {k} needs r >= 0 and finite x (r = {}, x = {})",
                    line.r, line.x
                )));
            }
            adj[line.from].push((line.to, k));
            adj[line.to].push((line.from, k));
        }

        let mut parent = vec![usize::MAX; nb];
        let mut parent_line = vec![usize::MAX; nb];
        let mut depth = vec![0; nb];
        let mut order = Vec::with_capacity(nb);
        let mut queue = VecDeque::from([0usize]);
        parent[0] = 0;
        while let Some(b) = queue.pop_front() {
            order.push(b);
            for &(nbr, k) in &adj[b] {
                if nbr == 0 || parent[nbr] != usize::MAX {
                    continue;
                }
                parent[nbr] = b;
                parent_line[nbr] = k;
                depth[nbr] = depth[b] + 1;
                queue.push_back(nbr);
            }
        }
        if order.len() != nb {
            // N lines and not all reachable implies a cycle somewhere
            let missing: Vec<usize> = (0..nb).filter(|&b| parent[b] == usize::MAX).collect();
            return Err(Error::Structure(format!(
                "buses {missing:?} are not reachable from the feeder head"
            )));
        }
        Ok(Topology {
            parent,
            parent_line,
            depth,
            order,
        })
    }

    /// Combines DER setpoints with this feeder's nominal loads.
    pub fn compute_net_injections(&self, der_setpoints: &BTreeMap<usize, (f64, f64)>) -> Result<InjectionVector> {
        let mut inj = InjectionVector::from_loads(&self.load_p(), &self.load_q())?;
        for (&bus, &(p, q)) in der_setpoints {
            self.check_der_bus(bus)?;
            inj.add_at_bus(bus, p, q);
        }
        Ok(inj)
    }

    pub(crate) fn check_der_bus(&self, bus: usize) -> Result<()> {
        match self.bus(bus) {
            None => Err(Error::Config(format!("setpoint for unknown bus {bus}"))),
            Some(b) if !b.has_der => Err(Error::Config(format!("setpoint at bus {bus}, which has no DER"))),
            Some(_) => Ok(()),
        }
    }

    pub fn build_sensitivity(&self) -> Result<SensitivityModel> {
        let topo = self.topology()?;
        let nb = self.buses.len();
        let n = nb - 1;

        let mut cum_r = vec![0.0; nb];
        let mut cum_x = vec![0.0; nb];
        for &b in topo.order.iter().skip(1) {
            let line = &self.lines[topo.parent_line[b]];
            cum_r[b] = cum_r[topo.parent[b]] + line.r;
            cum_x[b] = cum_x[topo.parent[b]] + line.x;
        }

        let mut voltage_p = DMatrix::zeros(n, n);
        let mut voltage_q = DMatrix::zeros(n, n);
        for i in 1..nb {
            for j in i..nb {
                let lca = lowest_common_ancestor(&topo, i, j);
                let r = cum_r[lca] / self.v_nom;
                let x = cum_x[lca] / self.v_nom;
                voltage_p[(i - 1, j - 1)] = r;
                voltage_p[(j - 1, i - 1)] = r;
                voltage_q[(i - 1, j - 1)] = x;
                voltage_q[(j - 1, i - 1)] = x;
            }
        }

        let mut head_p = DMatrix::zeros(2, n);
        let mut head_q = DMatrix::zeros(2, n);
        head_p.row_mut(0).fill(-1.0);
        head_q.row_mut(1).fill(-1.0);

        Ok(SensitivityModel {
            voltage_p,
            voltage_q,
            head_p,
            head_q,
            voltage_offset: DVector::from_element(n, self.v_nom),
            head_offset: [0.0, 0.0],
        })
    }
}

fn lowest_common_ancestor(topo: &Topology, mut a: usize, mut b: usize) -> usize {
    while topo.depth[a] > topo.depth[b] {
        a = topo.parent[a];
    }
    while topo.depth[b] > topo.depth[a] {
        b = topo.parent[b];
    }
    while a != b {
        a = topo.parent[a];
        b = topo.parent[b];
    }
    a
}

/// Affine voltage and feeder-head model:
///
/// ```text
/// |v|      = voltage_p * p + voltage_q * q + voltage_offset
/// [P0; Q0] = head_p    * p + head_q    * q + head_offset
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityModel {
    pub voltage_p: DMatrix<f64>,
    pub voltage_q: DMatrix<f64>,
    /// 2 x N; row 0 maps to P0, row 1 to Q0.
    pub head_p: DMatrix<f64>,
    pub head_q: DMatrix<f64>,
    pub voltage_offset: DVector<f64>,
    pub head_offset: [f64; 2],
}

impl SensitivityModel {
    pub fn n(&self) -> usize {
        self.voltage_offset.len()
    }

    fn check(&self, inj: &InjectionVector) -> Result<()> {
        if inj.p.len() != self.n() {
            return Err(Error::dim("active injection vector", self.n(), inj.p.len()));
        }
        if inj.q.len() != self.n() {
            return Err(Error::dim("reactive injection vector", self.n(), inj.q.len()));
        }
        Ok(())
    }

    /// Voltage magnitudes at buses `1..=N`.
    pub fn evaluate_voltages(&self, inj: &InjectionVector) -> Result<Vec<f64>> {
        self.check(inj)?;
        let p = DVector::from_column_slice(&inj.p);
        let q = DVector::from_column_slice(&inj.q);
        let v = &self.voltage_p * p + &self.voltage_q * q + &self.voltage_offset;
        Ok(v.iter().copied().collect())
    }

    /// `(P0, Q0)` at the feeder head.
    pub fn evaluate_feeder_head(&self, inj: &InjectionVector) -> Result<(f64, f64)> {
        self.check(inj)?;
        let mut out = self.head_offset;
        for (row, o) in out.iter_mut().enumerate() {
            for j in 0..self.n() {
                *o += self.head_p[(row, j)] * inj.p[j] + self.head_q[(row, j)] * inj.q[j];
            }
        }
        Ok((out[0], out[1]))
    }
}

/// Nonlinear single-phase DistFlow solver, used to check the linear model.
#[cfg(any(test, feature = "oracle"))]
pub mod distflow {
    use super::{FeederGraph, InjectionVector};
    use crate::{Error, Result};

    const MAX_ITER: usize = 200;
    const TOL: f64 = 1e-13;

    /// Solves the branch-flow equations by backward/forward sweeps and
    /// returns `|V_n|` for buses `1..=N`. The head is held at `v_nom`.
    pub fn solve_distflow_oracle(feeder: &FeederGraph, inj: &InjectionVector) -> Result<Vec<f64>> {
        let topo = feeder.topology()?;
        let nb = feeder.buses.len();
        if inj.len() != nb - 1 {
            return Err(Error::dim("injection vector", nb - 1, inj.len()));
        }
        let mut w = vec![feeder.v_nom * feeder.v_nom; nb];
        // Sending-end flows on the line feeding each bus.
        let mut pf = vec![0.0; nb];
        let mut qf = vec![0.0; nb];
        let mut loss = vec![0.0; nb];

        let mut converged = false;
        for _ in 0..MAX_ITER {
            let mut acc_p = vec![0.0; nb];
            let mut acc_q = vec![0.0; nb];
            for &b in topo.order.iter().rev() {
                if b == 0 {
                    continue;
                }
                let line = &feeder.lines[topo.parent_line[b]];
                pf[b] = -inj.p[b - 1] + acc_p[b] + line.r * loss[b];
                qf[b] = -inj.q[b - 1] + acc_q[b] + line.x * loss[b];
                acc_p[topo.parent[b]] += pf[b];
                acc_q[topo.parent[b]] += qf[b];
            }
            let mut delta: f64 = 0.0;
            for &b in topo.order.iter().skip(1) {
                let line = &feeder.lines[topo.parent_line[b]];
                let wp = w[topo.parent[b]];
                let l = (pf[b] * pf[b] + qf[b] * qf[b]) / wp;
                let wb = wp - 2.0 * (line.r * pf[b] + line.x * qf[b]) + (line.r * line.r + line.x * line.x) * l;
                delta = delta.max((wb - w[b]).abs()).max((l - loss[b]).abs());
                w[b] = wb;
                loss[b] = l;
            }
            if delta < TOL {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Scenario(format!(
                "DistFlow oracle did not converge in {MAX_ITER} iterations"
            )));
        }

        // residual check against the untouched equations
        let mut children_p = vec![0.0; nb];
        let mut children_q = vec![0.0; nb];
        for b in 1..nb {
            children_p[topo.parent[b]] += pf[b];
            children_q[topo.parent[b]] += qf[b];
        }
        let mut residual: f64 = 0.0;
        for b in 1..nb {
            let line = &feeder.lines[topo.parent_line[b]];
            let wp = w[topo.parent[b]];
            let l = (pf[b] * pf[b] + qf[b] * qf[b]) / wp;
            residual = residual
                .max((pf[b] - (-inj.p[b - 1] + children_p[b] + line.r * l)).abs())
                .max((qf[b] - (-inj.q[b - 1] + children_q[b] + line.x * l)).abs())
                .max(
                    (w[b] - (wp - 2.0 * (line.r * pf[b] + line.x * qf[b]) + (line.r * line.r + line.x * line.x) * l))
                        .abs(),
                );
        }
        if residual >= 1e-10 {
            return Err(Error::Scenario(format!(
                "DistFlow oracle residual {residual:e} too large"
            )));
        }
        Ok(w[1..].iter().map(|v| v.sqrt()).collect())
    }
}
