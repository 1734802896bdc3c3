//! Downlink star network: one controller, `n_der` point-to-point links.
//!
//! Each control interval the controller sends one UDP datagram per DER. A
//! datagram reaches its DER after serialization plus propagation delay; the
//! DER then logs it after an extra uniform jitter drawn per packet from a
//! stream seeded by `(seed, der_id)`. There is no background traffic, so no
//! queuing occurs.
//!
//! Traces use the three-column CSV log `rx_time_sec,der_id,delay_ms` with no
//! header, 6 decimals on the reception time and 3 on the delay.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_TRACE_FILE: &str = "der_downlink_delay.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub n_der: u32,
    pub link_rate_bps: f64,
    pub link_delay_ms: f64,
    pub jitter_min_ms: f64,
    pub jitter_max_ms: f64,
    pub send_interval_s: f64,
    pub payload_bytes: u32,
    /// Protocol overhead added to every datagram on the wire.
    pub header_bytes: u32,
    pub sim_time_s: f64,
    pub seed: u64,
    /// Constant delay added on every link. Not part of the reference setup;
    /// used to force multi-interval staleness.
    pub extra_delay_ms: f64,
    /// Independent per-packet drop probability. Not part of the reference setup.
    pub loss_prob: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_der: 18,
            link_rate_bps: 10e6,
            link_delay_ms: 1.0,
            jitter_min_ms: 1.0,
            jitter_max_ms: 150.0,
            send_interval_s: 1.0,
            payload_bytes: 64,
            header_bytes: 0,
            sim_time_s: 86400.0,
            seed: 1,
            extra_delay_ms: 0.0,
            loss_prob: 0.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_der < 1 {
            return fail("network.n_der must be at least 1".into());
        }
        if !(self.link_rate_bps > 0.0 && self.link_rate_bps.is_finite()) {
            return fail(format!(
                "network.link_rate_bps must be positive, got {}",
                self.link_rate_bps
            ));
        }
        if !(self.send_interval_s > 0.0 && self.send_interval_s.is_finite()) {
            return fail(format!(
                "network.send_interval_s must be positive, got {}",
                self.send_interval_s
            ));
        }
        if !(self.jitter_min_ms >= 0.0 && self.jitter_min_ms <= self.jitter_max_ms && self.jitter_max_ms.is_finite()) {
            return fail(format!(
                "network jitter bounds must satisfy 0 <= jitter_min_ms <= jitter_max_ms (got {} and {})",
                self.jitter_min_ms, self.jitter_max_ms
            ));
        }
        if !(self.link_delay_ms >= 0.0 && self.extra_delay_ms >= 0.0) {
            return fail("network delays must be non-negative".into());
        }
        if !(self.sim_time_s >= 0.0 && self.sim_time_s.is_finite()) {
            return fail(format!(
                "network.sim_time_s must be non-negative, got {}",
                self.sim_time_s
            ));
        }
        if !(0.0..1.0).contains(&self.loss_prob) {
            return fail(format!("network.loss_prob must lie in [0, 1), got {}", self.loss_prob));
        }
        Ok(())
    }

    /// Serialization time of one datagram, seconds.
    pub fn tx_time_s(&self) -> f64 {
        8.0 * f64::from(self.payload_bytes + self.header_bytes) / self.link_rate_bps
    }

    /// Deterministic part of the end-to-end delay, milliseconds.
    pub fn base_delay_ms(&self) -> f64 {
        self.tx_time_s() * 1000.0 + self.link_delay_ms + self.extra_delay_ms
    }

    pub fn packets_per_der(&self) -> u64 {
        (self.sim_time_s / self.send_interval_s).floor() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayRecord {
    pub rx_time_sec: f64,
    pub der_id: u32,
    pub delay_ms: f64,
}

impl DelayRecord {
    /// Transmit time implied by the record, seconds.
    pub fn tx_time_sec(&self) -> f64 {
        self.rx_time_sec - self.delay_ms / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DelayTrace {
    pub records: Vec<DelayRecord>,
    /// Generating configuration, if the trace was simulated here.
    pub config: Option<NetConfig>,
}

impl DelayTrace {
    /// Highest DER id present (or configured).
    pub fn n_der(&self) -> u32 {
        let seen = self.records.iter().map(|r| r.der_id).max().unwrap_or(0);
        self.config.as_ref().map_or(seen, |c| c.n_der.max(seen))
    }

    /// Latest reception time in the trace, seconds.
    pub fn horizon_s(&self) -> f64 {
        let seen = self.records.iter().map(|r| r.rx_time_sec).fold(0.0, f64::max);
        self.config.as_ref().map_or(seen, |c| c.sim_time_s.max(seen))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 24);
        for r in &self.records {
            writeln!(out, "{:.6},{},{:.3}", r.rx_time_sec, r.der_id, r.delay_ms).unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    /// Controller transmits packet `seq_no` for `der` (1-based).
    Send { der: u32, seq_no: u64 },
    /// Packet reaches the DER's UDP server.
    Arrive { der: u32, tx: f64 },
    /// Jittered logging of a received packet.
    Log { der: u32, tx: f64 },
}

#[derive(Debug)]
struct Scheduled {
    time: f64,
    order: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // min-heap on (time, insertion order)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.order.cmp(&self.order))
    }
}

struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    next_order: u64,
}

impl EventQueue {
    fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            next_order: 0,
        }
    }

    fn schedule(&mut self, time: f64, event: Event) {
        self.heap.push(Scheduled {
            time,
            order: self.next_order,
            event,
        });
        self.next_order += 1;
    }

    fn pop(&mut self) -> Option<(f64, Event)> {
        self.heap.pop().map(|s| (s.time, s.event))
    }
}

/// Random stream for one DER link.
pub fn der_stream(seed: u64, der_id: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(der_id));
    rng
}

/// Rounds through the CSV text representation so that in-memory and
/// on-disk traces compare equal.
fn quantize(v: f64, decimals: usize) -> f64 {
    format!("{v:.decimals$}").parse().unwrap()
}

pub fn simulate_downlink(config: &NetConfig) -> Result<DelayTrace> {
    config.validate()?;
    let jitter = Uniform::new_inclusive(config.jitter_min_ms, config.jitter_max_ms)
        .map_err(|e| Error::Config(format!("jitter distribution: {e}")))?;
    let mut streams: Vec<ChaCha8Rng> = (1..=config.n_der).map(|i| der_stream(config.seed, i)).collect();
    let n_packets = config.packets_per_der();
    let wire_s = config.tx_time_s() + (config.link_delay_ms + config.extra_delay_ms) / 1000.0;

    let mut queue = EventQueue::new();
    if n_packets > 0 {
        for der in 1..=config.n_der {
            queue.schedule(0.0, Event::Send { der, seq_no: 0 });
        }
    }

    let mut records = Vec::with_capacity((n_packets * u64::from(config.n_der)) as usize);
    while let Some((now, event)) = queue.pop() {
        match event {
            Event::Send { der, seq_no } => {
                if seq_no + 1 < n_packets {
                    let next = (seq_no + 1) as f64 * config.send_interval_s;
                    queue.schedule(
                        next,
                        Event::Send {
                            der,
                            seq_no: seq_no + 1,
                        },
                    );
                }
                let rng = &mut streams[der as usize - 1];
                if config.loss_prob > 0.0 && rng.random::<f64>() < config.loss_prob {
                    continue;
                }
                queue.schedule(now + wire_s, Event::Arrive { der, tx: now });
            }
            Event::Arrive { der, tx } => {
                let j_ms = jitter.sample(&mut streams[der as usize - 1]);
                queue.schedule(now + j_ms / 1000.0, Event::Log { der, tx });
            }
            Event::Log { der, tx } => records.push(DelayRecord {
                rx_time_sec: quantize(now, 6),
                der_id: der,
                delay_ms: quantize((now - tx) * 1000.0, 3),
            }),
        }
    }

    Ok(DelayTrace {
        records,
        config: Some(config.clone()),
    })
}

pub fn write_trace(trace: &DelayTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(trace.to_csv_string().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<DelayTrace> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace(BufReader::new(file), &path.display().to_string())
}

/// Parses a trace log. Blank lines and a leading `rx_time_sec,...` header
/// are tolerated; whitespace around fields is ignored.
pub fn parse_trace(reader: impl BufRead, source: &str) -> Result<DelayTrace> {
    let err = |line: usize, msg: String| Error::Parse {
        path: source.to_owned(),
        line,
        msg,
    };
    let mut records = Vec::new();
    let mut warned = false;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let line = line.trim();
        if line.is_empty() || (records.is_empty() && line.starts_with("rx_time_sec")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err(lineno, format!("expected 3 fields, found {}", fields.len())));
        }
        let rx_time_sec: f64 = fields[0]
            .parse()
            .map_err(|e| err(lineno, format!("bad rx_time_sec {:?}: {e}", fields[0])))?;
        let der_id: u32 = fields[1]
            .parse()
            .map_err(|e| err(lineno, format!("bad der_id {:?}: {e}", fields[1])))?;
        let delay_ms: f64 = fields[2]
            .parse()
            .map_err(|e| err(lineno, format!("bad delay_ms {:?}: {e}", fields[2])))?;
        if !rx_time_sec.is_finite() || !delay_ms.is_finite() || delay_ms <= 0.0 || der_id == 0 {
            return Err(err(
                lineno,
                "record needs finite time, der_id >= 1 and positive delay".into(),
            ));
        }
        if let Some(prev) = records.last().map(|r: &DelayRecord| r.rx_time_sec) {
            if rx_time_sec < prev && !warned {
                log::warn!("{source}:{lineno}: reception times are not monotone");
                warned = true;
            }
        }
        records.push(DelayRecord {
            rx_time_sec,
            der_id,
            delay_ms,
        });
    }
    Ok(DelayTrace { records, config: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepDelivery {
    /// Duals generated at `src_step` arrived `delay_steps` steps later.
    Delivered {
        src_step: u64,
        delay_steps: u64,
    },
    NoPacket,
}

/// Per-DER, per-step delivery decisions over a window of control steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    pub first_step: u64,
    /// `per_der[i][k]` is DER `i + 1` at step `first_step + k`.
    pub per_der: Vec<Vec<StepDelivery>>,
}

impl StepSchedule {
    pub fn n_steps(&self) -> usize {
        self.per_der.first().map_or(0, Vec::len)
    }

    /// Delivery for DER `der_id` (1-based) at absolute step `step`.
    pub fn get(&self, der_id: u32, step: u64) -> StepDelivery {
        step.checked_sub(self.first_step)
            .and_then(|k| self.per_der.get(der_id as usize - 1)?.get(k as usize))
            .copied()
            .unwrap_or(StepDelivery::NoPacket)
    }
}

/// Tolerance, in steps, on transmit times reconstructed from rounded logs.
const SRC_STEP_SLACK: f64 = 1e-4;

pub fn derive_step_delays(trace: &DelayTrace, control_interval_s: f64, n_steps: usize) -> Result<StepSchedule> {
    derive_step_delays_window(trace, control_interval_s, 0, n_steps, trace.n_der())
}

/// Like [`derive_step_delays`] over steps `first_step..first_step + n_steps`.
pub fn derive_step_delays_window(
    trace: &DelayTrace,
    control_interval_s: f64,
    first_step: u64,
    n_steps: usize,
    n_der: u32,
) -> Result<StepSchedule> {
    if !(control_interval_s > 0.0) {
        return Err(Error::Config(format!(
            "control interval must be positive, got {control_interval_s}"
        )));
    }
    let mut latest_rx = vec![vec![f64::NEG_INFINITY; n_steps]; n_der as usize];
    let mut per_der = vec![vec![StepDelivery::NoPacket; n_steps]; n_der as usize];
    for r in &trace.records {
        if r.der_id == 0 || r.der_id > n_der {
            continue;
        }
        let step = (r.rx_time_sec / control_interval_s).floor();
        if step < first_step as f64 {
            continue;
        }
        let k = (step as u64 - first_step) as usize;
        if k >= n_steps {
            continue;
        }
        let slot = &mut latest_rx[r.der_id as usize - 1][k];
        if r.rx_time_sec < *slot {
            continue;
        }
        *slot = r.rx_time_sec;
        let src = ((r.tx_time_sec() / control_interval_s) + SRC_STEP_SLACK)
            .floor()
            .max(0.0) as u64;
        let src = src.min(step as u64);
        per_der[r.der_id as usize - 1][k] = StepDelivery::Delivered {
            src_step: src,
            delay_steps: step as u64 - src,
        };
    }
    Ok(StepSchedule { first_step, per_der })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small(n_der: u32, sim_time_s: f64) -> NetConfig {
        NetConfig {
            n_der,
            sim_time_s,
            ..NetConfig::default()
        }
    }

    #[test]
    fn deterministic_delay_without_jitter() {
        let cfg = NetConfig {
            jitter_min_ms: 0.0,
            jitter_max_ms: 0.0,
            ..small(2, 5.0)
        };
        let trace = simulate_downlink(&cfg).unwrap();
        assert_eq!(trace.records.len(), 10);
        for r in &trace.records {
            assert_abs_diff_eq!(r.delay_ms, 1.051, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(cfg.base_delay_ms(), 1.0512, epsilon = 1e-12);
    }

    #[test]
    fn header_bytes_add_serialization_time() {
        let cfg = NetConfig {
            header_bytes: 30,
            ..NetConfig::default()
        };
        assert_abs_diff_eq!(cfg.tx_time_s() * 1000.0, 8.0 * 94.0 / 1e7 * 1000.0, epsilon = 1e-15);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = simulate_downlink(&small(3, 50.0)).unwrap();
        let b = simulate_downlink(&small(3, 50.0)).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        let c = simulate_downlink(&NetConfig {
            seed: 2,
            ..small(3, 50.0)
        })
        .unwrap();
        assert_ne!(a.to_csv_string(), c.to_csv_string());
    }

    #[test]
    fn per_der_streams_ignore_fleet_size() {
        let a = simulate_downlink(&small(2, 20.0)).unwrap();
        let b = simulate_downlink(&small(5, 20.0)).unwrap();
        let pick = |t: &DelayTrace, id| t.records.iter().filter(|r| r.der_id == id).copied().collect::<Vec<_>>();
        assert_eq!(pick(&a, 2), pick(&b, 2));
    }

    #[test]
    fn records_sorted_and_counted() {
        let t = simulate_downlink(&small(4, 30.0)).unwrap();
        assert_eq!(t.records.len(), 4 * 30);
        assert!(t.records.windows(2).all(|w| w[0].rx_time_sec <= w[1].rx_time_sec));
    }

    #[test]
    fn loss_drops_packets() {
        let t = simulate_downlink(&NetConfig {
            loss_prob: 0.5,
            ..small(2, 200.0)
        })
        .unwrap();
        assert!(t.records.len() > 100 && t.records.len() < 300, "{}", t.records.len());
    }

    #[test]
    fn config_validation() {
        assert!(NetConfig {
            jitter_min_ms: 5.0,
            jitter_max_ms: 1.0,
            ..NetConfig::default()
        }
        .validate()
        .is_err());
        assert!(NetConfig {
            n_der: 0,
            ..NetConfig::default()
        }
        .validate()
        .is_err());
        assert!(NetConfig {
            link_rate_bps: 0.0,
            ..NetConfig::default()
        }
        .validate()
        .is_err());
        assert!(NetConfig {
            send_interval_s: 0.0,
            ..NetConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn csv_line_format() {
        let t = DelayTrace {
            records: vec![DelayRecord {
                rx_time_sec: 12.345678,
                der_id: 3,
                delay_ms: 76.432,
            }],
            config: None,
        };
        assert_eq!(t.to_csv_string(), "12.345678,3,76.432\n");
        assert_eq!(DelayTrace::default().to_csv_string(), "");
    }

    #[test]
    fn parse_reports_line_numbers() {
        let text = "0.050000,1,50.000\n1.0,2\n";
        match parse_trace(text.as_bytes(), "t.csv") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let text = "0.05,1,abc\n";
        assert!(matches!(
            parse_trace(text.as_bytes(), "t.csv"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn parse_tolerates_header_and_spaces() {
        let text = "rx_time_sec, der_id, delay_ms\n0.076, 1, 76.0\n\n1.2, 2, 200.5\n";
        let t = parse_trace(text.as_bytes(), "ext.csv").unwrap();
        assert_eq!(t.records.len(), 2);
        assert_eq!(
            t.records[1],
            DelayRecord {
                rx_time_sec: 1.2,
                der_id: 2,
                delay_ms: 200.5
            }
        );
    }

    #[test]
    fn step_delay_same_interval() {
        let t = DelayTrace {
            records: vec![DelayRecord {
                rx_time_sec: 0.05,
                der_id: 1,
                delay_ms: 50.0,
            }],
            config: None,
        };
        let s = derive_step_delays(&t, 1.0, 2).unwrap();
        assert_eq!(
            s.get(1, 0),
            StepDelivery::Delivered {
                src_step: 0,
                delay_steps: 0
            }
        );
        assert_eq!(s.get(1, 1), StepDelivery::NoPacket);
    }

    #[test]
    fn step_delay_latest_packet_wins() {
        let t = DelayTrace {
            records: vec![
                DelayRecord {
                    rx_time_sec: 3.2,
                    der_id: 1,
                    delay_ms: 1200.0,
                },
                DelayRecord {
                    rx_time_sec: 3.9,
                    der_id: 1,
                    delay_ms: 900.0,
                },
                DelayRecord {
                    rx_time_sec: 3.5,
                    der_id: 1,
                    delay_ms: 2500.0,
                },
            ],
            config: None,
        };
        let s = derive_step_delays(&t, 1.0, 5).unwrap();
        assert_eq!(
            s.get(1, 3),
            StepDelivery::Delivered {
                src_step: 3,
                delay_steps: 0
            }
        );
        assert_eq!(s.get(1, 2), StepDelivery::NoPacket);
    }

    #[test]
    fn step_delay_multi_step() {
        let t = DelayTrace {
            records: vec![DelayRecord {
                rx_time_sec: 5.076,
                der_id: 2,
                delay_ms: 3076.0,
            }],
            config: None,
        };
        let s = derive_step_delays(&t, 1.0, 6).unwrap();
        assert_eq!(
            s.get(2, 5),
            StepDelivery::Delivered {
                src_step: 2,
                delay_steps: 3
            }
        );
        assert_eq!(s.get(1, 5), StepDelivery::NoPacket);
    }

    #[test]
    fn window_offsets_steps() {
        let t = simulate_downlink(&small(2, 20.0)).unwrap();
        let s = derive_step_delays_window(&t, 1.0, 10, 5, 2).unwrap();
        assert_eq!(s.n_steps(), 5);
        assert_eq!(
            s.get(1, 12),
            StepDelivery::Delivered {
                src_step: 12,
                delay_steps: 0
            }
        );
        assert_eq!(s.get(1, 9), StepDelivery::NoPacket);
    }
}
