mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vpp_cosim::dispatch::{project_capability, update_duals, ControlParams, DualState};
use vpp_cosim::feeder::distflow::solve_distflow_oracle;
use vpp_cosim::netsim::{self, DelayRecord, DelayTrace, StepDelivery};
use vpp_cosim::profiles::{interpolate_linear, scale_irradiance_to_pv, TimeSeries, Unit};

fn capability() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.05f64..2.0).prop_flat_map(|s| (-3.0 * s..3.0 * s, -3.0 * s..3.0 * s, 0.0..2.0 * s, Just(s)))
}

fn series() -> impl Strategy<Value = TimeSeries> {
    (prop::collection::vec(-5.0f64..5.0, 2..20), 1u32..7200, 0u32..86400).prop_map(|(values, res, start)| TimeSeries {
        start_time: start as f64,
        resolution_s: res as f64,
        values,
        unit: Unit::Raw,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn projection_is_feasible_and_idempotent((p, q, a, s) in capability()) {
        let (pp, pq) = project_capability(p, q, a, s);
        prop_assert!(pp >= 0.0 && pp <= a.min(s) + 1e-15);
        prop_assert!(pp.hypot(pq) <= s * (1.0 + 1e-15));
        let (p2, q2) = project_capability(pp, pq, a, s);
        prop_assert!((p2 - pp).abs() <= 1e-15 && (q2 - pq).abs() <= 1e-15);
    }

    #[test]
    fn projection_satisfies_variational_inequality(
        (p, q, a, s) in capability(),
        r in 0.0f64..1.0,
        th in -std::f64::consts::PI..std::f64::consts::PI,
    ) {
        // any feasible z: (x - Px) . (z - Px) <= 0
        let (pp, pq) = project_capability(p, q, a, s);
        let (zp, zq) = project_capability(r * s * th.cos(), r * s * th.sin(), a, s);
        let inner = (p - pp) * (zp - pp) + (q - pq) * (zq - pq);
        prop_assert!(inner <= 1e-12, "inner product {inner}");
    }

    #[test]
    fn projection_is_nonexpansive((p, q, a, s) in capability(), dp in -1.0f64..1.0, dq in -1.0f64..1.0) {
        let (x1, y1) = project_capability(p, q, a, s);
        let (x2, y2) = project_capability(p + dp, q + dq, a, s);
        prop_assert!((x1 - x2).hypot(y1 - y2) <= dp.hypot(dq) + 1e-12);
    }

    #[test]
    fn duals_stay_nonnegative(
        seed in any::<u64>(),
        v in prop::collection::vec(0.8f64..1.2, 3),
        p0 in -1.0f64..1.0,
        p0_set in -1.0f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ControlParams { monitored_buses: vec![1, 2, 3], ..ControlParams::default() };
        let d0 = common::random_duals(&mut rng, 3);
        let d = update_duals(&d0, &v, p0, p0_set, &params).unwrap();
        prop_assert!(d.is_nonnegative());
        prop_assert_eq!(d.step_index, d0.step_index + 1);
    }

    #[test]
    fn duals_bounded_by_residual_over_epsilon(r in 0.0f64..0.2, steps in 1usize..2000) {
        // with a constant residual r the iteration stays below r / eps
        let params = ControlParams { monitored_buses: vec![1], ..ControlParams::default() };
        let mut d = DualState::zeros(1);
        for _ in 0..steps {
            d = update_duals(&d, &[params.v_max + r], 0.0, 0.0, &params).unwrap();
        }
        prop_assert!(d.mu[0] <= r / params.epsilon + 1e-9);
        prop_assert_eq!(d.gamma[0], 0.0);
    }

    #[test]
    fn interpolation_hits_knots_and_stays_between_neighbours(s in series(), div in 1u32..10) {
        let res = s.resolution_s / div as f64;
        let fine = interpolate_linear(&s, res).unwrap();
        for (k, v) in s.values.iter().enumerate() {
            let t = s.start_time + k as f64 * s.resolution_s;
            prop_assert!((fine.value_at(t).unwrap() - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
        for (j, v) in fine.values.iter().enumerate() {
            let k = j / div as usize;
            let (a, b) = (s.values[k.min(s.values.len() - 1)], s.values[(k + 1).min(s.values.len() - 1)]);
            prop_assert!(*v >= a.min(b) - 1e-9 && *v <= a.max(b) + 1e-9);
        }
    }

    #[test]
    fn pv_scaling_is_homogeneous(s in series(), k in 0.0f64..4.0, cap in 1.0f64..500.0) {
        let irr = TimeSeries { values: s.values.iter().map(|v| v.abs() * 50.0).collect(), ..s };
        let base = scale_irradiance_to_pv(&irr, cap, 1000.0).unwrap();
        let scaled_irr = scale_irradiance_to_pv(&irr.scaled(k, Unit::WattsPerM2), cap, 1000.0).unwrap();
        let scaled_cap = scale_irradiance_to_pv(&irr, cap * k, 1000.0).unwrap();
        for ((a, b), c) in base.values.iter().zip(&scaled_irr.values).zip(&scaled_cap.values) {
            prop_assert!((a * k - b).abs() <= 1e-9 * (1.0 + b.abs()));
            prop_assert!((a * k - c).abs() <= 1e-9 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn sensitivities_symmetric_nonnegative(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feeder = common::random_feeder(&mut rng, n);
        let m = feeder.build_sensitivity().unwrap();
        for i in 0..n - 1 {
            for j in 0..n - 1 {
                prop_assert_eq!(m.voltage_p[(i, j)], m.voltage_p[(j, i)]);
                prop_assert_eq!(m.voltage_q[(i, j)], m.voltage_q[(j, i)]);
                prop_assert!(m.voltage_p[(i, j)] >= 0.0 && m.voltage_q[(i, j)] >= 0.0);
                // shared path never exceeds either own path
                prop_assert!(m.voltage_p[(i, j)] <= m.voltage_p[(i, i)].min(m.voltage_p[(j, j)]));
            }
        }
        let topo = feeder.topology().unwrap();
        for b in 1..n {
            let parent = topo.parent[b];
            if parent != 0 {
                prop_assert!(m.voltage_p[(b - 1, b - 1)] > m.voltage_p[(parent - 1, parent - 1)]);
            }
        }
    }

    #[test]
    fn feeder_head_is_negative_total_injection(seed in any::<u64>(), n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feeder = common::random_feeder(&mut rng, n);
        let m = feeder.build_sensitivity().unwrap();
        let inj = common::random_injections(&mut rng, n - 1, 0.1);
        let (p0, q0) = m.evaluate_feeder_head(&inj).unwrap();
        prop_assert!((p0 + inj.p.iter().sum::<f64>()).abs() <= 1e-12);
        prop_assert!((q0 + inj.q.iter().sum::<f64>()).abs() <= 1e-12);
    }

    #[test]
    fn linear_error_is_second_order(seed in any::<u64>(), n in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feeder = common::random_feeder(&mut rng, n);
        let m = feeder.build_sensitivity().unwrap();
        let inj = common::random_injections(&mut rng, n - 1, 0.05);
        let err = |k: f64| {
            let s = inj.scaled(k);
            let lin = m.evaluate_voltages(&s).unwrap();
            let exact = solve_distflow_oracle(&feeder, &s).unwrap();
            lin.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1.0), err(0.5));
        prop_assume!(e1 > 1e-10);
        // halving the injection divides the error by about four
        prop_assert!(e2 <= 0.35 * e1, "e(1) = {e1:e}, e(1/2) = {e2:e}");
    }

    #[test]
    fn trace_csv_round_trips(
        rows in prop::collection::vec((0u32..100_000, 1u32..19, 0u32..200_000), 1..50),
    ) {
        let records = rows
            .into_iter()
            .map(|(rx_ms, der_id, d_us)| DelayRecord {
                rx_time_sec: rx_ms as f64 / 1000.0 + 1e-6,
                der_id,
                delay_ms: d_us as f64 / 1000.0,
            })
            .collect();
        let trace = DelayTrace { records, config: None };
        let text = trace.to_csv_string();
        let back = netsim::parse_trace(text.as_bytes(), "prop").unwrap();
        prop_assert_eq!(back.to_csv_string(), text);
    }

    #[test]
    fn step_schedule_never_delivers_from_the_future(seed in 0u64..50, extra in 0.0f64..5000.0) {
        let cfg = netsim::NetConfig { n_der: 3, sim_time_s: 120.0, seed, extra_delay_ms: extra, ..Default::default() };
        let trace = netsim::simulate_downlink(&cfg).unwrap();
        let sched = netsim::derive_step_delays(&trace, 1.0, 120).unwrap();
        let expected = (cfg.base_delay_ms() / 1000.0) as u64;
        for (i, row) in sched.per_der.iter().enumerate() {
            for (k, d) in row.iter().enumerate() {
                if let StepDelivery::Delivered { src_step, delay_steps } = *d {
                    prop_assert_eq!(src_step + delay_steps, k as u64, "DER {} step {}", i + 1, k);
                    // jitter is below one interval, so staleness is floor or floor + 1 of the fixed delay
                    prop_assert!(delay_steps == expected || delay_steps == expected + 1, "delay {delay_steps} expected {expected} DER {} step {k}", i + 1);
                }
            }
        }
    }
}
