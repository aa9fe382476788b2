//! Property tests over the policy laws, the event queue, the estimator, and
//! the closed-form relations.

use proptest::prelude::*;

use csma_sim::analytics;
use csma_sim::engine::{Event, EventKind, EventQueue, SimTime, StationId};
use csma_sim::mar::MarObserver;
use csma_sim::metrics;
use csma_sim::policy::{ContentionPolicy, FesContext, MarHimd, MarHimdParams};

fn arb_kind() -> impl Strategy<Value = EventKind> {
    prop_oneof![
        Just(EventKind::TxEnd),
        Just(EventKind::AckTimeout),
        Just(EventKind::AckDue),
        Just(EventKind::CtsStart),
        Just(EventKind::RtsStart),
        Just(EventKind::TxStart),
        Just(EventKind::SlotTick),
        Just(EventKind::ArrivalDue),
    ]
}

proptest! {
    #[test]
    fn event_queue_dispatch_order(events in prop::collection::vec(
        (0u64..1000, arb_kind(), 0usize..8), 1..200))
    {
        let mut q = EventQueue::new();
        for (t, kind, sta) in &events {
            q.schedule(Event {
                time: SimTime(*t),
                kind: *kind,
                station: StationId(*sta),
                payload: 0,
            });
        }
        let mut prev: Option<(SimTime, EventKind, StationId)> = None;
        while let Some(ev) = q.pop() {
            if let Some((pt, pk, ps)) = prev {
                prop_assert!((pt, pk, ps) <= (ev.time, ev.kind, ev.station));
            }
            prev = Some((ev.time, ev.kind, ev.station));
        }
    }

    /// After any sequence of window observations and outcomes, the working
    /// window stays clamped, increases respect the additive floor, and
    /// decreases never raise it.
    #[test]
    fn himd_clamping_and_direction(ops in prop::collection::vec(
        (0.0f64..1.0, prop::bool::ANY), 1..300))
    {
        let params = MarHimdParams::default();
        let mut p = MarHimd::new(params.clone());
        let ctx = FesContext::default();
        for (mar, fail) in ops {
            if fail {
                p.on_failure(&ctx);
            } else {
                // force a full window with the wanted rate
                let n_tx = (mar * 1000.0).round() as u64;
                p.observe(csma_sim::policy::ChannelEvent::TxEvents(n_tx));
                p.observe(csma_sim::policy::ChannelEvent::IdleSlots(1000 - n_tx));
                let before_restore = p.current_cw();
                let rep = p.on_ack(&ctx);
                let _ = before_restore;
                if let Some(w) = rep.window {
                    if w.mar > params.mar_tar {
                        let floor = (rep.restored_cw + params.a_inc).min(params.cw_max);
                        prop_assert!(rep.cw >= floor - 1e-9,
                            "mar {} cw {} restored {}", w.mar, rep.cw, rep.restored_cw);
                    } else {
                        prop_assert!(rep.cw <= rep.restored_cw + 1e-9);
                    }
                }
            }
            let cw = p.current_cw();
            prop_assert!(cw >= params.cw_min - 1e-9 && cw <= params.cw_max + 1e-9,
                "cw {} out of bounds", cw);
        }
    }

    /// Between a first failure and the next ACK the window never exceeds the
    /// stashed value, and the ACK restores exactly that value.
    #[test]
    fn fast_recovery_bracketing(fails in 1u32..6, mar in 0.0f64..0.6) {
        let params = MarHimdParams::default();
        let mut p = MarHimd::new(params.clone());
        let ctx = FesContext::default();
        // move off the floor first
        p.observe(csma_sim::policy::ChannelEvent::TxEvents(300));
        p.on_ack(&ctx);
        let rep0 = p.on_failure(&ctx);
        prop_assert!(rep0.first);
        let stash = rep0.cw_fail;
        for _ in 1..fails {
            let rep = p.on_failure(&ctx);
            prop_assert!(!rep.first);
            prop_assert!(rep.cw <= stash + 1e-12);
        }
        let n_tx = (mar * 400.0).round() as u64;
        p.observe(csma_sim::policy::ChannelEvent::TxEvents(n_tx));
        p.observe(csma_sim::policy::ChannelEvent::IdleSlots(400 - n_tx));
        let ack = p.on_ack(&ctx);
        prop_assert_eq!(ack.restored_cw, stash);
    }

    /// The access rate strictly dominates the collision probability for any
    /// station count >= 2 over the whole attempt-probability range.
    #[test]
    fn mar_bounds_collision(n in 2usize..64, omega in 2.01f64..2048.0) {
        let (mar, rho) = analytics::mar_exceeds_collision(n, omega);
        prop_assert!(mar > rho, "n {} omega {}: {} vs {}", n, omega, mar, rho);
        prop_assert!(mar > 0.0 && mar < 1.0 && rho >= 0.0 && rho < 1.0);
    }

    /// Nearest-rank percentiles are elements of the series, ordered in q,
    /// and hit min/max at the extremes.
    #[test]
    fn percentile_properties(mut series in prop::collection::vec(0u64..10_000, 1..100),
                             q1 in 0.0f64..100.0, q2 in 0.0f64..100.0)
    {
        let lo = q1.min(q2);
        let hi = q1.max(q2);
        let vlo = metrics::percentile(&series, lo);
        let vhi = metrics::percentile(&series, hi);
        prop_assert!(vlo <= vhi);
        prop_assert!(series.contains(&vlo) && series.contains(&vhi));
        series.sort_unstable();
        prop_assert_eq!(metrics::percentile(&series, 0.0), series[0]);
        prop_assert_eq!(metrics::percentile(&series, 100.0), *series.last().unwrap());
    }

    /// The observer's ratio equals tx/(tx+idle) for any split meeting the
    /// window, and resets afterwards.
    #[test]
    fn observer_ratio(n_tx in 0u64..1000, n_idle in 0u64..1000) {
        prop_assume!(n_tx + n_idle >= 300);
        let mut o = MarObserver::new(300);
        o.record_tx(n_tx);
        o.record_idle(n_idle);
        let mar = o.compute_mar().unwrap();
        let expect = n_tx as f64 / (n_tx + n_idle) as f64;
        prop_assert!((mar - expect).abs() < 1e-12);
        prop_assert_eq!(o.samples(), 0);
    }

    /// Trace parsing accepts what the writer emits (round trip on the record
    /// level).
    #[test]
    fn trace_roundtrip(recs in prop::collection::vec((0u64..1_000_000, 1u64..65_536, prop::bool::ANY), 0..50)) {
        let mut sorted = recs.clone();
        sorted.sort_by_key(|(t, _, _)| *t);
        let mut text = String::from("timestamp_us,size_bytes,direction\n");
        for (t, b, down) in &sorted {
            text.push_str(&format!("{},{},{}\n", t, b, if *down { "down" } else { "up" }));
        }
        let parsed = csma_sim::traffic::parse_trace(&text).unwrap();
        prop_assert_eq!(parsed.len(), sorted.len());
        let total_in: u64 = sorted.iter().map(|(_, b, _)| *b).sum();
        let total_out: u64 = parsed.iter().map(|r| r.bytes).sum();
        prop_assert_eq!(total_in, total_out);
    }
}

/// The windowed estimator's spread on a synthetic i.i.d. busy/idle stream
/// matches the binomial standard error, and the deviation mass respects the
/// concentration bound.
#[test]
fn estimator_concentration_on_synthetic_stream() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let p = 0.15;
    let n_obs = 300u64;
    let windows = 10_000;
    let mut values = Vec::with_capacity(windows);
    let mut obs = MarObserver::new(n_obs);
    for _ in 0..windows {
        for _ in 0..n_obs {
            if rng.gen_bool(p) {
                obs.record_tx(1);
            } else {
                obs.record_idle(1);
            }
        }
        values.push(obs.compute_mar().unwrap());
    }
    let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
    let var: f64 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    let se = var.sqrt();
    let expect = analytics::standard_error(n_obs, p);
    assert!(
        (se - expect).abs() / expect < 0.10,
        "empirical se {se:.5} vs {expect:.5}"
    );
    let dev = values.iter().filter(|v| (*v - p).abs() >= 0.02).count() as f64 / windows as f64;
    let bound = analytics::chernoff_bound(n_obs, p, 0.02);
    assert!(
        dev <= bound,
        "deviation mass {dev:.4} exceeds the bound {bound:.4}"
    );
}

/// Inverting the steady-rate approximation: within 5% of the exact form at
/// the default target, and within the first-order error bound (about half
/// the target) across the operating range.
#[test]
fn steady_rate_inversion_consistency() {
    for n in [1usize, 2, 4, 8, 16, 32] {
        for tar in [0.05, 0.1, 0.15] {
            let cw = analytics::converged_cw(n, tar);
            if cw < 1.0 {
                continue;
            }
            let exact = analytics::steady_mar(n, cw);
            let rel = (exact - tar).abs() / tar;
            assert!(rel <= 0.5 * tar + 0.01, "n {n} tar {tar}: exact {exact}");
            if tar == 0.1 {
                assert!(rel < 0.05, "n {n}: exact {exact} off by {rel:.4}");
            }
        }
    }
}
