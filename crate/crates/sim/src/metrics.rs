//! Post-processing over immutable event logs: delay percentiles, windowed
//! throughput, starvation/drought/stall rates, retransmission histograms,
//! contention-window traces, convergence detection, fairness, and the
//! structural cross-checks (frame-exchange decomposition, timestamp oracle,
//! airtime conservation).

use std::collections::BTreeMap;

use crate::engine::{FrameKind, SimTime, StationId};
use crate::log::{EventLog, LogRecord, RunStats};
use crate::mac::PhyParams;
use crate::topology::Topology;

/// Nearest-rank percentile of an unsorted series. `q` in [0, 100].
pub fn percentile(series: &[u64], q: f64) -> u64 {
    assert!(!series.is_empty(), "percentile of an empty series");
    assert!((0.0..=100.0).contains(&q));
    let mut v = series.to_vec();
    v.sort_unstable();
    let n = v.len();
    let rank = ((q / 100.0) * n as f64).ceil() as usize;
    v[rank.clamp(1, n) - 1]
}

/// Delay record of one delivered PPDU.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayRecord {
    pub station: StationId,
    pub ppdu: u64,
    pub fes_start: SimTime,
    /// First DIFS to final ACK, queueing excluded.
    pub fes_us: u64,
    pub attempts: u32,
    pub bits: u64,
}

pub fn fes_delays(log: &EventLog) -> Vec<DelayRecord> {
    log.fes_records()
        .map(|r| DelayRecord {
            station: r.station,
            ppdu: r.ppdu,
            fes_start: r.fes_start,
            fes_us: r.t.since(r.fes_start),
            attempts: r.attempts,
            bits: r.bits,
        })
        .collect()
}

pub fn fes_delays_for(log: &EventLog, station: StationId) -> Vec<u64> {
    fes_delays(log)
        .into_iter()
        .filter(|d| d.station == station)
        .map(|d| d.fes_us)
        .collect()
}

/// Bytes delivered by `station` in each tiled window of `window_us`.
pub fn windowed_bytes(log: &EventLog, station: StationId, window_us: u64) -> Vec<u64> {
    let n_windows = (log.duration.us() / window_us) as usize;
    let mut out = vec![0u64; n_windows.max(1)];
    for r in log.fes_records() {
        if r.station != station {
            continue;
        }
        let idx = (r.t.us() / window_us) as usize;
        let idx = idx.min(out.len() - 1);
        out[idx] += r.bits / 8;
    }
    out
}

/// Fraction of 100 ms windows in which the station delivered nothing.
pub fn starvation_rate(log: &EventLog, station: StationId) -> f64 {
    let w = windowed_bytes(log, station, 100_000);
    let zero = w.iter().filter(|&&b| b == 0).count();
    zero as f64 / w.len() as f64
}

/// Changes in a station's backlog (queued plus in-flight packets).
fn backlog_deltas(log: &EventLog, station: StationId) -> Vec<(SimTime, i64)> {
    let mut deltas = Vec::new();
    for r in &log.records {
        match r {
            LogRecord::Arrival {
                t, station: s, packets, ..
            } if *s == station => deltas.push((*t, *packets as i64)),
            LogRecord::FesComplete(rec) if rec.station == station => {
                deltas.push((rec.t, -(rec.packets as i64)))
            }
            LogRecord::Drop {
                t, station: s, packets, ..
            } if *s == station => deltas.push((*t, -(*packets as i64))),
            _ => {}
        }
    }
    deltas
}

/// Fraction of `window_us` windows with zero deliveries, counting only
/// windows in which the station was backlogged at some instant (an idle
/// source is not a drought).
pub fn drought_rate_windowed(log: &EventLog, station: StationId, window_us: u64) -> f64 {
    let n_windows = (log.duration.us() / window_us) as usize;
    if n_windows == 0 {
        return 0.0;
    }
    let mut delivered = vec![false; n_windows];
    for r in log.fes_records() {
        if r.station == station {
            let idx = ((r.t.us() / window_us) as usize).min(n_windows - 1);
            delivered[idx] = true;
        }
    }
    let deltas = backlog_deltas(log, station);
    let mut backlogged = vec![false; n_windows];
    let mut level = 0i64;
    let mut di = 0;
    for (w, flag) in backlogged.iter_mut().enumerate() {
        let end = (w as u64 + 1) * window_us;
        let mut any = level > 0;
        while di < deltas.len() && deltas[di].0.us() < end {
            level += deltas[di].1;
            any = any || level > 0;
            di += 1;
        }
        *flag = any;
    }
    let eligible = backlogged.iter().filter(|&&b| b).count();
    if eligible == 0 {
        return 0.0;
    }
    let droughts = backlogged
        .iter()
        .zip(delivered.iter())
        .filter(|&(&b, &d)| b && !d)
        .count();
    droughts as f64 / eligible as f64
}

/// 200 ms drought rate.
pub fn drought_rate(log: &EventLog, station: StationId) -> f64 {
    drought_rate_windowed(log, station, 200_000)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub frame: u64,
    pub generated: SimTime,
    pub total_packets: u32,
    pub delivered_packets: u32,
    pub completed: Option<SimTime>,
}

/// Per-frame delivery outcomes for a frame-source station.
pub fn frame_outcomes(log: &EventLog, station: StationId) -> Vec<FrameOutcome> {
    let mut frames: BTreeMap<u64, FrameOutcome> = BTreeMap::new();
    for r in &log.records {
        match r {
            LogRecord::Arrival {
                t,
                station: s,
                packets,
                frame: Some(f),
                ..
            } if *s == station => {
                frames
                    .entry(*f)
                    .or_insert(FrameOutcome {
                        frame: *f,
                        generated: *t,
                        total_packets: 0,
                        delivered_packets: 0,
                        completed: None,
                    })
                    .total_packets += *packets;
            }
            LogRecord::FesComplete(rec) if rec.station == station => {
                for &(fid, _, n) in &rec.frames {
                    if let Some(fo) = frames.get_mut(&fid) {
                        fo.delivered_packets += n;
                        if fo.delivered_packets >= fo.total_packets && fo.completed.is_none() {
                            fo.completed = Some(rec.t);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    frames.into_values().collect()
}

/// Fraction of frames whose delivery latency exceeds `threshold_us`. Frames
/// still undelivered at the end of the run count once the threshold has
/// passed; younger incomplete frames are excluded from the denominator.
pub fn stall_rate(log: &EventLog, station: StationId, threshold_us: u64) -> f64 {
    let mut stalls = 0usize;
    let mut total = 0usize;
    for fo in frame_outcomes(log, station) {
        match fo.completed {
            Some(done) => {
                total += 1;
                if done.since(fo.generated) > threshold_us {
                    stalls += 1;
                }
            }
            None => {
                if log.duration.since(fo.generated) > threshold_us {
                    total += 1;
                    stalls += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        stalls as f64 / total as f64
    }
}

/// Counts of delivered PPDUs by attempt count (1 = no retransmission).
pub fn retransmission_histogram(log: &EventLog, station: Option<StationId>) -> BTreeMap<u32, u64> {
    let mut hist = BTreeMap::new();
    for r in log.fes_records() {
        if station.map_or(true, |s| r.station == s) {
            *hist.entry(r.attempts).or_insert(0) += 1;
        }
    }
    hist
}

/// Fraction of delivered PPDUs with exactly `attempts` attempts.
pub fn attempt_fraction(hist: &BTreeMap<u32, u64>, attempts: u32) -> f64 {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return 0.0;
    }
    *hist.get(&attempts).unwrap_or(&0) as f64 / total as f64
}

/// Fraction of delivered PPDUs needing at least one retransmission.
pub fn retransmitted_fraction(hist: &BTreeMap<u32, u64>) -> f64 {
    let total: u64 = hist.values().sum();
    if total == 0 {
        return 0.0;
    }
    let retx: u64 = hist.iter().filter(|(a, _)| **a >= 2).map(|(_, c)| c).sum();
    retx as f64 / total as f64
}

/// Contention-window step traces per station from the policy log records,
/// including transient fast-recovery values.
pub fn cw_traces(log: &EventLog, initial: f64) -> Vec<Vec<(SimTime, f64)>> {
    let mut traces = vec![vec![(SimTime::ZERO, initial)]; log.n_stations];
    for r in &log.records {
        match r {
            LogRecord::PolicyAck { t, station, cw, .. }
            | LogRecord::PolicyFailure { t, station, cw, .. } => {
                traces[station.idx()].push((*t, *cw));
            }
            _ => {}
        }
    }
    traces
}

/// Stable-control window traces: the value after each ACK update only, so
/// deliberate fast-recovery dips between a failure and the next ACK do not
/// register as divergence.
pub fn stable_cw_traces(log: &EventLog, initial: f64) -> Vec<Vec<(SimTime, f64)>> {
    let mut traces = vec![vec![(SimTime::ZERO, initial)]; log.n_stations];
    for r in &log.records {
        if let LogRecord::PolicyAck { t, station, cw, .. } = r {
            traces[station.idx()].push((*t, *cw));
        }
    }
    traces
}

fn trace_value_at(trace: &[(SimTime, f64)], t: SimTime) -> f64 {
    match trace.partition_point(|(at, _)| *at <= t) {
        0 => trace[0].1,
        n => trace[n - 1].1,
    }
}

/// Time-weighted mean of a step trace over a window centred at `t`; the
/// plain value when the window is zero. Smooths the per-adjustment dither
/// out of band comparisons without lagging the transient.
fn trace_smoothed_at(trace: &[(SimTime, f64)], t: SimTime, window_us: u64) -> f64 {
    if window_us == 0 {
        return trace_value_at(trace, t);
    }
    let from = SimTime(t.us().saturating_sub(window_us / 2));
    let to = t.add_us(window_us / 2);
    cw_time_average(trace, from, to)
}

/// Time-weighted average of a step trace over `[from, to]`.
pub fn cw_time_average(trace: &[(SimTime, f64)], from: SimTime, to: SimTime) -> f64 {
    assert!(to > from);
    let mut acc = 0.0;
    let mut cursor = from;
    let mut value = trace_value_at(trace, from);
    for &(at, v) in trace.iter().filter(|(at, _)| *at > from && *at < to) {
        acc += value * at.since(cursor) as f64;
        cursor = at;
        value = v;
    }
    acc += value * to.since(cursor) as f64;
    acc / to.since(from) as f64
}

/// First time after `event` at which every active station's window stays
/// within `band` of the common mean for `hold_us`, sampled on `grid_us`.
/// Traces are smoothed over a trailing `smooth_us` window so that the
/// steady per-adjustment dither does not mask transient convergence.
/// Returns the delay from `event`, or `None` if never converged before
/// `horizon`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_time(
    traces: &[Vec<(SimTime, f64)>],
    active: &[usize],
    event: SimTime,
    horizon: SimTime,
    band: f64,
    hold_us: u64,
    grid_us: u64,
    smooth_us: u64,
) -> Option<u64> {
    assert!(!active.is_empty());
    if active.len() == 1 {
        return Some(0);
    }
    let steps = (horizon.since(event) / grid_us) as usize;
    let in_band: Vec<bool> = (0..=steps)
        .map(|k| {
            let t = event.add_us(k as u64 * grid_us);
            let vals: Vec<f64> = active
                .iter()
                .map(|&i| trace_smoothed_at(&traces[i], t, smooth_us))
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().all(|v| (v - mean).abs() <= band * mean)
        })
        .collect();
    let need = (hold_us / grid_us) as usize;
    let mut run = 0usize;
    for (k, ok) in in_band.iter().enumerate() {
        if *ok {
            run += 1;
            if run > need {
                return Some((k + 1 - run) as u64 * grid_us);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Jain fairness index over per-station values.
pub fn jain_fairness(values: &[f64]) -> f64 {
    assert!(!values.is_empty());
    let sum: f64 = values.iter().sum();
    let sq: f64 = values.iter().map(|v| v * v).sum();
    if sq == 0.0 {
        return 1.0;
    }
    sum * sum / (values.len() as f64 * sq)
}

/// Mean of the access-rate window samples falling in each tiled window.
pub fn windowed_mar(log: &EventLog, window_us: u64) -> Vec<Option<f64>> {
    let n_windows = (log.duration.us() / window_us) as usize;
    let mut sums = vec![(0.0, 0u32); n_windows.max(1)];
    for r in &log.records {
        if let LogRecord::PolicyAck {
            t, mar: Some(m), ..
        } = r
        {
            let idx = ((t.us() / window_us) as usize).min(sums.len() - 1);
            sums[idx].0 += m;
            sums[idx].1 += 1;
        }
    }
    sums.into_iter()
        .map(|(s, c)| if c > 0 { Some(s / c as f64) } else { None })
        .collect()
}

/// Per-window (attempts, failures) pooled over stations. Attempts are
/// channel-access starts (RTS in RTS/CTS mode, data otherwise).
pub fn windowed_attempts(log: &EventLog, window_us: u64, rts_cts: bool) -> Vec<(u64, u64)> {
    let n_windows = (log.duration.us() / window_us) as usize;
    let mut out = vec![(0u64, 0u64); n_windows.max(1)];
    let fire_kind = if rts_cts {
        FrameKind::Rts
    } else {
        FrameKind::Data
    };
    for r in &log.records {
        match r {
            LogRecord::TxStart { t, kind, ppdu, .. } if *kind == fire_kind && ppdu.is_some() => {
                let idx = ((t.us() / window_us) as usize).min(out.len() - 1);
                out[idx].0 += 1;
            }
            LogRecord::Collision { t, kind, .. } if *kind == fire_kind => {
                let idx = ((t.us() / window_us) as usize).min(out.len() - 1);
                out[idx].1 += 1;
            }
            _ => {}
        }
    }
    out
}

/// Physical channel state seen by `station` at time `t`, reconstructed from
/// the log: busy iff a sensed other station is mid-transmission.
pub fn channel_state_at(log: &EventLog, topo: &Topology, station: StationId, t: SimTime) -> bool {
    for r in &log.records {
        if let LogRecord::TxStart {
            t: start,
            station: s,
            dur_us,
            ..
        } = r
        {
            if *s != station
                && topo.senses(station, *s)
                && *start <= t
                && t < start.add_us(*dur_us)
            {
                return true;
            }
        }
    }
    false
}

// ---------------------------------------------------------------------
// structural cross-checks
// ---------------------------------------------------------------------

/// Exact per-PPDU identity: the FES duration equals the sum of per-attempt
/// (DIFS + contention + airtime), one SIFS per attempt, and the final ACK.
pub fn verify_decomposition(log: &EventLog, phy: &PhyParams) -> Result<usize, String> {
    let mut checked = 0;
    for r in log.fes_records() {
        let n = r.attempts as u64;
        let parts: u64 = r.contention_us.iter().sum::<u64>()
            + n * phy.difs_us
            + r.air_us.iter().sum::<u64>()
            + n * phy.sifs_us
            + phy.ack_us;
        let fes = r.t.since(r.fes_start);
        if parts != fes {
            return Err(format!(
                "ppdu {} at station {:?}: fes {} != decomposition {}",
                r.ppdu, r.station, fes, parts
            ));
        }
        if r.contention_us.len() != r.attempts as usize
            || r.air_us.len() != r.attempts as usize
            || r.backoff_slots.len() != r.attempts as usize
        {
            return Err(format!("ppdu {}: ragged attempt vectors", r.ppdu));
        }
        for k in 0..r.attempts as usize {
            if r.contention_us[k]
                != r.backoff_slots[k] as u64 * phy.slot_us + r.wait_us[k]
            {
                return Err(format!(
                    "ppdu {} attempt {}: contention {} != slots {} * {} + wait {}",
                    r.ppdu, k, r.contention_us[k], r.backoff_slots[k], phy.slot_us, r.wait_us[k]
                ));
            }
        }
        checked += 1;
    }
    Ok(checked)
}

/// Reconstruct every attempt's contention interval from raw transmission
/// timestamps (the sniffer method) and compare with the state machine's
/// account. For back-to-back FESs the first attempt uses the previous FES's
/// ACK; retry attempts use the previous attempt's own airtime.
pub fn verify_contention_oracle(log: &EventLog, phy: &PhyParams) -> Result<usize, String> {
    // (station, ppdu, attempt) -> (first tx start, last tx end)
    let mut spans: BTreeMap<(usize, u64, u32), (SimTime, SimTime)> = BTreeMap::new();
    for r in &log.records {
        if let LogRecord::TxStart {
            t,
            station,
            dur_us,
            ppdu: Some(p),
            attempt,
            ..
        } = r
        {
            let key = (station.idx(), *p, *attempt);
            let end = t.add_us(*dur_us);
            spans
                .entry(key)
                .and_modify(|(s, e)| {
                    *s = (*s).min(*t);
                    *e = (*e).max(end);
                })
                .or_insert((*t, end));
        }
    }
    let mut prev_fes_end: BTreeMap<usize, SimTime> = BTreeMap::new();
    let mut checked = 0;
    for r in &log.records {
        let LogRecord::FesComplete(rec) = r else {
            continue;
        };
        let s = rec.station.idx();
        // chained first attempt: previous ACK end is the decomposition anchor
        if let Some(&prev_end) = prev_fes_end.get(&s) {
            if rec.fes_start == prev_end {
                let (x1, _) = spans
                    .get(&(s, rec.ppdu, 1))
                    .ok_or_else(|| format!("ppdu {} attempt 1 missing tx", rec.ppdu))?;
                let reconstructed = x1.since(prev_end).saturating_sub(phy.difs_us);
                if reconstructed != rec.contention_us[0] {
                    return Err(format!(
                        "ppdu {} attempt 1: oracle {} != account {}",
                        rec.ppdu, reconstructed, rec.contention_us[0]
                    ));
                }
                checked += 1;
            }
        }
        for k in 2..=rec.attempts {
            let (xk, _) = spans
                .get(&(s, rec.ppdu, k))
                .ok_or_else(|| format!("ppdu {} attempt {k} missing tx", rec.ppdu))?;
            let (xp, ep) = spans
                .get(&(s, rec.ppdu, k - 1))
                .ok_or_else(|| format!("ppdu {} attempt {} missing tx", rec.ppdu, k - 1))?;
            let air_prev = ep.since(*xp);
            let reconstructed = xk
                .since(*xp)
                .saturating_sub(air_prev + phy.sifs_us + phy.difs_us);
            if reconstructed != rec.contention_us[k as usize - 1] {
                return Err(format!(
                    "ppdu {} attempt {k}: oracle {} != account {}",
                    rec.ppdu, reconstructed, rec.contention_us[k as usize - 1]
                ));
            }
            // the log timeline and the state machine agree on access instants
            if *xk != rec.tx_starts[k as usize - 1] {
                return Err(format!("ppdu {} attempt {k}: tx start mismatch", rec.ppdu));
            }
            checked += 1;
        }
        prev_fes_end.insert(s, rec.t);
    }
    Ok(checked)
}

/// Per-station airtime partition: own transmissions + sensed busy + idle
/// must tile the run within one slot.
pub fn verify_airtime_conservation(stats: &RunStats, slot_us: u64) -> Result<(), String> {
    for (i, st) in stats.stations.iter().enumerate() {
        let sum = st.own_tx_us + st.busy_us + st.idle_us;
        let want = stats.duration.us();
        if sum.abs_diff(want) > slot_us {
            return Err(format!(
                "station {i}: own {} + busy {} + idle {} = {} != duration {}",
                st.own_tx_us, st.busy_us, st.idle_us, sum, want
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_nearest_rank() {
        assert_eq!(percentile(&[1, 2, 3, 4], 50.0), 2);
        assert_eq!(percentile(&[1, 2, 3, 4], 100.0), 4);
        assert_eq!(percentile(&[1, 2, 3, 4], 0.0), 1);
        assert_eq!(percentile(&[5], 99.0), 5);
    }

    #[test]
    #[should_panic(expected = "empty series")]
    fn percentile_rejects_empty() {
        percentile(&[], 50.0);
    }

    #[test]
    fn jain_edge_values() {
        assert!((jain_fairness(&[5.0, 5.0, 5.0]) - 1.0).abs() < 1e-12);
        let one_of_four = jain_fairness(&[1.0, 0.0, 0.0, 0.0]);
        assert!((one_of_four - 0.25).abs() < 1e-12);
        assert_eq!(jain_fairness(&[0.0, 0.0]), 1.0);
    }

    #[test]
    fn cw_average_is_time_weighted() {
        let trace = vec![
            (SimTime(0), 10.0),
            (SimTime(100), 20.0),
            (SimTime(300), 40.0),
        ];
        // [0,100): 10, [100,300): 20, [300,400): 40 -> (1000+4000+4000)/400
        let avg = cw_time_average(&trace, SimTime(0), SimTime(400));
        assert!((avg - 22.5).abs() < 1e-12);
    }

    #[test]
    fn convergence_of_single_station_is_immediate() {
        let traces = vec![vec![(SimTime(0), 15.0)]];
        let d = convergence_time(
            &traces,
            &[0],
            SimTime(0),
            SimTime(1_000_000),
            0.25,
            500_000,
            10_000,
            0,
        );
        assert_eq!(d, Some(0));
    }

    #[test]
    fn convergence_detects_band_entry() {
        // station 1 joins far away and converges at t=200ms
        let traces = vec![
            vec![(SimTime(0), 100.0)],
            vec![(SimTime(0), 10.0), (SimTime(200_000), 95.0)],
        ];
        let d = convergence_time(
            &traces,
            &[0, 1],
            SimTime(0),
            SimTime(2_000_000),
            0.25,
            500_000,
            10_000,
            0,
        )
        .unwrap();
        assert_eq!(d, 200_000);
    }
}
