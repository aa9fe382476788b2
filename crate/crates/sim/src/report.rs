//! Delimited-text emitters with a stable column contract, and the runner
//! that lays out `<out_dir>/<scenario>/<seed>/<metric>.csv` plus an
//! aggregated `summary.csv` across seeds and compared policies.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::engine::{SimTime, StationId};
use crate::log::{EventLog, LogRecord, RunStats};
use crate::metrics;
use crate::scenario::Scenario;

/// `fes.csv`: one row per delivered PPDU.
pub fn fes_csv(log: &EventLog) -> String {
    let mut out = String::from("station,ppdu,fes_start_us,fes_us,attempts,bytes\n");
    for d in metrics::fes_delays(log) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            d.station.idx(),
            d.ppdu,
            d.fes_start.us(),
            d.fes_us,
            d.attempts,
            d.bits / 8
        );
    }
    out
}

/// `throughput_100ms.csv`: delivered bytes per station per 100 ms window.
pub fn throughput_csv(log: &EventLog) -> String {
    let mut out = String::from("window_start_us,station,bytes\n");
    let window = 100_000u64;
    for s in 0..log.n_stations {
        let w = metrics::windowed_bytes(log, StationId(s), window);
        for (k, b) in w.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", k as u64 * window, s, b);
        }
    }
    out
}

/// `cw_trace.csv`: the contention window after every policy update.
pub fn cw_trace_csv(log: &EventLog) -> String {
    let mut out = String::from("t_us,station,cw,cause,mar\n");
    for r in &log.records {
        match r {
            LogRecord::PolicyAck {
                t, station, cw, mar, ..
            } => {
                let m = mar.map(|m| format!("{m:.6}")).unwrap_or_default();
                let _ = writeln!(out, "{},{},{:.3},ack,{}", t.us(), station.idx(), cw, m);
            }
            LogRecord::PolicyFailure { t, station, cw, .. } => {
                let _ = writeln!(out, "{},{},{:.3},failure,", t.us(), station.idx(), cw);
            }
            _ => {}
        }
    }
    out
}

/// `mar_windows.csv`: every completed observation window.
pub fn mar_windows_csv(log: &EventLog) -> String {
    let mut out = String::from("t_us,station,n_tx,n_idle,mar\n");
    for r in &log.records {
        if let LogRecord::PolicyAck {
            t,
            station,
            mar: Some(m),
            n_tx,
            n_idle,
            ..
        } = r
        {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6}",
                t.us(),
                station.idx(),
                n_tx,
                n_idle,
                m
            );
        }
    }
    out
}

/// `retx.csv`: delivered PPDUs by attempt count per station.
pub fn retx_csv(log: &EventLog) -> String {
    let mut out = String::from("station,attempts,count\n");
    for s in 0..log.n_stations {
        let hist = metrics::retransmission_histogram(log, Some(StationId(s)));
        for (a, c) in hist {
            let _ = writeln!(out, "{s},{a},{c}");
        }
    }
    out
}

/// `rates.csv`: starvation, drought and stall rates per station.
pub fn rates_csv(log: &EventLog) -> String {
    let mut out = String::from("station,starvation_rate,drought_rate,stall_rate\n");
    for s in 0..log.n_stations {
        let id = StationId(s);
        let _ = writeln!(
            out,
            "{s},{:.6},{:.6},{:.6}",
            metrics::starvation_rate(log, id),
            metrics::drought_rate(log, id),
            metrics::stall_rate(log, id, 200_000)
        );
    }
    out
}

/// `frames.csv`: per-frame delivery outcomes for frame sources.
pub fn frames_csv(log: &EventLog) -> String {
    let mut out = String::from("station,frame,generated_us,completed_us,latency_us,stalled\n");
    for s in 0..log.n_stations {
        for fo in metrics::frame_outcomes(log, StationId(s)) {
            let (done, lat, stalled) = match fo.completed {
                Some(d) => {
                    let lat = d.since(fo.generated);
                    (d.us().to_string(), lat.to_string(), lat > 200_000)
                }
                None => (String::new(), String::new(), true),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s,
                fo.frame,
                fo.generated.us(),
                done,
                lat,
                stalled
            );
        }
    }
    out
}

/// `stations.csv`: airtime and delivery counters.
pub fn stations_csv(stats: &RunStats) -> String {
    let mut out = String::from(
        "station,own_tx_us,busy_us,idle_us,delivered_bytes,delivered_ppdus,dropped_ppdus,attempts,failures\n",
    );
    for (s, st) in stats.stations.iter().enumerate() {
        let _ = writeln!(
            out,
            "{s},{},{},{},{},{},{},{},{}",
            st.own_tx_us,
            st.busy_us,
            st.idle_us,
            st.delivered_bytes,
            st.delivered_ppdus,
            st.dropped_ppdus,
            st.attempts,
            st.failures
        );
    }
    out
}

/// One summary row per (policy, seed): pooled delay percentiles and totals.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub policy: String,
    pub seed: u64,
    pub delivered_bytes: u64,
    pub dropped_ppdus: u64,
    pub p50_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
    pub p999_us: u64,
    pub p9999_us: u64,
    pub mean_starvation: f64,
    pub mean_drought: f64,
}

pub fn summary_row(policy: &str, seed: u64, log: &EventLog, stats: &RunStats) -> SummaryRow {
    let delays: Vec<u64> = metrics::fes_delays(log).iter().map(|d| d.fes_us).collect();
    let pct = |q: f64| {
        if delays.is_empty() {
            0
        } else {
            metrics::percentile(&delays, q)
        }
    };
    let tx_stations: Vec<usize> = (0..log.n_stations)
        .filter(|&s| stats.stations[s].attempts > 0)
        .collect();
    let mean = |f: &dyn Fn(StationId) -> f64| {
        if tx_stations.is_empty() {
            0.0
        } else {
            tx_stations.iter().map(|&s| f(StationId(s))).sum::<f64>() / tx_stations.len() as f64
        }
    };
    SummaryRow {
        policy: policy.to_string(),
        seed,
        delivered_bytes: stats.stations.iter().map(|s| s.delivered_bytes).sum(),
        dropped_ppdus: stats.stations.iter().map(|s| s.dropped_ppdus).sum(),
        p50_us: pct(50.0),
        p95_us: pct(95.0),
        p99_us: pct(99.0),
        p999_us: pct(99.9),
        p9999_us: pct(99.99),
        mean_starvation: mean(&|s| metrics::starvation_rate(log, s)),
        mean_drought: mean(&|s| metrics::drought_rate(log, s)),
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "policy,seed,delivered_bytes,dropped_ppdus,p50_us,p95_us,p99_us,p999_us,p9999_us,mean_starvation,mean_drought\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{:.6},{:.6}",
            r.policy,
            r.seed,
            r.delivered_bytes,
            r.dropped_ppdus,
            r.p50_us,
            r.p95_us,
            r.p99_us,
            r.p999_us,
            r.p9999_us,
            r.mean_starvation,
            r.mean_drought
        );
    }
    out
}

fn write_run_files(dir: &Path, log: &EventLog, stats: &RunStats) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("fes.csv"), fes_csv(log))?;
    fs::write(dir.join("throughput_100ms.csv"), throughput_csv(log))?;
    fs::write(dir.join("cw_trace.csv"), cw_trace_csv(log))?;
    fs::write(dir.join("mar_windows.csv"), mar_windows_csv(log))?;
    fs::write(dir.join("retx.csv"), retx_csv(log))?;
    fs::write(dir.join("rates.csv"), rates_csv(log))?;
    fs::write(dir.join("frames.csv"), frames_csv(log))?;
    fs::write(dir.join("stations.csv"), stations_csv(stats))?;
    Ok(())
}

/// Execute every (policy, seed) combination of a scenario, writing per-run
/// metric files and the aggregated summary. Returns the summary rows.
pub fn run_scenario_to_dir(scenario: &Scenario, out_dir: &Path) -> Result<Vec<SummaryRow>, String> {
    scenario
        .validate()
        .map_err(|es| format!("invalid scenario:\n  {}", es.join("\n  ")))?;
    let policies: Vec<String> = if scenario.compare_policies.is_empty() {
        vec![scenario.defaults.policy.clone()]
    } else {
        scenario.compare_policies.clone()
    };
    let base = out_dir.join(&scenario.name);
    let mut rows = Vec::new();
    for policy in &policies {
        let variant = scenario.with_policy(policy);
        for &seed in &scenario.seeds {
            let (log, stats) = variant.run(seed)?;
            let dir = if policies.len() == 1 {
                base.join(seed.to_string())
            } else {
                base.join(policy).join(seed.to_string())
            };
            write_run_files(&dir, &log, &stats).map_err(|e| format!("{}: {e}", dir.display()))?;
            rows.push(summary_row(policy, seed, &log, &stats));
        }
    }
    fs::create_dir_all(&base).map_err(|e| e.to_string())?;
    fs::write(base.join("summary.csv"), summary_csv(&rows)).map_err(|e| e.to_string())?;
    Ok(rows)
}

/// The duration is part of the log; expose it for summary consumers.
pub fn duration_of(log: &EventLog) -> SimTime {
    log.duration
}
