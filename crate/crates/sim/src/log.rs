//! The event log: every MAC-visible event of a run, timestamped, from which
//! all metrics derive. Identical scenarios and seeds produce identical logs.

use crate::engine::{FrameKind, SimTime, StationId};

/// One delivered PPDU's full frame-exchange history.
#[derive(Debug, Clone, PartialEq)]
pub struct FesRecord {
    /// Final ACK end: the FES completion instant.
    pub t: SimTime,
    pub station: StationId,
    pub ppdu: u64,
    /// Earliest enqueue time among the PPDU's packets.
    pub enqueue: SimTime,
    /// Start of the first attempt's DIFS.
    pub fes_start: SimTime,
    pub attempts: u32,
    pub bits: u64,
    pub packets: u32,
    /// PHY duration of the data PPDU (constant across attempts).
    pub data_us: u64,
    /// Per attempt: when the attempt began (first DIFS anchor).
    pub attempt_started: Vec<SimTime>,
    /// Per attempt: channel access instant (data or RTS transmit start).
    pub tx_starts: Vec<SimTime>,
    /// Per attempt: airtime from access start to the attempt's last own
    /// transmission end (data only, or RTS..data span in RTS/CTS mode).
    pub air_us: Vec<u64>,
    /// Per attempt: contention interval, `tx_start - attempt_start - DIFS`.
    pub contention_us: Vec<u64>,
    /// Per attempt: idle backoff slots actually counted down.
    pub backoff_slots: Vec<u32>,
    /// Per attempt: waiting time not spent in the accounted DIFS or in
    /// counted slots (freezes, re-DIFS, ack-wait remainders).
    pub wait_us: Vec<u64>,
    /// (frame id, generation time, packets of that frame in this PPDU).
    pub frames: Vec<(u64, SimTime, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    Arrival {
        t: SimTime,
        station: StationId,
        packets: u32,
        bits: u64,
        frame: Option<u64>,
    },
    TxStart {
        t: SimTime,
        station: StationId,
        kind: FrameKind,
        dur_us: u64,
        ppdu: Option<u64>,
        attempt: u32,
    },
    TxEnd {
        t: SimTime,
        station: StationId,
        kind: FrameKind,
    },
    /// A data or RTS reception destroyed by overlap at the receiver.
    Collision {
        t: SimTime,
        station: StationId,
        receiver: StationId,
        kind: FrameKind,
        ppdu: u64,
        attempt: u32,
    },
    FesComplete(FesRecord),
    Drop {
        t: SimTime,
        station: StationId,
        ppdu: u64,
        attempts: u32,
        bits: u64,
        packets: u32,
    },
    /// Policy reaction to an ACK; `mar` present when a full observation
    /// window triggered an adjustment.
    PolicyAck {
        t: SimTime,
        station: StationId,
        prev_cw: f64,
        restored_cw: f64,
        mar: Option<f64>,
        n_tx: u64,
        n_idle: u64,
        cw: f64,
    },
    PolicyFailure {
        t: SimTime,
        station: StationId,
        prev_cw: f64,
        cw_fail: f64,
        cw: f64,
        first: bool,
    },
}

impl LogRecord {
    pub fn time(&self) -> SimTime {
        match self {
            LogRecord::Arrival { t, .. }
            | LogRecord::TxStart { t, .. }
            | LogRecord::TxEnd { t, .. }
            | LogRecord::Collision { t, .. }
            | LogRecord::Drop { t, .. }
            | LogRecord::PolicyAck { t, .. }
            | LogRecord::PolicyFailure { t, .. } => *t,
            LogRecord::FesComplete(rec) => rec.t,
        }
    }
}

/// Per-station airtime and delivery counters for one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StationStats {
    pub own_tx_us: u64,
    pub busy_us: u64,
    pub idle_us: u64,
    pub delivered_bytes: u64,
    pub delivered_ppdus: u64,
    pub dropped_ppdus: u64,
    pub attempts: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub duration: SimTime,
    pub stations: Vec<StationStats>,
}

/// A complete, deterministic record of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub duration: SimTime,
    pub n_stations: usize,
    pub records: Vec<LogRecord>,
}

impl EventLog {
    pub fn fes_records(&self) -> impl Iterator<Item = &FesRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::FesComplete(rec) => Some(rec),
            _ => None,
        })
    }
}
