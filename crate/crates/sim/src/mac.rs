//! Per-station CSMA/CA machinery: DIFS deferral, random backoff with
//! freeze/resume, the frame exchange sequence with optional RTS/CTS, ACK
//! handling and retransmission with a retry limit.
//!
//! Contention is slotted: after the channel has been idle for a DIFS the
//! station counts down one backoff slot per idle slot on a grid anchored at
//! the busy-to-idle transition, so all stations in one carrier-sense domain
//! share slot boundaries. Transmissions start exactly at grid boundaries;
//! two stations reaching zero on the same boundary collide.
//!
//! Every attempt keeps a double-entry account of where its time went (the
//! accounted DIFS, counted backoff slots, and everything else as waiting),
//! checked at transmit time against the timestamp identity
//! `tx_start - attempt_start = DIFS + slots * slot_time + wait`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

use crate::engine::{SimTime, StationId};
use serde::{Deserialize, Serialize};
use crate::policy::{ChannelEvent, ContentionPolicy};
use crate::traffic::{Packet, TrafficSource};

/// PHY and MAC timing parameters shared by a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyParams {
    pub slot_us: u64,
    pub sifs_us: u64,
    pub difs_us: u64,
    pub ack_us: u64,
    pub rts_us: u64,
    pub cts_us: u64,
    /// PHY rate in bits per microsecond (equivalently Mbps).
    pub data_rate_mbps: f64,
    /// Aggregation cap: a PPDU carries queued packets up to this many bits.
    pub ppdu_bits: u64,
    pub retry_limit: u32,
    pub rts_cts: bool,
}

impl Default for PhyParams {
    fn default() -> Self {
        // 5 GHz numerology; PPDU sized so the PHY transmission takes ~2.4 ms.
        PhyParams {
            slot_us: 9,
            sifs_us: 16,
            difs_us: 34,
            ack_us: 44,
            rts_us: 52,
            cts_us: 44,
            data_rate_mbps: 50.0,
            ppdu_bits: 120_000,
            retry_limit: 7,
            rts_cts: false,
        }
    }
}

impl PhyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.difs_us > self.sifs_us && self.sifs_us > 0) {
            return Err(format!(
                "need difs > sifs > 0, got {} and {}",
                self.difs_us, self.sifs_us
            ));
        }
        if self.slot_us == 0 {
            return Err("slot_us must be positive".into());
        }
        if !(self.data_rate_mbps > 0.0) {
            return Err("data_rate_mbps must be positive".into());
        }
        if self.ppdu_bits == 0 {
            return Err("ppdu_bits must be positive".into());
        }
        Ok(())
    }

    /// PHY transmission time of `bits` at the configured rate, in whole µs.
    pub fn tx_us(&self, bits: u64) -> u64 {
        (bits as f64 / self.data_rate_mbps).ceil().max(1.0) as u64
    }

    pub fn ack_timeout_us(&self) -> u64 {
        self.sifs_us + self.ack_us + self.slot_us
    }

    pub fn cts_timeout_us(&self) -> u64 {
        self.sifs_us + self.cts_us + self.slot_us
    }
}

/// Station contention phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// No head-of-line PPDU.
    Quiet,
    /// Head PPDU exists; waiting for the channel (busy, NAV, or frozen).
    Pending,
    /// Backoff scheduled; a fire event is in flight.
    Counting,
    TxRts,
    AwaitCts,
    TxData,
    AwaitAck,
}

/// What the station spends a view segment on, for airtime conservation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ViewKind {
    OwnTx,
    Busy,
    Idle,
}

/// Double-entry time account for one attempt.
#[derive(Debug, Clone)]
struct AttemptAcct {
    /// Attempt start (decomposition anchor).
    a: SimTime,
    /// Last settled instant.
    last: SimTime,
    /// Whether the attempt's accounted DIFS has been waited.
    difs_done: bool,
    slots: u32,
    wait: i64,
}

#[derive(Debug, Clone)]
struct AttemptLog {
    started: SimTime,
    tx_start: SimTime,
    air_end: SimTime,
    contention_us: u64,
    backoff_slots: u32,
    wait_us: u64,
}

/// In-progress frame exchange for the head-of-line PPDU.
#[derive(Debug, Clone)]
pub(crate) struct FesState {
    pub ppdu_id: u64,
    pub bits: u64,
    pub packets: Vec<Packet>,
    pub enqueue: SimTime,
    pub fes_start: SimTime,
    pub data_us: u64,
    pub retries: u32,
    done: Vec<AttemptLog>,
    acct: AttemptAcct,
    cur_tx_start: SimTime,
    cur_air_end: SimTime,
}

impl FesState {
    pub fn attempt_no(&self) -> u32 {
        self.retries + 1
    }

    pub fn last_contention_us(&self) -> u64 {
        self.done.last().map(|a| a.contention_us).unwrap_or(0)
    }

    /// End of the current attempt's own airtime so far.
    pub fn cur_air_end(&self) -> SimTime {
        self.cur_air_end
    }
}

pub(crate) struct Station {
    pub id: StationId,
    pub rng: ChaCha8Rng,
    pub policy: Option<Box<dyn ContentionPolicy>>,
    pub source: Option<TrafficSource>,
    pub queue: VecDeque<Packet>,
    pub phase: Phase,

    // channel view
    pub audible: u32,
    pub transmitting: bool,
    pub nav_until: SimTime,
    /// Busy-to-idle transition instant; `None` while the view is busy.
    pub idle_anchor: Option<SimTime>,
    idle_flushed: u64,

    // backoff
    pub backoff: u32,
    pub fire_gen: u64,
    pub fire_at: SimTime,
    sched_td: SimTime,

    pub fes: Option<FesState>,

    // airtime segments
    seg_start: SimTime,
    seg_kind: ViewKind,
    pub own_tx_us: u64,
    pub busy_us: u64,
    pub idle_us: u64,
}

/// Outcome of feeding an event into the station, for the simulator to act on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StationAction {
    None,
    /// Schedule a fire event at the given time with the given generation.
    ScheduleFire(SimTime, u64),
    /// Schedule an idle-recheck at NAV expiry.
    ScheduleNavCheck(SimTime),
}

impl Station {
    pub fn new(
        id: StationId,
        rng: ChaCha8Rng,
        policy: Option<Box<dyn ContentionPolicy>>,
        source: Option<TrafficSource>,
    ) -> Station {
        Station {
            id,
            rng,
            policy,
            source,
            queue: VecDeque::new(),
            phase: Phase::Quiet,
            audible: 0,
            transmitting: false,
            nav_until: SimTime::ZERO,
            idle_anchor: Some(SimTime::ZERO),
            idle_flushed: 0,
            backoff: 0,
            fire_gen: 0,
            fire_at: SimTime::ZERO,
            sched_td: SimTime::ZERO,
            fes: None,
            seg_start: SimTime::ZERO,
            seg_kind: ViewKind::Idle,
            own_tx_us: 0,
            busy_us: 0,
            idle_us: 0,
        }
    }

    #[inline]
    pub fn view_busy(&self, now: SimTime) -> bool {
        self.audible > 0 || self.transmitting || self.nav_until > now
    }

    fn view_kind(&self, now: SimTime) -> ViewKind {
        if self.transmitting {
            ViewKind::OwnTx
        } else if self.audible > 0 || self.nav_until > now {
            ViewKind::Busy
        } else {
            ViewKind::Idle
        }
    }

    /// Close the current airtime segment at `now` and open a new one.
    pub fn roll_segment(&mut self, now: SimTime) {
        let span = now.since(self.seg_start);
        match self.seg_kind {
            ViewKind::OwnTx => self.own_tx_us += span,
            ViewKind::Busy => self.busy_us += span,
            ViewKind::Idle => self.idle_us += span,
        }
        self.seg_start = now;
        self.seg_kind = self.view_kind(now);
    }

    pub fn finalize_stats(&mut self, end: SimTime) {
        let span = end.since(self.seg_start);
        match self.seg_kind {
            ViewKind::OwnTx => self.own_tx_us += span,
            ViewKind::Busy => self.busy_us += span,
            ViewKind::Idle => self.idle_us += span,
        }
        self.seg_start = end;
    }

    /// Completed idle slots observed since the anchor's grid start, not yet
    /// reported. Feeds the policy's channel observation.
    pub fn flush_idle(&mut self, now: SimTime, difs_us: u64, slot_us: u64) {
        let Some(anchor) = self.idle_anchor else {
            return;
        };
        let td = anchor.add_us(difs_us);
        let total = now.since(td) / slot_us;
        let delta = total.saturating_sub(self.idle_flushed);
        self.idle_flushed = total;
        if delta > 0 {
            if let Some(p) = self.policy.as_mut() {
                p.observe(ChannelEvent::IdleSlots(delta));
            }
        }
    }

    /// The observer-facing reaction to a busy-period start. `tx_events`
    /// already encodes the hidden-RTS CTS rule.
    pub fn observe_tx_events(&mut self, n: u64) {
        if n > 0 {
            if let Some(p) = self.policy.as_mut() {
                p.observe(ChannelEvent::TxEvents(n));
            }
        }
    }

    /// Whether a busy onset at `now` starts a countable busy period: the
    /// view must have been idle for at least a DIFS.
    pub fn onset_counts(&self, now: SimTime, difs_us: u64) -> bool {
        match self.idle_anchor {
            Some(anchor) => now.since(anchor) >= difs_us,
            None => false,
        }
    }

    /// Freeze the countdown at a busy onset. Returns true when the scheduled
    /// fire coincides with `now` and must be left to dispatch (same-boundary
    /// commitment).
    pub fn freeze(&mut self, now: SimTime, difs_us: u64, slot_us: u64) -> bool {
        debug_assert_eq!(self.phase, Phase::Counting);
        let remaining_us = self.fire_at.since(now);
        if remaining_us == 0 {
            // Committed at this exact boundary; the fire event dispatches at
            // the same instant and the transmissions overlap.
            return true;
        }
        let rem = remaining_us.div_ceil(slot_us).min(self.backoff as u64) as u32;
        let consumed = self.backoff - rem;
        self.settle_span(now, consumed, difs_us, slot_us);
        self.backoff = rem;
        self.fire_gen += 1;
        self.phase = Phase::Pending;
        false
    }

    /// Account the span `[acct.last, upto)`: `consumed` backoff slots, at
    /// most one fresh DIFS, and the leftover as waiting time.
    fn settle_span(&mut self, upto: SimTime, consumed: u32, difs_us: u64, slot_us: u64) {
        let sched_td = self.sched_td;
        let fes = self.fes.as_mut().expect("attempt in progress");
        let acct = &mut fes.acct;
        let span = upto.since(acct.last) as i64;
        let mut difs_part = 0i64;
        // a fresh DIFS heads the span only when the span started at the idle
        // transition (a full DIFS ahead of the grid start); shorter heads are
        // re-joins of a live grid and re-DIFS periods count as waiting
        if !acct.difs_done && upto >= sched_td && sched_td.since(acct.last) == difs_us {
            difs_part = difs_us as i64;
            acct.difs_done = true;
        }
        let slots_part = consumed as i64 * slot_us as i64;
        let leftover = span - slots_part - difs_part;
        debug_assert!(leftover >= 0, "negative leftover {leftover}");
        acct.slots += consumed;
        acct.wait += leftover;
        acct.last = upto;
    }

    /// Draw a fresh backoff for the current attempt from `[0, floor(cw)]`.
    pub fn draw_backoff(&mut self) -> u32 {
        let cw = self
            .policy
            .as_ref()
            .map(|p| p.current_cw())
            .unwrap_or(0.0)
            .floor()
            .max(0.0) as u64;
        self.rng.gen_range(0..=cw) as u32
    }

    /// Try to move a pending attempt onto the countdown grid. Call whenever
    /// the view is (or may have become) idle.
    pub fn ensure_contending(&mut self, now: SimTime, difs_us: u64, slot_us: u64) -> StationAction {
        if self.phase != Phase::Pending {
            return StationAction::None;
        }
        if self.view_busy(now) {
            return StationAction::None;
        }
        let anchor = self.idle_anchor.expect("idle view has an anchor");
        {
            let acct = &mut self.fes.as_mut().expect("pending attempt").acct;
            // busy-wait and dead time before scheduling is plain waiting
            acct.wait += now.since(acct.last) as i64;
            acct.last = now;
        }
        let td = anchor.add_us(difs_us);
        let fire = if now <= td {
            td.add_us(self.backoff as u64 * slot_us)
        } else {
            let k0 = now.since(td).div_ceil(slot_us);
            td.add_us((k0 + self.backoff as u64) * slot_us)
        };
        self.sched_td = td;
        self.fire_at = fire;
        self.fire_gen += 1;
        self.phase = Phase::Counting;
        StationAction::ScheduleFire(fire, self.fire_gen)
    }

    /// Settle the attempt account at transmit time and record the attempt's
    /// timing. Panics if the double-entry account disagrees with the
    /// timestamp identity.
    pub fn settle_fire(&mut self, now: SimTime, difs_us: u64, slot_us: u64) {
        let remaining = self.backoff;
        self.settle_span(now, remaining, difs_us, slot_us);
        self.backoff = 0;
        let fes = self.fes.as_mut().expect("attempt in progress");
        let acct = &mut fes.acct;
        if !acct.difs_done {
            // the attempt rode a grid whose DIFS predates it; the accounted
            // DIFS comes out of tracked waiting
            acct.wait -= difs_us as i64;
            acct.difs_done = true;
        }
        assert!(acct.wait >= 0, "attempt wait went negative: {}", acct.wait);
        let contention = now.since(acct.a).saturating_sub(difs_us);
        assert_eq!(
            contention,
            acct.slots as u64 * slot_us + acct.wait as u64,
            "contention account mismatch at station {:?}: ts {} vs slots {} + wait {}",
            self.id,
            contention,
            acct.slots,
            acct.wait
        );
        fes.cur_tx_start = now;
        fes.cur_air_end = now;
    }

    /// Record the end of an own transmission belonging to the current
    /// attempt (data, or RTS/CTS exchange legs).
    pub fn note_air_end(&mut self, end: SimTime) {
        if let Some(fes) = self.fes.as_mut() {
            fes.cur_air_end = fes.cur_air_end.max(end);
        }
    }

    /// Close the current attempt's log entry after its outcome is known.
    pub fn close_attempt(&mut self, difs_us: u64) {
        let fes = self.fes.as_mut().expect("attempt in progress");
        let acct = &fes.acct;
        let contention = fes.cur_tx_start.since(acct.a).saturating_sub(difs_us);
        fes.done.push(AttemptLog {
            started: acct.a,
            tx_start: fes.cur_tx_start,
            air_end: fes.cur_air_end,
            contention_us: contention,
            backoff_slots: acct.slots,
            wait_us: acct.wait as u64,
        });
    }

    /// Start the account for attempt `k+1` after a failure. `a` is the
    /// decomposition anchor (own transmission end + SIFS), `now` the actual
    /// resume instant (the timeout); the gap is pre-charged as waiting.
    pub fn begin_retry_attempt(&mut self, a: SimTime, now: SimTime) {
        let fes = self.fes.as_mut().expect("retry has a fes");
        fes.retries += 1;
        fes.acct = AttemptAcct {
            a,
            last: now,
            difs_done: false,
            slots: 0,
            wait: now.since(a) as i64,
        };
        self.backoff = self.draw_backoff();
        self.phase = Phase::Pending;
    }

    /// Assemble the next PPDU from the queue and open its first attempt.
    /// Returns false when the queue is empty.
    pub fn begin_fes(&mut self, now: SimTime, ppdu_id: u64, phy: &PhyParams) -> bool {
        debug_assert!(self.fes.is_none());
        if self.queue.is_empty() {
            self.phase = Phase::Quiet;
            return false;
        }
        let mut packets = Vec::new();
        let mut bits = 0u64;
        while let Some(p) = self.queue.front() {
            if !packets.is_empty() && bits + p.bits > phy.ppdu_bits {
                break;
            }
            bits += p.bits;
            packets.push(self.queue.pop_front().unwrap());
        }
        let enqueue = packets
            .iter()
            .map(|p| p.enqueued)
            .min()
            .expect("at least one packet");
        self.fes = Some(FesState {
            ppdu_id,
            bits,
            packets,
            enqueue,
            fes_start: now,
            data_us: phy.tx_us(bits),
            retries: 0,
            done: Vec::new(),
            acct: AttemptAcct {
                a: now,
                last: now,
                difs_done: false,
                slots: 0,
                wait: 0,
            },
            cur_tx_start: now,
            cur_air_end: now,
        });
        // fresh attempts on an idle channel wait their own full DIFS
        if !self.view_busy(now) {
            if let Some(anchor) = self.idle_anchor {
                if anchor < now {
                    self.flush_idle(now, phy.difs_us, phy.slot_us);
                    self.idle_anchor = Some(now);
                    self.idle_flushed = 0;
                }
            }
        }
        self.backoff = self.draw_backoff();
        self.phase = Phase::Pending;
        true
    }

    /// Take the finished FES state (on success or drop).
    pub fn take_fes(&mut self) -> FesState {
        self.fes.take().expect("fes in progress")
    }

    /// Attempt timing data for the log record.
    pub(crate) fn attempt_vectors(
        fes: &FesState,
    ) -> (
        Vec<SimTime>,
        Vec<SimTime>,
        Vec<u64>,
        Vec<u64>,
        Vec<u32>,
        Vec<u64>,
    ) {
        let started = fes.done.iter().map(|a| a.started).collect();
        let tx = fes.done.iter().map(|a| a.tx_start).collect();
        let air = fes
            .done
            .iter()
            .map(|a| a.air_end.since(a.tx_start))
            .collect();
        let cont = fes.done.iter().map(|a| a.contention_us).collect();
        let slots = fes.done.iter().map(|a| a.backoff_slots).collect();
        let wait = fes.done.iter().map(|a| a.wait_us).collect();
        (started, tx, cont, air, slots, wait)
    }

    /// Idle transition: the view just became fully idle at `now`.
    pub fn on_view_idle(&mut self, now: SimTime) {
        debug_assert!(!self.view_busy(now));
        if self.idle_anchor.is_none() {
            self.idle_anchor = Some(now);
            self.idle_flushed = 0;
        }
    }

    /// Busy onset bookkeeping shared by audible and own transmissions:
    /// flush idle slots and drop the anchor. Returns whether the onset
    /// starts a countable busy period.
    pub fn on_view_busy(&mut self, now: SimTime, difs_us: u64, slot_us: u64) -> bool {
        let counts = self.onset_counts(now, difs_us);
        self.flush_idle(now, difs_us, slot_us);
        self.idle_anchor = None;
        self.idle_flushed = 0;
        counts
    }
}
