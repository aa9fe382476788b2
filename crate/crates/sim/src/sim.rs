//! The run loop: wires stations, topology and PHY parameters to the event
//! queue, tracks in-flight transmissions and collisions, and emits the
//! event log.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{Event, EventKind, EventQueue, FrameKind, SimTime, StationId, Transmission};
use crate::log::{EventLog, FesRecord, LogRecord, RunStats, StationStats};
use crate::mac::{Phase, PhyParams, Station, StationAction};
use crate::policy::{ContentionPolicy, FesContext};
use crate::topology::Topology;
use crate::traffic::{ArrivalBatch, TrafficSource};

/// Payload tag for a scheduled post-CTS data transmission.
const DATA_AFTER_CTS: u64 = u64::MAX;
/// Payload tag for a NAV-expiry recheck.
const NAV_CHECK: u64 = 1;

pub struct StationSetup {
    pub policy: Option<Box<dyn ContentionPolicy>>,
    pub source: Option<TrafficSource>,
}

pub struct Simulator {
    phy: PhyParams,
    topo: Topology,
    queue: EventQueue,
    stations: Vec<Station>,
    pending_arrivals: Vec<Option<ArrivalBatch>>,
    active: Vec<Transmission>,
    log: Vec<LogRecord>,
    stats: Vec<StationStats>,
    next_tx_id: u64,
    next_ppdu_id: u64,
}

/// Mix the scenario seed with a station index so adding a station does not
/// perturb the draws of the others.
fn station_seed(seed: u64, idx: usize) -> u64 {
    let mut z = seed ^ (idx as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Simulator {
    pub fn new(phy: PhyParams, topo: Topology, setups: Vec<StationSetup>, seed: u64) -> Simulator {
        assert_eq!(setups.len(), topo.len(), "one setup per station");
        phy.validate().expect("valid phy parameters");
        let stations: Vec<Station> = setups
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                Station::new(
                    StationId(i),
                    ChaCha8Rng::seed_from_u64(station_seed(seed, i)),
                    s.policy,
                    s.source,
                )
            })
            .collect();
        let n = stations.len();
        Simulator {
            phy,
            topo,
            queue: EventQueue::new(),
            stations,
            pending_arrivals: (0..n).map(|_| None).collect(),
            active: Vec::new(),
            log: Vec::new(),
            stats: vec![StationStats::default(); n],
            next_tx_id: 0,
            next_ppdu_id: 0,
        }
    }

    pub fn run_until(mut self, end: SimTime) -> (EventLog, RunStats) {
        for s in 0..self.stations.len() {
            self.schedule_next_arrival(s, SimTime::ZERO);
        }
        while let Some(t) = self.queue.peek_time() {
            if t > end {
                break;
            }
            let ev = self.queue.pop().expect("peeked event");
            self.dispatch(ev);
        }
        for (st, stat) in self.stations.iter_mut().zip(self.stats.iter_mut()) {
            st.finalize_stats(end);
            stat.own_tx_us = st.own_tx_us;
            stat.busy_us = st.busy_us;
            stat.idle_us = st.idle_us;
        }
        let n = self.stations.len();
        (
            EventLog {
                duration: end,
                n_stations: n,
                records: self.log,
            },
            RunStats {
                duration: end,
                stations: self.stats,
            },
        )
    }

    fn dispatch(&mut self, ev: Event) {
        let now = ev.time;
        let s = ev.station.idx();
        match ev.kind {
            EventKind::ArrivalDue => self.handle_arrival(s, now),
            EventKind::TxStart => {
                if ev.payload == DATA_AFTER_CTS {
                    self.start_data_after_cts(s, now);
                } else {
                    self.handle_fire(s, now, ev.payload);
                }
            }
            EventKind::RtsStart => self.handle_fire(s, now, ev.payload),
            EventKind::CtsStart => self.send_cts(s, now, ev.payload as usize),
            EventKind::AckDue => self.send_ack(s, now, ev.payload as usize),
            EventKind::TxEnd => self.handle_tx_end(now, ev.payload),
            EventKind::AckTimeout => self.handle_timeout(s, now),
            EventKind::SlotTick => {
                if ev.payload == NAV_CHECK {
                    self.handle_nav_check(s, now);
                }
            }
        }
    }

    fn apply_action(&mut self, s: usize, act: StationAction) {
        match act {
            StationAction::None => {}
            StationAction::ScheduleFire(t, gen) => {
                let kind = if self.phy.rts_cts {
                    EventKind::RtsStart
                } else {
                    EventKind::TxStart
                };
                self.queue.schedule(Event {
                    time: t,
                    kind,
                    station: StationId(s),
                    payload: gen,
                });
            }
            StationAction::ScheduleNavCheck(t) => {
                self.queue.schedule(Event {
                    time: t,
                    kind: EventKind::SlotTick,
                    station: StationId(s),
                    payload: NAV_CHECK,
                });
            }
        }
    }

    // ---------------------------------------------------------------
    // traffic
    // ---------------------------------------------------------------

    fn schedule_next_arrival(&mut self, s: usize, now: SimTime) {
        let Some(src) = self.stations[s].source.as_mut() else {
            return;
        };
        if let Some(batch) = src.next_arrival(now) {
            let at = batch.at.max(now);
            self.pending_arrivals[s] = Some(batch);
            self.queue.schedule(Event {
                time: at,
                kind: EventKind::ArrivalDue,
                station: StationId(s),
                payload: 0,
            });
        }
    }

    fn handle_arrival(&mut self, s: usize, now: SimTime) {
        let Some(batch) = self.pending_arrivals[s].take() else {
            return;
        };
        let bits: u64 = batch.packets.iter().map(|p| p.bits).sum();
        let frame = batch.packets.first().and_then(|p| p.frame.map(|f| f.id));
        self.log.push(LogRecord::Arrival {
            t: now,
            station: StationId(s),
            packets: batch.packets.len() as u32,
            bits,
            frame,
        });
        self.stations[s].queue.extend(batch.packets);
        self.schedule_next_arrival(s, now);
        if self.stations[s].phase == Phase::Quiet {
            self.try_begin_fes(s, now);
        }
    }

    fn refill_after_dequeue(&mut self, s: usize, now: SimTime) {
        let st = &mut self.stations[s];
        let Some(src) = st.source.as_ref() else {
            return;
        };
        if st.queue.is_empty() {
            if let Some(pkt) = src.refill(now) {
                st.queue.push_back(pkt);
                self.log.push(LogRecord::Arrival {
                    t: now,
                    station: StationId(s),
                    packets: 1,
                    bits: pkt.bits,
                    frame: None,
                });
            }
        }
    }

    fn try_begin_fes(&mut self, s: usize, now: SimTime) {
        if self.stations[s].fes.is_some() || self.stations[s].queue.is_empty() {
            if self.stations[s].fes.is_none() {
                self.stations[s].phase = Phase::Quiet;
            }
            return;
        }
        let id = self.next_ppdu_id;
        self.next_ppdu_id += 1;
        let started = self.stations[s].begin_fes(now, id, &self.phy);
        debug_assert!(started);
        self.refill_after_dequeue(s, now);
        let act = self.stations[s].ensure_contending(now, self.phy.difs_us, self.phy.slot_us);
        self.apply_action(s, act);
    }

    // ---------------------------------------------------------------
    // transmissions
    // ---------------------------------------------------------------

    fn handle_fire(&mut self, s: usize, now: SimTime, gen: u64) {
        {
            let st = &self.stations[s];
            if st.phase != Phase::Counting || st.fire_gen != gen {
                return; // stale fire
            }
        }
        self.stations[s].settle_fire(now, self.phy.difs_us, self.phy.slot_us);
        let (rx, kind, dur, ppdu, attempt) = {
            let st = &self.stations[s];
            let fes = st.fes.as_ref().expect("firing attempt has a fes");
            let rx = self.topo.link(StationId(s)).expect("transmitter has a link");
            if self.phy.rts_cts {
                (rx, FrameKind::Rts, self.phy.rts_us, fes.ppdu_id, fes.attempt_no())
            } else {
                (rx, FrameKind::Data, fes.data_us, fes.ppdu_id, fes.attempt_no())
            }
        };
        self.stations[s].phase = if self.phy.rts_cts {
            Phase::TxRts
        } else {
            Phase::TxData
        };
        self.stats[s].attempts += 1;
        self.begin_transmission(s, rx, kind, dur, 0, Some(ppdu), attempt, now, true);
    }

    fn start_data_after_cts(&mut self, s: usize, now: SimTime) {
        let (rx, dur, ppdu, attempt) = {
            let st = &self.stations[s];
            debug_assert_eq!(st.phase, Phase::AwaitCts);
            let fes = st.fes.as_ref().expect("cts granted to a live fes");
            let rx = self.topo.link(StationId(s)).expect("transmitter has a link");
            (rx, fes.data_us, fes.ppdu_id, fes.attempt_no())
        };
        self.stations[s].phase = Phase::TxData;
        self.begin_transmission(s, rx, FrameKind::Data, dur, 0, Some(ppdu), attempt, now, false);
    }

    fn send_cts(&mut self, s: usize, now: SimTime, sender: usize) {
        // reserve covers the data and its ack after the CTS
        let data_us = self.stations[sender]
            .fes
            .as_ref()
            .expect("rts sender awaits cts")
            .data_us;
        let reserve = self.phy.sifs_us + data_us + self.phy.sifs_us + self.phy.ack_us;
        self.begin_transmission(
            s,
            StationId(sender),
            FrameKind::Cts,
            self.phy.cts_us,
            reserve,
            None,
            0,
            now,
            false,
        );
    }

    fn send_ack(&mut self, s: usize, now: SimTime, sender: usize) {
        self.begin_transmission(
            s,
            StationId(sender),
            FrameKind::Ack,
            self.phy.ack_us,
            0,
            None,
            0,
            now,
            false,
        );
    }

    #[allow(clippy::too_many_arguments)]
    fn begin_transmission(
        &mut self,
        tx: usize,
        rx: StationId,
        kind: FrameKind,
        dur: u64,
        reserve: u64,
        ppdu: Option<u64>,
        attempt: u32,
        now: SimTime,
        count_event: bool,
    ) {
        let id = self.next_tx_id;
        self.next_tx_id += 1;

        let destroyer = matches!(kind, FrameKind::Data | FrameKind::Rts);
        let mut tainted = false;
        if destroyer {
            if self.stations[rx.idx()].transmitting {
                tainted = true;
            }
            for o in &self.active {
                let hits_rx = matches!(o.kind, FrameKind::Data | FrameKind::Rts)
                    && self.topo.senses(rx, o.tx);
                if hits_rx || o.tx == rx {
                    tainted = true;
                }
            }
        }
        // destroy ongoing receptions this transmission lands on
        for o in &mut self.active {
            if !matches!(o.kind, FrameKind::Data | FrameKind::Rts) {
                continue;
            }
            if o.tx.idx() == tx {
                continue;
            }
            let lands = (destroyer && self.topo.senses(o.rx, StationId(tx))) || o.rx.idx() == tx;
            if lands {
                o.tainted = true;
            }
        }

        let end = now.add_us(dur);
        self.active.push(Transmission {
            id,
            tx: StationId(tx),
            rx,
            kind,
            start: now,
            end,
            tainted,
            reserve_us: reserve,
            ppdu,
            attempt,
        });
        self.log.push(LogRecord::TxStart {
            t: now,
            station: StationId(tx),
            kind,
            dur_us: dur,
            ppdu,
            attempt,
        });
        self.queue.schedule(Event {
            time: end,
            kind: EventKind::TxEnd,
            station: StationId(tx),
            payload: id,
        });

        // transmitter's own view
        {
            let st = &mut self.stations[tx];
            st.on_view_busy(now, self.phy.difs_us, self.phy.slot_us);
            if count_event {
                st.observe_tx_events(1);
            }
            if st.phase == Phase::Counting {
                // own control transmission while counting down: freeze; on a
                // boundary coincidence push the fire out instead of sending
                // two frames at once
                if st.freeze(now, self.phy.difs_us, self.phy.slot_us) {
                    st.fire_gen += 1;
                    st.backoff = st.backoff.max(1);
                    st.phase = Phase::Pending;
                }
            }
            st.transmitting = true;
            st.roll_segment(now);
        }

        // notify every station that senses the transmitter
        for j in 0..self.stations.len() {
            if j == tx || !self.topo.senses(StationId(j), StationId(tx)) {
                continue;
            }
            self.notify_busy_onset(j, now, kind, rx, end, reserve);
        }
    }

    fn notify_busy_onset(
        &mut self,
        j: usize,
        now: SimTime,
        kind: FrameKind,
        addressee: StationId,
        tx_end: SimTime,
        reserve: u64,
    ) {
        let heard_rts = kind != FrameKind::Cts || self.topo.senses(StationId(j), addressee);
        let st = &mut self.stations[j];
        let counts = st.on_view_busy(now, self.phy.difs_us, self.phy.slot_us);
        let events = if kind == FrameKind::Cts && !heard_rts {
            // a CTS for an exchange whose RTS was inaudible: the busy period
            // plus the hidden data transmission it announces
            if counts {
                2
            } else {
                1
            }
        } else if counts {
            1
        } else {
            0
        };
        st.observe_tx_events(events);
        if kind == FrameKind::Cts && StationId(j) != addressee {
            st.nav_until = st.nav_until.max(tx_end.add_us(reserve));
        }
        if st.phase == Phase::Counting {
            // same-boundary fires stay committed; freeze() leaves those alone
            st.freeze(now, self.phy.difs_us, self.phy.slot_us);
        }
        st.audible += 1;
        st.roll_segment(now);
    }

    fn maybe_release_view(&mut self, j: usize, now: SimTime) {
        let st = &mut self.stations[j];
        st.roll_segment(now);
        if st.audible == 0 && !st.transmitting {
            if st.nav_until > now {
                let t = st.nav_until;
                self.apply_action(j, StationAction::ScheduleNavCheck(t));
            } else {
                st.on_view_idle(now);
                let act = st.ensure_contending(now, self.phy.difs_us, self.phy.slot_us);
                self.apply_action(j, act);
            }
        }
    }

    fn handle_nav_check(&mut self, s: usize, now: SimTime) {
        let st = &mut self.stations[s];
        if st.audible == 0 && !st.transmitting && st.nav_until <= now && st.idle_anchor.is_none() {
            st.roll_segment(now);
            st.on_view_idle(now);
            let act = st.ensure_contending(now, self.phy.difs_us, self.phy.slot_us);
            self.apply_action(s, act);
        }
    }

    fn handle_tx_end(&mut self, now: SimTime, id: u64) {
        let pos = self
            .active
            .iter()
            .position(|o| o.id == id)
            .expect("tx end for an active transmission");
        let tx = self.active.swap_remove(pos);
        self.log.push(LogRecord::TxEnd {
            t: now,
            station: tx.tx,
            kind: tx.kind,
        });

        // release at the transmitter
        {
            let st = &mut self.stations[tx.tx.idx()];
            st.transmitting = false;
            match tx.kind {
                FrameKind::Data if tx.ppdu.is_some() => {
                    st.note_air_end(now);
                    st.phase = Phase::AwaitAck;
                }
                FrameKind::Rts => {
                    st.note_air_end(now);
                    st.phase = Phase::AwaitCts;
                }
                _ => {}
            }
        }
        self.maybe_release_view(tx.tx.idx(), now);

        // release at every hearer
        for j in 0..self.stations.len() {
            if j == tx.tx.idx() || !self.topo.senses(StationId(j), tx.tx) {
                continue;
            }
            self.stations[j].audible -= 1;
            self.maybe_release_view(j, now);
        }

        match tx.kind {
            FrameKind::Data => {
                if tx.tainted {
                    self.log.push(LogRecord::Collision {
                        t: now,
                        station: tx.tx,
                        receiver: tx.rx,
                        kind: FrameKind::Data,
                        ppdu: tx.ppdu.expect("data carries a ppdu"),
                        attempt: tx.attempt,
                    });
                    self.queue.schedule(Event {
                        time: now.add_us(self.phy.ack_timeout_us()),
                        kind: EventKind::AckTimeout,
                        station: tx.tx,
                        payload: 0,
                    });
                } else {
                    self.queue.schedule(Event {
                        time: now.add_us(self.phy.sifs_us),
                        kind: EventKind::AckDue,
                        station: tx.rx,
                        payload: tx.tx.idx() as u64,
                    });
                }
            }
            FrameKind::Rts => {
                if tx.tainted {
                    self.log.push(LogRecord::Collision {
                        t: now,
                        station: tx.tx,
                        receiver: tx.rx,
                        kind: FrameKind::Rts,
                        ppdu: tx.ppdu.expect("rts carries a ppdu"),
                        attempt: tx.attempt,
                    });
                    self.queue.schedule(Event {
                        time: now.add_us(self.phy.cts_timeout_us()),
                        kind: EventKind::AckTimeout,
                        station: tx.tx,
                        payload: 0,
                    });
                } else {
                    self.queue.schedule(Event {
                        time: now.add_us(self.phy.sifs_us),
                        kind: EventKind::CtsStart,
                        station: tx.rx,
                        payload: tx.tx.idx() as u64,
                    });
                }
            }
            FrameKind::Cts => {
                // the addressee proceeds with its data after a SIFS
                self.queue.schedule(Event {
                    time: now.add_us(self.phy.sifs_us),
                    kind: EventKind::TxStart,
                    station: tx.rx,
                    payload: DATA_AFTER_CTS,
                });
            }
            FrameKind::Ack => {
                self.complete_success(tx.rx.idx(), now);
            }
        }
    }

    fn handle_timeout(&mut self, s: usize, now: SimTime) {
        debug_assert!(matches!(
            self.stations[s].phase,
            Phase::AwaitAck | Phase::AwaitCts
        ));
        self.stations[s].close_attempt(self.phy.difs_us);
        self.stats[s].failures += 1;
        let ctx = FesContext {
            contention_us: self.stations[s]
                .fes
                .as_ref()
                .expect("failed attempt has a fes")
                .last_contention_us(),
        };
        if let Some(policy) = self.stations[s].policy.as_mut() {
            let prev_cw = policy.current_cw();
            let rep = policy.on_failure(&ctx);
            self.log.push(LogRecord::PolicyFailure {
                t: now,
                station: StationId(s),
                prev_cw,
                cw_fail: rep.cw_fail,
                cw: rep.cw,
                first: rep.first,
            });
        }
        let exhausted = {
            let fes = self.stations[s].fes.as_ref().expect("fes in progress");
            fes.retries >= self.phy.retry_limit
        };
        if exhausted {
            let fes = self.stations[s].take_fes();
            self.log.push(LogRecord::Drop {
                t: now,
                station: StationId(s),
                ppdu: fes.ppdu_id,
                attempts: fes.retries + 1,
                bits: fes.bits,
                packets: fes.packets.len() as u32,
            });
            self.stats[s].dropped_ppdus += 1;
            if let Some(policy) = self.stations[s].policy.as_mut() {
                policy.on_drop();
            }
            self.stations[s].phase = Phase::Quiet;
            self.try_begin_fes(s, now);
        } else {
            let a = {
                let fes = self.stations[s].fes.as_ref().expect("fes in progress");
                // decomposition anchor: the attempt's own airtime end + SIFS
                fes_air_end(fes).add_us(self.phy.sifs_us)
            };
            self.stations[s].begin_retry_attempt(a, now);
            let act = self.stations[s].ensure_contending(now, self.phy.difs_us, self.phy.slot_us);
            self.apply_action(s, act);
        }
    }

    fn complete_success(&mut self, s: usize, now: SimTime) {
        debug_assert_eq!(self.stations[s].phase, Phase::AwaitAck);
        self.stations[s].close_attempt(self.phy.difs_us);
        let fes = self.stations[s].take_fes();
        self.stations[s].phase = Phase::Quiet;
        let ctx = FesContext {
            contention_us: fes.last_contention_us(),
        };

        let (attempt_started, tx_starts, contention_us, air_us, backoff_slots, wait_us) =
            Station::attempt_vectors(&fes);
        let mut frames: Vec<(u64, SimTime, u32)> = Vec::new();
        for p in &fes.packets {
            if let Some(tag) = p.frame {
                match frames.iter_mut().find(|(fid, _, _)| *fid == tag.id) {
                    Some((_, _, n)) => *n += 1,
                    None => frames.push((tag.id, tag.generated, 1)),
                }
            }
        }
        self.stats[s].delivered_bytes += fes.bits / 8;
        self.stats[s].delivered_ppdus += 1;
        self.log.push(LogRecord::FesComplete(FesRecord {
            t: now,
            station: StationId(s),
            ppdu: fes.ppdu_id,
            enqueue: fes.enqueue,
            fes_start: fes.fes_start,
            attempts: fes.retries + 1,
            bits: fes.bits,
            packets: fes.packets.len() as u32,
            data_us: fes.data_us,
            attempt_started,
            tx_starts,
            air_us,
            contention_us,
            backoff_slots,
            wait_us,
            frames,
        }));

        if let Some(policy) = self.stations[s].policy.as_mut() {
            let prev_cw = policy.current_cw();
            let rep = policy.on_ack(&ctx);
            let (mar, n_tx, n_idle) = match rep.window {
                Some(w) => (Some(w.mar), w.n_tx, w.n_idle),
                None => (None, 0, 0),
            };
            self.log.push(LogRecord::PolicyAck {
                t: now,
                station: StationId(s),
                prev_cw,
                restored_cw: rep.restored_cw,
                mar,
                n_tx,
                n_idle,
                cw: rep.cw,
            });
        }
        self.try_begin_fes(s, now);
    }
}

fn fes_air_end(fes: &crate::mac::FesState) -> SimTime {
    fes.cur_air_end()
}

/// Run a prepared simulator for `duration_us` of simulated time.
pub fn run_simulation(
    phy: PhyParams,
    topo: Topology,
    setups: Vec<StationSetup>,
    seed: u64,
    duration_us: u64,
) -> (EventLog, RunStats) {
    Simulator::new(phy, topo, setups, seed).run_until(SimTime(duration_us))
}
