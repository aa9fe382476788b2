//! Discrete-event core: a virtual microsecond clock, a deterministic event
//! queue, and per-station channel occupancy over a carrier-sense graph.
//!
//! All randomness is drawn from per-station generators derived from the
//! scenario seed, so a run is a pure function of (scenario, seed).

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

/// Absolute simulation time in integer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    #[inline]
    pub fn us(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn add_us(self, d: u64) -> SimTime {
        SimTime(self.0 + d)
    }

    /// Microseconds elapsed since `earlier`; zero if `earlier` is later.
    #[inline]
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Station identifier; indexes into the scenario's station table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StationId(pub usize);

impl StationId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0
    }
}

/// Event kinds, ranked for deterministic dispatch of simultaneous events.
/// Lower rank dispatches first; `TxEnd` precedes `SlotTick` so channel
/// releases are visible before any boundary action at the same instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    TxEnd = 0,
    AckTimeout = 1,
    AckDue = 2,
    CtsStart = 3,
    RtsStart = 4,
    TxStart = 5,
    SlotTick = 6,
    ArrivalDue = 7,
}

/// A scheduled event. `payload` carries a kind-specific id (transmission id,
/// generation counter, ...) and is opaque to the queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: SimTime,
    pub kind: EventKind,
    pub station: StationId,
    pub payload: u64,
}

#[derive(PartialEq, Eq)]
struct QueuedEvent {
    event: Event,
    seq: u64,
}

impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (
            self.event.time,
            self.event.kind,
            self.event.station,
            self.seq,
        )
            .cmp(&(
                other.event.time,
                other.event.kind,
                other.event.station,
                other.seq,
            ))
    }
}

impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Deterministic event queue. Ties at equal time break by kind rank, then
/// ascending station id, then insertion order.
pub struct EventQueue {
    heap: BinaryHeap<Reverse<QueuedEvent>>,
    seq: u64,
    clock: SimTime,
}

impl Default for EventQueue {
    fn default() -> Self {
        Self::new()
    }
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            seq: 0,
            clock: SimTime::ZERO,
        }
    }

    #[inline]
    pub fn clock(&self) -> SimTime {
        self.clock
    }

    /// Enqueue an event. Scheduling in the past is a contract violation and
    /// aborts the run.
    pub fn schedule(&mut self, event: Event) {
        assert!(
            event.time >= self.clock,
            "schedule in the past: event at {} with clock {}",
            event.time,
            self.clock
        );
        self.heap.push(Reverse(QueuedEvent {
            event,
            seq: self.seq,
        }));
        self.seq += 1;
    }

    /// Pop the next event and advance the clock to it.
    pub fn pop(&mut self) -> Option<Event> {
        let Reverse(qe) = self.heap.pop()?;
        debug_assert!(qe.event.time >= self.clock);
        self.clock = qe.event.time;
        Some(qe.event)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(qe)| qe.event.time)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// MAC frame types that occupy the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Data,
    Rts,
    Cts,
    Ack,
}

/// An in-flight transmission tracked by the engine.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub id: u64,
    pub tx: StationId,
    pub rx: StationId,
    pub kind: FrameKind,
    pub start: SimTime,
    pub end: SimTime,
    /// Set when another data/RTS transmission audible at `rx` overlaps this
    /// one, or `rx` was itself transmitting: the reception is destroyed.
    pub tainted: bool,
    /// For CTS frames: airtime reserved after the CTS (data + ack exchange).
    pub reserve_us: u64,
    pub ppdu: Option<u64>,
    pub attempt: u32,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, kind: EventKind, sta: usize) -> Event {
        Event {
            time: SimTime(t),
            kind,
            station: StationId(sta),
            payload: 0,
        }
    }

    #[test]
    fn dispatch_in_time_order() {
        let mut q = EventQueue::new();
        q.schedule(ev(1000, EventKind::TxEnd, 0));
        q.schedule(ev(500, EventKind::SlotTick, 1));
        assert_eq!(q.pop().unwrap().time, SimTime(500));
        assert_eq!(q.pop().unwrap().time, SimTime(1000));
        assert!(q.pop().is_none());
    }

    #[test]
    fn tie_break_kind_rank_then_station() {
        let mut q = EventQueue::new();
        q.schedule(ev(500, EventKind::SlotTick, 0));
        q.schedule(ev(500, EventKind::TxEnd, 1));
        let first = q.pop().unwrap();
        assert_eq!(first.kind, EventKind::TxEnd);
        let second = q.pop().unwrap();
        assert_eq!(second.kind, EventKind::SlotTick);

        q.schedule(ev(600, EventKind::TxStart, 2));
        q.schedule(ev(600, EventKind::TxStart, 1));
        assert_eq!(q.pop().unwrap().station, StationId(1));
        assert_eq!(q.pop().unwrap().station, StationId(2));
    }

    #[test]
    fn equal_keys_dispatch_fifo() {
        let mut q = EventQueue::new();
        let mut a = ev(7, EventKind::ArrivalDue, 3);
        a.payload = 1;
        let mut b = ev(7, EventKind::ArrivalDue, 3);
        b.payload = 2;
        q.schedule(a);
        q.schedule(b);
        assert_eq!(q.pop().unwrap().payload, 1);
        assert_eq!(q.pop().unwrap().payload, 2);
    }

    #[test]
    #[should_panic(expected = "schedule in the past")]
    fn schedule_in_past_aborts() {
        let mut q = EventQueue::new();
        q.schedule(ev(100, EventKind::TxEnd, 0));
        q.pop();
        q.schedule(ev(50, EventKind::TxEnd, 0));
    }
}
