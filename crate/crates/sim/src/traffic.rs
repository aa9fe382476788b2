//! Packet arrival generators: a saturated source that never lets the queue
//! empty, replay of timestamped traces, and a periodic frame source with
//! MTU packetization.

use crate::engine::SimTime;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub at_us: u64,
    pub bytes: u64,
    pub direction: Direction,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceParseError {
    #[error("line {line}: expected `timestamp_us,size_bytes,direction`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: timestamps must be non-decreasing")]
    OutOfOrder { line: usize },
    #[error("line {line}: size must be positive")]
    ZeroSize { line: usize },
}

/// Parse a delimited trace: `timestamp_us,size_bytes,direction` per line,
/// `#` comments and an optional header allowed.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceParseError> {
    let mut out = Vec::new();
    let mut last = 0u64;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let mut fields = t.split(',').map(str::trim);
        let (a, b, c) = (fields.next(), fields.next(), fields.next());
        let (Some(a), Some(b), Some(c)) = (a, b, c) else {
            return Err(TraceParseError::Malformed {
                line,
                text: t.to_string(),
            });
        };
        if fields.next().is_some() {
            return Err(TraceParseError::Malformed {
                line,
                text: t.to_string(),
            });
        }
        // optional header
        if idx == 0 && a.parse::<u64>().is_err() {
            continue;
        }
        let at_us: u64 = a.parse().map_err(|_| TraceParseError::Malformed {
            line,
            text: t.to_string(),
        })?;
        let bytes: u64 = b.parse().map_err(|_| TraceParseError::Malformed {
            line,
            text: t.to_string(),
        })?;
        let direction = match c.to_ascii_lowercase().as_str() {
            "down" | "dl" | "d" => Direction::Down,
            "up" | "ul" | "u" => Direction::Up,
            _ => {
                return Err(TraceParseError::Malformed {
                    line,
                    text: t.to_string(),
                })
            }
        };
        if bytes == 0 {
            return Err(TraceParseError::ZeroSize { line });
        }
        if at_us < last {
            return Err(TraceParseError::OutOfOrder { line });
        }
        last = at_us;
        out.push(TraceRecord {
            at_us,
            bytes,
            direction,
        });
    }
    Ok(out)
}

/// A packet queued at a transmitter. `frame` ties packets of one video frame
/// together for stall accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub bits: u64,
    pub enqueued: SimTime,
    pub frame: Option<FrameTag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameTag {
    pub id: u64,
    pub generated: SimTime,
}

/// One batch of packets due at a given time.
#[derive(Debug, Clone)]
pub struct ArrivalBatch {
    pub at: SimTime,
    pub packets: Vec<Packet>,
}

#[derive(Debug, Clone)]
pub enum SourceKind {
    /// Queue never empties: refilled with `packet_bits`-sized packets on
    /// dequeue.
    Saturated { packet_bits: u64 },
    /// Replay of a parsed trace, filtered by direction.
    Trace {
        records: Vec<TraceRecord>,
        direction: Direction,
    },
    /// A frame of `frame_bytes` every `1e6 / fps` µs, packetized into
    /// ceil(frame/mtu) packets.
    Frames { fps: u32, frame_bytes: u64, mtu: u64 },
}

/// A per-station arrival generator, active inside `[start, stop)`.
#[derive(Debug, Clone)]
pub struct TrafficSource {
    pub kind: SourceKind,
    pub start: SimTime,
    pub stop: Option<SimTime>,
    cursor: usize,
    next_frame: u64,
}

impl TrafficSource {
    pub fn new(kind: SourceKind, start: SimTime, stop: Option<SimTime>) -> TrafficSource {
        TrafficSource {
            kind,
            start,
            stop,
            cursor: 0,
            next_frame: 0,
        }
    }

    pub fn active_at(&self, t: SimTime) -> bool {
        t >= self.start && self.stop.map_or(true, |s| t < s)
    }

    pub fn is_saturated(&self) -> bool {
        matches!(self.kind, SourceKind::Saturated { .. })
    }

    /// The next scheduled arrival at or after `now`, or `None` when the
    /// source is exhausted. Saturated sources produce a single priming batch
    /// at `start` and refill through [`TrafficSource::refill`] afterwards.
    pub fn next_arrival(&mut self, now: SimTime) -> Option<ArrivalBatch> {
        let now = now.max(self.start);
        if let Some(stop) = self.stop {
            if now >= stop {
                return None;
            }
        }
        match &self.kind {
            SourceKind::Saturated { packet_bits } => {
                if self.cursor > 0 {
                    return None;
                }
                self.cursor = 1;
                Some(ArrivalBatch {
                    at: self.start,
                    packets: vec![Packet {
                        bits: *packet_bits,
                        enqueued: self.start,
                        frame: None,
                    }],
                })
            }
            SourceKind::Trace { records, direction } => {
                while self.cursor < records.len() {
                    let rec = records[self.cursor];
                    self.cursor += 1;
                    if rec.direction != *direction {
                        continue;
                    }
                    let at = self.start.add_us(rec.at_us);
                    if let Some(stop) = self.stop {
                        if at >= stop {
                            return None;
                        }
                    }
                    return Some(ArrivalBatch {
                        at,
                        packets: vec![Packet {
                            bits: rec.bytes * 8,
                            enqueued: at,
                            frame: None,
                        }],
                    });
                }
                None
            }
            SourceKind::Frames {
                fps,
                frame_bytes,
                mtu,
            } => {
                let interval = 1_000_000u64 / *fps as u64;
                let at = self.start.add_us(self.next_frame * interval);
                if let Some(stop) = self.stop {
                    if at >= stop {
                        return None;
                    }
                }
                let id = self.next_frame;
                self.next_frame += 1;
                let tag = FrameTag { id, generated: at };
                let mut packets = Vec::new();
                let mut left = *frame_bytes;
                while left > 0 {
                    let sz = left.min(*mtu);
                    packets.push(Packet {
                        bits: sz * 8,
                        enqueued: at,
                        frame: Some(tag),
                    });
                    left -= sz;
                }
                Some(ArrivalBatch { at, packets })
            }
        }
    }

    /// For saturated sources: the packet that replaces a dequeued one, while
    /// the source is active.
    pub fn refill(&self, now: SimTime) -> Option<Packet> {
        match &self.kind {
            SourceKind::Saturated { packet_bits } if self.active_at(now) => Some(Packet {
                bits: *packet_bits,
                enqueued: now,
                frame: None,
            }),
            _ => None,
        }
    }
}
