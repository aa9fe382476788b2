//! A deterministic discrete-event simulator of IEEE 802.11 CSMA/CA channel
//! contention with pluggable contention-window control policies, plus a
//! closed-form model library for the same quantities.
//!
//! The simulator models DIFS deferral, slotted random backoff with
//! freeze/resume, frame exchange sequences with optional RTS/CTS, ACK
//! handling and retransmission, hidden terminals through an explicit
//! carrier-sense graph, and per-station observation of the microscopic
//! access rate (the fraction of transmission chances actually used). Runs
//! are pure functions of (scenario, seed): identical inputs give
//! byte-identical event logs.
//!
//! Policies include the MAR-driven hybrid-increase multiplicative-decrease
//! controller with fast recovery, the standard binary exponential backoff
//! with EDCA presets, and approximate IdleSense and delay-driven baselines.

pub mod analytics;
pub mod engine;
pub mod log;
pub mod mac;
pub mod mar;
pub mod metrics;
pub mod policy;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod topology;
pub mod traffic;

pub use engine::{EventKind, FrameKind, SimTime, StationId};
pub use log::{EventLog, FesRecord, LogRecord, RunStats};
pub use mac::PhyParams;
pub use scenario::Scenario;
pub use sim::{run_simulation, Simulator, StationSetup};
pub use topology::Topology;
