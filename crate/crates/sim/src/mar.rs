//! Microscopic access rate observer.
//!
//! Counts transmission events and idle backoff slots seen on the channel and
//! reports their ratio `n_tx / (n_tx + n_idle)` once a full observation
//! window has accumulated. Busy periods are counted once at their start edge
//! regardless of duration: the signal measures access events, not airtime.
//! A CTS whose RTS was not audible counts as two events, standing in for the
//! hidden data transmission that follows it.

use thiserror::Error;

pub const DEFAULT_OBSERVATION_WINDOW: u64 = 300;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MarError {
    #[error("insufficient samples: have {have}, need {need}")]
    InsufficientSamples { have: u64, need: u64 },
}

#[derive(Debug, Clone)]
pub struct MarObserver {
    n_tx: u64,
    n_idle: u64,
    n_obs: u64,
}

impl MarObserver {
    pub fn new(n_obs: u64) -> MarObserver {
        MarObserver {
            n_tx: 0,
            n_idle: 0,
            n_obs,
        }
    }

    /// Record `slots` observed idle backoff slots.
    #[inline]
    pub fn record_idle(&mut self, slots: u64) {
        self.n_idle += slots;
    }

    /// Record `events` transmission events (busy-period starts, own
    /// transmission starts, or inferred events from a hidden-RTS CTS).
    #[inline]
    pub fn record_tx(&mut self, events: u64) {
        self.n_tx += events;
    }

    #[inline]
    pub fn samples(&self) -> u64 {
        self.n_tx + self.n_idle
    }

    #[inline]
    pub fn is_ready(&self) -> bool {
        self.samples() >= self.n_obs
    }

    #[inline]
    pub fn counts(&self) -> (u64, u64) {
        (self.n_tx, self.n_idle)
    }

    /// Compute the access rate over the accumulated window and reset the
    /// counters. Fails without resetting when the window is not yet full.
    pub fn compute_mar(&mut self) -> Result<f64, MarError> {
        if !self.is_ready() {
            return Err(MarError::InsufficientSamples {
                have: self.samples(),
                need: self.n_obs,
            });
        }
        let mar = self.n_tx as f64 / (self.n_tx + self.n_idle) as f64;
        self.n_tx = 0;
        self.n_idle = 0;
        Ok(mar)
    }
}
