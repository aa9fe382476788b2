//! Contention-window control policies.
//!
//! Every policy sits behind the same interface: it observes channel
//! state changes (idle slots, transmission events), reacts to the outcome of
//! its own frame exchanges, and exposes the current contention window. The
//! window is kept real-valued internally; only the backoff draw floors it.
//!
//! `MarHimd` is the access-rate-driven controller: a hybrid-increase /
//! multiplicative-decrease law steering the observed microscopic access rate
//! to a target, plus a fast-recovery rule that temporarily halves the window
//! on the first retransmission of a PPDU and restores it on the next ACK.
//! `BinaryExponential` is the standard doubling rule with EDCA parameter
//! presets. `IdleSense` and `DelayDriven` are reference baselines,
//! approximate: rebuilt from their one-line characterizations, good for
//! directional comparison only.

use crate::mar::{MarObserver, DEFAULT_OBSERVATION_WINDOW};
use serde::{Deserialize, Serialize};

/// A channel observation delivered by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelEvent {
    /// Completed idle backoff slots.
    IdleSlots(u64),
    /// Transmission events (busy-period starts; 2 for a hidden-RTS CTS).
    TxEvents(u64),
}

/// Per-attempt context handed to outcome callbacks.
#[derive(Debug, Clone, Copy, Default)]
pub struct FesContext {
    /// Contention interval of the attempt that just concluded, in µs.
    pub contention_us: u64,
}

/// What an ACK did to the policy state, for logging.
#[derive(Debug, Clone, Copy)]
pub struct AckReport {
    /// Window value right after the fast-recovery restore.
    pub restored_cw: f64,
    /// Present when a full observation window triggered an adjustment.
    pub window: Option<MarWindow>,
    /// Window value after the whole update.
    pub cw: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct MarWindow {
    pub mar: f64,
    pub n_tx: u64,
    pub n_idle: u64,
}

/// What a failed exchange did to the policy state, for logging.
#[derive(Debug, Clone, Copy)]
pub struct FailReport {
    pub cw_fail: f64,
    pub cw: f64,
    /// Whether this failure was the first for the head-of-line PPDU.
    pub first: bool,
}

pub trait ContentionPolicy: Send {
    fn observe(&mut self, ev: ChannelEvent);
    fn on_ack(&mut self, ctx: &FesContext) -> AckReport;
    fn on_failure(&mut self, ctx: &FesContext) -> FailReport;
    /// Head-of-line PPDU dropped after exhausting the retry limit.
    fn on_drop(&mut self) {}
    fn current_cw(&self) -> f64;
    fn name(&self) -> &'static str;
}

fn clamp(cw: f64, lo: f64, hi: f64) -> f64 {
    cw.max(lo).min(hi)
}

// ---------------------------------------------------------------------------
// MAR-driven HIMD with fast recovery
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarHimdParams {
    pub mar_tar: f64,
    pub mar_max: f64,
    pub cw_min: f64,
    pub cw_max: f64,
    pub m_inc: f64,
    pub m_dec: f64,
    pub a_inc: f64,
    pub a_fail: f64,
    pub n_obs: u64,
    /// Disable to get the stable-control-only variant.
    pub fast_recovery: bool,
}

impl Default for MarHimdParams {
    fn default() -> Self {
        MarHimdParams {
            mar_tar: 0.1,
            mar_max: 0.35,
            cw_min: 15.0,
            cw_max: 1023.0,
            m_inc: 500.0,
            m_dec: 0.95,
            a_inc: 15.0,
            a_fail: 5.0,
            n_obs: DEFAULT_OBSERVATION_WINDOW,
            fast_recovery: true,
        }
    }
}

impl MarHimdParams {
    /// Alternative preset deriving the additive gain from the window bounds.
    pub fn with_derived_m_inc(mut self) -> Self {
        self.m_inc = (self.cw_max - self.cw_min) / 2.0;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.mar_tar > 0.0 && self.mar_tar < self.mar_max && self.mar_max < 1.0) {
            return Err(format!(
                "need 0 < mar_tar < mar_max < 1, got {} and {}",
                self.mar_tar, self.mar_max
            ));
        }
        if !(self.cw_min >= 0.0 && self.cw_min < self.cw_max) {
            return Err(format!(
                "need 0 <= cw_min < cw_max, got {} and {}",
                self.cw_min, self.cw_max
            ));
        }
        if !(self.m_dec > 0.0 && self.m_dec < 1.0) {
            return Err(format!("need 0 < m_dec < 1, got {}", self.m_dec));
        }
        if self.a_inc < 0.0 || self.a_fail < 0.0 || self.m_inc < 0.0 {
            return Err("gains must be non-negative".into());
        }
        if self.n_obs == 0 {
            return Err("n_obs must be positive".into());
        }
        Ok(())
    }
}

pub struct MarHimd {
    params: MarHimdParams,
    cw: f64,
    cw_fail: f64,
    first_rtx: bool,
    observer: MarObserver,
}

impl MarHimd {
    pub fn new(params: MarHimdParams) -> MarHimd {
        let observer = MarObserver::new(params.n_obs);
        MarHimd {
            cw: params.cw_min,
            cw_fail: params.cw_min,
            first_rtx: true,
            observer,
            params,
        }
    }

    pub fn params(&self) -> &MarHimdParams {
        &self.params
    }

    pub fn observer(&self) -> &MarObserver {
        &self.observer
    }

    /// The hybrid-increase / multiplicative-decrease step for an observed
    /// access rate, returning the new (clamped) window.
    pub fn himd_step(params: &MarHimdParams, cw: f64, mar: f64) -> f64 {
        let p = params;
        let next = if mar > p.mar_tar {
            cw + cw * (mar - p.mar_max).max(0.0) + p.m_inc * (mar.min(p.mar_max) - p.mar_tar)
                + p.a_inc
        } else {
            let beta1 = 2.0 * mar / (p.mar_tar + mar);
            let beta2 = p.m_dec - (1.0 - p.m_dec) * (cw - p.cw_min) / (p.cw_max - p.cw_min);
            beta1.min(beta2).min(1.0) * cw
        };
        clamp(next, p.cw_min, p.cw_max)
    }
}

impl ContentionPolicy for MarHimd {
    fn observe(&mut self, ev: ChannelEvent) {
        match ev {
            ChannelEvent::IdleSlots(n) => self.observer.record_idle(n),
            ChannelEvent::TxEvents(n) => self.observer.record_tx(n),
        }
    }

    fn on_ack(&mut self, _ctx: &FesContext) -> AckReport {
        // Restore the window stashed at the previous failure.
        self.cw = clamp(self.cw_fail, self.params.cw_min, self.params.cw_max);
        let restored_cw = self.cw;
        if !self.observer.is_ready() {
            return AckReport {
                restored_cw,
                window: None,
                cw: self.cw,
            };
        }
        let (n_tx, n_idle) = self.observer.counts();
        let mar = self
            .observer
            .compute_mar()
            .expect("window readiness checked above");
        self.cw = Self::himd_step(&self.params, self.cw, mar);
        self.cw_fail = self.cw;
        self.first_rtx = true;
        AckReport {
            restored_cw,
            window: Some(MarWindow { mar, n_tx, n_idle }),
            cw: self.cw,
        }
    }

    fn on_failure(&mut self, _ctx: &FesContext) -> FailReport {
        if !self.params.fast_recovery {
            return FailReport {
                cw_fail: self.cw_fail,
                cw: self.cw,
                first: false,
            };
        }
        if self.first_rtx {
            self.cw_fail = clamp(self.cw + self.params.a_fail, self.params.cw_min, self.params.cw_max);
            self.cw = clamp(self.cw_fail / 2.0, self.params.cw_min, self.params.cw_max);
            self.first_rtx = false;
            FailReport {
                cw_fail: self.cw_fail,
                cw: self.cw,
                first: true,
            }
        } else {
            // Halving applies only to the first retransmission attempt.
            FailReport {
                cw_fail: self.cw_fail,
                cw: self.cw,
                first: false,
            }
        }
    }

    fn current_cw(&self) -> f64 {
        self.cw
    }

    fn name(&self) -> &'static str {
        if self.params.fast_recovery {
            "himd"
        } else {
            "himd_sc"
        }
    }
}

// ---------------------------------------------------------------------------
// IEEE binary exponential backoff and EDCA access categories
// ---------------------------------------------------------------------------

/// EDCA access categories with their contention-window bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdcaAc {
    Bk,
    Be,
    Vi,
    Vo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdcaAcParams {
    pub ac: EdcaAc,
    pub cw_min: f64,
    pub cw_max: f64,
}

impl EdcaAc {
    pub fn params(self) -> EdcaAcParams {
        let (cw_min, cw_max) = match self {
            EdcaAc::Bk => (7.0, 1023.0),
            EdcaAc::Be => (15.0, 1023.0),
            EdcaAc::Vi => (7.0, 15.0),
            EdcaAc::Vo => (1.0, 3.0),
        };
        EdcaAcParams {
            ac: self,
            cw_min,
            cw_max,
        }
    }
}

/// The standard's rule: double on failure, reset on success or drop.
pub struct BinaryExponential {
    cw_min: f64,
    cw_max: f64,
    cw: f64,
}

impl BinaryExponential {
    pub fn new(cw_min: f64, cw_max: f64) -> BinaryExponential {
        BinaryExponential {
            cw_min,
            cw_max,
            cw: cw_min,
        }
    }

    pub fn for_ac(ac: EdcaAc) -> BinaryExponential {
        let p = ac.params();
        BinaryExponential::new(p.cw_min, p.cw_max)
    }
}

impl ContentionPolicy for BinaryExponential {
    fn observe(&mut self, _ev: ChannelEvent) {}

    fn on_ack(&mut self, _ctx: &FesContext) -> AckReport {
        self.cw = self.cw_min;
        AckReport {
            restored_cw: self.cw,
            window: None,
            cw: self.cw,
        }
    }

    fn on_failure(&mut self, _ctx: &FesContext) -> FailReport {
        self.cw = (2.0 * (self.cw + 1.0) - 1.0).min(self.cw_max);
        FailReport {
            cw_fail: self.cw,
            cw: self.cw,
            first: false,
        }
    }

    fn on_drop(&mut self) {
        self.cw = self.cw_min;
    }

    fn current_cw(&self) -> f64 {
        self.cw
    }

    fn name(&self) -> &'static str {
        "ieee"
    }
}

// ---------------------------------------------------------------------------
// IdleSense (reference baseline, approximate)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdleSenseParams {
    /// Number of competing transmitters, supplied externally.
    pub n: usize,
    /// Target mean number of idle slots between transmission attempts.
    pub target_idle: f64,
    /// Multiplicative decrease applied when the channel idles above target.
    pub alpha: f64,
    /// Additive increase applied when the channel idles below target.
    pub step: f64,
    /// Estimation window in observed transmission events.
    pub window_tx: u64,
    pub deadband: f64,
    pub cw_min: f64,
    pub cw_max: f64,
}

impl Default for IdleSenseParams {
    fn default() -> Self {
        IdleSenseParams {
            n: 2,
            target_idle: 5.68,
            alpha: 0.95,
            step: 6.0,
            window_tx: 10,
            deadband: 0.75,
            cw_min: 15.0,
            cw_max: 1023.0,
        }
    }
}

/// AIMD on the contention window steering the observed mean number of idle
/// slots between transmission attempts toward a configured target.
pub struct IdleSense {
    params: IdleSenseParams,
    cw: f64,
    idle: u64,
    tx: u64,
}

impl IdleSense {
    pub fn new(params: IdleSenseParams) -> IdleSense {
        IdleSense {
            cw: params.cw_min,
            params,
            idle: 0,
            tx: 0,
        }
    }

    fn maybe_adjust(&mut self) {
        if self.tx < self.params.window_tx {
            return;
        }
        let mean_idle = self.idle as f64 / self.tx as f64;
        let err = mean_idle - self.params.target_idle;
        if err > self.params.deadband {
            // Channel idling too much: contend harder.
            self.cw *= self.params.alpha;
        } else if err < -self.params.deadband {
            self.cw += self.params.step;
        }
        self.cw = clamp(self.cw, self.params.cw_min, self.params.cw_max);
        self.idle = 0;
        self.tx = 0;
    }
}

impl ContentionPolicy for IdleSense {
    fn observe(&mut self, ev: ChannelEvent) {
        match ev {
            ChannelEvent::IdleSlots(n) => self.idle += n,
            ChannelEvent::TxEvents(n) => self.tx += n,
        }
        self.maybe_adjust();
    }

    fn on_ack(&mut self, _ctx: &FesContext) -> AckReport {
        AckReport {
            restored_cw: self.cw,
            window: None,
            cw: self.cw,
        }
    }

    fn on_failure(&mut self, _ctx: &FesContext) -> FailReport {
        FailReport {
            cw_fail: self.cw,
            cw: self.cw,
            first: false,
        }
    }

    fn current_cw(&self) -> f64 {
        self.cw
    }

    fn name(&self) -> &'static str {
        "idlesense"
    }
}

// ---------------------------------------------------------------------------
// DDA (reference baseline, approximate)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelayDrivenParams {
    /// Backoff delay budget in µs; infinity disables the deadline pressure.
    pub delta_us: f64,
    /// EWMA weight for the recent backoff delay estimate.
    pub gain: f64,
    pub decrease: f64,
    pub step: f64,
    /// Efficiency-driven ceiling the window drifts toward when delays are
    /// far below budget.
    pub efficiency_cw: f64,
    pub cw_min: f64,
    pub cw_max: f64,
}

impl Default for DelayDrivenParams {
    fn default() -> Self {
        DelayDrivenParams {
            delta_us: 5_000.0,
            gain: 0.2,
            decrease: 0.9,
            step: 8.0,
            efficiency_cw: 255.0,
            cw_min: 15.0,
            cw_max: 1023.0,
        }
    }
}

/// Keeps the station's recent backoff delay under a configured threshold,
/// drifting toward an efficiency-driven window when the budget is slack.
pub struct DelayDriven {
    params: DelayDrivenParams,
    cw: f64,
    delay_ewma: f64,
}

impl DelayDriven {
    pub fn new(params: DelayDrivenParams) -> DelayDriven {
        DelayDriven {
            cw: params.cw_min,
            params,
            delay_ewma: 0.0,
        }
    }

    fn update(&mut self, contention_us: u64) {
        let g = self.params.gain;
        self.delay_ewma = (1.0 - g) * self.delay_ewma + g * contention_us as f64;
        if self.delay_ewma > self.params.delta_us {
            self.cw *= self.params.decrease;
        } else if self.delay_ewma < 0.5 * self.params.delta_us && self.cw < self.params.efficiency_cw
        {
            self.cw += self.params.step;
        }
        self.cw = clamp(self.cw, self.params.cw_min, self.params.cw_max);
    }
}

impl ContentionPolicy for DelayDriven {
    fn observe(&mut self, _ev: ChannelEvent) {}

    fn on_ack(&mut self, ctx: &FesContext) -> AckReport {
        self.update(ctx.contention_us);
        AckReport {
            restored_cw: self.cw,
            window: None,
            cw: self.cw,
        }
    }

    fn on_failure(&mut self, ctx: &FesContext) -> FailReport {
        self.update(ctx.contention_us);
        FailReport {
            cw_fail: self.cw,
            cw: self.cw,
            first: false,
        }
    }

    fn current_cw(&self) -> f64 {
        self.cw
    }

    fn name(&self) -> &'static str {
        "dda"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> FesContext {
        FesContext { contention_us: 0 }
    }

    fn himd_with_cw(cw: f64) -> MarHimd {
        let mut p = MarHimd::new(MarHimdParams::default());
        p.cw = cw;
        p.cw_fail = cw;
        p
    }

    fn feed_window(p: &mut MarHimd, n_tx: u64, n_idle: u64) {
        p.observe(ChannelEvent::TxEvents(n_tx));
        p.observe(ChannelEvent::IdleSlots(n_idle));
    }

    #[test]
    fn increase_branch_moderate_rate() {
        // cw=100, mar=0.2 -> 100 + 500*(0.2-0.1) + 15 = 165
        let mut p = himd_with_cw(100.0);
        feed_window(&mut p, 60, 240); // mar = 0.2 over 300 samples
        let rep = p.on_ack(&ctx());
        assert!((rep.cw - 165.0).abs() < 1e-9, "cw {}", rep.cw);
        assert!((p.current_cw() - 165.0).abs() < 1e-9);
    }

    #[test]
    fn increase_branch_with_multiplicative_term() {
        // cw=100, mar=0.4 -> 100 + 100*0.05 + 500*(0.35-0.1) + 15 = 245
        let mut p = himd_with_cw(100.0);
        feed_window(&mut p, 120, 180); // mar = 0.4
        let rep = p.on_ack(&ctx());
        assert!((rep.cw - 245.0).abs() < 1e-9, "cw {}", rep.cw);
    }

    #[test]
    fn decrease_branch_clamps_at_floor() {
        // cw=15, mar=0.05 -> min(2/3, 0.95) * 15 = 10 -> clamp to 15
        let mut p = himd_with_cw(15.0);
        feed_window(&mut p, 15, 285); // mar = 0.05
        let rep = p.on_ack(&ctx());
        assert_eq!(rep.cw, 15.0);
        let w = rep.window.unwrap();
        assert!((w.mar - 0.05).abs() < 1e-12);
    }

    #[test]
    fn exact_target_takes_decrease_branch() {
        // mar == mar_tar: beta1 = 1, beta2 <= 0.95, so a mild decrease.
        let mut p = himd_with_cw(100.0);
        feed_window(&mut p, 30, 270); // mar = 0.1
        let rep = p.on_ack(&ctx());
        let beta2 = 0.95 - 0.05 * (100.0 - 15.0) / (1023.0 - 15.0);
        assert!((rep.cw - beta2 * 100.0).abs() < 1e-9);
        assert!(rep.cw < 100.0);
    }

    #[test]
    fn insufficient_samples_skips_adjustment_but_restores() {
        let mut p = himd_with_cw(100.0);
        feed_window(&mut p, 10, 100);
        let rep = p.on_ack(&ctx());
        assert!(rep.window.is_none());
        assert_eq!(rep.cw, 100.0);
        // counters kept for the next window
        assert_eq!(p.observer().counts(), (10, 100));
    }

    #[test]
    fn fast_recovery_halves_once_and_restores() {
        let mut p = himd_with_cw(100.0);
        let rep = p.on_failure(&ctx());
        assert!(rep.first);
        assert_eq!(rep.cw_fail, 105.0);
        assert_eq!(rep.cw, 52.5);

        // second consecutive failure: unchanged
        let rep2 = p.on_failure(&ctx());
        assert!(!rep2.first);
        assert_eq!(p.current_cw(), 52.5);

        // next ACK restores cw_fail before stable control
        let rep3 = p.on_ack(&ctx());
        assert_eq!(rep3.restored_cw, 105.0);
    }

    #[test]
    fn stable_control_only_variant_ignores_failures() {
        let mut params = MarHimdParams::default();
        params.fast_recovery = false;
        let mut p = MarHimd::new(params);
        p.cw = 80.0;
        p.cw_fail = 80.0;
        p.on_failure(&ctx());
        assert_eq!(p.current_cw(), 80.0);
    }

    #[test]
    fn beb_ladder_cap_and_reset() {
        let mut p = BinaryExponential::for_ac(EdcaAc::Be);
        assert_eq!(p.current_cw(), 15.0);
        p.on_failure(&ctx());
        assert_eq!(p.current_cw(), 31.0);
        p.on_failure(&ctx());
        assert_eq!(p.current_cw(), 63.0);
        for _ in 0..10 {
            p.on_failure(&ctx());
        }
        assert_eq!(p.current_cw(), 1023.0);
        p.on_ack(&ctx());
        assert_eq!(p.current_cw(), 15.0);

        p.on_failure(&ctx());
        p.on_drop();
        assert_eq!(p.current_cw(), 15.0);
    }

    #[test]
    fn edca_parameter_presets() {
        assert_eq!(EdcaAc::Bk.params().cw_min, 7.0);
        assert_eq!(EdcaAc::Bk.params().cw_max, 1023.0);
        assert_eq!(EdcaAc::Be.params().cw_min, 15.0);
        assert_eq!(EdcaAc::Vi.params().cw_min, 7.0);
        assert_eq!(EdcaAc::Vi.params().cw_max, 15.0);
        assert_eq!(EdcaAc::Vo.params().cw_min, 1.0);
        assert_eq!(EdcaAc::Vo.params().cw_max, 3.0);
    }

    #[test]
    fn idlesense_control_directions() {
        let mut p = IdleSense::new(IdleSenseParams {
            cw_min: 15.0,
            ..IdleSenseParams::default()
        });
        p.cw = 100.0;
        // far above target idle: decrease
        p.observe(ChannelEvent::IdleSlots(200));
        p.observe(ChannelEvent::TxEvents(10));
        assert!(p.current_cw() < 100.0);

        let before = p.current_cw();
        // far below target idle: increase
        p.observe(ChannelEvent::IdleSlots(5));
        p.observe(ChannelEvent::TxEvents(10));
        assert!(p.current_cw() > before);

        let before = p.current_cw();
        // at target: unchanged within deadband
        p.observe(ChannelEvent::IdleSlots(57));
        p.observe(ChannelEvent::TxEvents(10));
        assert_eq!(p.current_cw(), before);
    }

    #[test]
    fn dda_control_directions() {
        let mut p = DelayDriven::new(DelayDrivenParams::default());
        p.cw = 100.0;
        p.delay_ewma = 6_000.0;
        p.on_ack(&FesContext {
            contention_us: 20_000,
        });
        assert!(p.current_cw() < 100.0);

        let mut p = DelayDriven::new(DelayDrivenParams::default());
        p.cw = 100.0;
        p.on_ack(&FesContext { contention_us: 10 });
        assert!(p.current_cw() > 100.0);

        // infinite budget never decreases below the efficiency-driven value
        let mut p = DelayDriven::new(DelayDrivenParams {
            delta_us: f64::INFINITY,
            ..DelayDrivenParams::default()
        });
        p.cw = 100.0;
        for _ in 0..200 {
            p.on_ack(&FesContext {
                contention_us: 1_000_000,
            });
        }
        assert!(p.current_cw() >= 100.0);
        assert!(p.current_cw() <= p.params.efficiency_cw + p.params.step);
    }

    #[test]
    fn himd_direction_bounds() {
        let p = MarHimdParams::default();
        // above target: at least the additive floor
        for &(cw, mar) in &[(15.0, 0.11), (200.0, 0.2), (900.0, 0.5)] {
            let next = MarHimd::himd_step(&p, cw, mar);
            assert!(next >= (cw + p.a_inc).min(p.cw_max), "cw {cw} mar {mar}");
        }
        // below target: never increases
        for &(cw, mar) in &[(15.0, 0.09), (200.0, 0.01), (900.0, 0.0999)] {
            let next = MarHimd::himd_step(&p, cw, mar);
            assert!(next <= cw, "cw {cw} mar {mar}");
        }
    }

    #[test]
    fn params_validation() {
        assert!(MarHimdParams::default().validate().is_ok());
        let bad = MarHimdParams {
            mar_tar: 0.5,
            mar_max: 0.35,
            ..MarHimdParams::default()
        };
        assert!(bad.validate().is_err());
        let derived = MarHimdParams::default().with_derived_m_inc();
        assert_eq!(derived.m_inc, 504.0);
    }
}
