//! Margin-driven schedule for the hard-negative ratio and loss mixture.

use serde::{Deserialize, Serialize};
use tracing::warn;

pub const EMA_DECAY: f64 = 0.9;
pub const EMA_GAIN: f64 = 0.1;

pub fn update_ema(prev: f64, delta_t: f64) -> f64 {
    EMA_DECAY * prev + EMA_GAIN * delta_t
}

/// `delta_min + (delta_max - delta_min) * acc_val`, with `acc_val` clamped to `[0, 1]`.
pub fn compute_mid(acc_val: f64, delta_min: f64, delta_max: f64) -> f64 {
    let acc = if (0.0..=1.0).contains(&acc_val) {
        acc_val
    } else {
        warn!(acc_val, "validation accuracy outside [0, 1]; clamping");
        acc_val.clamp(0.0, 1.0)
    };
    delta_min + (delta_max - delta_min) * acc
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const P_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// `p_dyn = sigmoid((ema - mid) / tau_s)` kept inside the open unit
/// interval, and `beta = 1 - p_dyn`.
pub fn schedule(ema: f64, mid: f64, tau_s: f64) -> (f64, f64) {
    let p = sigmoid((ema - mid) / tau_s).clamp(f64::MIN_POSITIVE, P_MAX);
    (p, 1.0 - p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub ema_margin: f64,
    pub acc_val: f64,
    pub delta_mid: f64,
    pub p_dyn: f64,
    pub beta: f64,
    pub step: u64,
    pub tau_s: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

impl SchedulerState {
    pub fn new(tau_s: f64, delta_min: f64, delta_max: f64) -> Self {
        let mut s = Self {
            ema_margin: 0.0,
            acc_val: 0.0,
            delta_mid: 0.0,
            p_dyn: 0.0,
            beta: 0.0,
            step: 0,
            tau_s,
            delta_min,
            delta_max,
        };
        s.refresh();
        s
    }

    pub fn observe_margin(&mut self, delta_t: f64) {
        self.ema_margin = update_ema(self.ema_margin, delta_t);
    }

    pub fn set_acc_val(&mut self, acc: f64) {
        self.acc_val = acc.clamp(0.0, 1.0);
    }

    /// Recomputes `delta_mid`, `p_dyn` and `beta` from the current inputs.
    pub fn refresh(&mut self) {
        self.delta_mid = compute_mid(self.acc_val, self.delta_min, self.delta_max);
        (self.p_dyn, self.beta) = schedule(self.ema_margin, self.delta_mid, self.tau_s);
    }
}
