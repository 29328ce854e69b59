//! Training overhead and closed-form net rates under random load changes.
//!
//! Two ways of keeping detection spaces current are analysed. With periodic
//! training every unit sends `B` information bits between training phases
//! and a load change wipes out the rest of the cycle. With a change tracker
//! the units stop as soon as a change is seen, idle for `L_BS` blank slots
//! and retrain.

use serde::{Deserialize, Serialize};

use crate::coding::{codeword_length, stable_rate};
use crate::numeric::{one_minus_survival_pow, survival_pow};
use crate::{Error, Mode, Result};

/// Training-phase layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub mode: Mode,
    pub units: usize,
    /// Slots per learned point.
    pub m: usize,
    /// Training length in slots.
    pub l: usize,
    /// Blank slots before retraining (tracker only).
    pub l_bs: usize,
}

impl TrainingPlan {
    /// Sequential training: `2MK` slots (TDMA) or `2MK^2` (full-duplex).
    pub fn new(mode: Mode, units: usize, m: usize, l_bs: usize) -> Result<Self> {
        if units == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if m == 0 {
            return Err(Error::invalid("M must be at least 1"));
        }
        let l = crate::detection::training_length(mode, units, m);
        Ok(Self {
            mode,
            units,
            m,
            l,
            l_bs,
        })
    }

    /// Idealized simultaneous training of all receivers: `4M` (TDMA) or `4KM`
    /// (full-duplex) slots. Not covered by the closed forms below.
    pub fn simultaneous(mode: Mode, units: usize, m: usize, l_bs: usize) -> Result<Self> {
        let mut plan = Self::new(mode, units, m, l_bs)?;
        plan.l = match mode {
            Mode::Tdma => 4 * m,
            Mode::FullDuplex => 4 * units * m,
        };
        Ok(plan)
    }
}

/// Change-detector behaviour of the tracker protocol.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChangeDetector {
    /// Probability that a load change goes unnoticed.
    pub miss: f64,
    /// Per-slot probability of reporting a change that did not happen.
    pub false_alarm: f64,
}

impl ChangeDetector {
    pub fn is_ideal(&self) -> bool {
        self.miss == 0.0 && self.false_alarm == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum ProtocolVariant {
    /// Retrain after every unit has sent `b` bits.
    Periodic { b: u64 },
    /// Retrain after a detected load change, following `l_bs` blank slots.
    Tracker { l_bs: usize, detector: ChangeDetector },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub variant: ProtocolVariant,
    /// Expected load changes per slot.
    pub lambda: f64,
    /// Slots per learned point.
    pub m: usize,
    /// Use the shortened simultaneous training length.
    pub simultaneous_training: bool,
}

impl ProtocolConfig {
    pub fn periodic(b: u64, lambda: f64, m: usize) -> Self {
        Self {
            variant: ProtocolVariant::Periodic { b },
            lambda,
            m,
            simultaneous_training: false,
        }
    }

    pub fn tracker(l_bs: usize, lambda: f64, m: usize) -> Self {
        Self {
            variant: ProtocolVariant::Tracker {
                l_bs,
                detector: ChangeDetector::default(),
            },
            lambda,
            m,
            simultaneous_training: false,
        }
    }

    /// Per-slot change probability `1 - exp(-lambda)`.
    pub fn p(&self) -> f64 {
        change_probability(self.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if self.m == 0 {
            return Err(Error::invalid("M must be at least 1"));
        }
        match self.variant {
            ProtocolVariant::Periodic { b: 0 } => Err(Error::invalid("B must be at least 1")),
            ProtocolVariant::Tracker { detector, .. }
                if !(0.0..=1.0).contains(&detector.miss) || !(0.0..1.0).contains(&detector.false_alarm) =>
            {
                Err(Error::invalid(
                    "detector miss / false-alarm probabilities must lie in [0, 1)",
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn plan(&self, mode: Mode, units: usize) -> Result<TrainingPlan> {
        let l_bs = match self.variant {
            ProtocolVariant::Tracker { l_bs, .. } => l_bs,
            ProtocolVariant::Periodic { .. } => 0,
        };
        if self.simultaneous_training {
            TrainingPlan::simultaneous(mode, units, self.m, l_bs)
        } else {
            TrainingPlan::new(mode, units, self.m, l_bs)
        }
    }
}

/// Per-slot change probability for intensity `lambda`.
pub fn change_probability(lambda: f64) -> f64 {
    -(-lambda).exp_m1()
}

/// Net transmission and reception rate per unit per slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateResult {
    pub eta: f64,
    pub mu: f64,
}

impl RateResult {
    pub fn new(eta: f64, units: usize) -> Self {
        Self {
            eta,
            mu: reception_rate(eta, units),
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::invalid(format!("p must lie in [0, 1], got {p}")))
    }
}

/// Periodic-training rate for an explicit training length `l`.
pub fn eta_periodic_with_training(mode: Mode, units: usize, l: usize, b: u64, p: f64) -> Result<f64> {
    check_p(p)?;
    if b == 0 {
        return Err(Error::invalid("B must be at least 1"));
    }
    let l = l as f64;
    let b = b as f64;
    let eta_s = stable_rate(mode, units)?;
    // `n` slots carry one bit per unit: K for TDMA, the code length for full-duplex
    let (data_slots, n) = match mode {
        Mode::Tdma => (units as f64 * b, 1.0),
        Mode::FullDuplex => {
            let n = codeword_length(units)? as f64;
            (n * b, n)
        }
    };
    if p == 0.0 {
        return Ok(b / (l * eta_s + b) * eta_s);
    }
    let lost_unit = one_minus_survival_pow(p, n);
    let eta = match mode {
        Mode::Tdma => survival_pow(p, l + 1.0) * one_minus_survival_pow(p, data_slots) / (p * (l + data_slots)) * eta_s,
        Mode::FullDuplex => {
            survival_pow(p, l + n) * one_minus_survival_pow(p, data_slots) / (lost_unit * (l + data_slots))
        }
    };
    Ok(eta)
}

/// Net rate with periodic training every `B` bits per unit.
pub fn eta_periodic(mode: Mode, units: usize, m: usize, b: u64, p: f64) -> Result<f64> {
    let plan = TrainingPlan::new(mode, units, m, 0)?;
    eta_periodic_with_training(mode, units, plan.l, b, p)
}

/// Number of consecutive non-improving `B` that ends the search.
pub const OPTIMAL_B_PATIENCE: u64 = 1000;

/// The `B` maximizing [`eta_periodic`], with the maximal rate. The search
/// runs upward from `B = 1` and stops after [`OPTIMAL_B_PATIENCE`] values of
/// `B` without improvement.
pub fn optimal_b(mode: Mode, units: usize, m: usize, p: f64) -> Result<(u64, f64)> {
    check_p(p)?;
    if p == 0.0 {
        return Err(Error::invalid(
            "without load changes the rate grows with B and has no maximizer",
        ));
    }
    let (mut best_b, mut best) = (1u64, eta_periodic(mode, units, m, 1, p)?);
    let mut b = 1u64;
    let mut stale = 0;
    while stale < OPTIMAL_B_PATIENCE {
        b += 1;
        let e = eta_periodic(mode, units, m, b, p)?;
        if e > best {
            best = e;
            best_b = b;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    Ok((best_b, best))
}

/// Expected number of slots spent in blank and training slots after a
/// change, counting restarts caused by further changes.
pub fn expected_retraining_length(l: usize, l_bs: usize, p: f64) -> Result<f64> {
    check_p(p)?;
    let n = (l + l_bs) as f64;
    if p == 0.0 {
        return Ok(n);
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok((-n * (-p).ln_1p()).exp_m1() / p)
}

/// Tracker rate for an explicit training length `l`.
pub fn eta_tracker_with_training(mode: Mode, units: usize, l: usize, l_bs: usize, p: f64) -> Result<f64> {
    check_p(p)?;
    let eta_s = stable_rate(mode, units)?;
    if p == 0.0 {
        return Ok(eta_s);
    }
    let n = (l + l_bs) as f64;
    let grow = (-n * (-p).ln_1p()).exp();
    Ok(eta_s / (p + grow))
}

/// Net rate of the change-tracker protocol.
pub fn eta_tracker(mode: Mode, units: usize, m: usize, l_bs: usize, p: f64) -> Result<f64> {
    let plan = TrainingPlan::new(mode, units, m, l_bs)?;
    eta_tracker_with_training(mode, units, plan.l, l_bs, p)
}

/// Tracker rate assembled from the mean retraining length, before the
/// geometric sum is carried out.
pub fn eta_tracker_from_retraining(eta_s: f64, mean_retraining: f64, p: f64) -> f64 {
    eta_s / (1.0 + p * (mean_retraining + 1.0))
}

/// Net reception rate `(K - 1) eta`.
pub fn reception_rate(eta: f64, units: usize) -> f64 {
    units.saturating_sub(1) as f64 * eta
}

/// Closed-form rate for a protocol configuration.
pub fn closed_form_rate(mode: Mode, units: usize, protocol: &ProtocolConfig) -> Result<RateResult> {
    protocol.validate()?;
    let plan = protocol.plan(mode, units)?;
    let p = protocol.p();
    let eta = match protocol.variant {
        ProtocolVariant::Periodic { b } => eta_periodic_with_training(mode, units, plan.l, b, p)?,
        ProtocolVariant::Tracker { l_bs, .. } => eta_tracker_with_training(mode, units, plan.l, l_bs, p)?,
    };
    Ok(RateResult::new(eta, units))
}
