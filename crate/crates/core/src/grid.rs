//! Steady-state model of a single-bus DC microgrid with droop-controlled
//! converters, the slot-averaged measurement noise, and the random load.
//!
//! With negligible feeder resistance every converter sits directly on the bus.
//! Converter `k` with droop parameters `(v_k, r_d,k)` behaves as a Thevenin
//! source, so the bus voltage is the conductance-weighted mean
//!
//! ```text
//! v* = sum_k(v_k / r_d,k) / (1/r + sum_k 1/r_d,k)
//! ```
//!
//! and the output currents follow as `i_k = (v_k - v*) / r_d,k`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Droop parameter pair used as a channel input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Symbol {
    /// Reference voltage in volts.
    pub v: f64,
    /// Virtual (droop) resistance in ohms.
    pub r_d: f64,
}

impl Symbol {
    pub fn new(v: f64, r_d: f64) -> Result<Self> {
        let s = Self { v, r_d };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_d > 0.0) || !self.r_d.is_finite() {
            return Err(Error::invalid(format!(
                "droop resistance must be positive, got {}",
                self.r_d
            )));
        }
        if !self.v.is_finite() {
            return Err(Error::invalid("reference voltage must be finite"));
        }
        Ok(())
    }

    /// Source conductance `1 / r_d`.
    #[inline]
    pub fn conductance(&self) -> f64 {
        1.0 / self.r_d
    }
}

/// Grid parameters: unit count, nominal droop settings, operating limits,
/// load range and measurement noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Nominal droop parameters `(v_k^n, r_d,k^n)`; its length is the unit count `K`.
    pub nominal: Vec<Symbol>,
    pub v_min: f64,
    pub v_max: f64,
    /// Per-unit current rating; the lower current limit is 0.
    pub i_max: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
    /// Standard deviation of the slot-averaged bus-voltage measurement.
    pub sigma_v: f64,
    /// Standard deviation of the slot-averaged output-current measurement.
    pub sigma_i: f64,
    /// Slot duration in seconds. Documents the noise level; not used in the model.
    pub slot_duration: f64,
    /// Sampling frequency in hertz. Documents the noise level; not used in the model.
    pub sampling_frequency: f64,
}

impl GridConfig {
    /// Low-voltage reference grid: 390-400 V bus, 5 A units at (400 V, 2 ohm),
    /// 50-250 ohm load, 10 ms slots sampled at 10 kHz, and 1 mV / 1 mA noise.
    pub fn table1(units: usize) -> Self {
        Self {
            nominal: vec![Symbol { v: 400.0, r_d: 2.0 }; units],
            v_min: 390.0,
            v_max: 400.0,
            i_max: vec![5.0; units],
            r_min: 50.0,
            r_max: 250.0,
            sigma_v: 1e-3,
            sigma_i: 1e-3,
            slot_duration: 10e-3,
            sampling_frequency: 10e3,
        }
    }

    /// Same parameters with a different number of identical units.
    pub fn with_units(&self, units: usize) -> Self {
        let mut c = self.clone();
        let sym = self.nominal.first().copied().unwrap_or(Symbol { v: 400.0, r_d: 2.0 });
        let imax = self.i_max.first().copied().unwrap_or(5.0);
        c.nominal = vec![sym; units];
        c.i_max = vec![imax; units];
        c
    }

    pub fn with_noise(mut self, sigma_v: f64, sigma_i: f64) -> Self {
        self.sigma_v = sigma_v;
        self.sigma_i = sigma_i;
        self
    }

    #[inline]
    pub fn units(&self) -> usize {
        self.nominal.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.units();
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if self.i_max.len() != k {
            return Err(Error::invalid(format!(
                "I_max has {} entries but K = {k}",
                self.i_max.len()
            )));
        }
        if !(self.v_min > 0.0 && self.v_min < self.v_max) {
            return Err(Error::invalid(format!(
                "need 0 < V_min < V_max, got V_min = {}, V_max = {}",
                self.v_min, self.v_max
            )));
        }
        if !(self.r_min > 0.0 && self.r_min <= self.r_max) || !self.r_max.is_finite() {
            return Err(Error::invalid(format!(
                "need 0 < R_min <= R_max, got R_min = {}, R_max = {}",
                self.r_min, self.r_max
            )));
        }
        for s in &self.nominal {
            s.validate()?;
        }
        if let Some(i) = self.i_max.iter().find(|&&i| !(i > 0.0)) {
            return Err(Error::invalid(format!("I_max must be positive, got {i}")));
        }
        if !(self.sigma_v >= 0.0) || !(self.sigma_i >= 0.0) {
            return Err(Error::invalid("noise standard deviations must be non-negative"));
        }
        Ok(())
    }

    /// The load process implied by this grid at change intensity `lambda`.
    pub fn load_process(&self, lambda: f64) -> Result<LoadProcess> {
        LoadProcess::new(self.r_min, self.r_max, lambda)
    }
}

/// Bus voltage, per-unit currents and powers in steady state.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub v_star: f64,
    pub currents: Vec<f64>,
    pub powers: Vec<f64>,
    pub load: f64,
}

impl SteadyState {
    /// `(v*, i_k)` as seen by unit `k`.
    #[inline]
    pub fn output(&self, unit: usize) -> (f64, f64) {
        (self.v_star, self.currents[unit])
    }
}

/// Bus voltage only; the hot path of the simulator.
#[inline]
pub fn bus_voltage(inputs: &[Symbol], r: f64) -> f64 {
    let (num, den) = inputs
        .iter()
        .fold((0.0, 1.0 / r), |(n, d), s| (n + s.v / s.r_d, d + 1.0 / s.r_d));
    num / den
}

/// Closed-form steady state for the given droop inputs and load.
pub fn solve_steady_state(config: &GridConfig, inputs: &[Symbol], r: f64) -> Result<SteadyState> {
    if inputs.len() != config.units() {
        return Err(Error::invalid(format!(
            "expected {} input symbols, got {}",
            config.units(),
            inputs.len()
        )));
    }
    steady_state(inputs, r)
}

/// Steady state for any number of units (no grid-size check).
pub fn steady_state(inputs: &[Symbol], r: f64) -> Result<SteadyState> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::invalid(format!("load resistance must be positive, got {r}")));
    }
    for s in inputs {
        s.validate()?;
    }
    let v_star = bus_voltage(inputs, r);
    let currents: Vec<f64> = inputs.iter().map(|s| (s.v - v_star) / s.r_d).collect();
    let powers = currents.iter().map(|i| v_star * i).collect();
    Ok(SteadyState {
        v_star,
        currents,
        powers,
        load: r,
    })
}

/// Noisy slot-averaged measurement `(v~*, i~_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub v_tilde: f64,
    pub i_tilde: f64,
}

/// Measurement of `(v*, i_k)` at `unit` with independent Gaussian errors.
pub fn observe<R: Rng + ?Sized>(state: &SteadyState, unit: usize, config: &GridConfig, rng: &mut R) -> Observation {
    let (v, i) = state.output(unit);
    observe_point(v, i, config.sigma_v, config.sigma_i, rng)
}

/// Noisy observation of an arbitrary output point.
#[inline]
pub fn observe_point<R: Rng + ?Sized>(v: f64, i: f64, sigma_v: f64, sigma_i: f64, rng: &mut R) -> Observation {
    let zv: f64 = StandardNormal.sample(rng);
    let zi: f64 = StandardNormal.sample(rng);
    Observation {
        v_tilde: v + sigma_v * zv,
        i_tilde: i + sigma_i * zi,
    }
}

/// Load changes as a per-slot Bernoulli thinning of a Poisson process: each
/// slot independently sees a change with probability `p = 1 - exp(-lambda)`,
/// and the new load is uniform on `[r_min, r_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadProcess {
    pub r_min: f64,
    pub r_max: f64,
    /// Expected load changes per slot.
    pub lambda: f64,
}

/// A load change at the start of `slot`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadChange {
    pub slot: u64,
    pub r: f64,
}

impl LoadProcess {
    pub fn new(r_min: f64, r_max: f64, lambda: f64) -> Result<Self> {
        if !(r_min > 0.0 && r_min <= r_max) {
            return Err(Error::invalid("need 0 < R_min <= R_max"));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        Ok(Self { r_min, r_max, lambda })
    }

    /// Per-slot change probability.
    pub fn change_probability(&self) -> f64 {
        -(-self.lambda).exp_m1()
    }

    pub fn draw_load<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.r_max > self.r_min {
            rng.random_range(self.r_min..=self.r_max)
        } else {
            self.r_min
        }
    }

    /// Number of slots until the next change, counting the changed slot
    /// (geometric on `1, 2, ...`). `None` when changes never happen.
    pub fn slots_until_change<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<u64> {
        let p = self.change_probability();
        if p <= 0.0 {
            return None;
        }
        // inverse transform with u in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        let g = (u.ln() / (-p).ln_1p()).ceil();
        if !g.is_finite() || g >= u64::MAX as f64 {
            return None;
        }
        Some((g as u64).max(1))
    }
}

/// The load changes over `n_slots` slots, in slot order.
pub fn sample_load_slots<R: Rng + ?Sized>(process: &LoadProcess, n_slots: u64, rng: &mut R) -> Vec<LoadChange> {
    let mut changes = Vec::new();
    let mut next = match process.slots_until_change(rng) {
        Some(g) => g - 1,
        None => return changes,
    };
    while next < n_slots {
        changes.push(LoadChange {
            slot: next,
            r: process.draw_load(rng),
        });
        match process.slots_until_change(rng) {
            Some(g) => next = next.saturating_add(g),
            None => break,
        }
    }
    changes
}
