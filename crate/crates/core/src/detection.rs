//! Detection spaces and MAP demodulation.
//!
//! A receiver `k` sees `(v*, i_k)`. In TDMA operation the expected outputs are
//! two points per transmitter; in full-duplex operation they are `2K` points
//! indexed by the receiver's own bit and the Hamming weight `W` of the other
//! units' bits. Every pairwise MAP test under independent Gaussian noise is
//! linear in the observation, so decisions are made with [`DecisionBoundary`]
//! half-planes.

use rand::RngCore;
use serde::Serialize;

use crate::grid::{observe_point, steady_state, GridConfig, Observation, Symbol};
use crate::numeric::{binomial_ln_pmf, binomial_pmf, gaussian_band_probability, normal_cdf};
use crate::signaling::{Constellation, LoadQuadrature};
use crate::{Error, Mode, Result};

/// What a detection point stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PointLabel {
    /// Unit `transmitter` sends `bit`, every other unit is nominal.
    Tdma { transmitter: usize, bit: bool },
    /// The receiver sends `own_bit` and `weight` other units send a one.
    Fd { own_bit: bool, weight: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionPoint {
    pub v_star: f64,
    pub i_k: f64,
    pub label: PointLabel,
    /// Prior of the point given what the receiver already knows (the active
    /// transmitter in TDMA, its own bit in full-duplex).
    pub prior: f64,
}

/// A receiver's expected output points for one load.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionSpace {
    pub receiver: usize,
    pub load: f64,
    pub mode: Mode,
    pub units: usize,
    /// TDMA: `[(j, 0), (j, 1)]` for every transmitter `j != receiver`.
    /// Full-duplex: own bit 0 with `W = 0..K`, then own bit 1 with `W = 0..K`.
    pub points: Vec<DetectionPoint>,
    pub sigma_v: f64,
    pub sigma_i: f64,
    /// Training slots spent to learn the space; `None` for oracle spaces.
    pub training_slots: Option<usize>,
}

/// How detection points are obtained.
pub enum SpaceSource<'a> {
    /// Exact steady-state outputs.
    Oracle,
    /// Mean of `m` noisy observations per point.
    Learned { m: usize, rng: &'a mut dyn RngCore },
}

/// Training length for a mode: `2MK` slots for TDMA and `2MK^2` for full-duplex.
pub fn training_length(mode: Mode, units: usize, m: usize) -> usize {
    match mode {
        Mode::Tdma => 2 * m * units,
        Mode::FullDuplex => 2 * m * units * units,
    }
}

/// Input vector producing full-duplex point `(own_bit, weight)` at `receiver`.
/// The ones among the other units go to the lowest indices.
pub fn fd_inputs(c: &Constellation, units: usize, receiver: usize, own_bit: bool, weight: usize) -> Vec<Symbol> {
    let mut inputs = vec![c.x0; units];
    inputs[receiver] = c.symbol(own_bit);
    for i in (0..units).filter(|&i| i != receiver).take(weight) {
        inputs[i] = c.x1;
    }
    inputs
}

/// Input vector with unit `transmitter` sending `bit` and the rest nominal.
pub fn tdma_inputs(config: &GridConfig, c: &Constellation, transmitter: usize, bit: bool) -> Vec<Symbol> {
    let mut inputs = config.nominal.clone();
    inputs[transmitter] = c.symbol(bit);
    inputs
}

pub fn build_detection_space(
    config: &GridConfig,
    c: &Constellation,
    mode: Mode,
    receiver: usize,
    r: f64,
    source: SpaceSource<'_>,
) -> Result<DetectionSpace> {
    let units = config.units();
    if receiver >= units {
        return Err(Error::invalid(format!(
            "receiver {receiver} out of range for K = {units}"
        )));
    }
    if !(r > 0.0) {
        return Err(Error::invalid(format!("load resistance must be positive, got {r}")));
    }
    let mut points = Vec::with_capacity(2 * units);
    match mode {
        Mode::Tdma => {
            for j in (0..units).filter(|&j| j != receiver) {
                for bit in [false, true] {
                    let st = steady_state(&tdma_inputs(config, c, j, bit), r)?;
                    points.push(DetectionPoint {
                        v_star: st.v_star,
                        i_k: st.currents[receiver],
                        label: PointLabel::Tdma { transmitter: j, bit },
                        prior: c.prior(bit),
                    });
                }
            }
        }
        Mode::FullDuplex => {
            for own_bit in [false, true] {
                for weight in 0..units {
                    let st = steady_state(&fd_inputs(c, units, receiver, own_bit, weight), r)?;
                    points.push(DetectionPoint {
                        v_star: st.v_star,
                        i_k: st.currents[receiver],
                        label: PointLabel::Fd { own_bit, weight },
                        prior: binomial_pmf(units - 1, weight, c.p_b),
                    });
                }
            }
        }
    }
    let training_slots = match source {
        SpaceSource::Oracle => None,
        SpaceSource::Learned { m, rng } => {
            if m == 0 {
                return Err(Error::invalid("M must be at least 1"));
            }
            for p in &mut points {
                let (mut sv, mut si) = (0.0, 0.0);
                for _ in 0..m {
                    let y = observe_point(p.v_star, p.i_k, config.sigma_v, config.sigma_i, rng);
                    sv += y.v_tilde;
                    si += y.i_tilde;
                }
                p.v_star = sv / m as f64;
                p.i_k = si / m as f64;
            }
            Some(training_length(mode, units, m))
        }
    };
    Ok(DetectionSpace {
        receiver,
        load: r,
        mode,
        units,
        points,
        sigma_v: config.sigma_v,
        sigma_i: config.sigma_i,
        training_slots,
    })
}

/// Pairwise MAP test between a higher label `l` and a lower label `h`,
/// written as `c_v (v - v_m) + c_i (i - i_m) + c_0 >= 0` (decide `l`).
///
/// Multiplying the log-likelihood ratio by `sigma_v^2 sigma_i^2` keeps the
/// coefficients finite when one of the noise levels is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecisionBoundary {
    pub c_v: f64,
    pub c_i: f64,
    pub c_0: f64,
    pub v_m: f64,
    pub i_m: f64,
}

impl DecisionBoundary {
    /// Boundary between point `(v_l, i_l)` with prior `pi_l` and `(v_h, i_h)`
    /// with prior `pi_h`.
    pub fn between(l: (f64, f64), pi_l: f64, h: (f64, f64), pi_h: f64, sigma_v: f64, sigma_i: f64) -> Self {
        let (sv2, si2) = (sigma_v * sigma_v, sigma_i * sigma_i);
        let (c_v, c_i, c_0) = if sv2 == 0.0 && si2 == 0.0 {
            (l.0 - h.0, l.1 - h.1, 0.0)
        } else {
            ((l.0 - h.0) * si2, (l.1 - h.1) * sv2, sv2 * si2 * (pi_l / pi_h).ln())
        };
        Self {
            c_v,
            c_i,
            c_0,
            v_m: 0.5 * (l.0 + h.0),
            i_m: 0.5 * (l.1 + h.1),
        }
    }

    /// Value of the test statistic; non-negative favours the higher label.
    #[inline]
    pub fn statistic(&self, v: f64, i: f64) -> f64 {
        self.c_v * (v - self.v_m) + self.c_i * (i - self.i_m) + self.c_0
    }

    /// Ties go to the higher label.
    #[inline]
    pub fn decides_higher(&self, y: &Observation) -> bool {
        self.statistic(y.v_tilde, y.i_tilde) >= 0.0
    }

    /// Slope `a` of the line `v = a i + b` in the `(i, v)` plane.
    pub fn slope(&self) -> f64 {
        -self.c_i / self.c_v
    }

    /// Intercept `b` of the line `v = a i + b`.
    pub fn intercept(&self) -> f64 {
        self.v_m + (self.c_i * self.i_m - self.c_0) / self.c_v
    }

    /// Mean and standard deviation of the statistic for observations of the
    /// point `(v, i)`.
    pub fn statistic_moments(&self, v: f64, i: f64, sigma_v: f64, sigma_i: f64) -> (f64, f64) {
        let mu = self.statistic(v, i);
        let sd = ((self.c_v * sigma_v).powi(2) + (self.c_i * sigma_i).powi(2)).sqrt();
        (mu, sd)
    }
}

impl DetectionSpace {
    fn tdma_pair(&self, transmitter: usize) -> Result<(&DetectionPoint, &DetectionPoint)> {
        if self.mode != Mode::Tdma {
            return Err(Error::invalid("not a TDMA detection space"));
        }
        if transmitter == self.receiver || transmitter >= self.units {
            return Err(Error::invalid(format!(
                "transmitter {transmitter} invalid for receiver {} and K = {}",
                self.receiver, self.units
            )));
        }
        let slot = if transmitter < self.receiver {
            transmitter
        } else {
            transmitter - 1
        };
        Ok((&self.points[2 * slot], &self.points[2 * slot + 1]))
    }

    /// Points for the receiver's own bit, ordered by weight.
    pub fn fd_points(&self, own_bit: bool) -> Result<&[DetectionPoint]> {
        if self.mode != Mode::FullDuplex {
            return Err(Error::invalid("not a full-duplex detection space"));
        }
        let k = self.units;
        Ok(if own_bit { &self.points[k..] } else { &self.points[..k] })
    }

    /// Boundary separating bit 1 from bit 0 for `transmitter`.
    pub fn tdma_boundary(&self, transmitter: usize, p_b: f64) -> Result<DecisionBoundary> {
        let (p0, p1) = self.tdma_pair(transmitter)?;
        Ok(DecisionBoundary::between(
            (p1.v_star, p1.i_k),
            p_b,
            (p0.v_star, p0.i_k),
            1.0 - p_b,
            self.sigma_v,
            self.sigma_i,
        ))
    }

    /// Boundaries between weights `W + 1` and `W`, for `W = 0..K-1`.
    pub fn fd_boundaries(&self, own_bit: bool, p_b: f64) -> Result<Vec<DecisionBoundary>> {
        let pts = self.fd_points(own_bit)?;
        let n = self.units - 1;
        Ok(pts
            .windows(2)
            .enumerate()
            .map(|(w, pair)| {
                DecisionBoundary::between(
                    (pair[1].v_star, pair[1].i_k),
                    binomial_pmf(n, w + 1, p_b),
                    (pair[0].v_star, pair[0].i_k),
                    binomial_pmf(n, w, p_b),
                    self.sigma_v,
                    self.sigma_i,
                )
            })
            .collect())
    }
}

/// MAP estimate of the bit sent by `transmitter`.
pub fn map_decision_tdma(space: &DetectionSpace, transmitter: usize, y: &Observation, p_b: f64) -> Result<bool> {
    Ok(space.tdma_boundary(transmitter, p_b)?.decides_higher(y))
}

/// Log posterior (up to a constant) of every weight; used when the band
/// structure does not apply and as a reference.
pub fn fd_log_posteriors(space: &DetectionSpace, own_bit: bool, y: &Observation, p_b: f64) -> Result<Vec<f64>> {
    let pts = space.fd_points(own_bit)?;
    let n = space.units - 1;
    let (sv2, si2) = (space.sigma_v.powi(2), space.sigma_i.powi(2));
    Ok(pts
        .iter()
        .enumerate()
        .map(|(w, p)| {
            let dv = y.v_tilde - p.v_star;
            let di = y.i_tilde - p.i_k;
            if sv2 == 0.0 && si2 == 0.0 {
                -(dv * dv + di * di)
            } else {
                // zero variance on one axis: that coordinate is exact, others scaled away
                let lv = if sv2 > 0.0 { dv * dv / (2.0 * sv2) } else { 0.0 };
                let li = if si2 > 0.0 { di * di / (2.0 * si2) } else { 0.0 };
                binomial_ln_pmf(n, w, p_b) - lv - li
            }
        })
        .collect())
}

fn argmax_upper(values: &[f64]) -> usize {
    let mut best = 0;
    for (w, &v) in values.iter().enumerate() {
        if v >= values[best] {
            best = w;
        }
    }
    best
}

/// Weight decision from precomputed boundaries: the band containing `y`.
/// Falls back to `fallback` when the pairwise tests are not monotone.
#[inline]
pub fn fd_band_decision(boundaries: &[DecisionBoundary], y: &Observation) -> Option<usize> {
    let mut w = 0;
    while w < boundaries.len() && boundaries[w].decides_higher(y) {
        w += 1;
    }
    if boundaries[w..].iter().any(|b| b.decides_higher(y)) {
        None
    } else {
        Some(w)
    }
}

/// MAP estimate of the number of other units sending a one.
pub fn map_decision_fd(space: &DetectionSpace, y: &Observation, own_bit: bool, p_b: f64) -> Result<usize> {
    let bounds = space.fd_boundaries(own_bit, p_b)?;
    match fd_band_decision(&bounds, y) {
        Some(w) => Ok(w),
        None => Ok(argmax_upper(&fd_log_posteriors(space, own_bit, y, p_b)?)),
    }
}

/// Precomputed boundaries of one receiver; the simulator's fast path.
#[derive(Debug, Clone)]
pub enum Detector {
    /// Indexed by transmitter; `None` for the receiver itself.
    Tdma(Vec<Option<DecisionBoundary>>),
    /// Boundaries for own bit 0 and 1.
    Fd([Vec<DecisionBoundary>; 2], DetectionSpace),
}

impl Detector {
    pub fn new(space: &DetectionSpace, p_b: f64) -> Result<Self> {
        Ok(match space.mode {
            Mode::Tdma => Detector::Tdma(
                (0..space.units)
                    .map(|j| {
                        if j == space.receiver {
                            Ok(None)
                        } else {
                            space.tdma_boundary(j, p_b).map(Some)
                        }
                    })
                    .collect::<Result<_>>()?,
            ),
            Mode::FullDuplex => Detector::Fd(
                [space.fd_boundaries(false, p_b)?, space.fd_boundaries(true, p_b)?],
                space.clone(),
            ),
        })
    }

    /// TDMA bit decision; `None` if this detector has no boundary for `transmitter`.
    pub fn tdma(&self, transmitter: usize, y: &Observation) -> Option<bool> {
        match self {
            Detector::Tdma(b) => b.get(transmitter).copied().flatten().map(|b| b.decides_higher(y)),
            Detector::Fd(..) => None,
        }
    }

    pub fn fd(&self, own_bit: bool, y: &Observation, p_b: f64) -> Option<usize> {
        match self {
            Detector::Fd(b, space) => Some(fd_band_decision(&b[usize::from(own_bit)], y).unwrap_or_else(|| {
                fd_log_posteriors(space, own_bit, y, p_b)
                    .map(|lp| argmax_upper(&lp))
                    .unwrap_or(0)
            })),
            Detector::Tdma(_) => None,
        }
    }
}

/// Per-unit analytic error probabilities and the mean probability of correct
/// detection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub per_unit: Vec<f64>,
    pub p_d: f64,
}

/// `P(statistic < 0)` when the statistic is `N(mu, sd^2)`.
fn prob_negative(mu: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        normal_cdf(-mu / sd)
    } else {
        f64::from(mu < 0.0)
    }
}

/// Error probability of each TDMA bit at load `r`, given transmitter `j`.
fn tdma_conditional_errors(space: &DetectionSpace, j: usize, p_b: f64) -> Result<(f64, f64)> {
    let b = space.tdma_boundary(j, p_b)?;
    let (p0, p1) = space.tdma_pair(j)?;
    let (mu1, sd1) = b.statistic_moments(p1.v_star, p1.i_k, space.sigma_v, space.sigma_i);
    let (mu0, sd0) = b.statistic_moments(p0.v_star, p0.i_k, space.sigma_v, space.sigma_i);
    Ok((1.0 - prob_negative(mu0, sd0), prob_negative(mu1, sd1)))
}

/// Probability that an observation of the weight-`w` point falls outside its band.
fn fd_conditional_error(space: &DetectionSpace, bounds: &[DecisionBoundary], pts: &[DetectionPoint], w: usize) -> f64 {
    let (sv, si) = (space.sigma_v, space.sigma_i);
    let p = &pts[w];
    let below = (w > 0).then(|| bounds[w - 1]);
    let above = bounds.get(w).copied();
    let correct = match (below, above) {
        (None, None) => 1.0,
        (Some(u), None) => 1.0 - prob_negative_m(u, p, sv, si),
        (None, Some(v)) => prob_negative_m(v, p, sv, si),
        (Some(u), Some(v)) => {
            let (mu_u, sd_u) = u.statistic_moments(p.v_star, p.i_k, sv, si);
            let (mu_v, sd_v) = v.statistic_moments(p.v_star, p.i_k, sv, si);
            let cov = u.c_v * v.c_v * sv * sv + u.c_i * v.c_i * si * si;
            let rho = if sd_u > 0.0 && sd_v > 0.0 {
                cov / (sd_u * sd_v)
            } else {
                0.0
            };
            gaussian_band_probability(mu_u, sd_u, mu_v, sd_v, rho)
        }
    };
    (1.0 - correct).clamp(0.0, 1.0)
}

fn prob_negative_m(b: DecisionBoundary, p: &DetectionPoint, sv: f64, si: f64) -> f64 {
    let (mu, sd) = b.statistic_moments(p.v_star, p.i_k, sv, si);
    prob_negative(mu, sd)
}

/// Conditional error probabilities of a full-duplex space, one per own bit and weight.
pub fn fd_conditional_errors(space: &DetectionSpace, p_b: f64) -> Result<[Vec<f64>; 2]> {
    let mut out: [Vec<f64>; 2] = Default::default();
    for own_bit in [false, true] {
        let bounds = space.fd_boundaries(own_bit, p_b)?;
        let pts = space.fd_points(own_bit)?;
        out[usize::from(own_bit)] = (0..space.units)
            .map(|w| fd_conditional_error(space, &bounds, pts, w))
            .collect();
    }
    Ok(out)
}

/// Analytic probability that a receiver misdetects, averaged over symbols,
/// the load and (for TDMA) over the transmitters it listens to.
pub fn analytic_error_probability(config: &GridConfig, c: &Constellation, mode: Mode) -> Result<ErrorReport> {
    config.validate()?;
    let units = config.units();
    let quad = LoadQuadrature::for_config(config);
    let p_b = c.p_b;
    let mut per_unit = vec![0.0; units];
    if units > 1 {
        for (k, slot) in per_unit.iter_mut().enumerate() {
            for (&r, &wr) in quad.nodes.iter().zip(&quad.weights) {
                let space = build_detection_space(config, c, mode, k, r, SpaceSource::Oracle)?;
                let e = match mode {
                    Mode::Tdma => {
                        let mut s = 0.0;
                        for j in (0..units).filter(|&j| j != k) {
                            let (e0, e1) = tdma_conditional_errors(&space, j, p_b)?;
                            s += (1.0 - p_b) * e0 + p_b * e1;
                        }
                        s / (units - 1) as f64
                    }
                    Mode::FullDuplex => {
                        let errs = fd_conditional_errors(&space, p_b)?;
                        let mut s = 0.0;
                        for own_bit in [false, true] {
                            for (w, e) in errs[usize::from(own_bit)].iter().enumerate() {
                                s += c.prior(own_bit) * binomial_pmf(units - 1, w, p_b) * e;
                            }
                        }
                        s
                    }
                };
                *slot += wr * e;
            }
        }
    }
    let p_d = 1.0 - per_unit.iter().sum::<f64>() / units as f64;
    Ok(ErrorReport { per_unit, p_d })
}
