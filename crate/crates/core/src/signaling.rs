//! Admissible droop symbols, relative power deviation and fixed-`r_d`
//! constellation design.

use serde::{Deserialize, Serialize};

use crate::grid::{bus_voltage, GridConfig, Symbol};
use crate::numeric::{binomial_pmf, GaussLegendre};
use crate::{Error, Mode, Result};

/// Quadrature order for expectations over the load.
pub const LOAD_QUADRATURE_NODES: usize = 64;

/// Rounding slack, in volts, when comparing a symbol voltage with a bound.
const BOUND_SLACK: f64 = 1e-10;

/// Bus-voltage and output-current limits that every reachable steady state
/// must respect, together with the admissible load range.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub v_min: f64,
    pub v_max: f64,
    pub i_min: f64,
    pub i_max: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
}

impl ConstraintSet {
    pub fn from_config(config: &GridConfig) -> Self {
        Self {
            v_min: config.v_min,
            v_max: config.v_max,
            i_min: 0.0,
            i_max: config.i_max.clone(),
            r_min: config.r_min,
            r_max: config.r_max,
        }
    }

    /// Whether the steady state produced by `inputs` at load `r` satisfies
    /// every limit, with an absolute slack `tol` on each comparison.
    pub fn admits(&self, inputs: &[Symbol], r: f64, tol: f64) -> bool {
        let v = bus_voltage(inputs, r);
        if v < self.v_min - tol || v > self.v_max + tol {
            return false;
        }
        inputs.iter().zip(&self.i_max).all(|(s, &imax)| {
            let i = (s.v - v) / s.r_d;
            i >= self.i_min - tol && i <= imax + tol
        })
    }
}

/// Binary constellation shared by all units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    pub x0: Symbol,
    pub x1: Symbol,
    /// Probability of sending a one.
    pub p_b: f64,
}

impl Constellation {
    pub fn new(x0: Symbol, x1: Symbol, p_b: f64) -> Result<Self> {
        x0.validate()?;
        x1.validate()?;
        if !(p_b > 0.0 && p_b < 1.0) {
            return Err(Error::invalid(format!("p_b must lie in (0, 1), got {p_b}")));
        }
        Ok(Self { x0, x1, p_b })
    }

    /// Both symbols at the nominal point of unit 0.
    pub fn nominal(config: &GridConfig, p_b: f64) -> Result<Self> {
        let n = config.nominal[0];
        Self::new(n, n, p_b)
    }

    #[inline]
    pub fn symbol(&self, bit: bool) -> Symbol {
        if bit {
            self.x1
        } else {
            self.x0
        }
    }

    #[inline]
    pub fn prior(&self, bit: bool) -> f64 {
        if bit {
            self.p_b
        } else {
            1.0 - self.p_b
        }
    }
}

/// Per-unit and mean relative power deviation of a constellation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub delta_k: Vec<f64>,
    pub delta: f64,
    pub gamma: Option<f64>,
}

impl DeviationReport {
    fn from_units(delta_k: Vec<f64>) -> Self {
        let delta = delta_k.iter().sum::<f64>() / delta_k.len() as f64;
        Self {
            delta_k,
            delta,
            gamma: None,
        }
    }

    pub fn with_budget(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    /// `true` when no budget is attached.
    pub fn within_budget(&self) -> bool {
        self.gamma.is_none_or(|g| self.delta <= g)
    }
}

/// Gauss-Legendre rule for expectations over a uniform load on `[R_min, R_max]`.
/// Weights sum to one.
#[derive(Debug, Clone)]
pub struct LoadQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LoadQuadrature {
    pub fn new(r_min: f64, r_max: f64, order: usize) -> Self {
        if r_max <= r_min {
            return Self {
                nodes: vec![r_min],
                weights: vec![1.0],
            };
        }
        let width = r_max - r_min;
        let (nodes, weights) = GaussLegendre::new(order)
            .mapped(r_min, r_max)
            .map(|(x, w)| (x, w / width))
            .unzip();
        Self { nodes, weights }
    }

    pub fn for_config(config: &GridConfig) -> Self {
        Self::new(config.r_min, config.r_max, LOAD_QUADRATURE_NODES)
    }

    /// `E_R[f(R)]`.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&r, &w)| w * f(r)).sum()
    }
}

/// Sum of conductances and of `v/r_d` over every unit except `k`.
fn others_nominal(config: &GridConfig, k: usize) -> (f64, f64) {
    config
        .nominal
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .fold((0.0, 0.0), |(g, t), (_, s)| (g + 1.0 / s.r_d, t + s.v / s.r_d))
}

/// Admissible voltage interval for a TDMA symbol with droop slope `r_d`
/// sent by unit `k` while all others operate nominally.
pub fn tdma_voltage_interval(config: &GridConfig, k: usize, r_d: f64) -> (f64, f64) {
    let (g, t) = others_nominal(config, k);
    let g_lo = 1.0 / config.r_min + g;
    let g_hi = 1.0 / config.r_max + g;
    let v_lower = r_d * (config.v_min * g_lo - t) + config.v_min;
    let v_upper = r_d * (config.v_max * g_hi - t) + config.v_max;
    let i_max = config.i_max[k];
    let i_lower = t / g_hi;
    let i_upper = r_d * i_max + (i_max + t) / g_lo;
    (v_lower.max(i_lower), v_upper.min(i_upper))
}

/// Whether `sym` may be sent by any unit in TDMA operation, all other units
/// being nominal, for every load in range.
pub fn tdma_symbol_feasible(sym: Symbol, config: &GridConfig) -> bool {
    if !(sym.r_d > 0.0) {
        return false;
    }
    (0..config.units()).all(|k| {
        let (lo, hi) = tdma_voltage_interval(config, k, sym.r_d);
        lo - BOUND_SLACK <= sym.v && sym.v <= hi + BOUND_SLACK
    })
}

/// Whether the pair `(x0, x1)` may be used in full-duplex operation.
pub fn fd_pair_feasible(x0: Symbol, x1: Symbol, config: &GridConfig) -> bool {
    if !(x0.r_d > 0.0 && x1.r_d > 0.0) {
        return false;
    }
    let k = config.units() as f64;
    let km1 = k - 1.0;
    let bus_ok = |s: Symbol| {
        let lo = s.r_d * config.v_min / (k * config.r_min) + config.v_min;
        let hi = s.r_d * config.v_max / (k * config.r_max) + config.v_max;
        lo - BOUND_SLACK <= s.v && s.v <= hi + BOUND_SLACK
    };
    if !bus_ok(x0) || !bus_ok(x1) {
        return false;
    }
    // Every unit shares the same symbols, so the tightest rating governs.
    let i_max = config.i_max.iter().copied().fold(f64::INFINITY, f64::min);
    let current_ok = |own: Symbol, rest: Symbol, r: f64| {
        let g = 1.0 / r + km1 / rest.r_d;
        let t = km1 * rest.v / rest.r_d / g;
        t - BOUND_SLACK <= own.v && own.v <= i_max * own.r_d + i_max / g + t + BOUND_SLACK
    };
    current_ok(x1, x0, config.r_min) && current_ok(x0, x1, config.r_max)
}

/// Feasibility of a constellation under the given multiple-access mode.
pub fn constellation_feasible(c: &Constellation, mode: Mode, config: &GridConfig) -> bool {
    match mode {
        Mode::Tdma => tdma_symbol_feasible(c.x0, config) && tdma_symbol_feasible(c.x1, config),
        Mode::FullDuplex => fd_pair_feasible(c.x0, c.x1, config),
    }
}

/// Power of every unit at each quadrature node, flattened node-major.
fn powers_at_nodes(inputs: &[Symbol], quad: &LoadQuadrature) -> Vec<f64> {
    let mut out = Vec::with_capacity(inputs.len() * quad.nodes.len());
    for &r in &quad.nodes {
        let v = bus_voltage(inputs, r);
        out.extend(inputs.iter().map(|s| v * (s.v - v) / s.r_d));
    }
    out
}

/// Precomputed nominal powers used as the reference for deviations.
struct DeviationContext {
    quad: LoadQuadrature,
    nominal: Vec<f64>,
    mean_nominal: Vec<f64>,
    units: usize,
}

impl DeviationContext {
    fn new(config: &GridConfig) -> Self {
        let quad = LoadQuadrature::for_config(config);
        let units = config.units();
        let nominal = powers_at_nodes(&config.nominal, &quad);
        let mut mean_nominal = vec![0.0; units];
        for (n, &w) in quad.weights.iter().enumerate() {
            for k in 0..units {
                mean_nominal[k] += w * nominal[n * units + k];
            }
        }
        Self {
            quad,
            nominal,
            mean_nominal,
            units,
        }
    }

    fn deviation(&self, inputs: &[Symbol]) -> Vec<f64> {
        let p = powers_at_nodes(inputs, &self.quad);
        let mut msq = vec![0.0; self.units];
        for (n, &w) in self.quad.weights.iter().enumerate() {
            for k in 0..self.units {
                let d = p[n * self.units + k] - self.nominal[n * self.units + k];
                msq[k] += w * d * d;
            }
        }
        msq.iter()
            .zip(&self.mean_nominal)
            .map(|(m, pn)| m.sqrt() / pn)
            .collect()
    }
}

/// Relative RMS deviation `delta_k` of each unit's power from its nominal
/// power, averaged over a uniform load.
pub fn relative_power_deviation(inputs: &[Symbol], config: &GridConfig) -> Result<Vec<f64>> {
    if inputs.len() != config.units() {
        return Err(Error::invalid(format!(
            "expected {} input symbols, got {}",
            config.units(),
            inputs.len()
        )));
    }
    for s in inputs {
        s.validate()?;
    }
    Ok(DeviationContext::new(config).deviation(inputs))
}

/// Average deviation of a constellation over the input combinations of the
/// mode.
///
/// In TDMA the active unit is equally likely to be any of the `K` units and
/// sends `x1` with probability `p_b`; all others are nominal. In full-duplex
/// every unit sends an independent Bernoulli(`p_b`) bit. Because all units
/// share the constellation, a unit's power then depends only on its own bit
/// and on how many other units send a one, so the `2^K` bit vectors collapse
/// to `2K` classes.
pub fn average_deviation(c: &Constellation, mode: Mode, config: &GridConfig) -> Result<DeviationReport> {
    config.validate()?;
    Ok(DeviationReport::from_units(deviation_by_mode(
        c,
        mode,
        config,
        &DeviationContext::new(config),
    )))
}

fn deviation_by_mode(c: &Constellation, mode: Mode, config: &GridConfig, ctx: &DeviationContext) -> Vec<f64> {
    let units = config.units();
    let mut acc = vec![0.0; units];
    match mode {
        Mode::Tdma => {
            for j in 0..units {
                for bit in [false, true] {
                    let mut inputs = config.nominal.clone();
                    inputs[j] = c.symbol(bit);
                    let w = c.prior(bit) / units as f64;
                    for (a, d) in acc.iter_mut().zip(ctx.deviation(&inputs)) {
                        *a += w * d;
                    }
                }
            }
        }
        Mode::FullDuplex => {
            // Unit k's deviation for own bit b and W ones among the others.
            // The placement of the W ones does not matter for unit k.
            for k in 0..units {
                for bit in [false, true] {
                    for w in 0..units {
                        let prob = c.prior(bit) * binomial_pmf(units - 1, w, c.p_b);
                        if prob == 0.0 {
                            continue;
                        }
                        let mut inputs = vec![c.x0; units];
                        inputs[k] = c.symbol(bit);
                        for slot in (0..units).filter(|&i| i != k).take(w) {
                            inputs[slot] = c.x1;
                        }
                        acc[k] += prob * ctx.deviation(&inputs)[k];
                    }
                }
            }
        }
    }
    acc
}

/// Mean deviation for a fixed-`r_d` pair `(v0, v1)`; used by the designer.
fn delta_for(v0: f64, v1: f64, r_d: f64, p_b: f64, mode: Mode, config: &GridConfig, ctx: &DeviationContext) -> f64 {
    let c = Constellation {
        x0: Symbol { v: v0, r_d },
        x1: Symbol { v: v1, r_d },
        p_b,
    };
    let d = deviation_by_mode(&c, mode, config, ctx);
    d.iter().sum::<f64>() / d.len() as f64
}

/// Largest `v1 >= lo` such that every `v1' in [lo, v1]` keeps the pair feasible.
fn feasible_upper_end(v0: f64, lo: f64, r_d: f64, mode: Mode, config: &GridConfig) -> f64 {
    let feasible = |v1: f64| {
        let c = Constellation {
            x0: Symbol { v: v0, r_d },
            x1: Symbol { v: v1, r_d },
            p_b: 0.5,
        };
        constellation_feasible(&c, mode, config)
    };
    let mut step = (config.v_max - config.v_min).max(1.0);
    let mut hi = lo + step;
    while feasible(hi) {
        step *= 2.0;
        hi = lo + step;
        if step > 1e9 {
            return hi;
        }
    }
    let mut a = lo;
    for _ in 0..200 {
        let m = 0.5 * (a + hi);
        if m <= a || m >= hi {
            break;
        }
        if feasible(m) {
            a = m;
        } else {
            hi = m;
        }
    }
    a
}

/// Tolerance on `|delta - gamma|` met by [`design_fixed_rd_constellation`].
pub const DESIGN_TOLERANCE: f64 = 1e-6;

/// Fixed-`r_d` constellation `x0 = (v0, r_d^n)`, `x1 = (v1, r_d^n)` whose mean
/// deviation equals `gamma`.
///
/// `v1` is searched by bisection between `max(v0, v^n)` and the end of the
/// feasible interval, on which the deviation grows strictly with `v1`.
pub fn design_fixed_rd_constellation(
    gamma: f64,
    mode: Mode,
    config: &GridConfig,
    anchor_v0: f64,
    p_b: f64,
) -> Result<Constellation> {
    config.validate()?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    if !(p_b > 0.0 && p_b < 1.0) {
        return Err(Error::invalid(format!("p_b must lie in (0, 1), got {p_b}")));
    }
    let r_d = config.nominal[0].r_d;
    let v_n = config.nominal[0].v;
    let lo = anchor_v0.max(v_n);
    let probe = Constellation {
        x0: Symbol { v: anchor_v0, r_d },
        x1: Symbol { v: lo, r_d },
        p_b,
    };
    if !constellation_feasible(&probe, mode, config) {
        return Err(Error::invalid(format!(
            "anchor v0 = {anchor_v0} V is not feasible in {mode} mode"
        )));
    }
    let ctx = DeviationContext::new(config);
    let f = |v1: f64| delta_for(anchor_v0, v1, r_d, p_b, mode, config, &ctx);
    if f(lo) > gamma + DESIGN_TOLERANCE {
        return Err(Error::BudgetUnreachable {
            gamma,
            reason: format!("the anchor alone already deviates by {:.6}", f(lo)),
        });
    }
    let mut hi = feasible_upper_end(anchor_v0, lo, r_d, mode, config);
    let d_hi = f(hi);
    if d_hi < gamma - DESIGN_TOLERANCE {
        return Err(Error::BudgetUnreachable {
            gamma,
            reason: format!("largest feasible v1 = {hi:.6} V reaches only delta = {d_hi:.6}"),
        });
    }
    let mut a = lo;
    let mut v1 = lo;
    for _ in 0..200 {
        v1 = 0.5 * (a + hi);
        let d = f(v1);
        if (d - gamma).abs() <= 0.1 * DESIGN_TOLERANCE {
            break;
        }
        if d < gamma {
            a = v1;
        } else {
            hi = v1;
        }
    }
    Constellation::new(Symbol { v: anchor_v0, r_d }, Symbol { v: v1, r_d }, p_b)
}

/// Every input vector a mode can put on the bus with constellation `c`.
pub fn reachable_inputs(c: &Constellation, mode: Mode, config: &GridConfig) -> Vec<Vec<Symbol>> {
    let units = config.units();
    let mut out = vec![config.nominal.clone()];
    match mode {
        Mode::Tdma => {
            for j in 0..units {
                for bit in [false, true] {
                    let mut v = config.nominal.clone();
                    v[j] = c.symbol(bit);
                    out.push(v);
                }
            }
        }
        Mode::FullDuplex => {
            // With shared symbols, one representative per own-bit/weight class suffices
            // for the bus voltage; currents only depend on a unit's own symbol.
            for ones in 0..=units {
                let mut v = vec![c.x0; units];
                for s in v.iter_mut().take(ones) {
                    *s = c.x1;
                }
                out.push(v);
            }
        }
    }
    out
}

/// Count of `(input vector, load)` pairs on a dense load grid that break a
/// constraint, with absolute slack `tol`.
pub fn sweep_violations(c: &Constellation, mode: Mode, config: &GridConfig, points: usize, tol: f64) -> usize {
    let cs = ConstraintSet::from_config(config);
    let points = points.max(2);
    let inputs = reachable_inputs(c, mode, config);
    let mut bad = 0;
    for n in 0..points {
        let r = config.r_min + (config.r_max - config.r_min) * n as f64 / (points - 1) as f64;
        bad += inputs.iter().filter(|x| !cs.admits(x, r, tol)).count();
    }
    bad
}
