//! Reference implementations shared by the integration tests. None of them
//! call into the library's own solvers.

#![allow(dead_code)]

use powertalk::grid::{GridConfig, Symbol};
use powertalk::signaling::Constellation;
use powertalk::Mode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            let (upper, lower) = a.split_at_mut(row);
            for (t, p) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *t -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub struct NodalSolution {
    pub bus: f64,
    pub currents: Vec<f64>,
}

/// Modified nodal analysis of `K` Thevenin sources `(v_k, r_dk)`, each tied
/// to the bus through a feeder resistance, and a load `r` from bus to ground.
///
/// Node layout: source node `2k`, terminal node `2k+1`, bus `2K`. Ideal
/// voltage sources (the converters' references, and zero-ohm feeders) get
/// their own current unknowns.
pub fn nodal_solve(units: &[(f64, f64)], feeders: &[f64], r: f64) -> NodalSolution {
    let k = units.len();
    let nodes = 2 * k + 1;
    let bus = 2 * k;
    let zero_feeders: Vec<usize> = (0..k).filter(|&u| feeders[u] == 0.0).collect();
    let n = nodes + k + zero_feeders.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    let stamp_g = |a: &mut Vec<Vec<f64>>, p: usize, q: Option<usize>, g: f64| {
        a[p][p] += g;
        if let Some(q) = q {
            a[q][q] += g;
            a[p][q] -= g;
            a[q][p] -= g;
        }
    };
    for (u, &(v, r_d)) in units.iter().enumerate() {
        let (src, term) = (2 * u, 2 * u + 1);
        stamp_g(&mut a, src, Some(term), 1.0 / r_d);
        // reference source between ground and src
        let m = nodes + u;
        a[src][m] += 1.0;
        a[m][src] += 1.0;
        rhs[m] = v;
        if feeders[u] > 0.0 {
            stamp_g(&mut a, term, Some(bus), 1.0 / feeders[u]);
        }
    }
    for (idx, &u) in zero_feeders.iter().enumerate() {
        let m = nodes + k + idx;
        let term = 2 * u + 1;
        a[term][m] += 1.0;
        a[bus][m] -= 1.0;
        a[m][term] += 1.0;
        a[m][bus] -= 1.0;
    }
    stamp_g(&mut a, bus, None, 1.0 / r);
    let x = solve_dense(a, rhs);
    let currents = units
        .iter()
        .enumerate()
        .map(|(u, &(_, r_d))| (x[2 * u] - x[2 * u + 1]) / r_d)
        .collect();
    NodalSolution { bus: x[bus], currents }
}

/// Number of transitions until absorption in the retraining chain: from state
/// `n` the chain steps down one state per clean slot and jumps back to `n` on a
/// change; state 0 is absorbing. Runs of clean slots are drawn geometrically.
pub fn retraining_chain_episode<R: Rng>(n: usize, p: f64, rng: &mut R) -> u64 {
    let clean_run = Geometric::new(p).unwrap();
    let mut steps = 0u64;
    loop {
        let run = clean_run.sample(rng);
        if run >= n as u64 {
            return steps + n as u64;
        }
        steps += run + 1;
    }
}

/// Periodic-training rate as the expectation over the slot of the first change.
pub fn periodic_rate_series_tdma(units: usize, l: usize, b: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    let kb = units as u64 * b;
    let series: f64 = (1..=kb).map(|t| (t - 1) as f64 * q.powf((t - 1) as f64)).sum();
    q.powi(l as i32) / (l as f64 + kb as f64) * (p / units as f64 * series + b as f64 * q.powf(kb as f64))
}

/// As above for full duplex with blocks of `n` slots.
pub fn periodic_rate_series_fd(n: usize, l: usize, b: u64, p: f64) -> f64 {
    let q = 1.0 - p;
    let nf = n as f64;
    let series: f64 = (1..=b)
        .map(|tau| (tau - 1) as f64 * q.powf(nf * (tau - 1) as f64) * (1.0 - q.powf(nf)))
        .sum();
    q.powi(l as i32) / (l as f64 + nf * b as f64) * (series + b as f64 * q.powf(nf * b as f64))
}

/// Bus voltage from Kirchhoff's current law at the single bus node.
pub fn kcl_bus(inputs: &[(f64, f64)], r: f64) -> f64 {
    let g: f64 = inputs.iter().map(|&(_, rd)| 1.0 / rd).sum::<f64>() + 1.0 / r;
    inputs.iter().map(|&(v, rd)| v / rd).sum::<f64>() / g
}

/// Squared Mahalanobis distance with a diagonal covariance.
pub fn dist2(y: (f64, f64), s: (f64, f64), sv: f64, si: f64) -> f64 {
    ((y.0 - s.0) / sv).powi(2) + ((y.1 - s.1) / si).powi(2)
}

pub fn ln_choose(n: usize, k: usize) -> f64 {
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

/// Log posterior (up to a constant) of each weight `W = 0..K-1` at a
/// full-duplex receiver, from the candidate points.
pub fn fd_log_posteriors(points: &[(f64, f64)], y: (f64, f64), p_b: f64, sv: f64, si: f64) -> Vec<f64> {
    let n = points.len() - 1;
    points
        .iter()
        .enumerate()
        .map(|(w, &s)| {
            ln_choose(n, w) + w as f64 * p_b.ln() + (n - w) as f64 * (1.0 - p_b).ln() - 0.5 * dist2(y, s, sv, si)
        })
        .collect()
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x >= xs[best] {
            best = i;
        }
    }
    best
}

/// Largest minus second-largest entry.
pub fn margin(xs: &[f64]) -> f64 {
    let mut s: Vec<f64> = xs.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    if s.len() < 2 {
        f64::INFINITY
    } else {
        s[0] - s[1]
    }
}

pub fn noisy<R: Rng>(v: f64, i: f64, sv: f64, si: f64, rng: &mut R) -> (f64, f64) {
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    (v + sv * a, i + si * b)
}

/// Relative RMS power deviation by trapezoidal integration over `points`
/// equally spaced loads.
pub fn dense_deviation(
    inputs: &[(f64, f64)],
    nominal: &[(f64, f64)],
    r_min: f64,
    r_max: f64,
    points: usize,
) -> Vec<f64> {
    let k = inputs.len();
    let mut msq = vec![0.0; k];
    let mut mean_nom = vec![0.0; k];
    let h = (r_max - r_min) / (points - 1) as f64;
    for idx in 0..points {
        let r = r_min + h * idx as f64;
        let w = if idx == 0 || idx == points - 1 { 0.5 } else { 1.0 } * h / (r_max - r_min);
        let v = kcl_bus(inputs, r);
        let vn = kcl_bus(nominal, r);
        for u in 0..k {
            let p = v * (inputs[u].0 - v) / inputs[u].1;
            let pn = vn * (nominal[u].0 - vn) / nominal[u].1;
            msq[u] += w * (p - pn).powi(2);
            mean_nom[u] += w * pn;
        }
    }
    msq.iter().zip(&mean_nom).map(|(m, n)| m.sqrt() / n).collect()
}

/// One receiver per slot, so decisions are independent across slots.
pub fn monte_carlo_error_rate(grid: &GridConfig, c: &Constellation, mode: Mode, slots: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = grid.units();
    let (sv, si) = (grid.sigma_v, grid.sigma_i);
    let sym = |s: Symbol| (s.v, s.r_d);
    let mut errors = 0usize;
    for _ in 0..slots {
        let r = rng.random_range(grid.r_min..grid.r_max);
        match mode {
            Mode::Tdma => {
                let j = rng.random_range(0..k);
                let recv = (j + rng.random_range(1..k)) % k;
                let bit = rng.random_bool(c.p_b);
                let point = |b: bool| {
                    let mut x: Vec<(f64, f64)> = grid.nominal.iter().map(|&s| sym(s)).collect();
                    x[j] = sym(c.symbol(b));
                    let v = kcl_bus(&x, r);
                    (v, (x[recv].0 - v) / x[recv].1)
                };
                let (s0, s1) = (point(false), point(true));
                let truth = if bit { s1 } else { s0 };
                let y = noisy(truth.0, truth.1, sv, si, &mut rng);
                let l1 = c.p_b.ln() - 0.5 * dist2(y, s1, sv, si);
                let l0 = (1.0 - c.p_b).ln() - 0.5 * dist2(y, s0, sv, si);
                errors += usize::from((l1 > l0) != bit);
            }
            Mode::FullDuplex => {
                let bits: Vec<bool> = (0..k).map(|_| rng.random_bool(c.p_b)).collect();
                let recv = rng.random_range(0..k);
                let own = c.symbol(bits[recv]);
                let others = bits.iter().enumerate().filter(|&(u, &b)| u != recv && b).count();
                let candidates: Vec<(f64, f64)> = (0..k)
                    .map(|w| {
                        let mut x = vec![sym(c.x0); k];
                        x[recv] = sym(own);
                        for u in (0..k).filter(|&u| u != recv).take(w) {
                            x[u] = sym(c.x1);
                        }
                        let v = kcl_bus(&x, r);
                        (v, (own.v - v) / own.r_d)
                    })
                    .collect();
                let truth = candidates[others];
                let y = noisy(truth.0, truth.1, sv, si, &mut rng);
                let post = fd_log_posteriors(&candidates, y, c.p_b, sv, si);
                errors += usize::from(argmax(&post) != others);
            }
        }
    }
    errors as f64 / slots as f64
}
