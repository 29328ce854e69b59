//! Small numerical kernels: Gauss-Legendre rules, the Gaussian tail
//! function, adaptive Simpson integration and binomial weights.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds an `n`-point rule by Newton iteration on the Legendre polynomial.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`, weights summing to `b - a`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Gaussian tail `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `P(U >= 0, V < 0)` for jointly Gaussian `(U, V)` with the given means,
/// standard deviations and correlation.
///
/// Degenerate (zero-variance) marginals are treated as point masses. For
/// `|rho| = 1` the event reduces to an interval of one standard normal; otherwise
/// the probability is reduced to a 1-D integral over the standardized `U` and
/// evaluated by adaptive quadrature.
pub fn gaussian_band_probability(mu_u: f64, sd_u: f64, mu_v: f64, sd_v: f64, rho: f64) -> f64 {
    if sd_u <= 0.0 {
        if mu_u < 0.0 {
            return 0.0;
        }
        return if sd_v <= 0.0 {
            f64::from(mu_v < 0.0)
        } else {
            normal_cdf(-mu_v / sd_v)
        };
    }
    if sd_v <= 0.0 {
        if mu_v >= 0.0 {
            return 0.0;
        }
        return q_function(-mu_u / sd_u);
    }
    // U >= 0  <=>  z >= lo with z the standardized U
    let lo = -mu_u / sd_u;
    let rho = rho.clamp(-1.0, 1.0);
    if 1.0 - rho.abs() < 1e-12 {
        // V = mu_v + rho * sd_v * z exactly
        let t = -mu_v / sd_v;
        return if rho > 0.0 {
            // z < t
            (normal_cdf(t) - normal_cdf(lo)).max(0.0)
        } else {
            // z > -t
            q_function(lo.max(-t))
        };
    }
    let s = (1.0 - rho * rho).sqrt();
    let integrand = |z: f64| normal_pdf(z) * normal_cdf((-mu_v / sd_v - rho * z) / s);
    let a = lo.max(-40.0);
    let b = 40.0_f64;
    if a >= b {
        return 0.0;
    }
    // integrate on a few panels so the adaptive rule sees the bulk of the mass
    let cuts = [a, a.max(-8.0), a.max(-3.0), a.max(0.0), a.max(3.0), a.max(8.0), b];
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| adaptive_simpson(&integrand, w[0], w[1], 1e-15))
        .sum::<f64>()
        .clamp(0.0, 1.0)
}

/// `ln C(n, k)`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// Binomial(n, p) probability mass at `k`.
pub fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    binomial_ln_pmf(n, k, p).exp()
}

pub fn binomial_ln_pmf(n: usize, k: usize, p: f64) -> f64 {
    let kf = k as f64;
    let rest = (n - k) as f64;
    let mut lp = ln_binomial(n, k);
    if k > 0 {
        lp += kf * p.ln();
    }
    if n > k {
        lp += rest * (-p).ln_1p();
    }
    lp
}

/// `(1 - p)^x` computed through `ln(1 - p)` so small `p` keeps full precision.
pub fn survival_pow(p: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    (x * (-p).ln_1p()).exp()
}

/// `1 - (1 - p)^x` without cancellation for small `p`.
pub fn one_minus_survival_pow(p: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    -(x * (-p).ln_1p()).exp_m1()
}
