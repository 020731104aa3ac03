//! Gaussian kernels and heat-kernel smoothing.
//!
//! `gamma_s` is the centred Gaussian law with variance `s`. For an atomic
//! measure `alpha`, `alpha * gamma_s` is a finite Gaussian mixture whose CDF,
//! survival function, partial means and quantiles are evaluated in closed
//! form. Heat convolution of a monotone function uses the exact jump sum for
//! step functions and Gauss–Hermite quadrature otherwise.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::fmt;
use std::sync::{Arc, LazyLock};

use crate::error::{Error, Result};
use crate::measures::GridMeasure;

/// Default number of Gauss–Hermite nodes.
pub const DEFAULT_GH_NODES: usize = 64;
/// Largest rule [`GaussHermite::new`] builds reliably.
pub const MAX_GH_NODES: usize = 150;

/// Beyond this many standard deviations a Gaussian CDF term is 0 or 1 to
/// below 1e-19 and is not evaluated.
const WINDOW_SIGMAS: f64 = 9.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

static DEFAULT_RULE: LazyLock<GaussHermite> =
    LazyLock::new(|| GaussHermite::new(DEFAULT_GH_NODES));

fn check_variance(s: f64) -> Result<()> {
    if s > 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("variance {s} must be > 0")))
    }
}

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF via `erfc`, accurate in both tails.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 - Phi(z)`.
#[inline]
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * FRAC_1_SQRT_2)
}

/// Quantile of the standard normal law for `u` in (0, 1).
///
/// Rational initial guess refined by Halley steps on the `erfc`-based CDF.
/// For `u > 1/2` the lower-tail solve runs on `1 - u`, which is exact.
pub fn std_normal_quantile(u: f64) -> f64 {
    if u > 0.5 {
        -lower_quantile(1.0 - u)
    } else {
        lower_quantile(u)
    }
}

/// `z` with `1 - Phi(z) = q`, accurate for tiny `q`.
pub fn std_normal_quantile_upper(q: f64) -> f64 {
    -std_normal_quantile(q)
}

fn lower_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p <= 0.5);
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    let mut x = if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // Halley refinement; the residual is relative to p so tails stay accurate.
    for _ in 0..3 {
        let e = std_normal_cdf(x) - p;
        let u = e / std_normal_pdf(x);
        if !u.is_finite() {
            break;
        }
        let step = u / (1.0 + 0.5 * x * u);
        x -= step;
        if step.abs() <= 1e-16 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Density of `gamma_s` at `x`.
pub fn gauss_pdf(x: f64, s: f64) -> Result<f64> {
    check_variance(s)?;
    let sd = s.sqrt();
    Ok(std_normal_pdf(x / sd) / sd)
}

/// CDF of `gamma_s` at `x`.
pub fn gauss_cdf(x: f64, s: f64) -> Result<f64> {
    check_variance(s)?;
    Ok(std_normal_cdf(x / s.sqrt()))
}

/// Quantile of `gamma_s` at level `u` in (0, 1).
pub fn gauss_quantile(u: f64, s: f64) -> Result<f64> {
    check_variance(s)?;
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile level {u} outside (0, 1)"
        )));
    }
    Ok(s.sqrt() * std_normal_quantile(u))
}

/// Gauss–Hermite rule for expectations against the standard normal law:
/// `E[f(Z)] ~ sum_i w_i f(z_i)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes by Newton iteration on the orthonormal Hermite recurrence.
    ///
    /// The recurrence loses the outer nodes to overflow beyond
    /// [`MAX_GH_NODES`] nodes.
    pub fn new(n: usize) -> Self {
        assert!(
            (1..=MAX_GH_NODES).contains(&n),
            "Gauss-Hermite rule supports 1..={MAX_GH_NODES} nodes, got {n}"
        );
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let sqrt_pi = PI.sqrt();
        let mut nodes: Vec<f64> = x.iter().map(|v| v * SQRT_2).collect();
        let mut weights: Vec<f64> = w.iter().map(|v| v / sqrt_pi).collect();
        nodes.reverse();
        weights.reverse();
        Self { nodes, weights }
    }

    /// Shared default rule with [`DEFAULT_GH_NODES`] nodes.
    pub fn default_rule() -> &'static GaussHermite {
        &DEFAULT_RULE
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// The Gaussian mixture `alpha * gamma_s` for an atomic `alpha`.
///
/// Prefix and suffix sums over the sorted atoms let every evaluation touch
/// only atoms within a few standard deviations of the query point.
#[derive(Debug, Clone)]
pub struct SmoothedMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    /// `prefix_w[k] = sum_{j < k} w_j`
    prefix_w: Vec<f64>,
    /// `suffix_w[k] = sum_{j >= k} w_j`
    suffix_w: Vec<f64>,
    prefix_wa: Vec<f64>,
    suffix_wa: Vec<f64>,
    sd: f64,
}

impl SmoothedMeasure {
    pub fn new(alpha: &GridMeasure, s: f64) -> Result<Self> {
        check_variance(s)?;
        let atoms = alpha.atoms().to_vec();
        let weights = alpha.weights().to_vec();
        let n = atoms.len();
        let mut prefix_w = vec![0.0; n + 1];
        let mut prefix_wa = vec![0.0; n + 1];
        for j in 0..n {
            prefix_w[j + 1] = prefix_w[j] + weights[j];
            prefix_wa[j + 1] = prefix_wa[j] + weights[j] * atoms[j];
        }
        let mut suffix_w = vec![0.0; n + 1];
        let mut suffix_wa = vec![0.0; n + 1];
        for j in (0..n).rev() {
            suffix_w[j] = suffix_w[j + 1] + weights[j];
            suffix_wa[j] = suffix_wa[j + 1] + weights[j] * atoms[j];
        }
        Ok(Self {
            atoms,
            weights,
            prefix_w,
            suffix_w,
            prefix_wa,
            suffix_wa,
            sd: s.sqrt(),
        })
    }

    pub fn variance(&self) -> f64 {
        self.sd * self.sd
    }

    #[inline]
    fn window(&self, x: f64) -> (usize, usize) {
        let reach = WINDOW_SIGMAS * self.sd;
        let lo = self.atoms.partition_point(|&a| a < x - reach);
        let hi = self.atoms.partition_point(|&a| a <= x + reach);
        (lo, hi)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let mut acc = self.prefix_w[lo];
        for j in lo..hi {
            acc += self.weights[j] * std_normal_cdf((x - self.atoms[j]) / self.sd);
        }
        acc.min(1.0)
    }

    pub fn sf(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let mut acc = self.suffix_w[hi];
        for j in lo..hi {
            acc += self.weights[j] * std_normal_sf((x - self.atoms[j]) / self.sd);
        }
        acc.min(1.0)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let mut acc = 0.0;
        for j in lo..hi {
            acc += self.weights[j] * std_normal_pdf((x - self.atoms[j]) / self.sd);
        }
        acc / self.sd
    }

    /// `E[X 1{X <= x}]` for `X ~ alpha * gamma_s`.
    pub fn lower_partial_mean(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let mut acc = self.prefix_wa[lo];
        for j in lo..hi {
            let z = (x - self.atoms[j]) / self.sd;
            acc += self.weights[j] * (self.atoms[j] * std_normal_cdf(z) - self.sd * std_normal_pdf(z));
        }
        acc
    }

    /// `E[X 1{X > x}]` for `X ~ alpha * gamma_s`.
    pub fn upper_partial_mean(&self, x: f64) -> f64 {
        let (lo, hi) = self.window(x);
        let mut acc = self.suffix_wa[hi];
        for j in lo..hi {
            let z = (x - self.atoms[j]) / self.sd;
            acc += self.weights[j] * (self.atoms[j] * std_normal_sf(z) + self.sd * std_normal_pdf(z));
        }
        acc
    }

    /// Root of `cdf(x) = lower` (equivalently `sf(x) = upper`), solving on
    /// whichever tail mass is smaller. `lower + upper` must equal one; both
    /// are passed so that callers holding an exact tail mass keep its
    /// precision. `hint` seeds the Newton iteration.
    pub fn quantile_split(&self, lower: f64, upper: f64, hint: Option<f64>) -> f64 {
        let use_lower = lower <= upper;
        let (z_target, target) = if use_lower {
            (std_normal_quantile(lower), lower)
        } else {
            (std_normal_quantile_upper(upper), upper)
        };
        let first = self.atoms[0];
        let last = self.atoms[self.atoms.len() - 1];
        let mut a = first + self.sd * z_target;
        let mut b = last + self.sd * z_target;
        if a == b {
            return a;
        }
        // g is increasing in x on both branches.
        let g = |x: f64| -> f64 {
            if use_lower {
                self.cdf(x) - target
            } else {
                target - self.sf(x)
            }
        };
        let mut x = match hint {
            Some(h) if h > a && h < b => h,
            _ => 0.5 * (a + b),
        };
        for _ in 0..200 {
            let gx = g(x);
            if gx == 0.0 {
                return x;
            }
            if gx < 0.0 {
                a = x;
            } else {
                b = x;
            }
            let d = self.pdf(x);
            let mut next = x - gx / d;
            if !(next > a && next < b) || !next.is_finite() {
                next = 0.5 * (a + b);
            }
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) || (b - a) <= 1e-15 * (1.0 + x.abs())
            {
                return next;
            }
            x = next;
        }
        x
    }

    /// Inverse CDF at `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quantile level {u} outside (0, 1)"
            )));
        }
        Ok(self.quantile_split(u, 1.0 - u, None))
    }
}

/// CDF of `alpha * gamma_s` at `x`.
pub fn smoothed_cdf(alpha: &GridMeasure, s: f64, x: f64) -> Result<f64> {
    Ok(SmoothedMeasure::new(alpha, s)?.cdf(x))
}

/// Quantile of `alpha * gamma_s` at `u` in (0, 1).
pub fn smoothed_quantile(alpha: &GridMeasure, s: f64, u: f64) -> Result<f64> {
    SmoothedMeasure::new(alpha, s)?.quantile(u)
}

/// Right-continuous nondecreasing step function
/// `x -> levels[#{k : jumps[k] <= x}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFn {
    levels: Vec<f64>,
    jumps: Vec<f64>,
}

impl StepFn {
    /// `levels` nondecreasing with `levels.len() == jumps.len() + 1`,
    /// `jumps` nondecreasing.
    pub fn new(levels: Vec<f64>, jumps: Vec<f64>) -> Result<Self> {
        if levels.len() != jumps.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} levels need {} jumps, got {}",
                levels.len(),
                levels.len().saturating_sub(1),
                jumps.len()
            )));
        }
        if levels.windows(2).any(|w| w[1] < w[0]) || jumps.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "step function levels and jumps must be nondecreasing".into(),
            ));
        }
        if levels.iter().chain(&jumps).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite step data".into()));
        }
        Ok(Self { levels, jumps })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.levels[self.jumps.partition_point(|&j| j <= x)]
    }

    #[inline]
    fn window(&self, x: f64, sd: f64) -> (usize, usize) {
        let reach = WINDOW_SIGMAS * sd;
        let lo = self.jumps.partition_point(|&j| j < x - reach);
        let hi = self.jumps.partition_point(|&j| j <= x + reach);
        (lo, hi)
    }

    /// `(F * gamma_s)(x) = levels[0] + sum_k (levels[k+1] - levels[k]) Phi((x - jumps[k]) / sqrt(s))`.
    pub fn smoothed(&self, s: f64, x: f64) -> f64 {
        if s == 0.0 {
            return self.eval(x);
        }
        let sd = s.sqrt();
        let (lo, hi) = self.window(x, sd);
        let mut acc = self.levels[lo];
        for k in lo..hi {
            let dy = self.levels[k + 1] - self.levels[k];
            acc += dy * std_normal_cdf((x - self.jumps[k]) / sd);
        }
        acc
    }

    /// Spatial derivative of [`StepFn::smoothed`]; `s > 0`.
    pub fn smoothed_deriv(&self, s: f64, x: f64) -> f64 {
        let sd = s.sqrt();
        let (lo, hi) = self.window(x, sd);
        let mut acc = 0.0;
        for k in lo..hi {
            let dy = self.levels[k + 1] - self.levels[k];
            acc += dy * std_normal_pdf((x - self.jumps[k]) / sd);
        }
        acc / sd
    }

    /// Value and derivative in one pass.
    pub fn smoothed_with_deriv(&self, s: f64, x: f64) -> (f64, f64) {
        let sd = s.sqrt();
        let (lo, hi) = self.window(x, sd);
        let mut value = self.levels[lo];
        let mut deriv = 0.0;
        for k in lo..hi {
            let dy = self.levels[k + 1] - self.levels[k];
            let z = (x - self.jumps[k]) / sd;
            value += dy * std_normal_cdf(z);
            deriv += dy * std_normal_pdf(z);
        }
        (value, deriv / sd)
    }
}

type SharedFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Nondecreasing real function given by a closure, clamped to `[lo, hi]`.
#[derive(Clone)]
pub struct ClosedFn {
    f: SharedFn,
    lo: f64,
    hi: f64,
}

impl fmt::Debug for ClosedFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosedFn")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .finish_non_exhaustive()
    }
}

/// Piecewise-linear interpolation of a nondecreasing table, flat outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TableFn {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl TableFn {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::InvalidArgument("table needs matching nonempty columns".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) || ys.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(
                "table must have increasing abscissae and nondecreasing values".into(),
            ));
        }
        Ok(Self { xs, ys })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.xs.partition_point(|&v| v <= x);
        if k == 0 {
            return self.ys[0];
        }
        if k == self.xs.len() {
            return self.ys[k - 1];
        }
        let (x0, x1) = (self.xs[k - 1], self.xs[k]);
        let (y0, y1) = (self.ys[k - 1], self.ys[k]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// A nondecreasing function of one real variable with known image bounds.
#[derive(Debug, Clone)]
pub enum MonotoneFn {
    Step(StepFn),
    Closed(ClosedFn),
    Table(TableFn),
}

impl MonotoneFn {
    /// Wraps a closure; values are clamped into `[lo, hi]`.
    pub fn closed(lo: f64, hi: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        MonotoneFn::Closed(ClosedFn {
            f: Arc::new(f),
            lo,
            hi,
        })
    }

    /// Constant function.
    pub fn constant(c: f64) -> Self {
        MonotoneFn::Step(StepFn {
            levels: vec![c],
            jumps: vec![],
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            MonotoneFn::Step(step) => step.eval(x),
            MonotoneFn::Closed(c) => (c.f)(x).clamp(c.lo, c.hi),
            MonotoneFn::Table(t) => t.eval(x),
        }
    }

    /// Closed interval containing the image.
    pub fn image_bounds(&self) -> (f64, f64) {
        match self {
            MonotoneFn::Step(step) => (step.levels[0], step.levels[step.levels.len() - 1]),
            MonotoneFn::Closed(c) => (c.lo, c.hi),
            MonotoneFn::Table(t) => (t.ys[0], t.ys[t.ys.len() - 1]),
        }
    }

    pub fn as_step(&self) -> Option<&StepFn> {
        match self {
            MonotoneFn::Step(step) => Some(step),
            _ => None,
        }
    }
}

/// `(F * gamma_s)(x) = E[F(x + sqrt(s) Z)]` with the default rule.
pub fn heat_convolve(f: &MonotoneFn, s: f64, x: f64) -> Result<f64> {
    heat_convolve_with(f, s, x, GaussHermite::default_rule())
}

/// [`heat_convolve`] with an explicit Gauss–Hermite rule. Step functions are
/// convolved exactly and ignore the rule.
pub fn heat_convolve_with(f: &MonotoneFn, s: f64, x: f64, rule: &GaussHermite) -> Result<f64> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidArgument(format!("variance {s} must be >= 0")));
    }
    if s == 0.0 {
        return Ok(f.eval(x));
    }
    if let MonotoneFn::Step(step) = f {
        return Ok(step.smoothed(s, x));
    }
    let sd = s.sqrt();
    let mut acc = 0.0;
    for (&z, &w) in rule.nodes().iter().zip(rule.weights()) {
        let v = f.eval(x + sd * z);
        if !v.is_finite() {
            return Err(Error::DivergentQuadrature(x + sd * z));
        }
        acc += w * v;
    }
    Ok(acc)
}

/// `d/dx (F * gamma_s)(x) = (1/s) int F(x + z) z gamma_s(dz)` with the
/// default rule; `s > 0`.
pub fn heat_convolve_deriv(f: &MonotoneFn, s: f64, x: f64) -> Result<f64> {
    heat_convolve_deriv_with(f, s, x, GaussHermite::default_rule())
}

pub fn heat_convolve_deriv_with(
    f: &MonotoneFn,
    s: f64,
    x: f64,
    rule: &GaussHermite,
) -> Result<f64> {
    check_variance(s)?;
    if let MonotoneFn::Step(step) = f {
        return Ok(step.smoothed_deriv(s, x));
    }
    let sd = s.sqrt();
    let mut acc = 0.0;
    for (&z, &w) in rule.nodes().iter().zip(rule.weights()) {
        let v = f.eval(x + sd * z);
        if !v.is_finite() {
            return Err(Error::DivergentQuadrature(x + sd * z));
        }
        acc += w * v * z;
    }
    Ok((acc / sd).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Maclaurin series of erf, independent of the libm implementation.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        for n in 1..200 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        2.0 / PI.sqrt() * sum
    }

    fn step_0_2() -> MonotoneFn {
        MonotoneFn::Step(StepFn::new(vec![0.0, 2.0], vec![0.0]).unwrap())
    }

    fn exp_fn(sigma: f64) -> MonotoneFn {
        MonotoneFn::closed(0.0, f64::MAX, move |y| (sigma * y).exp())
    }

    #[test]
    fn cdf_values() {
        assert_eq!(gauss_cdf(0.0, 1.0).unwrap(), 0.5);
        let oracle = 0.5 * (1.0 + erf_series(FRAC_1_SQRT_2));
        let v = gauss_cdf(1.0, 1.0).unwrap();
        assert!((v - oracle).abs() < 1e-14);
        assert!((v - 0.841_344_746_068_542_9).abs() < 1e-14);
        for &x in &[-3.0, -1.2, -0.3, 0.7, 2.5] {
            let o = 0.5 * (1.0 + erf_series(x * FRAC_1_SQRT_2));
            assert!((std_normal_cdf(x) - o).abs() < 1e-13);
        }
        assert!(gauss_cdf(0.0, 0.0).is_err());
        assert!(gauss_pdf(0.0, -1.0).is_err());
    }

    #[test]
    fn quantile_values() {
        assert_eq!(gauss_quantile(0.5, 4.0).unwrap(), 0.0);
        for &u in &[1e-300, 1e-12, 1e-6, 0.01, 0.2, 0.5, 0.7, 0.99, 1.0 - 1e-9] {
            let q = gauss_quantile(u, 1.0).unwrap();
            let back = gauss_cdf(q, 1.0).unwrap();
            assert!((back - u).abs() < 1e-12, "u={u} q={q} back={back}");
            assert!((back - u).abs() <= 1e-12 * u.max(1e-300) || u > 1e-3);
        }
        let z = std_normal_quantile_upper(1e-20);
        assert!((std_normal_sf(z) / 1e-20 - 1.0).abs() < 1e-12);
        assert!(gauss_quantile(0.0, 1.0).is_err());
        assert!(gauss_quantile(1.0, 1.0).is_err());
    }

    #[test]
    fn hermite_rule_integrates_gaussian_moments() {
        let rule = GaussHermite::new(64);
        let moment = |p: i32| -> f64 {
            rule.nodes()
                .iter()
                .zip(rule.weights())
                .map(|(z, w)| w * z.powi(p))
                .sum()
        };
        assert!((moment(0) - 1.0).abs() < 1e-13);
        assert!(moment(1).abs() < 1e-13);
        assert!((moment(2) - 1.0).abs() < 1e-13);
        assert!((moment(4) - 3.0).abs() < 1e-12);
        assert!((moment(8) - 105.0).abs() < 1e-10);
        assert!(rule.nodes().windows(2).all(|w| w[0] < w[1]));
        let big = GaussHermite::new(MAX_GH_NODES);
        let total: f64 = big.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let small = GaussHermite::new(3);
        assert!((small.nodes()[2] - 3f64.sqrt()).abs() < 1e-14);
        assert!((small.weights()[1] - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn smoothed_cdf_examples() {
        let d0 = GridMeasure::dirac(0.0).unwrap();
        assert_eq!(smoothed_cdf(&d0, 1.0, 0.0).unwrap(), 0.5);
        let sym = GridMeasure::new(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert!((smoothed_cdf(&sym, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-16);
        assert!((smoothed_cdf(&d0, 1.0, 1.0).unwrap() - 0.841_344_746_068_542_9).abs() < 1e-15);
    }

    #[test]
    fn smoothed_quantile_examples() {
        let d0 = GridMeasure::dirac(0.0).unwrap();
        assert!(smoothed_quantile(&d0, 1.0, 0.5).unwrap().abs() < 1e-14);
        let sym = GridMeasure::new(vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
        assert!(smoothed_quantile(&sym, 1.0, 0.5).unwrap().abs() < 1e-14);
        assert!((smoothed_quantile(&d0, 1.0, 0.84134).unwrap() - 1.0).abs() < 1e-4);
        assert!(
            (smoothed_quantile(&d0, 1.0, 0.841_344_746_068_542_9).unwrap() - 1.0).abs() < 1e-6
        );
        assert!(smoothed_quantile(&d0, 1.0, 0.0).is_err());
        assert!(smoothed_quantile(&d0, 1.0, 1.0).is_err());
    }

    #[test]
    fn smoothed_quantile_inverts_cdf_on_mixtures() {
        let alpha = GridMeasure::new(vec![-3.0, 0.1, 0.2, 5.0], vec![0.1, 0.4, 0.3, 0.2]).unwrap();
        let sm = SmoothedMeasure::new(&alpha, 0.3).unwrap();
        for &u in &[1e-10, 1e-4, 0.05, 0.3, 0.5, 0.8, 0.9999] {
            let x = sm.quantile(u).unwrap();
            assert!((sm.cdf(x) - u).abs() < 1e-12, "u={u}");
        }
        let x = sm.quantile_split(1.0 - 1e-13, 1e-13, None);
        assert!((sm.sf(x) / 1e-13 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn partial_means_add_up() {
        let alpha = GridMeasure::new(vec![-1.0, 0.5, 2.0], vec![0.2, 0.5, 0.3]).unwrap();
        let sm = SmoothedMeasure::new(&alpha, 0.7).unwrap();
        for &x in &[-4.0, -0.3, 0.5, 1.9, 6.0] {
            let total = sm.lower_partial_mean(x) + sm.upper_partial_mean(x);
            assert!((total - alpha.mean()).abs() < 1e-14);
            assert!((sm.cdf(x) + sm.sf(x) - 1.0).abs() < 1e-15);
        }
        // E[Z 1{Z > 0}] = phi(0)
        let sm0 = SmoothedMeasure::new(&GridMeasure::dirac(0.0).unwrap(), 1.0).unwrap();
        assert!((sm0.upper_partial_mean(0.0) - INV_SQRT_2PI).abs() < 1e-16);
    }

    #[test]
    fn heat_convolve_examples() {
        let id = MonotoneFn::closed(f64::MIN, f64::MAX, |y| y);
        assert!(heat_convolve(&id, 1.0, 0.0).unwrap().abs() < 1e-14);
        let e = heat_convolve(&exp_fn(0.2), 1.0, 0.0).unwrap();
        assert!((e - 0.02f64.exp()).abs() < 1e-14);
        assert!((e - 1.020_201_340_026_755_8).abs() < 1e-14);
        assert!((heat_convolve(&step_0_2(), 1.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(heat_convolve(&step_0_2(), 0.0, 0.5).unwrap(), 2.0);
    }

    #[test]
    fn heat_convolve_deriv_examples() {
        let id = MonotoneFn::closed(f64::MIN, f64::MAX, |y| y);
        for &(s, x) in &[(1.0, 0.0), (0.3, 2.0), (2.5, -1.0)] {
            assert!((heat_convolve_deriv(&id, s, x).unwrap() - 1.0).abs() < 1e-12);
        }
        let d = heat_convolve_deriv(&exp_fn(0.2), 1.0, 0.0).unwrap();
        assert!((d - 0.2 * 0.02f64.exp()).abs() < 1e-14);
        let d = heat_convolve_deriv(&step_0_2(), 1.0, 0.0).unwrap();
        assert!((d - 2.0 * INV_SQRT_2PI).abs() < 1e-15);
        assert!(heat_convolve_deriv(&step_0_2(), 0.0, 0.0).is_err());
    }

    #[test]
    fn step_smoothing_matches_trapezoid_oracle() {
        let step = StepFn::new(vec![-1.0, 0.5, 3.0], vec![-0.4, 0.9]).unwrap();
        let n = 400_000;
        let h = 24.0 / n as f64;
        for &s in &[0.3f64, 1.0] {
            for &x in &[-2.0, -0.4, 0.0, 0.9, 2.0] {
                let mut acc = 0.0;
                for i in 0..=n {
                    let z = -12.0 + h * i as f64;
                    let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                    acc += w * step.eval(x + s.sqrt() * z) * std_normal_pdf(z);
                }
                let oracle = acc * h;
                assert!((step.smoothed(s, x) - oracle).abs() < 1e-4, "s={s} x={x}");
            }
        }
    }

    #[test]
    fn table_fn_interpolates() {
        let t = TableFn::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 1.0]).unwrap();
        let f = MonotoneFn::Table(t);
        assert_eq!(f.eval(-1.0), 0.0);
        assert_eq!(f.eval(0.5), 0.5);
        assert_eq!(f.eval(9.0), 1.0);
        assert_eq!(f.image_bounds(), (0.0, 1.0));
        assert!(TableFn::new(vec![1.0, 0.0], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn semigroup_property() {
        let smooth_fns = [exp_fn(0.2), MonotoneFn::closed(-1.0, 1.0, |y: f64| y.tanh())];
        for f in smooth_fns {
            for &(s1, s2) in &[(0.3, 0.4), (0.5, 0.5), (0.1, 0.8)] {
                let inner = {
                    let f = f.clone();
                    MonotoneFn::closed(f64::MIN, f64::MAX, move |y| {
                        heat_convolve(&f, s1, y).unwrap()
                    })
                };
                for k in 0..=16 {
                    let x = -4.0 + 0.5 * k as f64;
                    let two_step = heat_convolve(&inner, s2, x).unwrap();
                    let one_step = heat_convolve(&f, s1 + s2, x).unwrap();
                    assert!((two_step - one_step).abs() < 1e-8, "x={x}");
                }
            }
        }
        // Step function: exact convolution followed by quadrature.
        let step = step_0_2();
        let inner = {
            let step = step.clone();
            MonotoneFn::closed(0.0, 2.0, move |y| heat_convolve(&step, 0.5, y).unwrap())
        };
        for k in 0..=16 {
            let x = -4.0 + 0.5 * k as f64;
            let two_step = heat_convolve(&inner, 0.5, x).unwrap();
            let one_step = heat_convolve(&step, 1.0, x).unwrap();
            assert!((two_step - one_step).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn deriv_matches_finite_differences() {
        let h = 1e-4;
        let fns = [exp_fn(0.2), MonotoneFn::closed(-1.0, 1.0, |y: f64| y.tanh()), step_0_2()];
        for f in &fns {
            for &s in &[0.25, 1.0] {
                for k in 0..=8 {
                    let x = -3.0 + 0.75 * k as f64;
                    let fd = (heat_convolve(f, s, x + h).unwrap() - heat_convolve(f, s, x - h).unwrap())
                        / (2.0 * h);
                    let d = heat_convolve_deriv(f, s, x).unwrap();
                    assert!((fd - d).abs() < 1e-6, "s={s} x={x}: {fd} vs {d}");
                }
            }
        }
    }

    #[test]
    fn smoothed_cdf_is_heat_convolved_cdf() {
        let alpha = GridMeasure::new(vec![-0.5, 0.25, 1.0], vec![0.3, 0.3, 0.4]).unwrap();
        // P(A + sqrt(s) Z <= x) = E[F_A(x - sqrt(s) Z)] = (G * gamma_s)(x) with
        // G(y) = F_A(y) as a step function in y (Z symmetric).
        let cum = alpha.cumulative();
        let levels = std::iter::once(0.0).chain(cum.iter().copied()).collect();
        let cdf_as_fn = MonotoneFn::Step(StepFn::new(levels, alpha.atoms().to_vec()).unwrap());
        for &s in &[0.2, 1.0] {
            for k in 0..=10 {
                let x = -3.0 + 0.6 * k as f64;
                let a = smoothed_cdf(&alpha, s, x).unwrap();
                let b = heat_convolve(&cdf_as_fn, s, x).unwrap();
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn heat_convolve_monotone(x1 in -5.0f64..5.0, dx in 0.0f64..3.0, s in 0.01f64..3.0) {
            let x2 = x1 + dx;
            let fns = [exp_fn(0.2), step_0_2(), MonotoneFn::closed(-1.0, 1.0, |y: f64| y.tanh())];
            for f in &fns {
                prop_assert!(heat_convolve(f, s, x1).unwrap() <= heat_convolve(f, s, x2).unwrap() + 1e-10);
            }
        }

        #[test]
        fn quantile_roundtrip(u in 1e-9f64..(1.0 - 1e-9)) {
            let q = std_normal_quantile(u);
            prop_assert!((std_normal_cdf(q) - u).abs() < 1e-12);
        }
    }
}
