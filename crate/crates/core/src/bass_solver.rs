//! Arithmetic Bass martingales by the martingale Sinkhorn fixed point.
//!
//! On an irreducible pair `(nu0, nu1)` the Bass martingale is `F(t, W_t)`
//! with `W_0 ~ alpha` and `F(t, .) = F * gamma_{1-t}`, where `(alpha, F)`
//! solve
//!
//! ```text
//! nu1 = F_#(gamma_1 * alpha)        (F is the monotone rearrangement)
//! nu0 = (gamma_1 * F)_# alpha       (alpha is the preimage of nu0)
//! ```
//!
//! The two equations are solved alternately, rearrangement first, so `nu1`
//! is matched to rounding at every step and convergence is judged on `nu0`.
//! For atomic `nu1` the generating function `F` is a finite step function
//! and every heat convolution is an exact jump sum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{
    heat_convolve_deriv_with, heat_convolve_with, GaussHermite, MonotoneFn, SmoothedMeasure,
    StepFn, MAX_GH_NODES,
};
use crate::measures::{
    check_convex_order, irreducible_components, wasserstein1, ComponentDecomposition,
    GridMeasure,
};

/// Absolute accuracy of the preimage solve in [`update_alpha`].
const PREIMAGE_TOLERANCE: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// Stop once `W1(alpha_{k+1}, alpha_k)` drops below this.
    pub step_tolerance: f64,
    /// Required bound on both marginal residuals (W1) at convergence.
    pub fit_tolerance: f64,
    pub max_iterations: usize,
    /// Gauss–Hermite nodes for non-step generating functions.
    pub gh_nodes: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            step_tolerance: 1e-10,
            fit_tolerance: 1e-6,
            max_iterations: 10_000,
            gh_nodes: 64,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_tolerance > 0.0) || !(self.fit_tolerance > 0.0) {
            return Err(Error::InvalidArgument(
                "solver tolerances must be positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if !(1..=MAX_GH_NODES).contains(&self.gh_nodes) {
            return Err(Error::InvalidArgument(format!(
                "gh_nodes must lie in 1..={MAX_GH_NODES}"
            )));
        }
        Ok(())
    }
}

/// `(alpha, F)` on one irreducible component.
#[derive(Debug, Clone)]
pub struct BassComponentSolution {
    /// Bass measure: law of the driving Brownian motion at time 0.
    pub alpha: GridMeasure,
    /// Initial marginal of the component.
    pub source: GridMeasure,
    /// Terminal marginal of the component.
    pub target: GridMeasure,
    /// Generating function `F = Q_target o CDF(alpha * gamma_1)`.
    pub generating: MonotoneFn,
    /// `W1((gamma_1 * F)_# alpha, source)`.
    pub residual_nu0: f64,
    /// `W1(F_#(gamma_1 * alpha), target)`.
    pub residual_nu1: f64,
    pub iterations: usize,
}

impl BassComponentSolution {
    /// Rebuilds a solution from a stored Bass measure, recomputing `F` and
    /// both residuals.
    pub fn from_parts(
        source: GridMeasure,
        target: GridMeasure,
        alpha: GridMeasure,
        iterations: usize,
    ) -> Result<Self> {
        let generating = monotone_rearrangement(&target, &alpha)?;
        let (residual_nu0, residual_nu1) = residuals(&source, &target, &alpha, &generating)?;
        Ok(Self {
            alpha,
            source,
            target,
            generating,
            residual_nu0,
            residual_nu1,
            iterations,
        })
    }

    /// `F(t, x) = (F * gamma_{1-t})(x)`.
    pub fn eval(&self, t: f64, x: f64) -> Result<f64> {
        eval_f(self, t, x)
    }

    /// `d/dx F(t, x)`, undefined at `t = 1` for step `F`.
    pub fn eval_deriv(&self, t: f64, x: f64) -> Result<f64> {
        eval_f_deriv(self, t, x)
    }

    /// Open interval containing the image of `F(t, .)` for `t < 1`.
    pub fn image_bounds(&self) -> (f64, f64) {
        self.generating.image_bounds()
    }

    /// The law `F_#(gamma_1 * alpha)`, recomputed from the jump locations.
    pub fn terminal_law(&self) -> Result<GridMeasure> {
        pushforward_terminal(&self.generating, &self.alpha)
    }

    /// Solves `F(t, x) = y` for `x`; `t < 1` and `y` inside the open image.
    pub fn invert(&self, t: f64, y: f64, hint: Option<f64>) -> Result<f64> {
        check_time(t)?;
        if t >= 1.0 {
            return Err(Error::InvalidArgument(
                "F(1, .) is not invertible for a step generating function".into(),
            ));
        }
        let s = 1.0 - t;
        let rule = GaussHermite::default_rule();
        let f = &self.generating;
        invert_increasing(
            |x| {
                Ok(match f {
                    MonotoneFn::Step(step) => step.smoothed_with_deriv(s, x),
                    other => (
                        heat_convolve_with(other, s, x, rule)?,
                        heat_convolve_deriv_with(other, s, x, rule)?,
                    ),
                })
            },
            y,
            f.image_bounds(),
            hint.unwrap_or(0.0),
            1e-12,
        )
    }
}

/// Arithmetic Bass solution on a possibly reducible pair: one Bass
/// martingale per irreducible component plus the static part.
#[derive(Debug, Clone)]
pub struct BassSolution {
    pub decomposition: ComponentDecomposition,
    pub component_solutions: Vec<BassComponentSolution>,
    pub identity_restriction: Option<GridMeasure>,
    /// Mass-weighted sum of the component `nu0` residuals.
    pub residual_nu0: f64,
    /// Mass-weighted sum of the component `nu1` residuals.
    pub residual_nu1: f64,
}

impl BassSolution {
    /// Component masses in decomposition order.
    pub fn component_masses(&self) -> Vec<f64> {
        self.decomposition.components.iter().map(|c| c.mass).collect()
    }

    /// Law of `M_1`: the mass-weighted mixture of the component terminal
    /// laws and the static part.
    pub fn terminal_law(&self) -> Result<GridMeasure> {
        let laws = self
            .component_solutions
            .iter()
            .map(|c| c.terminal_law())
            .collect::<Result<Vec<_>>>()?;
        let mut parts: Vec<(f64, &GridMeasure)> = self
            .decomposition
            .components
            .iter()
            .zip(&laws)
            .map(|(c, law)| (c.mass, law))
            .collect();
        if let Some(id) = &self.identity_restriction {
            parts.push((self.decomposition.identity_set_mass, id));
        }
        GridMeasure::mixture(&parts)
    }

    /// Law of `M_0`, assembled the same way from the component sources.
    pub fn initial_law(&self) -> Result<GridMeasure> {
        let mut parts: Vec<(f64, &GridMeasure)> = self
            .decomposition
            .components
            .iter()
            .zip(&self.component_solutions)
            .map(|(c, sol)| (c.mass, &sol.source))
            .collect();
        if let Some(id) = &self.identity_restriction {
            parts.push((self.decomposition.identity_set_mass, id));
        }
        GridMeasure::mixture(&parts)
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")))
    }
}

/// The nondecreasing map pushing `gamma_1 * alpha` onto `nu1`:
/// `F(x) = Q_nu1(CDF_{alpha * gamma_1}(x))`.
pub fn monotone_rearrangement(nu1: &GridMeasure, alpha: &GridMeasure) -> Result<MonotoneFn> {
    let smoothed = SmoothedMeasure::new(alpha, 1.0)?;
    Ok(MonotoneFn::Step(rearrangement_step(nu1, &smoothed, None)?))
}

/// Jump `k` sits where the smoothed CDF crosses the cumulative weight of the
/// first `k + 1` atoms of `nu1`; the upper tail mass is accumulated from the
/// right so that jumps far in the right tail keep full precision.
fn rearrangement_step(
    nu1: &GridMeasure,
    smoothed: &SmoothedMeasure,
    hints: Option<&[f64]>,
) -> Result<StepFn> {
    let m = nu1.len();
    let weights = nu1.weights();
    let mut upper = vec![0.0; m];
    for k in (0..m - 1).rev() {
        upper[k] = upper[k + 1] + weights[k + 1];
    }
    let cumulative = nu1.cumulative();
    let mut jumps = Vec::with_capacity(m.saturating_sub(1));
    for k in 0..m.saturating_sub(1) {
        let hint = hints.and_then(|h| h.get(k).copied());
        let mut x = smoothed.quantile_split(cumulative[k], upper[k], hint);
        if let Some(&prev) = jumps.last() {
            x = f64::max(x, prev);
        }
        jumps.push(x);
    }
    StepFn::new(nu1.atoms().to_vec(), jumps)
}

/// Safeguarded Newton solve of `g(x) = target` for increasing `g` whose open
/// image is `bounds`; `g` returns value and derivative.
fn invert_increasing(
    mut g: impl FnMut(f64) -> Result<(f64, f64)>,
    target: f64,
    bounds: (f64, f64),
    start: f64,
    tolerance: f64,
) -> Result<f64> {
    let (lo_img, hi_img) = bounds;
    if !(target > lo_img && target < hi_img) {
        return Err(Error::OutsideImage {
            target,
            lo: lo_img,
            hi: hi_img,
        });
    }
    // Bracket by doubling steps away from the start point.
    let (mut a, mut b);
    let (g0, _) = g(start)?;
    if g0 == target {
        return Ok(start);
    }
    let mut width = 1.0;
    if g0 < target {
        a = start;
        b = start + width;
        loop {
            let (gb, _) = g(b)?;
            if gb >= target {
                break;
            }
            a = b;
            width *= 2.0;
            b += width;
            if width > 1e12 {
                return Err(Error::OutsideImage {
                    target,
                    lo: lo_img,
                    hi: hi_img,
                });
            }
        }
    } else {
        b = start;
        a = start - width;
        loop {
            let (ga, _) = g(a)?;
            if ga <= target {
                break;
            }
            b = a;
            width *= 2.0;
            a -= width;
            if width > 1e12 {
                return Err(Error::OutsideImage {
                    target,
                    lo: lo_img,
                    hi: hi_img,
                });
            }
        }
    }

    let mut x = 0.5 * (a + b);
    let mut best = (f64::INFINITY, x);
    for _ in 0..300 {
        let (gx, dg) = g(x)?;
        let err = gx - target;
        if err.abs() < best.0 {
            best = (err.abs(), x);
        }
        if err == 0.0 {
            return Ok(x);
        }
        if err < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let mut next = x - err / dg;
        if !(next > a && next < b) || !next.is_finite() {
            next = 0.5 * (a + b);
        }
        let scale = 1.0 + x.abs();
        if (next - x).abs() <= 1e-15 * scale || (b - a) <= 1e-15 * scale {
            break;
        }
        x = next;
    }
    if best.0 <= tolerance || (b - a) <= 1e-14 * (1.0 + best.1.abs()) {
        Ok(best.1)
    } else {
        Err(Error::OutsideImage {
            target,
            lo: lo_img,
            hi: hi_img,
        })
    }
}

/// New Bass measure: atoms `G^{-1}(x_i)` for the atoms `x_i` of `nu0`,
/// where `G = F * gamma_1`; weights copied from `nu0`.
pub fn update_alpha(nu0: &GridMeasure, f: &MonotoneFn) -> Result<GridMeasure> {
    update_alpha_with(nu0, f, None, GaussHermite::default_rule())
}

fn update_alpha_with(
    nu0: &GridMeasure,
    f: &MonotoneFn,
    hints: Option<&[f64]>,
    rule: &GaussHermite,
) -> Result<GridMeasure> {
    let bounds = f.image_bounds();
    let mut atoms = Vec::with_capacity(nu0.len());
    let mut previous: Option<f64> = None;
    for (i, &x) in nu0.atoms().iter().enumerate() {
        let start = hints
            .and_then(|h| h.get(i).copied())
            .or(previous)
            .unwrap_or(0.0);
        let a = invert_increasing(
            |a| {
                Ok(match f {
                    MonotoneFn::Step(step) => step.smoothed_with_deriv(1.0, a),
                    other => (
                        heat_convolve_with(other, 1.0, a, rule)?,
                        heat_convolve_deriv_with(other, 1.0, a, rule)?,
                    ),
                })
            },
            x,
            bounds,
            start,
            PREIMAGE_TOLERANCE,
        )?;
        let a = match previous {
            Some(p) if a < p => p,
            _ => a,
        };
        atoms.push(a);
        previous = Some(a);
    }
    GridMeasure::new(atoms, nu0.weights().to_vec())
}

/// `F_#(gamma_1 * alpha)` for step `F`: level `k` receives the smoothed mass
/// between consecutive jumps.
fn pushforward_terminal(f: &MonotoneFn, alpha: &GridMeasure) -> Result<GridMeasure> {
    let step = f.as_step().ok_or_else(|| {
        Error::InvalidArgument("terminal law needs a step generating function".into())
    })?;
    let smoothed = SmoothedMeasure::new(alpha, 1.0)?;
    let jumps = step.jumps();
    let m = step.levels().len();
    let mut weights = Vec::with_capacity(m);
    let mut prev = 0.0;
    for k in 0..m {
        let next = if k + 1 < m { smoothed.cdf(jumps[k]) } else { 1.0 };
        weights.push((next - prev).max(0.0));
        prev = next;
    }
    GridMeasure::new(step.levels().to_vec(), weights)
}

/// `(W1((gamma_1 * F)_# alpha, nu0), W1(F_#(gamma_1 * alpha), nu1))`.
fn residuals(
    nu0: &GridMeasure,
    nu1: &GridMeasure,
    alpha: &GridMeasure,
    f: &MonotoneFn,
) -> Result<(f64, f64)> {
    let rule = GaussHermite::default_rule();
    let initial_atoms = alpha
        .atoms()
        .iter()
        .map(|&a| heat_convolve_with(f, 1.0, a, rule))
        .collect::<Result<Vec<_>>>()?;
    let initial = GridMeasure::new(initial_atoms, alpha.weights().to_vec())?;
    let terminal = pushforward_terminal(f, alpha)?;
    Ok((wasserstein1(&initial, nu0), wasserstein1(&terminal, nu1)))
}

/// Solves the fixed-point system on one irreducible component.
pub fn solve_component(
    nu0: &GridMeasure,
    nu1: &GridMeasure,
    params: &SolverParams,
) -> Result<BassComponentSolution> {
    params.validate()?;
    let decomposition = irreducible_components(nu0, nu1)?;
    if decomposition.components.len() != 1 || decomposition.identity_set_mass > 0.0 {
        return Err(Error::Precondition(format!(
            "pair is not irreducible: {} components, static mass {:.3e}",
            decomposition.components.len(),
            decomposition.identity_set_mass
        )));
    }
    iterate(nu0, nu1, params)
}

fn iterate(
    nu0: &GridMeasure,
    nu1: &GridMeasure,
    params: &SolverParams,
) -> Result<BassComponentSolution> {
    let rule = GaussHermite::new(params.gh_nodes);
    let mut alpha = nu0.shifted(-nu0.mean());
    let mut jumps: Option<Vec<f64>> = None;
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;
    while iterations < params.max_iterations {
        let smoothed = SmoothedMeasure::new(&alpha, 1.0)?;
        let step = rearrangement_step(nu1, &smoothed, jumps.as_deref())?;
        let f = MonotoneFn::Step(step);
        let next = update_alpha_with(nu0, &f, Some(alpha.atoms()), &rule)?;
        iterations += 1;
        last_step = wasserstein1(&next, &alpha);
        jumps = f.as_step().map(|s| s.jumps().to_vec());
        alpha = next;
        if last_step < params.step_tolerance {
            break;
        }
    }

    let solution = BassComponentSolution::from_parts(nu0.clone(), nu1.clone(), alpha, iterations)?;
    if last_step >= params.step_tolerance
        || solution.residual_nu0 > params.fit_tolerance
        || solution.residual_nu1 > params.fit_tolerance
    {
        return Err(Error::NotConverged {
            iterations,
            residual_nu0: solution.residual_nu0,
            residual_nu1: solution.residual_nu1,
            last_step,
        });
    }
    Ok(solution)
}

/// Decomposes `(nu0, nu1)` into irreducible components and solves each.
/// Components are independent and solved in parallel; results keep the
/// decomposition order.
pub fn solve_decomposed(
    nu0: &GridMeasure,
    nu1: &GridMeasure,
    params: &SolverParams,
) -> Result<BassSolution> {
    params.validate()?;
    let order = check_convex_order(nu0, nu1);
    if !order.equal_means {
        return Err(Error::UnequalMeans(nu0.mean(), nu1.mean()));
    }
    let decomposition = irreducible_components(nu0, nu1)?;
    let component_solutions = decomposition
        .components
        .par_iter()
        .map(|c| iterate(&c.nu0, &c.nu1, params))
        .collect::<Result<Vec<_>>>()?;
    let residual_nu0 = decomposition
        .components
        .iter()
        .zip(&component_solutions)
        .map(|(c, s)| c.mass * s.residual_nu0)
        .sum();
    let residual_nu1 = decomposition
        .components
        .iter()
        .zip(&component_solutions)
        .map(|(c, s)| c.mass * s.residual_nu1)
        .sum();
    Ok(BassSolution {
        identity_restriction: decomposition.identity_restriction.clone(),
        decomposition,
        component_solutions,
        residual_nu0,
        residual_nu1,
    })
}

/// `F(t, x) = (F * gamma_{1-t})(x)` for `t` in [0, 1].
pub fn eval_f(sol: &BassComponentSolution, t: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    heat_convolve_with(&sol.generating, 1.0 - t, x, GaussHermite::default_rule())
}

/// `d/dx F(t, x)`; errors at `t = 1`, where a step `F` has no derivative.
pub fn eval_f_deriv(sol: &BassComponentSolution, t: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    if t >= 1.0 {
        return Err(Error::InvalidArgument(
            "spatial derivative of F(1, .) is undefined for a step generating function".into(),
        ));
    }
    heat_convolve_deriv_with(&sol.generating, 1.0 - t, x, GaussHermite::default_rule())
}
