//! Geometric Bass martingales through the reflection `Id_‡`.
//!
//! A geometric problem on `(mu0, mu1)` with common mean `m` is solved on the
//! arithmetic side `nu_i = Id_‡ mu_i`. If `M` is the arithmetic Bass
//! martingale for `(nu0, nu1)`, the geometric optimiser is `S = m / M` under
//! the measure with density `M_1` (and `M_0 = 1` in mean), so that
//!
//! ```text
//! law(S_t) = Id_‡ law(M_t)
//! dS_t = S_t (S_t / m) d_x F(t, F^{-1}(t, m / S_t)) dB_t
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bass_solver::{solve_decomposed, BassComponentSolution, BassSolution, SolverParams};
use crate::error::{Error, Result};
use crate::gaussian::{std_normal_pdf, std_normal_quantile};
use crate::measures::{
    check_convex_order, dagger_transform, irreducible_components, wasserstein1, GridMeasure,
};

/// Largest atom count returned by [`marginal_flow`].
pub const FLOW_GRID_MAX: usize = 4001;

/// Approximate number of quadrature nodes used for `alpha * gamma_t`
/// before compaction.
const FLOW_NODES: usize = 40_000;

const MAP_TOLERANCE: f64 = 1e-8;

/// One irreducible component in both coordinates: `mu_interval` is the
/// image of `nu_interval` under `x -> m / x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentMapEntry {
    pub nu_interval: (f64, f64),
    pub mu_interval: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct GeometricSolution {
    pub m: f64,
    pub mu0: GridMeasure,
    pub mu1: GridMeasure,
    /// Arithmetic solution for `nu_i = Id_‡ mu_i`.
    pub arithmetic: BassSolution,
    /// Entry `i` belongs to `arithmetic.component_solutions[i]`.
    pub component_map: Vec<ComponentMapEntry>,
}

impl GeometricSolution {
    pub fn nu0(&self) -> Result<GridMeasure> {
        self.arithmetic.initial_law()
    }

    pub fn nu1(&self) -> Result<GridMeasure> {
        self.arithmetic.terminal_law()
    }

    pub fn component(&self, index: usize) -> Result<&BassComponentSolution> {
        self.arithmetic
            .component_solutions
            .get(index)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "component {index} out of range ({} components)",
                    self.arithmetic.component_solutions.len()
                ))
            })
    }
}

/// `(Id_‡ mu0, Id_‡ mu1, m)`, after checking that both sides agree on the
/// convex order.
pub fn to_arithmetic(
    mu0: &GridMeasure,
    mu1: &GridMeasure,
) -> Result<(GridMeasure, GridMeasure, f64)> {
    for mu in [mu0, mu1] {
        if !mu.positive_support() {
            return Err(Error::NonPositiveSupport {
                atom: mu.min_atom(),
            });
        }
    }
    let mu_order = check_convex_order(mu0, mu1);
    if !mu_order.equal_means {
        return Err(Error::UnequalMeans(mu0.mean(), mu1.mean()));
    }
    if !mu_order.in_convex_order {
        return Err(Error::ConvexOrderViolated {
            max_violation: mu_order.max_violation,
        });
    }
    let nu0 = dagger_transform(mu0, true)?;
    let nu1 = dagger_transform(mu1, true)?;
    let nu_order = check_convex_order(&nu0, &nu1);
    if !nu_order.in_convex_order {
        return Err(Error::Consistency(format!(
            "convex order holds for mu but fails for nu (violation {:.3e})",
            nu_order.max_violation
        )));
    }
    Ok((nu0, nu1, mu0.mean()))
}

/// Solves the geometric problem and pairs every arithmetic component with
/// the component of an independent `mu`-side decomposition.
pub fn solve_geometric(
    mu0: &GridMeasure,
    mu1: &GridMeasure,
    params: &SolverParams,
) -> Result<GeometricSolution> {
    let (nu0, nu1, m) = to_arithmetic(mu0, mu1)?;
    let arithmetic = solve_decomposed(&nu0, &nu1, params)?;
    let mu_side = irreducible_components(mu0, mu1)?;
    let nu_components = &arithmetic.decomposition.components;
    if mu_side.components.len() != nu_components.len() {
        return Err(Error::Consistency(format!(
            "{} components on the nu side but {} on the mu side",
            nu_components.len(),
            mu_side.components.len()
        )));
    }
    // x -> m / x reverses the order of the intervals.
    let component_map = nu_components
        .iter()
        .zip(mu_side.components.iter().rev())
        .map(|(c, mc)| {
            let (lo, hi) = c.interval;
            let mapped = (m / hi, m / lo);
            let (a, b) = mc.interval;
            let close = |u: f64, v: f64| (u - v).abs() <= MAP_TOLERANCE * u.abs().max(1.0);
            if close(mapped.0, a) && close(mapped.1, b) {
                Ok(ComponentMapEntry {
                    nu_interval: c.interval,
                    mu_interval: mc.interval,
                })
            } else {
                Err(Error::Consistency(format!(
                    "component ({lo}, {hi}) maps to ({}, {}) but the mu side has ({a}, {b})",
                    mapped.0, mapped.1
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeometricSolution {
        m,
        mu0: mu0.clone(),
        mu1: mu1.clone(),
        arithmetic,
        component_map,
    })
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("time {t} outside [0, 1]")))
    }
}

/// Conditional means of N(0, 1) on `n` equal-probability bins.
fn gaussian_bin_means(n: usize) -> Vec<f64> {
    let edges: Vec<f64> = (0..=n)
        .map(|k| match k {
            0 => f64::NEG_INFINITY,
            k if k == n => f64::INFINITY,
            k => std_normal_quantile(k as f64 / n as f64),
        })
        .collect();
    edges
        .windows(2)
        .map(|e| (std_normal_pdf(e[0]) - std_normal_pdf(e[1])) * n as f64)
        .collect()
}

/// Merges consecutive atoms into at most `max_atoms` groups of roughly
/// equal mass; each group keeps its mass and mean.
fn compact(mu: GridMeasure, max_atoms: usize) -> Result<GridMeasure> {
    if mu.len() <= max_atoms {
        return Ok(mu);
    }
    let mut atoms = Vec::with_capacity(max_atoms);
    let mut weights = Vec::with_capacity(max_atoms);
    let (mut mass, mut moment) = (0.0, 0.0);
    let mut group = 0;
    for ((&a, &w), &c) in mu.atoms().iter().zip(mu.weights()).zip(mu.cumulative()) {
        mass += w;
        moment += w * a;
        let boundary = (group + 1) as f64 / max_atoms as f64;
        if c >= boundary || group + 1 == max_atoms && c >= 1.0 {
            atoms.push(moment / mass);
            weights.push(mass);
            mass = 0.0;
            moment = 0.0;
            group += 1;
        }
    }
    if mass > 0.0 {
        atoms.push(moment / mass);
        weights.push(mass);
    }
    GridMeasure::new(atoms, weights)
}

/// Law of `M_t = F(t, W_t)` on one component, `W_t ~ alpha * gamma_t`.
/// The endpoints return the component marginals themselves.
pub fn arithmetic_marginal(sol: &BassComponentSolution, t: f64) -> Result<GridMeasure> {
    check_time(t)?;
    if t == 0.0 {
        return Ok(sol.source.clone());
    }
    if t == 1.0 {
        return Ok(sol.target.clone());
    }
    let per_atom = (FLOW_NODES / sol.alpha.len()).max(32);
    let z = gaussian_bin_means(per_atom);
    let sd = t.sqrt();
    let (values, weights): (Vec<Vec<f64>>, Vec<Vec<f64>>) = sol
        .alpha
        .atoms()
        .par_iter()
        .zip(sol.alpha.weights())
        .map(|(&a, &w)| {
            let values = z
                .iter()
                .map(|&zk| sol.eval(t, a + sd * zk))
                .collect::<Result<Vec<_>>>()?;
            Ok((values, vec![w / per_atom as f64; per_atom]))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let law = GridMeasure::new(values.concat(), weights.concat())?;
    compact(law, FLOW_GRID_MAX)
}

/// Law of `S_t`: the arithmetic marginal of every component mixed with the
/// static part, reflected by `y -> m / y` with density proportional to `y`.
pub fn marginal_flow(gsol: &GeometricSolution, t: f64) -> Result<GridMeasure> {
    check_time(t)?;
    if t == 0.0 {
        return Ok(gsol.mu0.clone());
    }
    if t == 1.0 {
        return Ok(gsol.mu1.clone());
    }
    let arithmetic = &gsol.arithmetic;
    let laws = arithmetic
        .component_solutions
        .iter()
        .map(|c| arithmetic_marginal(c, t))
        .collect::<Result<Vec<_>>>()?;
    let mut parts: Vec<(f64, &GridMeasure)> = arithmetic
        .decomposition
        .components
        .iter()
        .zip(&laws)
        .map(|(c, law)| (c.mass, law))
        .collect();
    if let Some(id) = &arithmetic.identity_restriction {
        parts.push((arithmetic.decomposition.identity_set_mass, id));
    }
    let nu_t = compact(GridMeasure::mixture(&parts)?, FLOW_GRID_MAX)?;
    reflect(&nu_t, gsol.m)
}

/// `Id_‡` back to price space: atoms `m / y`, weights proportional to
/// `y * w`.
fn reflect(nu: &GridMeasure, m: f64) -> Result<GridMeasure> {
    if !nu.positive_support() {
        return Err(Error::NonPositiveSupport {
            atom: nu.min_atom(),
        });
    }
    let atoms = nu.atoms().iter().map(|&y| m / y).collect();
    let weights = nu
        .atoms()
        .iter()
        .zip(nu.weights())
        .map(|(&y, &w)| y * w)
        .collect();
    GridMeasure::new(atoms, weights)
}

/// Lognormal volatility of `S` at time `t` and price `s` on one component:
/// `(s / m) d_x F(t, x*)` with `F(t, x*) = m / s`.
pub fn sde_volatility(gsol: &GeometricSolution, component_index: usize, t: f64, s: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "volatility needs t in (0, 1), got {t}"
        )));
    }
    volatility_at(gsol.component(component_index)?, gsol.m, t, s, None).map(|(v, _)| v)
}

/// Volatility and the matched Brownian state `x*`; `t` in [0, 1).
pub(crate) fn volatility_at(
    sol: &BassComponentSolution,
    m: f64,
    t: f64,
    s: f64,
    hint: Option<f64>,
) -> Result<(f64, f64)> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("price {s} must be positive")));
    }
    let x = sol.invert(t, m / s, hint)?;
    let deriv = sol.eval_deriv(t, x)?;
    Ok(((s / m) * deriv, x))
}

/// Initial and terminal price laws of one component, renormalized.
pub fn component_marginals(gsol: &GeometricSolution, component_index: usize) -> Result<(GridMeasure, GridMeasure)> {
    let sol = gsol.component(component_index)?;
    Ok((reflect(&sol.source, gsol.m)?, reflect(&sol.target, gsol.m)?))
}

/// Checks the stored arithmetic marginals against `Id_‡ mu_i`.
pub fn reflection_residuals(gsol: &GeometricSolution) -> Result<(f64, f64)> {
    let nu0 = dagger_transform(&gsol.mu0, true)?;
    let nu1 = dagger_transform(&gsol.mu1, true)?;
    Ok((
        wasserstein1(&gsol.nu0()?, &nu0),
        wasserstein1(&gsol.nu1()?, &nu1),
    ))
}
