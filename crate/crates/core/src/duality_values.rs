//! Maximal covariances, primal and dual values, and the Benamou–Brenier
//! objective values.
//!
//! For the arithmetic problem `AP = sup E[int_0^1 Sigma_t dt]` over
//! martingales `dM = Sigma dB` with marginals `(nu0, nu1)`, the Bass solution
//! attains `AP = E[M_1 (W_1 - W_0)] = sum_j alpha_j E[F(a_j + Z) Z]`. For any
//! `alpha`, coupling `W_0 ~ alpha` comonotonically with `M_0` gives
//! `E int Sigma dt = E[M_1 W_1] - E[M_0 W_0] <= MC(nu1, alpha * gamma_1) -
//! MC(nu0, alpha)`, so this dual objective bounds `AP` from above and is
//! minimised (with equality) at the Bass measure. The geometric value equals
//! the arithmetic one on `nu_i = Id_‡ mu_i`, and the objectives are
//!
//! ```text
//! ambb(Sigma) = Sigma^2 + int x^2 dnu1 - int x^2 dnu0 - 2 Sigma AP
//! gmbb(sigma) = sigma^2 + 2 int log dmu0 - 2 int log dmu1 - 2 sigma GP
//! ```

use serde::{Deserialize, Serialize};

use crate::bass_solver::{BassComponentSolution, BassSolution};
use crate::error::{Error, Result};
use crate::gaussian::{GaussHermite, MonotoneFn, SmoothedMeasure};
use crate::geometric_bridge::GeometricSolution;
use crate::measures::{for_each_quantile_cell, GridMeasure};

/// `sup_pi int x y dpi`, attained by the comonotone coupling.
pub fn max_covariance(eta: &GridMeasure, rho: &GridMeasure) -> f64 {
    let mut total = 0.0;
    for_each_quantile_cell(eta, rho, |u0, u1, x, y| total += (u1 - u0) * (x * y));
    total
}

/// `MC(eta, alpha * gamma_s)` in closed form: with `q_k` the quantile of
/// `alpha * gamma_s` at the `k`-th cumulative weight of `eta`,
/// `MC = y_0 E[X] + sum_k (y_{k+1} - y_k) E[X 1{X > q_k}]`.
pub fn max_covariance_smoothed(eta: &GridMeasure, alpha: &GridMeasure, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothing variance {s} must be positive"
        )));
    }
    let smoothed = SmoothedMeasure::new(alpha, s)?;
    let mean = alpha.mean();
    let atoms = eta.atoms();
    let weights = eta.weights();
    let m = atoms.len();
    let mut upper = vec![0.0; m];
    for k in (0..m.saturating_sub(1)).rev() {
        upper[k] = upper[k + 1] + weights[k + 1];
    }
    let mut total = atoms[0] * mean;
    let mut hint = None;
    for k in 0..m - 1 {
        let lower = eta.cumulative()[k];
        let q = smoothed.quantile_split(lower, upper[k], hint);
        hint = Some(q);
        let tail = if lower <= upper[k] {
            mean - smoothed.lower_partial_mean(q)
        } else {
            smoothed.upper_partial_mean(q)
        };
        total += (atoms[k + 1] - atoms[k]) * tail;
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::DivergentQuadrature(total))
    }
}

/// `sum_j alpha_j E[F(a_j + Z) Z]` on one component. By Gaussian
/// integration by parts this is `E[F'(a + Z)]`, an exact jump sum for step
/// `F`; other generating functions use Gauss–Hermite.
pub fn component_primal_value(sol: &BassComponentSolution) -> f64 {
    let atoms = sol.alpha.atoms();
    let weights = sol.alpha.weights();
    match &sol.generating {
        MonotoneFn::Step(step) => atoms
            .iter()
            .zip(weights)
            .map(|(&a, &w)| w * step.smoothed_deriv(1.0, a))
            .sum(),
        f => {
            let rule = GaussHermite::default_rule();
            atoms
                .iter()
                .zip(weights)
                .map(|(&a, &w)| {
                    let e: f64 = rule
                        .nodes()
                        .iter()
                        .zip(rule.weights())
                        .map(|(&z, &g)| g * f.eval(a + z) * z)
                        .sum();
                    w * e
                })
                .sum()
        }
    }
}

/// Arithmetic primal value: component values weighted by their `nu0` mass;
/// the static part contributes nothing.
pub fn primal_value_ap(sol: &BassSolution) -> f64 {
    sol.decomposition
        .components
        .iter()
        .zip(&sol.component_solutions)
        .map(|(c, s)| c.mass * component_primal_value(s))
        .sum()
}

/// `MC(nu1, alpha * gamma_1) - MC(nu0, alpha)`, an upper bound on the
/// primal value for every `alpha`.
pub fn dual_objective(nu0: &GridMeasure, nu1: &GridMeasure, alpha: &GridMeasure) -> Result<f64> {
    Ok(max_covariance_smoothed(nu1, alpha, 1.0)? - max_covariance(nu0, alpha))
}

/// Mass-weighted sum of the component dual objectives at their Bass
/// measures.
pub fn dual_value(sol: &BassSolution) -> Result<f64> {
    sol.decomposition
        .components
        .iter()
        .zip(&sol.component_solutions)
        .map(|(c, s)| Ok(c.mass * dual_objective(&s.source, &s.target, &s.alpha)?))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    /// Geometric primal value, equal to `ap_primal`.
    pub gp_primal: f64,
    pub ap_primal: f64,
    pub dual_value: f64,
    /// `ap_primal - dual_value`.
    pub duality_gap: f64,
    pub gmbb_value: f64,
    pub ambb_value: f64,
    /// `2 int log dmu0 - 2 int log dmu1`.
    pub log_moment_diff: f64,
    /// `int x^2 dnu1 - int x^2 dnu0`.
    pub second_moment_diff: f64,
    /// Target lognormal volatility used in `gmbb_value`.
    pub sigma_bar: f64,
    /// Target arithmetic volatility used in `ambb_value`.
    pub big_sigma_bar: f64,
}

pub fn make_value_report(gsol: &GeometricSolution, sigma_bar: f64, big_sigma_bar: f64) -> Result<ValueReport> {
    if !(sigma_bar > 0.0) || !(big_sigma_bar > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target volatilities must be positive, got {sigma_bar} and {big_sigma_bar}"
        )));
    }
    let ap = primal_value_ap(&gsol.arithmetic);
    let dual = dual_value(&gsol.arithmetic)?;
    let log_moment_diff = 2.0 * gsol.mu0.log_moment()? - 2.0 * gsol.mu1.log_moment()?;
    let second_moment_diff = gsol.nu1()?.moment(2.0)? - gsol.nu0()?.moment(2.0)?;
    Ok(ValueReport {
        gp_primal: ap,
        ap_primal: ap,
        dual_value: dual,
        duality_gap: ap - dual,
        gmbb_value: sigma_bar * sigma_bar + log_moment_diff - 2.0 * sigma_bar * ap,
        ambb_value: big_sigma_bar * big_sigma_bar + second_moment_diff - 2.0 * big_sigma_bar * ap,
        log_moment_diff,
        second_moment_diff,
        sigma_bar,
        big_sigma_bar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bass_solver::{solve_decomposed, SolverParams};
    use crate::gaussian::{std_normal_cdf, std_normal_pdf, std_normal_sf};
    use crate::geometric_bridge::solve_geometric;
    use proptest::prelude::*;

    fn gm(atoms: &[f64], weights: &[f64]) -> GridMeasure {
        GridMeasure::new(atoms.to_vec(), weights.to_vec()).unwrap()
    }

    fn lognormal_score_grid(n: usize, sigma: f64) -> GridMeasure {
        let h = 18.0 / (n - 2) as f64;
        let edges: Vec<f64> = (0..=n)
            .map(|k| match k {
                0 => f64::NEG_INFINITY,
                k if k == n => f64::INFINITY,
                k => -9.0 + h * (k - 1) as f64,
            })
            .collect();
        let mass = |a: f64, b: f64| {
            if a >= 0.0 {
                std_normal_sf(a) - std_normal_sf(b)
            } else {
                std_normal_cdf(b) - std_normal_cdf(a)
            }
        };
        let (atoms, weights) = edges
            .windows(2)
            .map(|e| (mass(e[0] - sigma, e[1] - sigma) / mass(e[0], e[1]), mass(e[0], e[1])))
            .unzip();
        GridMeasure::new(atoms, weights).unwrap()
    }

    /// Largest `sum_i x_i y_{perm(i)} / n` over all permutations of `n`
    /// equally weighted copies.
    fn brute_force_mc(xs: &[f64], ys: &[f64]) -> f64 {
        fn permute(k: usize, ys: &mut Vec<f64>, xs: &[f64], best: &mut f64) {
            if k == ys.len() {
                let v: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| x * y).sum();
                *best = best.max(v / xs.len() as f64);
                return;
            }
            for i in k..ys.len() {
                ys.swap(k, i);
                permute(k + 1, ys, xs, best);
                ys.swap(k, i);
            }
        }
        let mut best = f64::NEG_INFINITY;
        permute(0, &mut ys.to_vec(), xs, &mut best);
        best
    }

    /// Expands integer multiplicities into equally weighted copies.
    fn copies(atoms: &[f64], counts: &[usize]) -> Vec<f64> {
        atoms
            .iter()
            .zip(counts)
            .flat_map(|(&a, &c)| std::iter::repeat(a).take(c))
            .collect()
    }

    #[test]
    fn max_covariance_examples() {
        let rho = gm(&[0.5, 3.0], &[0.3, 0.7]);
        assert!((max_covariance(&GridMeasure::dirac(2.0).unwrap(), &rho) - 2.0 * rho.mean()).abs() < 1e-15);
        let pm = gm(&[-1.0, 1.0], &[0.5, 0.5]);
        assert_eq!(max_covariance(&pm, &pm), 1.0);
        let u = GridMeasure::uniform(vec![1.0, 2.0, 3.0]).unwrap();
        assert!((max_covariance(&u, &u) - 14.0 / 3.0).abs() < 1e-14);
        assert!((brute_force_mc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]) - 14.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn max_covariance_matches_permutation_enumeration() {
        // Weights k/6 so that both measures split into six equal copies.
        let cases: [(&[f64], &[usize], &[f64], &[usize]); 3] = [
            (&[0.3, 1.2, 2.0], &[1, 3, 2], &[-1.0, 0.5, 0.7, 4.0], &[2, 1, 1, 2]),
            (&[-2.0, 5.0], &[5, 1], &[1.0, 1.5, 2.5], &[2, 2, 2]),
            (&[0.0, 0.1, 0.2, 0.3], &[1, 1, 2, 2], &[3.0, -3.0], &[3, 3]),
        ];
        for (xa, xc, ya, yc) in cases {
            let eta = gm(xa, &xc.iter().map(|&c| c as f64 / 6.0).collect::<Vec<_>>());
            let rho = gm(ya, &yc.iter().map(|&c| c as f64 / 6.0).collect::<Vec<_>>());
            let exact = brute_force_mc(&copies(xa, xc), &copies(ya, yc));
            assert!((max_covariance(&eta, &rho) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_max_covariance_examples() {
        let alpha = gm(&[-0.4, 1.0], &[0.5, 0.5]);
        let v = max_covariance_smoothed(&GridMeasure::dirac(3.0).unwrap(), &alpha, 0.7).unwrap();
        assert!((v - 3.0 * alpha.mean()).abs() < 1e-14);

        let two = gm(&[0.0, 2.0], &[0.5, 0.5]);
        let v = max_covariance_smoothed(&two, &GridMeasure::dirac(0.0).unwrap(), 1.0).unwrap();
        assert!((v - 2.0 * std_normal_pdf(0.0)).abs() < 1e-15);

        let ln = lognormal_score_grid(2001, 0.2);
        let v = max_covariance_smoothed(&ln, &GridMeasure::dirac(0.0).unwrap(), 1.0).unwrap();
        assert!((v - 0.2).abs() < 1e-5);
        assert!(max_covariance_smoothed(&two, &alpha, 0.0).is_err());
    }

    #[test]
    fn smoothed_max_covariance_matches_quadrature_in_u() {
        // Midpoint rule in u on Q_eta(u) Q_{alpha * gamma_s}(u).
        let eta = gm(&[0.1, 0.9, 1.6], &[0.2, 0.5, 0.3]);
        let alpha = gm(&[-0.5, 0.2, 0.4], &[0.3, 0.3, 0.4]);
        let s = 0.6;
        let sm = SmoothedMeasure::new(&alpha, s).unwrap();
        let n = 200_000;
        let mut oracle = 0.0;
        for k in 0..n {
            let u = (k as f64 + 0.5) / n as f64;
            oracle += eta.quantile(u).unwrap() * sm.quantile(u).unwrap() / n as f64;
        }
        let v = max_covariance_smoothed(&eta, &alpha, s).unwrap();
        assert!((v - oracle).abs() < 1e-5, "{v} vs {oracle}");
    }

    #[test]
    fn step_case_values() {
        let sol = solve_decomposed(
            &GridMeasure::dirac(1.0).unwrap(),
            &gm(&[0.0, 2.0], &[0.5, 0.5]),
            &SolverParams::default(),
        )
        .unwrap();
        let primal = primal_value_ap(&sol);
        let dual = dual_value(&sol).unwrap();
        let exact = 2.0 * std_normal_pdf(0.0);
        assert!((primal - exact).abs() < 1e-10);
        assert!((dual - exact).abs() < 1e-10);
        assert!((primal - dual).abs() < 1e-10);
    }

    #[test]
    fn identical_marginals_have_zero_values() {
        let nu = gm(&[0.5, 1.5], &[0.5, 0.5]);
        let sol = solve_decomposed(&nu, &nu, &SolverParams::default()).unwrap();
        assert_eq!(primal_value_ap(&sol), 0.0);
        assert_eq!(dual_value(&sol).unwrap(), 0.0);
        let g = solve_geometric(&nu, &nu, &SolverParams::default()).unwrap();
        let r = make_value_report(&g, 0.3, 0.1).unwrap();
        assert_eq!(r.gp_primal, 0.0);
        assert!((r.gmbb_value - 0.09).abs() < 1e-15);
    }

    #[test]
    fn gbm_values() {
        let mu1 = lognormal_score_grid(4001, 0.2);
        let g = solve_geometric(&GridMeasure::dirac(1.0).unwrap(), &mu1, &SolverParams::default()).unwrap();
        let r = make_value_report(&g, 0.2, 0.2).unwrap();
        assert!((r.ap_primal - 0.2).abs() < 1e-6, "primal {}", r.ap_primal);
        assert!((r.dual_value - 0.2).abs() < 1e-6);
        assert!(r.duality_gap.abs() < 1e-8);
        assert!(r.gmbb_value.abs() < 1e-5);
        let r3 = make_value_report(&g, 0.3, 0.2).unwrap();
        assert!((r3.gmbb_value - 0.01).abs() < 1e-5);
        assert!(make_value_report(&g, 0.0, 0.2).is_err());
        assert_eq!(r.gp_primal, r.ap_primal);
        assert_eq!(r.ambb_value, 0.04 + r.second_moment_diff - 0.4 * r.ap_primal);
    }

    #[test]
    fn perturbing_alpha_raises_the_dual() {
        let nu0 = GridMeasure::dirac(1.0).unwrap();
        let nu1 = gm(&[0.0, 2.0], &[0.5, 0.5]);
        let sol = solve_decomposed(&nu0, &nu1, &SolverParams::default()).unwrap();
        let best = dual_value(&sol).unwrap();
        let alpha = &sol.component_solutions[0].alpha;
        // A single-atom alpha can only be translated, which leaves the
        // objective unchanged since nu0 and nu1 share their mean.
        let shifted = dual_objective(&nu0, &nu1, &alpha.shifted(0.1)).unwrap();
        assert!((shifted - best).abs() < 1e-12);
        let a = alpha.atoms()[0];
        let spread = gm(&[a - 0.1, a + 0.1], &[0.5, 0.5]);
        assert!(dual_objective(&nu0, &nu1, &spread).unwrap() > best + 1e-4);

        let nu0 = gm(&[0.8, 1.1, 1.3], &[0.3, 0.4, 0.3]);
        let nu1 = gm(&[0.2, 0.9, 1.4, 1.7], &[0.2, 0.3, 0.3, 0.2]);
        let sol = solve_decomposed(&nu0, &nu1, &SolverParams::default()).unwrap();
        let best = dual_value(&sol).unwrap();
        let alpha = &sol.component_solutions[0].alpha;
        let mut atoms = alpha.atoms().to_vec();
        atoms[1] += 0.1;
        let perturbed = GridMeasure::new(atoms, alpha.weights().to_vec()).unwrap();
        assert!(dual_objective(&nu0, &nu1, &perturbed).unwrap() > best + 1e-6);
        assert!((primal_value_ap(&sol) - best).abs() < 1e-8);
    }

    #[test]
    fn closed_form_generator_primal() {
        // F(y) = exp(0.2 y - 0.02): E[F(Z) Z] = 0.2.
        let sol = BassComponentSolution {
            alpha: GridMeasure::dirac(0.0).unwrap(),
            source: GridMeasure::dirac(1.0).unwrap(),
            target: GridMeasure::dirac(1.0).unwrap(),
            generating: MonotoneFn::closed(0.0, f64::MAX, |y| (0.2 * y - 0.02).exp()),
            residual_nu0: 0.0,
            residual_nu1: 0.0,
            iterations: 0,
        };
        assert!((component_primal_value(&sol) - 0.2).abs() < 1e-12);
    }

    fn small_measure() -> impl Strategy<Value = GridMeasure> {
        prop::collection::vec((-5.0f64..5.0, 0.05f64..1.0), 1..6)
            .prop_map(|v| GridMeasure::new(v.iter().map(|p| p.0).collect(), v.iter().map(|p| p.1).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn max_covariance_is_symmetric(eta in small_measure(), rho in small_measure()) {
            prop_assert_eq!(max_covariance(&eta, &rho), max_covariance(&rho, &eta));
        }

        #[test]
        fn max_covariance_obeys_cauchy_schwarz(eta in small_measure(), rho in small_measure()) {
            let bound = (eta.moment(2.0).unwrap() * rho.moment(2.0).unwrap()).sqrt();
            prop_assert!(max_covariance(&eta, &rho) <= bound + 1e-12);
        }

        #[test]
        fn max_covariance_is_half_the_squared_cost_complement(eta in small_measure(), rho in small_measure()) {
            // inf E|X - Y|^2 is attained comonotonically: int (Q_eta - Q_rho)^2 du.
            let mut cost = 0.0;
            for_each_quantile_cell(&eta, &rho, |u0, u1, x, y| cost += (u1 - u0) * (x - y) * (x - y));
            let lhs = 2.0 * max_covariance(&eta, &rho);
            let rhs = eta.moment(2.0).unwrap() + rho.moment(2.0).unwrap() - cost;
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
