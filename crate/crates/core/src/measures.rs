//! Finite atomic probability measures on the real line.
//!
//! Everything downstream (potentials, convex order, irreducible components,
//! the reflected-measure transform, Wasserstein distances) is computed exactly
//! on the atoms: potentials are piecewise linear with kinks only at atoms and
//! quantile functions are step functions, so no quadrature is involved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on potential differences when splitting into components.
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-9;
/// Absolute tolerance when comparing means.
pub const MEAN_TOLERANCE: f64 = 1e-9;
/// Absolute tolerance on `U_eta - U_rho` for the convex-order verdict.
pub const ORDER_TOLERANCE: f64 = 1e-9;

#[derive(Serialize, Deserialize)]
struct RawMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

/// Discrete probability measure: strictly increasing atoms with nonnegative
/// weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure", into = "RawMeasure")]
pub struct GridMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl TryFrom<RawMeasure> for GridMeasure {
    type Error = Error;

    fn try_from(raw: RawMeasure) -> Result<Self> {
        GridMeasure::new(raw.atoms, raw.weights)
    }
}

impl From<GridMeasure> for RawMeasure {
    fn from(m: GridMeasure) -> Self {
        RawMeasure {
            atoms: m.atoms,
            weights: m.weights,
        }
    }
}

impl GridMeasure {
    /// Builds a measure from unsorted atoms and unnormalized weights.
    ///
    /// Atoms are sorted, duplicates merged by summing their weights, and the
    /// weights renormalized to total mass one. Zero-weight atoms are dropped.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::LengthMismatch {
                atoms: atoms.len(),
                weights: weights.len(),
            });
        }
        if atoms.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        for (index, (&a, &w)) in atoms.iter().zip(&weights).enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite { what: "atom", index });
            }
            if !w.is_finite() {
                return Err(Error::NonFinite {
                    what: "weight",
                    index,
                });
            }
            if w < 0.0 {
                return Err(Error::NegativeWeight { index, value: w });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroMass);
        }

        let mut pairs: Vec<(f64, f64)> = atoms
            .into_iter()
            .zip(weights)
            .filter(|&(_, w)| w > 0.0)
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut merged_atoms = Vec::with_capacity(pairs.len());
        let mut merged_weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (a, w) in pairs {
            match merged_atoms.last() {
                Some(&last) if last == a => *merged_weights.last_mut().unwrap() += w,
                _ => {
                    merged_atoms.push(a);
                    merged_weights.push(w);
                }
            }
        }
        for w in &mut merged_weights {
            *w /= total;
        }
        Ok(Self::from_sorted_unchecked(merged_atoms, merged_weights))
    }

    /// Internal constructor for already sorted, merged, normalized data.
    pub(crate) fn from_sorted_unchecked(atoms: Vec<f64>, weights: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in &weights {
            acc += w;
            cumulative.push(acc);
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Self {
            atoms,
            weights,
            cumulative,
        }
    }

    pub fn dirac(x: f64) -> Result<Self> {
        Self::new(vec![x], vec![1.0])
    }

    /// Equal weights on the given atoms.
    pub fn uniform(atoms: Vec<f64>) -> Result<Self> {
        let n = atoms.len();
        Self::new(atoms, vec![1.0; n])
    }

    /// Mixture `sum_i p_i * m_i` of measures; the `p_i` are renormalized.
    pub fn mixture(parts: &[(f64, &GridMeasure)]) -> Result<Self> {
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for &(p, m) in parts {
            for (&a, &w) in m.atoms.iter().zip(&m.weights) {
                atoms.push(a);
                weights.push(p * w);
            }
        }
        Self::new(atoms, weights)
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Running sums of the weights; the last entry is exactly one.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn min_atom(&self) -> f64 {
        self.atoms[0]
    }

    pub fn max_atom(&self) -> f64 {
        self.atoms[self.atoms.len() - 1]
    }

    /// True iff every atom is strictly positive.
    pub fn positive_support(&self) -> bool {
        self.min_atom() > 0.0
    }

    pub fn mean(&self) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| a * w)
            .sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * (a - m) * (a - m))
            .sum()
    }

    /// `sum_i w_i x_i^p`. Negative or fractional powers need positive support.
    pub fn moment(&self, p: f64) -> Result<f64> {
        if !p.is_finite() {
            return Err(Error::InvalidArgument(format!("moment order {p}")));
        }
        let integer = p.fract() == 0.0;
        if (!integer || p < 0.0) && !self.positive_support() {
            return Err(Error::NonPositiveSupport {
                atom: self.min_atom(),
            });
        }
        Ok(self
            .atoms
            .iter()
            .zip(&self.weights)
            .map(|(&a, &w)| {
                if integer && p.abs() <= i32::MAX as f64 {
                    w * a.powi(p as i32)
                } else {
                    w * a.powf(p)
                }
            })
            .sum())
    }

    /// `sum_i w_i log x_i`.
    pub fn log_moment(&self) -> Result<f64> {
        if !self.positive_support() {
            return Err(Error::NonPositiveSupport {
                atom: self.min_atom(),
            });
        }
        Ok(self
            .atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * a.ln())
            .sum())
    }

    /// Right-continuous distribution function.
    pub fn cdf(&self, x: f64) -> f64 {
        let idx = self.atoms.partition_point(|&a| a <= x);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    /// Left-continuous generalized inverse `inf { x : cdf(x) >= u }`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::InvalidArgument(format!(
                "quantile level {u} outside [0, 1]"
            )));
        }
        Ok(self.quantile_unchecked(u))
    }

    pub(crate) fn quantile_unchecked(&self, u: f64) -> f64 {
        let idx = self.cumulative.partition_point(|&c| c < u);
        self.atoms[idx.min(self.atoms.len() - 1)]
    }

    /// `U(z) = sum_i w_i |x_i - z|`.
    pub fn potential(&self, z: f64) -> f64 {
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| w * (a - z).abs())
            .sum()
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self::from_sorted_unchecked(
            self.atoms.iter().map(|a| a + c).collect(),
            self.weights.clone(),
        )
    }

    /// Push-forward under `x -> c x` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale factor {c}")));
        }
        Ok(Self::from_sorted_unchecked(
            self.atoms.iter().map(|a| a * c).collect(),
            self.weights.clone(),
        ))
    }

    /// Push-forward under `x -> x / mean`.
    pub fn normalized_to_unit_mean(&self) -> Result<Self> {
        let m = self.mean();
        if !(m > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cannot normalize a measure with mean {m}"
            )));
        }
        self.scaled(1.0 / m)
    }

    /// Sorted union of the atoms of both measures.
    pub fn merged_atoms(&self, other: &GridMeasure) -> Vec<f64> {
        let mut zs = Vec::with_capacity(self.len() + other.len());
        zs.extend_from_slice(&self.atoms);
        zs.extend_from_slice(&other.atoms);
        zs.sort_by(f64::total_cmp);
        zs.dedup();
        zs
    }
}

/// Outcome of a convex-order comparison `eta <=_cx rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub in_convex_order: bool,
    /// `max_z (U_eta(z) - U_rho(z))` over the merged atoms.
    pub max_violation: f64,
    pub equal_means: bool,
    pub mean: f64,
}

/// Compares potentials on the union of both atom sets, which is exact since
/// both potentials are piecewise linear with kinks only at atoms.
pub fn check_convex_order(eta: &GridMeasure, rho: &GridMeasure) -> OrderReport {
    let mean_eta = eta.mean();
    let mean_rho = rho.mean();
    let equal_means = (mean_eta - mean_rho).abs() <= MEAN_TOLERANCE;
    let max_violation = eta
        .merged_atoms(rho)
        .into_iter()
        .map(|z| eta.potential(z) - rho.potential(z))
        .fold(f64::NEG_INFINITY, f64::max);
    OrderReport {
        in_convex_order: equal_means && max_violation <= ORDER_TOLERANCE,
        max_violation,
        equal_means,
        mean: mean_eta,
    }
}

/// One maximal open interval on which `U_nu0 < U_nu1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub interval: (f64, f64),
    /// `nu0` restricted to the open interval, renormalized.
    pub nu0: GridMeasure,
    /// `nu1` restricted to the closed interval (endpoint atoms possibly
    /// split with the neighbour), renormalized.
    pub nu1: GridMeasure,
    /// `nu0` mass of the interval.
    pub mass: f64,
}

/// Split of a convex-ordered pair into irreducible components plus the
/// static part where the potentials agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDecomposition {
    pub identity_set_mass: f64,
    pub identity_restriction: Option<GridMeasure>,
    pub components: Vec<Component>,
}

/// Flags the merged atoms where `U_nu1 - U_nu0` is positive.
///
/// With equal means the gap is `2 (L_1 - L_0)` and also `2 (R_1 - R_0)`,
/// where `L(z) = E[(z - X)^+]` and `R(z) = E[(X - z)^+]`. Both are
/// accumulated from sums of nonnegative terms and the side with the smaller
/// magnitude is used, so far-tail gaps keep full relative precision. The
/// tolerance is relative to that magnitude, capped at the absolute
/// [`DECOMPOSITION_TOLERANCE`].
fn positive_gap(nu0: &GridMeasure, nu1: &GridMeasure) -> (Vec<f64>, Vec<bool>) {
    let zs = nu0.merged_atoms(nu1);
    let n = zs.len();
    let one_sided = |mu: &GridMeasure| {
        let mut left = vec![0.0; n];
        let mut right = vec![0.0; n];
        let (mut i, mut below) = (0, 0.0);
        for k in 0..n {
            if k > 0 {
                left[k] = left[k - 1] + below * (zs[k] - zs[k - 1]);
            }
            while i < mu.len() && mu.atoms[i] <= zs[k] {
                below += mu.weights[i];
                i += 1;
            }
        }
        let (mut i, mut above) = (mu.len(), 0.0);
        for k in (0..n).rev() {
            if k + 1 < n {
                right[k] = right[k + 1] + above * (zs[k + 1] - zs[k]);
            }
            while i > 0 && mu.atoms[i - 1] >= zs[k] {
                i -= 1;
                above += mu.weights[i];
            }
        }
        (left, right)
    };
    let (l0, r0) = one_sided(nu0);
    let (l1, r1) = one_sided(nu1);
    let positive = (0..n)
        .map(|k| {
            let (gap, scale) = if l0[k] + l1[k] <= r0[k] + r1[k] {
                (l1[k] - l0[k], l0[k] + l1[k])
            } else {
                (r1[k] - r0[k], r0[k] + r1[k])
            };
            2.0 * gap > DECOMPOSITION_TOLERANCE * scale.min(1.0)
        })
        .collect();
    (zs, positive)
}

/// Decomposes `(nu0, nu1)` into maximal intervals where `U_nu1 - U_nu0`
/// is positive (see [`positive_gap`] for the tolerance).
///
/// Component endpoints are atoms of `nu1`. An endpoint atom shared by two
/// neighbouring components (or by a component and the static part) has its
/// mass split so that each component keeps the mass and mean of its `nu0`
/// part.
pub fn irreducible_components(
    nu0: &GridMeasure,
    nu1: &GridMeasure,
) -> Result<ComponentDecomposition> {
    let report = check_convex_order(nu0, nu1);
    if !report.equal_means {
        return Err(Error::UnequalMeans(nu0.mean(), nu1.mean()));
    }
    if !report.in_convex_order {
        return Err(Error::ConvexOrderViolated {
            max_violation: report.max_violation,
        });
    }

    let (zs, positive) = positive_gap(nu0, nu1);

    // Runs of strictly positive gap; the potentials agree at the extreme
    // atoms so every run is bracketed by grid points where the gap vanishes.
    let mut intervals = Vec::new();
    let mut k = 0;
    while k < zs.len() {
        if positive[k] {
            let start = k;
            while k < zs.len() && positive[k] {
                k += 1;
            }
            if start == 0 || k == zs.len() {
                return Err(Error::Consistency(
                    "potential gap positive at the edge of the support".into(),
                ));
            }
            intervals.push((zs[start - 1], zs[k]));
        } else {
            k += 1;
        }
    }

    // nu1 mass still unassigned at each of its atoms.
    let mut nu1_left: Vec<f64> = nu1.weights().to_vec();
    let mut components = Vec::with_capacity(intervals.len());
    let mut nu0_in_components = vec![false; nu0.len()];

    for &(lo, hi) in &intervals {
        let (mut m0, mut p0) = (0.0, 0.0);
        let mut sub0 = (Vec::new(), Vec::new());
        for (i, (&a, &w)) in nu0.atoms().iter().zip(nu0.weights()).enumerate() {
            if a > lo && a < hi {
                m0 += w;
                p0 += w * a;
                sub0.0.push(a);
                sub0.1.push(w);
                nu0_in_components[i] = true;
            }
        }
        let (mut m1, mut p1) = (0.0, 0.0);
        let mut sub1 = (Vec::new(), Vec::new());
        let mut lo_idx = None;
        let mut hi_idx = None;
        for (j, (&a, &w)) in nu1.atoms().iter().zip(nu1.weights()).enumerate() {
            if a > lo && a < hi {
                m1 += w;
                p1 += w * a;
                sub1.0.push(a);
                sub1.1.push(w);
                nu1_left[j] = 0.0;
            } else if a == lo {
                lo_idx = Some(j);
            } else if a == hi {
                hi_idx = Some(j);
            }
        }
        let (lo_idx, hi_idx) = match (lo_idx, hi_idx) {
            (Some(l), Some(h)) => (l, h),
            _ => {
                return Err(Error::Consistency(format!(
                    "component ({lo}, {hi}) endpoints are not atoms of nu1"
                )))
            }
        };
        // Endpoint shares from the mass and first-moment balance.
        let mass_gap = m0 - m1;
        let moment_gap = p0 - p1;
        let mut share_hi = (moment_gap - lo * mass_gap) / (hi - lo);
        let mut share_lo = mass_gap - share_hi;
        let slack = 1e-10;
        if share_lo < -slack || share_hi < -slack {
            return Err(Error::Consistency(format!(
                "negative endpoint share on component ({lo}, {hi})"
            )));
        }
        share_lo = share_lo.max(0.0);
        share_hi = share_hi.max(0.0);
        if share_lo > nu1_left[lo_idx] + slack || share_hi > nu1_left[hi_idx] + slack {
            return Err(Error::Consistency(format!(
                "endpoint mass of nu1 exhausted on component ({lo}, {hi})"
            )));
        }
        share_lo = share_lo.min(nu1_left[lo_idx]);
        share_hi = share_hi.min(nu1_left[hi_idx]);
        nu1_left[lo_idx] -= share_lo;
        nu1_left[hi_idx] -= share_hi;
        sub1.0.insert(0, lo);
        sub1.1.insert(0, share_lo);
        sub1.0.push(hi);
        sub1.1.push(share_hi);

        let restricted0 = GridMeasure::new(sub0.0, sub0.1)?;
        let restricted1 = GridMeasure::new(sub1.0, sub1.1)?;
        components.push(Component {
            interval: (lo, hi),
            nu0: restricted0,
            nu1: restricted1,
            mass: m0,
        });
    }

    let mut id_atoms = Vec::new();
    let mut id_weights = Vec::new();
    for (i, (&a, &w)) in nu0.atoms().iter().zip(nu0.weights()).enumerate() {
        if !nu0_in_components[i] {
            id_atoms.push(a);
            id_weights.push(w);
        }
    }
    let identity_set_mass: f64 = id_weights.iter().sum();

    // What is left of nu1 must sit exactly on the static part of nu0.
    let leftover: f64 = nu1_left.iter().sum();
    if (leftover - identity_set_mass).abs() > 1e-9 {
        return Err(Error::Consistency(format!(
            "static mass mismatch: nu0 {identity_set_mass:.3e} vs nu1 {leftover:.3e}"
        )));
    }
    for (&a, &w) in id_atoms.iter().zip(&id_weights) {
        let j = nu1.atoms().partition_point(|&b| b < a);
        let available = if j < nu1.len() && nu1.atoms()[j] == a {
            nu1_left[j]
        } else {
            0.0
        };
        if (available - w).abs() > 1e-9 {
            return Err(Error::Consistency(format!(
                "static atom {a} carries nu0 mass {w:.3e} but nu1 mass {available:.3e}"
            )));
        }
    }

    let identity_restriction = if id_atoms.is_empty() {
        None
    } else {
        Some(GridMeasure::new(id_atoms, id_weights)?)
    };
    Ok(ComponentDecomposition {
        identity_set_mass,
        identity_restriction,
        components,
    })
}

/// Reflected measure: reweight by `x / mean` and push forward by `x -> 1/x`
/// (or `x -> mean/x` when `normalize`, which first rescales to unit mean).
pub fn dagger_transform(mu: &GridMeasure, normalize: bool) -> Result<GridMeasure> {
    if !mu.positive_support() {
        return Err(Error::NonPositiveSupport {
            atom: mu.min_atom(),
        });
    }
    let m = mu.mean();
    let numerator = if normalize { m } else { 1.0 };
    let n = mu.len();
    let mut atoms = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (&a, &w) in mu.atoms().iter().zip(mu.weights()).rev() {
        atoms.push(numerator / a);
        weights.push(w * a / m);
    }
    GridMeasure::new(atoms, weights)
}

/// `W_1(eta, rho) = int |F_eta - F_rho| dx`, exact for atomic measures.
pub fn wasserstein1(eta: &GridMeasure, rho: &GridMeasure) -> f64 {
    let zs = eta.merged_atoms(rho);
    let (mut i, mut j) = (0, 0);
    let (mut fe, mut fr) = (0.0, 0.0);
    let mut total = 0.0;
    for k in 0..zs.len() {
        let z = zs[k];
        while i < eta.len() && eta.atoms[i] <= z {
            fe = eta.cumulative[i];
            i += 1;
        }
        while j < rho.len() && rho.atoms[j] <= z {
            fr = rho.cumulative[j];
            j += 1;
        }
        if k + 1 < zs.len() {
            total += (fe - fr).abs() * (zs[k + 1] - z);
        }
    }
    total
}

/// Calls `f(u_lo, u_hi, x_eta, x_rho)` on every cell of the common refinement
/// of the two quantile step functions.
pub(crate) fn for_each_quantile_cell(
    eta: &GridMeasure,
    rho: &GridMeasure,
    mut f: impl FnMut(f64, f64, f64, f64),
) {
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    while i < eta.len() && j < rho.len() {
        let ce = eta.cumulative[i];
        let cr = rho.cumulative[j];
        let next = ce.min(cr);
        if next > u {
            f(u, next, eta.atoms[i], rho.atoms[j]);
            u = next;
        }
        if ce <= next {
            i += 1;
        }
        if cr <= next {
            j += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gm(atoms: &[f64], weights: &[f64]) -> GridMeasure {
        GridMeasure::new(atoms.to_vec(), weights.to_vec()).unwrap()
    }

    #[test]
    fn construction_sorts_and_merges() {
        let d = gm(&[2.0], &[1.0]);
        assert_eq!(d.atoms(), &[2.0]);
        let m = gm(&[1.5, 0.5], &[0.5, 0.5]);
        assert_eq!(m.atoms(), &[0.5, 1.5]);
        assert_eq!(m.weights(), &[0.5, 0.5]);
        let merged = gm(&[1.0, 1.0], &[0.3, 0.7]);
        assert_eq!(merged.atoms(), &[1.0]);
        assert!((merged.weights()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn construction_errors_name_the_index() {
        assert_eq!(GridMeasure::new(vec![], vec![]), Err(Error::EmptyMeasure));
        assert_eq!(
            GridMeasure::new(vec![1.0, 2.0], vec![0.5, -0.1]),
            Err(Error::NegativeWeight {
                index: 1,
                value: -0.1
            })
        );
        assert_eq!(
            GridMeasure::new(vec![1.0, f64::NAN], vec![0.5, 0.5]),
            Err(Error::NonFinite {
                what: "atom",
                index: 1
            })
        );
        assert!(matches!(
            GridMeasure::new(vec![1.0], vec![0.5, 0.5]),
            Err(Error::LengthMismatch { .. })
        ));
        assert_eq!(GridMeasure::new(vec![1.0], vec![0.0]), Err(Error::ZeroMass));
    }

    #[test]
    fn moments() {
        let d2 = gm(&[2.0], &[1.0]);
        assert_eq!(d2.moment(-1.0).unwrap(), 0.5);
        let m = gm(&[0.5, 1.5], &[0.5, 0.5]);
        assert_eq!(m.moment(1.0).unwrap(), 1.0);
        let expected = 0.5 * (0.75f64).ln();
        assert!((m.log_moment().unwrap() - expected).abs() < 1e-15);
        assert!((expected + 0.1438).abs() < 1e-4);
        let signed = gm(&[-1.0, 1.0], &[0.5, 0.5]);
        assert!(signed.moment(0.5).is_err());
        assert!(signed.log_moment().is_err());
        assert_eq!(signed.moment(2.0).unwrap(), 1.0);
    }

    #[test]
    fn cdf_and_quantile_conventions() {
        let m = gm(&[0.0, 2.0], &[0.5, 0.5]);
        assert_eq!(m.cdf(1.0), 0.5);
        assert_eq!(m.cdf(-0.1), 0.0);
        assert_eq!(m.cdf(2.0), 1.0);
        assert_eq!(m.quantile(0.5).unwrap(), 0.0);
        assert_eq!(m.quantile(0.75).unwrap(), 2.0);
        assert_eq!(m.quantile(0.0).unwrap(), 0.0);
        assert_eq!(m.quantile(1.0).unwrap(), 2.0);
        assert!(m.quantile(1.5).is_err());
    }

    #[test]
    fn potential_examples() {
        assert_eq!(gm(&[0.0], &[1.0]).potential(2.0), 2.0);
        assert_eq!(gm(&[-1.0, 1.0], &[0.5, 0.5]).potential(0.0), 1.0);
        assert_eq!(gm(&[0.5, 1.5], &[0.5, 0.5]).potential(1.0), 0.5);
    }

    #[test]
    fn convex_order_examples() {
        let d1 = gm(&[1.0], &[1.0]);
        let spread = gm(&[0.5, 1.5], &[0.5, 0.5]);
        assert!(check_convex_order(&d1, &spread).in_convex_order);
        assert!(!check_convex_order(&spread, &d1).in_convex_order);
        let r = check_convex_order(&d1, &gm(&[2.0], &[1.0]));
        assert!(!r.in_convex_order);
        assert!(!r.equal_means);
    }

    #[test]
    fn components_of_a_single_dilation() {
        let d = irreducible_components(&gm(&[1.0], &[1.0]), &gm(&[0.5, 1.5], &[0.5, 0.5]))
            .unwrap();
        assert_eq!(d.components.len(), 1);
        assert_eq!(d.components[0].interval, (0.5, 1.5));
        assert_eq!(d.identity_set_mass, 0.0);
        assert!(d.identity_restriction.is_none());
    }

    #[test]
    fn components_split_where_potentials_touch() {
        let nu0 = gm(&[1.0, 3.0], &[0.5, 0.5]);
        let nu1 = gm(&[0.5, 1.5, 2.5, 3.5], &[0.25; 4]);
        assert_eq!(nu0.potential(2.0), 1.0);
        assert_eq!(nu1.potential(2.0), 1.0);
        let d = irreducible_components(&nu0, &nu1).unwrap();
        assert_eq!(d.components.len(), 2);
        // the gap vanishes on all of [1.5, 2.5]
        assert_eq!(nu1.potential(1.5), nu0.potential(1.5));
        assert_eq!(d.components[0].interval, (0.5, 1.5));
        assert_eq!(d.components[1].interval, (2.5, 3.5));
        for c in &d.components {
            assert!((c.mass - 0.5).abs() < 1e-15);
            assert!((c.nu0.mean() - c.nu1.mean()).abs() < 1e-12);
        }
        assert_eq!(d.components[0].nu1.atoms(), &[0.5, 1.5]);
    }

    #[test]
    fn shared_endpoint_atom_is_split() {
        // Components (0, 2) and (2, 4) share the nu1 atom at 2.
        let nu0 = gm(&[1.0, 3.0], &[0.5, 0.5]);
        let nu1 = gm(&[0.0, 2.0, 4.0], &[0.25, 0.5, 0.25]);
        let d = irreducible_components(&nu0, &nu1).unwrap();
        assert_eq!(d.components.len(), 2);
        assert_eq!(d.components[0].interval, (0.0, 2.0));
        assert_eq!(d.components[1].interval, (2.0, 4.0));
        for c in &d.components {
            assert_eq!(c.nu1.weights(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn static_mass_at_an_endpoint() {
        let nu0 = gm(&[0.0, 1.0], &[0.5, 0.5]);
        let nu1 = gm(&[0.0, 2.0], &[0.75, 0.25]);
        let d = irreducible_components(&nu0, &nu1).unwrap();
        assert_eq!(d.components.len(), 1);
        assert!((d.identity_set_mass - 0.5).abs() < 1e-15);
        assert_eq!(d.identity_restriction.unwrap().atoms(), &[0.0]);
        assert_eq!(d.components[0].nu1.atoms(), &[0.0, 2.0]);
    }

    #[test]
    fn equal_measures_have_no_components() {
        let m = gm(&[1.0, 2.0, 5.0], &[0.2, 0.3, 0.5]);
        let d = irreducible_components(&m, &m).unwrap();
        assert!(d.components.is_empty());
        assert!((d.identity_set_mass - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decomposition_rejects_order_violation() {
        let r = irreducible_components(&gm(&[0.5, 1.5], &[0.5, 0.5]), &gm(&[1.0], &[1.0]));
        assert!(matches!(r, Err(Error::ConvexOrderViolated { .. })));
    }

    #[test]
    fn dagger_examples() {
        let d = dagger_transform(&gm(&[2.0], &[1.0]), true).unwrap();
        assert_eq!(d.atoms(), &[1.0]);
        let m = gm(&[0.5, 1.5], &[0.5, 0.5]);
        let t = dagger_transform(&m, true).unwrap();
        assert!((t.atoms()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.atoms()[1] - 2.0).abs() < 1e-15);
        assert!((t.weights()[0] - 0.75).abs() < 1e-15);
        assert!((t.weights()[1] - 0.25).abs() < 1e-15);
        assert!((t.mean() - 1.0).abs() < 1e-15);
        assert!(dagger_transform(&gm(&[0.0, 1.0], &[0.5, 0.5]), true).is_err());
    }

    #[test]
    fn unnormalized_dagger_reflects_moments() {
        let m = gm(&[0.5, 2.0, 3.0], &[0.2, 0.5, 0.3]);
        let t = dagger_transform(&m, false).unwrap();
        // int x d(Id_dag mu) = 1 / mean(mu)
        assert!((t.mean() - 1.0 / m.mean()).abs() < 1e-14);
        let back = dagger_transform(&t, false).unwrap();
        assert!(wasserstein1(&back, &m) < 1e-12);
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein1(&gm(&[0.0], &[1.0]), &gm(&[1.0], &[1.0])), 1.0);
        let m = gm(&[0.3, 1.0], &[0.4, 0.6]);
        assert_eq!(wasserstein1(&m, &m), 0.0);
        assert_eq!(
            wasserstein1(&gm(&[0.0, 2.0], &[0.5, 0.5]), &gm(&[1.0], &[1.0])),
            1.0
        );
    }

    fn positive_measure() -> impl Strategy<Value = GridMeasure> {
        prop::collection::vec((0.05f64..5.0, 0.01f64..1.0), 1..12)
            .prop_map(|v| {
                let (a, w): (Vec<_>, Vec<_>) = v.into_iter().unzip();
                GridMeasure::new(a, w).unwrap()
            })
    }

    proptest! {
        #[test]
        fn dagger_is_an_involution(mu in positive_measure()) {
            let twice = dagger_transform(&dagger_transform(&mu, true).unwrap(), true).unwrap();
            let normalized = mu.normalized_to_unit_mean().unwrap();
            prop_assert!(wasserstein1(&twice, &normalized) < 1e-12);
        }

        #[test]
        fn reflected_potential_identity(mu in positive_measure()) {
            let mu = mu.normalized_to_unit_mean().unwrap();
            let nu = dagger_transform(&mu, true).unwrap();
            for &z in nu.atoms().iter().chain(mu.atoms()) {
                let lhs = nu.potential(z) / z;
                let rhs = mu.potential(1.0 / z);
                prop_assert!((lhs - rhs).abs() < 1e-10);
            }
        }

        #[test]
        fn potential_bounds(mu in positive_measure(), z in -2.0f64..8.0) {
            let u = mu.potential(z);
            prop_assert!(u >= (mu.mean() - z).abs() - 1e-12);
            if z <= mu.min_atom() || z >= mu.max_atom() {
                prop_assert!((u - (mu.mean() - z).abs()).abs() < 1e-12);
            }
            let h = 0.37;
            prop_assert!((mu.potential(z + h) - u).abs() <= h + 1e-12);
            let mid = mu.potential(z + h / 2.0);
            prop_assert!(mid <= 0.5 * (u + mu.potential(z + h)) + 1e-12);
        }

        #[test]
        fn quantile_cdf_galois(mu in positive_measure(), u in 0.0f64..=1.0) {
            for &a in mu.atoms() {
                prop_assert!(mu.quantile(mu.cdf(a)).unwrap() >= a);
            }
            prop_assert!(mu.cdf(mu.quantile(u).unwrap()) >= u - 1e-15);
        }

        #[test]
        fn wasserstein_matches_quantile_integral(a in positive_measure(), b in positive_measure()) {
            let mut q = 0.0;
            for_each_quantile_cell(&a, &b, |lo, hi, x, y| q += (hi - lo) * (x - y).abs());
            prop_assert!((q - wasserstein1(&a, &b)).abs() < 1e-12);
        }
    }
}
