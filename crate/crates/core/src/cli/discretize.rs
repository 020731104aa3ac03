//! Atomic approximations of the marginal specifications.
//!
//! Parametric laws are cut into `grid` bins: two tail bins beyond the
//! truncation quantiles and `grid - 2` interior bins, equally likely (or,
//! for lognormals, optionally equally wide in the normal score). Every bin
//! becomes one atom at its conditional mean, so the mean is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{std_normal_cdf, std_normal_quantile, std_normal_sf};
use crate::measures::GridMeasure;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinScheme {
    /// Interior bins of equal probability.
    #[default]
    EqualProbability,
    /// Interior bins of equal width in `Phi^{-1}(F(x))`; lognormal only.
    NormalScore,
}

fn default_truncation() -> f64 {
    1e-6
}

/// One parametric family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Family {
    /// Law of `exp(meanlog + sqrt(varlog) Z)`.
    Lognormal { meanlog: f64, varlog: f64 },
    Uniform { a: f64, b: f64 },
    /// `low` with probability `1 - p_high`, `high` with `p_high`.
    TwoPoint { low: f64, high: f64, p_high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    #[serde(flatten)]
    pub family: Family,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MarginalSpec {
    Atoms {
        atoms: Vec<f64>,
        /// Uniform weights when omitted.
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    Lognormal {
        meanlog: f64,
        varlog: f64,
        grid: usize,
        #[serde(default = "default_truncation")]
        truncation: f64,
        #[serde(default)]
        scheme: BinScheme,
    },
    Uniform {
        a: f64,
        b: f64,
        grid: usize,
        #[serde(default = "default_truncation")]
        truncation: f64,
    },
    TwoPoint {
        low: f64,
        high: f64,
        p_high: f64,
    },
    Mixture {
        components: Vec<MixtureComponent>,
        grid: usize,
        #[serde(default = "default_truncation")]
        truncation: f64,
    },
    /// Samples from the first column of a CSV file (a non-numeric first
    /// row is taken as a header), grouped into `bins` equal-count bins.
    Samples { path: String, bins: usize },
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn check_grid(grid: usize, truncation: f64) -> Result<()> {
    if grid < 3 {
        return Err(invalid(format!("grid size {grid} must be at least 3")));
    }
    if !(truncation > 0.0 && truncation < 0.5) {
        return Err(invalid(format!(
            "truncation quantile {truncation} must lie in (0, 0.5)"
        )));
    }
    Ok(())
}

impl Family {
    fn validate(&self) -> Result<()> {
        match *self {
            Family::Lognormal { meanlog, varlog } => {
                if !meanlog.is_finite() || !(varlog > 0.0 && varlog.is_finite()) {
                    return Err(invalid("lognormal needs finite meanlog and varlog > 0"));
                }
            }
            Family::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(invalid(format!("uniform bounds ({a}, {b}) need a < b")));
                }
            }
            Family::TwoPoint { low, high, p_high } => {
                if !(low.is_finite() && high.is_finite() && low < high) || !(p_high > 0.0 && p_high < 1.0) {
                    return Err(invalid("two-point law needs low < high and p_high in (0, 1)"));
                }
            }
        }
        Ok(())
    }

    fn cdf(&self, x: f64) -> f64 {
        match *self {
            Family::Lognormal { meanlog, varlog } => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf((x.ln() - meanlog) / varlog.sqrt())
                }
            }
            Family::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Family::TwoPoint { low, high, p_high } => {
                if x < low {
                    0.0
                } else if x < high {
                    1.0 - p_high
                } else {
                    1.0
                }
            }
        }
    }

    /// `P(X < x)`.
    fn cdf_left(&self, x: f64) -> f64 {
        match *self {
            Family::TwoPoint { low, high, p_high } => {
                if x <= low {
                    0.0
                } else if x <= high {
                    1.0 - p_high
                } else {
                    1.0
                }
            }
            _ => self.cdf(x),
        }
    }

    /// `E[X 1{X < x}]`.
    fn lower_mean(&self, x: f64) -> f64 {
        match *self {
            Family::Lognormal { meanlog, varlog } => {
                if x <= 0.0 {
                    0.0
                } else {
                    let s = varlog.sqrt();
                    (meanlog + 0.5 * varlog).exp() * std_normal_cdf((x.ln() - meanlog) / s - s)
                }
            }
            Family::Uniform { a, b } => {
                let c = x.clamp(a, b);
                (c * c - a * a) / (2.0 * (b - a))
            }
            Family::TwoPoint { low, high, p_high } => {
                let mut acc = 0.0;
                if low < x {
                    acc += low * (1.0 - p_high);
                }
                if high < x {
                    acc += high * p_high;
                }
                acc
            }
        }
    }

    fn quantile(&self, u: f64) -> f64 {
        match *self {
            Family::Lognormal { meanlog, varlog } => (meanlog + varlog.sqrt() * std_normal_quantile(u)).exp(),
            Family::Uniform { a, b } => a + (b - a) * u,
            Family::TwoPoint { low, high, p_high } => {
                if u <= 1.0 - p_high {
                    low
                } else {
                    high
                }
            }
        }
    }
}

/// A finite mixture of families seen through its distribution function.
struct Mixture {
    parts: Vec<(f64, Family)>,
}

impl Mixture {
    fn cdf(&self, x: f64) -> f64 {
        self.parts.iter().map(|(w, f)| w * f.cdf(x)).sum()
    }

    fn cdf_left(&self, x: f64) -> f64 {
        self.parts.iter().map(|(w, f)| w * f.cdf_left(x)).sum()
    }

    fn lower_mean(&self, x: f64) -> f64 {
        self.parts.iter().map(|(w, f)| w * f.lower_mean(x)).sum()
    }

    /// Smallest `x` with `cdf(x) >= u`; the mixture quantile lies between
    /// the smallest and largest component quantiles.
    fn quantile(&self, u: f64) -> f64 {
        let qs = self.parts.iter().map(|(_, f)| f.quantile(u));
        let mut lo = qs.clone().fold(f64::INFINITY, f64::min);
        let mut hi = qs.fold(f64::NEG_INFINITY, f64::max);
        if self.cdf(lo) >= u {
            return lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) >= u {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    /// `int_0^u Q(v) dv`.
    fn partial_expectation(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let q = self.quantile(u);
        self.lower_mean(q) + (u - self.cdf_left(q)) * q
    }
}

/// Interior bin edges in probability, `grid - 1` of them.
fn probability_edges(grid: usize, truncation: f64) -> Vec<f64> {
    (0..grid - 1)
        .map(|k| truncation + (1.0 - 2.0 * truncation) * k as f64 / (grid - 2) as f64)
        .collect()
}

/// `P(a < Z < b)` for standard normal `Z`, from whichever tail is accurate.
fn gauss_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else if b <= 0.0 {
        std_normal_cdf(b) - std_normal_cdf(a)
    } else {
        1.0 - std_normal_cdf(a) - std_normal_sf(b)
    }
}

fn discretize_lognormal(meanlog: f64, varlog: f64, grid: usize, truncation: f64, scheme: BinScheme) -> Result<GridMeasure> {
    let s = varlog.sqrt();
    let interior: Vec<f64> = match scheme {
        BinScheme::EqualProbability => probability_edges(grid, truncation)
            .into_iter()
            .map(|u| {
                if u <= 0.5 {
                    std_normal_quantile(u)
                } else {
                    -std_normal_quantile(1.0 - u)
                }
            })
            .collect(),
        BinScheme::NormalScore => {
            let z = -std_normal_quantile(truncation);
            (0..grid - 1)
                .map(|k| -z + 2.0 * z * k as f64 / (grid - 2) as f64)
                .collect()
        }
    };
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(interior);
    edges.push(f64::INFINITY);
    let scale = (meanlog + 0.5 * varlog).exp();
    let (atoms, weights) = edges
        .windows(2)
        .map(|e| {
            let mass = gauss_mass(e[0], e[1]);
            (scale * gauss_mass(e[0] - s, e[1] - s) / mass, mass)
        })
        .unzip();
    GridMeasure::new(atoms, weights)
}

fn discretize_mixture(parts: Vec<(f64, Family)>, grid: usize, truncation: f64) -> Result<GridMeasure> {
    let mixture = Mixture { parts };
    let mut edges = vec![0.0];
    edges.extend(probability_edges(grid, truncation));
    edges.push(1.0);
    let pe: Vec<f64> = edges.iter().map(|&u| mixture.partial_expectation(u)).collect();
    let (atoms, weights) = edges
        .windows(2)
        .zip(pe.windows(2))
        .map(|(u, p)| ((p[1] - p[0]) / (u[1] - u[0]), u[1] - u[0]))
        .unzip();
    GridMeasure::new(atoms, weights)
}

fn read_samples(path: &Path) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| invalid(format!("cannot read samples file {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let field = record.get(0).unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if row == 0 => continue,
            _ => {
                return Err(invalid(format!(
                    "{}: row {} is not a finite number: {field:?}",
                    path.display(),
                    row + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Equal-count bins of the sorted samples, one atom per bin at its mean.
fn discretize_samples(mut samples: Vec<f64>, bins: usize) -> Result<GridMeasure> {
    let n = samples.len();
    if n == 0 {
        return Err(invalid("samples file holds no numbers"));
    }
    if bins == 0 || bins > n {
        return Err(invalid(format!("bin count {bins} must lie in 1..={n}")));
    }
    samples.sort_by(f64::total_cmp);
    let mut atoms = Vec::with_capacity(bins);
    let mut weights = Vec::with_capacity(bins);
    for k in 0..bins {
        let chunk = &samples[k * n / bins..(k + 1) * n / bins];
        atoms.push(chunk.iter().sum::<f64>() / chunk.len() as f64);
        weights.push(chunk.len() as f64);
    }
    GridMeasure::new(atoms, weights)
}

impl MarginalSpec {
    /// Builds the atomic measure; relative sample paths are resolved
    /// against `base`.
    pub fn discretize(&self, base: &Path) -> Result<GridMeasure> {
        match self {
            MarginalSpec::Atoms { atoms, weights } => {
                let weights = weights.clone().unwrap_or_else(|| vec![1.0; atoms.len()]);
                GridMeasure::new(atoms.clone(), weights)
            }
            &MarginalSpec::Lognormal { meanlog, varlog, grid, truncation, scheme } => {
                Family::Lognormal { meanlog, varlog }.validate()?;
                check_grid(grid, truncation)?;
                discretize_lognormal(meanlog, varlog, grid, truncation, scheme)
            }
            &MarginalSpec::Uniform { a, b, grid, truncation } => {
                Family::Uniform { a, b }.validate()?;
                check_grid(grid, truncation)?;
                discretize_mixture(vec![(1.0, Family::Uniform { a, b })], grid, truncation)
            }
            &MarginalSpec::TwoPoint { low, high, p_high } => {
                Family::TwoPoint { low, high, p_high }.validate()?;
                GridMeasure::new(vec![low, high], vec![1.0 - p_high, p_high])
            }
            MarginalSpec::Mixture { components, grid, truncation } => {
                check_grid(*grid, *truncation)?;
                if components.is_empty() {
                    return Err(invalid("mixture needs at least one component"));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut parts = Vec::with_capacity(components.len());
                for c in components {
                    c.family.validate()?;
                    if !(c.weight > 0.0 && c.weight.is_finite()) {
                        return Err(invalid("mixture weights must be positive"));
                    }
                    parts.push((c.weight / total, c.family.clone()));
                }
                discretize_mixture(parts, *grid, *truncation)
            }
            MarginalSpec::Samples { path, bins } => {
                let full = base.join(path);
                discretize_samples(read_samples(&full)?, *bins)
            }
        }
    }

    /// Files the specification refers to.
    pub fn referenced_file(&self, base: &Path) -> Option<std::path::PathBuf> {
        match self {
            MarginalSpec::Samples { path, .. } => Some(base.join(path)),
            _ => None,
        }
    }
}

/// Rescales the atoms of `mu1` onto the mean of `mu0` when the two means
/// differ by less than `1e-6`; larger differences are an input error.
pub fn match_means(mu0: &GridMeasure, mu1: GridMeasure) -> Result<GridMeasure> {
    let (m0, m1) = (mu0.mean(), mu1.mean());
    if m0 == m1 {
        return Ok(mu1);
    }
    if (m0 - m1).abs() >= 1e-6 {
        return Err(Error::UnequalMeans(m0, m1));
    }
    if !(m1 > 0.0) {
        return Err(invalid(format!("cannot rescale a measure with mean {m1}")));
    }
    mu1.scaled(m0 / m1)
}
