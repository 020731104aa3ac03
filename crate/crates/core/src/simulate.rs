//! Monte Carlo engines for Bass martingales and their geometric images.
//!
//! * arithmetic: `M_t = F(t, W_t)` with `W_0 ~ alpha` on a component drawn
//!   with its `nu0` mass; static mass gives constant paths.
//! * geometric, weighted: `S = m / M` with path weight `M_1`, so that
//!   `E[g(S)] = E~[g(m / M) M_1]`.
//! * geometric, SDE: Euler steps of `dS = S vol(t, S) dB` on one component.
//!
//! Every path owns a ChaCha8 stream selected by its index, so ensembles are
//! identical whatever the thread count. `F(t, .)` is tabulated once per grid
//! time on a uniform grid with exact values and slopes and read back by
//! cubic Hermite interpolation; points outside a table fall back to direct
//! evaluation.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bass_solver::{BassComponentSolution, BassSolution};
use crate::error::{Error, Result};
use crate::gaussian::{std_normal_quantile, MonotoneFn};
use crate::geometric_bridge::{volatility_at, GeometricSolution};
use crate::measures::{wasserstein1, GridMeasure};

/// Relative margin keeping SDE paths strictly inside their component.
pub const RANGE_EPSILON: f64 = 1e-9;

/// Table spacing as a fraction of the smoothing scale `sqrt(1 - t)`.
const TABLE_SPACING: f64 = 0.05;
const TABLE_MAX_NODES: usize = 1 << 18;
/// Half-width of a table around the support of `alpha`, in units of
/// `sqrt(t)`.
const TABLE_REACH: f64 = 8.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Arithmetic,
    GeometricWeighted,
    GeometricSde,
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub time_grid: Vec<f64>,
    /// Row-major `n_paths x time_grid.len()`.
    pub paths: Vec<f64>,
    pub weights: Vec<f64>,
    pub seed: u64,
    pub kind: EnsembleKind,
    /// Number of Euler steps that had to be projected back into range.
    pub clamp_events: usize,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.weights.len()
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let k = self.time_grid.len();
        &self.paths[i * k..(i + 1) * k]
    }

    /// Values of all paths at grid index `k`.
    pub fn values_at(&self, k: usize) -> Vec<f64> {
        let width = self.time_grid.len();
        self.paths.iter().skip(k).step_by(width).copied().collect()
    }

    /// Weighted empirical law at grid index `k`.
    pub fn law_at(&self, k: usize) -> Result<GridMeasure> {
        GridMeasure::new(self.values_at(k), self.weights.clone())
    }

    /// One row per path: the weight, then the path values; the header
    /// lists the grid times.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        let io = |e: csv::Error| Error::InvalidArgument(format!("{}: {e}", path.display()));
        let mut header = vec!["weight".to_string()];
        header.extend(self.time_grid.iter().map(|t| format!("t={t}")));
        writer.write_record(&header).map_err(io)?;
        for i in 0..self.n_paths() {
            let mut row = vec![self.weights[i].to_string()];
            row.extend(self.path(i).iter().map(|v| v.to_string()));
            writer.write_record(&row).map_err(io)?;
        }
        writer
            .flush()
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }
}

/// `k / steps` for `k = 0..=steps`.
pub fn uniform_time_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 / steps as f64).collect()
}

/// `1 - (1 - k / steps)^power`: steps shrink towards `t = 1`, where `F(t, .)`
/// steepens for atomic terminal laws.
pub fn refined_time_grid(steps: usize, power: f64) -> Vec<f64> {
    (0..=steps)
        .map(|k| {
            if k == steps {
                1.0
            } else {
                1.0 - (1.0 - k as f64 / steps as f64).powf(power)
            }
        })
        .collect()
}

fn check_grid(time_grid: &[f64], paths: usize) -> Result<()> {
    if time_grid.len() < 2 || paths == 0 {
        return Err(Error::InvalidArgument(
            "simulation needs at least one step and one path".into(),
        ));
    }
    if time_grid[0] != 0.0
        || *time_grid.last().unwrap() != 1.0
        || time_grid.windows(2).any(|w| !(w[1] > w[0]))
    {
        return Err(Error::InvalidArgument(
            "time grid must increase strictly from 0 to 1".into(),
        ));
    }
    Ok(())
}

/// Per-path uniform and Gaussian draws.
struct PathRng(ChaCha8Rng);

impl PathRng {
    fn new(seed: u64, path: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path as u64);
        Self(rng)
    }

    /// Uniform on the open interval (0, 1).
    fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    fn gaussian(&mut self) -> f64 {
        std_normal_quantile(self.uniform())
    }
}

/// `F(t, .)` on a uniform grid with values and slopes.
struct HermiteTable {
    x0: f64,
    h: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl HermiteTable {
    fn build(sol: &BassComponentSolution, t: f64) -> Result<Self> {
        let (a_lo, a_hi) = (sol.alpha.min_atom(), sol.alpha.max_atom());
        let sd = (1.0 - t).sqrt();
        let reach = TABLE_REACH * t.sqrt() + 2.0 * sd;
        let (lo, hi) = (a_lo - reach, a_hi + reach);
        let h = (TABLE_SPACING * sd).max((hi - lo) / TABLE_MAX_NODES as f64);
        let n = ((hi - lo) / h).ceil() as usize + 1;
        let points: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = lo + h * i as f64;
                match &sol.generating {
                    MonotoneFn::Step(step) => Ok(step.smoothed_with_deriv(1.0 - t, x)),
                    _ => Ok((sol.eval(t, x)?, sol.eval_deriv(t, x)?)),
                }
            })
            .collect::<Result<_>>()?;
        let (values, slopes) = points.into_iter().unzip();
        Ok(Self {
            x0: lo,
            h,
            values,
            slopes,
        })
    }

    fn x_end(&self) -> f64 {
        self.x0 + self.h * (self.values.len() - 1) as f64
    }

    fn cell(&self, x: f64) -> Option<(usize, f64)> {
        if !(x >= self.x0 && x <= self.x_end()) {
            return None;
        }
        let i = (((x - self.x0) / self.h) as usize).min(self.values.len() - 2);
        Some((i, (x - self.x0) / self.h - i as f64))
    }

    fn eval_cell(&self, i: usize, u: f64) -> (f64, f64) {
        let (f0, f1) = (self.values[i], self.values[i + 1]);
        let (d0, d1) = (self.slopes[i] * self.h, self.slopes[i + 1] * self.h);
        let u2 = u * u;
        let u3 = u2 * u;
        let value = (2.0 * u3 - 3.0 * u2 + 1.0) * f0
            + (u3 - 2.0 * u2 + u) * d0
            + (-2.0 * u3 + 3.0 * u2) * f1
            + (u3 - u2) * d1;
        let slope = (6.0 * u2 - 6.0 * u) * f0
            + (3.0 * u2 - 4.0 * u + 1.0) * d0
            + (-6.0 * u2 + 6.0 * u) * f1
            + (3.0 * u2 - 2.0 * u) * d1;
        (value, slope / self.h)
    }

    fn eval(&self, x: f64) -> Option<f64> {
        self.cell(x).map(|(i, u)| self.eval_cell(i, u).0)
    }

    /// `x` with interpolated `F(t, x) = y`, and the slope there.
    fn invert(&self, y: f64) -> Option<(f64, f64)> {
        let n = self.values.len();
        if !(y > self.values[0] && y < self.values[n - 1]) {
            return None;
        }
        let i = self.values.partition_point(|&v| v <= y) - 1;
        let i = i.min(n - 2);
        let (mut a, mut b) = (0.0, 1.0);
        let mut u = if self.values[i + 1] > self.values[i] {
            (y - self.values[i]) / (self.values[i + 1] - self.values[i])
        } else {
            0.5
        };
        for _ in 0..60 {
            let (v, s) = self.eval_cell(i, u);
            let err = v - y;
            if err == 0.0 {
                break;
            }
            if err < 0.0 {
                a = u;
            } else {
                b = u;
            }
            let mut next = u - err / (s * self.h);
            if !(next > a && next < b) || !next.is_finite() {
                next = 0.5 * (a + b);
            }
            if (next - u).abs() < 1e-15 {
                u = next;
                break;
            }
            u = next;
        }
        let (_, slope) = self.eval_cell(i, u);
        Some((self.x0 + self.h * (i as f64 + u), slope))
    }
}

/// `F(t_k, .)` for every grid time of one component; the last time uses the
/// generating function itself.
struct ComponentTables {
    tables: Vec<Option<HermiteTable>>,
}

impl ComponentTables {
    fn build(sol: &BassComponentSolution, time_grid: &[f64]) -> Result<Self> {
        let tables = time_grid
            .iter()
            .map(|&t| {
                if t < 1.0 {
                    HermiteTable::build(sol, t).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { tables })
    }

    fn eval(&self, sol: &BassComponentSolution, k: usize, t: f64, x: f64) -> Result<f64> {
        match self.tables[k].as_ref().and_then(|tab| tab.eval(x)) {
            Some(v) => Ok(v),
            None if t >= 1.0 => Ok(sol.generating.eval(x)),
            None => sol.eval(t, x),
        }
    }
}

fn draw_index(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .partition_point(|&c| c < u)
        .min(cumulative.len() - 1)
}

fn cumulative_of(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc
        })
        .collect()
}

/// Arithmetic Bass paths on a uniform grid with `steps` steps.
pub fn simulate_arithmetic(sol: &BassSolution, steps: usize, paths: usize, seed: u64) -> Result<PathEnsemble> {
    simulate_arithmetic_on(sol, &uniform_time_grid(steps), paths, seed)
}

/// Arithmetic Bass paths on the given time grid.
pub fn simulate_arithmetic_on(
    sol: &BassSolution,
    time_grid: &[f64],
    paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    check_grid(time_grid, paths)?;
    let width = time_grid.len();
    let components = &sol.component_solutions;
    let tables = components
        .iter()
        .map(|c| ComponentTables::build(c, time_grid))
        .collect::<Result<Vec<_>>>()?;
    // Choice 0 is the static part, choice i + 1 is component i.
    let mut masses = vec![sol.decomposition.identity_set_mass];
    masses.extend(sol.decomposition.components.iter().map(|c| c.mass));
    let choice_cdf = cumulative_of(&masses);
    let initial: Vec<Vec<f64>> = components
        .iter()
        .map(|c| c.alpha.atoms().iter().map(|&a| c.eval(0.0, a)).collect())
        .collect::<Result<_>>()?;

    let mut values = vec![0.0; paths * width];
    values
        .par_chunks_mut(width)
        .enumerate()
        .try_for_each(|(p, row)| -> Result<()> {
            let mut rng = PathRng::new(seed, p);
            let choice = draw_index(&choice_cdf, rng.uniform());
            if choice == 0 {
                let id = sol.identity_restriction.as_ref().ok_or_else(|| {
                    Error::Consistency("static part drawn but absent".into())
                })?;
                let x = id.quantile_unchecked(rng.uniform());
                row.fill(x);
                return Ok(());
            }
            let c = &components[choice - 1];
            let tab = &tables[choice - 1];
            let j = draw_index(c.alpha.cumulative(), rng.uniform());
            let mut w = c.alpha.atoms()[j];
            row[0] = initial[choice - 1][j];
            for k in 1..width {
                w += (time_grid[k] - time_grid[k - 1]).sqrt() * rng.gaussian();
                row[k] = tab.eval(c, k, time_grid[k], w)?;
            }
            Ok(())
        })?;
    Ok(PathEnsemble {
        time_grid: time_grid.to_vec(),
        paths: values,
        weights: vec![1.0; paths],
        seed,
        kind: EnsembleKind::Arithmetic,
        clamp_events: 0,
    })
}

/// Geometric paths `S = m / M` weighted by `M_1`, uniform grid.
pub fn simulate_geometric_weighted(
    gsol: &GeometricSolution,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_geometric_weighted_on(gsol, &uniform_time_grid(steps), paths, seed)
}

pub fn simulate_geometric_weighted_on(
    gsol: &GeometricSolution,
    time_grid: &[f64],
    paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let mut ens = simulate_arithmetic_on(&gsol.arithmetic, time_grid, paths, seed)?;
    let width = time_grid.len();
    for (row, weight) in ens.paths.chunks_mut(width).zip(ens.weights.iter_mut()) {
        *weight = row[width - 1];
        for v in row.iter_mut() {
            if !(*v > 0.0) {
                return Err(Error::Consistency(format!(
                    "arithmetic path value {v} is not positive"
                )));
            }
            *v = gsol.m / *v;
        }
    }
    ens.kind = EnsembleKind::GeometricWeighted;
    Ok(ens)
}

/// Euler paths of the geometric SDE on one component, uniform grid.
pub fn simulate_geometric_sde(
    gsol: &GeometricSolution,
    component_index: usize,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_geometric_sde_on(gsol, component_index, &uniform_time_grid(steps), paths, seed)
}

/// Euler–Maruyama for `dS = S vol(t, S) dB` with `S_0 ~ mu0` restricted to
/// the component, projecting every step back into the open component
/// range shrunk by [`RANGE_EPSILON`] times its width.
pub fn simulate_geometric_sde_on(
    gsol: &GeometricSolution,
    component_index: usize,
    time_grid: &[f64],
    paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    check_grid(time_grid, paths)?;
    let sol = gsol.component(component_index)?;
    let (j_lo, j_hi) = gsol.component_map[component_index].mu_interval;
    let margin = RANGE_EPSILON * (j_hi - j_lo);
    let (s_lo, s_hi) = (j_lo + margin, j_hi - margin);
    let (atoms, weights): (Vec<f64>, Vec<f64>) = gsol
        .mu0
        .atoms()
        .iter()
        .zip(gsol.mu0.weights())
        .filter(|(&a, _)| a > j_lo && a < j_hi)
        .map(|(&a, &w)| (a, w))
        .unzip();
    let start = GridMeasure::new(atoms, weights)?;
    let tables = ComponentTables::build(sol, time_grid)?;
    let m = gsol.m;
    let width = time_grid.len();

    let mut values = vec![0.0; paths * width];
    let clamps = values
        .par_chunks_mut(width)
        .enumerate()
        .map(|(p, row)| -> Result<usize> {
            let mut rng = PathRng::new(seed, p);
            let mut s = start.quantile_unchecked(rng.uniform());
            let mut clamps = 0;
            let mut hint = None;
            row[0] = s;
            for k in 1..width {
                let t = time_grid[k - 1];
                let vol = match tables.tables[k - 1].as_ref().and_then(|tab| tab.invert(m / s)) {
                    Some((x, slope)) => {
                        hint = Some(x);
                        (s / m) * slope
                    }
                    None => {
                        let (v, x) = volatility_at(sol, m, t, s, hint)?;
                        hint = Some(x);
                        v
                    }
                };
                let dt = time_grid[k] - t;
                let next = s + s * vol.max(0.0) * dt.sqrt() * rng.gaussian();
                s = if next < s_lo {
                    clamps += 1;
                    s_lo
                } else if next > s_hi {
                    clamps += 1;
                    s_hi
                } else {
                    next
                };
                row[k] = s;
            }
            Ok(clamps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathEnsemble {
        time_grid: time_grid.to_vec(),
        paths: values,
        weights: vec![1.0; paths],
        seed,
        kind: EnsembleKind::GeometricSde,
        clamp_events: clamps.iter().sum(),
    })
}

/// Estimate and standard error of a (weighted) mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub standard_error: f64,
}

impl Estimate {
    fn from_samples(samples: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut sum, mut sum2) = (0usize, 0.0, 0.0);
        for x in samples {
            n += 1;
            sum += x;
            sum2 += x * x;
        }
        let mean = sum / n as f64;
        let var = if n > 1 {
            ((sum2 - n as f64 * mean * mean) / (n - 1) as f64).max(0.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            standard_error: (var / n as f64).sqrt(),
        }
    }

    /// `|value| <= z * standard_error` (an exact zero always passes).
    pub fn within(&self, target: f64, z: f64) -> bool {
        (self.value - target).abs() <= z * self.standard_error
    }
}

/// `E[(S_1 - S_t) h(S_t)]` at one grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTest {
    pub t: f64,
    /// One of `"1"`, `"s"`, `"1/s"`.
    pub h: String,
    pub estimate: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_paths: usize,
    pub kind: EnsembleKind,
    /// Weighted empirical W1 to the reference initial law.
    pub w1_initial: Option<f64>,
    /// Weighted empirical W1 to the reference terminal law.
    pub w1_terminal: Option<f64>,
    pub time_grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub weight_mean: Estimate,
    /// Mean realized `sum_k (log S_{k+1} - log S_k)^2`.
    pub log_qv: Option<Estimate>,
    pub martingale_tests: Vec<MartingaleTest>,
    pub clamp_events: usize,
}

/// Weighted ensemble statistics. Expectations use the unnormalised
/// estimator `(1/N) sum_i w_i X_i`, which is unbiased when the weights have
/// mean one. `reference` holds the initial and terminal laws to compare
/// with; `log_qv` requires positive paths.
pub fn ensemble_stats(
    ens: &PathEnsemble,
    reference: Option<(&GridMeasure, &GridMeasure)>,
    log_qv: bool,
) -> Result<EnsembleStats> {
    let n = ens.n_paths();
    let width = ens.time_grid.len();
    let w = &ens.weights;
    let (w1_initial, w1_terminal) = match reference {
        Some((r0, r1)) => (
            Some(wasserstein1(&ens.law_at(0)?, r0)),
            Some(wasserstein1(&ens.law_at(width - 1)?, r1)),
        ),
        None => (None, None),
    };
    let mut mean = Vec::with_capacity(width);
    let mut variance = Vec::with_capacity(width);
    for k in 0..width {
        let m = (0..n).map(|i| w[i] * ens.paths[i * width + k]).sum::<f64>() / n as f64;
        let v = (0..n)
            .map(|i| {
                let d = ens.paths[i * width + k] - m;
                w[i] * d * d
            })
            .sum::<f64>()
            / n as f64;
        mean.push(m);
        variance.push(v);
    }
    let log_qv = if log_qv {
        if ens.paths.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument(
                "log quadratic variation needs positive paths".into(),
            ));
        }
        Some(Estimate::from_samples((0..n).map(|i| {
            let path = ens.path(i);
            let qv: f64 = path.windows(2).map(|p| (p[1] / p[0]).ln().powi(2)).sum();
            w[i] * qv
        })))
    } else {
        None
    };
    let mut martingale_tests = Vec::new();
    for &k in &[width / 4, width / 2, (3 * width) / 4] {
        if k == 0 || k >= width - 1 {
            continue;
        }
        let hs: [(&str, fn(f64) -> f64); 3] = [("1", |_| 1.0), ("s", |s| s), ("1/s", |s| 1.0 / s)];
        for (name, h) in hs {
            let estimate = Estimate::from_samples((0..n).map(|i| {
                let p = ens.path(i);
                w[i] * (p[width - 1] - p[k]) * h(p[k])
            }));
            martingale_tests.push(MartingaleTest {
                t: ens.time_grid[k],
                h: name.to_string(),
                estimate,
            });
        }
    }
    Ok(EnsembleStats {
        n_paths: n,
        kind: ens.kind,
        w1_initial,
        w1_terminal,
        time_grid: ens.time_grid.clone(),
        mean,
        variance,
        weight_mean: Estimate::from_samples(w.iter().copied()),
        log_qv,
        martingale_tests,
        clamp_events: ens.clamp_events,
    })
}
