#![allow(dead_code)]

use gbass::gaussian::{std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_sf};
use gbass::measures::GridMeasure;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub struct Uniform01(ChaCha8Rng);

impl Uniform01 {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }

    pub fn index(&mut self, n: usize) -> usize {
        (self.next() * n as f64) as usize % n
    }
}

/// N(mean, sd^2) on `n` equal-probability bins, atoms at conditional means.
pub fn gaussian_bins(n: usize, mean: f64, sd: f64) -> GridMeasure {
    let edges: Vec<f64> = (0..=n)
        .map(|k| match k {
            0 => f64::NEG_INFINITY,
            k if k == n => f64::INFINITY,
            k => std_normal_quantile(k as f64 / n as f64),
        })
        .collect();
    let atoms = edges
        .windows(2)
        .map(|e| mean + sd * (std_normal_pdf(e[0]) - std_normal_pdf(e[1])) * n as f64)
        .collect();
    GridMeasure::uniform(atoms).unwrap()
}

/// Law of `exp(sigma Z - sigma^2 / 2)` on `n` bins equally spaced in `Z`
/// over `[-9, 9]` (two of them unbounded tails), atoms at conditional means.
pub fn lognormal_score_grid(n: usize, sigma: f64) -> GridMeasure {
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

/// Irreducible convex-ordered pair: `nu0` is a mixture of discretized
/// Gaussians and `nu1` spreads every atom of `nu0` by a symmetric kernel
/// wide enough to overlap its neighbours. `nu1` has at most `max_atoms`
/// atoms.
pub fn random_irreducible_pair(rng: &mut Uniform01, max_atoms: usize) -> (GridMeasure, GridMeasure) {
    let kernel_size = if rng.next() < 0.5 { 3 } else { 5 };
    let n0_max = max_atoms / kernel_size;
    let n0 = 10 + rng.index(n0_max - 9);
    let parts = 1 + rng.index(3);
    let mut pieces = Vec::new();
    let mut remaining = n0;
    for p in 0..parts {
        let n = if p + 1 == parts { remaining } else { (remaining / (parts - p)).max(1) };
        remaining -= n;
        if n == 0 {
            continue;
        }
        let mean = rng.range(0.5, 3.0);
        let sd = rng.range(0.05, 0.6);
        pieces.push((rng.range(0.2, 1.0), gaussian_bins(n, mean, sd)));
    }
    let refs: Vec<(f64, &GridMeasure)> = pieces.iter().map(|(w, m)| (*w, m)).collect();
    let nu0 = GridMeasure::mixture(&refs).unwrap();

    let max_gap = nu0
        .atoms()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    let width = 0.6 * max_gap + rng.range(0.05, 0.5) * nu0.variance().sqrt();
    let kernel: Vec<(f64, f64)> = if kernel_size == 3 {
        let p = rng.range(0.1, 0.45);
        vec![(-width, p), (0.0, 1.0 - 2.0 * p), (width, p)]
    } else {
        let p = rng.range(0.05, 0.25);
        let q = rng.range(0.05, 0.2);
        vec![(-width, p), (-0.5 * width, q), (0.0, 1.0 - 2.0 * (p + q)), (0.5 * width, q), (width, p)]
    };
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for (&x, &w) in nu0.atoms().iter().zip(nu0.weights()) {
        for &(dz, pk) in &kernel {
            atoms.push(x + dz);
            weights.push(w * pk);
        }
    }
    let nu1 = GridMeasure::new(atoms, weights).unwrap();
    (nu0, nu1)
}
