//! Files written by the command-line tool.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bass_solver::{BassComponentSolution, BassSolution};
use crate::error::{Error, Result};
use crate::geometric_bridge::{ComponentMapEntry, GeometricSolution};
use crate::measures::{Component, ComponentDecomposition, GridMeasure};

/// One irreducible component. `generating` is not stored since it is the
/// monotone rearrangement of `target` against `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub nu_interval: (f64, f64),
    pub mu_interval: (f64, f64),
    pub mass: f64,
    pub source: GridMeasure,
    pub target: GridMeasure,
    pub alpha: GridMeasure,
    pub iterations: usize,
    pub residual_nu0: f64,
    pub residual_nu1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub m: f64,
    pub mu0: GridMeasure,
    pub mu1: GridMeasure,
    pub identity_mass: f64,
    pub identity_restriction: Option<GridMeasure>,
    pub components: Vec<ComponentRecord>,
}

impl SolutionRecord {
    pub fn from_solution(gsol: &GeometricSolution) -> Self {
        let arithmetic = &gsol.arithmetic;
        let components = arithmetic
            .decomposition
            .components
            .iter()
            .zip(&arithmetic.component_solutions)
            .zip(&gsol.component_map)
            .map(|((c, s), map)| ComponentRecord {
                nu_interval: map.nu_interval,
                mu_interval: map.mu_interval,
                mass: c.mass,
                source: s.source.clone(),
                target: s.target.clone(),
                alpha: s.alpha.clone(),
                iterations: s.iterations,
                residual_nu0: s.residual_nu0,
                residual_nu1: s.residual_nu1,
            })
            .collect();
        Self {
            m: gsol.m,
            mu0: gsol.mu0.clone(),
            mu1: gsol.mu1.clone(),
            identity_mass: arithmetic.decomposition.identity_set_mass,
            identity_restriction: arithmetic.identity_restriction.clone(),
            components,
        }
    }

    /// Rebuilds the solution, recomputing every generating function.
    pub fn into_solution(self) -> Result<GeometricSolution> {
        let mut components = Vec::with_capacity(self.components.len());
        let mut solutions = Vec::with_capacity(self.components.len());
        let mut component_map = Vec::with_capacity(self.components.len());
        let (mut r0, mut r1) = (0.0, 0.0);
        for c in self.components {
            let sol = BassComponentSolution::from_parts(c.source.clone(), c.target.clone(), c.alpha, c.iterations)?;
            r0 += c.mass * sol.residual_nu0;
            r1 += c.mass * sol.residual_nu1;
            components.push(Component {
                interval: c.nu_interval,
                nu0: c.source,
                nu1: c.target,
                mass: c.mass,
            });
            solutions.push(sol);
            component_map.push(ComponentMapEntry {
                nu_interval: c.nu_interval,
                mu_interval: c.mu_interval,
            });
        }
        Ok(GeometricSolution {
            m: self.m,
            mu0: self.mu0,
            mu1: self.mu1,
            arithmetic: BassSolution {
                decomposition: ComponentDecomposition {
                    identity_set_mass: self.identity_mass,
                    identity_restriction: self.identity_restriction.clone(),
                    components,
                },
                component_solutions: solutions,
                identity_restriction: self.identity_restriction,
                residual_nu0: r0,
                residual_nu1: r1,
            },
            component_map,
        })
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_error(path, e))
}

/// Two columns `atom,weight`.
pub fn write_measure_csv(path: &Path, mu: &GridMeasure) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    w.write_record(["atom", "weight"]).map_err(|e| io_error(path, e))?;
    for (a, p) in mu.atoms().iter().zip(mu.weights()) {
        w.write_record([a.to_string(), p.to_string()]).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn read_measure_csv(path: &Path) -> Result<GridMeasure> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_error(path, e))?;
    let (mut atoms, mut weights) = (Vec::new(), Vec::new());
    for record in r.records() {
        let record = record.map_err(|e| io_error(path, e))?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| io_error(path, format!("bad row {record:?}")))
        };
        atoms.push(field(0)?);
        weights.push(field(1)?);
    }
    GridMeasure::new(atoms, weights)
}
