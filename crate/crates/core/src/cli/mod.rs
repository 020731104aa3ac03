//! Command-line front end: `gbass <command> --config <file> [--out <dir>] [--seed <n>]`.

pub mod artifacts;
pub mod config;
pub mod discretize;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use self::artifacts::{read_json, write_json, write_measure_csv, SolutionRecord};
use self::config::{EngineChoice, LoadedConfig, TimeGridSpec};
use self::discretize::match_means;
use crate::duality_values::make_value_report;
use crate::error::{Error, Result};
use crate::geometric_bridge::{
    component_marginals, marginal_flow, reflection_residuals, solve_geometric, to_arithmetic, GeometricSolution,
};
use crate::measures::{check_convex_order, dagger_transform, irreducible_components, GridMeasure};
use crate::simulate::{
    ensemble_stats, refined_time_grid, simulate_geometric_sde_on, simulate_geometric_weighted_on, uniform_time_grid,
    PathEnsemble,
};

#[derive(Debug, Parser)]
#[command(name = "gbass", version, about = "Geometric and arithmetic Bass martingales between two marginals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON problem configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Simulation seed; overrides `simulation.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Convex order and irreducible decomposition of both marginal pairs.
    Check,
    /// Writes the reflected marginals `nu_i`.
    Transform,
    /// Solves the geometric problem and writes the solution and values.
    Solve,
    /// Writes the marginal laws at the configured times.
    Flow,
    /// Runs the configured simulation engines.
    Simulate,
    /// Value report from a stored solution, solving first if none exists.
    Value,
}

/// Exit status for a failure: 3 for non-convergence, 1 for internal
/// inconsistencies, 2 for invalid input.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotConverged { .. } => 3,
        Error::Consistency(_) | Error::DivergentQuadrature(_) | Error::OutsideImage { .. } => 1,
        _ => 2,
    }
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("gbass {}: {e}", command_name(cli.command));
            exit_code(&e)
        }
    }
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Check => "check",
        Command::Transform => "transform",
        Command::Solve => "solve",
        Command::Flow => "flow",
        Command::Simulate => "simulate",
        Command::Value => "value",
    }
}

struct Context {
    loaded: LoadedConfig,
    out: PathBuf,
    seed: u64,
}

impl Context {
    fn marginals(&self) -> Result<(GridMeasure, GridMeasure)> {
        let c = &self.loaded.config;
        let mu0 = c.mu0.discretize(&self.loaded.base)?;
        let mu1 = match_means(&mu0, c.mu1.discretize(&self.loaded.base)?)?;
        Ok((mu0, mu1))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn solve(&self) -> Result<GeometricSolution> {
        let (mu0, mu1) = self.marginals()?;
        solve_geometric(&mu0, &mu1, &self.loaded.config.solver)
    }

    /// The stored solution when one exists, otherwise a fresh solve.
    fn solution(&self) -> Result<GeometricSolution> {
        let stored = self.path("solution.json");
        if stored.is_file() {
            read_json::<SolutionRecord>(&stored)?.into_solution()
        } else {
            self.solve()
        }
    }

    fn sigmas(&self) -> Result<(f64, f64)> {
        let c = &self.loaded.config;
        let sigma_bar = c
            .sigma_bar
            .ok_or_else(|| Error::InvalidArgument("sigma_bar is required for value reports".into()))?;
        Ok((sigma_bar, c.big_sigma_bar.unwrap_or(sigma_bar)))
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("--config <path> is required".into()))?;
    let loaded = LoadedConfig::load(config_path)?;
    let out = loaded.output_dir(cli.out.as_deref());
    fs::create_dir_all(&out).map_err(|e| Error::InvalidArgument(format!("{}: {e}", out.display())))?;
    let seed = cli.seed.unwrap_or(loaded.config.simulation.seed);
    let ctx = Context { loaded, out, seed };
    match cli.command {
        Command::Check => check(&ctx),
        Command::Transform => transform(&ctx),
        Command::Solve => solve(&ctx),
        Command::Flow => flow(&ctx),
        Command::Simulate => simulate(&ctx),
        Command::Value => value(&ctx),
    }
}

fn check(ctx: &Context) -> Result<()> {
    let (mu0, mu1) = ctx.marginals()?;
    let mu_order = check_convex_order(&mu0, &mu1);
    let mut report = json!({
        "command": "check",
        "mu0": {"atoms": mu0.len(), "mean": mu0.mean()},
        "mu1": {"atoms": mu1.len(), "mean": mu1.mean()},
        "mu_order": mu_order,
    });
    if mu_order.in_convex_order && mu0.positive_support() && mu1.positive_support() {
        let nu0 = dagger_transform(&mu0, true)?;
        let nu1 = dagger_transform(&mu1, true)?;
        let nu_order = check_convex_order(&nu0, &nu1);
        report["nu_order"] = json!(nu_order);
        if nu_order.in_convex_order {
            let nu_side = irreducible_components(&nu0, &nu1)?;
            let mu_side = irreducible_components(&mu0, &mu1)?;
            let summary = |d: &crate::measures::ComponentDecomposition| {
                json!({
                    "identity_mass": d.identity_set_mass,
                    "components": d.components.iter()
                        .map(|c| json!({"interval": c.interval, "mass": c.mass}))
                        .collect::<Vec<_>>(),
                })
            };
            report["nu_decomposition"] = summary(&nu_side);
            report["mu_decomposition"] = summary(&mu_side);
        }
    }
    write_json(&ctx.path("report.json"), &report)?;
    if !mu_order.equal_means {
        return Err(Error::UnequalMeans(mu0.mean(), mu1.mean()));
    }
    if !mu_order.in_convex_order {
        return Err(Error::ConvexOrderViolated {
            max_violation: mu_order.max_violation,
        });
    }
    println!("convex order holds; report written to {}", ctx.path("report.json").display());
    Ok(())
}

fn transform(ctx: &Context) -> Result<()> {
    let (mu0, mu1) = ctx.marginals()?;
    let nu0 = dagger_transform(&mu0, true)?;
    let nu1 = dagger_transform(&mu1, true)?;
    write_measure_csv(&ctx.path("nu0.csv"), &nu0)?;
    write_measure_csv(&ctx.path("nu1.csv"), &nu1)?;
    write_json(
        &ctx.path("report.json"),
        &json!({
            "command": "transform",
            "m": mu0.mean(),
            "nu0": {"atoms": nu0.len(), "mean": nu0.mean()},
            "nu1": {"atoms": nu1.len(), "mean": nu1.mean()},
        }),
    )?;
    println!("wrote nu0.csv and nu1.csv to {}", ctx.out.display());
    Ok(())
}

fn solver_summary(gsol: &GeometricSolution) -> Result<serde_json::Value> {
    let a = &gsol.arithmetic;
    let components: Vec<_> = a
        .decomposition
        .components
        .iter()
        .zip(&a.component_solutions)
        .zip(&gsol.component_map)
        .map(|((c, s), map)| {
            json!({
                "nu_interval": map.nu_interval,
                "mu_interval": map.mu_interval,
                "mass": c.mass,
                "iterations": s.iterations,
                "residual_nu0": s.residual_nu0,
                "residual_nu1": s.residual_nu1,
                "alpha_atoms": s.alpha.len(),
            })
        })
        .collect();
    let (refl0, refl1) = reflection_residuals(gsol)?;
    Ok(json!({
        "m": gsol.m,
        "identity_mass": a.decomposition.identity_set_mass,
        "residual_nu0": a.residual_nu0,
        "residual_nu1": a.residual_nu1,
        "reflection_residual_nu0": refl0,
        "reflection_residual_nu1": refl1,
        "components": components,
    }))
}

fn solve(ctx: &Context) -> Result<()> {
    let (sigma_bar, big_sigma_bar) = ctx.sigmas()?;
    let (mu0, mu1) = ctx.marginals()?;
    to_arithmetic(&mu0, &mu1)?;
    let gsol = solve_geometric(&mu0, &mu1, &ctx.loaded.config.solver)?;
    let values = make_value_report(&gsol, sigma_bar, big_sigma_bar)?;
    write_json(&ctx.path("solution.json"), &SolutionRecord::from_solution(&gsol))?;
    write_json(
        &ctx.path("report.json"),
        &json!({"command": "solve", "values": values, "solver": solver_summary(&gsol)?}),
    )?;
    println!(
        "solved {} component(s); gmbb_value = {:e}; outputs in {}",
        gsol.arithmetic.component_solutions.len(),
        values.gmbb_value,
        ctx.out.display()
    );
    Ok(())
}

fn value(ctx: &Context) -> Result<()> {
    let (sigma_bar, big_sigma_bar) = ctx.sigmas()?;
    let gsol = ctx.solution()?;
    let values = make_value_report(&gsol, sigma_bar, big_sigma_bar)?;
    write_json(
        &ctx.path("report.json"),
        &json!({"command": "value", "values": values, "solver": solver_summary(&gsol)?}),
    )?;
    println!("gmbb_value = {:e}; ambb_value = {:e}", values.gmbb_value, values.ambb_value);
    Ok(())
}

fn flow_file_name(t: f64) -> String {
    format!("flow_t{t}.csv")
}

fn flow(ctx: &Context) -> Result<()> {
    let gsol = ctx.solution()?;
    let mut entries = Vec::new();
    for &t in &ctx.loaded.config.flow_times {
        let law = marginal_flow(&gsol, t)?;
        let name = flow_file_name(t);
        write_measure_csv(&ctx.path(&name), &law)?;
        entries.push(json!({"t": t, "file": name, "atoms": law.len(), "mean": law.mean()}));
    }
    write_json(&ctx.path("report.json"), &json!({"command": "flow", "flows": entries}))?;
    println!("wrote {} flow file(s) to {}", entries.len(), ctx.out.display());
    Ok(())
}

fn export_paths(ctx: &Context, name: &str, ens: &PathEnsemble) -> Result<()> {
    let keep = ctx.loaded.config.simulation.export_paths.min(ens.n_paths());
    if keep == 0 {
        return Ok(());
    }
    let width = ens.time_grid.len();
    let head = PathEnsemble {
        time_grid: ens.time_grid.clone(),
        paths: ens.paths[..keep * width].to_vec(),
        weights: ens.weights[..keep].to_vec(),
        seed: ens.seed,
        kind: ens.kind,
        clamp_events: ens.clamp_events,
    };
    head.write_csv(&ctx.path(name))
}

fn simulate(ctx: &Context) -> Result<()> {
    let sim = &ctx.loaded.config.simulation;
    let gsol = ctx.solution()?;
    let grid = match sim.time_grid {
        TimeGridSpec::Uniform => uniform_time_grid(sim.steps),
        TimeGridSpec::Refined { power } => refined_time_grid(sim.steps, power),
    };
    let mut report = json!({"command": "simulate", "seed": ctx.seed, "paths": sim.paths, "steps": sim.steps});
    if matches!(sim.engine, EngineChoice::Weighted | EngineChoice::Both) {
        let ens = simulate_geometric_weighted_on(&gsol, &grid, sim.paths, ctx.seed)?;
        report["weighted"] = json!(ensemble_stats(&ens, Some((&gsol.mu0, &gsol.mu1)), true)?);
        export_paths(ctx, "paths_weighted.csv", &ens)?;
    }
    if matches!(sim.engine, EngineChoice::Sde | EngineChoice::Both) {
        let ens = simulate_geometric_sde_on(&gsol, sim.component, &grid, sim.paths, ctx.seed)?;
        let (r0, r1) = component_marginals(&gsol, sim.component)?;
        report["sde"] = json!(ensemble_stats(&ens, Some((&r0, &r1)), true)?);
        report["sde_component"] = json!(sim.component);
        export_paths(ctx, "paths_sde.csv", &ens)?;
    }
    write_json(&ctx.path("report.json"), &report)?;
    println!("simulation report written to {}", ctx.path("report.json").display());
    Ok(())
}
