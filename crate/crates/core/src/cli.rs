//! Batch front end: `eigenstate`, `uncertainty`, `simulate` and `evolve`.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
//! failure, 3 a detected inequality or quantization violation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{OutputFormat, RunDirection, ScenarioConfig};
use crate::eigensolver::{
    loop_value, oscillator_energy, peak_radius, solve_radial, stationary_residual, winding_number, QUANTIZATION_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::evolution::{evolve_with_audits, write_audit_csv, HydroStatus, Propagator};
use crate::geometry::{ChartKind, Grid};
use crate::madelung::{decompose, velocity_fields, VelocityFields};
use crate::sde::drift::{CellEstimate, DriftBins, DriftEstimate};
use crate::sde::{
    estimate_density, histogram_l1, run_ensemble, run_trajectory, sample_from_density, write_snapshot_csv, Direction,
    DriftProvider, EnsembleConfig, FieldSampler, FieldSchedule, Particle,
};
use crate::states::StateSpec;
use crate::uncertainty::{ensemble_report, full_report, write_summary_csv, EnsembleReport, SUMMARY_HEADER};

/// Margins below this count as violations of a grid bound.
pub const MARGIN_TOLERANCE: f64 = 1e-6;

/// Ensemble margins below this many standard errors count as violations.
pub const MARGIN_SIGMAS: f64 = 3.0;

#[derive(Debug, Parser)]
#[command(name = "polar-qhd", version, about = "Quantum hydrodynamics on polar grids: eigenstates, uncertainty bounds, particle ensembles and audited evolution")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a radial eigenstate, check loop quantization and the stationary residuals.
    Eigenstate(CommonArgs),
    /// Evaluate the uncertainty bounds on the grid and, with particles, on an ensemble.
    Uncertainty(CommonArgs),
    /// Run forward and/or backward particle ensembles.
    Simulate(CommonArgs),
    /// Propagate the wave function and audit continuity, hydrodynamics and bounds.
    Evolve(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML, or JSON with a .json extension).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Override run.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override output.dir.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override output.format.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Override run.particles.
    #[arg(long)]
    pub particles: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        }
    }
}

/// Successful completion, or completion with a detected violation.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Ok,
    Violation(String),
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidInput(_) | Error::Unsupported(_) | Error::Domain { .. } => 1,
        Error::QuantizationViolation { .. } => 3,
        _ => 2,
    }
}

pub fn outcome_code(outcome: &Outcome) -> u8 {
    match outcome {
        Outcome::Ok => 0,
        Outcome::Violation(_) => 3,
    }
}

/// Load the scenario, apply overrides and run one command.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let (args, kind): (&CommonArgs, fn(&ScenarioConfig) -> Result<Outcome>) = match &cli.command {
        Command::Eigenstate(a) => (a, cmd_eigenstate),
        Command::Uncertainty(a) => (a, cmd_uncertainty),
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Evolve(a) => (a, cmd_evolve),
    };
    let mut cfg = ScenarioConfig::from_path(&args.config)?;
    cfg.apply_overrides(args.seed, args.particles, args.out.clone(), args.format.map(Into::into));
    fs::create_dir_all(&cfg.output.dir)?;
    kind(&cfg)
}

fn create(cfg: &ScenarioConfig, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(cfg.output.path(name))?))
}

/// Write `report` as `<stem>.json` or as flattened `key,value` rows in `<stem>.csv`.
fn write_report<T: Serialize>(cfg: &ScenarioConfig, stem: &str, report: &T) -> Result<()> {
    let mut value = serde_json::to_value(report)?;
    if let Value::Object(map) = &mut value {
        map.insert("config".into(), cfg.document.clone());
        map.insert("run".into(), serde_json::to_value(&cfg.run)?);
    }
    match cfg.output.format {
        OutputFormat::Json => {
            let mut out = create(cfg, &format!("{stem}.json"))?;
            serde_json::to_writer_pretty(&mut out, &value)?;
            writeln!(out)?;
        }
        OutputFormat::Csv => {
            let mut out = create(cfg, &format!("{stem}.csv"))?;
            writeln!(out, "key,value")?;
            let mut rows = Vec::new();
            flatten("", &value, &mut rows);
            for (k, v) in rows {
                writeln!(out, "{k},{v}")?;
            }
        }
    }
    Ok(())
}

fn flatten(prefix: &str, value: &Value, rows: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match value {
        Value::Object(map) => map.iter().for_each(|(k, v)| flatten(&key(k), v, rows)),
        Value::Array(items) => items.iter().enumerate().for_each(|(i, v)| flatten(&key(&i.to_string()), v, rows)),
        Value::String(s) => rows.push((prefix.to_string(), s.clone())),
        Value::Null => rows.push((prefix.to_string(), String::new())),
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

fn require_polar(cfg: &ScenarioConfig, what: &str) -> Result<()> {
    if cfg.chart != ChartKind::Polar {
        return Err(Error::Config(vec![format!("chart: {what} needs the polar chart")]));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EigenstateReport {
    alpha: f64,
    n_r: usize,
    epsilon: f64,
    oscillator_epsilon: Option<f64>,
    relative_error: Option<f64>,
    sign_changes: usize,
    r_loop: f64,
    loop_value: f64,
    winding: Option<i64>,
    quantized: bool,
    quantization_tolerance: f64,
    residual: crate::eigensolver::StationaryResidual,
}

pub fn cmd_eigenstate(cfg: &ScenarioConfig) -> Result<Outcome> {
    require_polar(cfg, "eigenstate")?;
    let StateSpec::Eigenstate { alpha, n_r } = cfg.state else {
        return Err(Error::Config(vec!["state.kind: the eigenstate command needs kind = \"eigenstate\"".into()]));
    };
    let (grid, params) = (&cfg.grid, &cfg.params);
    let spec = solve_radial(grid, alpha, params, n_r)?;
    spec.write_csv(create(cfg, "eigenstate.csv")?)?;
    let fields = spec.stationary_fields(params, grid)?;
    let r_loop = peak_radius(&spec);
    let raw = loop_value(&fields, params, grid, r_loop)?;
    let winding = match winding_number(&fields, params, grid, r_loop) {
        Ok(w) => Some(w.nearest),
        Err(Error::QuantizationViolation { .. }) => None,
        Err(e) => return Err(e),
    };
    let oracle = oscillator_energy(params, alpha, n_r);
    let report = EigenstateReport {
        alpha,
        n_r,
        epsilon: spec.epsilon,
        oscillator_epsilon: oracle,
        relative_error: oracle.map(|e| (spec.epsilon - e).abs() / e),
        sign_changes: spec.sign_changes(),
        r_loop,
        loop_value: raw,
        winding,
        quantized: winding.is_some(),
        quantization_tolerance: QUANTIZATION_TOLERANCE,
        residual: stationary_residual(&spec, params, grid)?,
    };
    write_report(cfg, "eigenstate_report", &report)?;
    Ok(match winding {
        Some(_) => Outcome::Ok,
        None => Outcome::Violation(format!(
            "quantization violation: loop value {raw:.6} at r = {r_loop:.4} is {:.3} from the nearest integer",
            (raw - raw.round()).abs()
        )),
    })
}

fn prepare_fields(cfg: &ScenarioConfig) -> Result<(Array2<f64>, VelocityFields)> {
    let psi = cfg.state.prepare(&cfg.params, &cfg.grid)?;
    let state = decompose(&psi, &cfg.grid)?;
    let fields = velocity_fields(&state, &cfg.params, &cfg.grid);
    Ok((state.rho, fields))
}

fn write_ensemble_rows<W: Write>(mut out: W, state: &str, e: &EnsembleReport) -> Result<()> {
    let rows = [
        ("r", "r", &e.var_r, &e.sigma2_p_r, &e.radial_margin),
        ("theta", "theta", &e.var_theta, &e.sigma2_p_theta, &e.angular_margin),
    ];
    for (q, p, var_q, sigma2, margin) in rows {
        writeln!(
            out,
            "{state},ensemble,{q},{p},{:.12e},{:.12e},,,,,{:.12e},{:.12e}",
            var_q.value, sigma2.value, margin.value, margin.se
        )?;
    }
    Ok(())
}

pub fn cmd_uncertainty(cfg: &ScenarioConfig) -> Result<Outcome> {
    let (rho, fields) = prepare_fields(cfg)?;
    let report = full_report(&rho, &fields, &cfg.grid, &cfg.params)?;
    let ensemble = if cfg.run.particles > 0 {
        require_polar(cfg, "an ensemble")?;
        let particles = sample_from_density(&cfg.grid, &rho, cfg.run.particles, cfg.run.seed)?;
        let positions: Vec<[f64; 2]> = particles.iter().map(Particle::position).collect();
        Some(ensemble_report(&positions, &fields, &cfg.grid, &cfg.params, cfg.r_min)?)
    } else {
        None
    };
    let label = cfg.state.label();
    let mut csv = create(cfg, "uncertainty.csv")?;
    writeln!(csv, "{SUMMARY_HEADER}")?;
    write_summary_csv(&mut csv, &label, &report)?;
    if let Some(e) = &ensemble {
        write_ensemble_rows(&mut csv, &label, e)?;
    }
    csv.flush()?;
    let mut out = create(cfg, "uncertainty.json")?;
    let value = json!({ "state": label, "grid": report, "ensemble": ensemble, "config": cfg.document, "run": cfg.run });
    serde_json::to_writer_pretty(&mut out, &value)?;
    writeln!(out)?;

    let mut problems = Vec::new();
    for b in &report.bounds {
        if b.margin < -MARGIN_TOLERANCE {
            problems.push(format!("grid margin {}/{} = {:.3e}", b.position, b.momentum, b.margin));
        }
    }
    if let Some(e) = &ensemble {
        for (name, m) in [("r", &e.radial_margin), ("theta", &e.angular_margin)] {
            if m.value < -MARGIN_SIGMAS * m.se {
                problems.push(format!("ensemble margin {name} = {:.3e} ± {:.1e}", m.value, m.se));
            }
        }
    }
    Ok(if problems.is_empty() { Outcome::Ok } else { Outcome::Violation(problems.join("; ")) })
}

/// Drift fields along the run: frozen for eigenstates, otherwise snapshots of
/// the propagated state every `schedule_every` steps, plus the density at the
/// end of the run.
fn drift_schedule(cfg: &ScenarioConfig) -> Result<(FieldSchedule, Array2<f64>, Array2<f64>)> {
    let (grid, params) = (&cfg.grid, &cfg.params);
    let psi0 = cfg.state.prepare(params, grid)?;
    let rho0 = psi0.mapv(|z| z.norm_sqr());
    if matches!(cfg.state, StateSpec::Eigenstate { .. }) {
        let (_, fields) = prepare_fields(cfg)?;
        let schedule = FieldSchedule::new(vec![0.0], vec![FieldSampler::new(grid, &fields)?])?;
        return Ok((schedule, rho0.clone(), rho0));
    }
    let dt = cfg.run.dt;
    let prop = Propagator::new(grid, params, dt)?;
    let mut psi = psi0;
    let (mut times, mut samplers) = (Vec::new(), Vec::new());
    for s in 0..=cfg.run.steps {
        if s > 0 {
            prop.step(&mut psi)?;
        }
        if s % cfg.run.schedule_every == 0 || s == cfg.run.steps {
            let state = decompose(&psi, grid)?;
            times.push(s as f64 * dt);
            samplers.push(FieldSampler::new(grid, &velocity_fields(&state, params, grid))?);
        }
    }
    Ok((FieldSchedule::new(times, samplers)?, rho0, psi.mapv(|z| z.norm_sqr())))
}

#[derive(Debug, Serialize)]
struct EnsembleSummary {
    direction: Direction,
    t_start: f64,
    t_end: f64,
    histogram_l1: f64,
    reflection_fraction: f64,
    pooled_forward: crate::sde::drift::PooledEstimate,
    pooled_backward: crate::sde::drift::PooledEstimate,
    uncertainty: Option<EnsembleReport>,
}

fn write_drift_csv<W: Write>(mut out: W, est: &DriftEstimate) -> Result<()> {
    writeln!(out, "kind,r,theta,count,estimated,u_r,se_u_r,u_theta,se_u_theta,p_theta_per_m,se_p_theta_per_m")?;
    let row = |out: &mut W, kind: &str, c: &CellEstimate| -> Result<()> {
        writeln!(
            out,
            "{kind},{:.6e},{:.6e},{},{},{:.9e},{:.3e},{:.9e},{:.3e},{:.9e},{:.3e}",
            c.center[0], c.center[1], c.count, c.estimated, c.mean[0], c.se[0], c.mean[1], c.se[1], c.mean[2], c.se[2]
        )?;
        Ok(())
    };
    for c in &est.forward {
        row(&mut out, "forward", c)?;
    }
    for c in &est.backward {
        row(&mut out, "backward", c)?;
    }
    Ok(())
}

fn write_histogram_csv<W: Write>(mut out: W, grid: &Grid, hist: &Array2<f64>, reference: &Array2<f64>) -> Result<()> {
    writeln!(out, "r,theta,histogram,rho")?;
    for ((i, j), h) in hist.indexed_iter() {
        let q = grid.node(i, j);
        writeln!(out, "{:.9e},{:.9e},{:.9e},{:.9e}", q[0], q[1], h, reference[[i, j]])?;
    }
    Ok(())
}

/// Radius enclosing all but `1e-6` of the mass.
fn support_radius(grid: &Grid, rho: &Array2<f64>) -> f64 {
    let vol = grid.cell_volume();
    let shells: Vec<f64> = rho.outer_iter().zip(vol.outer_iter()).map(|(p, v)| p.dot(&v)).collect();
    let total: f64 = shells.iter().sum();
    let mut outside = 0.0;
    for (i, m) in shells.iter().enumerate().rev() {
        outside += m;
        if outside > 1e-6 * total {
            return grid.axis(0).cell_bounds(i).1;
        }
    }
    grid.axis(0).hi()
}

pub fn cmd_simulate(cfg: &ScenarioConfig) -> Result<Outcome> {
    require_polar(cfg, "simulate")?;
    let run = &cfg.run;
    if run.particles == 0 {
        return Err(Error::Config(vec!["run.particles: simulate needs at least one particle".into()]));
    }
    let (grid, params) = (&cfg.grid, &cfg.params);
    let nu = params.nu();
    let (schedule, rho0, rho_end) = drift_schedule(cfg)?;
    let horizon = run.steps as f64 * run.dt;
    let bins = DriftBins::new(run.bins_r, run.bins_theta, grid.axis(0).hi())?;
    let directions: &[Direction] = match run.direction {
        RunDirection::Forward => &[Direction::Forward],
        RunDirection::Backward => &[Direction::Backward],
        RunDirection::Both => &[Direction::Forward, Direction::Backward],
    };
    let mut summaries = Vec::new();
    for &direction in directions {
        let name = match direction {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        };
        // forward runs start from ρ(0), backward runs from ρ(T)
        let (start, target, t0) = match direction {
            Direction::Forward => (&rho0, &rho_end, 0.0),
            Direction::Backward => (&rho_end, &rho0, horizon),
        };
        let initial = sample_from_density(grid, start, run.particles, run.seed)?;
        let config = EnsembleConfig { particles: run.particles, dt: run.dt, steps: run.steps, seed: run.seed, direction };
        let k = run.trajectory_particles.min(run.particles);
        if k > 0 {
            let paths = run_trajectory(&initial[..k], &schedule as &dyn DriftProvider, nu, &config, t0)?;
            let mut out = create(cfg, &format!("trajectories_{name}.csv"))?;
            writeln!(out, "step,t,particle_id,r,theta_wrapped,winding")?;
            let sign = if direction == Direction::Forward { 1.0 } else { -1.0 };
            for (s, snap) in paths.iter().enumerate() {
                let t = t0 + sign * s as f64 * run.dt;
                for (id, p) in snap.iter().enumerate() {
                    writeln!(out, "{s},{t:.9e},{id},{:.12e},{:.12e},{}", p.r, p.theta(), p.winding())?;
                }
            }
        }
        let result = run_ensemble(&initial, &schedule, nu, &config, t0, Some(bins))?;
        write_snapshot_csv(create(cfg, &format!("final_{name}.csv"))?, &result.particles, result.time)?;
        let positions = result.positions();
        // histogram on the coarse drift bins over the support of the target
        let coarse = Grid::polar_disc(run.bins_r.max(4), run.bins_theta.max(4) + run.bins_theta % 2, support_radius(grid, target))?;
        let hist = estimate_density(&positions, &coarse)?;
        let reference = coarse.sample(|r, t| grid.interpolate(target, [r, t]));
        write_histogram_csv(create(cfg, &format!("histogram_{name}.csv"))?, &coarse, &hist, &reference)?;
        let l1 = histogram_l1(&hist, &coarse, |r, t| grid.interpolate(target, [r, t]), 8);
        let drifts = result.drifts.as_ref().expect("bins were requested").estimate();
        write_drift_csv(create(cfg, &format!("drifts_{name}.csv"))?, &drifts)?;
        let uncertainty = match (direction, &cfg.state) {
            (Direction::Forward, StateSpec::Eigenstate { .. }) if run.particles >= 200 => {
                let (_, fields) = prepare_fields(cfg)?;
                Some(ensemble_report(&positions, &fields, grid, params, cfg.r_min)?)
            }
            _ => None,
        };
        summaries.push(EnsembleSummary {
            direction,
            t_start: t0,
            t_end: result.time,
            histogram_l1: l1,
            reflection_fraction: result.reflection_fraction(),
            pooled_forward: drifts.pooled_forward,
            pooled_backward: drifts.pooled_backward,
            uncertainty,
        });
    }
    write_report(cfg, "simulate_report", &json!({ "state": cfg.state.label(), "ensembles": summaries }))?;
    Ok(Outcome::Ok)
}

#[derive(Debug, Serialize)]
struct EvolveSummary {
    state: String,
    audits: usize,
    skipped: usize,
    max_norm_error: f64,
    max_relative_energy_drift: f64,
    max_continuity_residual: f64,
    max_hydro_radial: Option<f64>,
    max_hydro_angular: Option<f64>,
    min_margin: Option<f64>,
}

pub fn cmd_evolve(cfg: &ScenarioConfig) -> Result<Outcome> {
    require_polar(cfg, "evolve")?;
    let Some(evolve) = cfg.evolve else {
        return Err(Error::Config(vec!["evolve: section missing (evolve.dt, evolve.horizon)".into()]));
    };
    let (grid, params) = (&cfg.grid, &cfg.params);
    let psi0 = cfg.state.prepare(params, grid)?;
    let e0 = Propagator::new(grid, params, evolve.dt)?.energy(&psi0);
    let (psi, records) = evolve_with_audits(&psi0, params, grid, &evolve)?;
    write_audit_csv(create(cfg, "audits.csv")?, &records)?;
    let mut out = create(cfg, "final_density.csv")?;
    writeln!(out, "r,theta,rho")?;
    for ((i, j), z) in psi.indexed_iter() {
        let q = grid.node(i, j);
        writeln!(out, "{:.9e},{:.9e},{:.12e}", q[0], q[1], z.norm_sqr())?;
    }
    out.flush()?;

    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
    let summary = EvolveSummary {
        state: cfg.state.label(),
        audits: records.len(),
        skipped: records.iter().filter(|r| !matches!(r.hydro, HydroStatus::Evaluated { .. })).count(),
        max_norm_error: records.iter().map(|r| (r.norm - 1.0).abs()).fold(0.0, f64::max),
        max_relative_energy_drift: records.iter().map(|r| ((r.energy - e0) / e0).abs()).fold(0.0, f64::max),
        max_continuity_residual: records.iter().map(|r| r.continuity).fold(0.0, f64::max),
        max_hydro_radial: max(&mut records.iter().filter_map(|r| r.hydro.norms().map(|n| n.0))),
        max_hydro_angular: max(&mut records.iter().filter_map(|r| r.hydro.norms().map(|n| n.1))),
        min_margin: records.iter().filter_map(|r| r.min_margin).fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x)))),
    };
    write_report(cfg, "evolve_report", &summary)?;
    Ok(match summary.min_margin {
        Some(m) if m < -MARGIN_TOLERANCE => Outcome::Violation(format!("uncertainty margin {m:.3e} during evolution")),
        _ => Outcome::Ok,
    })
}
