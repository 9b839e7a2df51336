//! Forward and backward stochastic particle ensembles in polar coordinates.
//!
//! Each step is Euler–Maruyama with the Cartesian noise pair rotated into the
//! polar frame at the pre-step angle. Particles are independent between
//! reductions; every particle owns a noise stream keyed by its index, and
//! reductions run over fixed chunks merged in index order, so results do not
//! depend on the number of worker threads.

pub mod drift;
pub mod noise;

use std::f64::consts::TAU;
use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, ChartKind, Grid};
use crate::madelung::VelocityFields;

pub use drift::{estimate_drifts, CellEstimate, DriftAccumulator, DriftBins, DriftEstimate, PooledEstimate};
pub use noise::NoiseStream;

/// Particles per work unit.
const CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub r: f64,
    pub theta_unwrapped: f64,
}

impl Particle {
    pub fn new(r: f64, theta: f64) -> Self {
        Self { r, theta_unwrapped: theta }
    }

    pub fn winding(&self) -> i64 {
        (self.theta_unwrapped / TAU).floor() as i64
    }

    /// Angle in `[0, 2π)`.
    pub fn theta(&self) -> f64 {
        wrap_angle(self.theta_unwrapped - TAU * self.winding() as f64)
    }

    pub fn position(&self) -> [f64; 2] {
        [self.r, self.theta()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Contravariant drift `u_±` at a point and time.
pub trait DriftProvider: Sync {
    fn drift(&self, q: [f64; 2], t: f64, direction: Direction) -> [f64; 2];
}

/// Bilinear interpolation of grid drift fields. The angular component is
/// interpolated in covariant form `r² u^θ`, which stays bounded at the origin.
#[derive(Clone, Debug)]
pub struct FieldSampler {
    grid: Grid,
    radial: [Array2<f64>; 2],
    angular_covariant: [Array2<f64>; 2],
}

impl FieldSampler {
    pub fn new(grid: &Grid, fields: &VelocityFields) -> Result<Self> {
        if grid.chart().kind() != ChartKind::Polar {
            return Err(Error::Unsupported("particle ensembles run on the polar chart".into()));
        }
        let r2 = grid.metric()[1].clone();
        Ok(Self {
            grid: grid.clone(),
            radial: [fields.u_plus[0].clone(), fields.u_minus[0].clone()],
            angular_covariant: [&fields.u_plus[1] * &r2, &fields.u_minus[1] * &r2],
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

impl DriftProvider for FieldSampler {
    fn drift(&self, q: [f64; 2], _t: f64, direction: Direction) -> [f64; 2] {
        let k = match direction {
            Direction::Forward => 0,
            Direction::Backward => 1,
        };
        let ur = self.grid.interpolate(&self.radial[k], q);
        let cov = self.grid.interpolate(&self.angular_covariant[k], q);
        [ur, cov / (q[0] * q[0])]
    }
}

/// Piecewise-constant-in-time drift from snapshots at increasing times.
#[derive(Clone, Debug)]
pub struct FieldSchedule {
    pub times: Vec<f64>,
    pub samplers: Vec<FieldSampler>,
}

impl FieldSchedule {
    pub fn new(times: Vec<f64>, samplers: Vec<FieldSampler>) -> Result<Self> {
        if times.is_empty() || times.len() != samplers.len() || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("schedule needs increasing times, one sampler each".into()));
        }
        Ok(Self { times, samplers })
    }
}

impl DriftProvider for FieldSchedule {
    fn drift(&self, q: [f64; 2], t: f64, direction: Direction) -> [f64; 2] {
        // nearest snapshot in time
        let k = self.times.partition_point(|&s| s < t);
        let k = if k == 0 {
            0
        } else if k == self.times.len() || t - self.times[k - 1] <= self.times[k] - t {
            k - 1
        } else {
            k
        };
        self.samplers[k].drift(q, t, direction)
    }
}

/// Drift `(0, 0)` everywhere: pure noise.
#[derive(Clone, Copy, Debug)]
pub struct ZeroDrift;

impl DriftProvider for ZeroDrift {
    fn drift(&self, _q: [f64; 2], _t: f64, _direction: Direction) -> [f64; 2] {
        [0.0, 0.0]
    }
}

/// Constant contravariant drift.
#[derive(Clone, Copy, Debug)]
pub struct ConstantDrift(pub [f64; 2]);

impl DriftProvider for ConstantDrift {
    fn drift(&self, _q: [f64; 2], _t: f64, _direction: Direction) -> [f64; 2] {
        self.0
    }
}

/// Result of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub particle: Particle,
    pub reflected: bool,
}

/// Rotate a Cartesian pair into the polar frame at angle `theta`.
pub fn rotate_noise(xi: [f64; 2], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * xi[0] + s * xi[1], -s * xi[0] + c * xi[1]]
}

fn reflect(r: f64, theta: f64) -> Step {
    let reflected = r <= 0.0;
    let r = if reflected { (-r).max(f64::MIN_POSITIVE) } else { r };
    Step { particle: Particle { r, theta_unwrapped: theta }, reflected }
}

/// `dr = u^r_+ dt + (ν/r) dt + √(2ν dt) ξ^r`, `dθ = u^θ_+ dt + (√(2ν dt)/r) ξ^θ`.
pub fn forward_step(p: &Particle, u_plus: [f64; 2], nu: f64, dt: f64, xi: [f64; 2]) -> Step {
    let [xr, xt] = rotate_noise(xi, p.theta_unwrapped);
    let amp = (2.0 * nu * dt).sqrt();
    let r = p.r + (u_plus[0] + nu / p.r) * dt + amp * xr;
    let theta = p.theta_unwrapped + u_plus[1] * dt + amp / p.r * xt;
    reflect(r, theta)
}

/// Backward step over `|dt|`: `r ← r − u^r_− |dt| + (ν/r)|dt| + √(2ν|dt|) ξ^r`,
/// `θ ← θ − u^θ_− |dt| + (√(2ν|dt|)/r) ξ^θ`.
pub fn backward_step(p: &Particle, u_minus: [f64; 2], nu: f64, dt: f64, xi: [f64; 2]) -> Step {
    let tau = dt.abs();
    let [xr, xt] = rotate_noise(xi, p.theta_unwrapped);
    let amp = (2.0 * nu * tau).sqrt();
    let r = p.r - u_minus[0] * tau + nu / p.r * tau + amp * xr;
    let theta = p.theta_unwrapped - u_minus[1] * tau + amp / p.r * xt;
    reflect(r, theta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub particles: usize,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub direction: Direction,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidInput("particle count must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Largest step with angular noise below one cell at `r_min`:
/// `0.01 · min(r_min², 1) / 2ν`.
pub fn default_dt(r_min: f64, nu: f64) -> f64 {
    0.01 * (r_min * r_min).min(1.0) / (2.0 * nu)
}

/// An evolved ensemble.
#[derive(Clone, Debug)]
pub struct EnsembleRun {
    pub particles: Vec<Particle>,
    /// Elapsed time, negative for backward runs.
    pub time: f64,
    pub config: EnsembleConfig,
    pub reflections: u64,
    pub steps_taken: u64,
    /// Present when drift recording was requested.
    pub drifts: Option<DriftAccumulator>,
}

impl EnsembleRun {
    pub fn reflection_fraction(&self) -> f64 {
        let total = self.steps_taken as f64 * self.particles.len() as f64;
        if total == 0.0 {
            0.0
        } else {
            self.reflections as f64 / total
        }
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.particles.iter().map(Particle::position).collect()
    }
}

/// Evolve `initial` for `config.steps` steps. Particle `k` draws its noise from
/// `NoiseStream::new(config.seed, k)`. With `bins`, every transition is fed to
/// a drift accumulator.
pub fn run_ensemble(
    initial: &[Particle],
    provider: &dyn DriftProvider,
    nu: f64,
    config: &EnsembleConfig,
    t0: f64,
    bins: Option<DriftBins>,
) -> Result<EnsembleRun> {
    config.validate()?;
    if initial.len() != config.particles {
        return Err(Error::InvalidInput(format!(
            "{} initial particles for a configured count of {}",
            initial.len(),
            config.particles
        )));
    }
    if let Some(k) = initial.iter().position(|p| !(p.r > 0.0 && p.theta_unwrapped.is_finite())) {
        return Err(Error::InvalidInput(format!("particle {k} starts outside r > 0")));
    }
    let dt = config.dt;
    let direction = config.direction;
    let mut particles = initial.to_vec();
    let results: Vec<(u64, Option<DriftAccumulator>)> = particles
        .par_chunks_mut(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut reflections = 0u64;
            let mut acc = bins.map(|b| DriftAccumulator::new(b, nu, dt));
            for (k, p) in chunk.iter_mut().enumerate() {
                let index = (c * CHUNK + k) as u64;
                let mut noise = NoiseStream::new(config.seed, index);
                for s in 0..config.steps {
                    let xi = noise.normal_pair();
                    let q = p.position();
                    let step = match direction {
                        Direction::Forward => {
                            let t = t0 + s as f64 * dt;
                            forward_step(p, provider.drift(q, t, direction), nu, dt, xi)
                        }
                        Direction::Backward => {
                            let t = t0 - s as f64 * dt;
                            backward_step(p, provider.drift(q, t, direction), nu, dt, xi)
                        }
                    };
                    reflections += step.reflected as u64;
                    if let Some(acc) = acc.as_mut() {
                        match direction {
                            Direction::Forward => acc.record(p, &step.particle),
                            Direction::Backward => acc.record(&step.particle, p),
                        }
                    }
                    *p = step.particle;
                }
            }
            (reflections, acc)
        })
        .collect();
    let mut reflections = 0;
    let mut drifts: Option<DriftAccumulator> = None;
    for (r, acc) in results {
        reflections += r;
        if let Some(acc) = acc {
            match drifts.as_mut() {
                Some(d) => d.merge(&acc),
                None => drifts = Some(acc),
            }
        }
    }
    let elapsed = config.steps as f64 * dt;
    Ok(EnsembleRun {
        particles,
        time: t0 + if direction == Direction::Forward { elapsed } else { -elapsed },
        config: *config,
        reflections,
        steps_taken: config.steps as u64,
        drifts,
    })
}

/// Store every snapshot of a run (memory grows with `steps · particles`). The
/// paths coincide with those of [`run_ensemble`] under the same config.
pub fn run_trajectory(
    initial: &[Particle],
    provider: &dyn DriftProvider,
    nu: f64,
    config: &EnsembleConfig,
    t0: f64,
) -> Result<Vec<Vec<Particle>>> {
    config.validate()?;
    let dt = config.dt;
    let paths: Vec<Vec<Particle>> = initial
        .par_iter()
        .enumerate()
        .map(|(k, p0)| {
            let mut noise = NoiseStream::new(config.seed, k as u64);
            let mut path = Vec::with_capacity(config.steps + 1);
            let mut p = *p0;
            path.push(p);
            for s in 0..config.steps {
                let xi = noise.normal_pair();
                let q = p.position();
                p = match config.direction {
                    Direction::Forward => {
                        forward_step(&p, provider.drift(q, t0 + s as f64 * dt, config.direction), nu, dt, xi)
                    }
                    Direction::Backward => {
                        backward_step(&p, provider.drift(q, t0 - s as f64 * dt, config.direction), nu, dt, xi)
                    }
                }
                .particle;
                path.push(p);
            }
            path
        })
        .collect();
    Ok((0..=config.steps).map(|s| paths.iter().map(|path| path[s]).collect()).collect())
}

/// Draw particles from a grid density: a cell is chosen with probability
/// `ρ J ΔA` and the point is placed uniformly (in area) inside it.
pub fn sample_from_density(grid: &Grid, rho: &Array2<f64>, count: usize, seed: u64) -> Result<Vec<Particle>> {
    if grid.chart().kind() != ChartKind::Polar {
        return Err(Error::Unsupported("sampling needs a polar grid".into()));
    }
    if rho.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(Error::InvalidInput("density must be finite and nonnegative".into()));
    }
    let vol = grid.cell_volume();
    let mut cdf = Vec::with_capacity(rho.len());
    let mut acc = 0.0;
    for (p, w) in rho.iter().zip(vol.iter()) {
        acc += p * w;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::ZeroWaveFunction);
    }
    let n1 = grid.shape().1;
    let ra = grid.axis(0);
    let ta = grid.axis(1);
    Ok((0..count)
        .into_par_iter()
        .map(|k| {
            let mut s = NoiseStream::sampling(seed, k as u64);
            let u = s.uniform() * acc;
            let cell = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            let (i, j) = (cell / n1, cell % n1);
            let (a, b) = ra.cell_bounds(i);
            let r = (a * a + s.uniform() * (b * b - a * a)).sqrt().max(f64::MIN_POSITIVE);
            let (ta0, ta1) = ta.cell_bounds(j);
            let theta = wrap_angle(ta0 + s.uniform() * (ta1 - ta0));
            Particle::new(r, theta)
        })
        .collect())
}

/// Histogram density on a polar grid: counts over `N` and cell volume. Points
/// outside the radial range are dropped.
pub fn estimate_density(positions: &[[f64; 2]], grid: &Grid) -> Result<Array2<f64>> {
    if grid.chart().kind() != ChartKind::Polar {
        return Err(Error::Unsupported("histograms are built on a polar grid".into()));
    }
    if positions.is_empty() {
        return Err(Error::InsufficientData("no particles".into()));
    }
    let mut counts = grid.zeros();
    for q in positions {
        if let (Some(i), Some(j)) = (grid.axis(0).cell_of(q[0]), grid.axis(1).cell_of(q[1])) {
            counts[[i, j]] += 1.0;
        }
    }
    let n = positions.len() as f64;
    Ok(counts / grid.cell_volume() / n)
}

/// `Σ |ρ̂ − ρ| ΔV` with the reference averaged over each histogram cell by an
/// `s × s` midpoint rule.
pub fn histogram_l1(hist: &Array2<f64>, grid: &Grid, reference: impl Fn(f64, f64) -> f64, s: usize) -> f64 {
    let (n0, n1) = grid.shape();
    let mut total = 0.0;
    for i in 0..n0 {
        let (a, b) = grid.axis(0).cell_bounds(i);
        for j in 0..n1 {
            let (c, d) = grid.axis(1).cell_bounds(j);
            let mut mass = 0.0;
            for u in 0..s {
                let r = a + (u as f64 + 0.5) * (b - a) / s as f64;
                for v in 0..s {
                    let t = c + (v as f64 + 0.5) * (d - c) / s as f64;
                    mass += reference(r, wrap_angle(t)) * r;
                }
            }
            mass *= (b - a) * (d - c) / (s * s) as f64;
            total += (hist[[i, j]] * grid.cell_volume()[[i, j]] - mass).abs();
        }
    }
    total
}

/// One-step increment moments from a fixed state under pure noise.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StepMoments {
    pub mean_dr: f64,
    pub se_mean_dr: f64,
    pub var_dtheta: f64,
    pub se_var_dtheta: f64,
}

/// Draw `trials` single steps from `p` and return the sample moments of
/// `dr` and `dθ` with standard errors.
pub fn one_step_moments(
    p: &Particle,
    provider: &dyn DriftProvider,
    nu: f64,
    dt: f64,
    direction: Direction,
    trials: usize,
    seed: u64,
) -> StepMoments {
    let q = p.position();
    let u = provider.drift(q, 0.0, direction);
    let incs: Vec<[f64; 2]> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let xi = NoiseStream::new(seed, k as u64).normal_pair();
            let step = match direction {
                Direction::Forward => forward_step(p, u, nu, dt, xi),
                Direction::Backward => backward_step(p, u, nu, dt, xi),
            };
            [step.particle.r - p.r, step.particle.theta_unwrapped - p.theta_unwrapped]
        })
        .collect();
    let n = trials as f64;
    let mean_dr = incs.iter().map(|d| d[0]).sum::<f64>() / n;
    let var_dr = incs.iter().map(|d| (d[0] - mean_dr).powi(2)).sum::<f64>() / (n - 1.0);
    let mean_dt = incs.iter().map(|d| d[1]).sum::<f64>() / n;
    let dev: Vec<f64> = incs.iter().map(|d| (d[1] - mean_dt).powi(2)).collect();
    let var_dtheta = dev.iter().sum::<f64>() / (n - 1.0);
    let var_dev = dev.iter().map(|x| (x - var_dtheta).powi(2)).sum::<f64>() / (n - 1.0);
    StepMoments {
        mean_dr,
        se_mean_dr: (var_dr / n).sqrt(),
        var_dtheta,
        se_var_dtheta: (var_dev / n).sqrt(),
    }
}

/// CSV rows `particle_id, t, r, theta_wrapped, winding`.
pub fn write_snapshot_csv<W: Write>(mut out: W, particles: &[Particle], t: f64) -> Result<()> {
    writeln!(out, "particle_id,t,r,theta_wrapped,winding")?;
    for (k, p) in particles.iter().enumerate() {
        writeln!(out, "{k},{t:.9e},{:.12e},{:.12e},{}", p.r, p.theta(), p.winding())?;
    }
    Ok(())
}
