//! Conditional-increment estimates of the forward and backward drifts.
//!
//! A transition `q → q'` over `dt` contributes to the forward drift of the cell
//! holding `q` and to the backward drift of the cell holding `q'`. The radial
//! `±ν/r` term is removed so that the estimates target `u^r_±`.

use std::f64::consts::TAU;

use serde::Serialize;

use super::Particle;
use crate::error::{Error, Result};
use crate::geometry::wrap_angle;

/// Minimum visits for a cell estimate.
pub const MIN_VISITS: u64 = 30;

/// Components of one increment: `u^r`, contravariant `u^θ`, covariant `r² u^θ`.
const COMPONENTS: usize = 3;

/// Polar binning on `[0, r_max) × [0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DriftBins {
    pub n_r: usize,
    pub n_theta: usize,
    pub r_max: f64,
}

impl DriftBins {
    pub fn new(n_r: usize, n_theta: usize, r_max: f64) -> Result<Self> {
        if n_r == 0 || n_theta == 0 || !(r_max > 0.0) {
            return Err(Error::InvalidInput("drift bins need positive counts and radius".into()));
        }
        Ok(Self { n_r, n_theta, r_max })
    }

    pub fn len(&self) -> usize {
        self.n_r * self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self, r: f64, theta: f64) -> Option<usize> {
        if !(r >= 0.0 && r < self.r_max) {
            return None;
        }
        let i = ((r / self.r_max) * self.n_r as f64) as usize;
        let j = ((wrap_angle(theta) / TAU) * self.n_theta as f64) as usize;
        Some(i.min(self.n_r - 1) * self.n_theta + j.min(self.n_theta - 1))
    }

    pub fn center(&self, cell: usize) -> [f64; 2] {
        let (i, j) = (cell / self.n_theta, cell % self.n_theta);
        [
            (i as f64 + 0.5) * self.r_max / self.n_r as f64,
            (j as f64 + 0.5) * TAU / self.n_theta as f64,
        ]
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Sums {
    count: u64,
    sum: [f64; COMPONENTS],
    sum_sq: [f64; COMPONENTS],
}

impl Sums {
    fn add(&mut self, x: [f64; COMPONENTS]) {
        self.count += 1;
        for ((s, q), x) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(x) {
            *s += x;
            *q += x * x;
        }
    }

    fn merge(&mut self, o: &Sums) {
        self.count += o.count;
        for k in 0..COMPONENTS {
            self.sum[k] += o.sum[k];
            self.sum_sq[k] += o.sum_sq[k];
        }
    }

    fn estimate(&self) -> ([f64; COMPONENTS], [f64; COMPONENTS]) {
        let n = self.count as f64;
        let mut mean = [f64::NAN; COMPONENTS];
        let mut se = [f64::NAN; COMPONENTS];
        if self.count >= 2 {
            for k in 0..COMPONENTS {
                mean[k] = self.sum[k] / n;
                let var = ((self.sum_sq[k] - n * mean[k] * mean[k]) / (n - 1.0)).max(0.0);
                se[k] = (var / n).sqrt();
            }
        }
        (mean, se)
    }
}

/// Streaming accumulator of conditional increments.
#[derive(Clone, Debug)]
pub struct DriftAccumulator {
    bins: DriftBins,
    nu: f64,
    dt: f64,
    forward: Vec<Sums>,
    backward: Vec<Sums>,
    pooled_forward: Sums,
    pooled_backward: Sums,
}

impl DriftAccumulator {
    pub fn new(bins: DriftBins, nu: f64, dt: f64) -> Self {
        Self {
            bins,
            nu,
            dt,
            forward: vec![Sums::default(); bins.len()],
            backward: vec![Sums::default(); bins.len()],
            pooled_forward: Sums::default(),
            pooled_backward: Sums::default(),
        }
    }

    /// Record one forward-in-time transition `pre → post` over `dt`.
    pub fn record(&mut self, pre: &Particle, post: &Particle) {
        let dr = post.r - pre.r;
        let dtheta = post.theta_unwrapped - pre.theta_unwrapped;
        let dt = self.dt;
        let fwd = [dr / dt - self.nu / pre.r, dtheta / dt, pre.r * pre.r * dtheta / dt];
        let bwd = [dr / dt + self.nu / post.r, dtheta / dt, post.r * post.r * dtheta / dt];
        if let Some(c) = self.bins.cell(pre.r, pre.theta_unwrapped) {
            self.forward[c].add(fwd);
        }
        if let Some(c) = self.bins.cell(post.r, post.theta_unwrapped) {
            self.backward[c].add(bwd);
        }
        self.pooled_forward.add(fwd);
        self.pooled_backward.add(bwd);
    }

    pub fn merge(&mut self, other: &DriftAccumulator) {
        for (a, b) in self.forward.iter_mut().zip(&other.forward) {
            a.merge(b);
        }
        for (a, b) in self.backward.iter_mut().zip(&other.backward) {
            a.merge(b);
        }
        self.pooled_forward.merge(&other.pooled_forward);
        self.pooled_backward.merge(&other.pooled_backward);
    }

    pub fn transitions(&self) -> u64 {
        self.pooled_forward.count
    }

    pub fn estimate(&self) -> DriftEstimate {
        let cells = |sums: &[Sums]| {
            sums.iter()
                .enumerate()
                .map(|(c, s)| {
                    let (mean, se) = s.estimate();
                    CellEstimate { center: self.bins.center(c), count: s.count, mean, se, estimated: s.count >= MIN_VISITS }
                })
                .collect()
        };
        let pooled = |s: &Sums| {
            let (mean, se) = s.estimate();
            PooledEstimate { count: s.count, mean, se }
        };
        DriftEstimate {
            bins: self.bins,
            forward: cells(&self.forward),
            backward: cells(&self.backward),
            pooled_forward: pooled(&self.pooled_forward),
            pooled_backward: pooled(&self.pooled_backward),
        }
    }
}

/// Drift estimate in one cell. Components: `u^r`, `u^θ`, `r² u^θ`.
#[derive(Clone, Debug, Serialize)]
pub struct CellEstimate {
    pub center: [f64; 2],
    pub count: u64,
    pub mean: [f64; COMPONENTS],
    pub se: [f64; COMPONENTS],
    /// `false` when the cell has fewer than [`MIN_VISITS`] visits.
    pub estimated: bool,
}

/// Average over every transition regardless of cell.
#[derive(Clone, Debug, Serialize)]
pub struct PooledEstimate {
    pub count: u64,
    pub mean: [f64; COMPONENTS],
    pub se: [f64; COMPONENTS],
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftEstimate {
    pub bins: DriftBins,
    pub forward: Vec<CellEstimate>,
    pub backward: Vec<CellEstimate>,
    pub pooled_forward: PooledEstimate,
    pub pooled_backward: PooledEstimate,
}

/// Estimate drifts from stored snapshots taken every `dt`.
pub fn estimate_drifts(trajectory: &[Vec<Particle>], dt: f64, nu: f64, bins: DriftBins) -> Result<DriftEstimate> {
    if trajectory.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least two snapshots, got {}",
            trajectory.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    let n = trajectory[0].len();
    if trajectory.iter().any(|s| s.len() != n) {
        return Err(Error::InvalidInput("snapshots differ in particle count".into()));
    }
    let mut acc = DriftAccumulator::new(bins, nu, dt);
    for w in trajectory.windows(2) {
        for (a, b) in w[0].iter().zip(&w[1]) {
            acc.record(a, b);
        }
    }
    Ok(acc.estimate())
}
