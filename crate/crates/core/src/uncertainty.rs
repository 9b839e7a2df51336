//! Stochastic momenta, their variance decomposition, and the
//! Robertson–Schrödinger bounds on two-dimensional charts.
//!
//! Grid statistics use the quadrature of [`Grid`]; angular moments use the
//! wrapped angle with the cut at `θ = 0`, and the same cut carries the boundary
//! term of the bound.

use std::f64::consts::TAU;
use std::io::Write;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{AxisKind, ChartKind, Grid};
use crate::madelung::{PhysicalParams, VelocityFields};

/// Covariant momenta `p^±_i = m g_ij u^j_±`.
#[derive(Clone, Debug)]
pub struct MomentumFields {
    pub plus: [Array2<f64>; 2],
    pub minus: [Array2<f64>; 2],
}

impl MomentumFields {
    /// `(p⁺ + p⁻) / 2 = m g v`.
    pub fn average(&self, i: usize) -> Array2<f64> {
        (&self.plus[i] + &self.minus[i]) * 0.5
    }

    /// `(p⁺ − p⁻) / 2`, the osmotic momentum.
    pub fn half_difference(&self, i: usize) -> Array2<f64> {
        (&self.plus[i] - &self.minus[i]) * 0.5
    }
}

pub fn momentum_fields(fields: &VelocityFields, grid: &Grid, params: &PhysicalParams) -> MomentumFields {
    let g = grid.metric();
    let m = params.m();
    let lower = |u: &[Array2<f64>; 2]| [&u[0] * &g[0] * m, &u[1] * &g[1] * m];
    MomentumFields { plus: lower(&fields.u_plus), minus: lower(&fields.u_minus) }
}

/// `E[p_i] = m ∫ J ρ g_ij v^j`.
pub fn momentum_mean(rho: &Array2<f64>, fields: &VelocityFields, grid: &Grid, params: &PhysicalParams, i: usize) -> f64 {
    let g = &grid.metric()[i];
    let p = &fields.v[i] * g * params.m();
    grid.integrate_unchecked(&(&p * rho))
}

/// Grid expectation helper bound to one density.
struct Expect<'a> {
    grid: &'a Grid,
    rho: &'a Array2<f64>,
}

impl Expect<'_> {
    fn mean(&self, f: &Array2<f64>) -> f64 {
        self.grid.integrate_unchecked(&(f * self.rho))
    }

    /// Two-pass variance of a field.
    fn variance(&self, f: &Array2<f64>) -> f64 {
        let mu = self.mean(f);
        let d = f.mapv(|x| (x - mu) * (x - mu));
        self.mean(&d)
    }

    fn coordinate_mean(&self, i: usize) -> f64 {
        self.grid.moment(self.rho, i, 1)
    }

    fn coordinate_variance(&self, i: usize) -> f64 {
        if self.grid.axis(i).kind() == AxisKind::Periodic {
            let mu = self.coordinate_mean(i);
            (self.grid.moment(self.rho, i, 2) - mu * mu).max(0.0)
        } else {
            let q = self.grid.coordinate(i);
            self.variance(&q)
        }
    }

    /// `E[δq^i f] = E[q^i f] − E[q^i] E[f]`.
    fn coordinate_covariance(&self, i: usize, f: &Array2<f64>) -> f64 {
        let weighted = f * self.rho;
        self.grid.moment(&weighted, i, 1) - self.coordinate_mean(i) * self.mean(f)
    }
}

/// Variances along one coordinate.
#[derive(Clone, Debug, Serialize)]
pub struct CoordinateStats {
    pub coordinate: String,
    pub mean: f64,
    pub position_variance: f64,
    pub momentum_mean: f64,
    pub var_p_plus: f64,
    pub var_p_minus: f64,
    /// `σ²_p = (Δ²p⁺ + Δ²p⁻) / 2`.
    pub sigma2_p: f64,
    /// `Δ²((p⁺ − p⁻)/2)`.
    pub var_half_difference: f64,
    /// `Δ²((p⁺ + p⁻)/2)`.
    pub var_average: f64,
    /// `|σ²_p − Δ²_diff − Δ²_avg| / max(σ²_p, tiny)`.
    pub decomposition_error: f64,
}

/// One evaluated bound `Δ²_{q^i} σ²_{p_j} ≥ RHS`.
#[derive(Clone, Debug, Serialize)]
pub struct BoundReport {
    pub position: String,
    pub momentum: String,
    /// `δ^i_j − flux + christoffel`.
    pub kennard_factor: f64,
    /// `(ħ²/4) |kennard_factor|²`.
    pub kennard_term: f64,
    /// `E[δq^i δp_j]` with `p = (p⁺ + p⁻)/2`.
    pub covariance: f64,
    pub covariance_term: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// `∫ J ρ (q^i − E q^i)` on the lower and upper edge of axis `j`.
    pub flux_lower: f64,
    pub flux_upper: f64,
    /// `∫ J ρ (q^i − E q^i) Γ^k_{jk}`.
    pub christoffel: f64,
}

/// Full grid report.
#[derive(Clone, Debug, Serialize)]
pub struct UncertaintyReport {
    pub chart: ChartKind,
    pub coordinates: Vec<CoordinateStats>,
    pub bounds: Vec<BoundReport>,
    /// `E[r] E[1/r]` on polar charts.
    pub mean_r_times_mean_inverse_r: Option<f64>,
    /// `2π ∫ r ρ(r, 2π) dr` on polar charts.
    pub cut_integral: Option<f64>,
}

impl UncertaintyReport {
    pub fn bound(&self, i: usize, j: usize) -> Option<&BoundReport> {
        let names = self.coordinate_names();
        self.bounds.iter().find(|b| b.position == names[i] && b.momentum == names[j])
    }

    fn coordinate_names(&self) -> Vec<&str> {
        self.coordinates.iter().map(|c| c.coordinate.as_str()).collect()
    }

    pub fn min_margin(&self) -> f64 {
        self.bounds.iter().map(|b| b.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn max_decomposition_error(&self) -> f64 {
        self.coordinates.iter().map(|c| c.decomposition_error).fold(0.0, f64::max)
    }
}

fn check_inputs(rho: &Array2<f64>, grid: &Grid) -> Result<()> {
    let (n0, n1) = grid.shape();
    if rho.shape() != [n0, n1] {
        return Err(Error::InvalidInput("density shape does not match grid".into()));
    }
    let norm = grid.integrate(rho)?;
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!("density is not normalised (norm {norm})")));
    }
    Ok(())
}

/// Position and momentum variances with the decomposition identity.
pub fn variances(
    rho: &Array2<f64>,
    fields: &VelocityFields,
    grid: &Grid,
    params: &PhysicalParams,
) -> Result<Vec<CoordinateStats>> {
    check_inputs(rho, grid)?;
    let p = momentum_fields(fields, grid, params);
    let ex = Expect { grid, rho };
    let names = grid.chart().coordinate_names();
    Ok((0..2)
        .map(|i| {
            let var_p_plus = ex.variance(&p.plus[i]);
            let var_p_minus = ex.variance(&p.minus[i]);
            let sigma2_p = 0.5 * (var_p_plus + var_p_minus);
            let var_half_difference = ex.variance(&p.half_difference(i));
            let var_average = ex.variance(&p.average(i));
            let scale = sigma2_p.max(f64::MIN_POSITIVE);
            CoordinateStats {
                coordinate: names[i].to_string(),
                mean: ex.coordinate_mean(i),
                position_variance: ex.coordinate_variance(i),
                momentum_mean: ex.mean(&p.average(i)),
                var_p_plus,
                var_p_minus,
                sigma2_p,
                var_half_difference,
                var_average,
                decomposition_error: (sigma2_p - var_half_difference - var_average).abs() / scale,
            }
        })
        .collect())
}

/// The general bound for the pair `(q^i, p_j)`:
/// `RHS = (ħ²/4) |δ^i_j − ∫ ∂_j{J ρ (q^i − E q^i)} + ∫ J ρ (q^i − E q^i) Γ^k_{jk}|²
///        + |E[δq^i δp_j]|²`, with the total derivative taken as a boundary flux.
pub fn general_bound(
    rho: &Array2<f64>,
    fields: &VelocityFields,
    grid: &Grid,
    params: &PhysicalParams,
    i: usize,
    j: usize,
) -> Result<BoundReport> {
    if i > 1 || j > 1 {
        return Err(Error::InvalidInput(format!("coordinate indices ({i}, {j}) out of range")));
    }
    let stats = variances(rho, fields, grid, params)?;
    Ok(bound_from_stats(rho, fields, grid, params, &stats, i, j))
}

fn bound_from_stats(
    rho: &Array2<f64>,
    fields: &VelocityFields,
    grid: &Grid,
    params: &PhysicalParams,
    stats: &[CoordinateStats],
    i: usize,
    j: usize,
) -> BoundReport {
    let ex = Expect { grid, rho };
    let names = grid.chart().coordinate_names();
    let mean_i = stats[i].mean;
    let q = grid.coordinate(i);
    let centred = (&q - mean_i) * rho;
    let (flux_lower, flux_upper) = if grid.axis(j).kind() == AxisKind::Periodic {
        // q^i itself jumps by 2π across the cut only when i is the periodic coordinate
        let jump: Option<Vec<f64>> =
            (i == j).then(|| (0..grid.shape().0).map(|r| TAU * rho[[r, 0]]).collect());
        grid.edge_integrals(&centred, j, jump.as_deref())
    } else {
        grid.edge_integrals(&centred, j, None)
    };
    let gamma = &grid.christoffel_trace()[j];
    let christoffel = ex.coordinate_covariance(i, gamma);
    let delta = if i == j { 1.0 } else { 0.0 };
    let kennard_factor = delta - (flux_upper - flux_lower) + christoffel;
    let hbar = params.hbar();
    let kennard_term = 0.25 * hbar * hbar * kennard_factor * kennard_factor;
    let p = momentum_fields(fields, grid, params);
    let covariance = ex.coordinate_covariance(i, &p.average(j));
    let covariance_term = covariance * covariance;
    let lhs = stats[i].position_variance * stats[j].sigma2_p;
    let rhs = kennard_term + covariance_term;
    BoundReport {
        position: names[i].to_string(),
        momentum: names[j].to_string(),
        kennard_factor,
        kennard_term,
        covariance,
        covariance_term,
        lhs,
        rhs,
        margin: lhs - rhs,
        flux_lower,
        flux_upper,
        christoffel,
    }
}

fn require_polar(grid: &Grid) -> Result<()> {
    if grid.chart().kind() != ChartKind::Polar {
        return Err(Error::Unsupported("this bound is defined on the polar chart".into()));
    }
    Ok(())
}

/// Radial bound with `RHS = (ħ²/4)|2 − E[r]E[1/r]|² + |E[δr δp_r]|²`; returns the
/// report and `E[r] E[1/r]`.
pub fn radial_bound(
    rho: &Array2<f64>,
    fields: &VelocityFields,
    grid: &Grid,
    params: &PhysicalParams,
) -> Result<(BoundReport, f64)> {
    require_polar(grid)?;
    let report = general_bound(rho, fields, grid, params, 0, 0)?;
    Ok((report, mean_r_times_mean_inverse_r(rho, grid)))
}

/// Angular bound with `RHS = (ħ²/4)|1 − 2π∫ r ρ(r, 2π) dr|² + |E[δθ δp_θ]|²`;
/// returns the report and the cut integral.
pub fn angular_bound(
    rho: &Array2<f64>,
    fields: &VelocityFields,
    grid: &Grid,
    params: &PhysicalParams,
) -> Result<(BoundReport, f64)> {
    require_polar(grid)?;
    let report = general_bound(rho, fields, grid, params, 1, 1)?;
    Ok((report, cut_integral(rho, grid)))
}

pub fn mean_r_times_mean_inverse_r(rho: &Array2<f64>, grid: &Grid) -> f64 {
    let r = grid.coordinate(0);
    let ex = Expect { grid, rho };
    ex.mean(&r) * ex.mean(&r.mapv(|r| 1.0 / r))
}

/// `2π ∫ r ρ(r, 0) dr` on the grid row at the cut.
pub fn cut_integral(rho: &Array2<f64>, grid: &Grid) -> f64 {
    let h = grid.axis(0).step();
    let jac = grid.jacobian();
    TAU * (0..grid.shape().0).map(|i| jac[[i, 0]] * rho[[i, 0]] * h).sum::<f64>()
}

/// All four pairs plus polar diagnostics.
pub fn full_report(
    rho: &Array2<f64>,
    fields: &VelocityFields,
    grid: &Grid,
    params: &PhysicalParams,
) -> Result<UncertaintyReport> {
    let stats = variances(rho, fields, grid, params)?;
    let bounds = [(0, 0), (1, 1), (0, 1), (1, 0)]
        .iter()
        .map(|&(i, j)| bound_from_stats(rho, fields, grid, params, &stats, i, j))
        .collect();
    let polar = grid.chart().kind() == ChartKind::Polar;
    Ok(UncertaintyReport {
        chart: grid.chart().kind(),
        coordinates: stats,
        bounds,
        mean_r_times_mean_inverse_r: polar.then(|| mean_r_times_mean_inverse_r(rho, grid)),
        cut_integral: polar.then(|| cut_integral(rho, grid)),
    })
}

/// Header of the summary table written by [`write_summary_csv`].
pub const SUMMARY_HEADER: &str =
    "state,source,position,momentum,var_q,sigma2_p,kennard_term,covariance_term,lhs,rhs,margin,margin_se";

/// One summary row per bound.
pub fn write_summary_csv<W: Write>(mut out: W, state: &str, report: &UncertaintyReport) -> Result<()> {
    for b in &report.bounds {
        let qi = report.coordinates.iter().find(|c| c.coordinate == b.position).expect("known coordinate");
        let pj = report.coordinates.iter().find(|c| c.coordinate == b.momentum).expect("known coordinate");
        writeln!(
            out,
            "{state},grid,{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},",
            b.position,
            b.momentum,
            qi.position_variance,
            pj.sigma2_p,
            b.kennard_term,
            b.covariance_term,
            b.lhs,
            b.rhs,
            b.margin
        )?;
    }
    Ok(())
}

/// A statistic with its batch-means standard error.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// `|value − target| / se` (infinite when the error vanishes but the value is off).
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.value - target).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.se
        }
    }
}

/// Polar uncertainty statistics from particle positions.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleReport {
    pub particles: usize,
    pub batches: usize,
    pub var_r: Estimate,
    pub var_theta: Estimate,
    pub sigma2_p_r: Estimate,
    pub sigma2_p_theta: Estimate,
    pub var_half_difference_r: Estimate,
    pub var_average_r: Estimate,
    pub var_half_difference_theta: Estimate,
    pub var_average_theta: Estimate,
    pub mean_r_times_mean_inverse_r: Estimate,
    pub cut_integral: Estimate,
    pub covariance_r: Estimate,
    pub covariance_theta: Estimate,
    pub radial_margin: Estimate,
    pub angular_margin: Estimate,
    /// Fraction of particles with `r < r_min`, whose `1/r` was clipped.
    pub clipped_fraction: f64,
    /// Half-width of the window around the cut used for the cut density.
    pub cut_bandwidth: f64,
}

/// Number of batches used for batch-means errors.
pub const ENSEMBLE_BATCHES: usize = 20;

/// Evaluate the polar statistics on particles `(r, wrapped θ)`. Momenta are the
/// grid fields interpolated to each particle.
pub fn ensemble_report(
    positions: &[[f64; 2]],
    fields: &VelocityFields,
    grid: &Grid,
    params: &PhysicalParams,
    r_min: f64,
) -> Result<EnsembleReport> {
    require_polar(grid)?;
    let batches = ENSEMBLE_BATCHES;
    if positions.len() < 10 * batches {
        return Err(Error::InsufficientData(format!("{} particles for {batches} batches", positions.len())));
    }
    if !(r_min > 0.0) {
        return Err(Error::InvalidInput(format!("r_min must be positive, got {r_min}")));
    }
    let p = momentum_fields(fields, grid, params);
    let fields_at = |q: [f64; 2]| {
        [
            grid.interpolate(&p.plus[0], q),
            grid.interpolate(&p.minus[0], q),
            grid.interpolate(&p.plus[1], q),
            grid.interpolate(&p.minus[1], q),
        ]
    };
    let samples: Vec<Sample> = positions
        .iter()
        .map(|&q| {
            let [ppr, pmr, ppt, pmt] = fields_at(q);
            Sample { r: q[0], theta: q[1], p_plus: [ppr, ppt], p_minus: [pmr, pmt] }
        })
        .collect();
    let bandwidth = std::f64::consts::PI / 16.0;
    let hbar = params.hbar();
    let stats = |s: &[Sample]| BatchStats::compute(s, r_min, bandwidth, hbar);
    let full = stats(&samples);
    let size = samples.len() / batches;
    let parts: Vec<BatchStats> = (0..batches).map(|b| stats(&samples[b * size..(b + 1) * size])).collect();
    let est = |f: fn(&BatchStats) -> f64| {
        let vals: Vec<f64> = parts.iter().map(f).collect();
        let mu = vals.iter().sum::<f64>() / batches as f64;
        let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (batches - 1) as f64;
        Estimate { value: f(&full), se: (var / batches as f64).sqrt() }
    };
    Ok(EnsembleReport {
        particles: samples.len(),
        batches,
        var_r: est(|s| s.var_q[0]),
        var_theta: est(|s| s.var_q[1]),
        sigma2_p_r: est(|s| s.sigma2_p[0]),
        sigma2_p_theta: est(|s| s.sigma2_p[1]),
        var_half_difference_r: est(|s| s.var_diff[0]),
        var_average_r: est(|s| s.var_avg[0]),
        var_half_difference_theta: est(|s| s.var_diff[1]),
        var_average_theta: est(|s| s.var_avg[1]),
        mean_r_times_mean_inverse_r: est(|s| s.r_inv_r),
        cut_integral: est(|s| s.cut),
        covariance_r: est(|s| s.cov[0]),
        covariance_theta: est(|s| s.cov[1]),
        radial_margin: est(|s| s.margin[0]),
        angular_margin: est(|s| s.margin[1]),
        clipped_fraction: full.clipped,
        cut_bandwidth: bandwidth,
    })
}

struct Sample {
    r: f64,
    theta: f64,
    p_plus: [f64; 2],
    p_minus: [f64; 2],
}

struct BatchStats {
    var_q: [f64; 2],
    sigma2_p: [f64; 2],
    var_diff: [f64; 2],
    var_avg: [f64; 2],
    cov: [f64; 2],
    r_inv_r: f64,
    cut: f64,
    margin: [f64; 2],
    clipped: f64,
}

fn sample_var(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let mu = xs.clone().sum::<f64>() / n;
    xs.map(|x| (x - mu) * (x - mu)).sum::<f64>() / n
}

fn sample_cov(xs: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let n = xs.clone().count() as f64;
    let (sx, sy) = xs.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    xs.map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n
}

impl BatchStats {
    fn compute(s: &[Sample], r_min: f64, bandwidth: f64, hbar: f64) -> Self {
        let n = s.len() as f64;
        let q = |k: usize| s.iter().map(move |p| if k == 0 { p.r } else { p.theta });
        let var_q = [sample_var(q(0)), sample_var(q(1))];
        let mut sigma2_p = [0.0; 2];
        let mut var_diff = [0.0; 2];
        let mut var_avg = [0.0; 2];
        let mut cov = [0.0; 2];
        for k in 0..2 {
            let vp = sample_var(s.iter().map(|p| p.p_plus[k]));
            let vm = sample_var(s.iter().map(|p| p.p_minus[k]));
            sigma2_p[k] = 0.5 * (vp + vm);
            var_diff[k] = sample_var(s.iter().map(|p| 0.5 * (p.p_plus[k] - p.p_minus[k])));
            var_avg[k] = sample_var(s.iter().map(|p| 0.5 * (p.p_plus[k] + p.p_minus[k])));
            cov[k] = sample_cov(q(k).zip(s.iter().map(|p| 0.5 * (p.p_plus[k] + p.p_minus[k]))));
        }
        let clipped = s.iter().filter(|p| p.r < r_min).count() as f64 / n;
        let mean_r = s.iter().map(|p| p.r).sum::<f64>() / n;
        let mean_inv = s.iter().map(|p| 1.0 / p.r.max(r_min)).sum::<f64>() / n;
        let near_cut = s.iter().filter(|p| p.theta < bandwidth || p.theta > TAU - bandwidth).count() as f64;
        let cut = TAU * near_cut / (n * 2.0 * bandwidth);
        let r_inv_r = mean_r * mean_inv;
        let k2 = 0.25 * hbar * hbar;
        let margin = [
            var_q[0] * sigma2_p[0] - k2 * (2.0 - r_inv_r).powi(2) - cov[0] * cov[0],
            var_q[1] * sigma2_p[1] - k2 * (1.0 - cut).powi(2) - cov[1] * cov[1],
        ];
        Self { var_q, sigma2_p, var_diff, var_avg, cov, r_inv_r, cut, margin, clipped }
    }
}
