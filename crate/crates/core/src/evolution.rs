//! Time-dependent propagation on the polar grid and hydrodynamic audits.
//!
//! Each angular Fourier mode `m` evolves under the radial operator with
//! `α = m` by Crank–Nicolson, which is unitary in the grid norm and conserves
//! the discrete energy. Audits compare the evolved density and phase against
//! the continuity equation and both hydrodynamic lines.

use std::io::Write;
use std::sync::Arc;

use ndarray::{Array2, Axis as NdAxis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::eigensolver::{radial_operator, weighted_norm, ResidualOptions};
use crate::error::{Error, Result};
use crate::geometry::{AxisKind, ChartKind, Grid, Parity};
use crate::madelung::{
    decompose, floor_mask, norm_squared, osmotic_split, quantum_force_with_nu, quotient_d1, velocity_from_psi,
    PhysicalParams,
};
use crate::tridiag::{ComplexTridiagonalLu, SymTridiagonal};
use crate::uncertainty::full_report;

/// Largest accepted norm change per step.
pub const NORM_DRIFT_LIMIT: f64 = 1e-9;

/// Largest interior flagged-node fraction for which a hydrodynamic audit runs.
pub const AUDIT_FLAG_LIMIT: f64 = 0.05;

/// Crank–Nicolson propagator with prefactorised mode systems.
pub struct Propagator {
    grid: Grid,
    dt: f64,
    hbar: f64,
    sqrt_r: Vec<f64>,
    /// Radial operators indexed by `|m|`.
    operators: Vec<SymTridiagonal>,
    factors: Vec<ComplexTridiagonalLu>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Propagator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Propagator").field("shape", &self.grid.shape()).field("dt", &self.dt).finish()
    }
}

fn mode_of(k: usize, n: usize) -> usize {
    let m = crate::geometry::mode_number(k, n);
    m.unsigned_abs() as usize
}

impl Propagator {
    /// A negative `dt` steps backward in time (the exact inverse of the forward step).
    pub fn new(grid: &Grid, params: &PhysicalParams, dt: f64) -> Result<Self> {
        if grid.chart().kind() != ChartKind::Polar || grid.axis(1).kind() != AxisKind::Periodic {
            return Err(Error::Unsupported("propagation runs on a polar grid".into()));
        }
        if !(dt != 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be finite and nonzero, got {dt}")));
        }
        let n1 = grid.shape().1;
        let hbar = params.hbar();
        let operators: Vec<SymTridiagonal> = (0..=n1 / 2)
            .map(|m| radial_operator(grid.axis(0), m as f64, params))
            .collect::<Result<_>>()?;
        let a = Complex64::new(0.0, 0.5 * dt / hbar);
        let factors = operators
            .iter()
            .map(|op| {
                let off: Vec<Complex64> = op.e.iter().map(|&e| a * e).collect();
                let diag: Vec<Complex64> = op.d.iter().map(|&d| Complex64::new(1.0, 0.0) + a * d).collect();
                ComplexTridiagonalLu::factor(&off, &diag, &off)
            })
            .collect::<Result<_>>()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            grid: grid.clone(),
            dt,
            hbar,
            sqrt_r: grid.axis(0).nodes().iter().map(|r| r.sqrt()).collect(),
            operators,
            factors,
            forward: planner.plan_fft_forward(n1),
            inverse: planner.plan_fft_inverse(n1),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Modes of `√r ψ`, laid out `[k][i]`.
    fn to_modes(&self, psi: &Array2<Complex64>) -> Vec<Vec<Complex64>> {
        let (n0, n1) = self.grid.shape();
        let mut modes = vec![vec![Complex64::new(0.0, 0.0); n0]; n1];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        for (i, row) in psi.axis_iter(NdAxis(0)).enumerate() {
            let mut buf: Vec<Complex64> = row.iter().map(|z| z * self.sqrt_r[i]).collect();
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (k, b) in buf.into_iter().enumerate() {
                modes[k][i] = b;
            }
        }
        modes
    }

    fn assemble_modes(&self, modes: &[Vec<Complex64>], psi: &mut Array2<Complex64>) {
        let n1 = self.grid.shape().1;
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        for (i, mut row) in psi.axis_iter_mut(NdAxis(0)).enumerate() {
            let mut buf: Vec<Complex64> = (0..n1).map(|k| modes[k][i]).collect();
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let s = 1.0 / (n1 as f64 * self.sqrt_r[i]);
            for (z, b) in row.iter_mut().zip(buf) {
                *z = b * s;
            }
        }
    }

    /// Advance by one step, rejecting it if the norm moves by more than
    /// [`NORM_DRIFT_LIMIT`].
    pub fn step(&self, psi: &mut Array2<Complex64>) -> Result<()> {
        let before = norm_squared(psi, &self.grid);
        let n1 = self.grid.shape().1;
        let mut modes = self.to_modes(psi);
        let a = Complex64::new(0.0, 0.5 * self.dt / self.hbar);
        modes.par_iter_mut().enumerate().for_each(|(k, phi)| {
            let m = mode_of(k, n1);
            let op = &self.operators[m];
            let h = op.apply_complex(phi);
            for (p, hp) in phi.iter_mut().zip(h) {
                *p -= a * hp;
            }
            self.factors[m].solve_in_place(phi);
        });
        let mut next = psi.clone();
        self.assemble_modes(&modes, &mut next);
        let after = norm_squared(&next, &self.grid);
        let drift = (after - before).abs() / before;
        if !(drift <= NORM_DRIFT_LIMIT) {
            return Err(Error::NormDrift { drift, limit: NORM_DRIFT_LIMIT });
        }
        *psi = next;
        Ok(())
    }

    /// `⟨ψ|H|ψ⟩ / ⟨ψ|ψ⟩` with the discrete Hamiltonian used for stepping.
    pub fn energy(&self, psi: &Array2<Complex64>) -> f64 {
        let n1 = self.grid.shape().1;
        let modes = self.to_modes(psi);
        let (mut num, mut den) = (0.0, 0.0);
        for (k, phi) in modes.iter().enumerate() {
            let h = self.operators[mode_of(k, n1)].apply_complex(phi);
            num += phi.iter().zip(&h).map(|(p, q)| (p.conj() * q).re).sum::<f64>();
            den += phi.iter().map(|p| p.norm_sqr()).sum::<f64>();
        }
        num / den
    }

    pub fn norm(&self, psi: &Array2<Complex64>) -> f64 {
        norm_squared(psi, &self.grid)
    }
}

impl SymTridiagonal {
    pub(crate) fn apply_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut y = x[i] * self.d[i];
                if i > 0 {
                    y += x[i - 1] * self.e[i - 1];
                }
                if i + 1 < n {
                    y += x[i + 1] * self.e[i];
                }
                y
            })
            .collect()
    }
}

/// One step of a freshly built propagator.
pub fn schrodinger_step(
    psi: &Array2<Complex64>,
    params: &PhysicalParams,
    grid: &Grid,
    dt: f64,
) -> Result<Array2<Complex64>> {
    let prop = Propagator::new(grid, params, dt)?;
    let mut next = psi.clone();
    prop.step(&mut next)?;
    Ok(next)
}

/// `L2` norm of `∂_t ρ + ∇_i(ρ v^i)` between two snapshots `dt` apart: the time
/// derivative is the difference quotient and the divergence the average of
/// both snapshots, both centred at the half step.
pub fn continuity_residual(
    psi_a: &Array2<Complex64>,
    psi_b: &Array2<Complex64>,
    params: &PhysicalParams,
    grid: &Grid,
    dt: f64,
) -> f64 {
    let residual = continuity_field(psi_a, psi_b, params, grid, dt, 1.0);
    grid.integrate_unchecked(&residual.mapv(|x| x * x)).sqrt()
}

/// Continuity residual field with the velocity scaled by `v_scale`.
pub fn continuity_field(
    psi_a: &Array2<Complex64>,
    psi_b: &Array2<Complex64>,
    params: &PhysicalParams,
    grid: &Grid,
    dt: f64,
    v_scale: f64,
) -> Array2<f64> {
    let div = |psi: &Array2<Complex64>| {
        let rho = psi.mapv(|z| z.norm_sqr());
        let v = velocity_from_psi(psi, params, grid);
        grid.divergence(&[&v[0] * &rho * v_scale, &v[1] * &rho * v_scale])
    };
    let rho_a = psi_a.mapv(|z| z.norm_sqr());
    let rho_b = psi_b.mapv(|z| z.norm_sqr());
    (&rho_b - &rho_a) / dt + (div(psi_a) + div(psi_b)) * 0.5
}

/// Default support cut for audits. Far tails carry absolute propagation errors
/// that the quantum force amplifies by `1/√ρ`, while their weight in the norm
/// is below this fraction.
pub const SUPPORT_FRACTION: f64 = 1e-8;

/// Options for hydrodynamic audits.
#[derive(Clone, Copy, Debug)]
pub struct HydroOptions {
    pub core_radius: f64,
    /// Nodes with `ρ` below this fraction of the peak density are left out.
    pub support_fraction: f64,
    /// Diffusivity used in the quantum force; `None` means `ħ/2m`.
    pub nu_override: Option<f64>,
}

impl HydroOptions {
    pub fn for_grid(grid: &Grid) -> Self {
        Self { core_radius: ResidualOptions::for_grid(grid).core_radius, support_fraction: SUPPORT_FRACTION, nu_override: None }
    }
}

/// Outcome of one hydrodynamic audit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum HydroStatus {
    Evaluated { radial: f64, angular: f64, flagged_fraction: f64 },
    Skipped { flagged_fraction: f64 },
    /// The phase winding differs from the initial one; the audit is not attempted.
    WindingChanged { from: i64, to: i64 },
}

impl HydroStatus {
    pub fn norms(&self) -> Option<(f64, f64)> {
        match *self {
            HydroStatus::Evaluated { radial, angular, .. } => Some((radial, angular)),
            HydroStatus::Skipped { .. } | HydroStatus::WindingChanged { .. } => None,
        }
    }
}

/// Fraction of nodes below the amplitude floor that have an above-floor node
/// farther out along the same angle (tails do not count).
pub fn interior_flagged_fraction(rho: &Array2<f64>) -> f64 {
    let below = floor_mask(rho);
    let (n0, n1) = rho.dim();
    let mut count = 0usize;
    for j in 0..n1 {
        let outermost = (0..n0).rev().find(|&i| !below[[i, j]]);
        if let Some(last) = outermost {
            count += (0..last).filter(|&i| below[[i, j]]).count();
        }
    }
    count as f64 / (n0 * n1) as f64
}

/// Pointwise hydrodynamic residuals and the mask of nodes they are trusted on.
#[derive(Clone, Debug)]
pub struct HydroFields {
    pub radial: Array2<f64>,
    pub angular: Array2<f64>,
    pub mask: Array2<bool>,
}

/// Both hydrodynamic lines at the middle snapshot of `(prev, cur, next)`, `dt`
/// apart; the time derivative of the velocity is the centred difference.
pub fn hydro_fields(
    prev: &Array2<Complex64>,
    cur: &Array2<Complex64>,
    next: &Array2<Complex64>,
    params: &PhysicalParams,
    grid: &Grid,
    dt: f64,
    opts: &HydroOptions,
) -> HydroFields {
    let rho = cur.mapv(|z| z.norm_sqr());
    let v = velocity_from_psi(cur, params, grid);
    let vp = velocity_from_psi(prev, params, grid);
    let vn = velocity_from_psi(next, params, grid);
    let dvr_dt = (&vn[0] - &vp[0]) / (2.0 * dt);
    let dvt_dt = (&vn[1] - &vp[1]) / (2.0 * dt);
    let nu = opts.nu_override.unwrap_or(params.nu());
    let force = quantum_force_with_nu(&rho, nu, grid);
    let f = force.contravariant(grid);
    let dvr_r = grid.d0(&v[0], Parity::Odd);
    let dvt_r = grid.d0(&v[1], Parity::Even);
    let [dvr_t, dvt_t] = angular_velocity_derivatives(cur, &rho, &v, params, grid);
    let (n0, n1) = grid.shape();
    let support = opts.support_fraction * rho.iter().cloned().fold(0.0, f64::max);
    let m = params.m();
    let pot = params.potential();
    let mut radial = Array2::zeros((n0, n1));
    let mut angular = Array2::zeros((n0, n1));
    let mut mask = Array2::from_elem((n0, n1), false);
    for i in 0..n0 {
        for j in 0..n1 {
            let r = grid.node(i, j)[0];
            let (vr, vt) = (v[0][[i, j]], v[1][[i, j]]);
            radial[[i, j]] = dvr_dt[[i, j]] + vr * dvr_r[[i, j]] + vt * dvr_t[[i, j]] - r * vt * vt
                + pot.derivative(m, r) / m
                - f[0][[i, j]];
            angular[[i, j]] =
                dvt_dt[[i, j]] + vr * dvt_r[[i, j]] + vt * dvt_t[[i, j]] + 2.0 * vr * vt / r - f[1][[i, j]];
            mask[[i, j]] =
                !force.flagged[[i, j]] && r >= opts.core_radius && i + 1 < n0 && rho[[i, j]] >= support;
        }
    }
    HydroFields { radial, angular, mask }
}

/// `∂_θ v^r` and `∂_θ v^θ` by the quotient rule on `Im(ψ* ∂_k ψ)` and `ρ`,
/// which stay smooth where `v` is zeroed below the floor.
fn angular_velocity_derivatives(
    psi: &Array2<Complex64>,
    rho: &Array2<f64>,
    v: &[Array2<f64>; 2],
    params: &PhysicalParams,
    grid: &Grid,
) -> [Array2<f64>; 2] {
    let below = floor_mask(rho);
    let ginv = grid.inverse_metric();
    let scale = 2.0 * params.nu();
    let current = |d: Array2<Complex64>| {
        ndarray::Zip::from(psi).and(&d).map_collect(|z, dz| (z.conj() * dz).im)
    };
    let n = [current(grid.d0_complex(psi)), current(grid.d1_complex(psi))];
    let mut out = [grid.zeros(), grid.zeros()];
    for k in 0..2 {
        // v^k / (2ν g^{kk}) is the ratio whose derivative is wanted
        let ratio = ndarray::Zip::from(&v[k]).and(&ginv[k]).map_collect(|&x, &g| x / (scale * g));
        out[k] = quotient_d1(&n[k], rho, &ratio, &below, grid) * &ginv[k] * scale;
    }
    out
}

/// Weighted norms of [`hydro_fields`], or a skip report when more than
/// [`AUDIT_FLAG_LIMIT`] of the nodes inside the support are below the floor.
pub fn hydro_residual_at(
    prev: &Array2<Complex64>,
    cur: &Array2<Complex64>,
    next: &Array2<Complex64>,
    params: &PhysicalParams,
    grid: &Grid,
    dt: f64,
    opts: &HydroOptions,
) -> HydroStatus {
    let rho = cur.mapv(|z| z.norm_sqr());
    let flagged_fraction = interior_flagged_fraction(&rho);
    if flagged_fraction > AUDIT_FLAG_LIMIT {
        return HydroStatus::Skipped { flagged_fraction };
    }
    let h = hydro_fields(prev, cur, next, params, grid, dt, opts);
    HydroStatus::Evaluated {
        radial: weighted_norm(grid, &rho, &h.radial, &h.mask),
        angular: weighted_norm(grid, &rho, &h.angular, &h.mask),
        flagged_fraction,
    }
}

/// Audits over a trajectory of snapshots `dt` apart; the end points have no
/// centred derivative and are not audited.
pub fn hydro_residual(
    trajectory: &[Array2<Complex64>],
    params: &PhysicalParams,
    grid: &Grid,
    dt: f64,
    opts: &HydroOptions,
) -> Result<Vec<HydroStatus>> {
    if trajectory.len() < 3 {
        return Err(Error::InsufficientData("hydrodynamic audits need at least three snapshots".into()));
    }
    Ok(trajectory
        .windows(3)
        .map(|w| hydro_residual_at(&w[0], &w[1], &w[2], params, grid, dt, opts))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Steps between audits.
    pub audit_every: usize,
}

impl EvolutionConfig {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.audit_every == 0 {
            return Err(Error::InvalidInput("evolution needs positive dt, horizon and audit cadence".into()));
        }
        if self.steps() < 2 {
            return Err(Error::InvalidInput("horizon shorter than two steps".into()));
        }
        Ok(())
    }
}

/// One row of the audit time series.
#[derive(Clone, Debug, Serialize)]
pub struct AuditRecord {
    pub t: f64,
    pub norm: f64,
    pub energy: f64,
    pub continuity: f64,
    pub hydro: HydroStatus,
    pub winding: Option<i64>,
    pub radial_margin: Option<f64>,
    pub angular_margin: Option<f64>,
    pub min_margin: Option<f64>,
}

/// Largest spacing of the snapshots an audit differentiates in time. Grid-scale
/// components are not resolved in time by Crank–Nicolson at larger steps and
/// bias the centred `∂_t v`.
pub const AUDIT_STEP: f64 = 2.5e-4;

/// Evolve `psi0` and audit every `audit_every` steps. Each audit brackets the
/// current state with snapshots one audit step before and after it.
pub fn evolve_with_audits(
    psi0: &Array2<Complex64>,
    params: &PhysicalParams,
    grid: &Grid,
    config: &EvolutionConfig,
) -> Result<(Array2<Complex64>, Vec<AuditRecord>)> {
    config.validate()?;
    let prop = Propagator::new(grid, params, config.dt)?;
    let delta = config.dt.min(AUDIT_STEP);
    let ahead = Propagator::new(grid, params, delta)?;
    let behind = Propagator::new(grid, params, -delta)?;
    let opts = HydroOptions::for_grid(grid);
    let initial_winding = decompose(psi0, grid).ok().map(|s| s.winding);
    let mut cur = psi0.clone();
    let mut records = Vec::new();
    for s in 1..=config.steps() {
        prop.step(&mut cur)?;
        if s % config.audit_every != 0 {
            continue;
        }
        let mut next = cur.clone();
        ahead.step(&mut next)?;
        let mut prev = cur.clone();
        behind.step(&mut prev)?;
        let continuity = continuity_residual(&cur, &next, params, grid, delta);
        let state = decompose(&cur, grid).ok();
        let winding = state.as_ref().map(|s| s.winding);
        let hydro = match (initial_winding, winding) {
            (Some(from), Some(to)) if from != to => HydroStatus::WindingChanged { from, to },
            (_, None) => HydroStatus::Skipped { flagged_fraction: interior_flagged_fraction(&cur.mapv(|z| z.norm_sqr())) },
            _ => hydro_residual_at(&prev, &cur, &next, params, grid, delta, &opts),
        };
        let margins = state.and_then(|state| {
            let fields = osmotic_split(&velocity_from_psi(&cur, params, grid), &state.rho, params, grid);
            full_report(&state.rho, &fields, grid, params).ok()
        });
        records.push(AuditRecord {
            t: s as f64 * config.dt,
            norm: prop.norm(&cur),
            energy: prop.energy(&cur),
            continuity,
            hydro,
            winding,
            radial_margin: margins.as_ref().and_then(|r| r.bound(0, 0).map(|b| b.margin)),
            angular_margin: margins.as_ref().and_then(|r| r.bound(1, 1).map(|b| b.margin)),
            min_margin: margins.as_ref().map(|r| r.min_margin()),
        });
    }
    Ok((cur, records))
}

/// CSV with one row per audit.
pub fn write_audit_csv<W: Write>(mut out: W, records: &[AuditRecord]) -> Result<()> {
    writeln!(
        out,
        "t,norm,energy,continuity_residual,hydro_status,hydro_radial,hydro_angular,winding,radial_margin,angular_margin,min_margin"
    )?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.12e}")).unwrap_or_default();
    for r in records {
        let (hr, ha) = r.hydro.norms().map_or((None, None), |(a, b)| (Some(a), Some(b)));
        let status = match r.hydro {
            HydroStatus::Evaluated { .. } => "evaluated",
            HydroStatus::Skipped { .. } => "skipped",
            HydroStatus::WindingChanged { .. } => "winding_changed",
        };
        writeln!(
            out,
            "{:.9e},{:.15e},{:.15e},{:.12e},{},{},{},{},{},{},{}",
            r.t,
            r.norm,
            r.energy,
            r.continuity,
            status,
            opt(hr),
            opt(ha),
            r.winding.map(|w| w.to_string()).unwrap_or_default(),
            opt(r.radial_margin),
            opt(r.angular_margin),
            opt(r.min_margin)
        )?;
    }
    Ok(())
}
