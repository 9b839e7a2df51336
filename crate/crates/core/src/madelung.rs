//! Hydrodynamic representation `ψ = √ρ e^{iΘ}`: density, phase, current and
//! osmotic velocities, and the quantum force.

use std::f64::consts::TAU;
use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_phase, AxisKind, ChartKind, Grid, Parity};

/// Nodes with `ρ < AMPLITUDE_FLOOR · max ρ` are excluded from log-derivatives.
pub const AMPLITUDE_FLOOR: f64 = 1e-12;

/// Radial potentials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Potential {
    /// `V = m ω² r² / 2`.
    Harmonic { omega: f64 },
    Free,
}

impl Potential {
    pub fn value(&self, m: f64, r: f64) -> f64 {
        match *self {
            Potential::Harmonic { omega } => 0.5 * m * omega * omega * r * r,
            Potential::Free => 0.0,
        }
    }

    /// `dV/dr`.
    pub fn derivative(&self, m: f64, r: f64) -> f64 {
        match *self {
            Potential::Harmonic { omega } => m * omega * omega * r,
            Potential::Free => 0.0,
        }
    }
}

/// Mass, Planck constant and potential. The diffusivity is always `ħ / 2m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    m: f64,
    hbar: f64,
    potential: Potential,
}

impl PhysicalParams {
    pub fn new(m: f64, hbar: f64, potential: Potential) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidInput(format!("mass must be positive, got {m}")));
        }
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidInput(format!("hbar must be positive, got {hbar}")));
        }
        if let Potential::Harmonic { omega } = potential {
            if !(omega > 0.0 && omega.is_finite()) {
                return Err(Error::InvalidInput(format!("omega must be positive, got {omega}")));
            }
        }
        Ok(Self { m, hbar, potential })
    }

    /// `ħ = m = ω = 1` oscillator.
    pub fn natural_oscillator() -> Self {
        Self { m: 1.0, hbar: 1.0, potential: Potential::Harmonic { omega: 1.0 } }
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn nu(&self) -> f64 {
        self.hbar / (2.0 * self.m)
    }

    pub fn potential(&self) -> Potential {
        self.potential
    }

    pub fn with_potential(self, potential: Potential) -> Self {
        Self { potential, ..self }
    }
}

/// Density and velocity potential on a grid, with the global winding `N_w`
/// such that `Θ(r, θ + 2π) = Θ(r, θ) + 2π N_w`.
#[derive(Clone, Debug)]
pub struct MadelungState {
    pub rho: Array2<f64>,
    pub phase: Array2<f64>,
    pub winding: i64,
    /// Nodes below the amplitude floor.
    pub flagged: Array2<bool>,
}

impl MadelungState {
    /// State with a given density and phase; the density is normalised.
    pub fn new(grid: &Grid, rho: Array2<f64>, phase: Array2<f64>, winding: i64) -> Result<Self> {
        if rho.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidInput("density must be nonnegative".into()));
        }
        let norm = grid.integrate(&rho)?;
        if !(norm > 0.0) {
            return Err(Error::ZeroWaveFunction);
        }
        let rho = rho / norm;
        let flagged = floor_mask(&rho);
        Ok(Self { rho, phase, winding, flagged })
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }
}

/// `true` where `ρ < AMPLITUDE_FLOOR · max ρ`.
pub fn floor_mask(rho: &Array2<f64>) -> Array2<bool> {
    let max = rho.iter().cloned().fold(0.0, f64::max);
    let floor = AMPLITUDE_FLOOR * max;
    rho.mapv(|p| !(p >= floor) || p == 0.0)
}

/// `∫ J |ψ|²`.
pub fn norm_squared(psi: &Array2<Complex64>, grid: &Grid) -> f64 {
    grid.integrate_unchecked(&psi.mapv(|z| z.norm_sqr()))
}

/// `ψ / ‖ψ‖`.
pub fn normalize(psi: &Array2<Complex64>, grid: &Grid) -> Result<Array2<Complex64>> {
    if let Some(((i, j), _)) = psi.indexed_iter().find(|(_, z)| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFinite(i, j));
    }
    let n = norm_squared(psi, grid);
    if !(n > 0.0) {
        return Err(Error::ZeroWaveFunction);
    }
    Ok(psi / n.sqrt())
}

/// `ψ ↦ (ρ, Θ, N_w)`. The phase is unwrapped along each angular row and the
/// rows are then aligned radially; the winding is the majority over rows that
/// stay above the amplitude floor.
pub fn decompose(psi: &Array2<Complex64>, grid: &Grid) -> Result<MadelungState> {
    let psi = normalize(psi, grid)?;
    let rho = psi.mapv(|z| z.norm_sqr());
    let flagged = floor_mask(&rho);
    let (n0, n1) = grid.shape();
    let arg = psi.mapv(|z| z.arg());
    let mut phase = Array2::zeros((n0, n1));
    let mut row_winding = vec![0i64; n0];
    let periodic = grid.axis(1).kind() == AxisKind::Periodic;
    for i in 0..n0 {
        phase[[i, 0]] = arg[[i, 0]];
        for j in 1..n1 {
            phase[[i, j]] = phase[[i, j - 1]] + wrap_phase(arg[[i, j]] - arg[[i, j - 1]]);
        }
        if periodic {
            let closing = phase[[i, n1 - 1]] + wrap_phase(arg[[i, 0]] - arg[[i, n1 - 1]]);
            row_winding[i] = ((closing - phase[[i, 0]]) / TAU).round() as i64;
        }
    }
    for i in 1..n0 {
        let shift = ((phase[[i - 1, 0]] - phase[[i, 0]]) / TAU).round() * TAU;
        if shift != 0.0 {
            phase.row_mut(i).mapv_inplace(|t| t + shift);
        }
    }
    let clean: Vec<usize> = (0..n0).filter(|&i| !flagged.row(i).iter().any(|&f| f)).collect();
    let voters: Vec<usize> = if clean.is_empty() { (0..n0).collect() } else { clean.clone() };
    let winding = majority(voters.iter().map(|&i| row_winding[i]));
    let conflicting: Vec<usize> = clean.iter().copied().filter(|&i| row_winding[i] != winding).collect();
    if !conflicting.is_empty() {
        let nodes = conflicting
            .iter()
            .map(|&i| {
                let j = (0..n1)
                    .min_by(|&a, &b| rho[[i, a]].total_cmp(&rho[[i, b]]))
                    .expect("rows are nonempty");
                (i, j)
            })
            .collect();
        return Err(Error::NodeSingularity { count: conflicting.len(), nodes });
    }
    Ok(MadelungState { rho, phase, winding, flagged })
}

fn majority(values: impl Iterator<Item = i64>) -> i64 {
    let mut counts: Vec<(i64, usize)> = Vec::new();
    for v in values {
        match counts.iter_mut().find(|(k, _)| *k == v) {
            Some((_, c)) => *c += 1,
            None => counts.push((v, 1)),
        }
    }
    // ties go to the smaller magnitude
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.abs().cmp(&a.0.abs())))
        .map(|(k, _)| k)
        .unwrap_or(0)
}

/// `(ρ, Θ) ↦ √ρ e^{iΘ}`.
pub fn compose(state: &MadelungState) -> Array2<Complex64> {
    let mut psi = Array2::zeros(state.rho.raw_dim());
    ndarray::Zip::from(&mut psi)
        .and(&state.rho)
        .and(&state.phase)
        .for_each(|z, &p, &t| *z = Complex64::from_polar(p.sqrt(), t));
    psi
}

/// Contravariant current velocity `v^i = 2ν g^{ij} ∂_j Θ`.
///
/// The phase gradient is taken from `Im(ψ* ∂_j ψ) / |ψ|²`, which equals `∂_j Θ`
/// wherever `ψ ≠ 0` and stays finite across sign changes of a real radial profile.
pub fn velocity_from_phase(state: &MadelungState, params: &PhysicalParams, grid: &Grid) -> [Array2<f64>; 2] {
    velocity_from_psi(&compose(state), params, grid)
}

/// Current velocity directly from a wave function; nodes below the amplitude
/// floor get zero velocity.
pub fn velocity_from_psi(psi: &Array2<Complex64>, params: &PhysicalParams, grid: &Grid) -> [Array2<f64>; 2] {
    let rho = psi.mapv(|z| z.norm_sqr());
    let flagged = floor_mask(&rho);
    let d0 = grid.d0_complex(psi);
    let d1 = grid.d1_complex(psi);
    let ginv = grid.inverse_metric();
    let scale = 2.0 * params.nu();
    let grad = |d: &Array2<Complex64>| {
        let mut out = Array2::zeros(rho.raw_dim());
        ndarray::Zip::from(&mut out)
            .and(psi)
            .and(d)
            .and(&rho)
            .and(&flagged)
            .for_each(|o, z, dz, &p, &f| *o = if f { 0.0 } else { (z.conj() * dz).im / p });
        out
    };
    [grad(&d0) * &ginv[0] * scale, grad(&d1) * &ginv[1] * scale]
}

/// Current and drift velocities (all contravariant).
#[derive(Clone, Debug)]
pub struct VelocityFields {
    pub v: [Array2<f64>; 2],
    pub u_plus: [Array2<f64>; 2],
    pub u_minus: [Array2<f64>; 2],
    /// Nodes where the osmotic part was not evaluated.
    pub flagged: Array2<bool>,
}

impl VelocityFields {
    /// Drifts equal to the current velocity: the classical limit.
    pub fn classical(v: [Array2<f64>; 2]) -> Self {
        let flagged = Array2::from_elem(v[0].raw_dim(), false);
        Self { u_plus: v.clone(), u_minus: v.clone(), v, flagged }
    }

    /// Osmotic velocity `(u₊ − u₋) / 2`.
    pub fn osmotic(&self) -> [Array2<f64>; 2] {
        [
            (&self.u_plus[0] - &self.u_minus[0]) * 0.5,
            (&self.u_plus[1] - &self.u_minus[1]) * 0.5,
        ]
    }
}

/// `ν g^{ij} ∂_j ln ρ`, zero on floor nodes. Radially a central difference of
/// `ln ρ`; along a periodic axis the spectral `∂_θ ρ / ρ`.
pub fn osmotic_velocity(rho: &Array2<f64>, nu: f64, grid: &Grid) -> ([Array2<f64>; 2], Array2<bool>) {
    let flagged = floor_mask(rho);
    let ln_rho = rho.mapv(|p| p.max(f64::MIN_POSITIVE).ln());
    let g0 = grid.d0(&ln_rho, Parity::Even);
    let g1 = match grid.axis(1).kind() {
        AxisKind::Periodic => {
            let d = grid.d1(rho);
            let mut out = Array2::zeros(rho.raw_dim());
            ndarray::Zip::from(&mut out)
                .and(&d)
                .and(rho)
                .and(&flagged)
                .for_each(|o, &dp, &p, &f| *o = if f { 0.0 } else { dp / p });
            out
        }
        AxisKind::Bounded => grid.d1(&ln_rho),
    };
    let ginv = grid.inverse_metric();
    let mut w = [g0 * &ginv[0] * nu, g1 * &ginv[1] * nu];
    for c in w.iter_mut() {
        ndarray::Zip::from(c).and(&flagged).for_each(|x, &f| {
            if f {
                *x = 0.0
            }
        });
    }
    (w, flagged)
}

/// `u_± = v ± ν g^{ij} ∂_j ln ρ`.
pub fn osmotic_split(v: &[Array2<f64>; 2], rho: &Array2<f64>, params: &PhysicalParams, grid: &Grid) -> VelocityFields {
    let (w, flagged) = osmotic_velocity(rho, params.nu(), grid);
    VelocityFields {
        u_plus: [&v[0] + &w[0], &v[1] + &w[1]],
        u_minus: [&v[0] - &w[0], &v[1] - &w[1]],
        v: v.clone(),
        flagged,
    }
}

/// Velocity fields of a state.
pub fn velocity_fields(state: &MadelungState, params: &PhysicalParams, grid: &Grid) -> VelocityFields {
    osmotic_split(&velocity_from_phase(state, params, grid), &state.rho, params, grid)
}

/// Quantum force `2ν² ∂_i Q` with `Q = Δ√ρ / √ρ`, covariant components.
#[derive(Clone, Debug)]
pub struct QuantumForce {
    pub covariant: [Array2<f64>; 2],
    /// `Q` itself (zero where not evaluable).
    pub potential: Array2<f64>,
    /// Nodes whose stencils touch the amplitude floor.
    pub flagged: Array2<bool>,
}

impl QuantumForce {
    /// Contravariant components `g^{ij} F_j`.
    pub fn contravariant(&self, grid: &Grid) -> [Array2<f64>; 2] {
        let ginv = grid.inverse_metric();
        [&self.covariant[0] * &ginv[0], &self.covariant[1] * &ginv[1]]
    }
}

/// Quantum force with diffusivity `ν = ħ / 2m`.
pub fn quantum_force(rho: &Array2<f64>, params: &PhysicalParams, grid: &Grid) -> QuantumForce {
    quantum_force_with_nu(rho, params.nu(), grid)
}

/// Quantum force with an explicit diffusivity.
pub fn quantum_force_with_nu(rho: &Array2<f64>, nu: f64, grid: &Grid) -> QuantumForce {
    quantum_force_from_amplitude(&rho.mapv(f64::sqrt), nu, grid)
}

/// Quantum force from an amplitude `a` with `ρ = a²`. A signed amplitude (a real
/// eigenfunction) gives the same `Q` away from its nodes, without the kink
/// that `|a|` has at a node.
pub fn quantum_force_from_amplitude(amp: &Array2<f64>, nu: f64, grid: &Grid) -> QuantumForce {
    let (n0, n1) = grid.shape();
    let below = floor_mask(&amp.mapv(|a| a * a));
    let through_origin = grid.chart().kind() == ChartKind::Polar && grid.axis(0).lo() == 0.0;
    let periodic = grid.axis(1).kind() == AxisKind::Periodic;
    // a node is usable when every node within two cells along either axis is above the floor
    let below_at = |i: isize, j: isize| -> bool {
        let jj = if periodic { j.rem_euclid(n1 as isize) } else { j };
        if jj < 0 || jj >= n1 as isize {
            return false;
        }
        if i < 0 {
            if through_origin {
                let anti = (jj as usize + n1 / 2) % n1;
                return below[[(-i - 1) as usize, anti]];
            }
            return false;
        }
        if i >= n0 as isize {
            return false;
        }
        below[[i as usize, jj as usize]]
    };
    let flagged = Array2::from_shape_fn((n0, n1), |(i, j)| {
        let (i, j) = (i as isize, j as isize);
        (-2..=2).any(|k| below_at(i + k, j) || below_at(i, j + k))
    });
    let lap = grid.laplacian(amp);
    let mut q = Array2::zeros((n0, n1));
    ndarray::Zip::from(&mut q)
        .and(&lap)
        .and(amp)
        .and(&below)
        .for_each(|q, &l, &a, &b| *q = if b { 0.0 } else { l / a });
    let dq0 = grid.d0(&q, Parity::Even);
    // ∂_θ Q by the quotient rule on the smooth fields `Δ√ρ` and `√ρ`: a
    // spectral derivative of `Q` itself would spread floor values along the row
    let dq1 = quotient_d1(&lap, amp, &q, &below, grid);
    let scale = 2.0 * nu * nu;
    let mask = |d: Array2<f64>| {
        let mut d = d * scale;
        ndarray::Zip::from(&mut d).and(&flagged).for_each(|x, &f| {
            if f {
                *x = 0.0
            }
        });
        d
    };
    QuantumForce { covariant: [mask(dq0), mask(dq1)], potential: q, flagged }
}

/// `∂_1 (num / den)` given `ratio = num / den`, as `(∂_1 num − ratio ∂_1 den) / den`
/// with both derivatives taken on the smooth factors; zero where `skip`.
pub(crate) fn quotient_d1(
    num: &Array2<f64>,
    den: &Array2<f64>,
    ratio: &Array2<f64>,
    skip: &Array2<bool>,
    grid: &Grid,
) -> Array2<f64> {
    let dn = grid.d1(num);
    let dd = grid.d1(den);
    Array2::from_shape_fn(num.raw_dim(), |ix| {
        if skip[ix] {
            0.0
        } else {
            (dn[ix] - ratio[ix] * dd[ix]) / den[ix]
        }
    })
}

/// Write `r, theta, rho, phase, v_r, v_theta` rows (coordinate names follow the chart).
pub fn write_fields_csv<W: Write>(
    mut out: W,
    grid: &Grid,
    state: &MadelungState,
    v: &[Array2<f64>; 2],
) -> Result<()> {
    let [a, b] = grid.chart().coordinate_names();
    writeln!(out, "{a},{b},rho,phase,v_{a},v_{b}")?;
    let (n0, n1) = grid.shape();
    for i in 0..n0 {
        for j in 0..n1 {
            let q = grid.node(i, j);
            writeln!(
                out,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                q[0], q[1], state.rho[[i, j]], state.phase[[i, j]], v[0][[i, j]], v[1][[i, j]]
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn gaussian_psi(grid: &Grid, winding: i64) -> Array2<Complex64> {
        grid.sample_complex(|r, t| {
            let amp = r.powi(winding.unsigned_abs() as i32) * (-r * r / 2.0).exp();
            Complex64::from_polar(amp, winding as f64 * t)
        })
    }

    #[test]
    fn nu_is_tied_to_hbar_over_two_m() {
        let p = PhysicalParams::new(2.0, 3.0, Potential::Free).unwrap();
        assert_eq!(p.nu(), 0.75);
        assert!(PhysicalParams::new(0.0, 1.0, Potential::Free).is_err());
    }

    #[test]
    fn decompose_reads_winding() {
        let grid = Grid::polar_disc(64, 32, 6.0).unwrap();
        for n in [-3i64, 0, 1] {
            let state = decompose(&gaussian_psi(&grid, n), &grid).unwrap();
            assert_eq!(state.winding, n);
            assert!((grid.integrate(&state.rho).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn real_positive_psi_has_zero_phase() {
        let grid = Grid::polar_disc(32, 16, 6.0).unwrap();
        let psi = grid.sample_complex(|r, _| Complex64::new((-r * r).exp(), 0.0));
        let state = decompose(&psi, &grid).unwrap();
        assert_eq!(state.winding, 0);
        assert!(state.phase.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn decompose_rejects_zero() {
        let grid = Grid::polar_disc(8, 8, 1.0).unwrap();
        let psi = Array2::zeros(grid.shape());
        assert!(matches!(decompose(&psi, &grid), Err(Error::ZeroWaveFunction)));
    }

    #[test]
    fn vortex_off_origin_is_reported() {
        // ψ = (z - 1): one winding inside r = 1, none outside
        let grid = Grid::polar_disc(40, 32, 3.0).unwrap();
        let psi = grid.sample_complex(|r, t| {
            let z = Complex64::from_polar(r, t) - 1.0;
            z * (-r * r / 4.0).exp()
        });
        assert!(matches!(decompose(&psi, &grid), Err(Error::NodeSingularity { .. })));
    }

    #[test]
    fn velocity_of_winding_phase() {
        let grid = Grid::polar_disc(64, 16, 6.0).unwrap();
        let params = PhysicalParams::natural_oscillator();
        let state = decompose(&gaussian_psi(&grid, 1), &grid).unwrap();
        let v = velocity_from_phase(&state, &params, &grid);
        for ((i, j), &vt) in v[1].indexed_iter() {
            if state.flagged[[i, j]] {
                continue;
            }
            let r = grid.node(i, j)[0];
            assert!((vt * r * r - 1.0).abs() < 1e-12);
            assert!(v[0][[i, j]].abs() < 1e-12);
        }
    }

    #[test]
    fn constant_phase_has_zero_velocity() {
        let grid = Grid::polar_disc(32, 16, 5.0).unwrap();
        let psi = grid.sample_complex(|r, _| Complex64::from_polar((-r * r).exp(), 0.7));
        let state = decompose(&psi, &grid).unwrap();
        let v = velocity_from_phase(&state, &PhysicalParams::natural_oscillator(), &grid);
        assert!(v.iter().all(|c| c.iter().all(|x| x.abs() < 1e-12)));
    }

    #[test]
    fn gaussian_drifts() {
        let grid = Grid::polar_disc(400, 8, 6.0).unwrap();
        let params = PhysicalParams::natural_oscillator();
        let rho = grid.sample(|r, _| (-r * r).exp() / PI);
        let zero = [grid.zeros(), grid.zeros()];
        let f = osmotic_split(&zero, &rho, &params, &grid);
        for ((i, j), &u) in f.u_plus[0].indexed_iter() {
            let r = grid.node(i, j)[0];
            if !f.flagged[[i, j]] {
                assert!((u + r).abs() < 1e-10, "{u} vs {}", -r);
                assert!((f.u_minus[0][[i, j]] - r).abs() < 1e-10);
            }
            assert_eq!(f.u_plus[1][[i, j]], 0.0);
        }
    }

    #[test]
    fn classical_limit_collapses_drifts() {
        let grid = Grid::polar_disc(32, 8, 4.0).unwrap();
        let rho = grid.sample(|r, t| (-r * r).exp() * (2.0 + t.cos()));
        let v = [grid.sample(|r, _| r), grid.sample(|_, t| t.sin())];
        let (w, _) = osmotic_velocity(&rho, 0.0, &grid);
        let f = VelocityFields {
            u_plus: [&v[0] + &w[0], &v[1] + &w[1]],
            u_minus: [&v[0] - &w[0], &v[1] - &w[1]],
            v: v.clone(),
            flagged: grid.zeros().mapv(|_| false),
        };
        assert_eq!(f.u_plus, f.u_minus);
        assert_eq!(f.u_plus, v);
    }

    #[test]
    fn theta_uniform_density_has_no_angular_force() {
        let grid = Grid::polar_disc(200, 16, 6.0).unwrap();
        let rho = grid.sample(|r, _| (-r * r).exp());
        let f = quantum_force(&rho, &PhysicalParams::natural_oscillator(), &grid);
        assert!(f.covariant[1].iter().all(|x| x.abs() < 1e-10));
    }
}
