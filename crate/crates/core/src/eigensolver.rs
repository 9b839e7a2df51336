//! Stationary states: the radial eigenvalue problem, loop quantization of the
//! angular velocity, and residual audits of stationary hydrodynamics.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Axis, AxisKind, ChartKind, Grid, Parity};
use crate::madelung::{osmotic_split, quantum_force_from_amplitude, PhysicalParams, Potential, VelocityFields};
use crate::tridiag::SymTridiagonal;

/// Largest admissible `|φ(r_max)| / max |φ|`.
pub const TAIL_LIMIT: f64 = 1e-6;

/// Loop values farther than this from an integer are quantization violations.
pub const QUANTIZATION_TOLERANCE: f64 = 0.1;

/// A solved radial eigenstate `√ρ(r)` with angular parameter `α`.
#[derive(Clone, Debug, Serialize)]
pub struct EigenstateSpec {
    pub alpha: f64,
    pub n_r: usize,
    pub epsilon: f64,
    pub r_nodes: Vec<f64>,
    /// Signed radial amplitude, positive next to the inner edge,
    /// normalised so that `2π ∫ r f² dr = 1`.
    pub profile: Vec<f64>,
    pub r_inner: f64,
    pub r_outer: f64,
}

impl EigenstateSpec {
    /// Number of sign changes of the profile.
    pub fn sign_changes(&self) -> usize {
        let max = self.profile.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut last = 0.0;
        let mut count = 0;
        for &f in &self.profile {
            if f.abs() < 1e-9 * max {
                continue;
            }
            if last != 0.0 && f.signum() != last {
                count += 1;
            }
            last = f.signum();
        }
        count
    }

    /// `2π Σ r f² h`.
    pub fn norm(&self) -> f64 {
        let h = (self.r_outer - self.r_inner) / self.r_nodes.len() as f64;
        TAU * self.r_nodes.iter().zip(&self.profile).map(|(r, f)| r * f * f * h).sum::<f64>()
    }

    /// `2π Σ r f g h`.
    pub fn overlap(&self, other: &EigenstateSpec) -> f64 {
        let h = (self.r_outer - self.r_inner) / self.r_nodes.len() as f64;
        TAU * self
            .r_nodes
            .iter()
            .zip(self.profile.iter().zip(&other.profile))
            .map(|(r, (f, g))| r * f * g * h)
            .sum::<f64>()
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        let ax = grid.axis(0);
        let same = grid.chart().kind() == ChartKind::Polar
            && ax.len() == self.r_nodes.len()
            && (ax.lo() - self.r_inner).abs() < 1e-12
            && (ax.hi() - self.r_outer).abs() < 1e-12;
        if !same {
            return Err(Error::InvalidInput("grid radial axis differs from the eigenstate's radial nodes".into()));
        }
        Ok(())
    }

    /// Polar grid sharing the radial nodes of this state.
    pub fn grid(&self, n_theta: usize) -> Result<Grid> {
        Grid::polar(self.r_nodes.len(), n_theta, self.r_inner, self.r_outer)
    }

    /// `ρ = f(r)²` on a polar grid with the same radial nodes.
    pub fn density(&self, grid: &Grid) -> Result<Array2<f64>> {
        self.check_grid(grid)?;
        Ok(Array2::from_shape_fn(grid.shape(), |(i, _)| self.profile[i] * self.profile[i]))
    }

    /// `ψ = f(r) e^{iNθ}` for an integer `α = N`.
    pub fn wave_function(&self, grid: &Grid) -> Result<Array2<Complex64>> {
        self.check_grid(grid)?;
        let n = self.alpha.round();
        if (self.alpha - n).abs() > 0.0 {
            return Err(Error::InvalidInput(format!(
                "alpha = {} is not an integer; e^(i alpha theta) is not single-valued",
                self.alpha
            )));
        }
        let theta = grid.axis(1).nodes();
        Ok(Array2::from_shape_fn(grid.shape(), |(i, j)| Complex64::from_polar(self.profile[i], n * theta[j])))
    }

    /// Stationary fields `v_r = 0`, `v_θ = ħα/m` (covariant), with the osmotic
    /// split of `ρ = f²`.
    pub fn stationary_fields(&self, params: &PhysicalParams, grid: &Grid) -> Result<VelocityFields> {
        let rho = self.density(grid)?;
        let c = params.hbar() * self.alpha / params.m();
        let v = [grid.zeros(), grid.sample(|r, _| c / (r * r))];
        Ok(osmotic_split(&v, &rho, params, grid))
    }

    /// CSV with a metadata header and `r, profile, rho` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# alpha={} n_r={} epsilon={:.12e}", self.alpha, self.n_r, self.epsilon)?;
        writeln!(out, "r,profile,rho")?;
        for (r, f) in self.r_nodes.iter().zip(&self.profile) {
            writeln!(out, "{r:.12e},{f:.12e},{:.12e}", f * f)?;
        }
        Ok(())
    }
}

/// The radial Hamiltonian
/// `-(ħ²/2m)[(1/r) ∂_r r ∂_r − α²/r²] + V` acting on `φ = √r f`, as a symmetric
/// tridiagonal matrix on a cell-centred axis. A zero inner edge imposes
/// regularity (no flux through the origin); otherwise the profile vanishes half
/// a cell outside either edge.
pub fn radial_operator(axis: &Axis, alpha: f64, params: &PhysicalParams) -> Result<SymTridiagonal> {
    if axis.kind() != AxisKind::Bounded || axis.lo() < 0.0 {
        return Err(Error::InvalidInput("radial operator needs a bounded axis with r >= 0".into()));
    }
    let n = axis.len();
    let h = axis.step();
    let r = axis.nodes();
    let k = params.hbar() * params.hbar() / (2.0 * params.m());
    let pot = params.potential();
    let edge = |i: isize| axis.lo() + i as f64 * h;
    let d = (0..n)
        .map(|i| {
            let outer = edge(i as isize + 1);
            let inner = edge(i as isize);
            k * (outer + inner) / (r[i] * h * h) + k * alpha * alpha / (r[i] * r[i]) + pot.value(params.m(), r[i])
        })
        .collect();
    let e = (0..n - 1).map(|i| -k * edge(i as isize + 1) / ((r[i] * r[i + 1]).sqrt() * h * h)).collect();
    SymTridiagonal::new(d, e)
}

/// Solve for the `n_r`-th radial eigenstate with angular parameter `alpha`
/// on the radial axis of `grid`.
pub fn solve_radial(grid: &Grid, alpha: f64, params: &PhysicalParams, n_r: usize) -> Result<EigenstateSpec> {
    if grid.chart().kind() != ChartKind::Polar {
        return Err(Error::Unsupported("radial eigenstates need a polar grid".into()));
    }
    solve_on_axis(grid.axis(0), alpha, params, n_r)
}

/// Solve on a bare radial axis.
pub fn solve_on_axis(axis: &Axis, alpha: f64, params: &PhysicalParams, n_r: usize) -> Result<EigenstateSpec> {
    if !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("alpha must be finite, got {alpha}")));
    }
    let op = radial_operator(axis, alpha, params)?;
    let epsilon = op.eigenvalue(n_r)?;
    let phi = op.eigenvector(epsilon)?;
    let max = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tail = phi[phi.len() - 1].abs() / max;
    if tail > TAIL_LIMIT {
        return Err(Error::DomainTooSmall { tail, limit: TAIL_LIMIT });
    }
    let r = axis.nodes();
    let h = axis.step();
    let mut profile: Vec<f64> = phi.iter().zip(r).map(|(p, r)| p / r.sqrt()).collect();
    let first = profile.iter().copied().find(|f| f.abs() > 1e-9 * max).unwrap_or(1.0);
    let norm = TAU * r.iter().zip(&profile).map(|(r, f)| r * f * f * h).sum::<f64>();
    let scale = first.signum() / norm.sqrt();
    profile.iter_mut().for_each(|f| *f *= scale);
    let spec = EigenstateSpec {
        alpha,
        n_r,
        epsilon,
        r_nodes: r.to_vec(),
        profile,
        r_inner: axis.lo(),
        r_outer: axis.hi(),
    };
    let nodes = spec.sign_changes();
    if nodes != n_r {
        return Err(Error::Convergence(format!("eigenvector has {nodes} sign changes, expected {n_r}")));
    }
    Ok(spec)
}

/// `ħω(2 n_r + |α| + 1)` for the oscillator.
pub fn oscillator_energy(params: &PhysicalParams, alpha: f64, n_r: usize) -> Option<f64> {
    match params.potential() {
        Potential::Harmonic { omega } => Some(params.hbar() * omega * (2.0 * n_r as f64 + alpha.abs() + 1.0)),
        Potential::Free => None,
    }
}

/// Loop quantization outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Winding {
    pub nearest: i64,
    pub raw: f64,
}

/// `(m / 2πħ) ∮ v_θ dθ` on the circle `r = r_loop`.
pub fn winding_number(fields: &VelocityFields, params: &PhysicalParams, grid: &Grid, r_loop: f64) -> Result<Winding> {
    let raw = loop_value(fields, params, grid, r_loop)?;
    let nearest = raw.round();
    let distance = (raw - nearest).abs();
    if distance > QUANTIZATION_TOLERANCE {
        return Err(Error::QuantizationViolation { raw, nearest: nearest as i64, distance });
    }
    Ok(Winding { nearest: nearest as i64, raw })
}

/// The raw loop value without the integer check.
pub fn loop_value(fields: &VelocityFields, params: &PhysicalParams, grid: &Grid, r_loop: f64) -> Result<f64> {
    if grid.chart().kind() != ChartKind::Polar || grid.axis(1).kind() != AxisKind::Periodic {
        return Err(Error::Unsupported("loop integrals need a polar grid".into()));
    }
    let ax = grid.axis(0);
    if !(r_loop > 0.0 && r_loop >= ax.nodes()[0] && r_loop <= ax.nodes()[ax.len() - 1]) {
        return Err(Error::InvalidInput(format!("loop radius {r_loop} outside the radial nodes")));
    }
    let (i0, i1, t) = grid.bracket(0, r_loop);
    let n1 = grid.shape().1;
    if (0..n1).any(|j| fields.flagged[[i0, j]] || (t > 0.0 && fields.flagged[[i1, j]])) {
        return Err(Error::InvalidInput(format!("loop at r = {r_loop} crosses flagged nodes")));
    }
    let h = grid.axis(1).step();
    let sum: f64 = (0..n1)
        .map(|j| {
            let v_theta = fields.v[1][[i0, j]] * (1.0 - t) + fields.v[1][[i1, j]] * t;
            v_theta * r_loop * r_loop * h
        })
        .sum();
    Ok(params.m() * sum / (TAU * params.hbar()))
}

/// Radius of the density maximum, a natural loop radius.
pub fn peak_radius(spec: &EigenstateSpec) -> f64 {
    let (k, _) = spec
        .profile
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bk, bv), (k, f)| if f.abs() > bv { (k, f.abs()) } else { (bk, bv) });
    spec.r_nodes[k]
}

/// Options for residual norms.
#[derive(Clone, Copy, Debug)]
pub struct ResidualOptions {
    /// Nodes with `r < core_radius` are left out: the centrifugal terms are not
    /// resolved by finite differences next to the origin.
    pub core_radius: f64,
}

impl ResidualOptions {
    pub fn for_grid(grid: &Grid) -> Self {
        Self { core_radius: grid.axis(0).hi() / 16.0 }
    }
}

/// Residual norms of a stationary state.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StationaryResidual {
    /// Radial line of the hydrodynamic equations.
    pub radial: f64,
    /// Angular line of the hydrodynamic equations.
    pub angular: f64,
    /// `‖(H − ε)√ρ‖`, the radial Schrödinger (Bernoulli) residual.
    pub schrodinger: f64,
}

/// Pointwise residual fields of a stationary state.
#[derive(Clone, Debug)]
pub struct StationaryFields {
    pub radial: Array2<f64>,
    pub angular: Array2<f64>,
    /// `(H − ε)√ρ / √ρ`.
    pub bernoulli: Array2<f64>,
    pub mask: Array2<bool>,
}

/// Evaluate both hydrodynamic lines for `v_r = 0`, `v_θ = ħα/m` and the
/// Bernoulli function of the radial equation, pointwise.
pub fn stationary_fields(spec: &EigenstateSpec, params: &PhysicalParams, grid: &Grid) -> Result<StationaryFields> {
    let rho = spec.density(grid)?;
    let opts = ResidualOptions::for_grid(grid);
    let m = params.m();
    let hbar = params.hbar();
    let pot = params.potential();
    // signed profile: `|f|` has a kink at every radial node
    let amp = Array2::from_shape_fn(rho.raw_dim(), |(i, _)| spec.profile[i]);
    let force = quantum_force_from_amplitude(&amp, params.nu(), grid);
    let f_contra = force.contravariant(grid);
    let c = hbar * spec.alpha / m;
    let (n0, n1) = grid.shape();
    let lap = grid.laplacian(&amp);
    let mut radial = Array2::zeros((n0, n1));
    let mut angular = Array2::zeros((n0, n1));
    let mut bernoulli = Array2::zeros((n0, n1));
    let mut mask = Array2::from_elem((n0, n1), false);
    let k = hbar * hbar / (2.0 * m);
    let v_theta = grid.sample(|r, _| c / (r * r));
    let dvt = grid.d1(&v_theta);
    for i in 0..n0 {
        for j in 0..n1 {
            let r = grid.node(i, j)[0];
            let vt = v_theta[[i, j]];
            // v^r = 0, so only the curvature and advective θ terms survive
            radial[[i, j]] = -r * vt * vt + pot.derivative(m, r) / m - f_contra[0][[i, j]];
            angular[[i, j]] = vt * dvt[[i, j]] - f_contra[1][[i, j]];
            if !force.flagged[[i, j]] {
                bernoulli[[i, j]] = -k * lap[[i, j]] / amp[[i, j]] + k * spec.alpha * spec.alpha / (r * r)
                    + pot.value(m, r)
                    - spec.epsilon;
            }
            mask[[i, j]] = !force.flagged[[i, j]] && r >= opts.core_radius && i + 1 < n0;
        }
    }
    Ok(StationaryFields { radial, angular, bernoulli, mask })
}

/// `sqrt(∫ J ρ f²)` over masked nodes.
pub(crate) fn weighted_norm(grid: &Grid, rho: &Array2<f64>, f: &Array2<f64>, mask: &Array2<bool>) -> f64 {
    let w = grid.cell_volume();
    let mut acc = 0.0;
    for ((idx, &keep), &x) in mask.indexed_iter().zip(f.iter()) {
        if keep {
            acc += w[idx] * rho[idx] * x * x;
        }
    }
    acc.sqrt()
}

/// Density-weighted L2 norms of the stationary residuals.
pub fn stationary_residual(spec: &EigenstateSpec, params: &PhysicalParams, grid: &Grid) -> Result<StationaryResidual> {
    let fields = stationary_fields(spec, params, grid)?;
    let rho = spec.density(grid)?;
    Ok(StationaryResidual {
        radial: weighted_norm(grid, &rho, &fields.radial, &fields.mask),
        angular: weighted_norm(grid, &rho, &fields.angular, &fields.mask),
        schrodinger: weighted_norm(grid, &rho, &fields.bernoulli, &fields.mask),
    })
}

/// Radial derivative of the Bernoulli function divided by `m`; equal to the
/// radial hydrodynamic residual up to truncation error.
pub fn bernoulli_gradient(fields: &StationaryFields, params: &PhysicalParams, grid: &Grid) -> Array2<f64> {
    grid.d0(&fields.bernoulli, Parity::Even) / params.m()
}

/// Classical-turning-point estimate of a safe outer radius for the oscillator.
pub fn suggested_r_max(params: &PhysicalParams, alpha: f64, n_r: usize) -> f64 {
    match params.potential() {
        Potential::Harmonic { omega } => {
            let len = (params.hbar() / (params.m() * omega)).sqrt();
            let e = 2.0 * n_r as f64 + alpha.abs() + 1.0;
            len * (8.0f64).max(2.0 * e.sqrt() + 5.0)
        }
        Potential::Free => 8.0 * PI,
    }
}
