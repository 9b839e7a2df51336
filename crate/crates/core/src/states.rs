//! Wave functions used as inputs: eigenstates, angular packets, Gaussians and
//! two-level superpositions.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::eigensolver::{solve_radial, EigenstateSpec};
use crate::error::{Error, Result};
use crate::geometry::{to_cartesian, ChartKind, Grid};
use crate::madelung::{normalize, PhysicalParams};

/// Declarative description of an initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    /// Radial eigenstate times `e^{iαθ}` (α must be an integer for a wave function).
    Eigenstate { alpha: f64, n_r: usize },
    /// Ring of radius `r0` and radial width `radial_width`, with a von Mises
    /// angular profile `ρ ∝ exp(cos(θ − center) / width²)` and an optional
    /// phase winding.
    ThetaPacket {
        center: f64,
        width: f64,
        #[serde(default = "default_ring_radius")]
        r0: f64,
        #[serde(default = "default_ring_width")]
        radial_width: f64,
        #[serde(default)]
        winding: i64,
    },
    /// `exp(−|z − z0|² / 4σ² + i k·z)` in Cartesian coordinates.
    Gaussian {
        #[serde(default)]
        x0: f64,
        #[serde(default)]
        y0: f64,
        sigma: f64,
        #[serde(default)]
        kx: f64,
        #[serde(default)]
        ky: f64,
    },
    /// `a φ_{n_a} + b φ_{n_b}` at a common integer α.
    Superposition { alpha: f64, n_a: usize, n_b: usize, a: f64, b: f64 },
}

fn default_ring_radius() -> f64 {
    1.5
}

fn default_ring_width() -> f64 {
    0.5
}

impl StateSpec {
    pub fn label(&self) -> String {
        match self {
            StateSpec::Eigenstate { alpha, n_r } => format!("eigen_a{alpha}_n{n_r}"),
            StateSpec::ThetaPacket { center, width, winding, .. } => {
                format!("theta_packet_c{center:.3}_w{width}_l{winding}")
            }
            StateSpec::Gaussian { x0, y0, sigma, kx, ky } => format!("gaussian_{x0}_{y0}_s{sigma}_k{kx}_{ky}"),
            StateSpec::Superposition { alpha, n_a, n_b, .. } => format!("beat_a{alpha}_{n_a}_{n_b}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        match *self {
            StateSpec::Eigenstate { alpha, .. } if !alpha.is_finite() => bad("alpha must be finite".into()),
            StateSpec::ThetaPacket { width, r0, radial_width, .. } => {
                if !(width > 0.0) || !(radial_width > 0.0) || !(r0 >= 0.0) {
                    return bad("theta packet widths must be positive and r0 nonnegative".into());
                }
                Ok(())
            }
            StateSpec::Gaussian { sigma, .. } if !(sigma > 0.0) => bad(format!("sigma must be positive, got {sigma}")),
            StateSpec::Superposition { n_a, n_b, a, b, alpha } => {
                if n_a == n_b || !(a.is_finite() && b.is_finite()) || (a == 0.0 && b == 0.0) {
                    return bad("superposition needs distinct levels and a nonzero amplitude".into());
                }
                if alpha.fract() != 0.0 {
                    return bad("superposition alpha must be an integer".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Sample the normalised wave function on `grid`.
    pub fn prepare(&self, params: &PhysicalParams, grid: &Grid) -> Result<Array2<Complex64>> {
        self.validate()?;
        let psi = match *self {
            StateSpec::Eigenstate { alpha, n_r } => {
                require_polar(grid)?;
                solve_radial(grid, alpha, params, n_r)?.wave_function(grid)?
            }
            StateSpec::ThetaPacket { center, width, r0, radial_width, winding } => {
                require_polar(grid)?;
                theta_packet(grid, center, width, r0, radial_width, winding)
            }
            StateSpec::Gaussian { x0, y0, sigma, kx, ky } => gaussian(grid, [x0, y0], sigma, [kx, ky]),
            StateSpec::Superposition { alpha, n_a, n_b, a, b } => {
                require_polar(grid)?;
                let sa = solve_radial(grid, alpha, params, n_a)?;
                let sb = solve_radial(grid, alpha, params, n_b)?;
                superposition(grid, &sa, &sb, Complex64::new(a, 0.0), Complex64::new(b, 0.0))?
            }
        };
        normalize(&psi, grid)
    }
}

fn require_polar(grid: &Grid) -> Result<()> {
    if grid.chart().kind() != ChartKind::Polar {
        return Err(Error::Unsupported("this state is defined on a polar grid".into()));
    }
    Ok(())
}

/// Ring-shaped packet localised in angle (unnormalised).
pub fn theta_packet(grid: &Grid, center: f64, width: f64, r0: f64, radial_width: f64, winding: i64) -> Array2<Complex64> {
    let kappa = 1.0 / (width * width);
    grid.sample_complex(|r, t| {
        let radial = -((r - r0) * (r - r0)) / (4.0 * radial_width * radial_width);
        // amplitude is the square root of the von Mises density
        let angular = 0.5 * kappa * ((t - center).cos() - 1.0);
        Complex64::from_polar((radial + angular).exp(), winding as f64 * t)
    })
}

/// Gaussian `exp(−|z − z0|²/4σ² + i k·z)` on either chart (unnormalised).
pub fn gaussian(grid: &Grid, z0: [f64; 2], sigma: f64, k: [f64; 2]) -> Array2<Complex64> {
    let cartesian = grid.chart().kind() == ChartKind::Cartesian;
    grid.sample_complex(|a, b| {
        let [x, y] = if cartesian { [a, b] } else { to_cartesian([a, b]) };
        let d2 = (x - z0[0]).powi(2) + (y - z0[1]).powi(2);
        Complex64::from_polar((-d2 / (4.0 * sigma * sigma)).exp(), k[0] * x + k[1] * y)
    })
}

/// `a ψ_a + b ψ_b` for two eigenstates with the same integer α.
pub fn superposition(
    grid: &Grid,
    sa: &EigenstateSpec,
    sb: &EigenstateSpec,
    a: Complex64,
    b: Complex64,
) -> Result<Array2<Complex64>> {
    let pa = sa.wave_function(grid)?;
    let pb = sb.wave_function(grid)?;
    Ok(pa * a + pb * b)
}

/// Analytic oscillator ground-state density `(mω/πħ) exp(−mω r²/ħ)`.
pub fn oscillator_ground_density(m: f64, omega: f64, hbar: f64, r: f64) -> f64 {
    let a = m * omega / hbar;
    a / PI * (-a * r * r).exp()
}
