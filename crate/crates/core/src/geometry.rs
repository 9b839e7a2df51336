//! Two-dimensional coordinate charts and the discrete grids built on them.
//!
//! Radial and Cartesian axes are cell-centred: an axis spanning `[lo, hi]` with
//! `n` cells carries nodes at `lo + (i + 1/2) h`. With the inner edge of a polar
//! grid at the origin, no node ever sits on `r = 0`, the midpoint rule covers the
//! whole disc, and finite differences reach across the origin through the
//! antipodal node `(r, θ + π)`. The angular axis is periodic with nodes at
//! `2πj / n`, so the row `j = 0` doubles as the cut `θ = 2π`.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis as NdAxis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartKind {
    Polar,
    Cartesian,
}

/// A diagonal two-dimensional chart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoordinateChart {
    kind: ChartKind,
}

impl CoordinateChart {
    pub fn polar() -> Self {
        Self { kind: ChartKind::Polar }
    }

    pub fn cartesian() -> Self {
        Self { kind: ChartKind::Cartesian }
    }

    pub fn kind(&self) -> ChartKind {
        self.kind
    }

    /// Coordinate names in axis order.
    pub fn coordinate_names(&self) -> [&'static str; 2] {
        match self.kind {
            ChartKind::Polar => ["r", "theta"],
            ChartKind::Cartesian => ["x", "y"],
        }
    }

    fn check(&self, q: [f64; 2]) -> Result<()> {
        if self.kind == ChartKind::Polar && !(q[0] > 0.0) {
            return Err(Error::Domain { coordinate: "r", value: q[0] });
        }
        Ok(())
    }

    /// Diagonal of `g_ij`.
    pub fn metric(&self, q: [f64; 2]) -> Result<[f64; 2]> {
        self.check(q)?;
        Ok(match self.kind {
            ChartKind::Polar => [1.0, q[0] * q[0]],
            ChartKind::Cartesian => [1.0, 1.0],
        })
    }

    /// Diagonal of `g^ij`.
    pub fn inverse_metric(&self, q: [f64; 2]) -> Result<[f64; 2]> {
        self.check(q)?;
        Ok(match self.kind {
            ChartKind::Polar => [1.0, 1.0 / (q[0] * q[0])],
            ChartKind::Cartesian => [1.0, 1.0],
        })
    }

    pub fn jacobian(&self, q: [f64; 2]) -> Result<f64> {
        self.check(q)?;
        Ok(match self.kind {
            ChartKind::Polar => q[0],
            ChartKind::Cartesian => 1.0,
        })
    }

    /// Contracted connection `Γ^k_{jk}` for each coordinate `j`.
    pub fn christoffel_trace(&self, q: [f64; 2]) -> Result<[f64; 2]> {
        self.check(q)?;
        Ok(match self.kind {
            ChartKind::Polar => [1.0 / q[0], 0.0],
            ChartKind::Cartesian => [0.0, 0.0],
        })
    }

    pub fn to_cartesian(&self, q: [f64; 2]) -> [f64; 2] {
        match self.kind {
            ChartKind::Polar => to_cartesian(q),
            ChartKind::Cartesian => q,
        }
    }
}

/// `(r, θ) ↦ (r cos θ, r sin θ)`.
pub fn to_cartesian(q: [f64; 2]) -> [f64; 2] {
    let (s, c) = q[1].sin_cos();
    [q[0] * c, q[0] * s]
}

/// `(x, y) ↦ (r, θ)` with `θ ∈ [0, 2π)`.
pub fn to_polar(z: [f64; 2]) -> [f64; 2] {
    [z[0].hypot(z[1]), wrap_angle(z[1].atan2(z[0]))]
}

/// Reduce an angle to `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Reduce a phase difference to `(-π, π]`.
pub fn wrap_phase(delta: f64) -> f64 {
    let w = (delta + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AxisKind {
    Bounded,
    Periodic,
}

/// Symmetry of a field under continuation through the polar origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    /// Scalars and `r·w^r` fluxes: `f(-r, θ) = f(r, θ + π)`.
    Even,
    /// Radial vector components: `w^r(-r, θ) = -w^r(r, θ + π)`.
    Odd,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    kind: AxisKind,
    lo: f64,
    hi: f64,
    step: f64,
    nodes: Vec<f64>,
}

impl Axis {
    /// Cell-centred axis with `n` cells on `[lo, hi]`.
    pub fn bounded(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidInput(format!("axis bounds [{lo}, {hi}] are not increasing")));
        }
        if n < 4 {
            return Err(Error::InvalidInput(format!("axis needs at least 4 cells, got {n}")));
        }
        let step = (hi - lo) / n as f64;
        let nodes = (0..n).map(|i| lo + (i as f64 + 0.5) * step).collect();
        Ok(Self { kind: AxisKind::Bounded, lo, hi, step, nodes })
    }

    /// Angular axis on `[0, 2π)` with nodes `2πj/n`; `n` must be even.
    pub fn periodic(n: usize) -> Result<Self> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!("periodic axis needs an even count >= 4, got {n}")));
        }
        let step = TAU / n as f64;
        let nodes = (0..n).map(|j| j as f64 * step).collect();
        Ok(Self { kind: AxisKind::Periodic, lo: 0.0, hi: TAU, step, nodes })
    }

    pub fn kind(&self) -> AxisKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Fractional index of a coordinate: node `i` sits at `i`.
    pub fn fractional_index(&self, q: f64) -> f64 {
        match self.kind {
            AxisKind::Bounded => (q - self.lo) / self.step - 0.5,
            AxisKind::Periodic => wrap_angle(q) / self.step,
        }
    }

    /// Index of the cell containing `q`, if any.
    pub fn cell_of(&self, q: f64) -> Option<usize> {
        match self.kind {
            AxisKind::Bounded => {
                if q < self.lo || q >= self.hi {
                    return None;
                }
                Some((((q - self.lo) / self.step) as usize).min(self.len() - 1))
            }
            // periodic cells are centred on nodes
            AxisKind::Periodic => {
                let k = (wrap_angle(q) / self.step + 0.5).floor() as usize;
                Some(k % self.len())
            }
        }
    }

    /// Edges `[a, b]` of cell `i`.
    pub fn cell_bounds(&self, i: usize) -> (f64, f64) {
        match self.kind {
            AxisKind::Bounded => (self.lo + i as f64 * self.step, self.lo + (i + 1) as f64 * self.step),
            AxisKind::Periodic => (self.nodes[i] - 0.5 * self.step, self.nodes[i] + 0.5 * self.step),
        }
    }
}

/// FFT plans for the periodic axis.
#[derive(Clone)]
struct SpectralPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SpectralPlan")
    }
}

impl SpectralPlan {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }
}

/// Signed angular mode number of FFT bin `k`; the Nyquist bin maps to `-n/2`.
pub fn mode_number(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Weights `W_j` with `∫_0^{2π} θ^k g(θ) dθ = Σ_j W_j g_j`, exact for the
/// trigonometric interpolant of the periodic samples `g_j`.
fn angular_moment_weights(n: usize, power: u32) -> Vec<f64> {
    let half = n / 2;
    let inv_n = 1.0 / n as f64;
    (0..n)
        .map(|j| {
            let theta = TAU * j as f64 * inv_n;
            let mut acc = match power {
                0 => TAU,
                1 => 2.0 * PI * PI,
                2 => 8.0 * PI * PI * PI / 3.0,
                _ => unreachable!(),
            };
            if power == 0 {
                return acc * inv_n;
            }
            for m in 1..half {
                let mf = m as f64;
                let (s, c) = (mf * theta).sin_cos();
                acc += match power {
                    1 => -4.0 * PI * s / mf,
                    _ => 2.0 * (4.0 * PI * c / (mf * mf) - 4.0 * PI * PI * s / mf),
                };
            }
            if power == 2 {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * 4.0 * PI / (half * half) as f64;
            }
            acc * inv_n
        })
        .collect()
}

/// A discretised chart domain. Fields live in `Array2<f64>` indexed `[axis0, axis1]`.
#[derive(Clone, Debug)]
pub struct Grid {
    chart: CoordinateChart,
    axes: [Axis; 2],
    jacobian: Array2<f64>,
    cell_volume: Array2<f64>,
    angular_weights: Option<[Vec<f64>; 2]>,
    spectral: Option<SpectralPlan>,
}

impl Grid {
    /// Polar grid: `n_r` radial cells on `[r_inner, r_outer]`, `n_theta` angular nodes.
    pub fn polar(n_r: usize, n_theta: usize, r_inner: f64, r_outer: f64) -> Result<Self> {
        if !(r_inner >= 0.0) {
            return Err(Error::InvalidInput(format!("inner radius {r_inner} must be >= 0")));
        }
        let radial = Axis::bounded(r_inner, r_outer, n_r)?;
        let angular = Axis::periodic(n_theta)?;
        Ok(Self::assemble(CoordinateChart::polar(), [radial, angular]))
    }

    /// Polar grid covering the full disc of radius `r_max`.
    pub fn polar_disc(n_r: usize, n_theta: usize, r_max: f64) -> Result<Self> {
        Self::polar(n_r, n_theta, 0.0, r_max)
    }

    /// Square Cartesian grid on `[-half_width, half_width]²`.
    pub fn cartesian(n_x: usize, n_y: usize, half_width: f64) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::InvalidInput(format!("half width {half_width} must be positive")));
        }
        let x = Axis::bounded(-half_width, half_width, n_x)?;
        let y = Axis::bounded(-half_width, half_width, n_y)?;
        Ok(Self::assemble(CoordinateChart::cartesian(), [x, y]))
    }

    fn assemble(chart: CoordinateChart, axes: [Axis; 2]) -> Self {
        let (n0, n1) = (axes[0].len(), axes[1].len());
        let jacobian = Array2::from_shape_fn((n0, n1), |(i, j)| {
            chart.jacobian([axes[0].nodes[i], axes[1].nodes[j]]).expect("grid nodes lie inside the chart")
        });
        let dv = axes[0].step * axes[1].step;
        let cell_volume = jacobian.mapv(|jac| jac * dv);
        let (angular_weights, spectral) = if axes[1].kind == AxisKind::Periodic {
            (
                Some([angular_moment_weights(n1, 1), angular_moment_weights(n1, 2)]),
                Some(SpectralPlan::new(n1)),
            )
        } else {
            (None, None)
        };
        Self { chart, axes, jacobian, cell_volume, angular_weights, spectral }
    }

    pub fn chart(&self) -> CoordinateChart {
        self.chart
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.axes[0].len(), self.axes[1].len())
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.axes[0].nodes[i], self.axes[1].nodes[j]]
    }

    pub fn zeros(&self) -> Array2<f64> {
        Array2::zeros(self.shape())
    }

    /// Sample a function of the chart coordinates at every node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
        let (a, b) = (&self.axes[0].nodes, &self.axes[1].nodes);
        Array2::from_shape_fn(self.shape(), |(i, j)| f(a[i], b[j]))
    }

    pub fn sample_complex(&self, f: impl Fn(f64, f64) -> Complex64) -> Array2<Complex64> {
        let (a, b) = (&self.axes[0].nodes, &self.axes[1].nodes);
        Array2::from_shape_fn(self.shape(), |(i, j)| f(a[i], b[j]))
    }

    /// Coordinate `q^k` at every node.
    pub fn coordinate(&self, k: usize) -> Array2<f64> {
        self.sample(|a, b| if k == 0 { a } else { b })
    }

    pub fn jacobian(&self) -> &Array2<f64> {
        &self.jacobian
    }

    /// Quadrature weights `J ΔA` per node.
    pub fn cell_volume(&self) -> &Array2<f64> {
        &self.cell_volume
    }

    /// Diagonal inverse metric components at every node.
    pub fn inverse_metric(&self) -> [Array2<f64>; 2] {
        let g = |k: usize| {
            self.sample(|a, b| self.chart.inverse_metric([a, b]).expect("grid nodes lie inside the chart")[k])
        };
        [g(0), g(1)]
    }

    /// Diagonal metric components at every node.
    pub fn metric(&self) -> [Array2<f64>; 2] {
        let g = |k: usize| self.sample(|a, b| self.chart.metric([a, b]).expect("grid nodes lie inside the chart")[k]);
        [g(0), g(1)]
    }

    pub fn christoffel_trace(&self) -> [Array2<f64>; 2] {
        let g = |k: usize| {
            self.sample(|a, b| self.chart.christoffel_trace([a, b]).expect("grid nodes lie inside the chart")[k])
        };
        [g(0), g(1)]
    }

    fn check_shape(&self, shape: &[usize]) -> Result<()> {
        let (n0, n1) = self.shape();
        if shape != [n0, n1] {
            return Err(Error::InvalidInput(format!("field shape {shape:?} does not match grid ({n0}, {n1})")));
        }
        Ok(())
    }

    /// `∫ J f d²q`: midpoint rule along bounded axes, rectangle rule along θ.
    pub fn integrate(&self, field: &Array2<f64>) -> Result<f64> {
        self.check_shape(field.shape())?;
        if let Some(((i, j), _)) = field.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(i, j));
        }
        Ok(self.integrate_unchecked(field))
    }

    pub(crate) fn integrate_unchecked(&self, field: &Array2<f64>) -> f64 {
        field.iter().zip(self.cell_volume.iter()).map(|(f, w)| f * w).sum()
    }

    /// `∫ J (q^k)^p f d²q` for `p ≤ 2`. Along the periodic axis the weight
    /// `θ^p` is integrated exactly against the trigonometric interpolant of `f`,
    /// with the statistical cut fixed at `θ = 0`.
    pub fn moment(&self, field: &Array2<f64>, axis: usize, power: u32) -> f64 {
        assert!(power <= 2, "moments above second order are not supported");
        if power == 0 {
            return self.integrate_unchecked(field);
        }
        let ax = &self.axes[axis];
        if ax.kind == AxisKind::Bounded {
            return field
                .indexed_iter()
                .map(|((i, j), f)| {
                    let q = if axis == 0 { self.axes[0].nodes[i] } else { self.axes[1].nodes[j] };
                    q.powi(power as i32) * f * self.cell_volume[[i, j]]
                })
                .sum();
        }
        let w = &self.angular_weights.as_ref().expect("periodic axis carries angular weights")[power as usize - 1];
        let h0 = self.axes[0].step;
        field
            .indexed_iter()
            .map(|((i, j), f)| self.jacobian[[i, j]] * h0 * w[j] * f)
            .sum()
    }

    /// Whether axis 0 starts at the polar origin, so stencils may continue through it.
    fn through_origin(&self) -> bool {
        self.chart.kind == ChartKind::Polar && self.axes[0].lo == 0.0
    }

    /// Value at `(i - 1, j)` for `i = 0` on a grid through the origin.
    fn origin_ghost(&self, f: &Array2<f64>, j: usize, parity: Parity) -> f64 {
        let n1 = self.axes[1].len();
        let v = f[[0, (j + n1 / 2) % n1]];
        match parity {
            Parity::Even => v,
            Parity::Odd => -v,
        }
    }

    /// First derivative along axis 0 (second-order central differences).
    pub fn d0(&self, f: &Array2<f64>, parity: Parity) -> Array2<f64> {
        let (n0, n1) = self.shape();
        let h = self.axes[0].step;
        let origin = self.through_origin();
        let mut out = Array2::zeros((n0, n1));
        for j in 0..n1 {
            for i in 1..n0 - 1 {
                out[[i, j]] = (f[[i + 1, j]] - f[[i - 1, j]]) / (2.0 * h);
            }
            out[[0, j]] = if origin {
                (f[[1, j]] - self.origin_ghost(f, j, parity)) / (2.0 * h)
            } else {
                (-3.0 * f[[0, j]] + 4.0 * f[[1, j]] - f[[2, j]]) / (2.0 * h)
            };
            out[[n0 - 1, j]] = (3.0 * f[[n0 - 1, j]] - 4.0 * f[[n0 - 2, j]] + f[[n0 - 3, j]]) / (2.0 * h);
        }
        out
    }

    /// Second derivative along axis 0.
    pub fn d00(&self, f: &Array2<f64>, parity: Parity) -> Array2<f64> {
        let (n0, n1) = self.shape();
        let h2 = self.axes[0].step.powi(2);
        let origin = self.through_origin();
        let mut out = Array2::zeros((n0, n1));
        for j in 0..n1 {
            for i in 1..n0 - 1 {
                out[[i, j]] = (f[[i + 1, j]] - 2.0 * f[[i, j]] + f[[i - 1, j]]) / h2;
            }
            out[[0, j]] = if origin {
                (f[[1, j]] - 2.0 * f[[0, j]] + self.origin_ghost(f, j, parity)) / h2
            } else {
                (2.0 * f[[0, j]] - 5.0 * f[[1, j]] + 4.0 * f[[2, j]] - f[[3, j]]) / h2
            };
            let k = n0 - 1;
            out[[k, j]] = (2.0 * f[[k, j]] - 5.0 * f[[k - 1, j]] + 4.0 * f[[k - 2, j]] - f[[k - 3, j]]) / h2;
        }
        out
    }

    /// First derivative along axis 1: spectral when periodic, central otherwise.
    pub fn d1(&self, f: &Array2<f64>) -> Array2<f64> {
        match self.axes[1].kind {
            AxisKind::Periodic => self.spectral_derivative(f, 1),
            AxisKind::Bounded => self.d0_transposed(f, false),
        }
    }

    /// Second derivative along axis 1.
    pub fn d11(&self, f: &Array2<f64>) -> Array2<f64> {
        match self.axes[1].kind {
            AxisKind::Periodic => self.spectral_derivative(f, 2),
            AxisKind::Bounded => self.d0_transposed(f, true),
        }
    }

    fn d0_transposed(&self, f: &Array2<f64>, second: bool) -> Array2<f64> {
        let t = Grid::assemble(
            CoordinateChart::cartesian(),
            [self.axes[1].clone(), self.axes[0].clone()],
        );
        let ft = f.t().to_owned();
        let d = if second { t.d00(&ft, Parity::Even) } else { t.d0(&ft, Parity::Even) };
        d.t().to_owned()
    }

    fn spectral_derivative(&self, f: &Array2<f64>, order: u32) -> Array2<f64> {
        let c = f.mapv(|v| Complex64::new(v, 0.0));
        self.spectral_derivative_complex(&c, order).mapv(|z| z.re)
    }

    /// Spectral θ-derivative of a complex field; the Nyquist mode is dropped
    /// for odd orders.
    pub fn spectral_derivative_complex(&self, f: &Array2<Complex64>, order: u32) -> Array2<Complex64> {
        let plan = self.spectral.as_ref().expect("spectral derivative needs a periodic axis");
        let n = self.axes[1].len();
        let mut out = f.clone();
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.forward.get_inplace_scratch_len()];
        let factors: Vec<Complex64> = (0..n)
            .map(|k| {
                let m = mode_number(k, n);
                if order % 2 == 1 && k == n / 2 {
                    return Complex64::new(0.0, 0.0);
                }
                Complex64::new(0.0, m as f64).powu(order) / n as f64
            })
            .collect();
        for mut row in out.axis_iter_mut(NdAxis(0)) {
            let mut buf: Vec<Complex64> = row.to_vec();
            plan.forward.process_with_scratch(&mut buf, &mut scratch);
            for (b, fac) in buf.iter_mut().zip(&factors) {
                *b *= fac;
            }
            plan.inverse.process_with_scratch(&mut buf, &mut scratch);
            row.assign(&Array1::from(buf));
        }
        out
    }

    /// Complex derivative along axis 0 (real and imaginary parts separately).
    pub fn d0_complex(&self, f: &Array2<Complex64>) -> Array2<Complex64> {
        let re = self.d0(&f.mapv(|z| z.re), Parity::Even);
        let im = self.d0(&f.mapv(|z| z.im), Parity::Even);
        let mut out = Array2::zeros(f.raw_dim());
        ndarray::Zip::from(&mut out).and(&re).and(&im).for_each(|o, &a, &b| *o = Complex64::new(a, b));
        out
    }

    /// Complex derivative along axis 1.
    pub fn d1_complex(&self, f: &Array2<Complex64>) -> Array2<Complex64> {
        match self.axes[1].kind {
            AxisKind::Periodic => self.spectral_derivative_complex(f, 1),
            AxisKind::Bounded => {
                let re = self.d1(&f.mapv(|z| z.re));
                let im = self.d1(&f.mapv(|z| z.im));
                let mut out = Array2::zeros(f.raw_dim());
                ndarray::Zip::from(&mut out).and(&re).and(&im).for_each(|o, &a, &b| *o = Complex64::new(a, b));
                out
            }
        }
    }

    /// Laplace–Beltrami operator `J⁻¹ ∂_i (J g^{ij} ∂_j f)` on a scalar.
    pub fn laplacian(&self, f: &Array2<f64>) -> Array2<f64> {
        match self.chart.kind {
            ChartKind::Cartesian => self.d00(f, Parity::Even) + self.d11(f),
            ChartKind::Polar => {
                let frr = self.d00(f, Parity::Even);
                let fr = self.d0(f, Parity::Even);
                let ftt = self.d11(f);
                let r = self.coordinate(0);
                frr + fr / &r + ftt / (&r * &r)
            }
        }
    }

    /// Covariant divergence `J⁻¹ ∂_i (J w^i)` of a contravariant pair.
    pub fn divergence(&self, w: &[Array2<f64>; 2]) -> Array2<f64> {
        match self.chart.kind {
            ChartKind::Cartesian => self.d0(&w[0], Parity::Even) + self.d1(&w[1]),
            ChartKind::Polar => {
                let r = self.coordinate(0);
                let flux = &r * &w[0];
                self.d0(&flux, Parity::Even) / &r + self.d1(&w[1])
            }
        }
    }

    /// Edge integrals `(∫ J f |_{lower}, ∫ J f |_{upper})` along `axis`, with `f`
    /// extrapolated linearly to bounded edges. Along the periodic axis both edges
    /// are the cut at `θ = 0 ≡ 2π`; `jump` holds `f(2π) − f(0)` per radial node.
    pub fn edge_integrals(&self, f: &Array2<f64>, axis: usize, jump: Option<&[f64]>) -> (f64, f64) {
        let (n0, n1) = self.shape();
        match (axis, self.axes[axis].kind) {
            (0, AxisKind::Bounded) => {
                let h1 = self.axes[1].step;
                let (lo, hi) = (self.axes[0].lo, self.axes[0].hi);
                (0..n1).fold((0.0, 0.0), |(a, b), j| {
                    let q1 = self.axes[1].nodes[j];
                    let f_lo = 1.5 * f[[0, j]] - 0.5 * f[[1, j]];
                    let f_hi = 1.5 * f[[n0 - 1, j]] - 0.5 * f[[n0 - 2, j]];
                    (
                        a + self.edge_jacobian([lo, q1]) * f_lo * h1,
                        b + self.edge_jacobian([hi, q1]) * f_hi * h1,
                    )
                })
            }
            (1, AxisKind::Bounded) => {
                let h0 = self.axes[0].step;
                let (lo, hi) = (self.axes[1].lo, self.axes[1].hi);
                (0..n0).fold((0.0, 0.0), |(a, b), i| {
                    let q0 = self.axes[0].nodes[i];
                    let f_lo = 1.5 * f[[i, 0]] - 0.5 * f[[i, 1]];
                    let f_hi = 1.5 * f[[i, n1 - 1]] - 0.5 * f[[i, n1 - 2]];
                    (
                        a + self.edge_jacobian([q0, lo]) * f_lo * h0,
                        b + self.edge_jacobian([q0, hi]) * f_hi * h0,
                    )
                })
            }
            (1, AxisKind::Periodic) => {
                let h0 = self.axes[0].step;
                (0..n0).fold((0.0, 0.0), |(a, b), i| {
                    let w = self.jacobian[[i, 0]] * h0;
                    let up = f[[i, 0]] + jump.map_or(0.0, |d| d[i]);
                    (a + w * f[[i, 0]], b + w * up)
                })
            }
            _ => unreachable!("axis 0 is never periodic"),
        }
    }

    fn edge_jacobian(&self, q: [f64; 2]) -> f64 {
        match self.chart.kind {
            ChartKind::Polar => q[0].max(0.0),
            ChartKind::Cartesian => 1.0,
        }
    }

    /// Bilinear interpolation of a nodal field; clamps along bounded axes.
    pub fn interpolate(&self, f: &Array2<f64>, q: [f64; 2]) -> f64 {
        let (i0, i1, t0) = self.bracket(0, q[0]);
        let (j0, j1, t1) = self.bracket(1, q[1]);
        let a = f[[i0, j0]] * (1.0 - t1) + f[[i0, j1]] * t1;
        let b = f[[i1, j0]] * (1.0 - t1) + f[[i1, j1]] * t1;
        a * (1.0 - t0) + b * t0
    }

    /// Neighbouring node indices and the interpolation fraction along an axis.
    pub(crate) fn bracket(&self, axis: usize, q: f64) -> (usize, usize, f64) {
        let ax = &self.axes[axis];
        let n = ax.len();
        let s = ax.fractional_index(q);
        match ax.kind {
            AxisKind::Bounded => {
                if s <= 0.0 {
                    (0, 0, 0.0)
                } else if s >= (n - 1) as f64 {
                    (n - 1, n - 1, 0.0)
                } else {
                    let k = s.floor() as usize;
                    (k, k + 1, s - k as f64)
                }
            }
            AxisKind::Periodic => {
                let k = (s.floor() as usize).min(n - 1);
                (k, (k + 1) % n, s - k as f64)
            }
        }
    }
}

/// Free-function form of [`Grid::integrate`].
pub fn integrate(field: &Array2<f64>, grid: &Grid) -> Result<f64> {
    grid.integrate(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polar_christoffel_examples() {
        let polar = CoordinateChart::polar();
        assert_eq!(polar.christoffel_trace([2.0, 1.0]).unwrap(), [0.5, 0.0]);
        assert_eq!(polar.christoffel_trace([0.5, 0.0]).unwrap(), [2.0, 0.0]);
        assert_eq!(CoordinateChart::cartesian().christoffel_trace([-3.0, 7.0]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn polar_chart_rejects_origin() {
        let polar = CoordinateChart::polar();
        assert!(matches!(polar.christoffel_trace([0.0, 1.0]), Err(Error::Domain { .. })));
        assert!(polar.metric([-1.0, 0.0]).is_err());
        assert!(polar.jacobian([0.0, 0.0]).is_err());
    }

    #[test]
    fn to_cartesian_examples() {
        let z = to_cartesian([1.0, 0.0]);
        assert_eq!(z, [1.0, 0.0]);
        let z = to_cartesian([2.0, PI / 2.0]);
        assert!(z[0].abs() < 1e-15 && (z[1] - 2.0).abs() < 1e-15);
        let a = to_cartesian([1.3, 0.7]);
        let b = to_cartesian([1.3, 0.7 + TAU]);
        assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
    }

    #[test]
    fn wrap_helpers() {
        assert_eq!(wrap_angle(-1e-18), 0.0);
        assert!((wrap_angle(-0.5) - (TAU - 0.5)).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_phase(-PI), PI);
    }

    #[test]
    fn annulus_area() {
        let (eps, big_r) = (0.3, 2.5);
        let grid = Grid::polar(50, 16, eps, big_r).unwrap();
        let area = grid.integrate(&grid.sample(|_, _| 1.0)).unwrap();
        assert!((area - PI * (big_r * big_r - eps * eps)).abs() < 1e-12);
    }

    #[test]
    fn zero_field_integrates_to_zero() {
        let grid = Grid::polar_disc(32, 8, 3.0).unwrap();
        assert_eq!(grid.integrate(&grid.zeros()).unwrap(), 0.0);
    }

    #[test]
    fn normalized_gaussian_integrates_to_one() {
        let grid = Grid::polar_disc(4000, 8, 8.0).unwrap();
        let rho = grid.sample(|r, _| (-r * r).exp() / PI);
        let total = grid.integrate(&rho).unwrap();
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn rejects_non_finite_samples() {
        let grid = Grid::polar_disc(8, 4, 1.0).unwrap();
        let mut f = grid.zeros();
        f[[3, 2]] = f64::NAN;
        assert!(matches!(grid.integrate(&f), Err(Error::NonFinite(3, 2))));
    }

    #[test]
    fn quadrature_is_second_order() {
        // odd radial integrand r e^{-r²}·r: midpoint error ~ h²
        let err = |n: usize| {
            let grid = Grid::polar_disc(n, 4, 6.0).unwrap();
            let v = grid.integrate(&grid.sample(|r, _| (-r * r).exp())).unwrap();
            (v - PI * (1.0 - (-36.0f64).exp())).abs()
        };
        let order = (err(100) / err(200)).log2();
        assert!(order >= 1.9, "observed order {order}");
    }

    #[test]
    fn angular_moments_exact_for_uniform_rows() {
        let grid = Grid::polar_disc(20, 16, 1.0).unwrap();
        let rho = grid.sample(|_, _| 1.0 / PI);
        let m1 = grid.moment(&rho, 1, 1);
        let m2 = grid.moment(&rho, 1, 2);
        assert!((m1 - PI).abs() < 1e-13);
        assert!((m2 - m1 * m1 - PI * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn angular_moments_spectral_for_trig_rows() {
        // g = 1 + cos θ + sin 2θ: ∫θ g = 2π² - π, ∫θ² g = 8π³/3 + 4π - 2π²
        let grid = Grid::polar(4, 32, 1.0, 2.0).unwrap();
        let g = grid.sample(|_, t| 1.0 + t.cos() + (2.0 * t).sin());
        let radial = 0.5 * (4.0 - 1.0);
        let m1 = grid.moment(&g, 1, 1) / radial;
        let m2 = grid.moment(&g, 1, 2) / radial;
        assert!((m1 - (2.0 * PI * PI - PI)).abs() < 1e-12, "{m1}");
        assert!((m2 - (8.0 * PI.powi(3) / 3.0 + 4.0 * PI - 2.0 * PI * PI)).abs() < 1e-11, "{m2}");
    }

    #[test]
    fn spectral_derivative_of_modes() {
        let grid = Grid::polar_disc(6, 16, 1.0).unwrap();
        let f = grid.sample(|r, t| r * (3.0 * t).sin());
        let d = grid.d1(&f);
        let expect = grid.sample(|r, t| 3.0 * r * (3.0 * t).cos());
        assert!((&d - &expect).iter().all(|e| e.abs() < 1e-13));
    }

    #[test]
    fn radial_derivative_through_origin() {
        // x = r cos θ is smooth through the origin: ∂_r x = cos θ exactly for linear data
        let grid = Grid::polar_disc(16, 8, 2.0).unwrap();
        let x = grid.sample(|r, t| r * t.cos());
        let d = grid.d0(&x, Parity::Even);
        let expect = grid.sample(|_, t| t.cos());
        assert!((&d - &expect).iter().all(|e| e.abs() < 1e-13));
    }

    #[test]
    fn laplacian_of_quadratic() {
        let grid = Grid::polar_disc(40, 16, 2.0).unwrap();
        let f = grid.sample(|r, t| {
            let [x, y] = to_cartesian([r, t]);
            x * x + 3.0 * y * y + x * y
        });
        let lap = grid.laplacian(&f);
        for i in 0..39 {
            for j in 0..16 {
                assert!((lap[[i, j]] - 8.0).abs() < 1e-9, "{} at {i},{j}", lap[[i, j]]);
            }
        }
    }

    #[test]
    fn interpolation_wraps_in_theta() {
        let grid = Grid::polar_disc(10, 8, 1.0).unwrap();
        let f = grid.sample(|r, t| r + t.cos());
        let h = TAU / 8.0;
        let v = grid.interpolate(&f, [0.55, TAU - 0.5 * h]);
        let expect = 0.55 + 0.5 * ((TAU - h).cos() + 1.0);
        assert!((v - expect).abs() < 1e-12);
    }
}
