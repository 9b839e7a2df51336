//! Symmetric and complex tridiagonal kernels: Sturm counts, bisection,
//! inverse iteration and the Thomas solve.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix with diagonal `d` and off-diagonal `e`
/// (`e[i]` couples rows `i` and `i + 1`).
#[derive(Clone, Debug)]
pub struct SymTridiagonal {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
}

impl SymTridiagonal {
    pub fn new(d: Vec<f64>, e: Vec<f64>) -> Result<Self> {
        if d.is_empty() || e.len() + 1 != d.len() {
            return Err(Error::InvalidInput(format!(
                "tridiagonal sizes do not match: {} diagonal, {} off-diagonal",
                d.len(),
                e.len()
            )));
        }
        Ok(Self { d, e })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut y = self.d[i] * x[i];
                if i > 0 {
                    y += self.e[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    y += self.e[i] * x[i + 1];
                }
                y
            })
            .collect()
    }

    /// Number of eigenvalues strictly below `x`.
    pub fn count_below(&self, x: f64) -> usize {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..self.len() {
            let coupling = if i == 0 { 0.0 } else { self.e[i - 1] * self.e[i - 1] };
            q = self.d[i] - x - if i == 0 { 0.0 } else { coupling / q };
            if q == 0.0 {
                q = -f64::EPSILON * (self.d[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    fn gershgorin(&self) -> (f64, f64) {
        let n = self.len();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut rad = 0.0;
            if i > 0 {
                rad += self.e[i - 1].abs();
            }
            if i + 1 < n {
                rad += self.e[i].abs();
            }
            lo = lo.min(self.d[i] - rad);
            hi = hi.max(self.d[i] + rad);
        }
        (lo, hi)
    }

    /// The `k`-th smallest eigenvalue (0-based) by Sturm bisection.
    pub fn eigenvalue(&self, k: usize) -> Result<f64> {
        if k >= self.len() {
            return Err(Error::InvalidInput(format!("eigenvalue index {k} out of range {}", self.len())));
        }
        let (mut lo, mut hi) = self.gershgorin();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Unit eigenvector for an accurate eigenvalue `lambda` by inverse iteration.
    pub fn eigenvector(&self, lambda: f64) -> Result<Vec<f64>> {
        let n = self.len();
        let scale = self.d.iter().map(|d| d.abs()).fold(1.0, f64::max);
        let shift = lambda + 1e-13 * scale;
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919 % 13) as f64)).collect();
        normalize(&mut x);
        for _ in 0..6 {
            let d: Vec<f64> = self.d.iter().map(|d| d - shift).collect();
            let mut y = thomas_real(&self.e, &d, &self.e, &x);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Convergence("inverse iteration produced non-finite values".into()));
            }
            normalize(&mut y);
            let dot: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            x = y;
            if 1.0 - dot.abs() < 1e-15 {
                break;
            }
        }
        let ax = self.apply(&x);
        let resid = ax.iter().zip(&x).map(|(a, v)| (a - lambda * v).powi(2)).sum::<f64>().sqrt();
        if resid > 1e-6 * scale {
            return Err(Error::Convergence(format!("eigenvector residual {resid:.3e} too large")));
        }
        Ok(x)
    }
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= n);
}

/// Solve `A x = b` for tridiagonal `A` with sub-diagonal `a`, diagonal `d` and
/// super-diagonal `c` (`a[i]` multiplies `x[i]` in row `i + 1`).
pub fn thomas_real(a: &[f64], d: &[f64], c: &[f64], b: &[f64]) -> Vec<f64> {
    let n = d.len();
    let tiny = f64::MIN_POSITIVE.sqrt();
    let mut cp = vec![0.0; n];
    let mut bp = vec![0.0; n];
    let mut piv = d[0];
    if piv.abs() < tiny {
        piv = tiny;
    }
    cp[0] = if n > 1 { c[0] / piv } else { 0.0 };
    bp[0] = b[0] / piv;
    for i in 1..n {
        let mut p = d[i] - a[i - 1] * cp[i - 1];
        if p.abs() < tiny {
            p = tiny;
        }
        cp[i] = if i + 1 < n { c[i] / p } else { 0.0 };
        bp[i] = (b[i] - a[i - 1] * bp[i - 1]) / p;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = bp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = bp[i] - cp[i] * x[i + 1];
    }
    x
}

/// LU factors of a complex tridiagonal matrix, reusable across right-hand sides.
#[derive(Clone, Debug)]
pub struct ComplexTridiagonalLu {
    sub: Vec<Complex64>,
    cp: Vec<Complex64>,
    inv_pivot: Vec<Complex64>,
}

impl ComplexTridiagonalLu {
    pub fn factor(sub: &[Complex64], diag: &[Complex64], sup: &[Complex64]) -> Result<Self> {
        let n = diag.len();
        let mut cp = vec![Complex64::new(0.0, 0.0); n];
        let mut inv_pivot = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            let p = if i == 0 { diag[0] } else { diag[i] - sub[i - 1] * cp[i - 1] };
            if p.norm() == 0.0 || !p.re.is_finite() || !p.im.is_finite() {
                return Err(Error::Convergence(format!("singular tridiagonal pivot at row {i}")));
            }
            inv_pivot[i] = p.inv();
            if i + 1 < n {
                cp[i] = sup[i] * inv_pivot[i];
            }
        }
        Ok(Self { sub: sub.to_vec(), cp, inv_pivot })
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) {
        let n = b.len();
        b[0] *= self.inv_pivot[0];
        for i in 1..n {
            b[i] = (b[i] - self.sub[i - 1] * b[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            let next = b[i + 1];
            b[i] -= self.cp[i] * next;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> SymTridiagonal {
        SymTridiagonal::new(vec![2.0; n], vec![-1.0; n - 1]).unwrap()
    }

    #[test]
    fn bisection_matches_closed_form() {
        let n = 50;
        let t = laplacian(n);
        for k in [0, 3, 49] {
            let exact = 2.0 - 2.0 * (std::f64::consts::PI * (k + 1) as f64 / (n + 1) as f64).cos();
            assert!((t.eigenvalue(k).unwrap() - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn inverse_iteration_returns_eigenvector() {
        let t = laplacian(40);
        let lambda = t.eigenvalue(2).unwrap();
        let v = t.eigenvector(lambda).unwrap();
        let av = t.apply(&v);
        let res: f64 = av.iter().zip(&v).map(|(a, x)| (a - lambda * x).powi(2)).sum();
        assert!(res.sqrt() < 1e-10);
    }

    #[test]
    fn thomas_and_complex_lu_agree() {
        let a = [1.0, -0.5, 0.25];
        let d = [4.0, 5.0, 6.0, 7.0];
        let c = [0.3, 0.2, -0.1];
        let b = [1.0, 2.0, 3.0, 4.0];
        let x = thomas_real(&a, &d, &c, &b);
        let z = |v: &[f64]| v.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>();
        let lu = ComplexTridiagonalLu::factor(&z(&a), &z(&d), &z(&c)).unwrap();
        let mut y = z(&b);
        lu.solve_in_place(&mut y);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q.re).abs() < 1e-14 && q.im.abs() < 1e-14);
        }
        let ax0 = d[0] * x[0] + c[0] * x[1];
        assert!((ax0 - b[0]).abs() < 1e-14);
    }
}
