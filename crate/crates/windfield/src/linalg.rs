//! Small dense linear-algebra helpers shared across the crate.
//!
//! Everything here operates on `nalgebra` dynamic matrices; problem sizes
//! are tiny (state dimension 3, site counts in the tens), so clarity wins
//! over blocking tricks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, WindError};

/// Symmetrize in place as `(M + M^T)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `(M + M^T)/2` as a new matrix.
pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

pub fn frobenius_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn frobenius_dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Outer product `a b^T`.
pub fn outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose()
}

/// Cholesky-based positive-definiteness probe.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    nalgebra::Cholesky::new(m.clone()).is_some()
}

/// Log-determinant of a positive-definite matrix via Cholesky.
pub fn logdet_pd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(sym(m))
        .ok_or_else(|| WindError::numerical("log-determinant of a non-positive-definite matrix"))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Project a symmetric matrix onto the positive-semidefinite cone by
/// clipping eigenvalues below `rel_floor * max(trace, 0) / n` up to that
/// floor.
pub fn psd_project(m: &DMatrix<f64>, rel_floor: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let symm = sym(m);
    let eig = nalgebra::SymmetricEigen::new(symm);
    let floor = rel_floor * eig.eigenvalues.iter().sum::<f64>().max(0.0) / n as f64;
    let clipped = DVector::from_iterator(n, eig.eigenvalues.iter().map(|&l| l.max(floor)));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// Solve the discrete Lyapunov equation `P = A P A^T + Q` by Smith doubling:
/// `X <- X + A_k X A_k^T`, `A_k <- A_k^2`. Quadratic convergence whenever the
/// spectral radius of `A` is below one.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(WindError::invalid_params("lyapunov: A and Q must be square and conformable"));
    }
    let mut x = sym(q);
    let mut ak = a.clone();
    for _ in 0..200 {
        let delta = &ak * &x * ak.transpose();
        let delta_norm = frobenius_norm(&delta);
        x += delta;
        symmetrize(&mut x);
        if delta_norm <= tol * frobenius_norm(&x).max(1e-300) {
            return Ok(x);
        }
        ak = &ak * &ak;
        if !ak.iter().all(|v| v.is_finite()) {
            return Err(WindError::numerical(
                "lyapunov iteration diverged; transition matrix is not stable",
            ));
        }
    }
    Err(WindError::numerical("lyapunov iteration did not converge"))
}

/// Largest modulus among the eigenvalues of a (small) square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let svd = m.clone().svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Check `a <= b` in the positive-semidefinite order up to `tol`:
/// all eigenvalues of `b - a` are above `-tol`.
pub fn psd_leq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    let diff = sym(&(b - a));
    nalgebra::SymmetricEigen::new(diff)
        .eigenvalues
        .iter()
        .all(|&l| l >= -tol)
}

/// Neumaier compensated accumulator for long sums of floats.
///
/// Log-likelihoods pool thousands of per-time increments; plain summation
/// noise there is comparable to the monotonicity slack the EM suite asserts.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lyapunov_scalar() {
        // p = a p a + q  =>  p = q / (1 - a^2)
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 0.75);
        let p = solve_discrete_lyapunov(&a, &q, 1e-14).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_matches_fixed_point() {
        let a = DMatrix::from_row_slice(3, 3, &[0.7, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let mut q = DMatrix::zeros(3, 3);
        q[(0, 0)] = 1.0 - 0.49;
        let p = solve_discrete_lyapunov(&a, &q, 1e-14).unwrap();
        let residual = &a * &p * a.transpose() + &q - &p;
        assert!(frobenius_norm(&residual) < 1e-12);
        // AR(1) with unit stationary variance: P[i][j] = rho^{|i-j|}.
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(p[(i, j)], 0.7f64.powi((i as i32 - j as i32).abs()), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let q = DMatrix::from_element(1, 1, 1.0);
        assert!(solve_discrete_lyapunov(&a, &q, 1e-14).is_err());
    }

    #[test]
    fn psd_projection_clips() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let p = psd_project(&m, 1e-8);
        assert!(is_positive_definite(&(p.clone() + DMatrix::identity(2, 2) * 1e-12)));
        assert_abs_diff_eq!(p[(0, 0)], 1.0, epsilon = 1e-10);
        assert!(p[(1, 1)] >= 0.0);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut c = CompensatedSum::new();
        c.add(1e16);
        for _ in 0..10 {
            c.add(1.0);
        }
        c.add(-1e16);
        assert_abs_diff_eq!(c.value(), 10.0, epsilon = 1e-6);
    }

    #[test]
    fn spectral_radius_companion() {
        let a = DMatrix::from_row_slice(3, 3, &[0.91, -0.11, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let r = spectral_radius(&a);
        assert!(r < 1.0 && r > 0.0);
    }
}
