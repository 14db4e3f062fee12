//! Dense symmetric linear-algebra helpers shared by the numerical modules.
//!
//! Every "inverse times something" in the engine goes through [`SymSolver`],
//! which factors once (LU with partial pivoting) and refuses matrices whose
//! estimated reciprocal 1-norm condition number falls below a floor.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

/// Default reciprocal-condition floor for solves.
pub const DEFAULT_RCOND: f64 = 1e-12;

/// LU factorization of a symmetric matrix with a conditioning guard.
pub struct SymSolver {
    lu: LU<f64, Dyn, Dyn>,
    rcond: f64,
}

impl SymSolver {
    /// Factor `m` and estimate its reciprocal condition number.
    ///
    /// Fails with [`Error::Singular`] when the estimate is below `rcond_min`
    /// or when the factorization hits an exact zero pivot.
    pub fn new(m: &DMatrix<f64>, rcond_min: f64) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(Error::NotSquare {
                rows: n,
                cols: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let norm1 = one_norm(m);
        if norm1 == 0.0 {
            return Err(Error::Singular { rcond: 0.0 });
        }
        let lu = m.clone().lu();
        if !lu.is_invertible() {
            return Err(Error::Singular { rcond: 0.0 });
        }
        let mut solver = SymSolver { lu, rcond: 0.0 };
        let inv_norm = solver.inverse_one_norm_estimate();
        let rcond = if inv_norm.is_finite() && inv_norm > 0.0 {
            1.0 / (norm1 * inv_norm)
        } else {
            0.0
        };
        if !(rcond >= rcond_min) {
            return Err(Error::Singular { rcond });
        }
        solver.rcond = rcond;
        Ok(solver)
    }

    pub fn dim(&self) -> usize {
        self.lu.l().nrows()
    }

    /// Estimated reciprocal condition number in the 1-norm.
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = rhs.clone();
        if !self.lu.solve_mut(&mut x) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular { rcond: self.rcond });
        }
        Ok(x)
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut x = rhs.clone();
        if !self.lu.solve_mut(&mut x) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular { rcond: self.rcond });
        }
        Ok(x)
    }

    // Hager's estimator for ||A^-1||_1. Symmetric input, so A^-T = A^-1.
    fn inverse_one_norm_estimate(&self) -> f64 {
        let n = self.dim();
        let mut x = DVector::from_element(n, 1.0 / n as f64);
        let mut estimate = 0.0;
        for _ in 0..5 {
            let mut y = x.clone();
            if !self.lu.solve_mut(&mut y) {
                return f64::INFINITY;
            }
            estimate = y.iter().map(|v| v.abs()).sum::<f64>();
            let mut z = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
            if !self.lu.solve_mut(&mut z) {
                return f64::INFINITY;
            }
            let (j, zmax) = z
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.abs()))
                .fold((0, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
            if zmax <= z.dot(&x) {
                break;
            }
            x.fill(0.0);
            x[j] = 1.0;
        }
        estimate
    }
}

pub fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Replace `m` by `(m + m^T) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Cholesky-based test that every eigenvalue of the symmetric `m` exceeds `shift`.
pub fn min_eigen_exceeds(m: &DMatrix<f64>, shift: f64) -> bool {
    let n = m.nrows();
    let mut shifted = m.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }
    if shifted.iter().any(|v| !v.is_finite()) {
        return false;
    }
    nalgebra::Cholesky::new(shifted).is_some()
}

/// Lower-triangular factor `L` with `L L^T ~= m` for a positive semidefinite `m`.
///
/// Pivots within `tol * max(diag)` of zero are treated as exact zeros and
/// their column is dropped, so rank-deficient and all-zero inputs factor
/// without any diagonal jitter. A pivot below `-tol * max(diag)` is
/// reported as [`Error::NotPsd`].
pub fn semidefinite_cholesky(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::NotSquare {
            rows: n,
            cols: m.ncols(),
        });
    }
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let floor = tol * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot < -floor {
            return Err(Error::NotPsd { index: j, pivot });
        }
        if pivot <= floor {
            continue;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rcond_of_identity_is_one() {
        let s = SymSolver::new(&DMatrix::identity(4, 4), DEFAULT_RCOND).unwrap();
        assert_relative_eq!(s.rcond(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rcond_matches_exact_on_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-3, 10.0]));
        let s = SymSolver::new(&m, DEFAULT_RCOND).unwrap();
        assert_relative_eq!(s.rcond(), 1e-4, max_relative = 1e-12);
    }

    #[test]
    fn rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(SymSolver::new(&m, DEFAULT_RCOND), Err(Error::Singular { .. })));
    }

    #[test]
    fn rejects_ill_conditioned() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0 + 1e-14]);
        assert!(SymSolver::new(&m, DEFAULT_RCOND).is_err());
    }

    #[test]
    fn solve_agrees_with_inverse() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = SymSolver::new(&m, DEFAULT_RCOND).unwrap().solve_vec(&b).unwrap();
        let direct = m.try_inverse().unwrap() * b;
        assert_relative_eq!(x, direct, epsilon = 1e-12);
    }

    #[test]
    fn semidefinite_cholesky_handles_zero_and_rank_one() {
        let z = semidefinite_cholesky(&DMatrix::zeros(3, 3), 1e-12).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        let r1 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = semidefinite_cholesky(&r1, 1e-12).unwrap();
        assert_relative_eq!(&l * l.transpose(), r1, epsilon = 1e-14);
    }

    #[test]
    fn semidefinite_cholesky_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(semidefinite_cholesky(&m, 1e-12), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn min_eigen_test() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(min_eigen_exceeds(&m, 0.999));
        assert!(!min_eigen_exceeds(&m, 1.001));
    }
}
