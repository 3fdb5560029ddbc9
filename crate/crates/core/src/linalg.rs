//! Small dense linear-algebra helpers shared by the estimator, controller and
//! stability code. Everything here works on `nalgebra` matrices.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};

use crate::error::{Error, Result};

/// Pivots at or below this value are treated as zero in [`psd_lower_factor`].
pub const PIVOT_TOLERANCE: f64 = 1e-12;
/// Determinant floor for the closed-form 2×2 inverse.
pub const DET_TOLERANCE: f64 = 1e-15;
/// Condition-number ceiling for symmetric positive-definite solves.
pub const MAX_CONDITION: f64 = 1e12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn symmetrize2(m: &Matrix2<f64>) -> Matrix2<f64> {
    (m + m.transpose()) * 0.5
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Block-diagonal matrix from 2×2 blocks.
pub fn block_diag(blocks: &[Matrix2<f64>]) -> DMatrix<f64> {
    let n = blocks.len();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for (i, b) in blocks.iter().enumerate() {
        out.fixed_view_mut::<2, 2>(2 * i, 2 * i).copy_from(b);
    }
    out
}

/// Agent block `(i, j)` of a stacked 2N×2N matrix.
pub fn block(m: &DMatrix<f64>, i: usize, j: usize) -> Matrix2<f64> {
    m.fixed_view::<2, 2>(2 * i, 2 * j).into_owned()
}

/// Zero every off-diagonal 2×2 agent block. Returns the projected matrix and
/// the Frobenius norm of what was removed.
pub fn project_block_diagonal(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = m.nrows() / 2;
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..n {
        out.fixed_view_mut::<2, 2>(2 * i, 2 * i)
            .copy_from(&m.fixed_view::<2, 2>(2 * i, 2 * i));
    }
    let removed = (m - &out).norm();
    (out, removed)
}

/// Closed-form inverse of a 2×2 matrix.
pub fn inverse2(m: &Matrix2<f64>) -> Option<Matrix2<f64>> {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if !det.is_finite() || det.abs() <= DET_TOLERANCE {
        return None;
    }
    Some(Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}

/// Lower-triangular `G` with `G Gᵀ = cov` for a symmetric PSD `cov`.
///
/// Cholesky–Banachiewicz with a zero-pivot tolerance: a column whose pivot is
/// at or below [`PIVOT_TOLERANCE`] (relative to the largest diagonal entry) is
/// zeroed, which makes singular covariances such as `X₀ = 0` legal.
pub fn psd_lower_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::config("covariance", "matrix is not square"));
    }
    let scale = (0..n)
        .map(|i| cov[(i, i)].abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let tol = PIVOT_TOLERANCE * scale;
    for i in 0..n {
        for j in 0..i {
            if (cov[(i, j)] - cov[(j, i)]).abs() > tol.max(1e-12 * cov[(i, j)].abs()) {
                return Err(Error::config("covariance", "matrix is not symmetric"));
            }
        }
    }
    let mut g = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = cov[(j, j)];
        for p in 0..j {
            pivot -= g[(j, p)] * g[(j, p)];
        }
        if pivot < -tol {
            return Err(Error::config(
                "covariance",
                format!("matrix is not positive semi-definite (pivot {pivot:e})"),
            ));
        }
        if pivot <= tol {
            // A zero pivot forces the rest of the column to vanish too.
            for i in (j + 1)..n {
                let mut r = cov[(i, j)];
                for p in 0..j {
                    r -= g[(i, p)] * g[(j, p)];
                }
                if r.abs() > tol.sqrt() * scale.sqrt() {
                    return Err(Error::config(
                        "covariance",
                        "matrix is not positive semi-definite",
                    ));
                }
            }
            continue;
        }
        let d = pivot.sqrt();
        g[(j, j)] = d;
        for i in (j + 1)..n {
            let mut r = cov[(i, j)];
            for p in 0..j {
                r -= g[(i, p)] * g[(j, p)];
            }
            g[(i, j)] = r / d;
        }
    }
    Ok(g)
}

/// Sorted (ascending) eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(0.0)
}

pub fn max_eigenvalue2(m: &Matrix2<f64>) -> f64 {
    let s = symmetrize2(m);
    let tr = s[(0, 0)] + s[(1, 1)];
    let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(0, 1)];
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    tr / 2.0 + disc
}

/// Solve `m x = rhs` for symmetric positive-definite `m`.
///
/// Fails when `m` is not positive definite or its condition number exceeds
/// [`MAX_CONDITION`].
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    let ev = sym_eigenvalues(&sym);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if !(lo > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::numerical(
            context,
            format!("matrix is not positive definite (min eigenvalue {lo:e})"),
        ));
    }
    if hi / lo > MAX_CONDITION {
        return Err(Error::numerical(
            context,
            format!("condition number {:e} exceeds {MAX_CONDITION:e}", hi / lo),
        ));
    }
    let chol = sym
        .cholesky()
        .ok_or_else(|| Error::numerical(context, "Cholesky factorization failed"))?;
    Ok(chol.solve(rhs))
}

/// Orthonormal basis (2N × 2(N−1)) of the disagreement subspace, the
/// orthogonal complement of `1_N ⊗ ℝ²`. Built from Helmert contrasts so the
/// result is deterministic.
pub fn disagreement_basis(n: usize) -> DMatrix<f64> {
    let mut helmert = DMatrix::<f64>::zeros(n, n.saturating_sub(1));
    for m in 1..n {
        let norm = ((m * (m + 1)) as f64).sqrt();
        for r in 0..m {
            helmert[(r, m - 1)] = 1.0 / norm;
        }
        helmert[(m, m - 1)] = -(m as f64) / norm;
    }
    kron(&helmert, &DMatrix::identity(2, 2))
}

/// Orthogonal projector onto the disagreement subspace, `(I_N − 11ᵀ/N) ⊗ I₂`.
pub fn disagreement_projector(n: usize) -> DMatrix<f64> {
    let centering = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    kron(&centering, &DMatrix::identity(2, 2))
}

/// `uᵀ m u`.
pub fn restrict(m: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    u.transpose() * m * u
}

pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * m * x)[(0, 0)]
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reproduces_covariance() {
        let cov = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.6, 2.0, 2.0, 0.5, 0.6, 0.5, 3.0]);
        let g = psd_lower_factor(&cov).unwrap();
        assert!((&g * g.transpose() - &cov).norm() < 1e-12);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn factor_handles_singular_psd() {
        let zero = DMatrix::<f64>::zeros(2, 2);
        assert_eq!(psd_lower_factor(&zero).unwrap(), zero);
        // rank one: [[1,1],[1,1]]
        let r1 = DMatrix::from_element(2, 2, 1.0);
        let g = psd_lower_factor(&r1).unwrap();
        assert!((&g * g.transpose() - &r1).norm() < 1e-12);
        let first_zero = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0]);
        let g = psd_lower_factor(&first_zero).unwrap();
        assert!((&g * g.transpose() - &first_zero).norm() < 1e-12);
    }

    #[test]
    fn factor_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(psd_lower_factor(&m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]);
        assert!(psd_lower_factor(&m).is_err());
    }

    #[test]
    fn helmert_basis_is_orthonormal_complement() {
        for n in 1..6 {
            let u = disagreement_basis(n);
            assert_eq!(u.ncols(), 2 * (n - 1));
            let gram = u.transpose() * &u;
            assert!((gram - DMatrix::identity(2 * (n - 1), 2 * (n - 1))).norm() < 1e-12);
            let ones = kron(&DMatrix::from_element(n, 1, 1.0), &DMatrix::identity(2, 2));
            assert!((u.transpose() * ones).norm() < 1e-12);
            let p = disagreement_projector(n);
            assert!((&u * u.transpose() - p).norm() < 1e-12);
        }
    }

    #[test]
    fn spd_solve_rejects_ill_conditioned() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-13]));
        assert!(spd_solve(&m, &DMatrix::identity(2, 2), "t").is_err());
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let x = spd_solve(&m, &DMatrix::identity(2, 2), "t").unwrap();
        assert!((x[(1, 1)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let xs = std::iter::once(1e16)
            .chain(std::iter::repeat(1.0).take(1000))
            .chain(std::iter::once(-1e16));
        let s: CompensatedSum = xs.collect();
        assert_eq!(s.value(), 1000.0);
    }
}
