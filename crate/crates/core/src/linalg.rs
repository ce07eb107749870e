//! Small dense linear-algebra helpers shared by the statistical modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Smallest admissible eigenvalue relative to the largest one.
pub(crate) const SINGULAR_RATIO: f64 = 1e-12;

/// Column means of `x`.
pub(crate) fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Sample covariance of the rows of `x` with divisor `n - 1`.
pub(crate) fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let means = column_means(x);
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let mut s = centered.transpose() * &centered;
    s /= (n as f64) - 1.0;
    symmetrize(&mut s);
    s
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for i in 0..k {
        for j in (i + 1)..k {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigen-decomposition of a symmetric matrix that is rejected when its
/// spectrum is not safely positive.
pub(crate) struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub(crate) fn positive_definite(m: &DMatrix<f64>) -> Option<Self> {
        if m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let eig = m.clone().symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if !(max > 0.0) || min < SINGULAR_RATIO * max {
            return None;
        }
        Some(SymEigen {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        })
    }

    /// `M^{-1/2}` via the spectral decomposition.
    pub(crate) fn inv_sqrt(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.values.map(|l| 1.0 / l.sqrt()));
        let mut out = &self.vectors * d * self.vectors.transpose();
        symmetrize(&mut out);
        out
    }
}

/// Cached Cholesky factor of a positive definite matrix.
#[derive(Clone, Debug)]
pub(crate) struct SpdFactor {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub(crate) fn new(matrix: DMatrix<f64>) -> Option<Self> {
        SymEigen::positive_definite(&matrix)?;
        let chol = matrix.clone().cholesky()?;
        Some(SpdFactor { matrix, chol })
    }

    pub(crate) fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub(crate) fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub(crate) fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `a' M^{-1} b`.
    pub(crate) fn bilinear(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&self.solve(b))
    }

    /// `L^{-1} v`, so that `|L^{-1} v|^2 = v' M^{-1} v`.
    pub(crate) fn whiten(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(v)
            .expect("cholesky factor has a nonzero diagonal")
    }

    pub(crate) fn quad_form(&self, v: &DVector<f64>) -> f64 {
        self.whiten(v).norm_squared()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_uses_n_minus_one() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let s = sample_covariance(&x);
        assert!((s[(0, 0)] - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn factor_reproduces_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = SpdFactor::new(m.clone()).unwrap();
        let l = f.lower();
        let back = &l * l.transpose();
        assert!((back - &m).norm() / m.norm() < 1e-10);
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let direct = v.dot(&(m.clone().try_inverse().unwrap() * &v));
        assert!((f.quad_form(&v) - direct).abs() < 1e-12);
    }

    #[test]
    fn rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(SpdFactor::new(m).is_none());
    }

    #[test]
    fn inverse_square_root_squares_to_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let r = SymEigen::positive_definite(&m).unwrap().inv_sqrt();
        let prod = &r * &m * &r;
        assert!((prod - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
    }
}
