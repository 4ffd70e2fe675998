//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Lower-triangular factor `L` with `L Lᵀ = A` for a symmetric positive
/// semidefinite `A`.
///
/// Pivots below `tol · max diag` are treated as exact zeros (the column is
/// zeroed), which happens for fields with zero-variance boundary points.
/// A pivot below `−tol · max diag` means `A` is not PSD.
pub fn cholesky_psd(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
    }
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let cutoff = tol * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot < -cutoff {
            return Err(Error::NotPositiveSemidefinite { row: j, pivot });
        }
        if pivot <= cutoff {
            continue;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    Ok(l)
}

/// Eigen-decomposition based pseudo-inverse action for symmetric PSD matrices.
pub struct PseudoInverse {
    eigen: SymmetricEigen<f64, nalgebra::Dyn>,
    cutoff: f64,
}

impl PseudoInverse {
    /// Eigenvalues below `rel_cutoff · λ_max` are discarded.
    pub fn new(a: DMatrix<f64>, rel_cutoff: f64) -> Self {
        let eigen = a.symmetric_eigen();
        let max = eigen.eigenvalues.iter().cloned().fold(0.0, f64::max);
        Self { eigen, cutoff: rel_cutoff * max }
    }

    pub fn rank(&self) -> usize {
        self.eigen.eigenvalues.iter().filter(|&&l| l > self.cutoff).count()
    }

    /// `A⁺ r`.
    pub fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let q = &self.eigen.eigenvectors;
        let mut coeff = q.tr_mul(r);
        for (c, &l) in coeff.iter_mut().zip(self.eigen.eigenvalues.iter()) {
            *c = if l > self.cutoff { *c / l } else { 0.0 };
        }
        q * coeff
    }
}

/// Minimum-norm least-squares solution of `X β ≈ y` via SVD.
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>, rel_cutoff: f64) -> Result<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    let max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.solve(y, rel_cutoff * max).map_err(|e| Error::Numerical(e.to_string()))
}

/// `y = (A_0 ⊗ A_1 ⊗ … ) x` with `x` laid out row-major (last axis fastest).
pub fn kronecker_apply(factors: &[DMatrix<f64>], x: &[f64]) -> Vec<f64> {
    let dims: Vec<usize> = factors.iter().map(|f| f.ncols()).collect();
    assert_eq!(dims.iter().product::<usize>(), x.len());
    let mut cur = x.to_vec();
    let mut shape = dims.clone();
    for (axis, f) in factors.iter().enumerate() {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let (m, k) = (f.nrows(), f.ncols());
        let mut next = vec![0.0; outer * m * inner];
        for o in 0..outer {
            for a in 0..m {
                let dst = &mut next[(o * m + a) * inner..(o * m + a + 1) * inner];
                for c in 0..k {
                    let w = f[(a, c)];
                    if w == 0.0 {
                        continue;
                    }
                    let src = &cur[(o * k + c) * inner..(o * k + c + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        shape[axis] = m;
        cur = next;
    }
    cur
}

/// Dense Kronecker product, used to cross-check the factored route.
pub fn kronecker_dense(factors: &[DMatrix<f64>]) -> DMatrix<f64> {
    factors[1..].iter().fold(factors[0].clone(), |acc, f| acc.kronecker(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cholesky_reconstructs_spd() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0]);
        let l = cholesky_psd(&a, 1e-12).unwrap();
        assert_relative_eq!(&l * l.transpose(), a, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_handles_singular_rows() {
        // Second point has zero variance.
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 1.0]);
        let l = cholesky_psd(&a, 1e-12).unwrap();
        assert_eq!(l.row(1).iter().filter(|v| **v != 0.0).count(), 0);
        assert_relative_eq!(&l * l.transpose(), a, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match cholesky_psd(&a, 1e-12) {
            Err(Error::NotPositiveSemidefinite { row, pivot }) => {
                assert_eq!(row, 1);
                assert_relative_eq!(pivot, -3.0, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pseudo_inverse_on_rank_deficient() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let p = PseudoInverse::new(a, 1e-10);
        assert_eq!(p.rank(), 1);
        let x = p.solve(&DVector::from_vec(vec![2.0, 2.0]));
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kronecker_apply_matches_dense() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 2.0]);
        let b = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.3, 1.0, 0.0, -0.2, 0.7, 1.5]);
        let x: Vec<f64> = (0..6).map(|i| (i as f64).sin()).collect();
        let fast = kronecker_apply(&[a.clone(), b.clone()], &x);
        let dense = kronecker_dense(&[a, b]) * DVector::from_vec(x);
        for (f, d) in fast.iter().zip(dense.iter()) {
            assert_relative_eq!(f, d, epsilon = 1e-14);
        }
    }

    #[test]
    fn lstsq_recovers_line() {
        let x = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(5, |i, _| 2.0 - 0.5 * i as f64);
        let beta = lstsq(&x, &y, 1e-12).unwrap();
        assert_relative_eq!(beta[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(beta[1], -0.5, epsilon = 1e-12);
    }
}
