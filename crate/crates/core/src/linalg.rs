//! Dense linear-algebra kernels used by the estimators.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};

/// Relative asymmetry tolerated by [`eig_sym_desc`].
const SYM_TOL: f64 = 1e-10;

/// Eigenvalues below `EIG_RANK_TOL * lambda_max` count as zero rank.
pub(crate) const EIG_RANK_TOL: f64 = 1e-12;

fn to_nalgebra(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().cloned())
}

pub(crate) fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub(crate) fn frobenius_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn ensure_finite(a: &Array2<f64>, context: &str) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("{context}: non-finite entries")));
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and matching orthonormal eigenvector columns.
///
/// The input must be symmetric up to a relative asymmetry of `1e-10`; it is
/// symmetrized before factorization. Negative eigenvalues within roundoff of
/// zero (`1e-12` of the largest magnitude) are clamped to zero so that
/// covariance spectra stay nonnegative.
pub fn eig_sym_desc(s: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let p = s.nrows();
    if s.ncols() != p {
        return Err(Error::Dimension {
            context: "eig_sym_desc",
            expected: format!("{p}x{p}"),
            actual: format!("{}x{}", s.nrows(), s.ncols()),
        });
    }
    ensure_finite(s, "eig_sym_desc")?;
    let scale = max_abs(s);
    let mut max_asym = 0.0f64;
    for i in 0..p {
        for j in (i + 1)..p {
            max_asym = max_asym.max((s[[i, j]] - s[[j, i]]).abs());
        }
    }
    if scale > 0.0 && max_asym > SYM_TOL * scale {
        return Err(Error::Numerical(format!(
            "eig_sym_desc: input not symmetric (relative asymmetry {:.3e})",
            max_asym / scale
        )));
    }

    let mut m = to_nalgebra(s);
    // Exact symmetry for the solver.
    for i in 0..p {
        for j in (i + 1)..p {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    let decomp = m.symmetric_eigen();

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        decomp.eigenvalues[b]
            .partial_cmp(&decomp.eigenvalues[a])
            .expect("finite eigenvalues")
    });

    let lambda_max = order
        .first()
        .map(|&i| decomp.eigenvalues[i].abs())
        .unwrap_or(0.0)
        .max(
            order
                .last()
                .map(|&i| decomp.eigenvalues[i].abs())
                .unwrap_or(0.0),
        );
    let mut eigenvalues = Vec::with_capacity(p);
    let mut vectors = Array2::zeros((p, p));
    for (out_col, &src) in order.iter().enumerate() {
        let mut lambda = decomp.eigenvalues[src];
        if lambda < 0.0 && lambda.abs() <= EIG_RANK_TOL * lambda_max {
            lambda = 0.0;
        }
        eigenvalues.push(lambda);
        for row in 0..p {
            vectors[[row, out_col]] = decomp.eigenvectors[(row, src)];
        }
    }
    Ok((eigenvalues, vectors))
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(phi: &Array2<f64>) -> Result<f64> {
    let n = phi.nrows();
    if phi.ncols() != n {
        return Err(Error::Dimension {
            context: "spectral_radius",
            expected: format!("{n}x{n}"),
            actual: format!("{}x{}", phi.nrows(), phi.ncols()),
        });
    }
    ensure_finite(phi, "spectral_radius")?;
    if n == 0 {
        return Ok(0.0);
    }
    let eigenvalues = to_nalgebra(phi).complex_eigenvalues();
    Ok(eigenvalues.iter().fold(0.0f64, |m, z| m.max(z.norm())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_eigenvalues() {
        let (vals, _) = eig_sym_desc(&Array2::eye(3)).unwrap();
        assert_eq!(vals, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_sorted_descending() {
        let (vals, vecs) = eig_sym_desc(&Array2::from_diag(&array![2.0, 5.0, 1.0])).unwrap();
        assert_abs_diff_eq!(vals[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[2], 1.0, epsilon = 1e-12);
        // Permuted unit vectors up to sign.
        assert_abs_diff_eq!(vecs[[1, 0]].abs(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(vecs[[0, 1]].abs(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(vecs[[2, 2]].abs(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn reconstructs_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = Array2::zeros((6, 6));
        for i in 0..6 {
            for j in 0..=i {
                let v: f64 = rng.random::<f64>() - 0.5;
                s[[i, j]] = v;
                s[[j, i]] = v;
            }
        }
        let (vals, vecs) = eig_sym_desc(&s).unwrap();
        // S = V diag(vals) V'
        let mut recon = Array2::<f64>::zeros((6, 6));
        for k in 0..6 {
            for i in 0..6 {
                for j in 0..6 {
                    recon[[i, j]] += vals[k] * vecs[[i, k]] * vecs[[j, k]];
                }
            }
        }
        let scale = max_abs(&s);
        for (a, b) in s.iter().zip(recon.iter()) {
            assert!((a - b).abs() <= 1e-8 * scale.max(1.0));
        }
        // Orthonormal columns.
        let vtv = vecs.t().dot(&vecs);
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[[i, j]] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn clamps_roundoff_negative_eigenvalues() {
        // Rank-1 PSD matrix; trailing eigenvalues are roundoff noise.
        let q = array![[0.6], [0.8], [0.0]];
        let s = q.dot(&q.t());
        let (vals, _) = eig_sym_desc(&s).unwrap();
        assert!(vals.iter().all(|&v| v >= 0.0));
        assert_abs_diff_eq!(vals[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_asymmetric_input() {
        let s = array![[1.0, 2.0], [0.0, 1.0]];
        assert!(eig_sym_desc(&s).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let s = array![[1.0, f64::INFINITY], [f64::INFINITY, 1.0]];
        assert!(eig_sym_desc(&s).is_err());
        assert!(spectral_radius(&s).is_err());
    }

    #[test]
    fn spectral_radius_diagonal() {
        let phi = Array2::from_diag(&array![0.5, -0.9]);
        assert_abs_diff_eq!(spectral_radius(&phi).unwrap(), 0.9, epsilon = 1e-10);
    }

    #[test]
    fn spectral_radius_complex_pair() {
        let theta: f64 = 1.1;
        let phi = array![
            [0.7 * theta.cos(), -0.7 * theta.sin()],
            [0.7 * theta.sin(), 0.7 * theta.cos()]
        ];
        assert_abs_diff_eq!(spectral_radius(&phi).unwrap(), 0.7, epsilon = 1e-8);
    }

    #[test]
    fn spectral_radius_nilpotent() {
        let phi = array![[0.0, 3.0, 1.0], [0.0, 0.0, 2.0], [0.0, 0.0, 0.0]];
        assert!(spectral_radius(&phi).unwrap() < 1e-8);
    }
}
