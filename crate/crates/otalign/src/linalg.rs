//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Full SVD `M = U diag(sigma) Vt` with singular values sorted in descending
/// order. The sort is enforced here so downstream spectrum rules never depend
/// on backend ordering.
pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let svd = m.clone().svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::numerical("SVD did not produce U"))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::numerical("SVD did not produce Vt"))?;
    let sigma = svd.singular_values;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    if order.iter().enumerate().all(|(pos, &idx)| pos == idx) {
        return Ok((u, sigma, v_t));
    }

    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vt_sorted = DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
    let sigma_sorted = DVector::from_fn(order.len(), |i, _| sigma[order[i]]);
    Ok((u_sorted, sigma_sorted, vt_sorted))
}

/// Inverse square root of a symmetric positive-definite matrix via its
/// eigendecomposition. Fails when the spectrum is close to singular
/// (smallest eigenvalue below `rank_tol` times the largest).
pub(crate) fn sym_inv_sqrt(s: &DMatrix<f64>, rank_tol: f64) -> Result<DMatrix<f64>> {
    let eig = s.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if !(max_ev.is_finite() && min_ev.is_finite()) || max_ev <= 0.0 {
        return Err(Error::SingularInput(
            "second-moment matrix has no positive spectrum".into(),
        ));
    }
    if min_ev <= rank_tol * max_ev {
        return Err(Error::SingularInput(format!(
            "rank-deficient second-moment matrix: eigenvalue range [{min_ev:.3e}, {max_ev:.3e}]"
        )));
    }
    let inv_sqrt = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|ev| 1.0 / ev.sqrt()),
    );
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose())
}

/// Frobenius inner product of two equally shaped matrices.
pub(crate) fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
