//! Dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    (m - m.transpose()).abs().max() <= rel_tol * scale
}

/// Thin SVD `m = U diag(d) V^T` with singular values sorted in descending
/// order. `U` is `n x k`, `V` is `p x k` with `k = min(n, p)`.
pub fn thin_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (n, p) = m.shape();
    if n == 0 || p == 0 {
        return (DMatrix::zeros(n, 0), DVector::zeros(0), DMatrix::zeros(p, 0));
    }
    // Tall matrices: compress with a QR first, the SVD of R is cheap.
    let (u, d, v) = if n > 2 * p {
        let qr = m.clone().qr();
        let svd = qr.r().svd(true, true);
        let u = qr.q() * svd.u.expect("requested U");
        (u, svd.singular_values, svd.v_t.expect("requested V^T").transpose())
    } else {
        let svd = m.clone().svd(true, true);
        (
            svd.u.expect("requested U"),
            svd.singular_values,
            svd.v_t.expect("requested V^T").transpose(),
        )
    };
    let k = d.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| d[b].partial_cmp(&d[a]).unwrap_or(std::cmp::Ordering::Equal));
    let u_s = DMatrix::from_fn(n, k, |i, j| u[(i, order[j])]);
    let v_s = DMatrix::from_fn(p, k, |i, j| v[(i, order[j])]);
    let d_s = DVector::from_fn(k, |j, _| d[order[j]]);
    (u_s, d_s, v_s)
}

/// Orthonormal basis of the orthogonal complement of the column span of `v`
/// (whose columns are assumed orthonormal).
pub fn orthogonal_complement(v: &DMatrix<f64>) -> DMatrix<f64> {
    let p = v.nrows();
    let k = v.ncols();
    if k >= p {
        return DMatrix::zeros(p, 0);
    }
    if k == 0 {
        return DMatrix::identity(p, p);
    }
    let proj = DMatrix::identity(p, p) - v * v.transpose();
    let eig = SymmetricEigen::new(proj);
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let cols: Vec<DVector<f64>> = idx[..p - k]
        .iter()
        .map(|&j| eig.eigenvectors.column(j).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

/// Orthonormal basis of `{v : m v = 0}` up to an absolute singular-value
/// tolerance.
pub fn null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let d = m.ncols();
    if d == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return DMatrix::identity(d, d);
    }
    let eig = SymmetricEigen::new(m.transpose() * m);
    let cols: Vec<DVector<f64>> = (0..d)
        .filter(|&j| eig.eigenvalues[j].max(0.0).sqrt() <= tol)
        .map(|j| eig.eigenvectors.column(j).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(field: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::dim(field, format!("{nrows} rows"), format!("{} rows", rows.len())));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::dim(
                format!("{field}[{i}]"),
                format!("{ncols} columns"),
                format!("{} columns", r.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn from_square_or_diag(
    field: &str,
    dense: Option<&Vec<Vec<f64>>>,
    diag: Option<&Vec<f64>>,
    n: usize,
) -> Result<DMatrix<f64>> {
    match (dense, diag) {
        (Some(m), None) => from_rows(field, m, n, n),
        (None, Some(d)) => {
            if d.len() != n {
                return Err(Error::dim(format!("{field}_diag"), n, d.len()));
            }
            Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
        }
        (Some(_), Some(_)) => Err(Error::invalid(field, format!("give only one of `{field}` and `{field}_diag`"))),
        (None, None) => Err(Error::invalid(field, format!("missing: give `{field}` or `{field}_diag`"))),
    }
}

/// Cholesky factor of a symmetric PSD matrix, adding the smallest diagonal
/// jitter from the ladder `0, 1e-14, 1e-13, ...` (relative to the largest
/// diagonal entry) that makes the factorisation succeed. Returns the factor
/// and the absolute jitter applied.
pub fn cholesky_with_jitter(m: &DMatrix<f64>, max_rel_jitter: f64) -> Option<(DMatrix<f64>, f64)> {
    let n = m.nrows();
    if n == 0 {
        return Some((DMatrix::zeros(0, 0), 0.0));
    }
    let scale = m.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    if scale == 0.0 {
        return Some((DMatrix::zeros(n, n), 0.0));
    }
    let mut rel = 0.0;
    loop {
        let jitter = rel * scale;
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(c) = a.cholesky() {
            return Some((c.l(), jitter));
        }
        rel = if rel == 0.0 { 1e-14 } else { rel * 10.0 };
        if rel > max_rel_jitter * (1.0 + 1e-12) {
            return None;
        }
    }
}

/// Lower factor `L` with `L L^T = m` for symmetric PSD `m`, tolerating exact
/// zeros on the diagonal (degenerate covariances such as a point mass).
pub fn psd_factor(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(c) = m.clone().cholesky() {
        return Some(c.l());
    }
    // Fall back to a symmetric eigendecomposition.
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale.max(1e-300)) {
        return None;
    }
    let sq = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&sq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn complement_is_orthogonal() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let c = orthogonal_complement(&v);
        assert_eq!(c.shape(), (3, 2));
        assert!((v.transpose() * &c).abs().max() < 1e-14);
        assert!((c.transpose() * &c - DMatrix::identity(2, 2)).abs().max() < 1e-14);
    }

    #[test]
    fn null_space_of_rank_one() {
        let m = dmatrix![1.0, 1.0; 2.0, 2.0];
        let z = null_space(&m, 1e-10);
        assert_eq!(z.ncols(), 1);
        assert!((&m * &z).abs().max() < 1e-12);
    }

    #[test]
    fn jitter_ladder() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        let (l, j) = cholesky_with_jitter(&m, 1e-8).unwrap();
        assert!(j > 0.0 && j <= 1e-8);
        assert!((&l * l.transpose() - &m).abs().max() <= 2.0 * j);
        assert!(cholesky_with_jitter(&dmatrix![1.0, 2.0; 2.0, 1.0], 1e-8).is_none());
    }

    #[test]
    fn svd_tall_and_wide() {
        for (n, p) in [(40, 3), (3, 5), (4, 4)] {
            let m = DMatrix::from_fn(n, p, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * i as f64);
            let (u, d, v) = thin_svd(&m);
            let rec = &u * DMatrix::from_diagonal(&d) * v.transpose();
            assert!((rec - &m).norm() < 1e-10 * m.norm());
            assert!(d.as_slice().windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
