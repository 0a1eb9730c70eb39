//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenpairs of a symmetric matrix, eigenvalues in nonincreasing order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let values = DVector::from_iterator(n, order.iter().map(|&j| eig.eigenvalues[j]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Flips the sign of each column so that its largest-magnitude entry is
/// positive.
pub fn normalize_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0.0_f64;
        for &v in col.iter() {
            if v.abs() > best.abs() + 1e-12 {
                best = v;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

/// Cholesky factor of a symmetric positive definite matrix, adding a growing
/// ridge to the diagonal until the factorisation succeeds. Returns the factor
/// together with the ridge that was needed.
pub fn cholesky_with_ridge(a: &DMatrix<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok((ch, 0.0));
    }
    let n = a.nrows();
    let scale = (0..n).map(|j| a[(j, j)].abs()).fold(0.0_f64, f64::max).max(1e-12);
    let mut ridge = 1e-10 * scale;
    for _ in 0..40 {
        let mut b = a.clone();
        for j in 0..n {
            b[(j, j)] += ridge;
        }
        if let Some(ch) = b.cholesky() {
            return Ok((ch, ridge));
        }
        ridge *= 10.0;
    }
    Err(Error::Numerical("matrix could not be made positive definite by ridge regularisation".into()))
}

/// `Xᵀ diag(h) X`.
pub fn weighted_crossprod(x: &DMatrix<f64>, h: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for (mut row, &w) in scaled.row_iter_mut().zip(h.iter()) {
        row *= w;
    }
    x.tr_mul(&scaled)
}

/// Orthonormal basis (as columns) of the orthogonal complement of `c`.
///
/// Built from the Householder reflection mapping `c` onto the first
/// coordinate axis; a zero `c` yields the trailing `d - 1` coordinate axes.
pub fn orthogonal_complement(c: &DVector<f64>) -> DMatrix<f64> {
    let d = c.len();
    let norm = c.norm();
    if norm == 0.0 {
        return DMatrix::identity(d, d).columns(1, d - 1).into_owned();
    }
    // Reflect onto the axis on the same side as c[0] to avoid cancellation.
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = DMatrix::identity(d, d) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, d - 1).into_owned()
}

/// Numerical rank of a symmetric positive semidefinite matrix.
pub fn psd_rank(m: &DMatrix<f64>) -> usize {
    let (vals, _) = sym_eigen_desc(m);
    let top = vals.iter().cloned().fold(0.0_f64, f64::max);
    if top <= 0.0 {
        return 0;
    }
    vals.iter().filter(|&&v| v > top * 1e-9).count()
}

/// Solves the symmetric positive definite system `a x = b`, with ridge
/// fallback.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (ch, _) = cholesky_with_ridge(a)?;
    Ok(ch.solve(b))
}

/// Linear interpolation of `values` given on `grid` at `t`.
pub fn interp_linear(grid: &[f64], values: &[f64], t: f64) -> Option<f64> {
    let n = grid.len();
    if n == 0 || t.is_nan() {
        return None;
    }
    let tol = 1e-10 * (grid[n - 1] - grid[0]).abs().max(1.0);
    if t < grid[0] - tol || t > grid[n - 1] + tol {
        return None;
    }
    if n == 1 {
        return Some(values[0]);
    }
    let t = t.clamp(grid[0], grid[n - 1]);
    let j = match grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
        Ok(j) => return Some(values[j]),
        Err(j) => j.clamp(1, n - 1),
    };
    let (a, b) = (grid[j - 1], grid[j]);
    let u = (t - a) / (b - a);
    Some(values[j - 1] * (1.0 - u) + values[j] * u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_orthonormal_and_orthogonal() {
        let c = DVector::from_vec(vec![3.0, -1.0, 2.0, 0.5]);
        let z = orthogonal_complement(&c);
        assert_eq!(z.shape(), (4, 3));
        let ztz = z.transpose() * &z;
        assert!((ztz - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        assert!((z.transpose() * &c).abs().max() < 1e-12);

        let neg = DVector::from_vec(vec![-3.0, 1.0, 0.0]);
        let z = orthogonal_complement(&neg);
        assert!((z.transpose() * &neg).abs().max() < 1e-12);
        let zero_first = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        let z = orthogonal_complement(&zero_first);
        assert!((z.transpose() * &zero_first).abs().max() < 1e-12);
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let (v, _) = sym_eigen_desc(&m);
        assert_eq!(v.as_slice(), &[5.0, 2.0, 1.0]);
    }

    #[test]
    fn interpolation_hits_knots_and_rejects_outside() {
        let g = [0.0, 0.5, 1.0];
        let v = [1.0, 2.0, 4.0];
        assert_eq!(interp_linear(&g, &v, 0.5), Some(2.0));
        assert!((interp_linear(&g, &v, 0.75).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(interp_linear(&g, &v, 1.2), None);
    }

    #[test]
    fn ridge_rescues_singular_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, ridge) = cholesky_with_ridge(&a).unwrap();
        assert!(ridge > 0.0);
    }
}
