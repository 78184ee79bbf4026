//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

/// Relative singular-value cutoff used by [`pinv`].
pub const PINV_RCOND: f64 = 1e-8;

/// Skew-symmetric cross-product matrix, `skew(a) * b == a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Moore–Penrose pseudoinverse via SVD, zeroing singular values below
/// `rcond * sigma_max`.
pub fn pinv_with(m: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd u");
    let v_t = svd.v_t.as_ref().expect("svd v_t");
    let s_max = svd.singular_values.max();
    let cutoff = rcond * s_max;
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    out
}

/// Pseudoinverse with the default cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    pinv_with(m, PINV_RCOND)
}

/// Singular values in descending order (empty for an empty matrix).
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Numerical rank: number of singular values above `rtol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        None => 0,
        Some(&smax) if smax == 0.0 => 0,
        Some(&smax) => s.iter().filter(|&&x| x > rtol * smax).count(),
    }
}

/// Orthonormal basis of the null space of `m` (columns), using the same
/// relative tolerance convention as [`numerical_rank`].
pub fn null_space(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad to a square system so the full right-singular basis is returned.
    let mut padded = DMatrix::zeros(m.nrows().max(n), n);
    padded.view_mut((0, 0), m.shape()).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let smax = svd.singular_values.max();
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax == 0.0 || s <= rtol * smax)
        .map(|(k, _)| v_t.row(k).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Block `i` (three entries) of a stacked 3-vector array.
pub fn block3(v: &DVector<f64>, i: usize) -> Vector3<f64> {
    Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2])
}

pub fn set_block3(v: &mut DVector<f64>, i: usize, x: &Vector3<f64>) {
    v[3 * i] = x.x;
    v[3 * i + 1] = x.y;
    v[3 * i + 2] = x.z;
}

pub fn stack3(points: &[Vector3<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(3 * points.len());
    for (i, p) in points.iter().enumerate() {
        set_block3(&mut out, i, p);
    }
    out
}

pub fn unstack3(v: &DVector<f64>) -> Vec<Vector3<f64>> {
    (0..v.len() / 3).map(|i| block3(v, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skew_matches_cross() {
        let a = Vector3::new(0.3, -1.2, 2.0);
        let b = Vector3::new(-0.7, 0.1, 0.4);
        assert!((skew(&a) * b - a.cross(&b)).norm() < 1e-15);
    }

    #[test]
    fn pinv_of_full_rank_wide_matrix_is_right_inverse() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 3.0]);
        let p = pinv(&a);
        assert!((&a * &p - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn null_space_of_rank_one() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let n = null_space(&a, 1e-9);
        assert_eq!(n.ncols(), 2);
        assert!((&a * &n).norm() < 1e-12);
        assert!((n.transpose() * &n - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn rank_of_zero_matrix() {
        assert_eq!(numerical_rank(&DMatrix::zeros(3, 3), 1e-9), 0);
    }
}
