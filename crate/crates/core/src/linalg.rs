//! Small dense-matrix helpers: skew matrices, block-diagonal assembly,
//! the full-row-rank pseudoinverse and a numeric rank.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vec3 = Vector3<f64>;

/// Default relative tolerance for rank decisions.
pub const RANK_TOL: f64 = 1e-8;

/// The cross-product matrix `S(b)`, so that `S(b) * w == b.cross(&w)`.
pub fn skew(b: &Vec3) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -b[2], b[1], //
        b[2], 0.0, -b[0], //
        -b[1], b[0], 0.0,
    )
}

/// `Aᵀ (A Aᵀ)⁻¹` for a matrix with full row rank.
///
/// The Gram matrix `A Aᵀ` is factored with Cholesky; the call fails with
/// [`Error::RankDeficient`] when its smallest singular value (which for an
/// SPD matrix is its smallest eigenvalue) does not exceed `tol`.
pub fn pinv_full_row(a: &Mat, tol: f64) -> Result<Mat> {
    let gram = a * a.transpose();
    let sigma_min = smallest_eigenvalue_spd(&gram);
    if !(sigma_min > tol) {
        return Err(Error::RankDeficient { sigma_min, tol });
    }
    let chol = gram.cholesky().ok_or(Error::RankDeficient { sigma_min, tol })?;
    Ok(chol.solve(a).transpose())
}

fn smallest_eigenvalue_spd(m: &Mat) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v))
}

/// Number of singular values larger than `tol` times the largest one.
pub fn numeric_rank(a: &Mat, tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().fold(0.0_f64, |m, v| m.max(*v));
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&v| v > tol * max).count()
}

/// Block-diagonal assembly; off-block entries are exactly zero.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Dynamic copy of a fixed-size 3×3 matrix.
pub fn to_mat3(m: &Matrix3<f64>) -> Mat {
    Mat::from_fn(3, 3, |i, j| m[(i, j)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn skew_zero_and_direct() {
        assert_eq!(skew(&Vec3::zeros()), Matrix3::zeros());
        let s = skew(&Vec3::new(1.0, 2.0, 3.0));
        let expect = Matrix3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        assert_eq!(s, expect);
    }

    fn cross_componentwise(b: &Vec3, w: &Vec3) -> Vec3 {
        Vec3::new(
            b[1] * w[2] - b[2] * w[1],
            b[2] * w[0] - b[0] * w[2],
            b[0] * w[1] - b[1] * w[0],
        )
    }

    proptest! {
        #[test]
        fn skew_matches_cross(b in prop::array::uniform3(-10.0f64..10.0), w in prop::array::uniform3(-10.0f64..10.0)) {
            let b = Vec3::from(b);
            let w = Vec3::from(w);
            let s = skew(&b);
            prop_assert!((s + s.transpose()).iter().all(|v| *v == 0.0));
            let err = (s * w - cross_componentwise(&b, &w)).amax();
            prop_assert!(err <= 1e-15 * (1.0 + b.amax() * w.amax()));
        }

        #[test]
        fn pinv_is_right_inverse(entries in prop::collection::vec(-10.0f64..10.0, 6)) {
            let a = Mat::from_row_slice(2, 3, &entries);
            let sv = a.clone().svd(false, false).singular_values;
            let sigma_min = sv.iter().fold(f64::INFINITY, |m, v| m.min(*v));
            prop_assume!(sigma_min > 1e-3);
            let p = pinv_full_row(&a, 1e-12).unwrap();
            let err = (&a * p - Mat::identity(2, 2)).amax();
            prop_assert!(err < 1e-9, "err = {err}");
        }
    }

    #[test]
    fn pinv_simple_cases() {
        let i2 = Mat::identity(2, 2);
        assert!((pinv_full_row(&i2, 1e-12).unwrap() - &i2).amax() < 1e-15);
        let a = Mat::from_row_slice(2, 3, &[2.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        let p = pinv_full_row(&a, 1e-12).unwrap();
        let expect = Mat::from_row_slice(3, 2, &[0.5, 0.0, 0.0, 0.5, 0.0, 0.0]);
        assert!((p - expect).amax() < 1e-15);
    }

    #[test]
    fn pinv_rejects_rank_deficient() {
        let a = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(pinv_full_row(&a, 1e-8), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn rank_of_known_matrices() {
        assert_eq!(numeric_rank(&Mat::zeros(3, 3), RANK_TOL), 0);
        assert_eq!(numeric_rank(&Mat::identity(3, 3), RANK_TOL), 3);
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(numeric_rank(&a, RANK_TOL), 1);
        // rank-2 by construction: third row = first + second
        let b = Mat::from_row_slice(3, 4, &[
            1.0, 0.0, 2.0, -1.0, //
            0.0, 3.0, 1.0, 1.0, //
            1.0, 3.0, 3.0, 0.0,
        ]);
        assert_eq!(numeric_rank(&b, RANK_TOL), 2);
    }

    #[test]
    fn block_diag_assembly() {
        let i2 = Mat::identity(2, 2);
        assert_eq!(block_diag(&[i2.clone(), i2]), Mat::identity(4, 4));
        let d = block_diag(&[Mat::from_element(1, 1, 3.0), Mat::from_element(1, 1, -2.0)]);
        assert_eq!(d, Mat::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -2.0]));

        // two 2x3 blocks against an elementwise build
        let n1 = Mat::from_fn(2, 3, |i, j| (i * 3 + j) as f64 + 0.5);
        let n2 = Mat::from_fn(2, 3, |i, j| -((i * 3 + j) as f64) - 1.0);
        let d = block_diag(&[n1.clone(), n2.clone()]);
        let mut expect = Mat::zeros(4, 6);
        for i in 0..2 {
            for j in 0..3 {
                expect[(i, j)] = n1[(i, j)];
                expect[(i + 2, j + 3)] = n2[(i, j)];
            }
        }
        assert_eq!(d, expect);
    }
}
