//! Ground-truth fixed pinhole camera.
//!
//! The controller never sees this model: it only receives the measured
//! pixel positions it produces. The camera is stored both as the physical
//! description (intrinsics, extrinsics) and as the compiled blocks of the
//! perspective projection matrix `[D̄ p̄; d₃ᵀ d₀]`, which are all the hot loop
//! touches.

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, Mat, Vec3};

pub type ImagePoint = Vector2<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct Intrinsics {
    /// Focal length, meters.
    pub focal_length: f64,
    /// Pixels per meter on the sensor, both axes.
    pub beta: f64,
    /// Principal point, pixels.
    pub principal_point: Vector2<f64>,
}

/// Base frame to camera frame: `p_cam = rotation * r + translation`.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub d_bar: Matrix2x3<f64>,
    pub d3: Vec3,
    pub d0: f64,
    pub p_bar: Vector2<f64>,
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics) -> Self {
        let s = intrinsics.beta * intrinsics.focal_length;
        let pp = intrinsics.principal_point;
        let k = Matrix3::new(s, 0.0, pp[0], 0.0, s, pp[1], 0.0, 0.0, 1.0);
        let d = k * extrinsics.rotation;
        let kt = k * extrinsics.translation;
        Self {
            d_bar: d.fixed_rows::<2>(0).into_owned(),
            d3: d.row(2).transpose(),
            d0: kt[2],
            p_bar: Vector2::new(kt[0], kt[1]),
            intrinsics,
            extrinsics,
        }
    }

    /// Camera whose axes `X_C, Y_C, Z_C` are aligned with the base axes
    /// `Y₀, Z₀, X₀`, with the base origin at distance `offset` along `Z_C`.
    /// The principal point is at the pixel origin.
    pub fn aligned(focal_length: f64, beta: f64, offset: f64) -> Self {
        let rotation = Matrix3::new(
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0, //
            1.0, 0.0, 0.0,
        );
        Self::new(
            Intrinsics {
                focal_length,
                beta,
                principal_point: Vector2::zeros(),
            },
            Extrinsics {
                rotation,
                translation: Vector3::new(0.0, 0.0, offset),
            },
        )
    }

    /// `βf`, pixels per unit normalized image coordinate.
    pub fn pixel_scale(&self) -> f64 {
        self.intrinsics.beta * self.intrinsics.focal_length
    }

    pub fn depth(&self, r: &Vec3) -> f64 {
        self.d3.dot(r) + self.d0
    }

    /// Pixel position `(D̄ r + p̄) / z`.
    pub fn project(&self, r: &Vec3) -> Result<ImagePoint> {
        let z = self.depth(r);
        if !(z > 0.0) {
            return Err(Error::NonPositiveDepth { depth: z });
        }
        Ok((self.d_bar * r + self.p_bar) / z)
    }

    /// Depth-independent interaction matrix `N(x) = D̄ − x d₃ᵀ`.
    pub fn interaction_matrix(&self, x: &ImagePoint) -> Matrix2x3<f64> {
        self.d_bar - x * self.d3.transpose()
    }

    /// Stacked `(Z, N, X)` for `m` features: `Z = diag(zᵢ I₂)`,
    /// `N = diag(Nᵢ(xᵢ))`, `X = diag(xᵢ)` with each `xᵢ` a 2×1 column.
    pub fn stacked_maps(&self, x: &[ImagePoint], r: &[Vec3]) -> Result<StackedMaps> {
        if x.len() != r.len() || x.is_empty() || x.len() > 3 {
            return Err(Error::Dimension(format!(
                "stacked_maps needs 1..=3 features with matching lengths, got {} pixels and {} points",
                x.len(),
                r.len()
            )));
        }
        let z_blocks: Vec<Mat> = r
            .iter()
            .map(|ri| Mat::identity(2, 2) * self.depth(ri))
            .collect();
        let n_blocks: Vec<Mat> = x
            .iter()
            .map(|xi| {
                let n = self.interaction_matrix(xi);
                Mat::from_fn(2, 3, |i, j| n[(i, j)])
            })
            .collect();
        let x_blocks: Vec<Mat> = x.iter().map(|xi| Mat::from_column_slice(2, 1, xi.as_slice())).collect();
        Ok(StackedMaps {
            z: block_diag(&z_blocks),
            n: block_diag(&n_blocks),
            x: block_diag(&x_blocks),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackedMaps {
    pub z: Mat,
    pub n: Mat,
    pub x: Mat,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{numeric_rank, RANK_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sec4() -> CameraModel {
        CameraModel::aligned(0.15, 900.0, 5.0)
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let cam = sec4();
        // optical axis is X₀; unit depth one meter in front of the pinhole
        let r = Vec3::new(-4.0, 0.0, 0.0);
        assert_eq!(cam.depth(&r), 1.0);
        assert_eq!(cam.project(&r).unwrap(), ImagePoint::zeros());
    }

    #[test]
    fn aligned_geometry_depth() {
        let cam = sec4();
        // pinhole at X₀ = -5: a point 3 m ahead of it along X₀
        let r = Vec3::new(-2.0, 0.7, -0.3);
        assert!((cam.depth(&r) - 3.0).abs() < 1e-15);
        assert_eq!(cam.depth(&Vec3::zeros()), cam.d0);
        assert_eq!(cam.d0, 5.0);
        assert_eq!(cam.d3, Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn depth_direct_formula() {
        let mut cam = sec4();
        cam.d3 = Vec3::new(0.0, 0.0, 1.0);
        cam.d0 = 5.0;
        assert_eq!(cam.depth(&Vec3::new(1.0, 2.0, 3.0)), 8.0);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let cam = sec4();
        let r = Vec3::new(-6.0, 0.0, 0.0);
        assert!(matches!(cam.project(&r), Err(Error::NonPositiveDepth { .. })));
    }

    #[test]
    fn interaction_matrix_at_zero_pixel_is_d_bar() {
        let cam = sec4();
        assert_eq!(cam.interaction_matrix(&ImagePoint::zeros()), cam.d_bar);
    }

    #[test]
    fn interaction_matrix_is_affine() {
        let cam = sec4();
        let x = ImagePoint::new(12.5, -40.0);
        let delta = ImagePoint::new(-3.25, 7.5);
        let lhs = cam.interaction_matrix(&(x + delta)) - cam.interaction_matrix(&x);
        assert_eq!(lhs, -delta * cam.d3.transpose());
    }

    #[test]
    fn interaction_matrix_has_rank_two() {
        let cam = sec4();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let u = ImagePoint::new(rng.gen_range(-500.0..500.0), rng.gen_range(-500.0..500.0));
            let n = cam.interaction_matrix(&u);
            let n = Mat::from_fn(2, 3, |i, j| n[(i, j)]);
            assert_eq!(numeric_rank(&n, RANK_TOL), 2);
        }
    }

    #[test]
    fn projection_velocity_matches_interaction_matrix() {
        // central differences of the projection against (1/z) N(x) ṙ
        let cam = CameraModel::new(
            Intrinsics {
                focal_length: 0.02,
                beta: 4000.0,
                principal_point: Vector2::new(320.0, 240.0),
            },
            Extrinsics {
                rotation: nalgebra::Rotation3::from_euler_angles(0.1, -0.3, 0.2).into_inner(),
                translation: Vector3::new(0.2, -0.1, 4.0),
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..200 {
            let r = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let rdot = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let fd = (cam.project(&(r + rdot * h)).unwrap() - cam.project(&(r - rdot * h)).unwrap()) / (2.0 * h);
            let x = cam.project(&r).unwrap();
            let pred = cam.interaction_matrix(&x) * rdot / cam.depth(&r);
            assert!((fd - pred).norm() < 1e-5 * (1.0 + fd.norm()), "{fd} vs {pred}");
        }
    }

    #[test]
    fn stacked_maps_shapes() {
        let cam = sec4();
        let r = [Vec3::new(-3.0, 0.1, 0.2), Vec3::new(-2.0, -0.1, 0.4)];
        let x: Vec<ImagePoint> = r.iter().map(|ri| cam.project(ri).unwrap()).collect();
        let maps = cam.stacked_maps(&x, &r).unwrap();
        assert_eq!(maps.z, Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 2.0, 3.0, 3.0])));
        assert_eq!(maps.n.shape(), (4, 6));
        assert_eq!(maps.x.shape(), (4, 2));
        assert_eq!(maps.x[(2, 1)], x[1][0]);
        assert_eq!(maps.x[(0, 1)], 0.0);

        let single = cam.stacked_maps(&x[..1], &r[..1]).unwrap();
        let n = cam.interaction_matrix(&x[0]);
        assert_eq!(single.n, Mat::from_fn(2, 3, |i, j| n[(i, j)]));
        assert_eq!(single.z, Mat::identity(2, 2) * cam.depth(&r[0]));
    }

    #[test]
    fn stacked_maps_rejects_bad_lengths() {
        let cam = sec4();
        assert!(cam.stacked_maps(&[], &[]).is_err());
        assert!(cam.stacked_maps(&[ImagePoint::zeros()], &[]).is_err());
    }
}
