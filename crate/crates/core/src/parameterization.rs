//! Linear parameterizations of the overall kinematics.
//!
//! Everything here is written for the shipped geometry: one feature at the
//! end-effector reference point of the articulated arm, seen by a camera
//! whose optical axis is the base `X₀` axis, image axes along `Y₀` and `Z₀`,
//! principal point at the pixel origin. Under that structure
//!
//! ```text
//! z(q)      = l₂ e₂ₓ(q) + l₃ e₃ₓ(q) + d_C           a_z  = (l₂, l₃, d_C)
//! J_z⊥(q)q̇  = βf l₂ [G₂]_yz q̇ + βf l₃ [G₃]_yz q̇     a_z⊥ = (βf l₂, βf l₃)
//! ```
//!
//! where `e_k` is the unit direction of link `k` and `G_k = ∂e_k/∂q`. The
//! regressors depend only on `q`, `q̇` and signals, never on the unknown
//! constants. `a_z` and `a_z⊥` share `l₂, l₃` physically but are adapted as
//! independent vectors.
//!
//! The ground-truth maps (`decompose_jacobian`) go through the camera and
//! manipulator models instead and work for any feature count; they are the
//! oracle side of the identities checked in the tests.

use nalgebra::{DVector, Matrix1x3, Matrix2x3, RowVector3};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::manipulator::{link_direction, link_jacobian, link_jacobian_rate, JointVec, ManipulatorModel};

/// Depth parameter count `p₁`.
pub const P_DEPTH: usize = 3;
/// Depth-rate-independent kinematic parameter count `p₂`.
pub const P_KIN: usize = 2;
/// Image-space dimension `2m` for the single-feature system.
pub const IMG_DIM: usize = 2;

pub type ImgVec = DVector<f64>;

/// True parameter vectors of a concrete camera/arm pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicParameterization {
    pub a_z: DVector<f64>,
    pub a_z_perp: DVector<f64>,
}

impl KinematicParameterization {
    /// Fails unless the camera and arm have the structure the regressors
    /// were derived for.
    pub fn from_models(cam: &CameraModel, arm: &ManipulatorModel) -> Result<Self> {
        if arm.n_features() != 1 || arm.feature_offsets[0].norm() != 0.0 {
            return Err(Error::Config(
                "kinematic regressors cover a single feature at the end-effector reference point".into(),
            ));
        }
        let s = cam.pixel_scale();
        let expect_d_bar = Matrix2x3::new(0.0, s, 0.0, 0.0, 0.0, s);
        let aligned = (cam.d_bar - expect_d_bar).amax() <= 1e-12 * s
            && (cam.d3 - nalgebra::Vector3::x()).amax() <= 1e-12
            && cam.p_bar.amax() <= 1e-12 * s;
        if !aligned {
            return Err(Error::Config(
                "kinematic regressors need the camera axes aligned with (Y0, Z0, X0) and a zero principal point".into(),
            ));
        }
        let [_, l2, l3] = arm.link_lengths;
        Ok(Self {
            a_z: DVector::from_vec(vec![l2, l3, cam.d0]),
            a_z_perp: DVector::from_vec(vec![s * l2, s * l3]),
        })
    }

    /// The true parameters viewed as "estimates", for substitution checks.
    pub fn as_estimate(&self) -> EstimatedKinematics {
        EstimatedKinematics {
            a_z_hat: self.a_z.clone(),
            a_z_perp_hat: self.a_z_perp.clone(),
        }
    }
}

/// Row `[e₂ₓ, e₃ₓ, 1]`: `z = depth_basis · a_z`.
pub fn depth_basis(q: &JointVec) -> RowVector3<f64> {
    RowVector3::new(link_direction(q, 2)[0], link_direction(q, 3)[0], 1.0)
}

/// Row with `ż = depth_rate_basis · a_z`.
pub fn depth_rate_basis(q: &JointVec, qdot: &JointVec) -> RowVector3<f64> {
    let g2 = link_jacobian(q, 2);
    let g3 = link_jacobian(q, 3);
    RowVector3::new(g2.row(0).dot(&qdot.transpose()), g3.row(0).dot(&qdot.transpose()), 0.0)
}

/// Per-parameter rows of `J_z`: `J_z = Σ a_z[k] h_k`, with `h₃ = 0`.
fn depth_jacobian_basis(q: &JointVec) -> [Matrix1x3<f64>; P_DEPTH] {
    [
        link_jacobian(q, 2).fixed_rows::<1>(0).into_owned(),
        link_jacobian(q, 3).fixed_rows::<1>(0).into_owned(),
        Matrix1x3::zeros(),
    ]
}

fn depth_jacobian_basis_rate(q: &JointVec, qdot: &JointVec) -> [Matrix1x3<f64>; P_DEPTH] {
    [
        link_jacobian_rate(q, qdot, 2).fixed_rows::<1>(0).into_owned(),
        link_jacobian_rate(q, qdot, 3).fixed_rows::<1>(0).into_owned(),
        Matrix1x3::zeros(),
    ]
}

/// Per-parameter blocks of `J_z⊥`: `J_z⊥ = Σ a_z⊥[k] P_k`.
fn perp_jacobian_basis(q: &JointVec) -> [Matrix2x3<f64>; P_KIN] {
    [
        link_jacobian(q, 2).fixed_rows::<2>(1).into_owned(),
        link_jacobian(q, 3).fixed_rows::<2>(1).into_owned(),
    ]
}

fn perp_jacobian_basis_rate(q: &JointVec, qdot: &JointVec) -> [Matrix2x3<f64>; P_KIN] {
    [
        link_jacobian_rate(q, qdot, 2).fixed_rows::<2>(1).into_owned(),
        link_jacobian_rate(q, qdot, 3).fixed_rows::<2>(1).into_owned(),
    ]
}

fn outer(col: &ImgVec, row: &RowVector3<f64>) -> Mat {
    Mat::from_fn(col.len(), P_DEPTH, |i, j| col[i] * row[j])
}

/// `Y_z(q, ψ)` with `Z(q) ψ = Y_z a_z`.
pub fn y_z(q: &JointVec, psi: &ImgVec) -> Mat {
    outer(psi, &depth_basis(q))
}

/// `Ȳ_z(q, q̇, φ)` with `Ż(q) φ = Ȳ_z a_z`.
pub fn ybar_z(q: &JointVec, qdot: &JointVec, phi: &ImgVec) -> Mat {
    outer(phi, &depth_rate_basis(q, qdot))
}

/// `Y_z⊥(q, q̇)` with `J_z⊥(q) q̇ = Y_z⊥ a_z⊥`.
pub fn y_z_perp(q: &JointVec, qdot: &JointVec) -> Mat {
    let basis = perp_jacobian_basis(q);
    let mut y = Mat::zeros(IMG_DIM, P_KIN);
    for (k, p) in basis.iter().enumerate() {
        y.set_column(k, &DVector::from_column_slice((p * qdot).as_slice()));
    }
    y
}

/// Ground-truth `(J_z⊥, J_z)` from `(I_m ⊗ D̄) J_f J_r` and `(I_m ⊗ d₃ᵀ) J_f J_r`.
pub fn decompose_jacobian(cam: &CameraModel, arm: &ManipulatorModel, q: &JointVec) -> (Mat, Mat) {
    let m = arm.n_features();
    let jfr = arm.feature_stack_jacobian(q) * arm.manipulator_jacobian(q);
    let mut jperp = Mat::zeros(2 * m, jfr.ncols());
    let mut jz = Mat::zeros(m, jfr.ncols());
    let d_bar = Mat::from_fn(2, 3, |i, j| cam.d_bar[(i, j)]);
    let d3t = Mat::from_fn(1, 3, |_, j| cam.d3[j]);
    for i in 0..m {
        let rows = jfr.rows(3 * i, 3);
        jperp.rows_mut(2 * i, 2).copy_from(&(&d_bar * rows));
        jz.rows_mut(i, 1).copy_from(&(&d3t * rows));
    }
    (jperp, jz)
}

/// Adapted kinematic parameters `(â_z, â_z⊥)` and the quantities obtained
/// by substituting them into `Z`, `Ż` and `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedKinematics {
    pub a_z_hat: DVector<f64>,
    pub a_z_perp_hat: DVector<f64>,
}

impl EstimatedKinematics {
    pub fn new(a_z_hat: DVector<f64>, a_z_perp_hat: DVector<f64>) -> Self {
        Self { a_z_hat, a_z_perp_hat }
    }

    /// `ẑ(q)`; `Ẑ(q) = ẑ I₂`.
    pub fn depth(&self, q: &JointVec) -> f64 {
        (depth_basis(q) * &self.a_z_hat)[0]
    }

    /// Checked `ẑ(q)`, failing when `Ẑ` is not invertible.
    pub fn depth_checked(&self, q: &JointVec) -> Result<f64> {
        let z = self.depth(q);
        if !(z > 0.0) {
            return Err(Error::SingularZhat { z_hat: z });
        }
        Ok(z)
    }

    /// The estimate of `ż`, with the parameters held fixed.
    pub fn depth_rate(&self, q: &JointVec, qdot: &JointVec) -> f64 {
        (depth_rate_basis(q, qdot) * &self.a_z_hat)[0]
    }

    /// Total time derivative of `ẑ(q)` when the parameters also move.
    pub fn depth_total_rate(&self, q: &JointVec, qdot: &JointVec, a_z_rate: &DVector<f64>) -> f64 {
        self.depth_rate(q, qdot) + (depth_basis(q) * a_z_rate)[0]
    }

    /// `Ĵ_z(q)`, the estimated depth-rate Jacobian (1×n).
    pub fn depth_jacobian(&self, q: &JointVec) -> Matrix1x3<f64> {
        depth_jacobian_basis(q)
            .iter()
            .zip(self.a_z_hat.iter())
            .fold(Matrix1x3::zeros(), |acc, (h, a)| acc + h * *a)
    }

    /// `Ĵ_z⊥(q)` (2×n).
    pub fn perp_jacobian(&self, q: &JointVec) -> Matrix2x3<f64> {
        perp_jacobian_basis(q)
            .iter()
            .zip(self.a_z_perp_hat.iter())
            .fold(Matrix2x3::zeros(), |acc, (p, a)| acc + p * *a)
    }

    /// `Ĵ(q, u) = Ĵ_z⊥(q) − u Ĵ_z(q)`.
    pub fn jacobian(&self, q: &JointVec, u: &ImgVec) -> Mat {
        let jp = self.perp_jacobian(q);
        let jz = self.depth_jacobian(q);
        Mat::from_fn(IMG_DIM, 3, |i, j| jp[(i, j)] - u[i] * jz[(0, j)])
    }

    /// Total time derivative of `Ĵ(q, u(t))` given `q̇`, `u̇` and the
    /// parameter rates.
    pub fn jacobian_rate(
        &self,
        q: &JointVec,
        qdot: &JointVec,
        u: &ImgVec,
        udot: &ImgVec,
        a_z_rate: &DVector<f64>,
        a_z_perp_rate: &DVector<f64>,
    ) -> Mat {
        let pb = perp_jacobian_basis(q);
        let pbd = perp_jacobian_basis_rate(q, qdot);
        let hb = depth_jacobian_basis(q);
        let hbd = depth_jacobian_basis_rate(q, qdot);
        let mut jp_dot = Matrix2x3::zeros();
        for k in 0..P_KIN {
            jp_dot += pb[k] * a_z_perp_rate[k] + pbd[k] * self.a_z_perp_hat[k];
        }
        let mut jz_dot = Matrix1x3::zeros();
        for k in 0..P_DEPTH {
            jz_dot += hb[k] * a_z_rate[k] + hbd[k] * self.a_z_hat[k];
        }
        let jz = self.depth_jacobian(q);
        Mat::from_fn(IMG_DIM, 3, |i, j| jp_dot[(i, j)] - udot[i] * jz[(0, j)] - u[i] * jz_dot[(0, j)])
    }
}

/// Combined depth regressor
/// `Y_z* = Y_z(q, Ẑ⁻¹Ĵ(q,x)q̇) + Ȳ_z(q, q̇, x + (x_o − x_d)/2) − ½ Y_z(q, Ẑ⁻¹Ż̂(x_o − x_d))`.
pub fn y_z_star(
    q: &JointVec,
    qdot: &JointVec,
    x: &ImgVec,
    x_o: &ImgVec,
    x_d: &ImgVec,
    est: &EstimatedKinematics,
) -> Result<Mat> {
    let z_hat = est.depth_checked(q)?;
    let qd = DVector::from_column_slice(qdot.as_slice());
    let psi1 = est.jacobian(q, x) * qd / z_hat;
    let obs_err = x_o - x_d;
    let psi2 = &obs_err * (est.depth_rate(q, qdot) / z_hat);
    let phi = x + &obs_err * 0.5;
    Ok(y_z(q, &psi1) + ybar_z(q, qdot, &phi) - y_z(q, &psi2) * 0.5)
}

/// `Y_z** = ½ Ȳ_z(q, q̇, x_o + x_d) + Y_z(q, ẋ_r)`.
pub fn y_z_star_star(q: &JointVec, qdot: &JointVec, x_o: &ImgVec, x_d: &ImgVec, xdot_r: &ImgVec) -> Mat {
    ybar_z(q, qdot, &(x_o + x_d)) * 0.5 + y_z(q, xdot_r)
}
