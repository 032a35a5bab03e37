//! Ground-truth three-joint articulated arm.
//!
//! Joint 1 rotates about the vertical base axis `Z₀`; joints 2 and 3 are
//! parallel pitch joints. Link 1 is a vertical column of height `l₁`, so
//! the shoulder sits at `(0, 0, l₁)`. Links 2 and 3 are uniform thin rods.
//! With `θ₂ = q₂` and `θ₃ = q₂ + q₃`, the unit direction of link `k` is
//!
//! ```text
//! e_k(q) = (cos q₁ cos θ_k, sin q₁ cos θ_k, sin θ_k)
//! ```
//!
//! and the end-effector reference point is `(0, 0, l₁) + l₂ e₂ + l₃ e₃`.
//!
//! # Dynamic parameters
//!
//! The inertial model is linear in eight constants `a_d`:
//!
//! | index | value (thin rods)        | enters                     |
//! |-------|--------------------------|----------------------------|
//! | 0     | `I_base`                 | `M₁₁`                      |
//! | 1     | `(m₂/3 + m₃) l₂²`        | `M₁₁` via `cos² θ₂`        |
//! | 2     | `m₃ l₂ l₃`               | `M₁₁`, `M₂₂`, `M₂₃`        |
//! | 3     | `m₃ l₃² / 3`             | `M₁₁` via `cos² θ₃`        |
//! | 4     | `(m₂/3 + m₃) l₂²`        | `M₂₂`                      |
//! | 5     | `m₃ l₃² / 3`             | `M₂₂`, `M₂₃`, `M₃₃`        |
//! | 6     | `g (m₂/2 + m₃) l₂`       | gravity, `cos θ₂`          |
//! | 7     | `g m₃ l₃ / 2`            | gravity, `cos θ₃`          |
//!
//! Entries 1/4 and 3/5 coincide for thin rods but are kept separate: links
//! with axial inertia split them. Link 1 lies on the yaw axis, so its mass
//! does not enter the dynamics; its inertia about `Z₀` is `I_base`.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::linalg::{skew, Mat, Vec3};

pub const N_JOINTS: usize = 3;
pub const N_DYN_PARAMS: usize = 8;

pub type JointVec = Vector3<f64>;
pub type DynamicRegressor = SMatrix<f64, N_JOINTS, N_DYN_PARAMS>;
pub type DynParams = SMatrix<f64, N_DYN_PARAMS, 1>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub q: JointVec,
    pub qdot: JointVec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorModel {
    /// `[l₁, l₂, l₃]`, meters.
    pub link_lengths: [f64; 3],
    /// `[m₁, m₂, m₃]`, kilograms.
    pub link_masses: [f64; 3],
    /// Inertia of the base column about `Z₀`, kg·m².
    pub base_inertia: f64,
    /// Gravitational acceleration along `−Z₀`, m/s².
    pub gravity: f64,
    /// Feature offsets `cᵢ` in the end-effector frame, meters.
    pub feature_offsets: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    pub m: Matrix3<f64>,
    pub c: Matrix3<f64>,
    pub g: JointVec,
}

/// Angles `θ₂ = q₂`, `θ₃ = q₂ + q₃` and their rates.
fn link_angle(q: &JointVec, link: usize) -> f64 {
    match link {
        2 => q[1],
        3 => q[1] + q[2],
        _ => panic!("link index {link} has no pitch angle"),
    }
}

fn link_angle_rate(qdot: &JointVec, link: usize) -> f64 {
    match link {
        2 => qdot[1],
        3 => qdot[1] + qdot[2],
        _ => panic!("link index {link} has no pitch angle"),
    }
}

/// Unit direction `e_k(q)` of link `k ∈ {2, 3}`.
pub fn link_direction(q: &JointVec, link: usize) -> Vec3 {
    let th = link_angle(q, link);
    let (s1, c1) = q[0].sin_cos();
    let (st, ct) = th.sin_cos();
    Vec3::new(c1 * ct, s1 * ct, st)
}

/// `∂e_k/∂q`, so that `d/dt e_k = G_k(q) q̇`.
pub fn link_jacobian(q: &JointVec, link: usize) -> Matrix3<f64> {
    let th = link_angle(q, link);
    let (s1, c1) = q[0].sin_cos();
    let (st, ct) = th.sin_cos();
    let d1 = Vec3::new(-s1 * ct, c1 * ct, 0.0);
    let dth = Vec3::new(-c1 * st, -s1 * st, ct);
    let mut g = Matrix3::zeros();
    g.set_column(0, &d1);
    g.set_column(1, &dth);
    if link == 3 {
        g.set_column(2, &dth);
    }
    g
}

/// Time derivative of [`link_jacobian`] along `q̇`.
pub fn link_jacobian_rate(q: &JointVec, qdot: &JointVec, link: usize) -> Matrix3<f64> {
    let th = link_angle(q, link);
    let thd = link_angle_rate(qdot, link);
    let (s1, c1) = q[0].sin_cos();
    let (st, ct) = th.sin_cos();
    let q1d = qdot[0];
    let d1 = Vec3::new(-c1 * ct * q1d + s1 * st * thd, -s1 * ct * q1d - c1 * st * thd, 0.0);
    let dth = Vec3::new(
        s1 * st * q1d - c1 * ct * thd,
        -c1 * st * q1d - s1 * ct * thd,
        -st * thd,
    );
    let mut g = Matrix3::zeros();
    g.set_column(0, &d1);
    g.set_column(1, &dth);
    if link == 3 {
        g.set_column(2, &dth);
    }
    g
}

impl ManipulatorModel {
    /// Uniform 2 m / 2 kg thin-rod arm with one feature at the end-effector
    /// reference point.
    pub fn default_arm() -> Self {
        Self {
            link_lengths: [2.0, 2.0, 2.0],
            link_masses: [2.0, 2.0, 2.0],
            base_inertia: 1.0,
            gravity: 9.81,
            feature_offsets: vec![Vec3::zeros()],
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_offsets.len()
    }

    /// Radius of the ball about the shoulder that contains every reachable
    /// end-effector point.
    pub fn reach(&self) -> f64 {
        self.link_lengths[1] + self.link_lengths[2]
    }

    pub fn shoulder(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.link_lengths[0])
    }

    pub fn end_effector_position(&self, q: &JointVec) -> Vec3 {
        let [_, l2, l3] = self.link_lengths;
        self.shoulder() + link_direction(q, 2) * l2 + link_direction(q, 3) * l3
    }

    /// Orientation of the last link: x along the link, y along the pitch axis.
    pub fn end_effector_rotation(&self, q: &JointVec) -> Matrix3<f64> {
        let x = link_direction(q, 3);
        let y = pitch_axis(q);
        let z = x.cross(&y);
        Matrix3::from_columns(&[x, y, z])
    }

    /// Feature offsets `cᵢ` expressed in the base frame at `q`.
    pub fn feature_offsets_base(&self, q: &JointVec) -> Vec<Vec3> {
        let rot = self.end_effector_rotation(q);
        self.feature_offsets.iter().map(|c| rot * c).collect()
    }

    pub fn feature_positions(&self, q: &JointVec) -> Vec<Vec3> {
        let p = self.end_effector_position(q);
        self.feature_offsets_base(q).into_iter().map(|c| p + c).collect()
    }

    /// `J_r(q)`: `q̇ ↦ (v₀, ω₀)` of the end-effector reference point.
    pub fn manipulator_jacobian(&self, q: &JointVec) -> Mat {
        let [_, l2, l3] = self.link_lengths;
        let jv = link_jacobian(q, 2) * l2 + link_jacobian(q, 3) * l3;
        let axis = pitch_axis(q);
        let mut j = Mat::zeros(6, N_JOINTS);
        j.view_mut((0, 0), (3, 3)).copy_from(&jv);
        j.view_mut((3, 0), (3, 1)).copy_from(&Vec3::z());
        j.view_mut((3, 1), (3, 1)).copy_from(&axis);
        j.view_mut((3, 2), (3, 1)).copy_from(&axis);
        j
    }

    /// `J_f`: rows `[I₃, −S(cᵢ)]` with `cᵢ` in base orientation at `q`.
    pub fn feature_stack_jacobian(&self, q: &JointVec) -> Mat {
        feature_stack_jacobian(&self.feature_offsets_base(q))
    }

    /// True `a_d`; see the module docs for the layout.
    pub fn dynamic_params(&self) -> DynParams {
        let [_, l2, l3] = self.link_lengths;
        let [_, m2, m3] = self.link_masses;
        let g = self.gravity;
        DynParams::from_column_slice(&[
            self.base_inertia,
            (m2 / 3.0 + m3) * l2 * l2,
            m3 * l2 * l3,
            m3 * l3 * l3 / 3.0,
            (m2 / 3.0 + m3) * l2 * l2,
            m3 * l3 * l3 / 3.0,
            g * (m2 / 2.0 + m3) * l2,
            g * m3 * l3 / 2.0,
        ])
    }

    pub fn dynamics(&self, q: &JointVec, qdot: &JointVec) -> Dynamics {
        dynamics_with_params(q, qdot, &self.dynamic_params())
    }

    /// Potential energy up to a constant.
    pub fn potential_energy(&self, q: &JointVec) -> f64 {
        let a = self.dynamic_params();
        a[6] * q[1].sin() + a[7] * (q[1] + q[2]).sin()
    }

    pub fn kinetic_energy(&self, q: &JointVec, qdot: &JointVec) -> f64 {
        let m = self.dynamics(q, qdot).m;
        0.5 * qdot.dot(&(m * qdot))
    }

    /// `Y_d(q, q̇, ξ, ξ̇)` with `Y_d a = M_a ξ̇ + C_a ξ + g_a` for every `a`.
    pub fn dynamic_regressor(&self, q: &JointVec, qdot: &JointVec, xi: &JointVec, xidot: &JointVec) -> DynamicRegressor {
        dynamic_regressor(q, qdot, xi, xidot)
    }
}

fn pitch_axis(q: &JointVec) -> Vec3 {
    let (s1, c1) = q[0].sin_cos();
    Vec3::new(s1, -c1, 0.0)
}

/// `J_f` for explicit base-frame offsets.
pub fn feature_stack_jacobian(offsets: &[Vec3]) -> Mat {
    let m = offsets.len();
    let mut jf = Mat::zeros(3 * m, 6);
    for (i, c) in offsets.iter().enumerate() {
        jf.view_mut((3 * i, 0), (3, 3)).copy_from(&Matrix3::identity());
        jf.view_mut((3 * i, 3), (3, 3)).copy_from(&(-skew(c)));
    }
    jf
}

/// Closed-form `M`, Christoffel `C`, and `g` for an arbitrary parameter
/// vector laid out as in the module docs.
pub fn dynamics_with_params(q: &JointVec, qdot: &JointVec, a: &DynParams) -> Dynamics {
    let (s2, c2) = q[1].sin_cos();
    let (s3, c3) = q[2].sin_cos();
    let (s23, c23) = (q[1] + q[2]).sin_cos();

    let m11 = a[0] + a[1] * c2 * c2 + a[2] * c2 * c23 + a[3] * c23 * c23;
    let m22 = a[4] + a[5] + a[2] * c3;
    let m23 = a[5] + 0.5 * a[2] * c3;
    let m33 = a[5];
    let m = Matrix3::new(m11, 0.0, 0.0, 0.0, m22, m23, 0.0, m23, m33);

    // nonzero partials of M
    let dm11_dq2 = -2.0 * a[1] * c2 * s2 - a[2] * (s2 * c23 + c2 * s23) - 2.0 * a[3] * c23 * s23;
    let dm11_dq3 = -a[2] * c2 * s23 - 2.0 * a[3] * c23 * s23;
    let dm22_dq3 = -a[2] * s3;
    let dm23_dq3 = -0.5 * a[2] * s3;

    let (q1d, q2d, q3d) = (qdot[0], qdot[1], qdot[2]);
    let c = Matrix3::new(
        0.5 * (dm11_dq2 * q2d + dm11_dq3 * q3d),
        0.5 * dm11_dq2 * q1d,
        0.5 * dm11_dq3 * q1d,
        -0.5 * dm11_dq2 * q1d,
        0.5 * dm22_dq3 * q3d,
        0.5 * dm22_dq3 * q2d + dm23_dq3 * q3d,
        -0.5 * dm11_dq3 * q1d,
        -0.5 * dm22_dq3 * q2d,
        0.0,
    );
    let g = JointVec::new(0.0, a[6] * c2 + a[7] * c23, a[7] * c23);
    Dynamics { m, c, g }
}

/// Per-parameter inertia matrices `M_k(q)`, with `M = Σ a_k M_k`.
fn mass_basis(q: &JointVec) -> [Matrix3<f64>; N_DYN_PARAMS] {
    let c2 = q[1].cos();
    let c3 = q[2].cos();
    let c23 = (q[1] + q[2]).cos();
    let mut b = [Matrix3::zeros(); N_DYN_PARAMS];
    b[0][(0, 0)] = 1.0;
    b[1][(0, 0)] = c2 * c2;
    b[2][(0, 0)] = c2 * c23;
    b[2][(1, 1)] = c3;
    b[2][(1, 2)] = 0.5 * c3;
    b[2][(2, 1)] = 0.5 * c3;
    b[3][(0, 0)] = c23 * c23;
    b[4][(1, 1)] = 1.0;
    b[5] = Matrix3::new(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0);
    b
}

/// `∂M_k/∂q_j`, indexed `[k][j]`.
fn mass_basis_partials(q: &JointVec) -> [[Matrix3<f64>; N_JOINTS]; N_DYN_PARAMS] {
    let (s2, c2) = q[1].sin_cos();
    let s3 = q[2].sin();
    let (s23, c23) = (q[1] + q[2]).sin_cos();
    let mut d = [[Matrix3::zeros(); N_JOINTS]; N_DYN_PARAMS];
    d[1][1][(0, 0)] = -2.0 * c2 * s2;
    d[2][1][(0, 0)] = -s2 * c23 - c2 * s23;
    d[2][2][(0, 0)] = -c2 * s23;
    d[2][2][(1, 1)] = -s3;
    d[2][2][(1, 2)] = -0.5 * s3;
    d[2][2][(2, 1)] = -0.5 * s3;
    d[3][1][(0, 0)] = -2.0 * c23 * s23;
    d[3][2][(0, 0)] = -2.0 * c23 * s23;
    d
}

fn gravity_basis(q: &JointVec) -> [JointVec; N_DYN_PARAMS] {
    let c2 = q[1].cos();
    let c23 = (q[1] + q[2]).cos();
    let mut g = [JointVec::zeros(); N_DYN_PARAMS];
    g[6] = JointVec::new(0.0, c2, 0.0);
    g[7] = JointVec::new(0.0, c23, c23);
    g
}

/// Christoffel-symbol Coriolis matrix from inertia partials.
fn christoffel(partials: &[Matrix3<f64>; N_JOINTS], qdot: &JointVec) -> Matrix3<f64> {
    Matrix3::from_fn(|k, j| {
        (0..N_JOINTS)
            .map(|i| 0.5 * (partials[i][(k, j)] + partials[j][(k, i)] - partials[k][(i, j)]) * qdot[i])
            .sum()
    })
}

/// Column `k` is `M_k ξ̇ + C_k ξ + g_k`.
pub fn dynamic_regressor(q: &JointVec, qdot: &JointVec, xi: &JointVec, xidot: &JointVec) -> DynamicRegressor {
    let mb = mass_basis(q);
    let dmb = mass_basis_partials(q);
    let gb = gravity_basis(q);
    let mut y = DynamicRegressor::zeros();
    for k in 0..N_DYN_PARAMS {
        let col = mb[k] * xidot + christoffel(&dmb[k], qdot) * xi + gb[k];
        y.set_column(k, &col);
    }
    y
}
