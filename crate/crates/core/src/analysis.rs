//! Executable theory: Lyapunov monitors, the observer gain condition, rank
//! checks on the interaction/feature Jacobians, and workspace audits.
//!
//! Everything in this module may read ground truth. The controller never
//! calls into it.

use nalgebra::{DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraModel, ImagePoint};
use crate::controller::{Gains, ProjectionRegion};
use crate::error::{Error, Result};
use crate::linalg::{numeric_rank, Mat, Vec3, RANK_TOL};
use crate::manipulator::{feature_stack_jacobian, DynParams, JointVec, ManipulatorModel};
use crate::parameterization::{EstimatedKinematics, ImgVec};

/// One sample of the Lyapunov monitors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovTrace {
    pub t: f64,
    pub v1: f64,
    /// `V₂` without the integral term.
    pub v2_core: f64,
    /// Running `∫ sᵀĴ*ᵀZ⁻¹Ĵ*s dt`.
    pub integral_term: f64,
    pub h_min_eig: f64,
}

impl LyapunovTrace {
    /// Full `V₂` once the constant `l_M` is known.
    pub fn v2(&self, gamma: f64, l_m: f64) -> f64 {
        self.v2_core + (l_m - self.integral_term) / gamma
    }
}

fn spd_inverse(m: &Mat) -> Mat {
    m.clone()
        .cholesky()
        .expect("gain matrices are validated positive definite")
        .inverse()
}

/// `½ sᵀMs + ½ Δa_dᵀ Γ_d⁻¹ Δa_d`.
pub fn lyapunov_v1(s: &JointVec, m: &Matrix3<f64>, da_d: &DynParams, gamma_d: &Mat) -> f64 {
    let da = DVector::from_column_slice(da_d.as_slice());
    0.5 * s.dot(&(m * s)) + 0.5 * da.dot(&(spd_inverse(gamma_d) * &da))
}

/// Everything in `V₂` except the integral term: the two depth-weighted
/// image errors and the two kinematic parameter errors.
pub fn lyapunov_v2_core(
    dx_o: &ImgVec,
    dx: &ImgVec,
    z: &Mat,
    da_z_perp: &DVector<f64>,
    da_z: &DVector<f64>,
    gains: &Gains,
) -> f64 {
    0.5 * dx_o.dot(&(z * dx_o))
        + 0.5 * dx.dot(&(z * dx))
        + 0.5 * da_z_perp.dot(&(spd_inverse(&gains.gamma_z_perp) * da_z_perp))
        + 0.5 * da_z.dot(&(spd_inverse(&gains.gamma_z) * da_z))
}

/// Full `V₂` with the integral correction `(l_M − ∫)/γ`.
#[allow(clippy::too_many_arguments)]
pub fn lyapunov_v2(
    dx_o: &ImgVec,
    dx: &ImgVec,
    z: &Mat,
    da_z_perp: &DVector<f64>,
    da_z: &DVector<f64>,
    gains: &Gains,
    integral_term: f64,
    l_m: f64,
) -> f64 {
    lyapunov_v2_core(dx_o, dx, z, da_z_perp, da_z, gains) + (l_m - integral_term) / gains.gamma
}

/// Smallest eigenvalue over the per-feature blocks
/// `[[αz, γz/2], [γz/2, 3γz/4]]`.
///
/// The determinant `z²γ(3α − γ)/4` is formed directly and divided by the
/// larger eigenvalue, so the result is exactly signed and does not suffer
/// cancellation near `α = γ/3`.
pub fn h_matrix_min_eig(alpha: f64, gamma: f64, z: &[f64]) -> Result<f64> {
    let mut min = f64::INFINITY;
    for &zi in z {
        if !(zi > 0.0) {
            return Err(Error::NonPositiveDepth { depth: zi });
        }
        let a = alpha * zi;
        let b = 0.5 * gamma * zi;
        let d = 0.75 * gamma * zi;
        let mean = 0.5 * (a + d);
        let lmax = mean + (0.25 * (a - d) * (a - d) + b * b).sqrt();
        let det = zi * zi * gamma * (3.0 * alpha - gamma) / 4.0;
        min = min.min(det / lmax);
    }
    Ok(min)
}

/// Result of checking a sequence for monotone non-increase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityReport {
    pub violations: usize,
    /// Largest step-to-step increase (may be negative if always decreasing).
    pub max_increase: f64,
}

pub fn check_non_increasing(values: &[f64], slack: f64) -> MonotonicityReport {
    let mut violations = 0;
    let mut max_increase = f64::NEG_INFINITY;
    for w in values.windows(2) {
        let inc = w[1] - w[0];
        max_increase = max_increase.max(inc);
        if inc > slack {
            violations += 1;
        }
    }
    MonotonicityReport { violations, max_increase }
}

/// Outcome of the Lyapunov certificate over one run.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub v1: MonotonicityReport,
    /// `None` when `α ≤ γ/3`: the certificate is not claimed there.
    pub v2: Option<MonotonicityReport>,
    pub condition_holds: bool,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.v1.violations == 0 && self.v2.is_some_and(|r| r.violations == 0)
    }
}

/// Checks both monitors with the post-hoc `l_M` equal to the final value
/// of the integral.
pub fn lyapunov_certificate(trace: &[LyapunovTrace], gains: &Gains, slack: f64) -> CertificateReport {
    let v1: Vec<f64> = trace.iter().map(|r| r.v1).collect();
    let l_m = trace.last().map(|r| r.integral_term).unwrap_or(0.0);
    let condition_holds = gains.theorem_condition_holds();
    let v2 = condition_holds.then(|| {
        let v2: Vec<f64> = trace.iter().map(|r| r.v2(gains.gamma, l_m)).collect();
        check_non_increasing(&v2, slack)
    });
    CertificateReport { v1: check_non_increasing(&v1, slack), v2, condition_holds }
}

/// Expected `rank(N(u)J_f)` for `m` features.
pub fn expected_image_rank(m: usize) -> usize {
    2 * m
}

/// Expected `rank(J_f)` for `m` generic features.
pub fn expected_feature_rank(m: usize) -> usize {
    match m {
        1 => 3,
        2 => 5,
        _ => 6,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankAuditReport {
    pub m: usize,
    pub samples: usize,
    pub expected_rank: usize,
    /// Pixel sets at which `N(u)J_f` lost rank.
    pub violations: Vec<Vec<ImagePoint>>,
    pub feature_rank: usize,
    pub expected_feature_rank: usize,
    /// For three features: whether the offsets are collinear.
    pub collinear: bool,
    /// For two features: smallest angle (rad) between `c₁ − c₂` and the
    /// line where the two planes `range(N₁ᵀ)`, `range(N₂ᵀ)` meet.
    pub min_genericity_angle: Option<f64>,
}

impl RankAuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.feature_rank == self.expected_feature_rank && !self.collinear
    }
}

/// Null direction of `N_i(u_i)`: the viewing ray through pixel `u_i`.
fn null_direction(cam: &CameraModel, u: &ImagePoint) -> Vec3 {
    let n = cam.interaction_matrix(u);
    let r0 = Vec3::new(n[(0, 0)], n[(0, 1)], n[(0, 2)]);
    let r1 = Vec3::new(n[(1, 0)], n[(1, 1)], n[(1, 2)]);
    r0.cross(&r1).normalize()
}

/// Angle between vector `v` and the line spanned by `dir`.
fn angle_to_line(v: &Vec3, dir: &Vec3) -> f64 {
    let c = (v.dot(dir) / (v.norm() * dir.norm())).abs().min(1.0);
    c.acos()
}

/// Relative collinearity measure of three points.
pub fn collinear(c: &[Vec3], tol: f64) -> bool {
    if c.len() < 3 {
        return false;
    }
    let a = c[1] - c[0];
    let b = c[2] - c[0];
    let scale = a.norm().max(b.norm()).max(f64::MIN_POSITIVE);
    a.cross(&b).norm() <= tol * scale * scale
}

/// Rank of `N(u)J_f` for random pixels and given base-frame offsets.
pub fn rank_audit(cam: &CameraModel, offsets: &[Vec3], samples: usize, pixel_box: f64, seed: u64) -> Result<RankAuditReport> {
    let m = offsets.len();
    if m == 0 || m > 3 {
        return Err(Error::Dimension(format!("rank audit covers 1..=3 features, got {m}")));
    }
    let jf = feature_stack_jacobian(offsets);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let mut min_angle: Option<f64> = None;
    for _ in 0..samples {
        let u: Vec<ImagePoint> = (0..m)
            .map(|_| ImagePoint::new(rng.gen_range(-pixel_box..pixel_box), rng.gen_range(-pixel_box..pixel_box)))
            .collect();
        let blocks: Vec<Mat> = u
            .iter()
            .map(|ui| {
                let n = cam.interaction_matrix(ui);
                Mat::from_fn(2, 3, |i, j| n[(i, j)])
            })
            .collect();
        let n = crate::linalg::block_diag(&blocks);
        if numeric_rank(&(n * &jf), RANK_TOL) != expected_image_rank(m) {
            violations.push(u.clone());
        }
        if m == 2 {
            let line = null_direction(cam, &u[0]).cross(&null_direction(cam, &u[1]));
            let angle = angle_to_line(&(offsets[0] - offsets[1]), &line);
            min_angle = Some(min_angle.map_or(angle, |a: f64| a.min(angle)));
        }
    }
    Ok(RankAuditReport {
        m,
        samples,
        expected_rank: expected_image_rank(m),
        violations,
        feature_rank: numeric_rank(&jf, RANK_TOL),
        expected_feature_rank: expected_feature_rank(m),
        collinear: m == 3 && collinear(offsets, 1e-9),
        min_genericity_angle: min_angle,
    })
}

/// Rank of `N(u)J_f J_r` with a random well-conditioned 6×6 `J_r`, the
/// stand-in for a six-joint arm away from its singularities.
pub fn synthetic_six_dof_audit(cam: &CameraModel, offsets: &[Vec3], samples: usize, seed: u64) -> Result<RankAuditReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = offsets.len();
    let jf = feature_stack_jacobian(offsets);
    let mut violations = Vec::new();
    let mut drawn = 0;
    while drawn < samples {
        let jr = Mat::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
        let sv = jr.clone().svd(false, false).singular_values;
        if sv.min() < 1e-2 {
            continue;
        }
        drawn += 1;
        let u: Vec<ImagePoint> = (0..m)
            .map(|_| ImagePoint::new(rng.gen_range(-300.0..300.0), rng.gen_range(-300.0..300.0)))
            .collect();
        let blocks: Vec<Mat> = u
            .iter()
            .map(|ui| {
                let n = cam.interaction_matrix(ui);
                Mat::from_fn(2, 3, |i, j| n[(i, j)])
            })
            .collect();
        let j = crate::linalg::block_diag(&blocks) * &jf * jr;
        if numeric_rank(&j, RANK_TOL) != expected_image_rank(m) {
            violations.push(u);
        }
    }
    Ok(RankAuditReport {
        m,
        samples,
        expected_rank: expected_image_rank(m),
        violations,
        feature_rank: numeric_rank(&jf, RANK_TOL),
        expected_feature_rank: expected_feature_rank(m),
        collinear: m == 3 && collinear(offsets, 1e-9),
        min_genericity_angle: None,
    })
}

/// Per-configuration verdict of the workspace audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellVerdict {
    pub q: JointVec,
    /// Rank of the translational part of `J_r`.
    pub arm_rank: usize,
    pub image_rank: usize,
}

impl CellVerdict {
    pub fn arm_singular(&self) -> bool {
        self.arm_rank < 3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceAuditReport {
    pub cells: usize,
    /// Configurations where the arm itself is singular.
    pub arm_singular: Vec<CellVerdict>,
    /// Configurations away from arm singularities where `J(q, x)` still
    /// loses rank. The audit passes when this is empty.
    pub image_deficient: Vec<CellVerdict>,
    /// Cells skipped because the feature is at or behind the camera.
    pub behind_camera: usize,
}

impl WorkspaceAuditReport {
    pub fn passed(&self) -> bool {
        self.image_deficient.is_empty()
    }
}

/// Ranks at one configuration, or `None` if a feature is not in front of
/// the camera.
pub fn cell_verdict(cam: &CameraModel, arm: &ManipulatorModel, q: &JointVec) -> Option<CellVerdict> {
    let r = arm.feature_positions(q);
    let x: Vec<ImagePoint> = r.iter().map(|ri| cam.project(ri)).collect::<Result<_>>().ok()?;
    let maps = cam.stacked_maps(&x, &r).ok()?;
    let jr = arm.manipulator_jacobian(q);
    let jv = jr.rows(0, 3).into_owned();
    let j = maps.n * arm.feature_stack_jacobian(q) * &jr;
    Some(CellVerdict {
        q: *q,
        arm_rank: numeric_rank(&jv, 1e-6),
        image_rank: numeric_rank(&j, 1e-6),
    })
}

/// Sweeps `q` over the Cartesian grid given by one list of values per joint.
pub fn jacobian_rank_workspace_audit(cam: &CameraModel, arm: &ManipulatorModel, grid: &[Vec<f64>; 3]) -> WorkspaceAuditReport {
    let mut report = WorkspaceAuditReport { cells: 0, arm_singular: vec![], image_deficient: vec![], behind_camera: 0 };
    let expected = 2 * arm.n_features();
    for &a in &grid[0] {
        for &b in &grid[1] {
            for &c in &grid[2] {
                report.cells += 1;
                match cell_verdict(cam, arm, &JointVec::new(a, b, c)) {
                    None => report.behind_camera += 1,
                    Some(v) if v.arm_singular() => report.arm_singular.push(v),
                    Some(v) if v.image_rank < expected => report.image_deficient.push(v),
                    Some(_) => {}
                }
            }
        }
    }
    report
}

/// Evenly spaced values, both ends included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthAuditReport {
    pub samples: usize,
    pub min_depth: f64,
}

/// Minimum true depth over uniform samples of the ball about the shoulder
/// that contains every reachable feature point.
pub fn depth_positivity_audit(cam: &CameraModel, arm: &ManipulatorModel, samples: usize, seed: u64) -> DepthAuditReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset_reach = arm.feature_offsets.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let radius = arm.reach() + offset_reach;
    let centre = arm.shoulder();
    let mut min_depth = f64::INFINITY;
    let mut n = 0;
    while n < samples {
        let p = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        if p.norm_squared() > 1.0 {
            continue;
        }
        n += 1;
        min_depth = min_depth.min(cam.depth(&(centre + p * radius)));
    }
    DepthAuditReport { samples, min_depth }
}

/// Extremes of `ẑ(q)` and of the conditioning of `Ĵ*` over the corners of
/// the projection box, a set of joint configurations, and a pixel box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionAuditReport {
    pub min_z_hat: f64,
    /// Smallest `σ_min/σ_max` of `Ĵ(q, u)`.
    pub min_jacobian_conditioning: f64,
}

impl RegionAuditReport {
    pub fn passed(&self, min_depth: f64, min_conditioning: f64) -> bool {
        self.min_z_hat > min_depth && self.min_jacobian_conditioning > min_conditioning
    }
}

fn box_corners(lo: &DVector<f64>, hi: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = lo.len();
    (0..1usize << n)
        .map(|mask| DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }))
        .collect()
}

/// `ẑ` is affine in `â_z` and `Ĵ` is affine in `(â_z, â_z⊥)`, so corners
/// bound `ẑ` exactly; the conditioning is sampled at the corners too.
pub fn projection_region_audit(region: &ProjectionRegion, qs: &[JointVec], pixels: &[ImgVec]) -> RegionAuditReport {
    let mut min_z_hat = f64::INFINITY;
    let mut min_cond = f64::INFINITY;
    let z_corners = box_corners(&region.a_z_lower, &region.a_z_upper);
    let p_corners = box_corners(&region.a_z_perp_lower, &region.a_z_perp_upper);
    for az in &z_corners {
        for ap in &p_corners {
            let est = EstimatedKinematics::new(az.clone(), ap.clone());
            for q in qs {
                min_z_hat = min_z_hat.min(est.depth(q));
                for u in pixels {
                    let sv = est.jacobian(q, u).svd(false, false).singular_values;
                    let cond = sv.min() / sv.max();
                    min_cond = min_cond.min(cond);
                }
            }
        }
    }
    RegionAuditReport { min_z_hat, min_jacobian_conditioning: min_cond }
}

/// Worst relative error of each structural identity over random states.
///
/// Errors are `‖lhs − rhs‖ / max(‖rhs‖, 1)`, so tiny right-hand sides are
/// judged on an absolute scale.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IdentitySuiteReport {
    pub samples: usize,
    /// `Y_z(q, ψ) a_z = z ψ`.
    pub depth: f64,
    /// `Ȳ_z(q, q̇, φ) a_z = ż φ`.
    pub depth_rate: f64,
    /// `Y_z⊥(q, q̇) a_z⊥ = J_z⊥ q̇`.
    pub perp: f64,
    /// `J(q, x) q̇ = Y_z⊥ a_z⊥ − Ȳ_z(q, q̇, x) a_z`.
    pub composite: f64,
    /// `J = J_z⊥ − x J_z`, entrywise.
    pub decomposition: f64,
    /// `Y_d(q, q̇, ξ, ξ̇) a = M ξ̇ + C ξ + g` for arbitrary `a`.
    pub dynamic_regressor: f64,
    /// Largest `|vᵀ(Ṁ − 2C)v|`, absolute.
    pub skew: f64,
}

impl IdentitySuiteReport {
    pub fn passed(&self, rel_tol: f64, skew_tol: f64) -> bool {
        let rel = [self.depth, self.depth_rate, self.perp, self.composite, self.decomposition, self.dynamic_regressor];
        rel.iter().all(|e| *e < rel_tol) && self.skew < skew_tol
    }
}

fn rel_err(lhs: &DVector<f64>, rhs: &DVector<f64>) -> f64 {
    (lhs - rhs).norm() / rhs.norm().max(1.0)
}

/// Checks the regressor identities against ground truth on random
/// `(q, q̇, ψ, φ, x, ξ, ξ̇, a)` draws.
pub fn identity_suite(cam: &CameraModel, arm: &ManipulatorModel, samples: usize, seed: u64) -> Result<IdentitySuiteReport> {
    use crate::manipulator::{dynamic_regressor, dynamics_with_params};
    use crate::parameterization::{decompose_jacobian, y_z, y_z_perp, ybar_z, KinematicParameterization};

    let truth = KinematicParameterization::from_models(cam, arm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = IdentitySuiteReport { samples, ..Default::default() };
    let col = |v: &JointVec| DVector::from_column_slice(v.as_slice());
    for _ in 0..samples {
        let q = JointVec::from_fn(|_, _| rng.gen_range(-3.0..3.0));
        let qd = JointVec::from_fn(|_, _| rng.gen_range(-2.0..2.0));
        let psi = DVector::from_fn(2, |_, _| rng.gen_range(-100.0..100.0));
        let phi = DVector::from_fn(2, |_, _| rng.gen_range(-100.0..100.0));
        let x = DVector::from_fn(2, |_, _| rng.gen_range(-200.0..200.0));

        let r = arm.feature_positions(&q)[0];
        let z = cam.depth(&r);
        let (jperp, jz) = decompose_jacobian(cam, arm, &q);
        let zdot = (&jz * col(&qd))[0];
        rep.depth = rep.depth.max(rel_err(&(y_z(&q, &psi) * &truth.a_z), &(&psi * z)));
        rep.depth_rate = rep.depth_rate.max(rel_err(&(ybar_z(&q, &qd, &phi) * &truth.a_z), &(&phi * zdot)));
        rep.perp = rep.perp.max(rel_err(&(y_z_perp(&q, &qd) * &truth.a_z_perp), &(&jperp * col(&qd))));

        let n = cam.interaction_matrix(&ImagePoint::new(x[0], x[1]));
        let n = Mat::from_fn(2, 3, |i, j| n[(i, j)]);
        let j = n * arm.feature_stack_jacobian(&q) * arm.manipulator_jacobian(&q);
        let composite = y_z_perp(&q, &qd) * &truth.a_z_perp - ybar_z(&q, &qd, &x) * &truth.a_z;
        rep.composite = rep.composite.max(rel_err(&composite, &(&j * col(&qd))));
        let recon = &jperp - Mat::from_column_slice(2, 1, x.as_slice()) * &jz;
        rep.decomposition = rep.decomposition.max((&recon - &j).amax() / j.amax().max(1.0));

        let xi = JointVec::from_fn(|_, _| rng.gen_range(-2.0..2.0));
        let xid = JointVec::from_fn(|_, _| rng.gen_range(-2.0..2.0));
        let a = DynParams::from_fn(|_, _| rng.gen_range(-20.0..20.0));
        let d = dynamics_with_params(&q, &qd, &a);
        let direct = d.m * xid + d.c * xi + d.g;
        let via = dynamic_regressor(&q, &qd, &xi, &xid) * a;
        rep.dynamic_regressor = rep.dynamic_regressor.max(rel_err(&col(&via), &col(&direct)));

        // Ṁ by a fourth-order central difference along q̇. The step sits
        // near the truncation/round-off balance: the residual falls as h⁴
        // down to about 3e-4 and then grows again.
        let v = JointVec::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let h = 3e-4;
        let m_at = |k: f64| arm.dynamics(&(q + qd * (k * h)), &qd).m;
        let mdot = (m_at(-2.0) - m_at(2.0) + (m_at(1.0) - m_at(-1.0)) * 8.0) / (12.0 * h);
        let c = arm.dynamics(&q, &qd).c;
        rep.skew = rep.skew.max(v.dot(&((mdot - 2.0 * c) * v)).abs());
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parameterization::KinematicParameterization;

    fn sec4_cam() -> CameraModel {
        CameraModel::aligned(0.15, 900.0, 5.0)
    }

    fn gains(alpha: f64, gamma: f64) -> Gains {
        Gains::new(
            Mat::identity(2, 2) * 0.001,
            alpha,
            gamma,
            Mat::identity(8, 8) * 300.0,
            Mat::identity(2, 2) * 600.0,
            Mat::identity(3, 3) * 0.2,
            true,
        )
        .unwrap()
    }

    #[test]
    fn v1_zero_at_equilibrium_and_positive_otherwise() {
        let g = gains(10.0, 10.0);
        let m = ManipulatorModel::default_arm().dynamics(&JointVec::new(1.0, 0.4, -1.0), &JointVec::zeros()).m;
        assert_eq!(lyapunov_v1(&JointVec::zeros(), &m, &DynParams::zeros(), &g.gamma_d), 0.0);
        let v = lyapunov_v1(&JointVec::new(0.1, 0.0, 0.0), &m, &DynParams::from_element(3.0), &g.gamma_d);
        let expect = 0.5 * 0.01 * m[(0, 0)] + 0.5 * 8.0 * 9.0 / 300.0;
        assert!((v - expect).abs() < 1e-14);
    }

    #[test]
    fn v2_zero_when_errors_vanish() {
        let g = gains(10.0, 10.0);
        let z = Mat::identity(2, 2) * 6.0;
        let e = DVector::zeros(2);
        let v = lyapunov_v2(&e, &e, &z, &DVector::zeros(2), &DVector::zeros(3), &g, 4.5, 4.5);
        assert_eq!(v, 0.0);
        let v = lyapunov_v2(&e, &DVector::from_vec(vec![1.0, 0.0]), &z, &DVector::zeros(2), &DVector::zeros(3), &g, 0.0, 1.0);
        assert!((v - (3.0 + 0.1)).abs() < 1e-14);
    }

    #[test]
    fn h_matrix_values() {
        // [[10,5],[5,7.5]]: eigenvalues (17.5 ± √106.25)/2
        let e = h_matrix_min_eig(10.0, 10.0, &[1.0]).unwrap();
        let expect = (17.5 - 106.25_f64.sqrt()) / 2.0;
        assert!((e - expect).abs() < 1e-12);
        assert!(e > 0.0);
        for z in [0.1, 1.0, 10.0] {
            assert!(h_matrix_min_eig(10.0 / 3.0, 10.0, &[z]).unwrap().abs() < 1e-12);
            assert!(h_matrix_min_eig(2.5, 10.0, &[z]).unwrap() < 0.0);
        }
        let base = h_matrix_min_eig(7.0, 4.0, &[1.0]).unwrap();
        let scaled = h_matrix_min_eig(7.0, 4.0, &[3.5]).unwrap();
        assert!((scaled - 3.5 * base).abs() < 1e-12);
        assert!(h_matrix_min_eig(1.0, 1.0, &[0.0]).is_err());
    }

    #[test]
    fn h_matrix_agrees_with_eigen_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (a, g, z) = (rng.gen_range(0.1..20.0), rng.gen_range(0.1..20.0), rng.gen_range(0.1..10.0));
            let h = nalgebra::Matrix2::new(a * z, g * z / 2.0, g * z / 2.0, 0.75 * g * z);
            let min = h.symmetric_eigen().eigenvalues.min();
            assert!((h_matrix_min_eig(a, g, &[z]).unwrap() - min).abs() < 1e-10 * (1.0 + min.abs()));
        }
    }

    #[test]
    fn monotonicity_checker() {
        let r = check_non_increasing(&[3.0, 2.0, 2.0, 2.5, 1.0], 0.1);
        assert_eq!(r.violations, 1);
        assert_eq!(r.max_increase, 0.5);
        assert_eq!(check_non_increasing(&[1.0], 0.0).violations, 0);
    }

    #[test]
    fn certificate_is_gated_by_gain_condition() {
        let trace = vec![
            LyapunovTrace { t: 0.0, v1: 1.0, v2_core: 2.0, integral_term: 0.0, h_min_eig: 1.0 },
            LyapunovTrace { t: 0.1, v1: 0.5, v2_core: 1.9, integral_term: 0.2, h_min_eig: 1.0 },
        ];
        let ok = lyapunov_certificate(&trace, &gains(10.0, 10.0), 0.0);
        assert!(ok.passed());
        let gated = lyapunov_certificate(&trace, &gains(2.5, 10.0), 0.0);
        assert!(!gated.condition_holds);
        assert!(gated.v2.is_none());
        assert!(!gated.passed());
    }

    #[test]
    fn remark_cases() {
        let cam = sec4_cam();
        let one = rank_audit(&cam, &[Vec3::zeros()], 1000, 500.0, 1).unwrap();
        assert!(one.passed(), "{one:?}");
        let two = rank_audit(&cam, &[Vec3::zeros(), Vec3::new(0.1, 0.05, -0.03)], 1000, 500.0, 2).unwrap();
        assert!(two.passed(), "{two:?}");
        assert_eq!(two.feature_rank, 5);
        assert!(two.min_genericity_angle.unwrap() > 1e-6);
        let three = rank_audit(&cam, &[Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.05)], 1000, 500.0, 3)
            .unwrap();
        assert!(three.passed(), "{three:?}");
        assert_eq!(three.feature_rank, 6);
    }

    #[test]
    fn collinear_features_are_detected() {
        let cam = sec4_cam();
        let c = [Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0)];
        let r = rank_audit(&cam, &c, 200, 500.0, 4).unwrap();
        assert!(r.collinear);
        assert!(!r.passed());
        assert_eq!(r.feature_rank, 5);
        assert_eq!(r.violations.len(), 200);
    }

    #[test]
    fn null_direction_is_the_viewing_ray() {
        let cam = sec4_cam();
        let r = Vec3::new(-1.0, 0.4, 0.9);
        let u = cam.project(&r).unwrap();
        let ray = r - Vec3::new(-5.0, 0.0, 0.0);
        assert!(angle_to_line(&ray, &null_direction(&cam, &u)) < 1e-12);
    }

    #[test]
    fn six_dof_synthetic_is_full_rank() {
        let cam = sec4_cam();
        for offsets in [
            vec![Vec3::zeros()],
            vec![Vec3::zeros(), Vec3::new(0.1, 0.05, -0.03)],
            vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.05)],
        ] {
            let r = synthetic_six_dof_audit(&cam, &offsets, 200, 9).unwrap();
            assert!(r.violations.is_empty(), "{r:?}");
        }
    }

    #[test]
    fn stretched_arm_is_flagged() {
        let cam = sec4_cam();
        let arm = ManipulatorModel::default_arm();
        let v = cell_verdict(&cam, &arm, &JointVec::new(1.0, 0.3, 0.0)).unwrap();
        assert!(v.arm_singular());
        let v = cell_verdict(&cam, &arm, &JointVec::new(1.15, 1.08, -1.81)).unwrap();
        assert!(!v.arm_singular());
        assert_eq!(v.image_rank, 2);
    }

    #[test]
    fn workspace_grid_has_no_image_deficiency_off_singularities() {
        let cam = sec4_cam();
        let arm = ManipulatorModel::default_arm();
        let grid = [linspace(-3.0, 3.0, 13), linspace(-1.5, 1.5, 7), linspace(-3.0, 3.0, 13)];
        let r = jacobian_rank_workspace_audit(&cam, &arm, &grid);
        assert_eq!(r.cells, 13 * 7 * 13);
        assert!(!r.arm_singular.is_empty());
        assert!(r.passed(), "{:?}", r.image_deficient);
    }

    #[test]
    fn reachable_depth_is_positive() {
        let cam = sec4_cam();
        let arm = ManipulatorModel::default_arm();
        let r = depth_positivity_audit(&cam, &arm, 10_000, 3);
        assert!(r.min_depth > 0.1, "{r:?}");
        assert!(r.min_depth >= 1.0 - 1e-12);
    }

    #[test]
    fn region_audit_on_truth_sized_box() {
        let cam = sec4_cam();
        let arm = ManipulatorModel::default_arm();
        let p = KinematicParameterization::from_models(&cam, &arm).unwrap();
        let region = ProjectionRegion {
            a_z_lower: &p.a_z * 0.99,
            a_z_upper: &p.a_z * 1.01,
            a_z_perp_lower: &p.a_z_perp * 0.99,
            a_z_perp_upper: &p.a_z_perp * 1.01,
            margin: 0.0,
        };
        let qs = [JointVec::new(1.15, 1.08, -1.81)];
        let px = [DVector::from_vec(vec![50.0, 55.0])];
        let r = projection_region_audit(&region, &qs, &px);
        assert!((r.min_z_hat - 6.0).abs() < 0.2);
        assert!(r.passed(0.1, 1e-3));
    }

    #[test]
    fn identity_suite_holds_for_sec4_models() {
        let rep = identity_suite(&sec4_cam(), &ManipulatorModel::default_arm(), 300, 4).unwrap();
        assert_eq!(rep.samples, 300);
        assert!(rep.passed(1e-10, 1e-9), "{rep:?}");
    }
}
