//! Adaptive control law.
//!
//! One call to [`evaluate`] turns a measurement `(q, q̇, x)`, the observer
//! state, the desired trajectory sample and the adapted parameters into a
//! torque and the rates of every internal state. Nothing here accepts the
//! image-space velocity `ẋ`: the [`Measurement`] type has no field for it.
//!
//! The reference acceleration differentiates the pseudoinverse of the
//! modified Jacobian `Ĵ* = Ĵ(q, (x_o + x_d)/2)`. For a full-row-rank `J`,
//! `d/dt J⁺ = −J⁺J̇J⁺ + (I − J⁺J) J̇ᵀ (JJᵀ)⁻¹`, and `(JJᵀ)⁻¹ = J⁺ᵀJ⁺`, which
//! gives the closed form used in [`reference_acceleration`]. The rate `J̇*`
//! is assembled from `q̇`, the observer rate, `ẋ_d` and the adaptation rates.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{pinv_full_row, Mat, RANK_TOL};
use crate::manipulator::{dynamic_regressor, DynParams, JointVec, N_DYN_PARAMS};
use crate::observer::observer_rhs;
use crate::parameterization::{
    y_z_perp, y_z_star, y_z_star_star, EstimatedKinematics, ImgVec, IMG_DIM, P_DEPTH, P_KIN,
};

/// Feedback and adaptation gains.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub k: Mat,
    pub alpha: f64,
    pub gamma: f64,
    pub gamma_d: Mat,
    pub gamma_z_perp: Mat,
    pub gamma_z: Mat,
}

fn check_spd(name: &str, m: &Mat, dim: usize) -> Result<()> {
    if m.shape() != (dim, dim) {
        return Err(Error::Config(format!("{name} must be {dim}x{dim}, got {:?}", m.shape())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} has non-finite entries")));
    }
    if (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::Config(format!("{name} is not symmetric")));
    }
    if m.clone().cholesky().is_none() {
        return Err(Error::Config(format!("{name} is not positive definite")));
    }
    Ok(())
}

impl Gains {
    /// Validates dimensions and definiteness, and the observer/reference
    /// gain condition `α > γ/3` unless `allow_theorem_violation` is set.
    pub fn new(
        k: Mat,
        alpha: f64,
        gamma: f64,
        gamma_d: Mat,
        gamma_z_perp: Mat,
        gamma_z: Mat,
        allow_theorem_violation: bool,
    ) -> Result<Self> {
        check_spd("K", &k, IMG_DIM)?;
        check_spd("Gamma_d", &gamma_d, N_DYN_PARAMS)?;
        check_spd("Gamma_z_perp", &gamma_z_perp, P_KIN)?;
        check_spd("Gamma_z", &gamma_z, P_DEPTH)?;
        if !(alpha > 0.0 && alpha.is_finite()) || !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("alpha and gamma must be positive, got {alpha} and {gamma}")));
        }
        let gains = Self { k, alpha, gamma, gamma_d, gamma_z_perp, gamma_z };
        if !allow_theorem_violation && !gains.theorem_condition_holds() {
            return Err(Error::Config(format!(
                "alpha = {alpha} must exceed gamma/3 = {} (pass the theorem-violation override to run anyway)",
                gamma / 3.0
            )));
        }
        Ok(gains)
    }

    pub fn theorem_condition_holds(&self) -> bool {
        self.alpha > self.gamma / 3.0
    }
}

/// Box bounds on `(â_z, â_z⊥)`.
///
/// `margin` records the relative padding that was added around the
/// nominal-run envelope when the bounds were derived; it is informational.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRegion {
    pub a_z_lower: DVector<f64>,
    pub a_z_upper: DVector<f64>,
    pub a_z_perp_lower: DVector<f64>,
    pub a_z_perp_upper: DVector<f64>,
    pub margin: f64,
}

fn project_box_rates(value: &DVector<f64>, rate: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(rate.len(), |i, _| {
        let r = rate[i];
        if (value[i] >= hi[i] && r > 0.0) || (value[i] <= lo[i] && r < 0.0) {
            0.0
        } else {
            r
        }
    })
}

fn clamp_box(value: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(value.len(), |i, _| value[i].clamp(lo[i], hi[i]))
}

fn inside_box(value: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> bool {
    value.iter().zip(lo.iter().zip(hi.iter())).all(|(v, (l, h))| l <= v && v <= h)
}

fn strictly_inside_box(value: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> bool {
    value.iter().zip(lo.iter().zip(hi.iter())).all(|(v, (l, h))| l < v && v < h)
}

impl ProjectionRegion {
    /// Checks shapes and ordering of the bounds.
    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("a_z", &self.a_z_lower, &self.a_z_upper, P_DEPTH),
            ("a_z_perp", &self.a_z_perp_lower, &self.a_z_perp_upper, P_KIN),
        ];
        for (name, lo, hi, n) in pairs {
            if lo.len() != n || hi.len() != n {
                return Err(Error::Config(format!("{name} bounds need {n} entries")));
            }
            if lo.iter().zip(hi.iter()).any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite()) {
                return Err(Error::Config(format!("{name} bounds must be finite with lower < upper")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, a_z: &DVector<f64>, a_z_perp: &DVector<f64>) -> bool {
        inside_box(a_z, &self.a_z_lower, &self.a_z_upper)
            && inside_box(a_z_perp, &self.a_z_perp_lower, &self.a_z_perp_upper)
    }

    pub fn contains_strictly(&self, a_z: &DVector<f64>, a_z_perp: &DVector<f64>) -> bool {
        strictly_inside_box(a_z, &self.a_z_lower, &self.a_z_upper)
            && strictly_inside_box(a_z_perp, &self.a_z_perp_lower, &self.a_z_perp_upper)
    }

    /// Zeroes each rate component that points outward at an active bound.
    pub fn project_rates(
        &self,
        a_z: &DVector<f64>,
        a_z_perp: &DVector<f64>,
        a_z_rate: &DVector<f64>,
        a_z_perp_rate: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        (
            project_box_rates(a_z, a_z_rate, &self.a_z_lower, &self.a_z_upper),
            project_box_rates(a_z_perp, a_z_perp_rate, &self.a_z_perp_lower, &self.a_z_perp_upper),
        )
    }

    pub fn clamp(&self, a_z: &DVector<f64>, a_z_perp: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            clamp_box(a_z, &self.a_z_lower, &self.a_z_upper),
            clamp_box(a_z_perp, &self.a_z_perp_lower, &self.a_z_perp_upper),
        )
    }

    /// Whether any bound is active with an outward rate.
    pub fn is_active(
        &self,
        a_z: &DVector<f64>,
        a_z_perp: &DVector<f64>,
        a_z_rate: &DVector<f64>,
        a_z_perp_rate: &DVector<f64>,
    ) -> bool {
        let (pz, pp) = self.project_rates(a_z, a_z_perp, a_z_rate, a_z_perp_rate);
        &pz != a_z_rate || &pp != a_z_perp_rate
    }
}

/// Adapted parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub a_d_hat: DynParams,
    pub a_z_hat: DVector<f64>,
    pub a_z_perp_hat: DVector<f64>,
}

impl ControllerState {
    pub fn estimated_kinematics(&self) -> EstimatedKinematics {
        EstimatedKinematics::new(self.a_z_hat.clone(), self.a_z_perp_hat.clone())
    }
}

/// Parameter rates as produced by the adaptation laws.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationRates {
    pub a_d: DynParams,
    pub a_z_perp: DVector<f64>,
    pub a_z: DVector<f64>,
}

/// One explicit projected update `clamp(state + dt · P(rates))`.
///
/// The simulator integrates the projected rates with RK4 and clamps once
/// per step instead; this helper is the single-step form of the same rule.
pub fn project(state: &ControllerState, rates: &AdaptationRates, region: &ProjectionRegion, dt: f64) -> ControllerState {
    let (rz, rp) = region.project_rates(&state.a_z_hat, &state.a_z_perp_hat, &rates.a_z, &rates.a_z_perp);
    let (a_z_hat, a_z_perp_hat) = region.clamp(&(&state.a_z_hat + rz * dt), &(&state.a_z_perp_hat + rp * dt));
    ControllerState {
        a_d_hat: state.a_d_hat + rates.a_d * dt,
        a_z_hat,
        a_z_perp_hat,
    }
}

/// Quantities produced by the reference-velocity stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceVelocity {
    pub qdot_r: JointVec,
    pub xdot_r: ImgVec,
    pub j_star: Mat,
    pub j_star_pinv: Mat,
    pub z_hat: f64,
}

fn to_joint(v: &DVector<f64>) -> JointVec {
    JointVec::new(v[0], v[1], v[2])
}

fn to_dvec(v: &JointVec) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// `ẋ_r = ẋ_d − γ(x_o − x_d)` and `q̇_r = Ĵ*⁺ Ẑ ẋ_r`.
pub fn reference_velocity(
    q: &JointVec,
    x_o: &ImgVec,
    x_d: &ImgVec,
    xdot_d: &ImgVec,
    est: &EstimatedKinematics,
    gamma: f64,
) -> Result<ReferenceVelocity> {
    let z_hat = est.depth_checked(q)?;
    let u = (x_o + x_d) * 0.5;
    let j_star = est.jacobian(q, &u);
    let j_star_pinv = pinv_full_row(&j_star, RANK_TOL)?;
    let xdot_r = xdot_d - (x_o - x_d) * gamma;
    let qdot_r = to_joint(&(&j_star_pinv * &xdot_r * z_hat));
    Ok(ReferenceVelocity { qdot_r, xdot_r, j_star, j_star_pinv, z_hat })
}

/// Time derivatives of the signals that `q̇_r` depends on, besides `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRates {
    pub xdot_o: ImgVec,
    pub a_z: DVector<f64>,
    pub a_z_perp: DVector<f64>,
}

/// Closed-form `q̈_r`.
#[allow(clippy::too_many_arguments)]
pub fn reference_acceleration(
    q: &JointVec,
    qdot: &JointVec,
    x_o: &ImgVec,
    x_d: &ImgVec,
    xdot_d: &ImgVec,
    xddot_d: &ImgVec,
    est: &EstimatedKinematics,
    rates: &SignalRates,
    gamma: f64,
) -> Result<JointVec> {
    let rv = reference_velocity(q, x_o, x_d, xdot_d, est, gamma)?;
    Ok(reference_acceleration_from(q, qdot, x_o, x_d, xdot_d, xddot_d, est, rates, gamma, &rv))
}

#[allow(clippy::too_many_arguments)]
fn reference_acceleration_from(
    q: &JointVec,
    qdot: &JointVec,
    x_o: &ImgVec,
    x_d: &ImgVec,
    xdot_d: &ImgVec,
    xddot_d: &ImgVec,
    est: &EstimatedKinematics,
    rates: &SignalRates,
    gamma: f64,
    rv: &ReferenceVelocity,
) -> JointVec {
    let xddot_r = xddot_d - (&rates.xdot_o - xdot_d) * gamma;
    let u = (x_o + x_d) * 0.5;
    let udot = (&rates.xdot_o + xdot_d) * 0.5;
    let zdot_hat = est.depth_total_rate(q, qdot, &rates.a_z);
    let jdot = est.jacobian_rate(q, qdot, &u, &udot, &rates.a_z, &rates.a_z_perp);
    let p = &rv.j_star_pinv;
    let qdr = to_dvec(&rv.qdot_r);
    let first = p * (&xddot_r * rv.z_hat + &rv.xdot_r * zdot_hat - &jdot * &qdr);
    let annihilator = Mat::identity(3, 3) - p * &rv.j_star;
    let second = annihilator * jdot.transpose() * p.transpose() * qdr;
    to_joint(&(first + second))
}

/// `s = q̇ − q̇_r`.
pub fn sliding_vector(qdot: &JointVec, qdot_r: &JointVec) -> JointVec {
    qdot - qdot_r
}

/// `τ = −Ĵ*ᵀ K Ĵ* s + Y_d(q, q̇, q̇_r, q̈_r) â_d`.
#[allow(clippy::too_many_arguments)]
pub fn control_torque(
    q: &JointVec,
    qdot: &JointVec,
    qdot_r: &JointVec,
    qddot_r: &JointVec,
    s: &JointVec,
    j_star: &Mat,
    k: &Mat,
    a_d_hat: &DynParams,
) -> JointVec {
    let feedback = j_star.transpose() * k * j_star * to_dvec(s);
    dynamic_regressor(q, qdot, qdot_r, qddot_r) * a_d_hat - to_joint(&feedback)
}

/// The three gradient-type adaptation laws, before projection.
#[allow(clippy::too_many_arguments)]
pub fn adaptation_rhs(
    s: &JointVec,
    dx: &ImgVec,
    dx_o: &ImgVec,
    y_d: &crate::manipulator::DynamicRegressor,
    y_z_perp_val: &Mat,
    y_z_star_val: &Mat,
    y_z_star_star_val: &Mat,
    gains: &Gains,
) -> AdaptationRates {
    let gd = nalgebra::SMatrix::<f64, N_DYN_PARAMS, N_DYN_PARAMS>::from_fn(|i, j| gains.gamma_d[(i, j)]);
    let a_d = -(gd * y_d.transpose() * s);
    let a_z_perp = &gains.gamma_z_perp * y_z_perp_val.transpose() * (dx - dx_o);
    let a_z = -(&gains.gamma_z * (y_z_star_star_val.transpose() * dx - y_z_star_val.transpose() * dx_o));
    AdaptationRates { a_d, a_z_perp, a_z }
}

/// What the controller is allowed to see from the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub q: JointVec,
    pub qdot: JointVec,
    pub x: ImgVec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Desired {
    pub x_d: ImgVec,
    pub xdot_d: ImgVec,
    pub xddot_d: ImgVec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub tau: JointVec,
    pub s: JointVec,
    pub qdot_r: JointVec,
    pub qddot_r: JointVec,
    pub xdot_r: ImgVec,
    pub xdot_o: ImgVec,
    /// Adaptation rates after projection.
    pub rates: AdaptationRates,
    pub projection_active: bool,
    pub j_star: Mat,
    pub z_hat: f64,
}

/// Full controller and observer evaluation at one instant.
pub fn evaluate(
    meas: &Measurement,
    x_o: &ImgVec,
    desired: &Desired,
    state: &ControllerState,
    gains: &Gains,
    region: &ProjectionRegion,
) -> Result<ControlOutput> {
    let Measurement { q, qdot, x } = meas;
    let Desired { x_d, xdot_d, xddot_d } = desired;
    let est = state.estimated_kinematics();

    let xdot_o = observer_rhs(x_o, x, x_d, q, qdot, &est, gains.alpha)?;
    let rv = reference_velocity(q, x_o, x_d, xdot_d, &est, gains.gamma)?;
    let s = sliding_vector(qdot, &rv.qdot_r);

    let dx = x - x_d;
    let dx_o = x_o - x;
    let yzp = y_z_perp(q, qdot);
    let ys = y_z_star(q, qdot, x, x_o, x_d, &est)?;
    let yss = y_z_star_star(q, qdot, x_o, x_d, &rv.xdot_r);
    let a_z_perp_raw = &gains.gamma_z_perp * yzp.transpose() * (&dx - &dx_o);
    let a_z_raw = -(&gains.gamma_z * (yss.transpose() * &dx - ys.transpose() * &dx_o));
    let (a_z_rate, a_z_perp_rate) = region.project_rates(&state.a_z_hat, &state.a_z_perp_hat, &a_z_raw, &a_z_perp_raw);
    let projection_active = a_z_rate != a_z_raw || a_z_perp_rate != a_z_perp_raw;

    let signal_rates = SignalRates {
        xdot_o: xdot_o.clone(),
        a_z: a_z_rate.clone(),
        a_z_perp: a_z_perp_rate.clone(),
    };
    let qddot_r = reference_acceleration_from(q, qdot, x_o, x_d, xdot_d, xddot_d, &est, &signal_rates, gains.gamma, &rv);

    let y_d = dynamic_regressor(q, qdot, &rv.qdot_r, &qddot_r);
    let tau = control_torque(q, qdot, &rv.qdot_r, &qddot_r, &s, &rv.j_star, &gains.k, &state.a_d_hat);
    let full = adaptation_rhs(&s, &dx, &dx_o, &y_d, &yzp, &ys, &yss, gains);

    Ok(ControlOutput {
        tau,
        s,
        qdot_r: rv.qdot_r,
        qddot_r,
        xdot_r: rv.xdot_r,
        xdot_o,
        rates: AdaptationRates { a_d: full.a_d, a_z_perp: a_z_perp_rate, a_z: a_z_rate },
        projection_active,
        j_star: rv.j_star,
        z_hat: rv.z_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraModel;
    use crate::manipulator::ManipulatorModel;
    use crate::parameterization::{decompose_jacobian, KinematicParameterization};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sec4_gains() -> Gains {
        Gains::new(
            Mat::identity(2, 2) * 0.001,
            10.0,
            10.0,
            Mat::identity(8, 8) * 300.0,
            Mat::identity(2, 2) * 600.0,
            Mat::identity(3, 3) * 0.2,
            false,
        )
        .unwrap()
    }

    fn wide_region() -> ProjectionRegion {
        ProjectionRegion {
            a_z_lower: DVector::from_vec(vec![0.5, 0.5, 2.0]),
            a_z_upper: DVector::from_vec(vec![6.0, 6.0, 9.0]),
            a_z_perp_lower: DVector::from_vec(vec![50.0, 50.0]),
            a_z_perp_upper: DVector::from_vec(vec![600.0, 600.0]),
            margin: 0.5,
        }
    }

    fn models() -> (CameraModel, ManipulatorModel, KinematicParameterization) {
        let cam = CameraModel::aligned(0.15, 900.0, 5.0);
        let arm = ManipulatorModel::default_arm();
        let p = KinematicParameterization::from_models(&cam, &arm).unwrap();
        (cam, arm, p)
    }

    fn pixel(cam: &CameraModel, arm: &ManipulatorModel, q: &JointVec) -> ImgVec {
        let x = cam.project(&arm.feature_positions(q)[0]).unwrap();
        DVector::from_column_slice(x.as_slice())
    }

    fn iv(a: f64, b: f64) -> ImgVec {
        DVector::from_vec(vec![a, b])
    }

    fn random_est(rng: &mut ChaCha8Rng) -> EstimatedKinematics {
        EstimatedKinematics::new(
            DVector::from_vec(vec![rng.gen_range(1.0..3.5), rng.gen_range(1.0..3.5), rng.gen_range(3.0..7.0)]),
            DVector::from_fn(2, |_, _| rng.gen_range(150.0..400.0)),
        )
    }

    #[test]
    fn gains_reject_violations() {
        let g = sec4_gains();
        assert!(g.theorem_condition_holds());
        let bad = Gains::new(g.k.clone(), 2.5, 10.0, g.gamma_d.clone(), g.gamma_z_perp.clone(), g.gamma_z.clone(), false);
        assert!(matches!(bad, Err(Error::Config(_))));
        let allowed = Gains::new(g.k.clone(), 2.5, 10.0, g.gamma_d.clone(), g.gamma_z_perp.clone(), g.gamma_z.clone(), true)
            .unwrap();
        assert!(!allowed.theorem_condition_holds());
        let boundary = Gains::new(g.k.clone(), 10.0 / 3.0, 10.0, g.gamma_d.clone(), g.gamma_z_perp.clone(), g.gamma_z.clone(), false);
        assert!(boundary.is_err());
        let indefinite = Gains::new(-g.k.clone(), 10.0, 10.0, g.gamma_d.clone(), g.gamma_z_perp.clone(), g.gamma_z.clone(), false);
        assert!(indefinite.is_err());
        let wrong_dim = Gains::new(g.k.clone(), 10.0, 10.0, Mat::identity(7, 7), g.gamma_z_perp.clone(), g.gamma_z.clone(), false);
        assert!(wrong_dim.is_err());
    }

    #[test]
    fn projection_rules() {
        let region = wide_region();
        let a_z = DVector::from_vec(vec![2.0, 6.0, 2.0]);
        let a_p = DVector::from_vec(vec![300.0, 300.0]);
        let rate_z = DVector::from_vec(vec![1.0, 1.0, -1.0]);
        let rate_p = DVector::from_vec(vec![-4.0, 4.0]);
        let (pz, pp) = region.project_rates(&a_z, &a_p, &rate_z, &rate_p);
        assert_eq!(pz, DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert_eq!(pp, rate_p);
        // inward rates at an active bound pass
        let (pz, _) = region.project_rates(&a_z, &a_p, &(-&rate_z), &rate_p);
        assert_eq!(pz, -&rate_z);
        assert!(region.is_active(&a_z, &a_p, &rate_z, &rate_p));

        let interior = DVector::from_vec(vec![2.0, 2.0, 5.0]);
        let (pz, _) = region.project_rates(&interior, &a_p, &rate_z, &rate_p);
        assert_eq!(pz, rate_z);
    }

    #[test]
    fn projected_updates_stay_in_region() {
        let region = wide_region();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut state = ControllerState {
            a_d_hat: DynParams::zeros(),
            a_z_hat: DVector::from_vec(vec![3.0, 3.0, 3.0]),
            a_z_perp_hat: DVector::from_vec(vec![210.0, 210.0]),
        };
        for _ in 0..2000 {
            let rates = AdaptationRates {
                a_d: DynParams::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
                a_z: DVector::from_fn(3, |_, _| rng.gen_range(-50.0..50.0)),
                a_z_perp: DVector::from_fn(2, |_, _| rng.gen_range(-5000.0..5000.0)),
            };
            let next = project(&state, &rates, &region, 0.05);
            assert!(region.contains(&next.a_z_hat, &next.a_z_perp_hat));
            // idempotent clamp
            let (cz, cp) = region.clamp(&next.a_z_hat, &next.a_z_perp_hat);
            assert_eq!((cz, cp), (next.a_z_hat.clone(), next.a_z_perp_hat.clone()));
            state = next;
        }
    }

    #[test]
    fn interior_projection_is_plain_euler() {
        let region = wide_region();
        let state = ControllerState {
            a_d_hat: DynParams::zeros(),
            a_z_hat: DVector::from_vec(vec![3.0, 3.0, 3.0]),
            a_z_perp_hat: DVector::from_vec(vec![210.0, 210.0]),
        };
        let rates = AdaptationRates {
            a_d: DynParams::from_element(1.0),
            a_z: DVector::from_vec(vec![0.1, -0.2, 0.3]),
            a_z_perp: DVector::from_vec(vec![1.0, 2.0]),
        };
        let next = project(&state, &rates, &region, 0.01);
        assert_eq!(next.a_z_hat, &state.a_z_hat + &rates.a_z * 0.01);
        assert_eq!(next.a_z_perp_hat, &state.a_z_perp_hat + &rates.a_z_perp * 0.01);
    }

    #[test]
    fn reference_velocity_vanishes_at_rest_on_target() {
        let (_, _, p) = models();
        let q = JointVec::new(1.2, 0.2, 0.9);
        let x = iv(50.0, 55.0);
        let rv = reference_velocity(&q, &x, &x, &iv(0.0, 0.0), &p.as_estimate(), 10.0).unwrap();
        assert_eq!(rv.qdot_r, JointVec::zeros());
    }

    #[test]
    fn reference_velocity_realizes_xdot_r_with_true_model() {
        let (cam, arm, p) = models();
        let q = JointVec::new(1.2, 0.2, 0.9);
        let x = pixel(&cam, &arm, &q);
        // perfect estimates, and x_o, x_d chosen so that (x_o + x_d)/2 = x
        let x_o = &x + iv(1.5, -2.0);
        let x_d = &x - iv(1.5, -2.0);
        let rv = reference_velocity(&q, &x_o, &x_d, &iv(3.0, -1.0), &p.as_estimate(), 10.0).unwrap();
        let (jp, jz) = decompose_jacobian(&cam, &arm, &q);
        let j = jp - Mat::from_column_slice(2, 1, x.as_slice()) * jz;
        let xdot = j * to_dvec(&rv.qdot_r) / cam.depth(&arm.feature_positions(&q)[0]);
        assert!((xdot - &rv.xdot_r).amax() < 1e-10);
    }

    #[test]
    fn annihilator_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..500 {
            let q = JointVec::new(rng.gen_range(0.5..1.8), rng.gen_range(-0.4..0.6), rng.gen_range(0.3..1.5));
            let est = random_est(&mut rng);
            let x_o = iv(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
            let x_d = iv(rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
            let rv = reference_velocity(&q, &x_o, &x_d, &iv(0.0, 0.0), &est, 10.0).unwrap();
            let ann = Mat::identity(3, 3) - &rv.j_star_pinv * &rv.j_star;
            assert!((&rv.j_star * ann).amax() < 1e-10);
            assert!((&rv.j_star * &rv.j_star_pinv - Mat::identity(2, 2)).amax() < 1e-10);
        }
    }

    #[test]
    fn static_problem_has_zero_reference_acceleration() {
        let (_, _, p) = models();
        let q = JointVec::new(1.2, 0.2, 0.9);
        let x = iv(50.0, 55.0);
        let zero = iv(0.0, 0.0);
        let rates = SignalRates {
            xdot_o: zero.clone(),
            a_z: DVector::zeros(3),
            a_z_perp: DVector::zeros(2),
        };
        let a = reference_acceleration(&q, &JointVec::zeros(), &x, &x, &zero, &zero, &p.as_estimate(), &rates, 10.0).unwrap();
        assert_eq!(a, JointVec::zeros());
    }

    #[test]
    fn reference_acceleration_matches_central_differences() {
        // every input of q̇_r follows a prescribed smooth curve with known rate
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..50 {
            let q0 = JointVec::new(rng.gen_range(0.8..1.5), rng.gen_range(-0.2..0.4), rng.gen_range(0.5..1.3));
            let w = JointVec::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let est0 = random_est(&mut rng);
            let dz = DVector::from_fn(3, |_, _| rng.gen_range(-0.3..0.3));
            let dp = DVector::from_fn(2, |_, _| rng.gen_range(-20.0..20.0));
            let xo0 = iv(rng.gen_range(20.0..80.0), rng.gen_range(20.0..80.0));
            let vo = iv(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let c = iv(45.0, 65.0);
            let om = std::f64::consts::PI / 3.0;

            let q_at = |t: f64| q0 + w * t.sin();
            let qd_at = |t: f64| w * t.cos();
            let xo_at = |t: f64| &xo0 + &vo * (t + 0.3 * t * t);
            let xod_at = |t: f64| &vo * (1.0 + 0.6 * t);
            let est_at = |t: f64| {
                EstimatedKinematics::new(&est0.a_z_hat + &dz * t.sin(), &est0.a_z_perp_hat + &dp * t.sin())
            };
            let xd_at = |t: f64| &c + iv((om * t).cos(), (om * t).sin()) * 20.0;
            let xdd_at = |t: f64| iv(-(om * t).sin(), (om * t).cos()) * (20.0 * om);
            let xddd_at = |t: f64| iv(-(om * t).cos(), -(om * t).sin()) * (20.0 * om * om);
            let qdr_at = |t: f64| {
                reference_velocity(&q_at(t), &xo_at(t), &xd_at(t), &xdd_at(t), &est_at(t), 10.0)
                    .unwrap()
                    .qdot_r
            };

            let t = rng.gen_range(0.0..1.0);
            let h = 1e-5;
            let fd = (qdr_at(t + h) - qdr_at(t - h)) / (2.0 * h);
            let rates = SignalRates {
                xdot_o: xod_at(t),
                a_z: &dz * t.cos(),
                a_z_perp: &dp * t.cos(),
            };
            let cf = reference_acceleration(
                &q_at(t),
                &qd_at(t),
                &xo_at(t),
                &xd_at(t),
                &xdd_at(t),
                &xddd_at(t),
                &est_at(t),
                &rates,
                10.0,
            )
            .unwrap();
            assert!((cf - fd).norm() < 1e-4 * cf.norm().max(1e-3), "{cf} vs {fd}");
        }
    }

    #[test]
    fn sliding_vector_basics() {
        let a = JointVec::new(1.0, 2.0, 3.0);
        assert_eq!(sliding_vector(&a, &a), JointVec::zeros());
        let b = JointVec::new(0.5, -1.0, 4.0);
        let r = JointVec::new(0.1, 0.2, 0.3);
        assert_eq!(sliding_vector(&(a + b), &r), sliding_vector(&a, &r) + b);
    }

    #[test]
    fn torque_zero_without_error_or_estimates() {
        let q = JointVec::new(1.0, 0.3, 0.4);
        let j = Mat::from_fn(2, 3, |i, k| (i + 2 * k) as f64);
        let tau = control_torque(
            &q,
            &JointVec::new(0.1, 0.2, 0.3),
            &JointVec::new(0.4, 0.5, 0.6),
            &JointVec::new(1.0, 1.0, 1.0),
            &JointVec::zeros(),
            &j,
            &(Mat::identity(2, 2) * 0.001),
            &DynParams::zeros(),
        );
        assert_eq!(tau, JointVec::zeros());
    }

    #[test]
    fn adaptation_equilibrium() {
        let g = sec4_gains();
        let z = iv(0.0, 0.0);
        let r = adaptation_rhs(
            &JointVec::zeros(),
            &z,
            &z,
            &crate::manipulator::DynamicRegressor::from_element(3.0),
            &Mat::from_element(2, 2, 1.0),
            &Mat::from_element(2, 3, 1.0),
            &Mat::from_element(2, 3, 1.0),
            &g,
        );
        assert_eq!(r.a_d, DynParams::zeros());
        assert_eq!(r.a_z_perp.amax(), 0.0);
        assert_eq!(r.a_z.amax(), 0.0);
    }

    #[test]
    fn j_star_s_identity() {
        let (cam, arm, p) = models();
        let g = sec4_gains();
        let region = wide_region();
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..300 {
            let q = JointVec::new(rng.gen_range(0.6..1.6), rng.gen_range(-0.3..0.5), rng.gen_range(0.3..1.4));
            let qdot = JointVec::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let x = pixel(&cam, &arm, &q);
            let x_o = &x + iv(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let desired = Desired {
                x_d: &x + iv(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
                xdot_d: iv(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)),
                xddot_d: iv(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)),
            };
            let est = random_est(&mut rng);
            let state = ControllerState {
                a_d_hat: DynParams::from_fn(|_, _| rng.gen_range(0.0..20.0)),
                a_z_hat: est.a_z_hat.clone(),
                a_z_perp_hat: est.a_z_perp_hat.clone(),
            };
            let meas = Measurement { q, qdot, x: x.clone() };
            let out = evaluate(&meas, &x_o, &desired, &state, &g, &region).unwrap();

            let tru = p.as_estimate();
            let z = tru.depth(&q);
            let zdot = tru.depth_rate(&q, &qdot);
            let (jp, jz) = decompose_jacobian(&cam, &arm, &q);
            let j = jp - Mat::from_column_slice(2, 1, x.as_slice()) * jz;
            let xdot = j * to_dvec(&qdot) / z;
            let dx = &x - &desired.x_d;
            let dx_o = &x_o - &x;
            let da_z = &est.a_z_hat - &p.a_z;
            let da_p = &est.a_z_perp_hat - &p.a_z_perp;
            let rhs = (&xdot - &desired.xdot_d + (&x_o - &desired.x_d) * g.gamma) * z
                + (&dx - &dx_o) * (0.5 * zdot)
                + y_z_perp(&q, &qdot) * da_p
                - y_z_star_star(&q, &qdot, &x_o, &desired.x_d, &out.xdot_r) * da_z;
            let lhs = &out.j_star * to_dvec(&out.s);
            assert!((&lhs - &rhs).amax() < 1e-9 * (1.0 + lhs.amax()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn closed_loop_sliding_dynamics_residual() {
        // M ṡ + C s + Ĵ*ᵀ K Ĵ* s − Y_d Δa_d = 0 with ṡ = q̈ − q̈_r from the true plant
        let (cam, arm, _) = models();
        let g = sec4_gains();
        let region = wide_region();
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let a_true = arm.dynamic_params();
        for _ in 0..200 {
            let q = JointVec::new(rng.gen_range(0.6..1.6), rng.gen_range(-0.3..0.5), rng.gen_range(0.3..1.4));
            let qdot = JointVec::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let x = pixel(&cam, &arm, &q);
            let est = random_est(&mut rng);
            let state = ControllerState {
                a_d_hat: DynParams::from_fn(|_, _| rng.gen_range(0.0..20.0)),
                a_z_hat: est.a_z_hat,
                a_z_perp_hat: est.a_z_perp_hat,
            };
            let desired = Desired { x_d: &x + iv(2.0, -1.0), xdot_d: iv(5.0, 3.0), xddot_d: iv(-1.0, 2.0) };
            let x_o = &x + iv(-0.5, 0.7);
            let out = evaluate(&Measurement { q, qdot, x }, &x_o, &desired, &state, &g, &region).unwrap();
            let dynm = arm.dynamics(&q, &qdot);
            let qddot = dynm.m.try_inverse().unwrap() * (out.tau - dynm.c * qdot - dynm.g);
            let sdot = qddot - out.qddot_r;
            let y_d = dynamic_regressor(&q, &qdot, &out.qdot_r, &out.qddot_r);
            let fb = to_joint(&(out.j_star.transpose() * &g.k * &out.j_star * to_dvec(&out.s)));
            let res = dynm.m * sdot + dynm.c * out.s + fb - y_d * (state.a_d_hat - a_true);
            assert!(res.amax() < 1e-8 * (1.0 + out.tau.amax()), "{res}");
        }
    }

    #[test]
    fn evaluate_propagates_singular_depth() {
        let g = sec4_gains();
        let region = wide_region();
        let state = ControllerState {
            a_d_hat: DynParams::zeros(),
            a_z_hat: DVector::from_vec(vec![0.0, 0.0, -1.0]),
            a_z_perp_hat: DVector::from_vec(vec![210.0, 210.0]),
        };
        let meas = Measurement { q: JointVec::new(1.0, 0.2, 0.5), qdot: JointVec::zeros(), x: iv(50.0, 50.0) };
        let desired = Desired { x_d: iv(50.0, 50.0), xdot_d: iv(0.0, 0.0), xddot_d: iv(0.0, 0.0) };
        let r = evaluate(&meas, &iv(50.0, 50.0), &desired, &state, &g, &region);
        assert!(matches!(r, Err(Error::SingularZhat { .. })));
    }
}
