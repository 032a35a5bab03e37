//! Image-space observer.
//!
//! `x_o` is driven by the estimated kinematics and the measured pixel
//! position only. No function here takes the image-space velocity.

use nalgebra::DVector;

use crate::error::Result;
use crate::manipulator::JointVec;
use crate::parameterization::{y_z_perp, y_z_star, EstimatedKinematics, ImgVec, KinematicParameterization};

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub x_o: ImgVec,
}

/// `ẋ_o = Ẑ⁻¹Ĵ(q,x)q̇ − ½Ẑ⁻¹Ż̂(q)(x_o − x_d) − α(x_o − x)`.
pub fn observer_rhs(
    x_o: &ImgVec,
    x: &ImgVec,
    x_d: &ImgVec,
    q: &JointVec,
    qdot: &JointVec,
    est: &EstimatedKinematics,
    alpha: f64,
) -> Result<ImgVec> {
    let z_hat = est.depth_checked(q)?;
    let zdot_hat = est.depth_rate(q, qdot);
    let qd = DVector::from_column_slice(qdot.as_slice());
    let predicted = est.jacobian(q, x) * qd / z_hat;
    Ok(predicted - (x_o - x_d) * (0.5 * zdot_hat / z_hat) - (x_o - x) * alpha)
}

/// Defect of the observation-error dynamics
/// `ZΔẋ_o + ½Ż(x_o − x_d) = −αZΔx_o + Y_z⊥Δa_z⊥ − Y_z*Δa_z`,
/// returned as left side minus right side.
///
/// Needs the true parameters, so it is a diagnostic: the true `ẋ` and
/// whatever `ẋ_o` the caller wants checked are inputs.
#[allow(clippy::too_many_arguments)]
pub fn observer_error_residual(
    truth: &KinematicParameterization,
    est: &EstimatedKinematics,
    q: &JointVec,
    qdot: &JointVec,
    x: &ImgVec,
    xdot: &ImgVec,
    x_o: &ImgVec,
    xdot_o: &ImgVec,
    x_d: &ImgVec,
    alpha: f64,
) -> Result<ImgVec> {
    let tru = truth.as_estimate();
    let z = tru.depth(q);
    let zdot = tru.depth_rate(q, qdot);
    let dxo = x_o - x;
    let dxo_dot = xdot_o - xdot;
    let lhs = &dxo_dot * z + (x_o - x_d) * (0.5 * zdot);
    let da_perp = &est.a_z_perp_hat - &truth.a_z_perp;
    let da_z = &est.a_z_hat - &truth.a_z;
    let rhs = &dxo * (-alpha * z) + y_z_perp(q, qdot) * da_perp - y_z_star(q, qdot, x, x_o, x_d, est)? * da_z;
    Ok(lhs - rhs)
}
