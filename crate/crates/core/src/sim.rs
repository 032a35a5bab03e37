//! Closed-loop simulation: plant, observer and adaptation stacked into one
//! ODE and stepped with fixed-step RK4.
//!
//! State vector layout:
//!
//! ```text
//! [ q (3) | q̇ (3) | x_o (2) | â_d (8) | â_z (3) | â_z⊥ (2) | ∫ sᵀĴ*ᵀZ⁻¹Ĵ*s ]
//! ```
//!
//! The last entry is an analysis-only integral used by the `V₂` monitor.
//! The image position `x` is recomputed from `q` at every evaluation.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{h_matrix_min_eig, lyapunov_certificate, lyapunov_v1, lyapunov_v2_core, CertificateReport, LyapunovTrace};
use crate::camera::CameraModel;
use crate::controller::{evaluate, ControlOutput, ControllerState, Desired, Gains, Measurement, ProjectionRegion};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::manipulator::{DynParams, JointVec, ManipulatorModel, N_DYN_PARAMS};
use crate::parameterization::{decompose_jacobian, ImgVec, KinematicParameterization, IMG_DIM, P_DEPTH, P_KIN};

pub const STATE_DIM: usize = 3 + 3 + IMG_DIM + N_DYN_PARAMS + P_DEPTH + P_KIN + 1;

const OFF_Q: usize = 0;
const OFF_QD: usize = 3;
const OFF_XO: usize = 6;
const OFF_AD: usize = OFF_XO + IMG_DIM;
const OFF_AZ: usize = OFF_AD + N_DYN_PARAMS;
const OFF_AP: usize = OFF_AZ + P_DEPTH;
const OFF_I: usize = OFF_AP + P_KIN;

/// Circular image-space reference `c + r (cos ωt, sin ωt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredTrajectory {
    pub center: ImgVec,
    pub radius: f64,
    pub omega: f64,
}

impl DesiredTrajectory {
    pub fn desired(&self, t: f64) -> Desired {
        let (s, c) = (self.omega * t).sin_cos();
        let r = self.radius;
        let w = self.omega;
        Desired {
            x_d: &self.center + DVector::from_vec(vec![r * c, r * s]),
            xdot_d: DVector::from_vec(vec![-r * w * s, r * w * c]),
            xddot_d: DVector::from_vec(vec![-r * w * w * c, -r * w * w * s]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub q: JointVec,
    pub qdot: JointVec,
    pub x_o: ImgVec,
    pub controller: ControllerState,
    pub lyapunov_integral: f64,
}

impl SimState {
    pub fn pack(&self) -> DVector<f64> {
        let mut v = DVector::zeros(STATE_DIM);
        v.rows_mut(OFF_Q, 3).copy_from(&self.q);
        v.rows_mut(OFF_QD, 3).copy_from(&self.qdot);
        v.rows_mut(OFF_XO, IMG_DIM).copy_from(&self.x_o);
        v.rows_mut(OFF_AD, N_DYN_PARAMS).copy_from(&self.controller.a_d_hat);
        v.rows_mut(OFF_AZ, P_DEPTH).copy_from(&self.controller.a_z_hat);
        v.rows_mut(OFF_AP, P_KIN).copy_from(&self.controller.a_z_perp_hat);
        v[OFF_I] = self.lyapunov_integral;
        v
    }

    pub fn unpack(t: f64, v: &DVector<f64>) -> Self {
        Self {
            t,
            q: v.fixed_rows::<3>(OFF_Q).into_owned(),
            qdot: v.fixed_rows::<3>(OFF_QD).into_owned(),
            x_o: v.rows(OFF_XO, IMG_DIM).into_owned(),
            controller: ControllerState {
                a_d_hat: v.fixed_rows::<N_DYN_PARAMS>(OFF_AD).into_owned(),
                a_z_hat: v.rows(OFF_AZ, P_DEPTH).into_owned(),
                a_z_perp_hat: v.rows(OFF_AP, P_KIN).into_owned(),
            },
            lyapunov_integral: v[OFF_I],
        }
    }
}

/// What the plant does with the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlantMode {
    /// The adaptive controller drives the arm.
    #[default]
    ClosedLoop,
    /// Zero torque, zero gravity, frozen observer and estimates. Kinetic
    /// energy is then a conserved quantity, which checks the integrator.
    Conservative,
}

/// Everything a run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSetup {
    pub camera: CameraModel,
    pub arm: ManipulatorModel,
    pub gains: Gains,
    pub region: ProjectionRegion,
    pub trajectory: DesiredTrajectory,
    pub dt: f64,
    pub duration: f64,
    /// Record every `log_every`-th step (the Lyapunov monitors see every step).
    pub log_every: usize,
    pub initial: SimState,
    pub mode: PlantMode,
    /// Amplitude of noise added to the logged true-`ẋ` channel. The
    /// controller never reads that channel, so this must not change it.
    pub shadow_noise: f64,
    /// Time after which tracking errors are summarized separately.
    pub settle_time: f64,
    /// Per-step slack for the Lyapunov monitors.
    pub lyapunov_slack: f64,
}

/// Ground-truth quantities the monitors need, computed once per run.
#[derive(Debug, Clone)]
struct Truth {
    kin: KinematicParameterization,
    a_d: DynParams,
}

impl SimSetup {
    fn truth(&self) -> Result<Truth> {
        Ok(Truth {
            kin: KinematicParameterization::from_models(&self.camera, &self.arm)?,
            a_d: self.arm.dynamic_params(),
        })
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Measured image position at `q`.
    pub fn image_position(&self, q: &JointVec) -> Result<ImgVec> {
        let r = self.arm.feature_positions(q)[0];
        Ok(DVector::from_column_slice(self.camera.project(&r)?.as_slice()))
    }
}

/// Per-evaluation by-products of the right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsDiagnostics {
    pub x: ImgVec,
    pub desired: Desired,
    /// True depth of the feature.
    pub z: f64,
    /// True `ẋ`, with optional corruption. Logged only.
    pub xdot_shadow: ImgVec,
    pub control: Option<ControlOutput>,
    pub qddot: JointVec,
}

fn shadow_corruption(t: f64, amplitude: f64) -> ImgVec {
    if amplitude == 0.0 {
        return DVector::zeros(IMG_DIM);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(t.to_bits());
    DVector::from_fn(IMG_DIM, |_, _| amplitude * rng.gen_range(-1.0..1.0))
}

/// Closed-loop derivative of the packed state.
pub fn rhs(setup: &SimSetup, t: f64, y: &DVector<f64>) -> Result<(DVector<f64>, RhsDiagnostics)> {
    let st = SimState::unpack(t, y);
    let (q, qdot) = (st.q, st.qdot);
    let r = setup.arm.feature_positions(&q)[0];
    let z = setup.camera.depth(&r);
    let x = setup.image_position(&q)?;
    let desired = setup.trajectory.desired(t);

    // ground-truth image velocity, kept away from the controller
    let (jp, jz) = decompose_jacobian(&setup.camera, &setup.arm, &q);
    let j = jp - Mat::from_column_slice(IMG_DIM, 1, x.as_slice()) * jz;
    let xdot_true = j * DVector::from_column_slice(qdot.as_slice()) / z;
    let xdot_shadow = xdot_true + shadow_corruption(t, setup.shadow_noise);

    let dynm = setup.arm.dynamics(&q, &qdot);
    let m_inv = dynm.m.try_inverse().ok_or_else(|| Error::NonFinite("inertia matrix inverse".into()))?;
    let mut dy = DVector::zeros(STATE_DIM);
    dy.rows_mut(OFF_Q, 3).copy_from(&qdot);

    let (qddot, control) = match setup.mode {
        PlantMode::Conservative => (m_inv * (-(dynm.c * qdot)), None),
        PlantMode::ClosedLoop => {
            let meas = Measurement { q, qdot, x: x.clone() };
            let out = evaluate(&meas, &st.x_o, &desired, &st.controller, &setup.gains, &setup.region)?;
            let qddot = m_inv * (out.tau - dynm.c * qdot - dynm.g);
            dy.rows_mut(OFF_XO, IMG_DIM).copy_from(&out.xdot_o);
            dy.rows_mut(OFF_AD, N_DYN_PARAMS).copy_from(&out.rates.a_d);
            dy.rows_mut(OFF_AZ, P_DEPTH).copy_from(&out.rates.a_z);
            dy.rows_mut(OFF_AP, P_KIN).copy_from(&out.rates.a_z_perp);
            let js = &out.j_star * DVector::from_column_slice(out.s.as_slice());
            dy[OFF_I] = js.norm_squared() / z;
            (qddot, Some(out))
        }
    };
    dy.rows_mut(OFF_QD, 3).copy_from(&qddot);
    if dy.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("state derivative".into()));
    }
    Ok((dy, RhsDiagnostics { x, desired, z, xdot_shadow, control, qddot }))
}

/// One classical RK4 step of `ẏ = f(t, y)`.
pub fn rk4_step<F>(mut f: F, t: f64, y: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(t, y)?;
    let k2 = f(t + 0.5 * h, &(y + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.5 * h, &(y + &k2 * (0.5 * h)))?;
    let k4 = f(t + h, &(y + &k3 * h))?;
    Ok(y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// RK4 step of the closed loop followed by the box clamp on `(â_z, â_z⊥)`.
pub fn step_rk4(setup: &SimSetup, state: &SimState) -> Result<SimState> {
    let y = state.pack();
    let y1 = rk4_step(|t, y| rhs(setup, t, y).map(|(d, _)| d), state.t, &y, setup.dt)?;
    let mut next = SimState::unpack(state.t + setup.dt, &y1);
    let (az, ap) = setup.region.clamp(&next.controller.a_z_hat, &next.controller.a_z_perp_hat);
    next.controller.a_z_hat = az;
    next.controller.a_z_perp_hat = ap;
    Ok(next)
}

/// One logged instant.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub q: JointVec,
    pub qdot: JointVec,
    pub x: ImgVec,
    pub x_o: ImgVec,
    pub x_d: ImgVec,
    pub dx: ImgVec,
    pub dx_o: ImgVec,
    pub tau: JointVec,
    pub s: JointVec,
    pub a_d_hat: DynParams,
    pub a_z_hat: DVector<f64>,
    pub a_z_perp_hat: DVector<f64>,
    pub z: f64,
    pub z_hat: f64,
    pub v1: f64,
    pub v2_core: f64,
    pub lyapunov_integral: f64,
    pub h_min_eig: f64,
    pub kinetic_energy: f64,
    pub xdot_shadow: ImgVec,
    /// Observer rate, reference velocity and acceleration: outputs that
    /// must not depend on the shadow channel.
    pub xdot_o: ImgVec,
    pub qdot_r: JointVec,
    pub qddot_r: JointVec,
    pub projection_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: usize,
    pub t_final: f64,
    pub completed: bool,
    pub max_dx_inf: f64,
    pub terminal_dx_inf: f64,
    pub terminal_dx_o_inf: f64,
    pub settle_time: f64,
    /// Maxima over `t ≥ settle_time`; `NaN` if the run ended before it.
    pub max_dx_inf_after_settle: f64,
    pub max_dx_o_inf_after_settle: f64,
    pub initial_depth_rel_error: f64,
    pub terminal_depth_rel_error: f64,
    pub min_depth: f64,
    pub min_z_hat: f64,
    pub projection_active_steps: usize,
    pub v1_violations: usize,
    pub v1_max_increase: f64,
    /// `None` when the gain condition does not hold.
    pub v2_violations: Option<usize>,
    pub v2_max_increase: Option<f64>,
    pub l_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
    /// Monitor values at every step, independent of the log cadence.
    pub lyapunov: Vec<LyapunovTrace>,
    pub summary: RunSummary,
    pub certificate: CertificateReport,
    pub gamma: f64,
    /// Set when the run stopped early; the records up to the fault are kept.
    pub fault: Option<Error>,
}

impl RunLog {
    /// Post-hoc constant of the integral term.
    pub fn l_m(&self) -> f64 {
        self.summary.l_m
    }

    pub fn v2(&self, trace: &LyapunovTrace) -> f64 {
        trace.v2(self.gamma, self.l_m())
    }
}

fn inf_norm(v: &ImgVec) -> f64 {
    v.amax()
}

fn make_record(setup: &SimSetup, truth: &Truth, st: &SimState, diag: &RhsDiagnostics) -> Result<(LogRecord, LyapunovTrace)> {
    let dx = &diag.x - &diag.desired.x_d;
    let dx_o = &st.x_o - &diag.x;
    let est = st.controller.estimated_kinematics();
    let dynm = setup.arm.dynamics(&st.q, &st.qdot);
    let (tau, s, xdot_o, qdot_r, qddot_r, active) = match &diag.control {
        Some(c) => (c.tau, c.s, c.xdot_o.clone(), c.qdot_r, c.qddot_r, c.projection_active),
        None => (JointVec::zeros(), st.qdot, DVector::zeros(IMG_DIM), JointVec::zeros(), JointVec::zeros(), false),
    };
    let da_d = st.controller.a_d_hat - truth.a_d;
    let v1 = lyapunov_v1(&s, &dynm.m, &da_d, &setup.gains.gamma_d);
    let zmat = Mat::identity(IMG_DIM, IMG_DIM) * diag.z;
    let v2_core = lyapunov_v2_core(
        &dx_o,
        &dx,
        &zmat,
        &(&st.controller.a_z_perp_hat - &truth.kin.a_z_perp),
        &(&st.controller.a_z_hat - &truth.kin.a_z),
        &setup.gains,
    );
    let h = h_matrix_min_eig(setup.gains.alpha, setup.gains.gamma, &[diag.z])?;
    let trace = LyapunovTrace { t: st.t, v1, v2_core, integral_term: st.lyapunov_integral, h_min_eig: h };
    let rec = LogRecord {
        t: st.t,
        q: st.q,
        qdot: st.qdot,
        x: diag.x.clone(),
        x_o: st.x_o.clone(),
        x_d: diag.desired.x_d.clone(),
        dx,
        dx_o,
        tau,
        s,
        a_d_hat: st.controller.a_d_hat,
        a_z_hat: st.controller.a_z_hat.clone(),
        a_z_perp_hat: st.controller.a_z_perp_hat.clone(),
        z: diag.z,
        z_hat: est.depth(&st.q),
        v1,
        v2_core,
        lyapunov_integral: st.lyapunov_integral,
        h_min_eig: h,
        kinetic_energy: 0.5 * st.qdot.dot(&(dynm.m * st.qdot)),
        xdot_shadow: diag.xdot_shadow.clone(),
        xdot_o,
        qdot_r,
        qddot_r,
        projection_active: active,
    };
    Ok((rec, trace))
}

fn fault(t: f64, st: &SimState, e: Error) -> Error {
    Error::Fault { t, state: st.pack().as_slice().to_vec(), source: Box::new(e) }
}

/// Basic checks on a setup before stepping.
pub fn validate_setup(setup: &SimSetup) -> Result<()> {
    if !(setup.dt > 0.0 && setup.dt.is_finite()) {
        return Err(Error::Config(format!("dt must be positive, got {}", setup.dt)));
    }
    if !(setup.duration >= 0.0 && setup.duration.is_finite()) {
        return Err(Error::Config(format!("duration must be non-negative, got {}", setup.duration)));
    }
    if setup.duration > 0.0 && setup.duration < setup.dt {
        return Err(Error::Config("a non-zero duration must be at least one step".into()));
    }
    if setup.log_every == 0 {
        return Err(Error::Config("log cadence must be at least 1".into()));
    }
    setup.region.validate()?;
    if setup.initial.x_o.len() != IMG_DIM {
        return Err(Error::Config("initial observer state must have two entries".into()));
    }
    if setup.mode == PlantMode::ClosedLoop
        && !setup.region.contains(&setup.initial.controller.a_z_hat, &setup.initial.controller.a_z_perp_hat)
    {
        return Err(Error::Config("initial kinematic estimates lie outside the projection region".into()));
    }
    if setup.initial.pack().iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("initial state has non-finite entries".into()));
    }
    setup.truth()?;
    Ok(())
}

/// Runs the configured experiment. Setup errors are returned as `Err`;
/// faults during stepping end the run early and are reported in the log.
pub fn run(setup: &SimSetup) -> Result<RunLog> {
    validate_setup(setup)?;
    let truth = setup.truth()?;
    let n = setup.steps();
    let mut records = Vec::with_capacity(n / setup.log_every + 2);
    let mut lyapunov = Vec::with_capacity(n + 1);
    let mut state = setup.initial.clone();
    let mut fault_err = None;
    let mut steps_done = 0;
    let mut projection_active_steps = 0;

    for k in 0..=n {
        let observed = rhs(setup, state.t, &state.pack()).and_then(|(_, diag)| make_record(setup, &truth, &state, &diag));
        let (rec, trace) = match observed {
            Ok(v) => v,
            Err(e) => {
                fault_err = Some(fault(state.t, &state, e));
                break;
            }
        };
        if rec.projection_active {
            projection_active_steps += 1;
        }
        lyapunov.push(trace);
        if k % setup.log_every == 0 || k == n {
            records.push(rec);
        }
        if k == n {
            break;
        }
        match step_rk4(setup, &state) {
            Ok(mut next) => {
                // avoid drift of t from repeated addition
                next.t = (k + 1) as f64 * setup.dt;
                if next.pack().iter().any(|v| !v.is_finite()) {
                    fault_err = Some(fault(next.t, &state, Error::NonFinite("integrated state".into())));
                    break;
                }
                state = next;
                steps_done += 1;
            }
            Err(e) => {
                fault_err = Some(fault(state.t, &state, e));
                break;
            }
        }
    }

    let certificate = lyapunov_certificate(&lyapunov, &setup.gains, setup.lyapunov_slack);
    let mut summary = summarize(setup, &records, &lyapunov, &certificate, steps_done, fault_err.is_none());
    summary.projection_active_steps = projection_active_steps;
    Ok(RunLog { records, lyapunov, summary, certificate, gamma: setup.gains.gamma, fault: fault_err })
}

fn summarize(
    setup: &SimSetup,
    records: &[LogRecord],
    lyapunov: &[LyapunovTrace],
    cert: &CertificateReport,
    steps: usize,
    completed: bool,
) -> RunSummary {
    let fold_max = |it: &mut dyn Iterator<Item = f64>| it.fold(f64::NAN, |a: f64, b| if a.is_nan() { b } else { a.max(b) });
    let after: Vec<&LogRecord> = records.iter().filter(|r| r.t >= setup.settle_time - 1e-9).collect();
    let first = records.first();
    let last = records.last();
    let rel = |r: Option<&LogRecord>| r.map_or(f64::NAN, |r| (r.z_hat - r.z).abs() / r.z);
    RunSummary {
        steps,
        t_final: last.map_or(0.0, |r| r.t),
        completed,
        max_dx_inf: fold_max(&mut records.iter().map(|r| inf_norm(&r.dx))),
        terminal_dx_inf: last.map_or(f64::NAN, |r| inf_norm(&r.dx)),
        terminal_dx_o_inf: last.map_or(f64::NAN, |r| inf_norm(&r.dx_o)),
        settle_time: setup.settle_time,
        max_dx_inf_after_settle: fold_max(&mut after.iter().map(|r| inf_norm(&r.dx))),
        max_dx_o_inf_after_settle: fold_max(&mut after.iter().map(|r| inf_norm(&r.dx_o))),
        initial_depth_rel_error: rel(first),
        terminal_depth_rel_error: rel(last),
        min_depth: records.iter().map(|r| r.z).fold(f64::INFINITY, f64::min),
        min_z_hat: records.iter().map(|r| r.z_hat).fold(f64::INFINITY, f64::min),
        projection_active_steps: 0,
        v1_violations: cert.v1.violations,
        v1_max_increase: cert.v1.max_increase,
        v2_violations: cert.v2.map(|r| r.violations),
        v2_max_increase: cert.v2.map(|r| r.max_increase),
        l_m: lyapunov.last().map_or(0.0, |r| r.integral_term),
    }
}
