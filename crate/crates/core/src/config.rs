//! Experiment configuration files.
//!
//! A configuration is a list of `section.key = value` lines in TOML syntax,
//! so a file reads as flat key-value pairs while still mapping onto typed
//! sections. Unknown keys are rejected at every level. Command-line
//! overrides use the same dotted paths; a bare key is accepted when exactly
//! one section owns it (`duration=0` means `sim.duration=0`).
//!
//! [`ExperimentConfig::to_setup`] is the single validator shared by every
//! entry point: a configuration is valid iff it converts into a
//! [`SimSetup`] that passes [`validate_setup`].

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::analysis::linspace;
use crate::camera::CameraModel;
use crate::controller::{ControllerState, Gains, ProjectionRegion};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vec3};
use crate::manipulator::{DynParams, JointVec, ManipulatorModel, N_DYN_PARAMS};
use crate::parameterization::{IMG_DIM, P_DEPTH, P_KIN};
use crate::sim::{validate_setup, DesiredTrajectory, PlantMode, SimSetup, SimState};

/// Source of the shipped reference preset.
pub const PAPER_SEC4: &str = include_str!("../presets/paper-sec4.cfg");

/// Names accepted by `--preset`.
pub const PRESETS: &[&str] = &["paper-sec4"];

pub fn preset_source(name: &str) -> Result<&'static str> {
    match name {
        "paper-sec4" => Ok(PAPER_SEC4),
        other => Err(Error::Config(format!("unknown preset '{other}' (available: {})", PRESETS.join(", ")))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimSection,
    pub camera: CameraSection,
    pub arm: ArmSection,
    pub gains: GainsSection,
    pub init: InitSection,
    pub projection: ProjectionSection,
    pub trajectory: TrajectorySection,
    pub audit: AuditSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSetting {
    ClosedLoop,
    Conservative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub duration: f64,
    pub log_every: usize,
    pub settle_time: f64,
    pub lyapunov_slack_per_dt: f64,
    pub mode: ModeSetting,
    pub shadow_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSection {
    pub focal_length: f64,
    pub beta: f64,
    pub offset: f64,
    pub principal_point: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSection {
    pub link_lengths: [f64; 3],
    pub link_masses: [f64; 3],
    pub base_inertia: f64,
    pub gravity: f64,
    pub feature_offsets: Vec<[f64; 3]>,
}

/// A gain matrix written either as a scalar multiple of the identity or as
/// its diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSetting {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

impl GainSetting {
    fn matrix(&self, name: &str, dim: usize) -> Result<Mat> {
        match self {
            GainSetting::Scalar(v) => Ok(Mat::identity(dim, dim) * *v),
            GainSetting::Diagonal(d) if d.len() == dim => Ok(Mat::from_diagonal(&DVector::from_column_slice(d))),
            GainSetting::Diagonal(d) => Err(Error::Config(format!("gains.{name} needs {dim} diagonal entries, got {}", d.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub k: GainSetting,
    pub alpha: f64,
    pub gamma: f64,
    pub gamma_d: GainSetting,
    pub gamma_z_perp: GainSetting,
    pub gamma_z: GainSetting,
}

/// Initial state. The kinematic estimates are given as guesses of the
/// physical quantities and mapped to `â_z = (l̂₂, l̂₃, d̂_C)` and
/// `â_z⊥ = f̂β̂ (l̂₂, l̂₃)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub q: [f64; 3],
    pub qdot: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_o: Option<[f64; 2]>,
    pub l2_hat: f64,
    pub l3_hat: f64,
    pub d_c_hat: f64,
    pub f_hat: f64,
    pub beta_hat: f64,
    pub a_d_hat: Vec<f64>,
}

impl InitSection {
    pub fn a_z_hat(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.l2_hat, self.l3_hat, self.d_c_hat])
    }

    pub fn a_z_perp_hat(&self) -> DVector<f64> {
        let s = self.f_hat * self.beta_hat;
        DVector::from_vec(vec![s * self.l2_hat, s * self.l3_hat])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionSection {
    pub a_z_lower: Vec<f64>,
    pub a_z_upper: Vec<f64>,
    pub a_z_perp_lower: Vec<f64>,
    pub a_z_perp_upper: Vec<f64>,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    pub center: [f64; 2],
    pub radius: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    pub seed: u64,
    pub rank_samples: usize,
    pub pixel_box: f64,
    /// One offset set per rank check; the set size is the feature count.
    pub rank_offsets: Vec<Vec<[f64; 3]>>,
    pub identity_samples: usize,
    /// Grid points per joint for the workspace sweep over `[-π, π]`.
    pub grid_points: usize,
    pub depth_samples: usize,
    pub region_min_z_hat: f64,
    pub region_min_conditioning: f64,
    pub h_depths: Vec<f64>,
    pub h_pairs: usize,
}

impl AuditSection {
    pub fn rank_offset_sets(&self) -> Vec<Vec<Vec3>> {
        self.rank_offsets.iter().map(|set| set.iter().map(|c| Vec3::from(*c)).collect()).collect()
    }

    pub fn workspace_grid(&self) -> [Vec<f64>; 3] {
        let pi = std::f64::consts::PI;
        let g = linspace(-pi, pi, self.grid_points.max(1));
        [g.clone(), g.clone(), g]
    }
}

fn parse_value(raw: &str) -> Value {
    // anything that is not a TOML literal is taken as a bare string
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn to_table(cfg: &ExperimentConfig) -> Table {
    match Value::try_from(cfg).expect("config serializes") {
        Value::Table(t) => t,
        _ => unreachable!("a struct serializes to a table"),
    }
}

fn leaf_paths(table: &Table, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => leaf_paths(t, &path, out),
            _ => out.push(path),
        }
    }
}

impl ExperimentConfig {
    /// Parses a configuration file, then applies `key=value` overrides.
    pub fn parse(source: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = toml::from_str(source).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{ov}' is not of the form key=value")))?;
            let path = Self::resolve_key(key.trim())?;
            Self::set_path(&mut table, &path, parse_value(raw.trim()))?;
        }
        Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn preset(name: &str, overrides: &[String]) -> Result<Self> {
        Self::parse(preset_source(name)?, overrides)
    }

    /// Every addressable dotted key.
    pub fn keys() -> Vec<String> {
        let mut cfg = Self::parse(PAPER_SEC4, &[]).expect("shipped preset parses");
        cfg.init.x_o = Some([0.0; 2]);
        let table = to_table(&cfg);
        let mut out = Vec::new();
        leaf_paths(&table, "", &mut out);
        out
    }

    /// Expands a bare key to its unique dotted path.
    pub fn resolve_key(key: &str) -> Result<String> {
        let keys = Self::keys();
        if key.contains('.') {
            return if keys.iter().any(|k| k == key) {
                Ok(key.to_string())
            } else {
                Err(Error::Config(format!("unknown key '{key}'")))
            };
        }
        let hits: Vec<&String> = keys.iter().filter(|k| k.rsplit('.').next() == Some(key)).collect();
        match hits.as_slice() {
            [one] => Ok((*one).clone()),
            [] => Err(Error::Config(format!("unknown key '{key}'"))),
            many => Err(Error::Config(format!(
                "key '{key}' is ambiguous: {}",
                many.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    fn set_path(table: &mut Table, path: &str, value: Value) -> Result<()> {
        let mut parts: Vec<&str> = path.split('.').collect();
        let leaf = parts.pop().expect("non-empty path");
        let mut cur = table;
        for p in parts {
            cur = match cur.entry(p).or_insert_with(|| Value::Table(Table::new())) {
                Value::Table(t) => t,
                _ => return Err(Error::Config(format!("'{p}' in '{path}' is not a section"))),
            };
        }
        cur.insert(leaf.to_string(), value);
        Ok(())
    }

    /// Serializes back to the flat dotted form.
    pub fn to_flat_string(&self) -> String {
        let table = to_table(self);
        let mut keys = Vec::new();
        leaf_paths(&table, "", &mut keys);
        let mut out = String::new();
        for k in keys {
            let (sec, leaf) = k.split_once('.').expect("two-level keys");
            let v = &table[sec][leaf];
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn camera(&self) -> CameraModel {
        let c = &self.camera;
        let mut cam = CameraModel::aligned(c.focal_length, c.beta, c.offset);
        cam.intrinsics.principal_point = Vector2::from(c.principal_point);
        CameraModel::new(cam.intrinsics.clone(), cam.extrinsics.clone())
    }

    pub fn arm(&self) -> ManipulatorModel {
        let a = &self.arm;
        ManipulatorModel {
            link_lengths: a.link_lengths,
            link_masses: a.link_masses,
            base_inertia: a.base_inertia,
            gravity: a.gravity,
            feature_offsets: a.feature_offsets.iter().map(|c| Vec3::from(*c)).collect(),
        }
    }

    pub fn gains(&self, allow_theorem_violation: bool) -> Result<Gains> {
        let g = &self.gains;
        Gains::new(
            g.k.matrix("k", IMG_DIM)?,
            g.alpha,
            g.gamma,
            g.gamma_d.matrix("gamma_d", N_DYN_PARAMS)?,
            g.gamma_z_perp.matrix("gamma_z_perp", P_KIN)?,
            g.gamma_z.matrix("gamma_z", P_DEPTH)?,
            allow_theorem_violation,
        )
    }

    pub fn region(&self) -> ProjectionRegion {
        let p = &self.projection;
        let v = |x: &Vec<f64>| DVector::from_column_slice(x);
        ProjectionRegion {
            a_z_lower: v(&p.a_z_lower),
            a_z_upper: v(&p.a_z_upper),
            a_z_perp_lower: v(&p.a_z_perp_lower),
            a_z_perp_upper: v(&p.a_z_perp_upper),
            margin: p.margin,
        }
    }

    pub fn trajectory(&self) -> DesiredTrajectory {
        let t = &self.trajectory;
        DesiredTrajectory { center: DVector::from_column_slice(&t.center), radius: t.radius, omega: t.omega }
    }

    /// Builds and validates the simulation setup.
    pub fn to_setup(&self, allow_theorem_violation: bool) -> Result<SimSetup> {
        let camera = self.camera();
        let arm = self.arm();
        let gains = self.gains(allow_theorem_violation)?;
        let init = &self.init;
        if init.a_d_hat.len() != N_DYN_PARAMS {
            return Err(Error::Config(format!("init.a_d_hat needs {N_DYN_PARAMS} entries, got {}", init.a_d_hat.len())));
        }
        if self.sim.settle_time < 0.0 || self.sim.shadow_noise < 0.0 || self.sim.lyapunov_slack_per_dt < 0.0 {
            return Err(Error::Config("settle_time, shadow_noise and lyapunov_slack_per_dt must be non-negative".into()));
        }
        if !(self.trajectory.radius >= 0.0) || !self.trajectory.omega.is_finite() {
            return Err(Error::Config("trajectory radius must be non-negative and omega finite".into()));
        }
        let q = JointVec::from(init.q);
        let x_o = match init.x_o {
            Some(v) => DVector::from_column_slice(&v),
            None => {
                let r = arm.feature_positions(&q);
                let r0 = r.first().ok_or_else(|| Error::Config("arm.feature_offsets is empty".into()))?;
                DVector::from_column_slice(camera.project(r0)?.as_slice())
            }
        };
        let setup = SimSetup {
            camera,
            arm,
            gains,
            region: self.region(),
            trajectory: self.trajectory(),
            dt: self.sim.dt,
            duration: self.sim.duration,
            log_every: self.sim.log_every,
            initial: SimState {
                t: 0.0,
                q,
                qdot: JointVec::from(init.qdot),
                x_o,
                controller: ControllerState {
                    a_d_hat: DynParams::from_column_slice(&init.a_d_hat),
                    a_z_hat: init.a_z_hat(),
                    a_z_perp_hat: init.a_z_perp_hat(),
                },
                lyapunov_integral: 0.0,
            },
            mode: match self.sim.mode {
                ModeSetting::ClosedLoop => PlantMode::ClosedLoop,
                ModeSetting::Conservative => PlantMode::Conservative,
            },
            shadow_noise: self.sim.shadow_noise,
            settle_time: self.sim.settle_time,
            lyapunov_slack: self.sim.lyapunov_slack_per_dt * self.sim.dt,
        };
        validate_setup(&setup)?;
        Ok(setup)
    }
}
