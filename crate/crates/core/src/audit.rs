//! The full audit battery behind the `audit` command.
//!
//! Each check yields one [`AuditItem`]; the battery passes when every item
//! does. The report renders both as readable text and as a TOML table of
//! verdicts for scripts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    cell_verdict, depth_positivity_audit, h_matrix_min_eig, identity_suite, jacobian_rank_workspace_audit,
    projection_region_audit, rank_audit, synthetic_six_dof_audit,
};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::sim::run;

/// Slack for treating the smallest H eigenvalue as zero.
pub const H_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub items: Vec<AuditItem>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn item(&self, name: &str) -> Option<&AuditItem> {
        self.items.iter().find(|i| i.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in &self.items {
            s.push_str(&format!("[{}] {}: {}\n", if i.passed { "pass" } else { "FAIL" }, i.name, i.detail));
        }
        s.push_str(&format!("overall: {}\n", if self.passed() { "pass" } else { "FAIL" }));
        s
    }

    /// `name = true/false` per item plus an `overall` key.
    pub fn to_toml(&self) -> String {
        let mut t = toml::Table::new();
        t.insert("overall".into(), toml::Value::Boolean(self.passed()));
        let mut items = toml::Table::new();
        for i in &self.items {
            items.insert(i.name.clone(), toml::Value::Boolean(i.passed));
        }
        t.insert("items".into(), toml::Value::Table(items));
        toml::to_string(&t).expect("report serializes")
    }
}

fn item(name: impl Into<String>, passed: bool, detail: String) -> AuditItem {
    AuditItem { name: name.into(), passed, detail }
}

/// Runs every audit on the configuration. The gain condition is judged
/// here rather than rejected up front, so boundary configurations still
/// produce a report.
pub fn run_audit(cfg: &ExperimentConfig) -> Result<AuditReport> {
    let setup = cfg.to_setup(true)?;
    let a = &cfg.audit;
    let cam = &setup.camera;
    let arm = &setup.arm;
    let mut items = Vec::new();

    for (i, offsets) in a.rank_offset_sets().iter().enumerate() {
        let m = offsets.len();
        let rep = rank_audit(cam, offsets, a.rank_samples, a.pixel_box, a.seed + i as u64)?;
        let mut detail = format!(
            "m = {m}: rank(N J_f) = {} expected on {} samples, {} violations; rank(J_f) = {} (expected {})",
            rep.expected_rank,
            rep.samples,
            rep.violations.len(),
            rep.feature_rank,
            rep.expected_feature_rank
        );
        if rep.collinear {
            detail.push_str("; offsets are collinear");
        }
        if let Some(angle) = rep.min_genericity_angle {
            detail.push_str(&format!("; min angle of c1 - c2 to the range intersection {angle:.3e} rad"));
        }
        items.push(item(format!("rank_m{m}_set{i}"), rep.passed(), detail));

        let six = synthetic_six_dof_audit(cam, offsets, a.rank_samples.min(200), a.seed + 100 + i as u64)?;
        items.push(item(
            format!("six_dof_m{m}_set{i}"),
            six.violations.is_empty() && !six.collinear,
            format!("random 6-joint arms: {} of {} samples lost rank", six.violations.len(), six.samples),
        ));
    }

    match identity_suite(cam, arm, a.identity_samples, a.seed + 200) {
        Ok(rep) => items.push(item(
            "regressor_identities",
            rep.passed(1e-10, 1e-9),
            format!(
                "max relative errors: depth {:.1e}, depth rate {:.1e}, perp {:.1e}, composite {:.1e}, decomposition {:.1e}, dynamics {:.1e}; skew {:.1e}",
                rep.depth, rep.depth_rate, rep.perp, rep.composite, rep.decomposition, rep.dynamic_regressor, rep.skew
            ),
        )),
        Err(e) => items.push(item("regressor_identities", false, e.to_string())),
    }

    // configured gains against the positivity condition
    let g = &setup.gains;
    let lam = h_matrix_min_eig(g.alpha, g.gamma, &a.h_depths)?;
    let boundary = lam.abs() <= H_ZERO_TOL * g.alpha.max(g.gamma) * a.h_depths.iter().cloned().fold(1.0, f64::max);
    let detail = if boundary {
        format!("alpha = {}, gamma = {}: H is singular (boundary alpha = gamma/3), min eig {lam:.3e}", g.alpha, g.gamma)
    } else if lam < 0.0 {
        format!("alpha = {}, gamma = {}: H is indefinite, min eig {lam:.3e}", g.alpha, g.gamma)
    } else {
        format!("alpha = {}, gamma = {}: min eig {lam:.6e} over depths {:?}", g.alpha, g.gamma, a.h_depths)
    };
    items.push(item("h_matrix_gains", lam > 0.0 && !boundary && g.theorem_condition_holds(), detail));

    // the analytic boundary on random gain pairs
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed + 300);
    let mut bad = 0;
    let mut worst_boundary: f64 = 0.0;
    for _ in 0..a.h_pairs {
        let gamma = rng.gen_range(0.1..50.0);
        let above = gamma / 3.0 * rng.gen_range(1.01..10.0);
        let below = gamma / 3.0 * rng.gen_range(0.05..0.99);
        for &z in &a.h_depths {
            if h_matrix_min_eig(above, gamma, &[z])? <= 0.0 || h_matrix_min_eig(below, gamma, &[z])? >= 0.0 {
                bad += 1;
            }
            worst_boundary = worst_boundary.max(h_matrix_min_eig(gamma / 3.0, gamma, &[z])?.abs());
        }
    }
    items.push(item(
        "h_matrix_boundary",
        bad == 0 && worst_boundary < H_ZERO_TOL,
        format!("{} pairs per side: {bad} sign errors, max |min eig| at alpha = gamma/3 is {worst_boundary:.1e}", a.h_pairs),
    ));

    let ws = jacobian_rank_workspace_audit(cam, arm, &a.workspace_grid());
    items.push(item(
        "workspace_rank",
        ws.passed(),
        format!(
            "{} cells: {} arm-singular (flagged), {} behind the camera, {} full-rank violations away from arm singularities",
            ws.cells,
            ws.arm_singular.len(),
            ws.behind_camera,
            ws.image_deficient.len()
        ),
    ));

    let depth = depth_positivity_audit(cam, arm, a.depth_samples, a.seed + 400);
    items.push(item(
        "depth_positivity",
        depth.min_depth > 0.0,
        format!("min depth {:.4} m over {} reachable points", depth.min_depth, depth.samples),
    ));

    // the configured run: trajectory cells and the projection box along it
    let log = run(&setup)?;
    let qs: Vec<_> = log.records.iter().map(|r| r.q).collect();
    let singular = qs
        .iter()
        .filter(|q| cell_verdict(cam, arm, q).is_none_or(|v| v.arm_singular() || v.image_rank < 2 * arm.n_features()))
        .count();
    items.push(item(
        "run_completed",
        log.fault.is_none(),
        match &log.fault {
            Some(e) => e.to_string(),
            None => format!("{} steps", log.summary.steps),
        },
    ));
    items.push(item(
        "trajectory_full_rank",
        singular == 0 && !qs.is_empty(),
        format!("{singular} of {} logged configurations in rank-deficient cells", qs.len()),
    ));
    let stride = (qs.len() / 200).max(1);
    let q_sub: Vec<_> = qs.iter().step_by(stride).cloned().collect();
    let px: Vec<_> = log.records.iter().step_by(stride.max(qs.len() / 20).max(1)).map(|r| r.x_d.clone()).collect();
    let region = projection_region_audit(&setup.region, &q_sub, &px);
    items.push(item(
        "projection_region",
        region.passed(a.region_min_z_hat, a.region_min_conditioning),
        format!(
            "over box corners along the run: min z_hat {:.4} (floor {}), min conditioning of J_hat {:.3e} (floor {:.1e})",
            region.min_z_hat, a.region_min_z_hat, region.min_jacobian_conditioning, a.region_min_conditioning
        ),
    ));
    Ok(AuditReport { items })
}
