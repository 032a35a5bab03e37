//! Run artifacts: trajectory CSV, Lyapunov trace CSV, summary sidecar,
//! fault snapshot and a gnuplot script.
//!
//! Every float is written as `{:.16e}` (17 significant digits), which
//! round-trips an `f64` exactly and keeps files byte-identical for
//! identical runs.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::analysis::LyapunovTrace;
use crate::error::{Error, Result};
use crate::manipulator::N_DYN_PARAMS;
use crate::sim::{RunLog, RunSummary, STATE_DIM};

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const LYAPUNOV_CSV: &str = "lyapunov.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const SNAPSHOT_FILE: &str = "fault_state.toml";
pub const PLOT_SCRIPT: &str = "plot.gp";

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("output: {e}"))
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Column names of the trajectory CSV, in order.
pub fn trajectory_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    let mut push = |name: &str, n: usize| h.extend((1..=n).map(|i| format!("{name}{i}")));
    push("q", 3);
    push("qdot", 3);
    push("x", 2);
    push("x_o", 2);
    push("x_d", 2);
    push("dx", 2);
    push("dx_o", 2);
    push("tau", 3);
    push("s", 3);
    push("a_d_hat", N_DYN_PARAMS);
    push("a_z_hat", 3);
    push("a_z_perp_hat", 2);
    h.extend(["z", "z_hat", "v1", "v2"].map(String::from));
    h
}

fn trajectory_rows(log: &RunLog) -> Vec<Vec<String>> {
    log.records
        .iter()
        .zip(log.records.iter().map(|r| {
            // the trace is sorted by time and holds every step
            let i = log.lyapunov.partition_point(|l| l.t < r.t);
            log.lyapunov.get(i).filter(|l| l.t == r.t)
        }))
        .map(|(r, trace)| {
            let mut row = vec![r.t];
            row.extend(r.q.iter());
            row.extend(r.qdot.iter());
            row.extend(r.x.iter());
            row.extend(r.x_o.iter());
            row.extend(r.x_d.iter());
            row.extend(r.dx.iter());
            row.extend(r.dx_o.iter());
            row.extend(r.tau.iter());
            row.extend(r.s.iter());
            row.extend(r.a_d_hat.iter());
            row.extend(r.a_z_hat.iter());
            row.extend(r.a_z_perp_hat.iter());
            row.push(r.z);
            row.push(r.z_hat);
            row.push(r.v1);
            row.push(trace.map_or(f64::NAN, |tr| log.v2(tr)));
            row.into_iter().map(fmt_f64).collect()
        })
        .collect()
}

fn write_csv<W: Write>(w: W, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(io_err)?;
    for r in rows {
        out.write_record(r).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_trajectory_csv<W: Write>(log: &RunLog, w: W) -> Result<()> {
    write_csv(w, &trajectory_header(), &trajectory_rows(log))
}

pub fn lyapunov_header() -> Vec<String> {
    ["t", "v1", "v2_core", "integral_term", "v2", "h_min_eig"].map(String::from).to_vec()
}

pub fn write_lyapunov_csv<W: Write>(log: &RunLog, w: W) -> Result<()> {
    let rows: Vec<Vec<String>> = log
        .lyapunov
        .iter()
        .map(|l: &LyapunovTrace| [l.t, l.v1, l.v2_core, l.integral_term, log.v2(l), l.h_min_eig].map(fmt_f64).to_vec())
        .collect();
    write_csv(w, &lyapunov_header(), &rows)
}

/// Sidecar with terminal metrics and the certificate verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryFile {
    pub completed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
    pub steps: usize,
    pub t_final: f64,
    pub max_dx_inf: f64,
    pub terminal_dx_inf: f64,
    pub terminal_dx_o_inf: f64,
    pub settle_time: f64,
    pub max_dx_inf_after_settle: f64,
    pub max_dx_o_inf_after_settle: f64,
    pub initial_depth_rel_error: f64,
    pub terminal_depth_rel_error: f64,
    pub min_depth: f64,
    pub min_z_hat: f64,
    pub projection_active_steps: usize,
    pub gain_condition_holds: bool,
    pub v1_violations: usize,
    pub v1_max_increase: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v2_violations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v2_max_increase: Option<f64>,
    pub l_m: f64,
}

impl SummaryFile {
    pub fn from_log(log: &RunLog) -> Self {
        let s: &RunSummary = &log.summary;
        Self {
            completed: s.completed,
            fault: log.fault.as_ref().map(|e| e.to_string()),
            steps: s.steps,
            t_final: s.t_final,
            max_dx_inf: s.max_dx_inf,
            terminal_dx_inf: s.terminal_dx_inf,
            terminal_dx_o_inf: s.terminal_dx_o_inf,
            settle_time: s.settle_time,
            max_dx_inf_after_settle: s.max_dx_inf_after_settle,
            max_dx_o_inf_after_settle: s.max_dx_o_inf_after_settle,
            initial_depth_rel_error: s.initial_depth_rel_error,
            terminal_depth_rel_error: s.terminal_depth_rel_error,
            min_depth: s.min_depth,
            min_z_hat: s.min_z_hat,
            projection_active_steps: s.projection_active_steps,
            gain_condition_holds: log.certificate.condition_holds,
            v1_violations: s.v1_violations,
            v1_max_increase: s.v1_max_increase,
            v2_violations: s.v2_violations,
            v2_max_increase: s.v2_max_increase,
            l_m: s.l_m,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }
}

/// Names of the packed state entries, matching [`crate::sim::SimState::pack`].
pub fn state_names() -> Vec<String> {
    let mut n = Vec::with_capacity(STATE_DIM);
    let mut push = |name: &str, k: usize| n.extend((1..=k).map(|i| format!("{name}{i}")));
    push("q", 3);
    push("qdot", 3);
    push("x_o", 2);
    push("a_d_hat", N_DYN_PARAMS);
    push("a_z_hat", 3);
    push("a_z_perp_hat", 2);
    n.push("lyapunov_integral".into());
    n
}

/// Text of the fault snapshot, or `None` when the run had no fault.
pub fn fault_snapshot(log: &RunLog) -> Option<String> {
    match &log.fault {
        Some(Error::Fault { t, state, source }) => {
            let mut s = format!("t = {}\nerror = {:?}\n\n[state]\n", fmt_f64(*t), source.to_string());
            for (name, v) in state_names().iter().zip(state) {
                s.push_str(&format!("{name} = {}\n", toml_float(*v)));
            }
            Some(s)
        }
        Some(other) => Some(format!("error = {:?}\n", other.to_string())),
        None => None,
    }
}

fn toml_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        fmt_f64(v)
    }
}

/// Gnuplot script rendering tracking errors, observation errors, depth and
/// the Lyapunov monitors from the CSVs written next to it.
pub fn gnuplot_script() -> String {
    let h = trajectory_header();
    let col = |name: &str| h.iter().position(|c| c == name).expect("known column") + 1;
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set terminal pngcairo size 1200,900\n\
         set output 'run.png'\n\
         set multiplot layout 2,2\n\
         set xlabel 't [s]'\n\
         set title 'image tracking error [px]'\n\
         plot '{traj}' using 1:{dx1} with lines, '' using 1:{dx2} with lines\n\
         set title 'observation error [px]'\n\
         plot '{traj}' using 1:{dxo1} with lines, '' using 1:{dxo2} with lines\n\
         set title 'depth [m]'\n\
         plot '{traj}' using 1:{z} with lines, '' using 1:{zh} with lines\n\
         set title 'Lyapunov monitors'\n\
         plot '{lyap}' using 1:2 with lines, '' using 1:5 with lines\n\
         unset multiplot\n",
        traj = TRAJECTORY_CSV,
        lyap = LYAPUNOV_CSV,
        dx1 = col("dx1"),
        dx2 = col("dx2"),
        dxo1 = col("dx_o1"),
        dxo2 = col("dx_o2"),
        z = col("z"),
        zh = col("z_hat"),
    )
}

/// Writes all artifacts of one run into `dir`.
pub fn write_run_artifacts(log: &RunLog, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err)?;
    let file = |name: &str| std::fs::File::create(dir.join(name)).map(std::io::BufWriter::new).map_err(io_err);
    write_trajectory_csv(log, file(TRAJECTORY_CSV)?)?;
    write_lyapunov_csv(log, file(LYAPUNOV_CSV)?)?;
    std::fs::write(dir.join(SUMMARY_FILE), SummaryFile::from_log(log).to_toml()).map_err(io_err)?;
    std::fs::write(dir.join(PLOT_SCRIPT), gnuplot_script()).map_err(io_err)?;
    if let Some(snap) = fault_snapshot(log) {
        std::fs::write(dir.join(SNAPSHOT_FILE), snap).map_err(io_err)?;
    }
    Ok(())
}
