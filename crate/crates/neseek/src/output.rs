//! Plot-ready CSV and JSON emission. All numbers are written in full
//! double-precision scientific notation so identical runs produce
//! byte-identical files.

use std::fmt::Write as _;

use crate::error::Result;
use crate::sim::Trajectory;
use crate::switching::SwitchingSignal;

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// Columns: `t, mode, player, x_1..x_n, v_1..v_n, s_norm, eta, est_err`,
/// one row per (sample, player).
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.action_dim;
    let mut out = String::new();
    out.push_str("t,mode,player");
    for k in 1..=n {
        let _ = write!(out, ",x_{k}");
    }
    for k in 1..=n {
        let _ = write!(out, ",v_{k}");
    }
    out.push_str(",s_norm,eta,est_err\n");
    for (idx, &t) in traj.times.iter().enumerate() {
        for i in 0..traj.players {
            let _ = write!(out, "{},{},{}", fmt(t), traj.modes[idx], i + 1);
            for k in 0..n {
                let _ = write!(out, ",{}", fmt(traj.x[idx][i * n + k]));
            }
            for k in 0..n {
                let _ = write!(out, ",{}", fmt(traj.v[idx][i * n + k]));
            }
            let _ = write!(
                out,
                ",{},{},{}\n",
                fmt(traj.s_norm[idx][i]),
                fmt(traj.eta[idx][i]),
                fmt(traj.est_err[idx][i])
            );
        }
    }
    out
}

/// Event log columns: `t, player`.
pub fn events_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t,player\n");
    for &(t, p) in &traj.events {
        let _ = writeln!(out, "{},{p}", fmt(t));
    }
    out
}

/// Switching signal columns: `t_jump, mode`.
pub fn switching_csv(signal: &SwitchingSignal) -> String {
    let mut out = String::from("t_jump,mode\n");
    for (&t, &m) in signal.jump_times().iter().zip(signal.modes()) {
        let _ = writeln!(out, "{},{m}", fmt(t));
    }
    out
}

/// Pretty JSON with a trailing newline.
pub fn report_json<T: serde::Serialize>(report: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)
        .map_err(|e| crate::error::Error::Internal(format!("report serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}
