//! Sampled-data event-triggered broadcasting: per-player trigger-state
//! bookkeeping, the z/e/delta measurement quantities, and the quadratic
//! trigger test.
//!
//! Trigger evaluation happens only on the sampling grid `{0, h, 2h, ...}`,
//! so two events of one player are always at least `h` apart and Zeno
//! behavior is excluded by construction. Grid instants are carried as the
//! integer `q` with `t = q h` computed on demand, so long horizons cannot
//! drift off the grid.
//!
//! Stacking convention, frozen here and reused by the stability machinery:
//! each per-player measurement vector is stacked estimate-major
//! (`col(v_{i1}, ..., v_{iN})`, each block of length n), and the weight `Phi`
//! is an N x N matrix over estimate indices applied per action component,
//! i.e. the quadratic form is `v' (Phi ⊗ I_n) v`.
//!
//! The z-vector applies the weights of the mode active at the current
//! sampling instant to held values from (possibly) older trigger epochs;
//! when the topology switched in between, current weights deliberately meet
//! old data. That is the literal reading of the trigger rule and is kept.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::topology::{eig_sym, Graph, JACOBI_TOL};

/// Static trigger parameters.
#[derive(Debug, Clone)]
pub struct TriggerConfig {
    /// Sampling period.
    pub h: f64,
    /// Per-player thresholds, all > 0.
    pub zeta: Vec<f64>,
    /// N x N symmetric positive definite weight over estimate indices.
    pub phi: Mat,
}

impl TriggerConfig {
    pub fn validate(&self, players: usize) -> Result<()> {
        if self.h <= 0.0 || !self.h.is_finite() {
            return Err(Error::invalid_config("sampling period h must be > 0"));
        }
        if self.zeta.len() != players {
            return Err(Error::invalid_config("need one zeta per player"));
        }
        if self.zeta.iter().any(|&z| z <= 0.0) {
            return Err(Error::invalid_config("all zeta must be > 0"));
        }
        if self.phi.rows() != players || self.phi.cols() != players {
            return Err(Error::invalid_config("Phi must be N x N"));
        }
        let eig = eig_sym(&self.phi, JACOBI_TOL, false)
            .map_err(|e| Error::invalid_config(format!("Phi: {e}")))?;
        if eig.values[0] <= 1e-10 {
            return Err(Error::invalid_config(format!(
                "Phi must be positive definite (min eigenvalue {:.3e})",
                eig.values[0]
            )));
        }
        Ok(())
    }
}

/// Per-player broadcast bookkeeping.
///
/// At construction (t = 0) every player counts as having just triggered,
/// holding its initial estimate row; measurement vectors therefore always
/// have held values to read.
#[derive(Debug, Clone)]
pub struct TriggerState {
    config: TriggerConfig,
    players: usize,
    action_dim: usize,
    /// Grid index of each player's last trigger.
    last_trigger: Vec<u64>,
    /// Held broadcast rows, stacked like the live estimate matrix.
    held_y: Vec<f64>,
    /// Ascending trigger grid indices per player.
    events: Vec<Vec<u64>>,
    last_instant: u64,
}

impl TriggerState {
    pub fn new(
        config: TriggerConfig,
        initial_y: &[f64],
        players: usize,
        action_dim: usize,
    ) -> Result<Self> {
        config.validate(players)?;
        if initial_y.len() != players * players * action_dim {
            return Err(Error::invalid_argument("initial estimate stack has wrong length"));
        }
        Ok(TriggerState {
            config,
            players,
            action_dim,
            last_trigger: vec![0; players],
            held_y: initial_y.to_vec(),
            events: vec![vec![0]; players],
            last_instant: 0,
        })
    }

    pub fn config(&self) -> &TriggerConfig {
        &self.config
    }

    /// Held broadcast stack `y^m(t_k^m)`, row m frozen at player m's last
    /// trigger.
    pub fn held_y(&self) -> &[f64] {
        &self.held_y
    }

    pub fn last_trigger_instant(&self, i: usize) -> u64 {
        self.last_trigger[i]
    }

    pub fn last_trigger_time(&self, i: usize) -> f64 {
        self.last_trigger[i] as f64 * self.config.h
    }

    /// Ascending trigger grid indices per player (every player has 0).
    pub fn events(&self) -> &[Vec<u64>] {
        &self.events
    }

    pub fn event_times(&self, i: usize) -> Vec<f64> {
        self.events[i].iter().map(|&q| q as f64 * self.config.h).collect()
    }
}

/// The three per-player measurement stacks of the trigger rule, estimate-major.
#[derive(Debug, Clone)]
pub struct MeasurementVectors {
    /// Fused neighborhood mismatch of held broadcasts against the sampled
    /// leader signal.
    pub z: Vec<f64>,
    /// Held-minus-live drift of the own broadcast.
    pub e: Vec<f64>,
    /// Live estimate error against the sampled profile.
    pub delta: Vec<f64>,
}

/// Evaluate z_i, e_i, delta_i for player `i` at a sampling instant.
///
/// `live_y` is the full live estimate stack, `sampled_x` the profile frozen
/// at this instant, and `g_mode` the currently active topology.
pub fn measurement_vectors(
    ts: &TriggerState,
    live_y: &[f64],
    sampled_x: &[f64],
    g_mode: &Graph,
    i: usize,
) -> Result<MeasurementVectors> {
    let np = ts.players;
    let n = ts.action_dim;
    if g_mode.node_count() != np {
        return Err(Error::invalid_argument("mode graph has wrong node count"));
    }
    if live_y.len() != np * np * n || sampled_x.len() != np * n {
        return Err(Error::invalid_argument("measurement input dimension mismatch"));
    }
    let held = &ts.held_y;
    let mut z = vec![0.0; np * n];
    let mut e = vec![0.0; np * n];
    let mut delta = vec![0.0; np * n];
    for j in 0..np {
        let hij = &held[(i * np + j) * n..(i * np + j + 1) * n];
        let lij = &live_y[(i * np + j) * n..(i * np + j + 1) * n];
        let xj = &sampled_x[j * n..(j + 1) * n];
        let aij = g_mode.weight(i, j);
        for k in 0..n {
            e[j * n + k] = hij[k] - lij[k];
            delta[j * n + k] = lij[k] - xj[k];
            z[j * n + k] = aij * (hij[k] - xj[k]);
        }
        for m in 0..np {
            let aim = g_mode.weight(i, m);
            if aim == 0.0 {
                continue;
            }
            let hmj = &held[(m * np + j) * n..(m * np + j + 1) * n];
            for k in 0..n {
                z[j * n + k] += aim * (hij[k] - hmj[k]);
            }
        }
    }
    Ok(MeasurementVectors { z, e, delta })
}

/// Quadratic form `v' (Phi ⊗ I_n) v` on an estimate-major stack.
fn weighted_quadratic(v: &[f64], phi: &Mat, n: usize) -> f64 {
    let np = phi.rows();
    let mut acc = 0.0;
    for a in 0..np {
        for b in 0..np {
            let w = phi[(a, b)];
            if w == 0.0 {
                continue;
            }
            let mut dot = 0.0;
            for k in 0..n {
                dot += v[a * n + k] * v[b * n + k];
            }
            acc += w * dot;
        }
    }
    acc
}

/// The trigger test: broadcast iff `e' Phi e > zeta_i z' Phi z` in the
/// weighting above. Exact consensus (both sides zero) stays silent.
pub fn should_trigger(e: &[f64], z: &[f64], phi: &Mat, zeta_i: f64, action_dim: usize) -> bool {
    weighted_quadratic(e, phi, action_dim) > zeta_i * weighted_quadratic(z, phi, action_dim)
}

/// Process sampling instant `q`: evaluate the trigger test for every player
/// against the pre-instant held values, then commit all triggered broadcasts
/// simultaneously. Returns the 0-based broadcast set.
pub fn advance_sampling_instant(
    ts: &mut TriggerState,
    live_y: &[f64],
    sampled_x: &[f64],
    g_mode: &Graph,
    q: u64,
) -> Result<Vec<usize>> {
    if q <= ts.last_instant {
        return Err(Error::Internal(format!(
            "sampling instants must advance (got q = {q} after {})",
            ts.last_instant
        )));
    }
    ts.last_instant = q;
    let np = ts.players;
    let n = ts.action_dim;
    let mut broadcast = Vec::new();
    for i in 0..np {
        let mv = measurement_vectors(ts, live_y, sampled_x, g_mode, i)?;
        if should_trigger(&mv.e, &mv.z, &ts.config.phi, ts.config.zeta[i], n) {
            broadcast.push(i);
        }
    }
    for &i in &broadcast {
        ts.last_trigger[i] = q;
        ts.events[i].push(q);
        let base = i * np * n;
        ts.held_y[base..base + np * n].copy_from_slice(&live_y[base..base + np * n]);
    }
    Ok(broadcast)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_two_node() -> (TriggerState, Graph) {
        let g = Graph::from_edges(2, &[(1, 2, 1.0)]).unwrap();
        let cfg = TriggerConfig {
            h: 0.1,
            zeta: vec![0.25, 0.25],
            phi: Mat::identity(2),
        };
        // Initial estimates: y^1 = (x_1, 1), y^2 = (0, x_2) with x = 0.
        let ts = TriggerState::new(cfg, &[0.0, 1.0, 0.0, 0.0], 2, 1).unwrap();
        (ts, g)
    }

    #[test]
    fn everyone_triggers_at_time_zero_by_convention() {
        let (ts, _) = scalar_two_node();
        assert_eq!(ts.events()[0], vec![0]);
        assert_eq!(ts.events()[1], vec![0]);
        assert_eq!(ts.last_trigger_time(0), 0.0);
    }

    #[test]
    fn hand_expanded_two_node_case() {
        // Held y^1_2 = 1, live y^1_2 = 0.5, x_2 = 0, held y^2_2 = 0:
        // e_12 = 0.5, delta_12 = 0.5, z_12 = (1 - 0) + 1 * (1 - 0) = 2.
        let (ts, g) = scalar_two_node();
        let live = [0.0, 0.5, 0.0, 0.0];
        let x = [0.0, 0.0];
        let mv = measurement_vectors(&ts, &live, &x, &g, 0).unwrap();
        assert_eq!(mv.e[1], 0.5);
        assert_eq!(mv.delta[1], 0.5);
        assert_eq!(mv.z[1], 2.0);
    }

    #[test]
    fn immediately_after_trigger_e_is_zero() {
        let (mut ts, g) = scalar_two_node();
        let live = [0.3, 0.8, -0.2, 0.1];
        let x = [0.3, 0.1];
        let fired = advance_sampling_instant(&mut ts, &live, &x, &g, 1).unwrap();
        assert!(!fired.is_empty());
        for &i in &fired {
            let mv = measurement_vectors(&ts, &live, &x, &g, i).unwrap();
            assert!(mv.e.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn consensus_state_is_silent() {
        let (mut ts, g) = scalar_two_node();
        // All held and live values equal to the true sampled profile.
        let x = [0.7, -0.4];
        let consensus = [0.7, -0.4, 0.7, -0.4];
        ts.held_y.copy_from_slice(&consensus);
        for i in 0..2 {
            let mv = measurement_vectors(&ts, &consensus, &x, &g, i).unwrap();
            assert!(mv.z.iter().all(|&v| v == 0.0));
            assert!(mv.delta.iter().all(|&v| v == 0.0));
            assert!(!should_trigger(&mv.e, &mv.z, &ts.config.phi, 0.25, 1));
        }
        let fired = advance_sampling_instant(&mut ts, &consensus, &x, &g, 1).unwrap();
        assert!(fired.is_empty());
    }

    #[test]
    fn trigger_test_arithmetic() {
        let phi = Mat::identity(4);
        let e0 = vec![0.0; 4];
        let z = vec![2.0, 0.0, 0.0, 0.0];
        assert!(!should_trigger(&e0, &z, &phi, 0.25, 1)); // 0 > positive is false
        assert!(!should_trigger(&e0, &[0.0; 4], &phi, 0.25, 1)); // 0 > 0 is false
        let e = vec![1.0, 0.0, 0.0, 0.0]; // ||e||^2 = 1
        let z16 = vec![4.0, 0.0, 0.0, 0.0]; // ||z||^2 = 16
        assert!(!should_trigger(&e, &z16, &phi, 0.25, 1)); // 1 > 4 false
        let z2 = vec![2.0f64.sqrt(), 0.0, 0.0, 0.0]; // ||z||^2 = 2
        assert!(should_trigger(&e, &z2, &phi, 0.25, 1)); // 1 > 0.5 true
    }

    #[test]
    fn weighting_applies_phi_across_estimate_indices() {
        // Phi = [[1, 0.5], [0.5, 1]], n = 2: e' (Phi ⊗ I_2) e mixes blocks.
        let mut phi = Mat::identity(2);
        phi[(0, 1)] = 0.5;
        phi[(1, 0)] = 0.5;
        let e = [1.0, 2.0, 3.0, 4.0];
        let expect = (1.0 + 4.0) + (9.0 + 16.0) + 2.0 * 0.5 * (3.0 + 8.0);
        assert!((weighted_quadratic(&e, &phi, 2) - expect).abs() < 1e-14);
    }

    #[test]
    fn non_pd_phi_rejected_at_load() {
        let cfg = TriggerConfig {
            h: 0.1,
            zeta: vec![0.1, 0.1],
            phi: Mat::diag(&[1.0, 0.0]),
        };
        assert!(cfg.validate(2).is_err());
        let cfg = TriggerConfig {
            h: 0.1,
            zeta: vec![0.1, -0.1],
            phi: Mat::identity(2),
        };
        assert!(cfg.validate(2).is_err());
    }

    #[test]
    fn sampling_instants_must_advance() {
        let (mut ts, g) = scalar_two_node();
        let live = [0.0, 1.0, 0.0, 0.0];
        let x = [0.0, 0.0];
        advance_sampling_instant(&mut ts, &live, &x, &g, 1).unwrap();
        assert!(advance_sampling_instant(&mut ts, &live, &x, &g, 1).is_err());
        advance_sampling_instant(&mut ts, &live, &x, &g, 2).unwrap();
    }

    #[test]
    fn held_values_update_only_for_broadcasters() {
        let (mut ts, g) = scalar_two_node();
        // Player 1's live row drifted; player 2 is already consistent.
        let live = [0.0, 0.4, 0.0, 0.0];
        let x = [0.0, 0.0];
        let fired = advance_sampling_instant(&mut ts, &live, &x, &g, 1).unwrap();
        assert_eq!(fired, vec![0]);
        assert_eq!(&ts.held_y()[0..2], &[0.0, 0.4]);
        assert_eq!(&ts.held_y()[2..4], &[0.0, 0.0]);
        assert_eq!(ts.last_trigger_instant(0), 1);
        assert_eq!(ts.last_trigger_instant(1), 0);
    }
}
