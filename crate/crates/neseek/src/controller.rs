//! Control laws for the two seeking algorithms: the nominal seeking input,
//! the supertwisting integral sliding-mode compensator, the average-consensus
//! tracker, and the (live or held/sampled, mode-switching) action-estimation
//! dynamics, plus their closed-loop composition.

use crate::error::{Error, Result};
use crate::game::GameDefinition;
use crate::linalg::{self, Mat};
use crate::topology::{eig_sym, Graph, JACOBI_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmVariant {
    Alg1,
    Alg2,
}

/// Optional smoothing of the non-smooth terms.
///
/// `Exact` keeps sgn / sig^{1/2} discontinuous, which is the faithful and
/// default setting. `Tanh` substitutes `tanh(z/nu)` for the sign factor and
/// exists only for comparative runs.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Smoothing {
    Exact,
    Tanh { nu: f64 },
}

impl Smoothing {
    #[inline]
    pub fn sgn(&self, z: f64) -> f64 {
        match *self {
            Smoothing::Exact => {
                if z > 0.0 {
                    1.0
                } else if z < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Smoothing::Tanh { nu } => (z / nu).tanh(),
        }
    }

    /// `sig^{1/2}(z) = sign(z) |z|^{1/2}` componentwise.
    #[inline]
    pub fn sig_half(&self, z: f64) -> f64 {
        z.abs().sqrt() * self.sgn(z)
    }
}

/// One sinusoid-plus-ramp disturbance component:
/// `A sin(f t + phase) + offset + slope t`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DisturbanceComponent {
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub slope: f64,
}

impl DisturbanceComponent {
    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * (self.frequency * t + self.phase).sin() + self.offset + self.slope * t
    }

    /// Analytic bound on `|d/dt|` for this family.
    pub fn derivative_bound(&self) -> f64 {
        (self.amplitude * self.frequency).abs() + self.slope.abs()
    }
}

/// Per-player, per-action-component external disturbance `omega_i(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSpec {
    components: Vec<Vec<DisturbanceComponent>>,
}

impl DisturbanceSpec {
    pub fn new(components: Vec<Vec<DisturbanceComponent>>) -> Self {
        DisturbanceSpec { components }
    }

    pub fn zero(players: usize, action_dim: usize) -> Self {
        DisturbanceSpec {
            components: vec![
                vec![
                    DisturbanceComponent {
                        amplitude: 0.0,
                        frequency: 0.0,
                        phase: 0.0,
                        offset: 0.0,
                        slope: 0.0,
                    };
                    action_dim
                ];
                players
            ],
        }
    }

    pub fn players(&self) -> usize {
        self.components.len()
    }

    pub fn evaluate_into(&self, i: usize, t: f64, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.components[i]) {
            *o = c.value(t);
        }
    }

    /// `||omega_dot_i||_inf`, computed analytically from the family.
    pub fn derivative_bound(&self, i: usize) -> f64 {
        self.components[i]
            .iter()
            .map(|c| c.derivative_bound())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().flatten().all(|c| {
            c.amplitude == 0.0 && c.offset == 0.0 && c.slope == 0.0
        })
    }
}

/// Linear uncertain dynamics `varrho_i(x) = G_i x` with one `n x (N n)` map
/// per player.
#[derive(Debug, Clone)]
pub struct UncertaintySpec {
    maps: Vec<Mat>,
}

impl UncertaintySpec {
    pub fn new(maps: Vec<Mat>, players: usize, action_dim: usize) -> Result<Self> {
        if maps.len() != players {
            return Err(Error::invalid_argument("need one uncertainty map per player"));
        }
        let dim = players * action_dim;
        if maps.iter().any(|m| m.rows() != action_dim || m.cols() != dim) {
            return Err(Error::invalid_argument(format!(
                "each uncertainty map must be {action_dim} x {dim}"
            )));
        }
        Ok(UncertaintySpec { maps })
    }

    pub fn evaluate_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let g = &self.maps[i];
        for (k, o) in out.iter_mut().enumerate() {
            *o = linalg::dot(g.row(k), x);
        }
    }

    /// Spectral norm of the stacked gradient `G = col(G_1, ..., G_N)`, the
    /// quantity the declared bound `g_tilde` must dominate.
    pub fn operator_norm(&self) -> Result<f64> {
        let dim = self.maps[0].cols();
        let rows: usize = self.maps.iter().map(|m| m.rows()).sum();
        let mut g = Mat::zeros(rows, dim);
        let mut r0 = 0;
        for m in &self.maps {
            for r in 0..m.rows() {
                for c in 0..dim {
                    g[(r0 + r, c)] = m[(r, c)];
                }
            }
            r0 += m.rows();
        }
        let gram = g.transpose().matmul(&g);
        let eig = eig_sym(&gram, JACOBI_TOL, false)?;
        Ok(eig.values.last().unwrap().max(0.0).sqrt())
    }
}

/// Estimation gain: per-player `k_{i4}` under continuous communication or a
/// per-mode `K(m)` under switching.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimationGain {
    PerPlayer(Vec<f64>),
    PerMode(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub k1: f64,
    pub k2: Vec<f64>,
    pub k3: Vec<f64>,
    pub k4: EstimationGain,
    pub alpha: f64,
    /// Singular-perturbation parameter of the fast estimation dynamics.
    pub epsilon: f64,
    pub g_tilde: f64,
}

impl GainSet {
    /// Validate against the game, disturbance and variant.
    ///
    /// Hard failures: the seeking-gain bound `0 < k1 < mu / max l_i^2`,
    /// nonpositive gains, and `k_{i3} <= ||omega_dot_i||_inf`. Returns
    /// warnings for conditions that are only checkable empirically
    /// (`alpha` versus the realized velocity rates is deferred to runtime;
    /// `g_tilde` versus the configured uncertainty norm is reported by the
    /// caller, which owns the uncertainty spec).
    pub fn validate(
        &self,
        game: &GameDefinition,
        disturbance: &DisturbanceSpec,
        variant: AlgorithmVariant,
    ) -> Result<Vec<String>> {
        let np = game.players();
        let bound = game.k1_upper_bound();
        if !(self.k1 > 0.0 && self.k1 < bound) {
            return Err(Error::invalid_config(format!(
                "k1 = {} violates 0 < k1 < mu/max(l)^2 = {bound:.6e}",
                self.k1
            )));
        }
        if self.k2.len() != np || self.k3.len() != np {
            return Err(Error::invalid_config("k2 and k3 need one entry per player"));
        }
        if self.k2.iter().any(|&k| k <= 0.0) {
            return Err(Error::invalid_config("all k2 must be > 0"));
        }
        for i in 0..np {
            let wdot = disturbance.derivative_bound(i);
            if self.k3[i] <= wdot {
                return Err(Error::invalid_config(format!(
                    "k3[{}] = {} must exceed ||omega_dot||_inf = {wdot}",
                    i + 1,
                    self.k3[i]
                )));
            }
        }
        match (&self.k4, variant) {
            (EstimationGain::PerPlayer(k4), AlgorithmVariant::Alg1) => {
                if k4.len() != np || k4.iter().any(|&k| k <= 0.0) {
                    return Err(Error::invalid_config("k4 needs a positive entry per player"));
                }
            }
            (EstimationGain::PerMode(k4), AlgorithmVariant::Alg2) => {
                if k4.is_empty() || k4.iter().any(|&k| k <= 0.0) {
                    return Err(Error::invalid_config("K(m) needs a positive entry per mode"));
                }
            }
            _ => {
                return Err(Error::invalid_config(
                    "estimation gain kind does not match the algorithm variant",
                ));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::invalid_config("epsilon must be > 0"));
        }
        if variant == AlgorithmVariant::Alg1 && self.alpha <= 0.0 {
            return Err(Error::invalid_config("alpha must be > 0"));
        }
        if variant == AlgorithmVariant::Alg1 && self.g_tilde < 0.0 {
            return Err(Error::invalid_config("g_tilde must be >= 0"));
        }
        Ok(vec![
            "alpha > sup||v_dot||_inf is not statically checkable; the realized bound is logged per run".into(),
        ])
    }
}

/// Read-only per-player view over the flat simulation state.
#[derive(Debug, Clone, Copy)]
pub struct PlayerState<'a> {
    /// Own action (n).
    pub x: &'a [f64],
    /// Velocity (n).
    pub v: &'a [f64],
    /// Supertwisting integral (n).
    pub phi: &'a [f64],
    /// Average-tracking integral.
    pub beta: f64,
    /// Running integral of the nominal input (n).
    pub u0_integral: &'a [f64],
    /// Velocity captured at simulation start (n).
    pub v0: &'a [f64],
    /// Own estimate of the full profile, player-major (N*n); the own block
    /// equals `x`.
    pub y: &'a [f64],
}

impl<'a> PlayerState<'a> {
    /// `s_i = v - v(0) - int u0`; zero at t = 0 by construction.
    pub fn sliding_into(&self, out: &mut [f64]) {
        for k in 0..out.len() {
            out[k] = self.v[k] - self.v0[k] - self.u0_integral[k];
        }
    }

    /// `eta_i = beta_i + ||v_i||`.
    pub fn eta(&self) -> f64 {
        self.beta + linalg::norm2(self.v)
    }
}

/// Nominal seeking input `u0_i = -k1 grad_i f_i(y^i) - v_i`, with the
/// gradient taken at the player's own estimate profile.
pub fn u_nominal(
    game: &GameDefinition,
    st: &PlayerState,
    i: usize,
    k1: f64,
    out: &mut [f64],
) {
    game.grad_into(i, st.y, out);
    for (o, v) in out.iter_mut().zip(st.v) {
        *o = -k1 * *o - v;
    }
}

/// Supertwisting compensator `u_r = -k2 sig^{1/2}(s) + phi`.
pub fn u_ismc(st: &PlayerState, k2: f64, smoothing: Smoothing, out: &mut [f64]) {
    let n = out.len();
    let mut s = [0.0; 8];
    debug_assert!(n <= 8, "action dimension larger than the scratch buffer");
    st.sliding_into(&mut s[..n]);
    for k in 0..n {
        out[k] = -k2 * smoothing.sig_half(s[k]) + st.phi[k];
    }
}

/// `phi_dot`. Under continuous estimation the uncertainty guard
/// `-g_tilde N eta sgn(s)` is included; under switching it is absent.
pub fn phi_derivative(
    st: &PlayerState,
    k3: f64,
    g_tilde: f64,
    n_players: usize,
    variant: AlgorithmVariant,
    smoothing: Smoothing,
    out: &mut [f64],
) {
    let n = out.len();
    let mut s = [0.0; 8];
    st.sliding_into(&mut s[..n]);
    let gain = match variant {
        AlgorithmVariant::Alg1 => k3 + g_tilde * n_players as f64 * st.eta(),
        AlgorithmVariant::Alg2 => k3,
    };
    for k in 0..n {
        out[k] = -gain * smoothing.sgn(s[k]);
    }
}

/// `beta_dot_i = -alpha sum_{j in N_i} sign(eta_i - eta_j)`.
pub fn beta_derivative(
    all_eta: &[f64],
    g: &Graph,
    i: usize,
    alpha: f64,
    smoothing: Smoothing,
) -> f64 {
    let mut acc = 0.0;
    for j in g.neighbors(i) {
        acc += smoothing.sgn(all_eta[i] - all_eta[j]);
    }
    -alpha * acc
}

/// Continuous estimation dynamics for estimate (i, j):
/// `y_dot^i_j = -(k4_i / eps) (sum_m a_im (y^i_j - y^m_j) + a_ij (y^i_j - x_j))`.
///
/// `y_all` is the stacked estimate matrix (i-major, then j, then component)
/// and `x` the live profile.
#[allow(clippy::too_many_arguments)]
pub fn estimation_derivative_alg1(
    y_all: &[f64],
    x: &[f64],
    g: &Graph,
    i: usize,
    j: usize,
    k4: f64,
    epsilon: f64,
    out: &mut [f64],
) {
    let np = g.node_count();
    let n = out.len();
    let yij = &y_all[(i * np + j) * n..(i * np + j + 1) * n];
    let aij = g.weight(i, j);
    for k in 0..n {
        out[k] = aij * (yij[k] - x[j * n + k]);
    }
    for m in 0..np {
        let aim = g.weight(i, m);
        if aim == 0.0 {
            continue;
        }
        let ymj = &y_all[(m * np + j) * n..(m * np + j + 1) * n];
        for k in 0..n {
            out[k] += aim * (yij[k] - ymj[k]);
        }
    }
    let scale = -k4 / epsilon;
    for o in out.iter_mut() {
        *o *= scale;
    }
}

/// Event-triggered, mode-switching estimation dynamics for estimate (i, j).
///
/// Uses only held broadcasts `held_y` (each row m frozen at player m's last
/// trigger) and the profile `sampled_x` frozen at the latest sampling
/// instant; weights and gain come from the currently active mode. Between
/// events the derivative is constant.
#[allow(clippy::too_many_arguments)]
pub fn estimation_derivative_alg2(
    held_y: &[f64],
    sampled_x: &[f64],
    g_mode: &Graph,
    k_mode: f64,
    i: usize,
    j: usize,
    epsilon: f64,
    out: &mut [f64],
) {
    estimation_derivative_alg1(held_y, sampled_x, g_mode, i, j, k_mode, epsilon, out);
}

/// Flat closed-loop state. Estimates are stacked player-major:
/// `y[(i*N + j)*n + k]` is component k of player i's estimate of player j.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub phi: Vec<f64>,
    pub beta: Vec<f64>,
    pub u0_int: Vec<f64>,
    pub y: Vec<f64>,
}

impl FullState {
    pub fn zeros(players: usize, action_dim: usize) -> Self {
        FullState {
            x: vec![0.0; players * action_dim],
            v: vec![0.0; players * action_dim],
            phi: vec![0.0; players * action_dim],
            beta: vec![0.0; players],
            u0_int: vec![0.0; players * action_dim],
            y: vec![0.0; players * players * action_dim],
        }
    }

    pub fn player<'a>(&'a self, i: usize, n: usize, players: usize, v0: &'a [f64]) -> PlayerState<'a> {
        PlayerState {
            x: &self.x[i * n..(i + 1) * n],
            v: &self.v[i * n..(i + 1) * n],
            phi: &self.phi[i * n..(i + 1) * n],
            beta: self.beta[i],
            u0_integral: &self.u0_int[i * n..(i + 1) * n],
            v0: &v0[i * n..(i + 1) * n],
            y: &self.y[i * players * n..(i + 1) * players * n],
        }
    }

    /// Re-pin each player's own estimate row to its action. Called after
    /// every integration step.
    pub fn pin_own_estimates(&mut self, players: usize, n: usize) {
        for i in 0..players {
            let src = i * n;
            let dst = (i * players + i) * n;
            for k in 0..n {
                self.y[dst + k] = self.x[src + k];
            }
        }
    }

    fn first_nonfinite(&self, n: usize, players: usize) -> Option<(usize, &'static str)> {
        let scan = |v: &[f64], per: usize, term: &'static str| {
            v.iter()
                .position(|x| !x.is_finite())
                .map(|p| (p / per % players + 1, term))
        };
        scan(&self.x, n, "x")
            .or_else(|| scan(&self.v, n, "v"))
            .or_else(|| scan(&self.phi, n, "phi"))
            .or_else(|| scan(&self.beta, 1, "beta"))
            .or_else(|| scan(&self.u0_int, n, "u0_integral"))
            .or_else(|| {
                self.y
                    .iter()
                    .position(|x| !x.is_finite())
                    .map(|p| (p / (players * n) + 1, "y"))
            })
    }
}

/// Static inputs of one closed-loop derivative evaluation.
pub struct ControlContext<'a> {
    pub game: &'a GameDefinition,
    pub gains: &'a GainSet,
    pub disturbance: &'a DisturbanceSpec,
    pub uncertainty: Option<&'a UncertaintySpec>,
    /// Communication graph for the average-tracking consensus and, under
    /// continuous estimation, for the estimation dynamics.
    pub graph: &'a Graph,
    pub smoothing: Smoothing,
    /// Velocities captured at simulation start.
    pub v0: &'a [f64],
}

/// What the estimation dynamics read.
pub enum EstimationMode<'a> {
    /// Live estimates and actions (continuous communication).
    Live,
    /// Held broadcasts and the profile sampled at the latest grid instant,
    /// fused with the active mode's weights and gain.
    HeldSampled {
        held_y: &'a [f64],
        sampled_x: &'a [f64],
        graph: &'a Graph,
        k4: f64,
    },
}

/// Reusable per-player scratch so the derivative stays allocation-free in
/// the integration loop.
#[derive(Debug, Clone)]
pub struct DeriveScratch {
    u0: Vec<f64>,
    ur: Vec<f64>,
    w: Vec<f64>,
    rho: Vec<f64>,
}

impl DeriveScratch {
    pub fn new(action_dim: usize) -> Self {
        DeriveScratch {
            u0: vec![0.0; action_dim],
            ur: vec![0.0; action_dim],
            w: vec![0.0; action_dim],
            rho: vec![0.0; action_dim],
        }
    }
}

/// Assemble the full right-hand side of the closed loop into `out`.
///
/// The own-estimate rows get `x_dot_i = v_i` so a forward step preserves the
/// pinning invariant to first order; the integrator re-pins exactly afterward.
pub fn closed_loop_derivative(
    ctx: &ControlContext,
    st: &FullState,
    t: f64,
    variant: AlgorithmVariant,
    est: &EstimationMode,
    scratch: &mut DeriveScratch,
    out: &mut FullState,
) -> Result<()> {
    let np = ctx.game.players();
    let n = ctx.game.action_dim();
    debug_assert_eq!(st.x.len(), np * n);

    if let Some((player, term)) = st.first_nonfinite(n, np) {
        return Err(Error::NumericalBlowup {
            t,
            player,
            term: term.into(),
        });
    }

    let mut eta = [0.0; 64];
    debug_assert!(np <= 64);
    for i in 0..np {
        eta[i] = st.player(i, n, np, ctx.v0).eta();
    }

    let DeriveScratch { u0, ur, w, rho } = scratch;
    for i in 0..np {
        let ps = st.player(i, n, np, ctx.v0);
        u_nominal(ctx.game, &ps, i, ctx.gains.k1, u0);
        u_ismc(&ps, ctx.gains.k2[i], ctx.smoothing, ur);
        ctx.disturbance.evaluate_into(i, t, w);
        match (variant, ctx.uncertainty) {
            (AlgorithmVariant::Alg1, Some(unc)) => unc.evaluate_into(i, &st.x, rho),
            _ => rho.iter_mut().for_each(|r| *r = 0.0),
        }

        let base = i * n;
        for k in 0..n {
            out.x[base + k] = st.v[base + k];
            out.v[base + k] = u0[k] + ur[k] + w[k] + rho[k];
            out.u0_int[base + k] = u0[k];
        }
        phi_derivative(
            &ps,
            ctx.gains.k3[i],
            ctx.gains.g_tilde,
            np,
            variant,
            ctx.smoothing,
            &mut out.phi[base..base + n],
        );
        out.beta[i] = match variant {
            AlgorithmVariant::Alg1 => {
                beta_derivative(&eta[..np], ctx.graph, i, ctx.gains.alpha, ctx.smoothing)
            }
            AlgorithmVariant::Alg2 => 0.0,
        };
    }

    for i in 0..np {
        for j in 0..np {
            let base = (i * np + j) * n;
            if i == j {
                out.y[base..base + n].copy_from_slice(&st.v[i * n..(i + 1) * n]);
                continue;
            }
            let slot = &mut out.y[base..base + n];
            match est {
                EstimationMode::Live => {
                    let k4 = match &ctx.gains.k4 {
                        EstimationGain::PerPlayer(k) => k[i],
                        EstimationGain::PerMode(_) => {
                            return Err(Error::Internal(
                                "live estimation requires per-player gains".into(),
                            ))
                        }
                    };
                    estimation_derivative_alg1(
                        &st.y,
                        &st.x,
                        ctx.graph,
                        i,
                        j,
                        k4,
                        ctx.gains.epsilon,
                        slot,
                    );
                }
                EstimationMode::HeldSampled {
                    held_y,
                    sampled_x,
                    graph,
                    k4,
                } => {
                    estimation_derivative_alg2(
                        held_y,
                        sampled_x,
                        graph,
                        *k4,
                        i,
                        j,
                        ctx.gains.epsilon,
                        slot,
                    );
                }
            }
        }
    }
    Ok(())
}
