//! Noncooperative games: cost/gradient evaluation, the stacked
//! pseudo-gradient, an independent Nash-equilibrium solver, and sampled
//! strong-monotonicity checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

/// Stacked action profile `col(x_1, ..., x_N)`, player-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionProfile(Vec<f64>);

impl ActionProfile {
    pub fn new(x: Vec<f64>) -> Self {
        ActionProfile(x)
    }

    pub fn zeros(dim: usize) -> Self {
        ActionProfile(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Player `i`'s block (0-based) for action dimension `n`.
    pub fn player_block(&self, i: usize, n: usize) -> &[f64] {
        &self.0[i * n..(i + 1) * n]
    }
}

impl std::ops::Deref for ActionProfile {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A noncooperative game with `players` cost functions over actions in R^n.
///
/// `mu` is the declared strong-monotonicity modulus of the pseudo-gradient
/// and `lipschitz[i]` the declared Lipschitz modulus of player i's partial
/// gradient. Both are spot-checked by sampling, not proved.
#[derive(Debug, Clone)]
pub struct GameDefinition {
    players: usize,
    action_dim: usize,
    mu: f64,
    lipschitz: Vec<f64>,
    kind: GameKind,
}

#[derive(Debug, Clone)]
enum GameKind {
    /// `J_i = ||x_i||^2 + c_i' x_i + sin(x_i1) + sum_j ||x_i - x_j||^2`.
    Connectivity { c: Vec<[f64; 2]> },
    /// `f_i = 0.5 x' Q_i x + c_i' x` with `Q_i` symmetrized at load.
    Quadratic { q: Vec<Mat>, c: Vec<Vec<f64>> },
}

impl GameDefinition {
    /// The connectivity-control game: each of `N = c.len()` vehicles picks a
    /// planar position, trading a private objective against staying close to
    /// the group.
    pub fn connectivity(c: Vec<[f64; 2]>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::invalid_argument(
                "connectivity game needs at least one player",
            ));
        }
        let players = c.len();
        Ok(GameDefinition {
            players,
            action_dim: 2,
            mu: 2.0,
            lipschitz: vec![22.0; players],
            kind: GameKind::Connectivity { c },
        })
    }

    pub fn quadratic(
        q: Vec<Mat>,
        c: Vec<Vec<f64>>,
        action_dim: usize,
        mu: f64,
        lipschitz: Vec<f64>,
    ) -> Result<Self> {
        let players = q.len();
        if players == 0 {
            return Err(Error::invalid_argument("quadratic game needs players"));
        }
        if action_dim == 0 {
            return Err(Error::invalid_argument("action dimension must be >= 1"));
        }
        let dim = players * action_dim;
        if c.len() != players || lipschitz.len() != players {
            return Err(Error::invalid_argument(
                "quadratic game needs one Q, c and lipschitz entry per player",
            ));
        }
        if q.iter().any(|m| m.rows() != dim || m.cols() != dim) {
            return Err(Error::invalid_argument(format!(
                "each Q_i must be {dim}x{dim}"
            )));
        }
        if c.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid_argument(format!("each c_i must have length {dim}")));
        }
        if mu <= 0.0 || lipschitz.iter().any(|&l| l <= 0.0) {
            return Err(Error::invalid_argument("mu and lipschitz moduli must be > 0"));
        }
        let q = q.into_iter().map(|m| m.symmetrized()).collect();
        Ok(GameDefinition {
            players,
            action_dim,
            mu,
            lipschitz,
            kind: GameKind::Quadratic { q, c },
        })
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// `N * n`, the length of a stacked profile.
    pub fn profile_dim(&self) -> usize {
        self.players * self.action_dim
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lipschitz(&self) -> &[f64] {
        &self.lipschitz
    }

    /// Upper bound `mu / max_i l_i^2` on the seeking gain.
    pub fn k1_upper_bound(&self) -> f64 {
        let lmax = self.lipschitz.iter().cloned().fold(f64::MIN, f64::max);
        self.mu / (lmax * lmax)
    }

    fn check_profile(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.profile_dim() {
            return Err(Error::invalid_argument(format!(
                "profile length {} != N*n = {}",
                x.len(),
                self.profile_dim()
            )));
        }
        Ok(())
    }

    pub fn cost(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_profile(x)?;
        let n = self.action_dim;
        Ok(match &self.kind {
            GameKind::Connectivity { c } => {
                let xi = &x[i * n..(i + 1) * n];
                let mut cost = linalg::dot(xi, xi) + linalg::dot(&c[i], xi) + xi[0].sin();
                for j in 0..self.players {
                    let xj = &x[j * n..(j + 1) * n];
                    cost += (xi[0] - xj[0]).powi(2) + (xi[1] - xj[1]).powi(2);
                }
                cost
            }
            GameKind::Quadratic { q, c } => {
                0.5 * linalg::dot(&q[i].matvec(x), x) + linalg::dot(&c[i], x)
            }
        })
    }

    /// Partial gradient of player i's cost with respect to its own action,
    /// written into `out` (length n).
    pub fn grad_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.profile_dim());
        debug_assert_eq!(out.len(), self.action_dim);
        let n = self.action_dim;
        match &self.kind {
            GameKind::Connectivity { c } => {
                let xi = &x[i * n..(i + 1) * n];
                let mut s0 = 0.0;
                let mut s1 = 0.0;
                for j in 0..self.players {
                    s0 += x[j * n];
                    s1 += x[j * n + 1];
                }
                let np = self.players as f64;
                out[0] = 2.0 * xi[0] + c[i][0] + xi[0].cos() + 2.0 * (np * xi[0] - s0);
                out[1] = 2.0 * xi[1] + c[i][1] + 2.0 * (np * xi[1] - s1);
            }
            GameKind::Quadratic { q, c } => {
                let qi = &q[i];
                for (k, o) in out.iter_mut().enumerate() {
                    let row = qi.row(i * n + k);
                    *o = linalg::dot(row, x) + c[i][i * n + k];
                }
            }
        }
    }

    pub fn grad(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_profile(x)?;
        let mut out = vec![0.0; self.action_dim];
        self.grad_into(i, x, &mut out);
        Ok(out)
    }
}

/// Stacked pseudo-gradient `F(x) = col(grad_1, ..., grad_N)`.
pub fn pseudo_gradient(game: &GameDefinition, x: &ActionProfile) -> Result<Vec<f64>> {
    game.check_profile(x)?;
    let mut out = vec![0.0; game.profile_dim()];
    pseudo_gradient_into(game, x, &mut out);
    Ok(out)
}

pub(crate) fn pseudo_gradient_into(game: &GameDefinition, x: &[f64], out: &mut [f64]) {
    let n = game.action_dim();
    for i in 0..game.players() {
        game.grad_into(i, x, &mut out[i * n..(i + 1) * n]);
    }
}

/// The connectivity-control fixture with private offsets `c`.
pub fn connectivity_game(c: Vec<[f64; 2]>) -> Result<GameDefinition> {
    GameDefinition::connectivity(c)
}

const NEWTON_FD_STEP: f64 = 1e-6;

/// Find `x` with `||F(x)|| <= tol` by damped Newton iteration on the
/// pseudo-gradient with a central finite-difference Jacobian, falling back to
/// fixed-step gradient flow `x <- x - gamma F(x)`, `gamma = mu / max l_i^2`,
/// whenever a Newton step stalls.
pub fn solve_ne(
    game: &GameDefinition,
    x0: &ActionProfile,
    tol: f64,
    max_iter: usize,
) -> Result<ActionProfile> {
    game.check_profile(x0)?;
    if tol <= 0.0 {
        return Err(Error::invalid_argument("solve_ne tolerance must be > 0"));
    }
    let dim = game.profile_dim();
    let gamma = game.k1_upper_bound();
    let mut x = x0.as_slice().to_vec();
    let mut fx = vec![0.0; dim];
    pseudo_gradient_into(game, &x, &mut fx);
    let mut res = linalg::norm2(&fx);

    for _ in 0..max_iter {
        if res <= tol {
            return Ok(ActionProfile::new(x));
        }
        let jac = fd_jacobian(game, &x);
        let rhs: Vec<f64> = fx.iter().map(|v| -v).collect();
        let mut advanced = false;
        if let Ok(step) = jac.solve(&rhs) {
            // Backtracking line search on the residual norm.
            let mut lambda = 1.0;
            for _ in 0..40 {
                let trial: Vec<f64> =
                    x.iter().zip(&step).map(|(xi, di)| xi + lambda * di).collect();
                let mut ftrial = vec![0.0; dim];
                pseudo_gradient_into(game, &trial, &mut ftrial);
                let rtrial = linalg::norm2(&ftrial);
                if rtrial < res * (1.0 - 1e-4 * lambda) {
                    x = trial;
                    fx = ftrial;
                    res = rtrial;
                    advanced = true;
                    break;
                }
                lambda *= 0.5;
            }
        }
        if !advanced {
            for (xi, fi) in x.iter_mut().zip(&fx) {
                *xi -= gamma * fi;
            }
            pseudo_gradient_into(game, &x, &mut fx);
            res = linalg::norm2(&fx);
        }
    }
    if res <= tol {
        return Ok(ActionProfile::new(x));
    }
    Err(Error::ConvergenceFailure {
        context: "solve_ne".into(),
        residual: res,
        iterations: max_iter,
    })
}

fn fd_jacobian(game: &GameDefinition, x: &[f64]) -> Mat {
    let dim = x.len();
    let mut jac = Mat::zeros(dim, dim);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; dim];
    let mut fm = vec![0.0; dim];
    for k in 0..dim {
        let h = NEWTON_FD_STEP;
        xp[k] = x[k] + h;
        pseudo_gradient_into(game, &xp, &mut fp);
        xp[k] = x[k] - h;
        pseudo_gradient_into(game, &xp, &mut fm);
        xp[k] = x[k];
        for r in 0..dim {
            jac[(r, k)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

pub const MONOTONICITY_BOX_HALF_WIDTH: f64 = 10.0;

#[derive(Debug, Clone, serde::Serialize)]
pub struct MonotonicityReport {
    pub min_ratio: f64,
    pub pass: bool,
    pub samples: usize,
}

/// Sample pairs uniformly in `[-box, box]^{Nn}` and report the minimal
/// observed ratio `(x-y)'(F(x)-F(y)) / ||x-y||^2` against the declared `mu`.
pub fn check_strong_monotonicity(
    game: &GameDefinition,
    n_samples: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    check_strong_monotonicity_in_box(game, n_samples, seed, MONOTONICITY_BOX_HALF_WIDTH)
}

pub fn check_strong_monotonicity_in_box(
    game: &GameDefinition,
    n_samples: usize,
    seed: u64,
    half_width: f64,
) -> Result<MonotonicityReport> {
    if n_samples == 0 {
        return Err(Error::invalid_argument("n_samples must be >= 1"));
    }
    let dim = game.profile_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-half_width..half_width)).collect()
    };
    let mut fx = vec![0.0; dim];
    let mut fy = vec![0.0; dim];
    let mut min_ratio = f64::INFINITY;
    for _ in 0..n_samples {
        let x = draw(&mut rng);
        // A coincident pair has no defined ratio; resample.
        let y = loop {
            let y = draw(&mut rng);
            if y != x {
                break y;
            }
        };
        pseudo_gradient_into(game, &x, &mut fx);
        pseudo_gradient_into(game, &y, &mut fy);
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..dim {
            let d = x[k] - y[k];
            num += d * (fx[k] - fy[k]);
            den += d * d;
        }
        min_ratio = min_ratio.min(num / den);
    }
    Ok(MonotonicityReport {
        min_ratio,
        pass: min_ratio >= game.mu() - 1e-9,
        samples: n_samples,
    })
}

/// Largest sampled ratio `||grad_i(x) - grad_i(y)|| / ||x - y||` over all
/// players; an empirical companion to the declared Lipschitz moduli.
pub fn measure_lipschitz(game: &GameDefinition, n_samples: usize, seed: u64) -> f64 {
    let dim = game.profile_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let dxy = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dxy == 0.0 {
            continue;
        }
        for i in 0..game.players() {
            let gx = game.grad(i, &x).unwrap();
            let gy = game.grad(i, &y).unwrap();
            let dg = gx
                .iter()
                .zip(&gy)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(dg / dxy);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn benchmark_game() -> GameDefinition {
        GameDefinition::connectivity(fixtures::benchmark_c()).unwrap()
    }

    /// Central finite differences of the cost in player i's own block.
    fn fd_grad(game: &GameDefinition, i: usize, x: &[f64], step: f64) -> Vec<f64> {
        let n = game.action_dim();
        let mut out = vec![0.0; n];
        let mut xp = x.to_vec();
        for k in 0..n {
            let idx = i * n + k;
            xp[idx] = x[idx] + step;
            let up = game.cost(i, &xp).unwrap();
            xp[idx] = x[idx] - step;
            let dn = game.cost(i, &xp).unwrap();
            xp[idx] = x[idx];
            out[k] = (up - dn) / (2.0 * step);
        }
        out
    }

    #[test]
    fn pseudo_gradient_at_origin() {
        let game = benchmark_game();
        let x = ActionProfile::zeros(12);
        let f = pseudo_gradient(&game, &x).unwrap();
        // Block 1 at the origin: c_1 + (cos 0, 0) = (2, 2).
        assert!((f[0] - 2.0).abs() < 1e-14);
        assert!((f[1] - 2.0).abs() < 1e-14);
        let fd = fd_grad(&game, 0, &x, 1e-6);
        assert!((f[0] - fd[0]).abs() < 1e-5 * f[0].abs());
        assert!((f[1] - fd[1]).abs() < 1e-5 * f[1].abs());
    }

    #[test]
    fn pseudo_gradient_dimension_mismatch() {
        let game = benchmark_game();
        assert!(pseudo_gradient(&game, &ActionProfile::zeros(11)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_everywhere() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let games = [benchmark_game(), fixtures::linearized_connectivity_game()];
        for game in &games {
            for _ in 0..50 {
                let x: Vec<f64> = (0..game.profile_dim())
                    .map(|_| rng.gen_range(-5.0..5.0))
                    .collect();
                for i in 0..game.players() {
                    let analytic = game.grad(i, &x).unwrap();
                    let fd = fd_grad(game, i, &x, 1e-6);
                    for (a, f) in analytic.iter().zip(&fd) {
                        let scale = a.abs().max(1.0);
                        assert!(
                            (a - f).abs() <= 1e-5 * scale,
                            "grad mismatch: analytic {a}, fd {f}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn solve_ne_reaches_connectivity_equilibrium() {
        let game = benchmark_game();
        let ne = solve_ne(&game, &ActionProfile::zeros(12), 1e-10, 200).unwrap();
        let f = pseudo_gradient(&game, &ne).unwrap();
        assert!(crate::linalg::norm2(&f) <= 1e-10);
        for (got, want) in ne.iter().zip(fixtures::CONNECTIVITY_NE.iter()) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        // The coarsely rounded reference coordinates are only good to ~2e-2.
        for (got, want) in ne.iter().zip(fixtures::CONNECTIVITY_NE_REFERENCE.iter()) {
            assert!((got - want).abs() < 0.02, "{got} vs reference {want}");
        }
    }

    #[test]
    fn residual_at_equilibrium_is_tiny() {
        let game = benchmark_game();
        let ne = solve_ne(&game, &ActionProfile::zeros(12), 1e-9, 200).unwrap();
        let f = pseudo_gradient(&game, &ne).unwrap();
        assert!(crate::linalg::norm2(&f) <= 1e-8);
    }

    #[test]
    fn seeking_gain_bound() {
        let game = benchmark_game();
        let bound = game.k1_upper_bound();
        assert!((bound - 2.0 / 484.0).abs() < 1e-15);
        assert!(0.001 < bound);
    }

    #[test]
    fn symmetric_game_has_symmetric_gradient() {
        // Same c for everyone and no sin term: permutation symmetry makes all
        // gradient blocks equal at any symmetric profile.
        let game = fixtures::linearized_connectivity_game_with_c(vec![[1.5, -0.5]; 6]);
        let x = vec![0.3; 12];
        let b0 = game.grad(0, &x).unwrap();
        for i in 1..6 {
            assert_eq!(game.grad(i, &x).unwrap(), b0);
        }
    }

    #[test]
    fn linearized_game_matches_dense_linear_solve() {
        // Without the sin term the equilibrium solves
        // ((2N + 2) I - 2 * ones ⊗ I_2) x = -c.
        let game = fixtures::linearized_connectivity_game();
        let ne = solve_ne(&game, &ActionProfile::zeros(12), 1e-10, 200).unwrap();

        let n = 6;
        let mut m = Mat::zeros(12, 12);
        for i in 0..n {
            for j in 0..n {
                let v = if i == j { 14.0 - 2.0 } else { -2.0 };
                m[(2 * i, 2 * j)] = v;
                m[(2 * i + 1, 2 * j + 1)] = v;
            }
        }
        let c: Vec<f64> = fixtures::benchmark_c().concat();
        let rhs: Vec<f64> = c.iter().map(|v| -v).collect();
        let direct = m.solve(&rhs).unwrap();
        for (got, want) in ne.iter().zip(&direct) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn single_player_quadratic_minimizes_at_zero() {
        let q = vec![Mat::identity(3).scale(2.0)];
        let c = vec![vec![0.0; 3]];
        let game = GameDefinition::quadratic(q, c, 3, 2.0, vec![2.0]).unwrap();
        let ne = solve_ne(&game, &ActionProfile::new(vec![4.0, -3.0, 7.0]), 1e-12, 100).unwrap();
        assert!(crate::linalg::norm2(&ne) < 1e-10);
    }

    #[test]
    fn monotonicity_connectivity_passes() {
        let report = check_strong_monotonicity(&benchmark_game(), 1000, 42).unwrap();
        assert!(report.pass, "min ratio {}", report.min_ratio);
        assert!(report.min_ratio >= 2.0 - 1e-9);
    }

    #[test]
    fn monotonicity_identity_and_antimonotone() {
        let dim = 2;
        let identity = GameDefinition::quadratic(
            vec![Mat::identity(dim); 2],
            vec![vec![0.0; dim]; 2],
            1,
            1.0,
            vec![1.0; 2],
        )
        .unwrap();
        let report = check_strong_monotonicity(&identity, 200, 5).unwrap();
        assert_eq!(report.min_ratio, 1.0);
        assert!(report.pass);

        let anti = GameDefinition::quadratic(
            vec![Mat::identity(dim).scale(-1.0); 2],
            vec![vec![0.0; dim]; 2],
            1,
            1.0,
            vec![1.0; 2],
        )
        .unwrap();
        let report = check_strong_monotonicity(&anti, 200, 5).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn measured_lipschitz_is_within_declared_modulus() {
        let game = benchmark_game();
        let measured = measure_lipschitz(&game, 500, 17);
        assert!(
            measured <= game.lipschitz()[0],
            "measured {measured} exceeds declared 22"
        );
        // It is also clearly not vacuous.
        assert!(measured > 10.0);
    }

    #[test]
    fn empty_connectivity_rejected() {
        assert!(GameDefinition::connectivity(vec![]).is_err());
    }
}
