//! Mean-square stability machinery: assembly and verification of the
//! delay-form matrix inequalities certifying consensus of the sampled,
//! event-triggered estimation flow under switching, a small Lyapunov-equation
//! solver, and a heuristic scaling search over identity templates.
//!
//! Conventions, fixed once:
//! - `d = N^2 n` is the stacked estimate-error dimension; the quadratic form
//!   variable is `xi = col(delta(tau), delta(tau - ς), delta(tau - h/eps),
//!   e(tau - ς))`, so `Xi_1` is `4d x 4d`.
//! - The decision matrices `P(m), Q, U, R` are N x N and enter as
//!   `I_{Nn} ⊗ X`; the trigger weight `Phi` is N x N and enters as
//!   `I_N ⊗ Phi ⊗ I_n` (and `Lambda ⊗ Phi ⊗ I_n` on the z-side), reusing the
//!   estimate-major stacking frozen in [`crate::trigger`]. `S` is a free
//!   `d x d` coupling block.
//! - The rate-coupled sum is read as `sum_a iota_{ma}(theta) (I ⊗ P(a))`,
//!   the standard jump-system coupling, with the time-varying rates handled
//!   by vertex enumeration over their interval endpoints (the term is affine
//!   in the rates, so endpoint vertices suffice); the diagonal entry is
//!   forced to minus the off-diagonal sum at every vertex.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::topology::{eig_sym, Graph, JACOBI_TOL};

/// Numerical margin standing in for strict inequality.
pub const STRICTNESS_MARGIN: f64 = 1e-9;

/// Positive-definiteness floor used at instance load.
const PD_FLOOR: f64 = 1e-10;

/// One switching mode: its topology, estimation gain and transition-rate
/// interval row.
#[derive(Debug, Clone)]
pub struct ModeInstance {
    pub graph: Graph,
    /// Estimation gain K(m).
    pub k4: f64,
    /// Symmetric positive definite N x N Lyapunov block P(m).
    pub p: Mat,
    /// Interval bounds `[lo, hi]` for the rates out of this mode, one entry
    /// per target mode; the self entry is ignored (derived as minus the sum).
    pub rate_row: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Theorem4Instance {
    pub action_dim: usize,
    pub modes: Vec<ModeInstance>,
    pub q: Mat,
    pub u: Mat,
    pub r: Mat,
    /// Free d x d coupling block of the reciprocally convex bound.
    pub s: Mat,
    /// N x N trigger weight.
    pub phi: Mat,
    /// Per-player trigger thresholds (the diagonal of Lambda).
    pub zeta: Vec<f64>,
    /// Sampling period and singular-perturbation parameter; the delay bound
    /// in the fast time scale is `h / epsilon`.
    pub h: f64,
    pub epsilon: f64,
}

impl Theorem4Instance {
    pub fn players(&self) -> usize {
        self.modes[0].graph.node_count()
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Stacked dimension `d = N^2 n`.
    pub fn dim(&self) -> usize {
        let np = self.players();
        np * np * self.action_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::invalid_config("instance needs at least one mode"));
        }
        if self.action_dim == 0 {
            return Err(Error::invalid_config("action dimension must be >= 1"));
        }
        let np = self.players();
        let s = self.mode_count();
        let d = self.dim();
        let check_pd = |m: &Mat, name: &str| -> Result<()> {
            if m.rows() != np || m.cols() != np {
                return Err(Error::invalid_config(format!("{name} must be {np} x {np}")));
            }
            let eig = eig_sym(m, JACOBI_TOL, false)
                .map_err(|e| Error::invalid_config(format!("{name}: {e}")))?;
            if eig.values[0] <= PD_FLOOR {
                return Err(Error::invalid_config(format!(
                    "{name} must be positive definite (min eigenvalue {:.3e})",
                    eig.values[0]
                )));
            }
            Ok(())
        };
        for (m, mode) in self.modes.iter().enumerate() {
            if mode.graph.node_count() != np {
                return Err(Error::invalid_config("all mode graphs need the same node count"));
            }
            if mode.k4 <= 0.0 {
                return Err(Error::invalid_config("K(m) must be > 0"));
            }
            check_pd(&mode.p, &format!("P({})", m + 1))?;
            if mode.rate_row.len() != s {
                return Err(Error::invalid_config("each rate row needs one entry per mode"));
            }
            for (a, &(lo, hi)) in mode.rate_row.iter().enumerate() {
                if a == m {
                    continue;
                }
                if lo > hi || lo < 0.0 {
                    return Err(Error::invalid_config(format!(
                        "rate interval ({}, {}) must satisfy 0 <= lo <= hi",
                        m + 1,
                        a + 1
                    )));
                }
            }
        }
        check_pd(&self.q, "Q")?;
        check_pd(&self.u, "U")?;
        check_pd(&self.r, "R")?;
        check_pd(&self.phi, "Phi")?;
        if self.s.rows() != d || self.s.cols() != d {
            return Err(Error::invalid_config(format!("S must be {d} x {d}")));
        }
        if self.zeta.len() != np || self.zeta.iter().any(|&z| z <= 0.0) {
            return Err(Error::invalid_config("need one positive zeta per player"));
        }
        if self.h <= 0.0 || self.epsilon <= 0.0 {
            return Err(Error::invalid_config("h and epsilon must be > 0"));
        }
        Ok(())
    }

    /// All rate vertices of mode `m`: every combination of interval
    /// endpoints for the off-diagonal rates, with the self entry forced to
    /// minus their sum.
    pub fn rate_vertices(&self, m: usize) -> Vec<Vec<f64>> {
        let s = self.mode_count();
        let off: Vec<usize> = (0..s).filter(|&a| a != m).collect();
        let mut out = Vec::with_capacity(1 << off.len());
        for mask in 0..(1u32 << off.len()) {
            let mut v = vec![0.0; s];
            for (bit, &a) in off.iter().enumerate() {
                let (lo, hi) = self.modes[m].rate_row[a];
                v[a] = if mask >> bit & 1 == 1 { hi } else { lo };
            }
            v[m] = -v.iter().sum::<f64>();
            out.push(v);
        }
        out
    }

    /// `I_{Nn} ⊗ X` for an N x N decision matrix.
    fn lift(&self, x: &Mat) -> Mat {
        Mat::identity(self.players() * self.action_dim).kron(x)
    }

    /// `W ⊗ Phi ⊗ I_n` for an N x N weight over trigger indices.
    fn trigger_lift(&self, w: &Mat) -> Mat {
        w.kron(&self.phi).kron(&Mat::identity(self.action_dim))
    }
}

/// `H(m) = (L(m) ⊗ I_N + A0(m)) ⊗ I_n`.
pub fn build_h(g: &Graph, action_dim: usize) -> Mat {
    g.estimation_operator()
        .matrix
        .kron(&Mat::identity(action_dim))
}

fn add_block(big: &mut Mat, row: usize, col: usize, d: usize, m: &Mat, factor: f64) {
    debug_assert_eq!(m.rows(), d);
    debug_assert_eq!(m.cols(), d);
    for i in 0..d {
        for j in 0..d {
            let v = m[(i, j)];
            if v != 0.0 {
                big[(row * d + i, col * d + j)] += factor * v;
            }
        }
    }
}

fn check_vertex(inst: &Theorem4Instance, vertex: &[f64]) -> Result<()> {
    if vertex.len() != inst.mode_count() {
        return Err(Error::invalid_argument("rate vertex needs one entry per mode"));
    }
    let sum: f64 = vertex.iter().sum();
    let scale = vertex.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if sum.abs() > 1e-9 * scale {
        return Err(Error::invalid_argument(
            "rate vertex must have zero row sum (diagonal = -sum of off-diagonal)",
        ));
    }
    Ok(())
}

/// Assemble `Xi_1(m)` at one rate vertex; symmetric `4d x 4d`.
pub fn build_xi1(inst: &Theorem4Instance, m: usize, vertex: &[f64]) -> Result<Mat> {
    if m >= inst.mode_count() {
        return Err(Error::invalid_argument("mode index out of range"));
    }
    check_vertex(inst, vertex)?;
    let d = inst.dim();
    let mut xi = Mat::zeros(4 * d, 4 * d);

    // sum_a iota_ma (I ⊗ P(a)) on the delta(tau) block.
    for (a, &rate) in vertex.iter().enumerate() {
        if rate != 0.0 {
            add_block(&mut xi, 0, 0, d, &inst.lift(&inst.modes[a].p), rate);
        }
    }
    // + I ⊗ (Q + U) on delta(tau), - I ⊗ Q on delta(tau - h/eps).
    add_block(&mut xi, 0, 0, d, &inst.lift(&inst.q.add(&inst.u)), 1.0);
    add_block(&mut xi, 2, 2, d, &inst.lift(&inst.q), -1.0);
    // - (I_N ⊗ Phi ⊗ I_n) on the e block.
    add_block(
        &mut xi,
        3,
        3,
        d,
        &inst.trigger_lift(&Mat::identity(inst.players())),
        -1.0,
    );
    // Cross terms (I ⊗ P(m)) B(m) + B(m)' (I ⊗ P(m)) with
    // B(m) = -K(m) H(m) (sel_2 + sel_4).
    let h_m = build_h(&inst.modes[m].graph, inst.action_dim);
    let cross = inst.lift(&inst.modes[m].p).matmul(&h_m).scale(-inst.modes[m].k4);
    let cross_t = cross.transpose();
    add_block(&mut xi, 0, 1, d, &cross, 1.0);
    add_block(&mut xi, 0, 3, d, &cross, 1.0);
    add_block(&mut xi, 1, 0, d, &cross_t, 1.0);
    add_block(&mut xi, 3, 0, d, &cross_t, 1.0);
    // Reciprocally convex block on (sel_2 - sel_3, sel_1 - sel_2).
    let r_lift = inst.lift(&inst.r);
    add_block(&mut xi, 1, 1, d, &r_lift, -1.0);
    add_block(&mut xi, 1, 2, d, &r_lift, 1.0);
    add_block(&mut xi, 2, 1, d, &r_lift, 1.0);
    add_block(&mut xi, 2, 2, d, &r_lift, -1.0);
    add_block(&mut xi, 0, 0, d, &r_lift, -1.0);
    add_block(&mut xi, 0, 1, d, &r_lift, 1.0);
    add_block(&mut xi, 1, 0, d, &r_lift, 1.0);
    add_block(&mut xi, 1, 1, d, &r_lift, -1.0);
    let s_t = inst.s.transpose();
    add_block(&mut xi, 1, 0, d, &inst.s, -1.0);
    add_block(&mut xi, 1, 1, d, &inst.s, 1.0);
    add_block(&mut xi, 2, 0, d, &inst.s, 1.0);
    add_block(&mut xi, 2, 1, d, &inst.s, -1.0);
    add_block(&mut xi, 0, 1, d, &s_t, -1.0);
    add_block(&mut xi, 1, 1, d, &s_t, 1.0);
    add_block(&mut xi, 0, 2, d, &s_t, 1.0);
    add_block(&mut xi, 1, 2, d, &s_t, -1.0);
    // Trigger-threshold gain H' (Lambda ⊗ Phi ⊗ I_n) H on (sel_2 + sel_4).
    let lambda = Mat::diag(&inst.zeta);
    let w = h_m.transpose().matmul(&inst.trigger_lift(&lambda)).matmul(&h_m);
    add_block(&mut xi, 1, 1, d, &w, 1.0);
    add_block(&mut xi, 1, 3, d, &w, 1.0);
    add_block(&mut xi, 3, 1, d, &w, 1.0);
    add_block(&mut xi, 3, 3, d, &w, 1.0);

    let asym = xi.asymmetry();
    if asym >= 1e-10 {
        return Err(Error::Internal(format!(
            "Xi_1 assembly lost symmetry ({asym:.3e})"
        )));
    }
    Ok(xi.symmetrized())
}

#[derive(Debug, Clone, Serialize)]
pub struct Condition19Verdict {
    pub feasible: bool,
    pub max_eig: f64,
}

/// Check the coupled inequality at mode `m` and one rate vertex by forming
/// `[[Xi_1, (h/eps) B'], [*, -(I ⊗ R)^{-1}]]` and testing its largest
/// eigenvalue against the strictness margin. The inverse is taken through
/// R's eigendecomposition, never by inverting the big block.
pub fn check_condition_19(
    inst: &Theorem4Instance,
    m: usize,
    vertex: &[f64],
) -> Result<Condition19Verdict> {
    let d = inst.dim();
    let xi = build_xi1(inst, m, vertex)?;
    let r_eig = eig_sym(&inst.r, JACOBI_TOL, true)?;
    if r_eig.values[0] <= PD_FLOOR {
        return Err(Error::invalid_config(
            "R must be positive definite for condition 19",
        ));
    }
    let v = r_eig.vectors.unwrap();
    let inv_vals: Vec<f64> = r_eig.values.iter().map(|l| 1.0 / l).collect();
    let r_inv = v.matmul(&Mat::diag(&inv_vals)).matmul(&v.transpose());
    let r_inv_lift = inst.lift(&r_inv.symmetrized());

    let ratio = inst.h / inst.epsilon;
    let h_m = build_h(&inst.modes[m].graph, inst.action_dim);
    let scaled = h_m.scale(-inst.modes[m].k4 * ratio);

    let n_big = 5 * d;
    let mut big = Mat::zeros(n_big, n_big);
    for i in 0..4 * d {
        for j in 0..4 * d {
            big[(i, j)] = xi[(i, j)];
        }
    }
    // (h/eps) B' occupies block rows 2 and 4 of the last block column.
    for i in 0..d {
        for j in 0..d {
            let v = scaled[(i, j)];
            big[(d + i, 4 * d + j)] = v;
            big[(4 * d + j, d + i)] = v;
            big[(3 * d + i, 4 * d + j)] = v;
            big[(4 * d + j, 3 * d + i)] = v;
        }
    }
    for i in 0..d {
        for j in 0..d {
            big[(4 * d + i, 4 * d + j)] = -r_inv_lift[(i, j)];
        }
    }
    let eig = eig_sym(&big, JACOBI_TOL, false)?;
    let max_eig = *eig.values.last().unwrap();
    Ok(Condition19Verdict {
        feasible: max_eig < -STRICTNESS_MARGIN,
        max_eig,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Condition20Verdict {
    pub feasible: bool,
    pub min_eig: f64,
}

/// Check `[[I ⊗ R, S], [S', I ⊗ R]] > 0`.
pub fn check_condition_20(inst: &Theorem4Instance) -> Result<Condition20Verdict> {
    let r_lift = inst.lift(&inst.r);
    let big = Mat::block2x2(&r_lift, &inst.s, &inst.s.transpose(), &r_lift);
    let eig = eig_sym(&big, JACOBI_TOL, false)?;
    let min_eig = eig.values[0];
    Ok(Condition20Verdict {
        feasible: min_eig > STRICTNESS_MARGIN,
        min_eig,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VertexVerdict {
    /// 1-based mode.
    pub mode: usize,
    pub vertex: Vec<f64>,
    pub max_eig: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Theorem4Report {
    pub condition19: Vec<VertexVerdict>,
    pub condition20: Condition20Verdict,
    /// Worst (largest) eigenvalue across all mode/vertex checks.
    pub worst_max_eig: f64,
    pub overall_feasible: bool,
}

/// Verify the full certificate: the coupled inequality at every mode and
/// every rate vertex, plus the reciprocally convex coupling condition.
pub fn verify_theorem4(inst: &Theorem4Instance) -> Result<Theorem4Report> {
    inst.validate()?;
    let mut verdicts = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for m in 0..inst.mode_count() {
        for vertex in inst.rate_vertices(m) {
            let v = check_condition_19(inst, m, &vertex)?;
            worst = worst.max(v.max_eig);
            verdicts.push(VertexVerdict {
                mode: m + 1,
                vertex,
                max_eig: v.max_eig,
                feasible: v.feasible,
            });
        }
    }
    let c20 = check_condition_20(inst)?;
    let overall = c20.feasible && verdicts.iter().all(|v| v.feasible);
    Ok(Theorem4Report {
        condition19: verdicts,
        condition20: c20,
        worst_max_eig: worst,
        overall_feasible: overall,
    })
}

/// Solve `P H + H' P = -Q` for symmetric `P` by Gaussian elimination on the
/// vectorized n^2 x n^2 system.
///
/// `H` being Hurwitz is checked a posteriori: the solve must be consistent
/// (residual below `1e-10 ||Q||_F`) and the returned `P` positive definite;
/// a singular system means `H` has an eigenvalue pair summing to zero.
pub fn solve_lyapunov(h: &Mat, q: &Mat) -> Result<Mat> {
    if !h.is_square() || !q.is_square() || h.rows() != q.rows() {
        return Err(Error::invalid_argument("solve_lyapunov needs square H, Q of equal size"));
    }
    let n = h.rows();
    let dim = n * n;
    // Unknown P_{p,q} indexed column-major; equation (i, j) reads
    // sum_k P_{ik} H_{kj} + sum_k H_{ki} P_{kj} = -Q_{ij}.
    let mut sys = Mat::zeros(dim, dim);
    let mut rhs = vec![0.0; dim];
    for j in 0..n {
        for i in 0..n {
            let row = j * n + i;
            rhs[row] = -q[(i, j)];
            for k in 0..n {
                // P_{ik} H_{kj}
                sys[(row, k * n + i)] += h[(k, j)];
                // H_{ki} P_{kj}
                sys[(row, j * n + k)] += h[(k, i)];
            }
        }
    }
    let vec_p = sys.solve(&rhs).map_err(|_| Error::EigenvaluePairing)?;
    let p_raw = Mat::from_fn(n, n, |i, j| vec_p[j * n + i]);
    let p = p_raw.symmetrized();

    let residual = p
        .matmul(h)
        .add(&h.transpose().matmul(&p))
        .add(q)
        .frobenius_norm();
    let qn = q.frobenius_norm();
    if residual > 1e-10 * qn.max(f64::MIN_POSITIVE) {
        return Err(Error::ConvergenceFailure {
            context: "Lyapunov solve residual too large".into(),
            residual,
            iterations: 1,
        });
    }
    let eig = eig_sym(&p, JACOBI_TOL, false)?;
    if eig.values[0] <= 0.0 {
        return Err(Error::NotHurwitz { min_eig: eig.values[0] });
    }
    Ok(p)
}

/// Scalar grid for the identity-template search.
#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingGrid {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub r: Vec<f64>,
    pub phi: Vec<f64>,
    pub k4: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchReport {
    pub evaluated: usize,
    /// Worst max-eigenvalue of the best candidate; negative values below the
    /// margin mean the candidate is feasible.
    pub best_violation: f64,
    pub feasible: bool,
    /// Best scalars as (p, q, u, r, phi, k4).
    pub best_scalars: [f64; 6],
}

/// Scan scalar multiples of identity templates for the decision matrices
/// and the estimation gain, returning the least-violating instance. Makes
/// no feasibility promise: an infeasible grid just reports its best point.
pub fn heuristic_search_theorem4(
    base: &Theorem4Instance,
    grid: &ScalingGrid,
) -> Result<(Theorem4Instance, SearchReport)> {
    if [&grid.p, &grid.q, &grid.u, &grid.r, &grid.phi, &grid.k4]
        .iter()
        .any(|v| v.is_empty())
    {
        return Err(Error::invalid_argument("scaling grid must be non-empty in every axis"));
    }
    let np = base.players();
    let eye = Mat::identity(np);
    let mut best: Option<(Theorem4Instance, f64, bool, [f64; 6])> = None;
    let mut evaluated = 0;
    for &p in &grid.p {
        for &q in &grid.q {
            for &u in &grid.u {
                for &r in &grid.r {
                    for &phi in &grid.phi {
                        for &k4 in &grid.k4 {
                            let mut cand = base.clone();
                            for mode in cand.modes.iter_mut() {
                                mode.p = eye.scale(p);
                                mode.k4 = k4;
                            }
                            cand.q = eye.scale(q);
                            cand.u = eye.scale(u);
                            cand.r = eye.scale(r);
                            cand.phi = eye.scale(phi);
                            cand.validate()?;
                            let report = verify_theorem4(&cand)?;
                            evaluated += 1;
                            let violation = report.worst_max_eig;
                            let feasible = report.overall_feasible;
                            let better = match &best {
                                None => true,
                                Some((_, v, _, _)) => violation < *v,
                            };
                            if better {
                                best = Some((cand, violation, feasible, [p, q, u, r, phi, k4]));
                            }
                        }
                    }
                }
            }
        }
    }
    let (inst, best_violation, feasible, best_scalars) = best.unwrap();
    Ok((
        inst,
        SearchReport {
            evaluated,
            best_violation,
            feasible,
            best_scalars,
        },
    ))
}
