//! Weighted undirected graphs, Laplacians, connectivity, the augmented
//! estimation operator used by the leader-follower protocol, and a cyclic
//! Jacobi eigensolver for symmetric matrices.

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Weighted undirected graph on nodes `1..=N` (stored 0-based).
///
/// Invariants: the adjacency matrix is symmetric with zero diagonal and
/// nonnegative entries; `a_ij > 0` iff `{i,j}` is an edge.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    adj: Mat,
}

impl Graph {
    pub fn new(adj: Mat) -> Result<Self> {
        if !adj.is_square() {
            return Err(Error::invalid_argument("adjacency matrix must be square"));
        }
        let n = adj.rows();
        if n == 0 {
            return Err(Error::invalid_argument("graph needs at least one node"));
        }
        for i in 0..n {
            if adj[(i, i)] != 0.0 {
                return Err(Error::invalid_argument(format!(
                    "adjacency diagonal must be zero (node {})",
                    i + 1
                )));
            }
            for j in 0..n {
                let w = adj[(i, j)];
                if w < 0.0 || !w.is_finite() {
                    return Err(Error::invalid_argument(format!(
                        "edge weight ({}, {}) must be finite and >= 0, got {w}",
                        i + 1,
                        j + 1
                    )));
                }
                if (w - adj[(j, i)]).abs() > 0.0 {
                    return Err(Error::invalid_argument(format!(
                        "adjacency must be symmetric, mismatch at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Graph { n, adj })
    }

    /// Build from a 1-based edge list `[i, j, w]`; `w` defaults to 1.0.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut adj = Mat::zeros(n, n);
        for &(i, j, w) in edges {
            if i < 1 || j < 1 || i > n || j > n {
                return Err(Error::invalid_argument(format!(
                    "edge ({i}, {j}) out of range for {n} nodes (indices are 1-based)"
                )));
            }
            if i == j {
                return Err(Error::invalid_argument(format!("self-loop at node {i}")));
            }
            if w <= 0.0 || !w.is_finite() {
                return Err(Error::invalid_argument(format!(
                    "edge ({i}, {j}) weight must be finite and > 0, got {w}"
                )));
            }
            if adj[(i - 1, j - 1)] != 0.0 {
                return Err(Error::invalid_argument(format!("duplicate edge ({i}, {j})")));
            }
            adj[(i - 1, j - 1)] = w;
            adj[(j - 1, i - 1)] = w;
        }
        Graph::new(adj)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adj[(i, j)]
    }

    pub fn adjacency(&self) -> &Mat {
        &self.adj
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.adj[(i, j)] > 0.0)
    }

    /// `L = D - A`. Row sums are zero by construction.
    pub fn laplacian(&self) -> Mat {
        let mut l = self.adj.scale(-1.0);
        for i in 0..self.n {
            let deg: f64 = (0..self.n).map(|j| self.adj[(i, j)]).sum();
            l[(i, i)] = deg;
        }
        l
    }

    /// Breadth-first reachability from node 0 over positive-weight edges.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n
    }

    /// The N²xN² operator `L ⊗ I_N + A0` driving the stacked estimation
    /// error, where `A0 = diag(a_11, a_12, ..., a_1N, a_21, ..., a_NN)`
    /// (row-major over estimate indices, matching player-major stacking).
    /// Positive definite exactly when the graph is connected.
    pub fn estimation_operator(&self) -> EstimationOperator {
        let mut h = self.laplacian().kron(&Mat::identity(self.n));
        for i in 0..self.n {
            for j in 0..self.n {
                let p = i * self.n + j;
                h[(p, p)] += self.adj[(i, j)];
            }
        }
        EstimationOperator { matrix: h }
    }
}

#[derive(Debug, Clone)]
pub struct EstimationOperator {
    pub matrix: Mat,
}

impl EstimationOperator {
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let eig = eig_sym(&self.matrix, JACOBI_TOL, false)?;
        Ok(eig.values[0])
    }
}

/// Relative off-diagonal tolerance used by default for [`eig_sym`].
pub const JACOBI_TOL: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 64;

#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Matching eigenvectors as columns, when requested.
    pub vectors: Option<Mat>,
}

/// Symmetric eigendecomposition by the cyclic Jacobi rotation method.
///
/// The input must be symmetric within `1e-12` relative; it is symmetrized as
/// `(M + M')/2` before sweeping. Sweeps stop once the off-diagonal Frobenius
/// norm falls below `tol * ||M||_F`.
pub fn eig_sym(m: &Mat, tol: f64, want_vectors: bool) -> Result<SymmetricEigen> {
    if !m.is_square() {
        return Err(Error::invalid_argument("eig_sym requires a square matrix"));
    }
    let scale = m.max_abs().max(1.0);
    if m.asymmetry() > 1e-12 * scale {
        return Err(Error::invalid_argument(
            "eig_sym input is not symmetric within 1e-12 relative",
        ));
    }
    let n = m.rows();
    let sym = m.symmetrized();
    let mut a = sym.data().to_vec();
    let mut v = if want_vectors {
        Some(Mat::identity(n))
    } else {
        None
    };
    let norm = sym.frobenius_norm();
    let stop = (tol * norm).max(f64::MIN_POSITIVE);

    let off = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let x = a[i * n + j];
                s += 2.0 * x * x;
            }
        }
        s.sqrt()
    };

    let mut converged = norm == 0.0 || n == 1;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if converged || off(&a) <= stop {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let np = c * akp - s * akq;
                    let nq = s * akp + c * akq;
                    a[k * n + p] = np;
                    a[p * n + k] = np;
                    a[k * n + q] = nq;
                    a[q * n + k] = nq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                if let Some(vm) = v.as_mut() {
                    for k in 0..n {
                        let vkp = vm[(k, p)];
                        let vkq = vm[(k, q)];
                        vm[(k, p)] = c * vkp - s * vkq;
                        vm[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    if !converged && off(&a) > stop {
        return Err(Error::ConvergenceFailure {
            context: "Jacobi eigensolver did not reach tolerance".into(),
            residual: off(&a),
            iterations: JACOBI_MAX_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].partial_cmp(&a[j * n + j]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = v.map(|vm| Mat::from_fn(n, n, |r, cidx| vm[(r, order[cidx])]));
    Ok(SymmetricEigen { values, vectors })
}

/// Eigenvalues only, at the default tolerance.
pub fn eigenvalues(m: &Mat) -> Result<Vec<f64>> {
    Ok(eig_sym(m, JACOBI_TOL, false)?.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn path3() -> Graph {
        Graph::from_edges(3, &[(1, 2, 1.0), (2, 3, 1.0)]).unwrap()
    }

    #[test]
    fn laplacian_of_path_graph() {
        let l = path3().laplacian();
        let want = Mat::from_rows(&[
            vec![1.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 1.0],
        ])
        .unwrap();
        assert_eq!(l, want);
    }

    #[test]
    fn laplacian_row_sums_vanish_exactly() {
        let g = Graph::from_edges(
            6,
            &[(1, 2, 0.3), (2, 3, 2.5), (3, 4, 1.0), (4, 5, 1.7), (5, 6, 0.2), (1, 4, 4.0)],
        )
        .unwrap();
        let l = g.laplacian();
        for i in 0..6 {
            let row: f64 = (0..6).map(|j| l[(i, j)]).sum();
            let col: f64 = (0..6).map(|j| l[(j, i)]).sum();
            assert_eq!(row, 0.0);
            assert_eq!(col, 0.0);
        }
    }

    #[test]
    fn path_graph_spectrum_matches_characteristic_polynomial() {
        // det(L - t I) for the path Laplacian expands to -t^3 + 4t^2 - 3t,
        // whose roots are {0, 1, 3}.
        let l = path3().laplacian();
        let det = |t: f64| {
            let d = |i: usize, j: usize| l[(i, j)] - if i == j { t } else { 0.0 };
            d(0, 0) * (d(1, 1) * d(2, 2) - d(1, 2) * d(2, 1))
                - d(0, 1) * (d(1, 0) * d(2, 2) - d(1, 2) * d(2, 0))
                + d(0, 2) * (d(1, 0) * d(2, 1) - d(1, 1) * d(2, 0))
        };
        for root in [0.0, 1.0, 3.0] {
            assert!(det(root).abs() < 1e-12);
        }
        let eig = eigenvalues(&l).unwrap();
        for (got, want) in eig.iter().zip(&[0.0, 1.0, 3.0]) {
            assert!((got - want).abs() < 1e-10, "eig {got} vs {want}");
        }
    }

    #[test]
    fn empty_edge_graph_has_zero_laplacian() {
        let g = Graph::from_edges(4, &[]).unwrap();
        assert_eq!(g.laplacian(), Mat::zeros(4, 4));
        assert!(!g.is_connected());
    }

    #[test]
    fn connectivity_bfs() {
        assert!(!Graph::from_edges(2, &[]).unwrap().is_connected());
        let mut k6 = Vec::new();
        for i in 1..=6 {
            for j in (i + 1)..=6 {
                k6.push((i, j, 1.0));
            }
        }
        assert!(Graph::from_edges(6, &k6).unwrap().is_connected());
    }

    #[test]
    fn connectivity_agrees_with_fiedler_value() {
        // BFS- and lambda_2-based connectivity checks exist to test each other.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let n = rng.gen_range(2..9);
            let mut edges = Vec::new();
            for i in 1..=n {
                for j in (i + 1)..=n {
                    if rng.gen_bool(0.3) {
                        edges.push((i, j, rng.gen_range(0.2..2.0)));
                    }
                }
            }
            let g = Graph::from_edges(n, &edges).unwrap();
            let eig = eigenvalues(&g.laplacian()).unwrap();
            assert!(eig[0].abs() <= 1e-10);
            let spectral = eig[1] > 1e-10;
            assert_eq!(g.is_connected(), spectral, "n={n} edges={edges:?}");
        }
    }

    #[test]
    fn estimation_operator_single_edge() {
        // N = 2, one unit edge. With estimates stacked player-major and the
        // A0 diagonal ordered row-major over (i, j), the operator is
        //   L ⊗ I_2 + diag(a_11, a_12, a_21, a_22) = L ⊗ I_2 + diag(0,1,1,0).
        let g = Graph::from_edges(2, &[(1, 2, 1.0)]).unwrap();
        let h = g.estimation_operator().matrix;
        let want = Mat::from_rows(&[
            vec![1.0, 0.0, -1.0, 0.0],
            vec![0.0, 2.0, 0.0, -1.0],
            vec![-1.0, 0.0, 2.0, 0.0],
            vec![0.0, -1.0, 0.0, 1.0],
        ])
        .unwrap();
        assert_eq!(h, want);
        // Direct brute force: the operator decouples into two 2x2 blocks
        // [[1,-1],[-1,2]] and [[2,-1],[-1,1]], both with eigenvalues
        // (3 ± sqrt(5)) / 2.
        let lo = (3.0 - 5.0f64.sqrt()) / 2.0;
        let hi = (3.0 + 5.0f64.sqrt()) / 2.0;
        let eig = eigenvalues(&h).unwrap();
        for (got, want) in eig.iter().zip(&[lo, lo, hi, hi]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(eig[0] > 0.0);
    }

    #[test]
    fn estimation_operator_disconnected_is_singular() {
        let g = Graph::from_edges(3, &[(1, 2, 1.0)]).unwrap();
        let eig = eigenvalues(&g.estimation_operator().matrix).unwrap();
        assert!(eig[0].abs() < 1e-12);
    }

    #[test]
    fn estimation_operator_connected_is_positive_definite() {
        let g = crate::fixtures::benchmark_graph();
        assert!(g.is_connected());
        let min = g.estimation_operator().min_eigenvalue().unwrap();
        assert!(min > 0.0, "min eigenvalue {min}");
    }

    #[test]
    fn eig_sym_diagonal_cases() {
        let eig = eigenvalues(&Mat::identity(3)).unwrap();
        assert_eq!(eig, vec![1.0, 1.0, 1.0]);
        let eig = eigenvalues(&Mat::diag(&[3.0, -2.0, 5.0])).unwrap();
        assert_eq!(eig, vec![-2.0, 3.0, 5.0]);
    }

    #[test]
    fn eig_sym_rejects_nonsquare_and_asymmetric() {
        assert!(eig_sym(&Mat::zeros(2, 3), JACOBI_TOL, false).is_err());
        let mut m = Mat::zeros(2, 2);
        m[(0, 1)] = 1.0;
        assert!(eig_sym(&m, JACOBI_TOL, false).is_err());
    }

    #[test]
    fn eig_sym_trace_and_determinant_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let n = 20;
            let mut m = Mat::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let x = rng.gen_range(-1.0..1.0);
                    m[(i, j)] = x;
                    m[(j, i)] = x;
                }
            }
            let eig = eigenvalues(&m).unwrap();
            let trace: f64 = (0..n).map(|i| m[(i, i)]).sum();
            let sum: f64 = eig.iter().sum();
            assert!((sum - trace).abs() <= 1e-8 * trace.abs().max(1.0));
            let det = m.lu_det();
            let prod: f64 = eig.iter().product();
            assert!(
                (prod - det).abs() <= 1e-8 * det.abs().max(1.0),
                "prod {prod} det {det}"
            );
        }
    }

    #[test]
    fn eig_sym_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 12;
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x = rng.gen_range(-2.0..2.0);
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        let eig = eig_sym(&m, JACOBI_TOL, true).unwrap();
        let v = eig.vectors.unwrap();
        let recon = v.matmul(&Mat::diag(&eig.values)).matmul(&v.transpose());
        let err = recon.sub(&m).frobenius_norm();
        assert!(err <= 1e-8 * m.frobenius_norm(), "reconstruction error {err}");
    }

    #[test]
    fn graph_validation_errors() {
        assert!(Graph::from_edges(3, &[(1, 1, 1.0)]).is_err());
        assert!(Graph::from_edges(3, &[(1, 4, 1.0)]).is_err());
        assert!(Graph::from_edges(3, &[(1, 2, -1.0)]).is_err());
        assert!(Graph::from_edges(3, &[(1, 2, 1.0), (2, 1, 1.0)]).is_err());
        let mut adj = Mat::zeros(2, 2);
        adj[(0, 1)] = 1.0;
        assert!(Graph::new(adj).is_err()); // not symmetric
    }
}
