//! Coordinate descent for `min ½θᵀGθ − cᵀθ + λ‖θ‖₁`.
//!
//! Plain and modular Lasso differ only in the linear term `c`, so every
//! penalized fit in the crate goes through this one kernel. The solver keeps
//! the gradient `Gθ − c` up to date after each coordinate move (covariance
//! updates), so a sweep costs `O(p²)` regardless of `n`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::max_abs;

/// `sign(u) · max(|u| − λ, 0)`.
pub fn soft_threshold(u: f64, lambda: f64) -> f64 {
    if u > lambda {
        u - lambda
    } else if u < -lambda {
        u + lambda
    } else {
        0.0
    }
}

pub fn l1_objective(gram: &DMatrix<f64>, linear: &DVector<f64>, lambda: f64, theta: &DVector<f64>) -> f64 {
    0.5 * theta.dot(&(gram * theta)) - linear.dot(theta) + lambda * theta.lp_norm(1)
}

/// Largest violation of the subgradient optimality conditions. Coordinates
/// with a zero diagonal are pinned at zero and excluded.
pub fn kkt_residual(gram: &DMatrix<f64>, linear: &DVector<f64>, lambda: f64, theta: &DVector<f64>) -> f64 {
    let grad = gram * theta - linear;
    (0..theta.len())
        .filter(|&j| gram[(j, j)] > 0.0)
        .map(|j| {
            if theta[j] != 0.0 {
                (grad[j] + lambda * theta[j].signum()).abs()
            } else {
                (grad[j].abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct L1Solution {
    pub theta: DVector<f64>,
    pub sweeps: usize,
    pub kkt_residual: f64,
}

/// Solver settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordinateDescent {
    /// Stop when the largest coordinate move in a sweep is at most
    /// `tol · max(1, ‖θ‖∞)` ...
    pub tol: f64,
    /// ... and the KKT residual is at most `kkt_tol · max(1, ‖c‖∞)`.
    pub kkt_tol: f64,
    pub max_sweeps: usize,
}

impl Default for CoordinateDescent {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            kkt_tol: 1e-6,
            max_sweeps: 10_000,
        }
    }
}

impl CoordinateDescent {
    pub fn solve(
        &self,
        gram: &DMatrix<f64>,
        linear: &DVector<f64>,
        lambda: f64,
        warm_start: Option<&DVector<f64>>,
    ) -> Result<L1Solution> {
        self.solve_traced(gram, linear, lambda, warm_start, None)
    }

    /// As [`solve`](Self::solve); when `trace` is given, the objective after
    /// every sweep is appended to it.
    pub fn solve_traced(
        &self,
        gram: &DMatrix<f64>,
        linear: &DVector<f64>,
        lambda: f64,
        warm_start: Option<&DVector<f64>>,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<L1Solution> {
        let p = linear.len();
        if gram.nrows() != p || gram.ncols() != p {
            return Err(Error::shape(format!(
                "gram is {}x{}, linear term has length {p}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
        }
        if (0..p).any(|j| gram[(j, j)] < 0.0) {
            return Err(Error::invalid("gram matrix has a negative diagonal entry"));
        }
        let mut theta = match warm_start {
            Some(w) if w.len() == p => w.clone(),
            Some(w) => {
                return Err(Error::shape(format!("warm start has length {}, expected {p}", w.len())))
            }
            None => DVector::zeros(p),
        };
        for j in 0..p {
            if gram[(j, j)] <= 0.0 {
                theta[j] = 0.0;
            }
        }
        let kkt_bound = self.kkt_tol * max_abs(linear).max(1.0);
        let mut grad = gram * &theta - linear;

        for sweep in 1..=self.max_sweeps {
            let mut max_move = 0.0f64;
            for j in 0..p {
                let gjj = gram[(j, j)];
                if gjj <= 0.0 {
                    continue;
                }
                let old = theta[j];
                let partial = gjj * old - grad[j];
                let new = soft_threshold(partial, lambda) / gjj;
                let delta = new - old;
                if delta != 0.0 {
                    theta[j] = new;
                    grad.axpy(delta, &gram.column(j), 1.0);
                    max_move = max_move.max(delta.abs());
                }
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(l1_objective(gram, linear, lambda, &theta));
            }
            if max_move <= self.tol * max_abs(&theta).max(1.0) {
                // refresh to shed accumulated rounding before judging optimality
                grad = gram * &theta - linear;
                let kkt = kkt_residual(gram, linear, lambda, &theta);
                if kkt <= kkt_bound {
                    return Ok(L1Solution {
                        theta,
                        sweeps: sweep,
                        kkt_residual: kkt,
                    });
                }
            }
        }
        let kkt = kkt_residual(gram, linear, lambda, &theta);
        Err(Error::NoConvergence {
            sweeps: self.max_sweeps,
            kkt_residual: kkt,
            last_iterate: theta.iter().copied().collect(),
        })
    }
}

/// Solves `min ½θᵀGθ − cᵀθ + λ‖θ‖₁` with default settings.
pub fn solve_l1_quadratic(
    gram: &DMatrix<f64>,
    linear: &DVector<f64>,
    lambda: f64,
    warm_start: Option<&DVector<f64>>,
) -> Result<L1Solution> {
    CoordinateDescent::default().solve(gram, linear, lambda, warm_start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn full_shrinkage_returns_exact_zero() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let c = DVector::from_vec(vec![0.7, -1.2]);
        let s = solve_l1_quadratic(&g, &c, 1.2, None).unwrap();
        assert!(s.theta.iter().all(|&v| v == 0.0));
        let s = solve_l1_quadratic(&g, &c, 5.0, None).unwrap();
        assert!(s.theta.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthonormal_soft_threshold() {
        let g = DMatrix::identity(2, 2);
        let c = DVector::from_vec(vec![3.0, -0.5]);
        let s = solve_l1_quadratic(&g, &c, 1.0, None).unwrap();
        assert_eq!(s.theta.as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn zero_diagonal_coordinate_pinned() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let c = DVector::from_vec(vec![2.0, 5.0]);
        let w = DVector::from_vec(vec![0.0, 3.0]);
        let s = solve_l1_quadratic(&g, &c, 0.5, Some(&w)).unwrap();
        assert_eq!(s.theta.as_slice(), &[1.5, 0.0]);
    }

    #[test]
    fn non_convergence_carries_iterate() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.99, 0.99, 1.0]);
        let c = DVector::from_vec(vec![1.0, 0.5]);
        let solver = CoordinateDescent {
            max_sweeps: 1,
            ..Default::default()
        };
        match solver.solve(&g, &c, 0.01, None) {
            Err(Error::NoConvergence { last_iterate, kkt_residual, .. }) => {
                assert_eq!(last_iterate.len(), 2);
                assert!(kkt_residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    fn random_psd(seed: u64, p: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut r = rng::stream(seed, 0);
        let a = DMatrix::from_fn(p + 3, p, |_, _| r.random::<f64>() - 0.5);
        let g = a.tr_mul(&a) / (p + 3) as f64;
        let c = DVector::from_fn(p, |_, _| r.random::<f64>() - 0.5);
        (g, c)
    }

    #[test]
    fn objective_non_increasing_per_sweep() {
        for seed in 0..10 {
            let (g, c) = random_psd(seed, 6);
            let mut trace = Vec::new();
            CoordinateDescent::default()
                .solve_traced(&g, &c, 0.01, None, Some(&mut trace))
                .unwrap();
            let start = l1_objective(&g, &c, 0.01, &DVector::zeros(6));
            let mut prev = start;
            for &v in &trace {
                assert!(v <= prev + 1e-15 * prev.abs().max(1.0));
                prev = v;
            }
        }
    }

    proptest! {
        #[test]
        fn diagonal_gram_is_coordinatewise_soft_threshold(
            d in prop::collection::vec(0.1f64..5.0, 1..8),
            cs in prop::collection::vec(-5.0f64..5.0, 8),
            lambda in 0.0f64..3.0,
        ) {
            let p = d.len();
            let g = DMatrix::from_diagonal(&DVector::from_vec(d.clone()));
            let c = DVector::from_vec(cs[..p].to_vec());
            let s = solve_l1_quadratic(&g, &c, lambda, None).unwrap();
            for j in 0..p {
                let expect = soft_threshold(c[j], lambda) / d[j];
                prop_assert!((s.theta[j] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }
}
