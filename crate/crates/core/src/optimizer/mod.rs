//! Constrained optimization backends: an equality-constrained QP solved
//! through its KKT system, a dense dual active-set QP, and an SQP solver
//! for smooth nonlinear programs with analytic derivatives.

mod eq_qp;
mod qp;
mod sqp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eq_qp::{solve_eq_qp, EqQp, KKT_RESIDUAL_TOL};
pub use qp::{solve_qp, DenseQp, QpSolution};
pub use sqp::{solve_nlp, SqpOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("KKT system is rank deficient (residual {residual:.3e})")]
    RankDeficient { residual: f64 },
    #[error("QP Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("QP constraints are infeasible")]
    QpInfeasible,
    #[error("non-finite value from {0}")]
    NonFinite(&'static str),
    #[error("analytic {what} disagrees with finite differences (row {row}, relative error {error:.3e})")]
    GradientMismatch { what: &'static str, row: usize, error: f64 },
    #[error("initial point has dimension {got}, expected {expected}")]
    InitialPoint { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: DVector<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Multipliers of the equality constraints (`∇f = Jᵀλ + ...`).
    pub lambda_eq: DVector<f64>,
    pub lambda_ineq: DVector<f64>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Smooth program `min f(x)` s.t. `c(x) = 0`, `g(x) ≥ 0`, `lo ≤ x ≤ hi`.
pub trait NlpProblem {
    fn dim(&self) -> usize;
    fn num_eq(&self) -> usize {
        0
    }
    fn num_ineq(&self) -> usize {
        0
    }
    fn objective(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn eq_constraints(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn eq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, self.dim())
    }
    fn ineq_constraints(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn ineq_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, self.dim())
    }
    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.dim();
        (DVector::from_element(n, f64::NEG_INFINITY), DVector::from_element(n, f64::INFINITY))
    }
}

/// Worst relative error of each analytic derivative against central
/// differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientAudit {
    pub objective: f64,
    pub eq_jacobian: f64,
    pub ineq_jacobian: f64,
}

impl GradientAudit {
    pub fn max(&self) -> f64 {
        self.objective.max(self.eq_jacobian).max(self.ineq_jacobian)
    }
}

fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

fn fd_jacobian(n: usize, rows: usize, x: &DVector<f64>, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        out.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    out
}

/// Row-wise relative error `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, floor)`, returning
/// the worst row and its error.
fn worst_row(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> (usize, f64) {
    let mut worst = (0, 0.0);
    for r in 0..a.nrows() {
        let diff = (a.row(r) - b.row(r)).amax();
        let scale = a.row(r).amax().max(b.row(r).amax()).max(floor);
        let e = diff / scale;
        if e > worst.1 || e.is_nan() {
            worst = (r, e);
        }
    }
    worst
}

/// Central-difference audit of every derivative the problem supplies.
pub fn audit_gradients<P: NlpProblem + ?Sized>(p: &P, x: &DVector<f64>) -> GradientAudit {
    let n = p.dim();
    let floor = 1e-6;
    let g = DMatrix::from_row_slice(1, n, p.gradient(x).as_slice());
    let g_fd = fd_jacobian(n, 1, x, |y| DVector::from_element(1, p.objective(y)));
    let je = p.eq_jacobian(x);
    let je_fd = fd_jacobian(n, p.num_eq(), x, |y| p.eq_constraints(y));
    let ji = p.ineq_jacobian(x);
    let ji_fd = fd_jacobian(n, p.num_ineq(), x, |y| p.ineq_constraints(y));
    GradientAudit {
        objective: worst_row(&g, &g_fd, floor).1,
        eq_jacobian: worst_row(&je, &je_fd, floor).1,
        ineq_jacobian: worst_row(&ji, &ji_fd, floor).1,
    }
}

/// Fails when any supplied derivative differs from central differences by
/// more than `rel_tol`.
pub fn check_gradients<P: NlpProblem + ?Sized>(
    p: &P,
    x: &DVector<f64>,
    rel_tol: f64,
) -> Result<GradientAudit, OptError> {
    let n = p.dim();
    let floor = 1e-6;
    let checks: [(&'static str, DMatrix<f64>, DMatrix<f64>); 3] = [
        (
            "objective gradient",
            DMatrix::from_row_slice(1, n, p.gradient(x).as_slice()),
            fd_jacobian(n, 1, x, |y| DVector::from_element(1, p.objective(y))),
        ),
        ("equality Jacobian", p.eq_jacobian(x), fd_jacobian(n, p.num_eq(), x, |y| p.eq_constraints(y))),
        ("inequality Jacobian", p.ineq_jacobian(x), fd_jacobian(n, p.num_ineq(), x, |y| p.ineq_constraints(y))),
    ];
    let mut errs = [0.0; 3];
    for (k, (what, a, b)) in checks.iter().enumerate() {
        if a.shape() != b.shape() {
            return Err(OptError::Dimension(format!("{what} has shape {:?}, expected {:?}", a.shape(), b.shape())));
        }
        let (row, error) = worst_row(a, b, floor);
        if !(error <= rel_tol) {
            return Err(OptError::GradientMismatch { what, row, error });
        }
        errs[k] = error;
    }
    Ok(GradientAudit { objective: errs[0], eq_jacobian: errs[1], ineq_jacobian: errs[2] })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Bad;
    impl NlpProblem for Bad {
        fn dim(&self) -> usize {
            2
        }
        fn objective(&self, x: &DVector<f64>) -> f64 {
            x[0] * x[0] + 3.0 * x[1]
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![2.0 * x[0], 2.0])
        }
    }

    #[test]
    fn gradient_gate_catches_wrong_derivative() {
        let err = check_gradients(&Bad, &DVector::from_vec(vec![0.5, 0.5]), 1e-4).unwrap_err();
        assert!(matches!(err, OptError::GradientMismatch { what: "objective gradient", .. }));
    }
}
