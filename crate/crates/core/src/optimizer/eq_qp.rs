use nalgebra::{DMatrix, DVector};

use super::{OptError, SolveReport, SolveStatus};
use crate::linalg;

/// Accepted KKT residual for [`solve_eq_qp`].
pub const KKT_RESIDUAL_TOL: f64 = 1e-10;

/// `min ½xᵀHx + gᵀx` subject to `Ax = b`.
#[derive(Debug, Clone, PartialEq)]
pub struct EqQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl EqQp {
    fn validate(&self) -> Result<(), OptError> {
        let n = self.g.len();
        if self.h.shape() != (n, n) {
            return Err(OptError::Dimension(format!("H is {:?}, expected {n}x{n}", self.h.shape())));
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(OptError::Dimension(format!(
                "A is {:?}, b has {} entries, n = {n}",
                self.a.shape(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

/// Solves the KKT system `[H Aᵀ; A 0][x; λ] = [−g; b]` by SVD
/// pseudoinverse. The reported multipliers follow `Hx + g = Aᵀλ`.
pub fn solve_eq_qp(p: &EqQp) -> Result<SolveReport, OptError> {
    p.validate()?;
    let n = p.g.len();
    let k = p.b.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
    kkt.view_mut((0, n), (n, k)).copy_from(&p.a.transpose());
    kkt.view_mut((n, 0), (k, n)).copy_from(&p.a);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&p.g));
    rhs.rows_mut(n, k).copy_from(&p.b);
    if kkt.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
        return Err(OptError::NonFinite("KKT system"));
    }
    let sol = linalg::pinv_with(&kkt, 1e-13) * &rhs;
    let x = sol.rows(0, n).into_owned();
    let nu = sol.rows(n, k).into_owned();
    let stationarity = &p.h * &x + &p.g + p.a.transpose() * &nu;
    let feasibility = &p.a * &x - &p.b;
    let residual = linalg::max_abs(&stationarity).max(linalg::max_abs(&feasibility));
    if !(residual <= KKT_RESIDUAL_TOL) {
        return Err(OptError::RankDeficient { residual });
    }
    let objective = 0.5 * x.dot(&(&p.h * &x)) + p.g.dot(&x);
    Ok(SolveReport {
        objective,
        max_violation: linalg::max_abs(&feasibility),
        iterations: 1,
        status: SolveStatus::Converged,
        lambda_eq: -nu,
        lambda_ineq: DVector::zeros(0),
        x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn homogeneous_constraint_gives_origin() {
        let p = EqQp {
            h: DMatrix::identity(3, 3),
            g: DVector::zeros(3),
            a: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, -1.0]),
            b: DVector::zeros(2),
        };
        let r = solve_eq_qp(&p).unwrap();
        assert!(r.x.norm() < 1e-14);
    }

    #[test]
    fn projection_onto_null_space() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let target = DVector::from_vec(vec![1.0, 2.0, 4.0]);
        // ‖x − a‖² = xᵀx − 2aᵀx + const → H = 2I, g = −2a
        let p = EqQp { h: DMatrix::identity(3, 3) * 2.0, g: &target * -2.0, a: a.clone(), b: DVector::zeros(1) };
        let r = solve_eq_qp(&p).unwrap();
        let expect = (DMatrix::identity(3, 3) - linalg::pinv(&a) * &a) * &target;
        assert!((r.x - expect).norm() < 1e-12);
    }

    #[test]
    fn inconsistent_constraints_are_rank_deficient() {
        let p = EqQp {
            h: DMatrix::identity(2, 2),
            g: DVector::zeros(2),
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
            b: DVector::from_vec(vec![1.0, 2.0]),
        };
        assert!(matches!(solve_eq_qp(&p), Err(OptError::RankDeficient { .. })));
    }

    #[test]
    fn dimension_errors() {
        let p =
            EqQp { h: DMatrix::identity(2, 2), g: DVector::zeros(3), a: DMatrix::zeros(0, 3), b: DVector::zeros(0) };
        assert!(matches!(solve_eq_qp(&p), Err(OptError::Dimension(_))));
    }

    proptest! {
        #[test]
        fn random_spd_kkt_residual(seed in proptest::collection::vec(-1.0..1.0f64, 64)) {
            let n = 5;
            let l = DMatrix::from_fn(n, n, |i, j| seed[i * n + j]);
            let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.5;
            let a = DMatrix::from_fn(2, n, |i, j| seed[25 + i * n + j]);
            let g = DVector::from_fn(n, |i, _| seed[40 + i]);
            let b = DVector::from_fn(2, |i, _| seed[50 + i]);
            prop_assume!(linalg::numerical_rank(&a, 1e-6) == 2);
            let r = solve_eq_qp(&EqQp { h: h.clone(), g: g.clone(), a: a.clone(), b: b.clone() }).unwrap();
            let st = &h * &r.x + &g - a.transpose() * &r.lambda_eq;
            prop_assert!(st.amax() <= 1e-10);
            prop_assert!((&a * &r.x - &b).amax() <= 1e-10);
        }
    }
}
