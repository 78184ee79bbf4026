//! SLSQP-style sequential quadratic programming: damped BFGS Hessian,
//! dense QP subproblems with an elastic fallback, an ℓ1 merit line search
//! and a second-order correction against the Maratos effect.

use nalgebra::{DMatrix, DVector};

use super::{check_gradients, solve_qp, DenseQp, NlpProblem, OptError, SolveReport, SolveStatus};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpOptions {
    pub feas_tol: f64,
    pub stat_tol: f64,
    pub max_iter: usize,
    /// Run the finite-difference gradient gate at the initial point.
    pub check_gradients: bool,
    pub gradient_tol: f64,
}

impl Default for SqpOptions {
    fn default() -> Self {
        SqpOptions { feas_tol: 1e-8, stat_tol: 1e-8, max_iter: 200, check_gradients: false, gradient_tol: 1e-4 }
    }
}

struct Point {
    x: DVector<f64>,
    f: f64,
    grad: DVector<f64>,
    ce: DVector<f64>,
    je: DMatrix<f64>,
    ci: DVector<f64>,
    ji: DMatrix<f64>,
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn evaluate<P: NlpProblem + ?Sized>(p: &P, x: DVector<f64>) -> Result<Point, OptError> {
    let f = p.objective(&x);
    let grad = p.gradient(&x);
    let ce = p.eq_constraints(&x);
    let je = p.eq_jacobian(&x);
    let ci = p.ineq_constraints(&x);
    let ji = p.ineq_jacobian(&x);
    if !f.is_finite() || !finite(&grad) {
        return Err(OptError::NonFinite("objective"));
    }
    if !finite(&ce) || je.iter().any(|v| !v.is_finite()) {
        return Err(OptError::NonFinite("equality constraints"));
    }
    if !finite(&ci) || ji.iter().any(|v| !v.is_finite()) {
        return Err(OptError::NonFinite("inequality constraints"));
    }
    let n = x.len();
    if grad.len() != n || je.shape() != (p.num_eq(), n) || ce.len() != p.num_eq() {
        return Err(OptError::Dimension("objective/equality callback sizes".into()));
    }
    if ji.shape() != (p.num_ineq(), n) || ci.len() != p.num_ineq() {
        return Err(OptError::Dimension("inequality callback sizes".into()));
    }
    Ok(Point { x, f, grad, ce, je, ci, ji })
}

fn violation(ce: &DVector<f64>, ci: &DVector<f64>) -> f64 {
    let e = linalg::max_abs(ce);
    let i = ci.iter().fold(0.0_f64, |m, &c| m.max(-c));
    e.max(i)
}

fn merit(f: f64, ce: &DVector<f64>, ci: &DVector<f64>, rho_e: &DVector<f64>, rho_i: &DVector<f64>) -> f64 {
    let pe: f64 = ce.iter().zip(rho_e.iter()).map(|(c, r)| r * c.abs()).sum();
    let pi: f64 = ci.iter().zip(rho_i.iter()).map(|(c, r)| r * (-c).max(0.0)).sum();
    f + pe + pi
}

fn project(x: &mut DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Bound rows `d ≥ lo − x` and `−d ≥ x − hi` for finite bounds.
fn bound_rows(x: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> (Vec<(usize, f64)>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..x.len() {
        if lo[i].is_finite() {
            rows.push((i, 1.0));
            rhs.push(lo[i] - x[i]);
        }
        if hi[i].is_finite() {
            rows.push((i, -1.0));
            rhs.push(x[i] - hi[i]);
        }
    }
    (rows, rhs)
}

struct Step {
    d: DVector<f64>,
    lambda_eq: DVector<f64>,
    lambda_in: DVector<f64>,
    /// Fraction of the linearized constraint residual left unresolved.
    elastic: f64,
}

fn qp_step(pt: &Point, b: &DMatrix<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Step, OptError> {
    let n = pt.x.len();
    let mi = pt.ci.len();
    let (brows, brhs) = bound_rows(&pt.x, lo, hi);
    let nb = brows.len();
    let assemble = |extra: usize| {
        let mut a_in = DMatrix::zeros(mi + nb, n + extra);
        a_in.view_mut((0, 0), (mi, n)).copy_from(&pt.ji);
        for (k, &(i, s)) in brows.iter().enumerate() {
            a_in[(mi + k, i)] = s;
        }
        let mut b_in = DVector::zeros(mi + nb);
        b_in.rows_mut(0, mi).copy_from(&(-&pt.ci));
        for (k, &r) in brhs.iter().enumerate() {
            b_in[mi + k] = r;
        }
        (a_in, b_in)
    };

    let (a_in, b_in) = assemble(0);
    let qp = DenseQp { h: b.clone(), g: pt.grad.clone(), a_eq: pt.je.clone(), b_eq: -&pt.ce, a_in, b_in };
    match solve_qp(&qp) {
        Ok(s) => {
            return Ok(Step {
                d: s.x,
                lambda_eq: s.lambda_eq,
                lambda_in: s.lambda_in.rows(0, mi).into_owned(),
                elastic: 0.0,
            })
        }
        Err(OptError::QpInfeasible) => {}
        Err(e) => return Err(e),
    }

    // Elastic variant: relax the linearization by a factor (1 − ξ).
    let big = 1e6 * (1.0 + pt.grad.amax());
    let mut h = DMatrix::zeros(n + 1, n + 1);
    h.view_mut((0, 0), (n, n)).copy_from(b);
    h[(n, n)] = 1.0;
    let mut g = DVector::zeros(n + 1);
    g.rows_mut(0, n).copy_from(&pt.grad);
    g[n] = big;
    let me = pt.ce.len();
    let mut a_eq = DMatrix::zeros(me, n + 1);
    a_eq.view_mut((0, 0), (me, n)).copy_from(&pt.je);
    a_eq.set_column(n, &(-&pt.ce));
    let (mut a_in, mut b_in) = assemble(1);
    for k in 0..mi {
        a_in[(k, n)] = -pt.ci[k].min(0.0);
    }
    let rows = a_in.nrows();
    a_in = a_in.insert_rows(rows, 2, 0.0);
    a_in[(rows, n)] = 1.0;
    a_in[(rows + 1, n)] = -1.0;
    b_in = b_in.insert_rows(rows, 2, 0.0);
    b_in[rows + 1] = -1.0;
    let qp = DenseQp { h, g, a_eq, b_eq: -&pt.ce, a_in, b_in };
    let s = solve_qp(&qp)?;
    Ok(Step {
        d: s.x.rows(0, n).into_owned(),
        lambda_eq: s.lambda_eq,
        lambda_in: s.lambda_in.rows(0, mi).into_owned(),
        elastic: s.x[n].clamp(0.0, 1.0),
    })
}

/// Minimum-norm correction pulling equalities and QP-active inequalities
/// back onto their linearization at the trial point.
fn second_order_correction(pt: &Point, trial: &Point, active: &[usize]) -> DVector<f64> {
    let n = pt.x.len();
    let me = pt.ce.len();
    let rows = me + active.len();
    if rows == 0 {
        return DVector::zeros(n);
    }
    let mut a = DMatrix::zeros(rows, n);
    let mut r = DVector::zeros(rows);
    a.view_mut((0, 0), (me, n)).copy_from(&pt.je);
    r.rows_mut(0, me).copy_from(&trial.ce);
    for (k, &i) in active.iter().enumerate() {
        a.set_row(me + k, &pt.ji.row(i));
        r[me + k] = trial.ci[i];
    }
    -(linalg::pinv(&a) * r)
}

fn lagrangian_gradient(pt: &Point, le: &DVector<f64>, li: &DVector<f64>) -> DVector<f64> {
    &pt.grad - pt.je.transpose() * le - pt.ji.transpose() * li
}

fn damped_bfgs(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 1e-300) {
        return;
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * sbs { 1.0 } else { 0.8 * sbs / (sbs - sy) };
    let r = y * theta + &bs * (1.0 - theta);
    let sr = s.dot(&r);
    if !(sr > 1e-300) {
        return;
    }
    *b += &r * r.transpose() / sr - &bs * bs.transpose() / sbs;
    // Keep the matrix exactly symmetric.
    let sym = (&*b + b.transpose()) * 0.5;
    *b = sym;
}

/// Solves a smooth NLP from `x0`. Iteration limits and line-search
/// breakdowns are reported through [`SolveStatus`] with the best iterate;
/// non-finite callback values and gradient-gate failures are errors.
pub fn solve_nlp<P: NlpProblem + ?Sized>(p: &P, x0: &DVector<f64>, opts: &SqpOptions) -> Result<SolveReport, OptError> {
    let n = p.dim();
    if x0.len() != n {
        return Err(OptError::InitialPoint { expected: n, got: x0.len() });
    }
    if !finite(x0) {
        return Err(OptError::NonFinite("initial point"));
    }
    let (lo, hi) = p.bounds();
    let mut x = x0.clone();
    project(&mut x, &lo, &hi);
    if opts.check_gradients {
        check_gradients(p, &x, opts.gradient_tol)?;
    }
    let mut pt = evaluate(p, x)?;
    let me = p.num_eq();
    let mi = p.num_ineq();
    let mut b = DMatrix::identity(n, n);
    let mut rho_e = DVector::zeros(me);
    let mut rho_i = DVector::zeros(mi);
    let mut lambda_eq = DVector::zeros(me);
    let mut lambda_in = DVector::zeros(mi);

    let score = |pt: &Point| {
        let v = violation(&pt.ce, &pt.ci);
        (if v <= opts.feas_tol { 0.0 } else { v }, pt.f)
    };
    let mut best = (pt.x.clone(), score(&pt), lambda_eq.clone(), lambda_in.clone());
    let mut status = SolveStatus::MaxIterations;
    let mut iterations = 0;
    let mut reset_once = false;

    while iterations < opts.max_iter {
        iterations += 1;
        let step = match qp_step(&pt, &b, &lo, &hi) {
            Ok(s) => s,
            Err(OptError::NotPositiveDefinite) | Err(OptError::QpInfeasible) if !reset_once => {
                b = DMatrix::identity(n, n);
                reset_once = true;
                continue;
            }
            Err(OptError::QpInfeasible) => {
                status = SolveStatus::Infeasible;
                break;
            }
            Err(e) => return Err(e),
        };
        lambda_eq = step.lambda_eq.clone();
        lambda_in = step.lambda_in.clone();
        let d = step.d;
        let viol = violation(&pt.ce, &pt.ci);
        let xnorm = 1.0 + pt.x.amax();
        if viol <= opts.feas_tol && d.amax() <= opts.stat_tol * xnorm {
            status = SolveStatus::Converged;
            break;
        }
        if step.elastic > 1.0 - 1e-9 && d.amax() <= opts.stat_tol * xnorm {
            // Stationary point of the constraint violation.
            status = SolveStatus::Infeasible;
            break;
        }

        for j in 0..me {
            let l = lambda_eq[j].abs();
            rho_e[j] = l.max(0.5 * (rho_e[j] + l));
        }
        for j in 0..mi {
            let l = lambda_in[j].abs();
            rho_i[j] = l.max(0.5 * (rho_i[j] + l));
        }
        let phi0 = merit(pt.f, &pt.ce, &pt.ci, &rho_e, &rho_i);
        let pen: f64 = pt.ce.iter().zip(rho_e.iter()).map(|(c, r)| r * c.abs()).sum::<f64>()
            + pt.ci.iter().zip(rho_i.iter()).map(|(c, r)| r * (-c).max(0.0)).sum::<f64>();
        let mut dphi = pt.grad.dot(&d) - (1.0 - step.elastic) * pen;
        if !(dphi < 0.0) {
            dphi = -d.dot(&(&b * &d)).max(1e-300);
        }

        let active: Vec<usize> = (0..mi).filter(|&i| lambda_in[i] > 0.0).collect();
        let mut alpha = 1.0;
        let mut accepted: Option<Point> = None;
        for ls in 0..40 {
            let mut xt = &pt.x + &d * alpha;
            project(&mut xt, &lo, &hi);
            let trial = evaluate(p, xt)?;
            let phi = merit(trial.f, &trial.ce, &trial.ci, &rho_e, &rho_i);
            if phi <= phi0 + 1e-4 * alpha * dphi {
                accepted = Some(trial);
                break;
            }
            if ls == 0 {
                let mut xs = &pt.x + &d + second_order_correction(&pt, &trial, &active);
                project(&mut xs, &lo, &hi);
                if let Ok(soc) = evaluate(p, xs) {
                    let phi_s = merit(soc.f, &soc.ce, &soc.ci, &rho_e, &rho_i);
                    if phi_s <= phi0 + 1e-4 * dphi {
                        accepted = Some(soc);
                        break;
                    }
                }
            }
            let denom = 2.0 * (phi - phi0 - alpha * dphi);
            let interp = if denom > 0.0 { -dphi * alpha * alpha / denom } else { 0.5 * alpha };
            alpha = interp.clamp(0.1 * alpha, 0.5 * alpha);
        }
        let Some(next) = accepted else {
            if viol <= opts.feas_tol && d.amax() <= opts.stat_tol.sqrt() * xnorm {
                status = SolveStatus::Converged;
                break;
            }
            if !reset_once {
                b = DMatrix::identity(n, n);
                reset_once = true;
                continue;
            }
            status = SolveStatus::LineSearchFailed;
            break;
        };

        let s = &next.x - &pt.x;
        let y = lagrangian_gradient(&next, &lambda_eq, &lambda_in) - lagrangian_gradient(&pt, &lambda_eq, &lambda_in);
        damped_bfgs(&mut b, &s, &y);
        let df = (next.f - pt.f).abs();
        pt = next;
        let sc = score(&pt);
        if sc.0 < best.1 .0 || (sc.0 == best.1 .0 && sc.1 <= best.1 .1) {
            best = (pt.x.clone(), sc, lambda_eq.clone(), lambda_in.clone());
        }
        if violation(&pt.ce, &pt.ci) <= opts.feas_tol
            && df <= opts.stat_tol * (1.0 + pt.f.abs())
            && s.amax() <= opts.stat_tol.sqrt() * 1e-2 * (1.0 + pt.x.amax())
        {
            status = SolveStatus::Converged;
            break;
        }
    }

    let (x, f, le, li) = if status == SolveStatus::Converged {
        (pt.x.clone(), pt.f, lambda_eq, lambda_in)
    } else {
        let (bx, _, le, li) = best;
        let f = p.objective(&bx);
        (bx, f, le, li)
    };
    let max_violation = violation(&p.eq_constraints(&x), &p.ineq_constraints(&x));
    Ok(SolveReport { x, objective: f, max_violation, iterations, status, lambda_eq: le, lambda_ineq: li })
}
