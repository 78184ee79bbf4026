//! Dense strictly convex QP by the Goldfarb–Idnani dual active-set method.
//!
//! The working set is kept explicitly and the reduced operators are rebuilt
//! from `H⁻¹` at every step; problems here have at most a few hundred
//! constraints and well under a hundred variables.

use nalgebra::{DMatrix, DVector};

use super::OptError;

/// `min ½xᵀHx + gᵀx` s.t. `A_eq x = b_eq`, `A_in x ≥ b_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// `Hx + g = A_eqᵀ λ_eq + A_inᵀ λ_in`, `λ_in ≥ 0`.
    pub lambda_eq: DVector<f64>,
    pub lambda_in: DVector<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
enum Source {
    Eq(usize, f64),
    In(usize),
}

struct Working {
    normals: Vec<DVector<f64>>,
    source: Vec<Source>,
    u: Vec<f64>,
}

impl Working {
    fn is_eq(&self, j: usize) -> bool {
        matches!(self.source[j], Source::Eq(..))
    }

    fn drop(&mut self, j: usize) {
        self.normals.remove(j);
        self.source.remove(j);
        self.u.remove(j);
    }
}

/// Primal direction `z` and dual direction `r` for adding normal `n`.
fn directions(hinv: &DMatrix<f64>, w: &Working, n: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let hn = hinv * n;
    if w.normals.is_empty() {
        return (hn, DVector::zeros(0));
    }
    let nmat = DMatrix::from_columns(&w.normals);
    let hn_mat = hinv * &nmat;
    let k = nmat.transpose() * &hn_mat;
    let rhs = hn_mat.transpose() * n;
    let r = match k.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => k.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(rhs.len())),
    };
    let z = hn - hn_mat * &r;
    (z, r)
}

pub fn solve_qp(p: &DenseQp) -> Result<QpSolution, OptError> {
    let n = p.g.len();
    if p.h.shape() != (n, n)
        || p.a_eq.ncols() != n
        || p.a_in.ncols() != n
        || p.a_eq.nrows() != p.b_eq.len()
        || p.a_in.nrows() != p.b_in.len()
    {
        return Err(OptError::Dimension("QP data shapes are inconsistent".into()));
    }
    let hsym = (&p.h + p.h.transpose()) * 0.5;
    let hinv = hsym.cholesky().ok_or(OptError::NotPositiveDefinite)?.inverse();
    let mut x = -(&hinv * &p.g);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(OptError::NonFinite("QP data"));
    }
    let mut w = Working { normals: Vec::new(), source: Vec::new(), u: Vec::new() };
    let mut iterations = 0;
    let max_iter = 50 * (n + p.a_eq.nrows() + p.a_in.nrows() + 1);

    // Equalities first; none of them is ever dropped afterwards.
    for i in 0..p.a_eq.nrows() {
        let mut nv: DVector<f64> = p.a_eq.row(i).transpose();
        let mut b = p.b_eq[i];
        let scale = nv.amax().max(1e-300);
        let mut sign = 1.0;
        if nv.dot(&x) - b > 0.0 {
            nv = -nv;
            b = -b;
            sign = -1.0;
        }
        let (z, r) = directions(&hinv, &w, &nv);
        let zn = z.dot(&nv);
        let s = nv.dot(&x) - b;
        if zn <= 1e-12 * nv.dot(&(&hinv * &nv)) {
            // Dependent on earlier equalities: fine if already satisfied.
            if s.abs() <= 1e-9 * (1.0 + b.abs() + scale * x.amax()) {
                continue;
            }
            return Err(OptError::QpInfeasible);
        }
        let t = -s / zn;
        x += &z * t;
        for (j, uj) in w.u.iter_mut().enumerate() {
            *uj -= t * r[j];
        }
        w.normals.push(nv);
        w.source.push(Source::Eq(i, sign));
        w.u.push(t);
        iterations += 1;
    }

    let row_norms: Vec<f64> = (0..p.a_in.nrows()).map(|i| p.a_in.row(i).norm().max(1e-300)).collect();
    loop {
        if iterations > max_iter {
            return Err(OptError::QpInfeasible);
        }
        // Most violated inactive inequality, measured by scaled slack.
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..p.a_in.nrows() {
            if w.source.iter().any(|s| matches!(s, Source::In(k) if *k == i)) {
                continue;
            }
            let slack = p.a_in.row(i).dot(&x.transpose()) - p.b_in[i];
            let tol = 1e-12 * (1.0 + p.b_in[i].abs());
            let scaled = slack / row_norms[i];
            if slack < -tol && pick.map_or(true, |(_, best)| scaled < best) {
                pick = Some((i, scaled));
            }
        }
        let Some((pi, _)) = pick else { break };
        let np: DVector<f64> = p.a_in.row(pi).transpose();
        let bp = p.b_in[pi];
        let mut u_plus = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(OptError::QpInfeasible);
            }
            let (z, r) = directions(&hinv, &w, &np);
            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for j in 0..w.u.len() {
                if !w.is_eq(j) && r[j] > 1e-14 {
                    let ratio = w.u[j] / r[j];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_k = Some(j);
                    }
                }
            }
            let zn = z.dot(&np);
            let t2 = if zn > 1e-12 * np.dot(&(&hinv * &np)) { -(np.dot(&x) - bp) / zn } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(OptError::QpInfeasible);
            }
            for j in 0..w.u.len() {
                w.u[j] -= t * r[j];
            }
            u_plus += t;
            if t2.is_finite() {
                x += &z * t;
            }
            if t2 <= t1 {
                w.normals.push(np);
                w.source.push(Source::In(pi));
                w.u.push(u_plus);
                break;
            }
            let k = drop_k.expect("partial step has a blocking constraint");
            w.u[k] = 0.0;
            w.drop(k);
        }
    }

    let mut lambda_eq = DVector::zeros(p.a_eq.nrows());
    let mut lambda_in = DVector::zeros(p.a_in.nrows());
    for (j, s) in w.source.iter().enumerate() {
        match *s {
            Source::Eq(i, sign) => lambda_eq[i] = sign * w.u[j],
            Source::In(i) => lambda_in[i] = w.u[j].max(0.0),
        }
    }
    Ok(QpSolution { x, lambda_eq, lambda_in, iterations })
}
