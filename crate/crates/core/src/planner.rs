//! Rigidity-based contact force planning: operational force, rigidity
//! internal force (closed form and QP route), the friction internal-force
//! program and the assembled planner.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grasp::{self, ConeMargin, FrictionParams, GraspError, GraspState};
use crate::linalg;
use crate::optimizer::{self, DenseQp, EqQp, NlpProblem, OptError, SolveStatus, SqpOptions};
use crate::rigidity::{ContactFramework, RigidityError, RANK_RTOL};

pub const STANDARD_GRAVITY: f64 = 9.81;
/// Slack on the friction cone and normal bounds accepted for emitted plans.
pub const SAFETY_TOL: f64 = 1e-6;
/// Allowed `‖G f_int‖` for null-space components.
pub const NULL_SPACE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Compressive,
    Cone,
    BelowMin,
    AboveMax,
    NullSpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Finger index, or `usize::MAX` for whole-grasp constraints.
    pub finger: usize,
    pub kind: ConstraintKind,
    pub amount: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error(transparent)]
    Grasp(#[from] GraspError),
    #[error(transparent)]
    Rigidity(#[from] RigidityError),
    #[error(transparent)]
    Optimizer(#[from] OptError),
    #[error("contact framework is not infinitesimally rigid (rank {rank}, need {expected})")]
    NotRigid { rank: usize, expected: usize },
    #[error("grasp matrix has rank {rank} < 6")]
    DegenerateGrasp { rank: usize },
    #[error("task inertia is not invertible")]
    SingularInertia,
    #[error("friction program needs f_n_min > 0 (got {0})")]
    DegenerateFriction(f64),
    #[error("no internal force satisfies the contact constraints: {violations:?}")]
    Infeasible { violations: Vec<Violation> },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Gravity wrench `g_o` about the object centre: force `m g d̂`, zero moment.
pub fn gravity_wrench(mass: f64, direction: &Vector3<f64>) -> DVector<f64> {
    let f = direction.normalize() * (mass * STANDARD_GRAVITY);
    DVector::from_vec(vec![f.x, f.y, f.z, 0.0, 0.0, 0.0])
}

/// Minimum-norm contact force with `G f = −g_o`.
pub fn operational_force(g: &DMatrix<f64>, g_o: &DVector<f64>) -> Result<DVector<f64>, PlannerError> {
    if g.nrows() != 6 || g_o.len() != 6 {
        return Err(PlannerError::Dimension(format!("G is {:?}, g_o has {}", g.shape(), g_o.len())));
    }
    let rank = linalg::numerical_rank(g, RANK_RTOL);
    if rank < 6 {
        return Err(PlannerError::DegenerateGrasp { rank });
    }
    Ok(-(linalg::pinv(g) * g_o))
}

fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, PlannerError> {
    let sym = (m + m.transpose()) * 0.5;
    let inv = sym.cholesky().ok_or(PlannerError::SingularInertia)?.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(PlannerError::SingularInertia);
    }
    Ok(inv)
}

fn check_rigidity_dims(
    r: &DMatrix<f64>,
    r_dot: &DMatrix<f64>,
    m_c: &DMatrix<f64>,
    v_c: &DVector<f64>,
    alpha: &DVector<f64>,
) -> Result<(), PlannerError> {
    let n = m_c.nrows();
    if m_c.ncols() != n || r.ncols() != n || r_dot.shape() != r.shape() || v_c.len() != n || alpha.len() != n {
        return Err(PlannerError::Dimension(format!(
            "R {:?}, Ṙ {:?}, M_c {:?}, v_c {}, α {}",
            r.shape(),
            r_dot.shape(),
            m_c.shape(),
            v_c.len(),
            alpha.len()
        )));
    }
    Ok(())
}

/// `f_int,R = Rᵀ (R M_c⁻¹ Rᵀ)⁺ (Ṙ v_c + R α)`.
pub fn rigidity_internal_force(
    r: &DMatrix<f64>,
    r_dot: &DMatrix<f64>,
    m_c: &DMatrix<f64>,
    v_c: &DVector<f64>,
    alpha: &DVector<f64>,
) -> Result<DVector<f64>, PlannerError> {
    check_rigidity_dims(r, r_dot, m_c, v_c, alpha)?;
    let m_inv = spd_inverse(m_c)?;
    let s = r * &m_inv * r.transpose();
    Ok(r.transpose() * (linalg::pinv(&s) * (r_dot * v_c + r * alpha)))
}

/// Same force through the constrained acceleration program:
/// `min (v̇ − α)ᵀ M_c (v̇ − α)` s.t. `R v̇ + Ṙ v_c = 0`, then `f = M_c (α − v̇*)`.
pub fn rigidity_internal_force_qp(
    r: &DMatrix<f64>,
    r_dot: &DMatrix<f64>,
    m_c: &DMatrix<f64>,
    v_c: &DVector<f64>,
    alpha: &DVector<f64>,
) -> Result<DVector<f64>, PlannerError> {
    check_rigidity_dims(r, r_dot, m_c, v_c, alpha)?;
    let h = (m_c + m_c.transpose()) * 1.0;
    let qp = EqQp { g: -(&h * alpha), h, a: r.clone(), b: -(r_dot * v_c) };
    let sol = optimizer::solve_eq_qp(&qp)?;
    Ok(m_c * (alpha - sol.x))
}

/// Friction internal-force program over `y = f_int,μ` (world frame, 3m):
/// minimise `Σ ½ f∥²/(μ f⊥)²` subject to `G y = 0`, the smooth cone
/// `μ² f⊥² − f∥² ≥ 0`, `f⊥ ≥ 0` and `f_min ≤ f⊥ ≤ f_max`, where
/// `f = f_pre + y`.
#[derive(Debug, Clone)]
pub struct FrictionNlp {
    pub f_pre: DVector<f64>,
    pub grasp: DMatrix<f64>,
    pub frames: Vec<Matrix3<f64>>,
    pub params: FrictionParams,
}

impl FrictionNlp {
    fn local(&self, y: &DVector<f64>) -> Vec<Vector3<f64>> {
        grasp::to_local(&(&self.f_pre + y), &self.frames)
    }

    fn m(&self) -> usize {
        self.frames.len()
    }
}

/// `Σ ½ (f∥ / (μ f⊥))²` over fingers for local-frame forces.
pub fn friction_objective(f_local: &[Vector3<f64>], mu: f64) -> f64 {
    f_local.iter().map(|f| 0.5 * (f.x * f.x + f.y * f.y) / (mu * mu * f.z * f.z)).sum()
}

impl NlpProblem for FrictionNlp {
    fn dim(&self) -> usize {
        3 * self.m()
    }
    fn num_eq(&self) -> usize {
        6
    }
    fn num_ineq(&self) -> usize {
        4 * self.m()
    }
    fn objective(&self, y: &DVector<f64>) -> f64 {
        friction_objective(&self.local(y), self.params.mu)
    }
    fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        let mu2 = self.params.mu * self.params.mu;
        let mut out = DVector::zeros(self.dim());
        for (i, f) in self.local(y).iter().enumerate() {
            let t2 = f.x * f.x + f.y * f.y;
            let z2 = f.z * f.z;
            let gl = Vector3::new(f.x / (mu2 * z2), f.y / (mu2 * z2), -t2 / (mu2 * z2 * f.z));
            linalg::set_block3(&mut out, i, &(self.frames[i] * gl));
        }
        out
    }
    fn eq_constraints(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.grasp * y
    }
    fn eq_jacobian(&self, _y: &DVector<f64>) -> DMatrix<f64> {
        self.grasp.clone()
    }
    fn ineq_constraints(&self, y: &DVector<f64>) -> DVector<f64> {
        let fp = &self.params;
        let mut out = DVector::zeros(self.num_ineq());
        for (i, f) in self.local(y).iter().enumerate() {
            out[4 * i] = fp.mu * fp.mu * f.z * f.z - f.x * f.x - f.y * f.y;
            out[4 * i + 1] = f.z;
            out[4 * i + 2] = f.z - fp.f_n_min;
            out[4 * i + 3] = fp.f_n_max - f.z;
        }
        out
    }
    fn ineq_jacobian(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mu2 = self.params.mu * self.params.mu;
        let mut out = DMatrix::zeros(self.num_ineq(), self.dim());
        for (i, f) in self.local(y).iter().enumerate() {
            let r = &self.frames[i];
            let cone = r * Vector3::new(-2.0 * f.x, -2.0 * f.y, 2.0 * mu2 * f.z);
            let normal: Vector3<f64> = r.column(2).into();
            for k in 0..3 {
                out[(4 * i, 3 * i + k)] = cone[k];
                out[(4 * i + 1, 3 * i + k)] = normal[k];
                out[(4 * i + 2, 3 * i + k)] = normal[k];
                out[(4 * i + 3, 3 * i + k)] = -normal[k];
            }
        }
        out
    }
}

/// Every violated cone, bound or null-space constraint of a total force.
pub fn violations(f_c: &DVector<f64>, frames: &[Matrix3<f64>], fp: &FrictionParams, tol: f64) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, f) in grasp::to_local(f_c, frames).iter().enumerate() {
        let t = (f.x * f.x + f.y * f.y).sqrt();
        if f.z < -tol {
            out.push(Violation { finger: i, kind: ConstraintKind::Compressive, amount: -f.z });
        }
        if t > fp.mu * f.z + tol {
            out.push(Violation { finger: i, kind: ConstraintKind::Cone, amount: t - fp.mu * f.z });
        }
        if f.z < fp.f_n_min - tol {
            out.push(Violation { finger: i, kind: ConstraintKind::BelowMin, amount: fp.f_n_min - f.z });
        }
        if f.z > fp.f_n_max + tol {
            out.push(Violation { finger: i, kind: ConstraintKind::AboveMax, amount: f.z - fp.f_n_max });
        }
    }
    out
}

/// Start point for the friction program: the smallest internal force that
/// puts every finger inside an inscribed octagonal pyramid of the cone and
/// strictly inside the normal bounds. Falls back to bounds only.
fn phase_one(nlp: &FrictionNlp) -> Option<DVector<f64>> {
    let m = nlp.m();
    let n = 3 * m;
    let fp = &nlp.params;
    let margin = 1e-3 * (fp.f_n_max - fp.f_n_min);
    let lo = fp.f_n_min + margin;
    let hi = fp.f_n_max - margin;
    let pre_local = grasp::to_local(&nlp.f_pre, &nlp.frames);
    let build = |with_cone: bool| {
        let per = if with_cone { 10 } else { 2 };
        let mut a = DMatrix::zeros(per * m, n);
        let mut b = DVector::zeros(per * m);
        for i in 0..m {
            let r = &nlp.frames[i];
            let (fx0, fy0, fz0) = (pre_local[i].x, pre_local[i].y, pre_local[i].z);
            let ez: Vector3<f64> = r.column(2).into();
            let row = per * i;
            // z component of the total force, affine in y: fz0 + ezᵀ y_i
            for k in 0..3 {
                a[(row, 3 * i + k)] = ez[k];
                a[(row + 1, 3 * i + k)] = -ez[k];
            }
            b[row] = lo - fz0;
            b[row + 1] = fz0 - hi;
            if with_cone {
                let c = fp.mu * (std::f64::consts::PI / 8.0).cos();
                for j in 0..8 {
                    let ang = j as f64 * std::f64::consts::FRAC_PI_4;
                    let (s, co) = ang.sin_cos();
                    // c fz − (cos fx + sin fy) ≥ 0
                    let dir: Vector3<f64> = r * Vector3::new(-co, -s, c);
                    for k in 0..3 {
                        a[(row + 2 + j, 3 * i + k)] = dir[k];
                    }
                    b[row + 2 + j] = -(c * fz0 - co * fx0 - s * fy0);
                }
            }
        }
        DenseQp {
            h: DMatrix::identity(n, n),
            g: DVector::zeros(n),
            a_eq: nlp.grasp.clone(),
            b_eq: DVector::zeros(6),
            a_in: a,
            b_in: b,
        }
    };
    optimizer::solve_qp(&build(true)).or_else(|_| optimizer::solve_qp(&build(false))).ok().map(|s| s.x)
}

/// Solves the friction program for `f_int,μ` given `f_pre = f_ope + f_int,R`.
pub fn friction_internal_force(
    f_pre: &DVector<f64>,
    g: &DMatrix<f64>,
    frames: &[Matrix3<f64>],
    fp: &FrictionParams,
    warm_start: Option<&DVector<f64>>,
    check_gradients: bool,
) -> Result<(DVector<f64>, optimizer::SolveReport), PlannerError> {
    fp.validate()?;
    let m = frames.len();
    if f_pre.len() != 3 * m || g.shape() != (6, 3 * m) {
        return Err(PlannerError::Dimension(format!("f_pre {}, G {:?}, {m} frames", f_pre.len(), g.shape())));
    }
    if !(fp.f_n_min > 0.0) {
        return Err(PlannerError::DegenerateFriction(fp.f_n_min));
    }
    let nlp = FrictionNlp { f_pre: f_pre.clone(), grasp: g.clone(), frames: frames.to_vec(), params: *fp };
    let linear_ok = |y: &DVector<f64>| {
        let c = nlp.ineq_constraints(y);
        (g * y).amax() <= 1e-10 && (0..m).all(|i| c[4 * i + 2] > 0.0 && c[4 * i + 3] > 0.0)
    };
    let x0 = match warm_start {
        Some(w) if w.len() == 3 * m && linear_ok(w) => w.clone(),
        _ => match phase_one(&nlp) {
            Some(y) => y,
            None => {
                let mut v = violations(f_pre, frames, fp, 0.0);
                v.push(Violation { finger: usize::MAX, kind: ConstraintKind::NullSpace, amount: f64::INFINITY });
                return Err(PlannerError::Infeasible { violations: v });
            }
        },
    };
    let opts = SqpOptions { check_gradients, ..SqpOptions::default() };
    let report = optimizer::solve_nlp(&nlp, &x0, &opts)?;
    let y = report.x.clone();
    let mut bad = violations(&(f_pre + &y), frames, fp, SAFETY_TOL);
    let null = (g * &y).norm();
    if null > NULL_SPACE_TOL {
        bad.push(Violation { finger: usize::MAX, kind: ConstraintKind::NullSpace, amount: null });
    }
    if !bad.is_empty() || report.status == SolveStatus::Infeasible {
        return Err(PlannerError::Infeasible { violations: bad });
    }
    Ok((y, report))
}

/// Everything the planner needs for one call.
#[derive(Debug, Clone)]
pub struct PlannerInputs {
    pub grasp: GraspState,
    pub framework: ContactFramework,
    pub friction: FrictionParams,
    /// Gravity wrench `[f; τ]` about the object centre.
    pub gravity_wrench: DVector<f64>,
    pub task_inertia: DMatrix<f64>,
    pub contact_velocity: DVector<f64>,
    /// Unconstrained task-space acceleration.
    pub alpha: DVector<f64>,
    pub warm_start: Option<DVector<f64>>,
    pub check_gradients: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpSummary {
    pub iterations: usize,
    pub status: SolveStatus,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePlan {
    pub f_ope: Vec<f64>,
    pub f_int_r: Vec<f64>,
    pub f_int_mu: Vec<f64>,
    pub f_c: Vec<f64>,
    /// Inward-normal component of `f_c` per finger.
    pub f_perp: Vec<f64>,
    pub f_par: Vec<f64>,
    pub margins: Vec<ConeMargin>,
    pub nlp: Option<NlpSummary>,
}

impl ForcePlan {
    pub fn total(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.f_c)
    }

    pub fn friction_component(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.f_int_mu)
    }
}

/// Full planner: operational force, rigidity internal force, constraint
/// check of the preliminary force and, only on violation, the friction
/// program. Emits a plan only when it satisfies every contact constraint.
pub fn plan_contact_forces(input: &PlannerInputs) -> Result<ForcePlan, PlannerError> {
    let m = input.grasp.contact_count();
    if input.framework.vertex_count() != m {
        return Err(PlannerError::Dimension(format!(
            "framework has {} vertices, grasp has {m} contacts",
            input.framework.vertex_count()
        )));
    }
    input.friction.validate()?;
    let eval = input.framework.evaluate()?;
    if !eval.is_rigid {
        return Err(PlannerError::NotRigid { rank: eval.rank, expected: 3 * m - 6 });
    }
    let g = input.grasp.grasp_matrix();
    let frames = input.grasp.contact_frames()?;
    let f_ope = operational_force(&g, &input.gravity_wrench)?;
    let r_dot = input.framework.rigidity_matrix_rate(&input.contact_velocity)?;
    let f_int_r =
        rigidity_internal_force(&eval.matrix, &r_dot, &input.task_inertia, &input.contact_velocity, &input.alpha)?;
    let f_pre = &f_ope + &f_int_r;

    let pre_margins = grasp::cone_margin(&grasp::to_local(&f_pre, &frames), &input.friction);
    let needs_nlp = pre_margins.iter().any(|mg| !mg.is_ok());
    let (f_int_mu, nlp) = if needs_nlp {
        let (y, rep) = friction_internal_force(
            &f_pre,
            &g,
            &frames,
            &input.friction,
            input.warm_start.as_ref(),
            input.check_gradients,
        )?;
        (y, Some(NlpSummary { iterations: rep.iterations, status: rep.status, objective: rep.objective }))
    } else {
        (DVector::zeros(3 * m), None)
    };
    let f_c = &f_ope + (&f_int_r + &f_int_mu);

    let mut bad = violations(&f_c, &frames, &input.friction, SAFETY_TOL);
    let balance = (&g * &f_c + &input.gravity_wrench).norm();
    if balance > SAFETY_TOL {
        bad.push(Violation { finger: usize::MAX, kind: ConstraintKind::NullSpace, amount: balance });
    }
    if !bad.is_empty() {
        return Err(PlannerError::Infeasible { violations: bad });
    }
    let local = grasp::to_local(&f_c, &frames);
    let (perp, par) = grasp::decompose_force(&f_c, &frames);
    Ok(ForcePlan {
        f_ope: f_ope.as_slice().to_vec(),
        f_int_r: f_int_r.as_slice().to_vec(),
        f_int_mu: f_int_mu.as_slice().to_vec(),
        f_c: f_c.as_slice().to_vec(),
        f_perp: perp.as_slice().to_vec(),
        f_par: par.as_slice().to_vec(),
        margins: grasp::cone_margin(&local, &input.friction),
        nlp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Four horizontal contacts around a vertical axis, gravity along −z.
    fn cup(mass: f64) -> (GraspState, ContactFramework) {
        let r = 0.03;
        let c = Vector3::new(0.0, 0.0, 0.07);
        let contacts: Vec<_> = [(r, 0.0), (0.0, r), (-r, 0.0), (0.0, -r)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| c + Vector3::new(x, y, if i % 2 == 0 { 0.004 } else { -0.004 }))
            .collect();
        let normals: Vec<_> = contacts.iter().map(|p| Vector3::new(p.x, p.y, 0.0).normalize()).collect();
        let gs = GraspState::new(contacts.clone(), normals, c, Matrix3::identity(), mass).unwrap();
        (gs, ContactFramework::complete(contacts))
    }

    fn inputs(mass: f64, fp: FrictionParams) -> PlannerInputs {
        let (gs, fw) = cup(mass);
        PlannerInputs {
            gravity_wrench: gravity_wrench(mass, &-Vector3::z()),
            grasp: gs,
            framework: fw,
            friction: fp,
            task_inertia: DMatrix::identity(12, 12) * 0.05,
            contact_velocity: DVector::zeros(12),
            alpha: DVector::zeros(12),
            warm_start: None,
            check_gradients: true,
        }
    }

    #[test]
    fn zero_gravity_gives_zero_operational_force() {
        let (gs, _) = cup(0.0);
        let f = operational_force(&gs.grasp_matrix(), &DVector::zeros(6)).unwrap();
        assert_eq!(f.norm(), 0.0);
    }

    #[test]
    fn cup_operational_force_split() {
        let (gs, _) = cup(0.053);
        let g = gs.grasp_matrix();
        let go = DVector::from_vec(vec![0.0, 0.0, -0.52, 0.0, 0.0, 0.0]);
        let f = operational_force(&g, &go).unwrap();
        let fz: f64 = (0..4).map(|i| f[3 * i + 2]).sum();
        assert!((fz - 0.52).abs() < 1e-12);
        assert!((&g * &f + &go).norm() < 1e-12);
        // Oracle: the symmetric split obtained from the normal equations.
        let oracle = g.transpose() * (&g * g.transpose()).try_inverse().unwrap() * -&go;
        assert!((f - oracle).norm() < 1e-12);
    }

    #[test]
    fn degenerate_grasp_rejected() {
        let g = grasp::grasp_matrix(&[Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0], &Vector3::zeros());
        assert!(matches!(operational_force(&g, &DVector::zeros(6)), Err(PlannerError::DegenerateGrasp { .. })));
    }

    #[test]
    fn rigidity_force_vanishes_for_static_and_translation() {
        let (_, fw) = cup(0.0);
        let r = fw.rigidity_matrix();
        let m = DMatrix::identity(12, 12);
        let z = DVector::zeros(12);
        let rd = fw.rigidity_matrix_rate(&z).unwrap();
        assert_eq!(rigidity_internal_force(&r, &rd, &m, &z, &z).unwrap().norm(), 0.0);
        let alpha = linalg::stack3(&vec![Vector3::new(0.3, -0.2, 1.0); 4]);
        assert!(rigidity_internal_force(&r, &rd, &m, &z, &alpha).unwrap().norm() < 1e-12);
    }

    #[test]
    fn singular_inertia_rejected() {
        let (_, fw) = cup(0.0);
        let r = fw.rigidity_matrix();
        let z = DVector::zeros(12);
        let e = rigidity_internal_force(&r, &r, &DMatrix::zeros(12, 12), &z, &z).unwrap_err();
        assert_eq!(e, PlannerError::SingularInertia);
    }

    #[test]
    fn inside_cone_skips_friction_program() {
        let mut inp = inputs(0.0, FrictionParams::new(0.65, 0.0, 1.0).unwrap());
        inp.gravity_wrench = DVector::zeros(6);
        let plan = plan_contact_forces(&inp).unwrap();
        assert!(plan.nlp.is_none());
        assert_eq!(plan.total().norm(), 0.0);
    }

    #[test]
    fn gravity_load_takes_program_path() {
        let fp = FrictionParams::new(0.65, 0.1, 0.5).unwrap();
        let inp = inputs(0.053, fp);
        let plan = plan_contact_forces(&inp).unwrap();
        assert!(plan.nlp.is_some());
        assert!(plan.margins.iter().all(|m| m.ratio <= 1.0 + 1e-9));
        let g = inp.grasp.grasp_matrix();
        assert!((&g * plan.total() + &inp.gravity_wrench).norm() <= 1e-6);
        assert!((&g * plan.friction_component()).norm() <= 1e-8);
        for k in 0..12 {
            assert_eq!(plan.f_c[k], plan.f_ope[k] + (plan.f_int_r[k] + plan.f_int_mu[k]));
        }
    }

    #[test]
    fn symmetric_squeeze_matches_bisection() {
        let fp = FrictionParams::new(0.65, 0.1, 0.5).unwrap();
        let inp = inputs(0.053, fp);
        let plan = plan_contact_forces(&inp).unwrap();
        // Reduced problem: equal normal force s on each finger with the
        // operational load; the objective is decreasing in s, so bisection
        // on its derivative's sign over [f_min, f_max] lands on f_max.
        let t = 0.053 * STANDARD_GRAVITY / 4.0;
        let dobj = |s: f64| -4.0 * t * t / (fp.mu * fp.mu * s * s * s);
        let (mut a, mut b) = (fp.f_n_min, fp.f_n_max);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if dobj(mid) < 0.0 {
                a = mid
            } else {
                b = mid
            }
        }
        for &p in &plan.f_perp {
            assert!((p - a).abs() < 1e-6, "{p} vs {a}");
        }
        for &t_i in &plan.f_par {
            assert!((t_i - t).abs() < 1e-6);
        }
    }

    #[test]
    fn low_finger_is_raised() {
        let fp = FrictionParams::new(0.65, 0.1, 0.5).unwrap();
        let (gs, _) = cup(0.0);
        let frames = gs.contact_frames().unwrap();
        let mut local = vec![Vector3::new(0.0, 0.0, 0.2); 4];
        local[2].z = 0.05;
        // Null-space consistent start: project onto the internal forces.
        let f = grasp::to_world(&local, &frames);
        let g = gs.grasp_matrix();
        let f_pre = &f - linalg::pinv(&g) * (&g * &f);
        let (y, _) = friction_internal_force(&f_pre, &g, &frames, &fp, None, true).unwrap();
        assert!((&g * &y).norm() <= 1e-8);
        assert!(violations(&(f_pre + y), &frames, &fp, 1e-6).is_empty());
    }

    #[test]
    fn infeasible_bounds_reported() {
        // f_max too small to carry the load inside the cone.
        let fp = FrictionParams::new(0.3, 0.01, 0.05).unwrap();
        match plan_contact_forces(&inputs(0.053, fp)) {
            Err(PlannerError::Infeasible { violations }) => assert!(!violations.is_empty()),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_friction_flagged() {
        let fp = FrictionParams::new(0.65, 0.0, 0.5).unwrap();
        assert!(matches!(plan_contact_forces(&inputs(0.053, fp)), Err(PlannerError::DegenerateFriction(_))));
    }

    #[test]
    fn non_rigid_framework_rejected() {
        let mut inp = inputs(0.01, FrictionParams::new(0.65, 0.1, 0.5).unwrap());
        let pts = inp.framework.points().to_vec();
        inp.framework = ContactFramework::with_edges(pts, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        assert!(matches!(plan_contact_forces(&inp), Err(PlannerError::NotRigid { .. })));
    }

    proptest! {
        #[test]
        fn closed_form_matches_qp(coords in proptest::collection::vec(-0.05..0.05f64, 12),
                                  a in proptest::collection::vec(-1.0..1.0f64, 12),
                                  v in proptest::collection::vec(-0.1..0.1f64, 12),
                                  l in proptest::collection::vec(-1.0..1.0f64, 144)) {
            let pts: Vec<_> = coords.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
            let fw = ContactFramework::complete(pts);
            prop_assume!(fw.evaluate().unwrap().is_rigid);
            let r = fw.rigidity_matrix();
            prop_assume!(linalg::singular_values(&r)[5] > 1e-4);
            let v = DVector::from_vec(v);
            let alpha = DVector::from_vec(a);
            let lm = DMatrix::from_vec(12, 12, l);
            let m = &lm * lm.transpose() * 0.01 + DMatrix::identity(12, 12) * 0.01;
            let rd = fw.rigidity_matrix_rate(&v).unwrap();
            let f1 = rigidity_internal_force(&r, &rd, &m, &v, &alpha).unwrap();
            let f2 = rigidity_internal_force_qp(&r, &rd, &m, &v, &alpha).unwrap();
            prop_assert!((&f1 - &f2).norm() <= 1e-6 * f1.norm().max(1e-12));
        }

        #[test]
        fn friction_gradients_match(y in proptest::collection::vec(-0.05..0.05f64, 12)) {
            let fp = FrictionParams::new(0.65, 0.1, 0.5).unwrap();
            let (gs, _) = cup(0.053);
            let g = gs.grasp_matrix();
            let frames = gs.contact_frames().unwrap();
            let f_pre = operational_force(&g, &gravity_wrench(0.053, &-Vector3::z())).unwrap()
                + grasp::to_world(&vec![Vector3::new(0.0, 0.0, 0.3); 4], &frames);
            let nlp = FrictionNlp { f_pre, grasp: g, frames, params: fp };
            let audit = optimizer::audit_gradients(&nlp, &DVector::from_vec(y));
            prop_assert!(audit.max() <= 1e-4, "{audit:?}");
        }
    }
}
