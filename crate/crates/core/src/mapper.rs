//! Force-to-position mapping: compliance penetration, virtual fingertip
//! targets and the joint trajectory program that tracks them while steering
//! the object toward its terminal pose.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand::{HandError, HandModel, JointState};
use crate::linalg::skew;
use crate::optimizer::{self, NlpProblem, OptError, SolveStatus, SqpOptions};
use crate::so3::{self, So3Error};

pub use crate::so3::log as so3_log;

/// Newton tolerance used when polishing fingertip placements.
pub const IK_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapperError {
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error(transparent)]
    Optimizer(#[from] OptError),
    #[error(transparent)]
    So3(#[from] So3Error),
    #[error("virtual target of finger {finger} at step {step} is unreachable (residual {residual:.3e} m)")]
    Unreachable { finger: usize, step: usize, residual: f64 },
    #[error("invalid mapper configuration: {0}")]
    Config(String),
}

/// Per-axis virtual compliance in the contact frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplianceGains {
    /// `[c_x, c_y, c_z]` in length units per newton.
    pub c: [f64; 3],
    /// Metres per length unit of `c` (millimetres by default).
    #[serde(default = "default_unit")]
    pub unit: f64,
}

fn default_unit() -> f64 {
    1e-3
}

impl ComplianceGains {
    pub fn new(c: [f64; 3]) -> Result<Self, MapperError> {
        let g = ComplianceGains { c, unit: default_unit() };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), MapperError> {
        if self.c.iter().any(|&v| !(v > 0.0)) || !(self.unit > 0.0) {
            return Err(MapperError::Config(format!("compliance gains must be positive, got {:?}", self.c)));
        }
        Ok(())
    }

    /// Stiffness (N/m) realising these gains.
    pub fn stiffness(&self) -> Vector3<f64> {
        Vector3::new(1.0, 1.0, 1.0).component_div(&(Vector3::from(self.c) * self.unit))
    }
}

/// `D = diag(c) f` in the gain's length unit.
pub fn penetration_distance(c: &ComplianceGains, f_local: &Vector3<f64>) -> Vector3<f64> {
    Vector3::from(c.c).component_mul(f_local)
}

/// Penetration of every finger, in metres, rotated to world coordinates.
pub fn penetration_world(c: &ComplianceGains, f_local: &[Vector3<f64>], frames: &[Matrix3<f64>]) -> Vec<Vector3<f64>> {
    f_local.iter().zip(frames).map(|(f, r)| r * penetration_distance(c, f) * c.unit).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualTargets {
    pub x_cd: Vec<Vector3<f64>>,
    pub r_d: Vec<Matrix3<f64>>,
}

/// `x_cd = x_c + D` with `D` already in world metres.
pub fn virtual_targets(x_c: &[Vector3<f64>], d_world: &[Vector3<f64>], r_d: Vec<Matrix3<f64>>) -> VirtualTargets {
    VirtualTargets { x_cd: x_c.iter().zip(d_world).map(|(x, d)| x + d).collect(), r_d }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapperConfig {
    /// Terminal pose weights: position (3) then orientation (3).
    pub lambda1: [f64; 6],
    pub lambda2: [f64; 3],
    /// Allowed fingertip distance from its virtual target (m).
    pub epsilon: f64,
    /// Waypoint convergence threshold (m).
    pub delta: f64,
    pub horizon: usize,
    pub iter: usize,
    /// Largest object translation commanded per horizon step (m).
    #[serde(default = "default_max_translation")]
    pub max_step_translation: f64,
    /// Largest object rotation commanded per horizon step (rad).
    #[serde(default = "default_max_rotation")]
    pub max_step_rotation: f64,
    #[serde(default = "default_feas_tol")]
    pub feas_tol: f64,
    #[serde(default = "default_solver_iter")]
    pub solver_max_iter: usize,
}

fn default_max_translation() -> f64 {
    0.01
}
fn default_max_rotation() -> f64 {
    0.1
}
fn default_feas_tol() -> f64 {
    1e-8
}
fn default_solver_iter() -> usize {
    200
}

impl Default for MapperConfig {
    fn default() -> Self {
        MapperConfig {
            lambda1: [30.0, 30.0, 30.0, 0.01, 0.01, 0.01],
            lambda2: [0.1, 0.1, 0.1],
            epsilon: 1e-9,
            delta: 1e-3,
            horizon: 2,
            iter: 20,
            max_step_translation: default_max_translation(),
            max_step_rotation: default_max_rotation(),
            feas_tol: default_feas_tol(),
            solver_max_iter: default_solver_iter(),
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<(), MapperError> {
        let bad = |m: &str| Err(MapperError::Config(m.to_string()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.lambda1.iter().chain(self.lambda2.iter()).any(|&w| !(w >= 0.0)) {
            return bad("weights must be non-negative");
        }
        if !(self.max_step_translation > 0.0 && self.max_step_rotation > 0.0) {
            return bad("per-step limits must be positive");
        }
        Ok(())
    }

    /// Whether the fingertip constraint is enforced as an equality.
    pub fn tight(&self) -> bool {
        self.epsilon <= self.feas_tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { position: Vector3::zeros(), rotation: Matrix3::identity() }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation * p
    }
}

/// Object-frame description of one grasp, fixed after the initial grasp.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspAnchors {
    /// Contact points in the object frame.
    pub contacts: Vec<Vector3<f64>>,
    /// Fingertip orientations expressed in the object frame.
    pub tip_rotations: Vec<Matrix3<f64>>,
}

impl GraspAnchors {
    /// `R_d,i = R_o,d · (R_o0ᵀ R_fin,i(q_init))`.
    pub fn desired_rotations(&self, object: &Matrix3<f64>) -> Vec<Matrix3<f64>> {
        self.tip_rotations.iter().map(|r| object * r).collect()
    }
}

/// Fractions `(translation, rotation)` of the way from the current to the
/// terminal pose reached at step `t` (1-based). Each component is limited
/// by its own per-step cap.
pub fn step_fraction(cfg: &MapperConfig, current: &Pose, target: &Pose, t: usize) -> (f64, f64) {
    let dp = (target.position - current.position).norm();
    let dr = so3::angle_between(&current.rotation, &target.rotation);
    let frac = |d: f64, cap: f64| if d > 0.0 { (t as f64 * cap / d).min(1.0) } else { 1.0 };
    (frac(dp, cfg.max_step_translation), frac(dr, cfg.max_step_rotation))
}

/// Joint trajectory program. Variables are
/// `[q_1 … q_T, p_o, ω, s⁺, s⁻]` with `R_o = R_cur exp(ω)`; the terminal pose
/// error enters as a weighted ℓ1 norm through the split slacks `s± ≥ 0`.
#[derive(Debug, Clone)]
pub struct JointTrajectoryNlp<'a> {
    pub model: &'a HandModel,
    pub current: Pose,
    pub target: Pose,
    /// Object-frame virtual points `b_i` (contact plus penetration).
    pub body_targets: Vec<Vector3<f64>>,
    pub desired_rotations: Vec<Matrix3<f64>>,
    /// Per-step `(translation, rotation)` fractions.
    pub fractions: Vec<(f64, f64)>,
    /// Box bound on each component of `ω`, so the first step rotates the
    /// object by at most the per-step cap even when the terminal rotation
    /// is left free by a small weight.
    pub rotation_bound: f64,
    pub cfg: MapperConfig,
}

impl<'a> JointTrajectoryNlp<'a> {
    pub fn new(
        model: &'a HandModel,
        current: Pose,
        target: Pose,
        body_targets: Vec<Vector3<f64>>,
        desired_rotations: Vec<Matrix3<f64>>,
        cfg: MapperConfig,
    ) -> Self {
        let fractions = (1..=cfg.horizon).map(|t| step_fraction(&cfg, &current, &target, t)).collect();
        let rotation_bound = so3::angle_between(&current.rotation, &target.rotation).max(cfg.max_step_rotation);
        JointTrajectoryNlp { model, current, target, body_targets, desired_rotations, fractions, rotation_bound, cfg }
    }

    fn nq(&self) -> usize {
        self.model.dof()
    }
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }
    fn po_index(&self) -> usize {
        self.horizon() * self.nq()
    }
    fn slack_index(&self) -> usize {
        self.po_index() + 6
    }

    pub fn q_at(&self, x: &DVector<f64>, t: usize) -> DVector<f64> {
        x.rows(t * self.nq(), self.nq()).into_owned()
    }

    fn po(&self, x: &DVector<f64>) -> Vector3<f64> {
        Vector3::new(x[self.po_index()], x[self.po_index() + 1], x[self.po_index() + 2])
    }

    fn omega(&self, x: &DVector<f64>) -> Vector3<f64> {
        let k = self.po_index() + 3;
        Vector3::new(x[k], x[k + 1], x[k + 2])
    }

    /// Object pose along the horizon for terminal variables `(p_o, ω)`.
    pub fn step_pose(&self, p_o: &Vector3<f64>, omega: &Vector3<f64>, t: usize) -> Pose {
        let (a, b) = self.fractions[t];
        Pose {
            position: self.current.position + (p_o - self.current.position) * a,
            rotation: self.current.rotation * so3::exp(&(omega * b)),
        }
    }

    /// Virtual targets at step `t` (0-based).
    pub fn targets_at(&self, p_o: &Vector3<f64>, omega: &Vector3<f64>, t: usize) -> Vec<Vector3<f64>> {
        let pose = self.step_pose(p_o, omega, t);
        self.body_targets.iter().map(|b| pose.transform(b)).collect()
    }

    fn pose_error(&self, x: &DVector<f64>) -> DVector<f64> {
        let ep = self.po(x) - self.target.position;
        let r_o = self.current.rotation * so3::exp(&self.omega(x));
        let er = so3::log_unchecked(&(self.target.rotation.transpose() * r_o));
        DVector::from_vec(vec![ep.x, ep.y, ep.z, er.x, er.y, er.z])
    }

    fn orientation_errors(&self, q: &DVector<f64>) -> Vec<(Vector3<f64>, Matrix3<f64>)> {
        self.model
            .fingertip_poses(q)
            .iter()
            .zip(&self.desired_rotations)
            .map(|(pose, rd)| (so3::log_unchecked(&(rd.transpose() * pose.rotation)), pose.rotation))
            .collect()
    }

    /// Fingertip position residuals `p_fin − x_cd` for every step and finger.
    pub fn residuals(&self, x: &DVector<f64>) -> Vec<Vec<Vector3<f64>>> {
        let (po, om) = (self.po(x), self.omega(x));
        (0..self.horizon())
            .map(|t| {
                let tips = self.model.fingertip_positions(&self.q_at(x, t));
                tips.iter().zip(self.targets_at(&po, &om, t)).map(|(p, x)| p - x).collect()
            })
            .collect()
    }

    /// Jacobian of step `t`'s residuals w.r.t. the full variable vector.
    fn residual_jacobian(&self, x: &DVector<f64>, t: usize) -> DMatrix<f64> {
        let m = self.model.finger_count();
        let n = self.model.joints_per_finger();
        let q = self.q_at(x, t);
        let (a, b) = self.fractions[t];
        let om = self.omega(x);
        let pose = self.step_pose(&self.po(x), &om, t);
        let jr = so3::right_jacobian(&(om * b));
        let mut jac = DMatrix::zeros(3 * m, self.dim());
        for i in 0..m {
            let qi = &q.as_slice()[self.model.finger_joints(i)];
            let jp = self.model.fingers[i].position_jacobian(qi);
            jac.view_mut((3 * i, t * self.nq() + i * n), (3, n)).copy_from(&jp);
            let dpo = Matrix3::identity() * -a;
            jac.view_mut((3 * i, self.po_index()), (3, 3)).copy_from(&dpo);
            let dom = pose.rotation * skew(&self.body_targets[i]) * jr * b;
            jac.view_mut((3 * i, self.po_index() + 3), (3, 3)).copy_from(&dom);
        }
        jac
    }
}

impl NlpProblem for JointTrajectoryNlp<'_> {
    fn dim(&self) -> usize {
        self.horizon() * self.nq() + 18
    }

    fn num_eq(&self) -> usize {
        6 + if self.cfg.tight() { 3 * self.model.finger_count() * self.horizon() } else { 0 }
    }

    fn num_ineq(&self) -> usize {
        if self.cfg.tight() {
            0
        } else {
            self.model.finger_count() * self.horizon()
        }
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        let s = self.slack_index();
        let mut f = 0.0;
        for k in 0..6 {
            f += self.cfg.lambda1[k] * (x[s + k] + x[s + 6 + k]);
        }
        for t in 0..self.horizon() {
            for (e, _) in self.orientation_errors(&self.q_at(x, t)) {
                for k in 0..3 {
                    f += 0.5 * self.cfg.lambda2[k] * e[k] * e[k];
                }
            }
        }
        f
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        let s = self.slack_index();
        for k in 0..6 {
            g[s + k] = self.cfg.lambda1[k];
            g[s + 6 + k] = self.cfg.lambda1[k];
        }
        let n = self.model.joints_per_finger();
        let w = Vector3::from(self.cfg.lambda2);
        for t in 0..self.horizon() {
            let q = self.q_at(x, t);
            for (i, (e, r_fin)) in self.orientation_errors(&q).into_iter().enumerate() {
                let qi = &q.as_slice()[self.model.finger_joints(i)];
                let axes = self.model.fingers[i].rotation_jacobian(qi);
                let de = so3::right_jacobian_inv(&e) * r_fin.transpose() * axes;
                let gi = de.transpose() * w.component_mul(&e);
                let mut v = g.rows_mut(t * self.nq() + i * n, n);
                v += &gi;
            }
        }
        g
    }

    fn eq_constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        let s = self.slack_index();
        let e = self.pose_error(x);
        let mut c = DVector::zeros(self.num_eq());
        for k in 0..6 {
            c[k] = x[s + k] - x[s + 6 + k] - e[k];
        }
        if self.cfg.tight() {
            let mut row = 6;
            for step in self.residuals(x) {
                for r in step {
                    c.rows_mut(row, 3).copy_from(&r);
                    row += 3;
                }
            }
        }
        c
    }

    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.num_eq(), self.dim());
        let s = self.slack_index();
        let po = self.po_index();
        for k in 0..6 {
            j[(k, s + k)] = 1.0;
            j[(k, s + 6 + k)] = -1.0;
        }
        for k in 0..3 {
            j[(k, po + k)] = -1.0;
        }
        let om = self.omega(x);
        let e = self.pose_error(x);
        let er = Vector3::new(e[3], e[4], e[5]);
        let de = so3::right_jacobian_inv(&er) * so3::right_jacobian(&om);
        j.view_mut((3, po + 3), (3, 3)).copy_from(&(-de));
        if self.cfg.tight() {
            let rows = 3 * self.model.finger_count();
            for t in 0..self.horizon() {
                j.view_mut((6 + t * rows, 0), (rows, self.dim())).copy_from(&self.residual_jacobian(x, t));
            }
        }
        j
    }

    fn ineq_constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.cfg.tight() {
            return DVector::zeros(0);
        }
        let eps2 = self.cfg.epsilon * self.cfg.epsilon;
        DVector::from_iterator(
            self.num_ineq(),
            self.residuals(x).into_iter().flatten().map(|r| eps2 - r.norm_squared()),
        )
    }

    fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        if self.cfg.tight() {
            return DMatrix::zeros(0, self.dim());
        }
        let m = self.model.finger_count();
        let res = self.residuals(x);
        let mut j = DMatrix::zeros(self.num_ineq(), self.dim());
        for t in 0..self.horizon() {
            let jt = self.residual_jacobian(x, t);
            for i in 0..m {
                let r = res[t][i];
                let row = jt.rows(3 * i, 3).tr_mul(&r).transpose() * -2.0;
                j.set_row(t * m + i, &row);
            }
        }
        j
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.dim();
        let mut lo = DVector::from_element(n, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(n, f64::INFINITY);
        for t in 0..self.horizon() {
            lo.rows_mut(t * self.nq(), self.nq()).copy_from(&self.model.joint_lower);
            hi.rows_mut(t * self.nq(), self.nq()).copy_from(&self.model.joint_upper);
        }
        lo.rows_mut(self.po_index() + 3, 3).fill(-self.rotation_bound);
        hi.rows_mut(self.po_index() + 3, 3).fill(self.rotation_bound);
        lo.rows_mut(self.slack_index(), 12).fill(0.0);
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySolution {
    pub q: Vec<DVector<f64>>,
    pub terminal: Pose,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
    /// Largest fingertip distance from its virtual target over the horizon.
    pub max_target_error: f64,
}

/// Solves the joint trajectory program.
///
/// `body_targets` are object-frame points (contact plus penetration) that
/// the fingertips must follow as the object moves from `current` toward
/// `target`. The returned trajectory is polished so every fingertip sits
/// on its target to Newton precision.
#[allow(clippy::too_many_arguments)]
pub fn solve_joint_trajectory(
    model: &HandModel,
    q0: &JointState,
    current: Pose,
    target: Pose,
    body_targets: &[Vector3<f64>],
    desired_rotations: &[Matrix3<f64>],
    cfg: &MapperConfig,
    check_gradients: bool,
) -> Result<TrajectorySolution, MapperError> {
    cfg.validate()?;
    model.check_limits(&q0.q)?;
    so3::log(&current.rotation)?;
    so3::log(&target.rotation)?;
    let m = model.finger_count();
    if body_targets.len() != m || desired_rotations.len() != m {
        return Err(MapperError::Config(format!("expected {m} targets and rotations")));
    }
    let nlp =
        JointTrajectoryNlp::new(model, current, target, body_targets.to_vec(), desired_rotations.to_vec(), cfg.clone());
    let t_len = cfg.horizon;
    let nq = model.dof();
    let omega_d = so3::log_unchecked(&(current.rotation.transpose() * target.rotation));

    // Warm start: per-step fingertip IK on the nominal terminal pose.
    let mut x0 = DVector::zeros(nlp.dim());
    let mut seed = q0.q.clone();
    for t in 0..t_len {
        let targets = nlp.targets_at(&target.position, &omega_d, t);
        seed = place_tips(model, &targets, &seed, t)?;
        x0.rows_mut(t * nq, nq).copy_from(&seed);
    }
    x0.fixed_rows_mut::<3>(nlp.po_index()).copy_from(&target.position);
    x0.fixed_rows_mut::<3>(nlp.po_index() + 3).copy_from(&omega_d);
    let e0 = nlp.pose_error(&x0);
    for k in 0..6 {
        x0[nlp.slack_index() + k] = e0[k].max(0.0);
        x0[nlp.slack_index() + 6 + k] = (-e0[k]).max(0.0);
    }

    let opts =
        SqpOptions { feas_tol: cfg.feas_tol, max_iter: cfg.solver_max_iter, check_gradients, ..SqpOptions::default() };
    let report = optimizer::solve_nlp(&nlp, &x0, &opts)?;
    let x = report.x.clone();
    let (po, om) = (nlp.po(&x), nlp.omega(&x));

    let mut q = Vec::with_capacity(t_len);
    let mut worst = 0.0_f64;
    for t in 0..t_len {
        let targets = nlp.targets_at(&po, &om, t);
        let qt = place_tips(model, &targets, &nlp.q_at(&x, t), t)?;
        for (p, xt) in model.fingertip_positions(&qt).iter().zip(&targets) {
            worst = worst.max((p - xt).norm());
        }
        q.push(qt);
    }
    Ok(TrajectorySolution {
        q,
        terminal: Pose { position: po, rotation: current.rotation * so3::exp(&om) },
        status: report.status,
        iterations: report.iterations,
        objective: report.objective,
        max_target_error: worst,
    })
}

fn place_tips(
    model: &HandModel,
    targets: &[Vector3<f64>],
    seed: &DVector<f64>,
    step: usize,
) -> Result<DVector<f64>, MapperError> {
    let mut q = seed.clone();
    for (i, target) in targets.iter().enumerate() {
        q = model.solve_fingertip_position(i, target, &q, IK_TOL).map_err(|e| match e {
            HandError::Unreachable { finger, residual } => MapperError::Unreachable { finger, step, residual },
            other => MapperError::Hand(other),
        })?;
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grasp_setup() -> (HandModel, DVector<f64>, Pose, Vec<Vector3<f64>>, Vec<Matrix3<f64>>) {
        let model = HandModel::four_finger_default();
        let center = Vector3::new(0.0, 0.0, 0.07);
        let r = 0.03;
        let contacts: Vec<Vector3<f64>> =
            [(r, 0.0), (0.0, r), (-r, 0.0), (0.0, -r)].iter().map(|&(x, y)| Vector3::new(x, y, 0.0)).collect();
        let world: Vec<_> = contacts.iter().map(|c| c + center).collect();
        let q = model.solve_fingertip_positions(&world, &DVector::from_element(16, 0.3), 1e-13).unwrap();
        let rot: Vec<_> = model.fingertip_poses(&q).iter().map(|p| p.rotation).collect();
        (model, q, Pose { position: center, rotation: Matrix3::identity() }, contacts, rot)
    }

    #[test]
    fn penetration_examples() {
        let c = ComplianceGains::new([2.0, 2.0, 5.0]).unwrap();
        assert_eq!(penetration_distance(&c, &Vector3::new(0.0, 0.0, 1.0)), Vector3::new(0.0, 0.0, 5.0));
        assert_eq!(penetration_distance(&c, &Vector3::zeros()), Vector3::zeros());
        assert!(ComplianceGains::new([2.0, 0.0, 5.0]).is_err());
    }

    #[test]
    fn virtual_target_round_trip() {
        let x = vec![Vector3::new(0.03, 0.0, 0.07)];
        let d = vec![Vector3::new(0.0, 0.0, -0.005)];
        let vt = virtual_targets(&x, &d, vec![Matrix3::identity()]);
        assert_eq!(vt.x_cd[0], Vector3::new(0.03, 0.0, 0.065));
        assert_eq!(vt.x_cd[0] - d[0], x[0]);
        let vt = virtual_targets(&x, &[Vector3::zeros()], vec![Matrix3::identity()]);
        assert_eq!(vt.x_cd, x);
    }

    #[test]
    fn inward_penetration_sign() {
        // Outward normal +x: the contact frame's z points to −x.
        let frame = crate::grasp::contact_frame(&Vector3::x()).unwrap();
        let c = ComplianceGains::new([2.0, 2.0, 5.0]).unwrap();
        let d = penetration_world(&c, &[Vector3::new(0.0, 0.0, 1.0)], &[frame]);
        assert!((d[0] - Vector3::new(-0.005, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn fixed_point_trajectory() {
        let (model, q, pose, contacts, rot) = grasp_setup();
        let cfg = MapperConfig::default();
        let sol =
            solve_joint_trajectory(&model, &JointState::at_rest(q.clone()), pose, pose, &contacts, &rot, &cfg, true)
                .unwrap();
        for qt in &sol.q {
            assert!((qt - &q).amax() < 1e-9);
        }
        assert!(sol.objective < 1e-12);
    }

    #[test]
    fn cup_waypoint_step() {
        let (model, q, pose, contacts, rot) = grasp_setup();
        let cfg = MapperConfig::default();
        let target = Pose { position: pose.position + Vector3::new(0.0, 0.03, 0.03), ..pose };
        let sol =
            solve_joint_trajectory(&model, &JointState::at_rest(q), pose, target, &contacts, &rot, &cfg, true).unwrap();
        assert!(sol.max_target_error <= cfg.epsilon + cfg.feas_tol);
        assert!((sol.terminal.position - target.position).norm() < 1e-6);
        for qt in &sol.q {
            model.check_limits(qt).unwrap();
        }
    }

    #[test]
    fn unreachable_target_errors() {
        let (model, q, pose, contacts, rot) = grasp_setup();
        let far = Pose { position: pose.position + Vector3::new(0.0, 0.0, 0.5), ..pose };
        let cfg = MapperConfig { max_step_translation: 1.0, ..MapperConfig::default() };
        let e = solve_joint_trajectory(&model, &JointState::at_rest(q), pose, far, &contacts, &rot, &cfg, false);
        assert!(matches!(e, Err(MapperError::Unreachable { .. })), "{e:?}");
    }

    #[test]
    fn step_fraction_limits() {
        let cfg = MapperConfig::default();
        let a = Pose::identity();
        let b = Pose { position: Vector3::new(0.0, 0.03, 0.0), ..a };
        assert!((step_fraction(&cfg, &a, &b, 1).0 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(step_fraction(&cfg, &a, &b, 1).1, 1.0);
        assert_eq!(step_fraction(&cfg, &a, &b, 5), (1.0, 1.0));
        assert_eq!(step_fraction(&cfg, &a, &a, 1), (1.0, 1.0));
        let c = Pose { rotation: so3::exp(&Vector3::new(0.0, 0.0, 0.4)), ..b };
        let (ft, fr) = step_fraction(&cfg, &a, &c, 1);
        assert!((ft - 1.0 / 3.0).abs() < 1e-12 && (fr - 0.25).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn trajectory_gradients_match(dq in proptest::collection::vec(-0.05..0.05f64, 32),
                                      dp in proptest::collection::vec(-0.01..0.01f64, 6),
                                      eps_loose in proptest::bool::ANY) {
            let (model, q, pose, contacts, rot) = grasp_setup();
            let mut cfg = MapperConfig::default();
            if eps_loose {
                cfg.epsilon = 1e-3;
            }
            let target = Pose { position: pose.position + Vector3::new(0.0, 0.02, 0.01), rotation: so3::exp(&Vector3::new(0.0, 0.0, 0.1)) };
            let nlp = JointTrajectoryNlp::new(&model, pose, target, contacts, rot, cfg);
            let mut x = DVector::zeros(nlp.dim());
            for t in 0..2 {
                for k in 0..16 {
                    x[t * 16 + k] = q[k] + dq[t * 16 + k];
                }
            }
            for k in 0..3 {
                x[32 + k] = target.position[k] + dp[k];
                x[35 + k] = 0.1 * dp[3 + k] / 0.01;
            }
            let audit = optimizer::audit_gradients(&nlp, &x);
            prop_assert!(audit.max() <= 1e-4, "{audit:?}");
        }
    }
}
