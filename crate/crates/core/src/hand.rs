//! Kinematic and inertial model of an m-finger, n-joint-per-finger hand.
//!
//! Every finger is a serial chain of revolute joints. Joint `k` sits at a
//! fixed translation from joint `k-1` (expressed in the frame of joint
//! `k-1` after its rotation), and the fingertip sits at a fixed offset from
//! the last joint. Link masses are lumped at the distal end of each link.

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Singular-value floor of the hand Jacobian below which the task-space
/// inertia is refused.
pub const SINGULARITY_TOL: f64 = 1e-6;

/// Slack allowed when checking joint limits.
const LIMIT_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandError {
    #[error("joint {index} = {value} outside [{lower}, {upper}]")]
    JointLimit { index: usize, value: f64, lower: f64, upper: f64 },
    #[error("expected {expected} joint values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("hand Jacobian is near singular (smallest singular value {sigma_min:.3e})")]
    Singular { sigma_min: f64 },
    #[error("invalid hand description: {0}")]
    Invalid(String),
    #[error("fingertip {finger} cannot reach target (residual {residual:.3e} m)")]
    Unreachable { finger: usize, residual: f64 },
}

/// One revolute joint and the link that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    /// Translation from the previous joint frame to this joint.
    pub offset: Vector3<f64>,
    pub axis: Unit<Vector3<f64>>,
    /// Point mass lumped at the distal end of the link (kg).
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    /// Pose of the finger base in the palm frame.
    pub base: Isometry3<f64>,
    pub links: Vec<Link>,
    pub tip_offset: Vector3<f64>,
}

impl KinematicChain {
    pub fn joint_count(&self) -> usize {
        self.links.len()
    }

    /// Joint origins and world axes, plus the fingertip pose.
    pub fn frames(&self, q: &[f64]) -> (Vec<(Vector3<f64>, Vector3<f64>)>, Isometry3<f64>) {
        let mut t = self.base;
        let mut joints = Vec::with_capacity(self.links.len());
        for (link, &angle) in self.links.iter().zip(q) {
            t *= Translation3::from(link.offset);
            let axis_world = t.rotation * link.axis.into_inner();
            joints.push((t.translation.vector, axis_world));
            t *= UnitQuaternion::from_axis_angle(&link.axis, angle);
        }
        t *= Translation3::from(self.tip_offset);
        (joints, t)
    }

    pub fn tip_pose(&self, q: &[f64]) -> Isometry3<f64> {
        self.frames(q).1
    }

    /// 3×n positional Jacobian of the fingertip.
    pub fn position_jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        let (joints, tip) = self.frames(q);
        let p = tip.translation.vector;
        let mut j = DMatrix::zeros(3, joints.len());
        for (k, (origin, axis)) in joints.iter().enumerate() {
            j.fixed_view_mut::<3, 1>(0, k).copy_from(&axis.cross(&(p - origin)));
        }
        j
    }

    /// 3×n angular Jacobian (world joint axes).
    pub fn rotation_jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        let (joints, _) = self.frames(q);
        let mut j = DMatrix::zeros(3, joints.len());
        for (k, (_, axis)) in joints.iter().enumerate() {
            j.fixed_view_mut::<3, 1>(0, k).copy_from(axis);
        }
        j
    }

    /// Positions of the lumped link masses with their positional Jacobians.
    fn mass_points(&self, q: &[f64]) -> Vec<(f64, DMatrix<f64>)> {
        let (joints, tip) = self.frames(q);
        let n = joints.len();
        (0..n)
            .map(|l| {
                let point = if l + 1 < n { joints[l + 1].0 } else { tip.translation.vector };
                let mut j = DMatrix::zeros(3, n);
                for (k, (origin, axis)) in joints.iter().enumerate().take(l + 1) {
                    j.fixed_view_mut::<3, 1>(0, k).copy_from(&axis.cross(&(point - origin)));
                }
                (self.links[l].mass, j)
            })
            .collect()
    }
}

/// Joint-space inertia model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InertiaModel {
    /// Composite point-mass inertia `Σ m_l J_lᵀ J_l` plus a rotor armature
    /// on the diagonal.
    PointMass { armature: f64 },
    /// Configuration-independent diagonal inertia (one value per joint).
    Diagonal { values: Vec<f64> },
}

impl Default for InertiaModel {
    fn default() -> Self {
        InertiaModel::PointMass { armature: 1e-5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    pub fingers: Vec<KinematicChain>,
    pub joint_lower: DVector<f64>,
    pub joint_upper: DVector<f64>,
    pub inertia: InertiaModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub q_dot: DVector<f64>,
}

impl JointState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        JointState { q, q_dot: DVector::zeros(n) }
    }
}

/// Pose of one fingertip in the palm frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingertipPose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl HandModel {
    pub fn new(
        fingers: Vec<KinematicChain>,
        joint_lower: DVector<f64>,
        joint_upper: DVector<f64>,
        inertia: InertiaModel,
    ) -> Result<Self, HandError> {
        if fingers.len() < 3 {
            return Err(HandError::Invalid(format!("need at least 3 fingers, got {}", fingers.len())));
        }
        let n = fingers[0].joint_count();
        if n == 0 || fingers.iter().any(|f| f.joint_count() != n) {
            return Err(HandError::Invalid("all fingers must have the same non-zero joint count".into()));
        }
        let total = n * fingers.len();
        if joint_lower.len() != total || joint_upper.len() != total {
            return Err(HandError::Invalid("joint limit vectors have the wrong length".into()));
        }
        if let Some(k) = (0..total).find(|&k| !(joint_lower[k] < joint_upper[k])) {
            return Err(HandError::Invalid(format!("joint {k}: lower limit must be below upper limit")));
        }
        for (i, f) in fingers.iter().enumerate() {
            if f.links.iter().skip(1).any(|l| l.offset.norm() <= 0.0) || f.tip_offset.norm() <= 0.0 {
                return Err(HandError::Invalid(format!("finger {i}: link lengths must be positive")));
            }
            if f.links.iter().any(|l| (l.axis.norm() - 1.0).abs() > 1e-12) {
                return Err(HandError::Invalid(format!("finger {i}: joint axes must be unit vectors")));
            }
            if f.links.iter().any(|l| l.mass < 0.0) {
                return Err(HandError::Invalid(format!("finger {i}: negative link mass")));
            }
        }
        if let InertiaModel::Diagonal { values } = &inertia {
            if values.len() != total || values.iter().any(|&v| v <= 0.0) {
                return Err(HandError::Invalid("diagonal inertia needs one positive value per joint".into()));
            }
        }
        Ok(HandModel { fingers, joint_lower, joint_upper, inertia })
    }

    pub fn finger_count(&self) -> usize {
        self.fingers.len()
    }

    pub fn joints_per_finger(&self) -> usize {
        self.fingers[0].joint_count()
    }

    pub fn dof(&self) -> usize {
        self.finger_count() * self.joints_per_finger()
    }

    /// Range of joint indices belonging to finger `i`.
    pub fn finger_joints(&self, i: usize) -> std::ops::Range<usize> {
        let n = self.joints_per_finger();
        i * n..(i + 1) * n
    }

    pub fn check_limits(&self, q: &DVector<f64>) -> Result<(), HandError> {
        if q.len() != self.dof() {
            return Err(HandError::Dimension { expected: self.dof(), got: q.len() });
        }
        for k in 0..q.len() {
            let (lo, hi) = (self.joint_lower[k], self.joint_upper[k]);
            if !(q[k] >= lo - LIMIT_SLACK && q[k] <= hi + LIMIT_SLACK) {
                return Err(HandError::JointLimit { index: k, value: q[k], lower: lo, upper: hi });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, q: &DVector<f64>) -> DVector<f64> {
        q.zip_zip_map(&self.joint_lower, &self.joint_upper, |v, lo, hi| v.clamp(lo, hi))
    }

    fn finger_q<'a>(&self, q: &'a DVector<f64>, i: usize) -> &'a [f64] {
        &q.as_slice()[self.finger_joints(i)]
    }

    pub fn forward_kinematics(&self, q: &JointState) -> Result<Vec<FingertipPose>, HandError> {
        self.check_limits(&q.q)?;
        Ok(self.fingertip_poses(&q.q))
    }

    /// Fingertip poses without limit checking (for solver iterates).
    pub fn fingertip_poses(&self, q: &DVector<f64>) -> Vec<FingertipPose> {
        self.fingers
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let t = f.tip_pose(self.finger_q(q, i));
                FingertipPose { position: t.translation.vector, rotation: t.rotation.to_rotation_matrix().into_inner() }
            })
            .collect()
    }

    pub fn fingertip_positions(&self, q: &DVector<f64>) -> Vec<Vector3<f64>> {
        self.fingertip_poses(q).into_iter().map(|p| p.position).collect()
    }

    /// Block-diagonal 3m × mn hand Jacobian.
    pub fn hand_jacobian(&self, q: &JointState) -> Result<DMatrix<f64>, HandError> {
        self.check_limits(&q.q)?;
        Ok(self.jacobian_unchecked(&q.q))
    }

    pub fn jacobian_unchecked(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let m = self.finger_count();
        let n = self.joints_per_finger();
        let mut j = DMatrix::zeros(3 * m, m * n);
        for (i, f) in self.fingers.iter().enumerate() {
            let ji = f.position_jacobian(self.finger_q(q, i));
            j.view_mut((3 * i, n * i), (3, n)).copy_from(&ji);
        }
        j
    }

    /// Joint-space inertia `M(q)`.
    pub fn joint_inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let dof = self.dof();
        match &self.inertia {
            InertiaModel::Diagonal { values } => DMatrix::from_diagonal(&DVector::from_column_slice(values)),
            InertiaModel::PointMass { armature } => {
                let n = self.joints_per_finger();
                let mut mq = DMatrix::identity(dof, dof) * *armature;
                for (i, f) in self.fingers.iter().enumerate() {
                    let mut block = DMatrix::zeros(n, n);
                    for (mass, jl) in f.mass_points(self.finger_q(q, i)) {
                        block += jl.transpose() * jl * mass;
                    }
                    let mut v = mq.view_mut((n * i, n * i), (n, n));
                    v += block;
                }
                mq
            }
        }
    }

    /// Task-space inertia `M_c = (J⁺)ᵀ M(q) J⁺`.
    pub fn task_inertia(&self, q: &JointState) -> Result<DMatrix<f64>, HandError> {
        let j = self.hand_jacobian(q)?;
        let s = linalg::singular_values(&j);
        let sigma_min = s.get(j.nrows().saturating_sub(1)).copied().unwrap_or(0.0);
        if s.len() < j.nrows() || sigma_min < SINGULARITY_TOL {
            return Err(HandError::Singular { sigma_min });
        }
        let jp = linalg::pinv(&j);
        let mc = jp.transpose() * self.joint_inertia(&q.q) * &jp;
        Ok((&mc + mc.transpose()) * 0.5)
    }

    /// Solves for joint angles of finger `i` placing its tip at `target`,
    /// starting from `seed` (full joint vector). Joints of other fingers are
    /// untouched. Uses a minimum-norm Newton iteration with joint limits
    /// handled by freezing saturated joints.
    pub fn solve_fingertip_position(
        &self,
        i: usize,
        target: &Vector3<f64>,
        seed: &DVector<f64>,
        tol: f64,
    ) -> Result<DVector<f64>, HandError> {
        let range = self.finger_joints(i);
        let finger = &self.fingers[i];
        let lo = self.joint_lower.rows(range.start, range.len()).into_owned();
        let hi = self.joint_upper.rows(range.start, range.len()).into_owned();
        let mut qf: DVector<f64> = seed.rows(range.start, range.len()).zip_zip_map(&lo, &hi, |v, l, h| v.clamp(l, h));
        let mut best = (f64::INFINITY, qf.clone());
        for _ in 0..200 {
            let p = finger.tip_pose(qf.as_slice()).translation.vector;
            let err = target - p;
            let r = err.norm();
            if r < best.0 {
                best = (r, qf.clone());
            }
            if r <= tol {
                break;
            }
            let mut jac = finger.position_jacobian(qf.as_slice());
            let mut step = DVector::zeros(qf.len());
            for _ in 0..=qf.len() {
                step = pinv_step(&jac, &err);
                let mut frozen = false;
                for k in 0..qf.len() {
                    let at_lo = qf[k] <= lo[k] + LIMIT_SLACK && step[k] < 0.0;
                    let at_hi = qf[k] >= hi[k] - LIMIT_SLACK && step[k] > 0.0;
                    if (at_lo || at_hi) && jac.column(k).norm() > 0.0 {
                        jac.column_mut(k).fill(0.0);
                        frozen = true;
                    }
                }
                if !frozen {
                    break;
                }
            }
            // Cap the step so the linearisation stays meaningful.
            let norm = step.norm();
            if norm > 0.3 {
                step *= 0.3 / norm;
            }
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let trial = (&qf + &step * alpha).zip_zip_map(&lo, &hi, |v, l, h| v.clamp(l, h));
                let rt = (target - finger.tip_pose(trial.as_slice()).translation.vector).norm();
                if rt < r {
                    qf = trial;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if best.0 > tol {
            return Err(HandError::Unreachable { finger: i, residual: best.0 });
        }
        let mut q = seed.clone();
        q.rows_mut(range.start, range.len()).copy_from(&best.1);
        Ok(q)
    }

    /// Places every fingertip at the corresponding target.
    pub fn solve_fingertip_positions(
        &self,
        targets: &[Vector3<f64>],
        seed: &DVector<f64>,
        tol: f64,
    ) -> Result<DVector<f64>, HandError> {
        let mut q = seed.clone();
        for (i, t) in targets.iter().enumerate() {
            q = self.solve_fingertip_position(i, t, &q, tol)?;
        }
        Ok(q)
    }
}

/// Minimum-norm solution of `J dq = e`, dropping directions whose singular
/// values are negligible.
fn pinv_step(j: &DMatrix<f64>, e: &Vector3<f64>) -> DVector<f64> {
    let e = DVector::from_column_slice(e.as_slice());
    linalg::pinv_with(j, 1e-10) * e
}

// ---------------------------------------------------------------------------
// Declarative description

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDescription {
    pub offset: [f64; 3],
    pub axis: [f64; 3],
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerDescription {
    pub base_position: [f64; 3],
    /// Rotation vector (axis × angle, rad) of the finger base.
    #[serde(default)]
    pub base_rotation: [f64; 3],
    pub links: Vec<LinkDescription>,
    pub tip_offset: [f64; 3],
}

/// Identical fingers placed at equal angles around the palm centre. Each
/// finger's local +x points toward the palm centre and +z is the palm normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialLayout {
    pub finger_count: usize,
    pub palm_radius: f64,
    /// Angle of the first finger about the palm normal (rad).
    #[serde(default)]
    pub first_angle: f64,
    pub links: Vec<LinkDescription>,
    pub tip_offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum HandDescription {
    Radial {
        #[serde(flatten)]
        radial: RadialLayout,
        #[serde(default)]
        inertia: InertiaModel,
    },
    Explicit {
        fingers: Vec<FingerDescription>,
        #[serde(default)]
        inertia: InertiaModel,
    },
}

impl HandDescription {
    pub fn build(&self) -> Result<HandModel, HandError> {
        let (fingers, inertia) = match self {
            HandDescription::Radial { radial, inertia } => (radial.expand(), inertia),
            HandDescription::Explicit { fingers, inertia } => (fingers.clone(), inertia),
        };
        let mut chains = Vec::with_capacity(fingers.len());
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for (i, fd) in fingers.iter().enumerate() {
            let mut links = Vec::with_capacity(fd.links.len());
            for ld in &fd.links {
                let axis = Vector3::from(ld.axis);
                if (axis.norm() - 1.0).abs() > 1e-9 {
                    return Err(HandError::Invalid(format!("finger {i}: joint axis {:?} is not unit norm", ld.axis)));
                }
                links.push(Link { offset: Vector3::from(ld.offset), axis: Unit::new_normalize(axis), mass: ld.mass });
                lower.push(ld.lower);
                upper.push(ld.upper);
            }
            chains.push(KinematicChain {
                base: Isometry3::new(Vector3::from(fd.base_position), Vector3::from(fd.base_rotation)),
                links,
                tip_offset: Vector3::from(fd.tip_offset),
            });
        }
        HandModel::new(chains, DVector::from_vec(lower), DVector::from_vec(upper), inertia.clone())
    }
}

impl RadialLayout {
    fn expand(&self) -> Vec<FingerDescription> {
        (0..self.finger_count)
            .map(|i| {
                let angle = self.first_angle + std::f64::consts::TAU * i as f64 / self.finger_count as f64;
                FingerDescription {
                    base_position: [self.palm_radius * angle.cos(), self.palm_radius * angle.sin(), 0.0],
                    base_rotation: [0.0, 0.0, wrap_angle(angle + std::f64::consts::PI)],
                    links: self.links.clone(),
                    tip_offset: self.tip_offset,
                }
            })
            .collect()
    }
}

fn wrap_angle(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let mut x = a % t;
    if x > std::f64::consts::PI {
        x -= t;
    }
    if x < -std::f64::consts::PI {
        x += t;
    }
    x
}

impl HandModel {
    /// Four identical fingers (yaw + three flexion joints each) arranged
    /// around an 8 cm-radius palm.
    pub fn four_finger_default() -> HandModel {
        Self::default_description().build().expect("default hand is valid")
    }

    pub fn default_description() -> HandDescription {
        let flex = |offset: [f64; 3], mass: f64| LinkDescription {
            offset,
            axis: [0.0, 1.0, 0.0],
            lower: -0.6,
            upper: 2.2,
            mass,
        };
        HandDescription::Radial {
            radial: RadialLayout {
                finger_count: 4,
                palm_radius: 0.08,
                first_angle: 0.0,
                links: vec![
                    LinkDescription {
                        offset: [0.0, 0.0, 0.0],
                        axis: [0.0, 0.0, 1.0],
                        lower: -1.2,
                        upper: 1.2,
                        mass: 0.01,
                    },
                    flex([0.0, 0.0, 0.02], 0.03),
                    flex([0.0, 0.0, 0.06], 0.025),
                    flex([0.0, 0.0, 0.05], 0.015),
                ],
                tip_offset: [0.0, 0.0, 0.035],
            },
            inertia: InertiaModel::default(),
        }
    }
}
