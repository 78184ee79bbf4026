//! Quasi-static compliant-contact plant: fingertips pressed into an object
//! through per-contact springs with a Coulomb cap, object pose found by
//! force equilibrium, and noisy pose observation.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grasp::{self, FrictionParams, GraspError};
use crate::hand::{HandError, HandModel, JointState};
use crate::mapper::Pose;
use crate::planner::STANDARD_GRAVITY;
use crate::so3;

/// Net wrench accepted as equilibrium (N and N·m).
pub const EQUILIBRIUM_TOL: f64 = 1e-9;
pub const EQUILIBRIUM_MAX_ITER: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error(transparent)]
    Grasp(#[from] GraspError),
    #[error("object equilibrium not found (residual {residual:.3e} after {iterations} iterations)")]
    NoEquilibrium { residual: f64, iterations: usize },
    #[error("invalid plant configuration: {0}")]
    Config(String),
    #[error("contact point {index} is {distance:.3e} m off the object surface")]
    OffSurface { index: usize, distance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectGeometry {
    /// Axis along object z, centred at the origin.
    Cylinder {
        radius: f64,
        height: f64,
    },
    Ellipsoid {
        radii: [f64; 3],
    },
}

impl ObjectGeometry {
    fn validate(&self) -> Result<(), PlantError> {
        let ok = match self {
            ObjectGeometry::Cylinder { radius, height } => *radius > 0.0 && *height > 0.0,
            ObjectGeometry::Ellipsoid { radii } => radii.iter().all(|&r| r > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(PlantError::Config(format!("geometry dimensions must be positive: {self:?}")))
        }
    }

    /// Outward unit normal at an object-frame surface point.
    pub fn normal(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match self {
            ObjectGeometry::Cylinder { .. } => Vector3::new(p.x, p.y, 0.0).normalize(),
            ObjectGeometry::Ellipsoid { radii } => {
                Vector3::new(p.x / (radii[0] * radii[0]), p.y / (radii[1] * radii[1]), p.z / (radii[2] * radii[2]))
                    .normalize()
            }
        }
    }

    /// Approximate distance of `p` from the lateral/implicit surface.
    pub fn surface_distance(&self, p: &Vector3<f64>) -> f64 {
        match self {
            ObjectGeometry::Cylinder { radius, height } => {
                let r = (p.x * p.x + p.y * p.y).sqrt();
                let side = (r - radius).abs();
                if p.z.abs() > 0.5 * height {
                    side.max(p.z.abs() - 0.5 * height)
                } else {
                    side
                }
            }
            ObjectGeometry::Ellipsoid { radii } => {
                let s = (p.x / radii[0]).powi(2) + (p.y / radii[1]).powi(2) + (p.z / radii[2]).powi(2);
                // First-order distance from the level set s = 1.
                let g = Vector3::new(
                    2.0 * p.x / (radii[0] * radii[0]),
                    2.0 * p.y / (radii[1] * radii[1]),
                    2.0 * p.z / (radii[2] * radii[2]),
                );
                (s - 1.0).abs() / g.norm().max(1e-300)
            }
        }
    }

    /// Point on the surface in the direction `dir` from the centre.
    pub fn surface_point(&self, dir: &Vector3<f64>) -> Vector3<f64> {
        let d = dir.normalize();
        match self {
            ObjectGeometry::Cylinder { radius, .. } => d * (radius / (d.x * d.x + d.y * d.y).sqrt()),
            ObjectGeometry::Ellipsoid { radii } => {
                let s = (d.x / radii[0]).powi(2) + (d.y / radii[1]).powi(2) + (d.z / radii[2]).powi(2);
                d / s.sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub geometry: ObjectGeometry,
    pub mass: f64,
    /// Contact stiffness in the local contact frame `[k_x, k_y, k_z]` (N/m).
    pub stiffness: [f64; 3],
    pub mu: f64,
    /// Normal force above which the object deforms (N).
    pub deformation_threshold: f64,
    /// Threshold change per kilogram of mass above `reference_mass`; models
    /// fill that stiffens the object.
    #[serde(default)]
    pub deformation_slope: f64,
    #[serde(default)]
    pub reference_mass: f64,
    #[serde(default)]
    pub noise_position_std: f64,
    #[serde(default)]
    pub noise_rotation_std: f64,
    /// Gravity direction in the world frame (unit vector).
    pub gravity: [f64; 3],
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        self.geometry.validate()?;
        if !(self.mass >= 0.0) {
            return Err(PlantError::Config("mass must be non-negative".into()));
        }
        if self.stiffness.iter().any(|&k| !(k > 0.0)) {
            return Err(PlantError::Config("stiffness must be positive".into()));
        }
        if !(self.mu > 0.0) {
            return Err(PlantError::Config("mu must be positive".into()));
        }
        if !(self.noise_position_std >= 0.0 && self.noise_rotation_std >= 0.0) {
            return Err(PlantError::Config("noise std must be non-negative".into()));
        }
        if (Vector3::from(self.gravity).norm() - 1.0).abs() > 1e-9 {
            return Err(PlantError::Config("gravity direction must be a unit vector".into()));
        }
        Ok(())
    }

    pub fn effective_threshold(&self) -> f64 {
        self.deformation_threshold + self.deformation_slope * (self.mass - self.reference_mass)
    }

    pub fn gravity_force(&self) -> Vector3<f64> {
        Vector3::from(self.gravity) * (self.mass * STANDARD_GRAVITY)
    }

    /// Friction parameters the failure check uses for this plant.
    pub fn failure_params(&self) -> FrictionParams {
        FrictionParams { mu: self.mu, f_n_min: 0.0, f_n_max: self.effective_threshold() }
    }
}

/// Contact anchored on the object: surface point and contact frame, both in
/// object coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub point: Vector3<f64>,
    pub frame: Matrix3<f64>,
}

/// Anchors for object-frame contact points on `geometry`.
pub fn anchors_on(geometry: &ObjectGeometry, points: &[Vector3<f64>], tol: f64) -> Result<Vec<Anchor>, PlantError> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = geometry.surface_distance(p);
            if d > tol {
                return Err(PlantError::OffSurface { index: i, distance: d });
            }
            Ok(Anchor { point: *p, frame: grasp::contact_frame(&geometry.normal(p))? })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureFlags {
    pub slip: bool,
    pub deformation: bool,
    pub drop: bool,
}

impl FailureFlags {
    pub fn any(&self) -> bool {
        self.slip || self.deformation || self.drop
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub pose: Pose,
    pub tips: Vec<Vector3<f64>>,
    /// Normal penetration per contact (m), zero when separated.
    pub penetration: Vec<f64>,
    /// Force each fingertip applies to the object (world frame).
    pub forces: Vec<Vector3<f64>>,
    /// The same forces in the contact frames.
    pub local_forces: Vec<Vector3<f64>>,
    /// Tangential spring force before the Coulomb cap.
    pub tangential_demand: Vec<f64>,
    pub flags: FailureFlags,
    /// Net object wrench at the reported pose.
    pub residual: f64,
    pub iterations: usize,
}

impl PlantState {
    pub fn at_rest(pose: Pose, m: usize) -> Self {
        PlantState {
            pose,
            tips: vec![Vector3::zeros(); m],
            penetration: vec![0.0; m],
            forces: vec![Vector3::zeros(); m],
            local_forces: vec![Vector3::zeros(); m],
            tangential_demand: vec![0.0; m],
            flags: FailureFlags::default(),
            residual: 0.0,
            iterations: 0,
        }
    }

    pub fn active_contacts(&self) -> usize {
        self.penetration.iter().filter(|&&d| d > 0.0).count()
    }

    /// Stored spring energy `Σ ½ k u²` over active contacts.
    pub fn spring_energy(&self, cfg: &PlantConfig) -> f64 {
        self.local_forces
            .iter()
            .zip(&self.penetration)
            .filter(|(_, &d)| d > 0.0)
            .map(|(f, _)| (0..3).map(|k| 0.5 * f[k] * f[k] / cfg.stiffness[k]).sum::<f64>())
            .sum()
    }
}

struct ContactEval {
    forces: Vec<Vector3<f64>>,
    local: Vec<Vector3<f64>>,
    penetration: Vec<f64>,
    demand: Vec<f64>,
    slip: bool,
    wrench: DVector<f64>,
}

fn contact_forces(pose: &Pose, tips: &[Vector3<f64>], anchors: &[Anchor], cfg: &PlantConfig) -> ContactEval {
    let k = cfg.stiffness;
    let mut out = ContactEval {
        forces: Vec::with_capacity(tips.len()),
        local: Vec::with_capacity(tips.len()),
        penetration: Vec::with_capacity(tips.len()),
        demand: Vec::with_capacity(tips.len()),
        slip: false,
        wrench: DVector::zeros(6),
    };
    let gravity = cfg.gravity_force();
    let mut force = gravity;
    let mut moment = Vector3::zeros();
    for (tip, a) in tips.iter().zip(anchors) {
        let anchor = pose.transform(&a.point);
        let frame = pose.rotation * a.frame;
        let u = frame.transpose() * (tip - anchor);
        let (local, pen, demand) = if u.z > 0.0 {
            let fz = k[2] * u.z;
            let mut ft = Vector3::new(k[0] * u.x, k[1] * u.y, 0.0);
            let demand = ft.norm();
            let cap = cfg.mu * fz;
            if demand > cap {
                ft *= cap / demand;
                out.slip = true;
            }
            (Vector3::new(ft.x, ft.y, fz), u.z, demand)
        } else {
            (Vector3::zeros(), 0.0, 0.0)
        };
        let fw = frame * local;
        force += fw;
        moment += (anchor - pose.position).cross(&fw);
        out.forces.push(fw);
        out.local.push(local);
        out.penetration.push(pen);
        out.demand.push(demand);
    }
    out.wrench = DVector::from_vec(vec![force.x, force.y, force.z, moment.x, moment.y, moment.z]);
    out
}

fn perturbed(pose: &Pose, d: &DVector<f64>) -> Pose {
    Pose {
        position: pose.position + Vector3::new(d[0], d[1], d[2]),
        rotation: so3::exp(&Vector3::new(d[3], d[4], d[5])) * pose.rotation,
    }
}

/// Largest fingertip travel between equilibrium solves (m).
pub const CONTINUATION_STEP: f64 = 2e-4;
/// Halvings of a continuation step before the equilibrium is abandoned.
pub const CONTINUATION_BISECTIONS: u32 = 10;

/// Damped Newton on the 6-DOF pose with a finite-difference Jacobian.
fn equilibrium(
    start: Pose,
    tips: &[Vector3<f64>],
    anchors: &[Anchor],
    cfg: &PlantConfig,
) -> (Pose, ContactEval, usize) {
    let mut pose = start;
    let mut eval = contact_forces(&pose, tips, anchors, cfg);
    let mut res = eval.wrench.amax();
    let mut iterations = 0;
    let h = 1e-7;
    while res > EQUILIBRIUM_TOL && iterations < EQUILIBRIUM_MAX_ITER {
        iterations += 1;
        let mut jac = DMatrix::zeros(6, 6);
        for j in 0..6 {
            let mut d = DVector::zeros(6);
            d[j] = h;
            let wp = contact_forces(&perturbed(&pose, &d), tips, anchors, cfg).wrench;
            d[j] = -h;
            let wm = contact_forces(&perturbed(&pose, &d), tips, anchors, cfg).wrench;
            jac.set_column(j, &((wp - wm) / (2.0 * h)));
        }
        let step = match jac.clone().lu().solve(&(-&eval.wrench)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => crate::linalg::pinv(&jac) * (-&eval.wrench),
        };
        // Halve until the residual drops.
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let trial = perturbed(&pose, &(&step * alpha));
            let te = contact_forces(&trial, tips, anchors, cfg);
            let tr = te.wrench.amax();
            if tr < res {
                pose = trial;
                eval = te;
                res = tr;
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (pose, eval, iterations)
}

/// Moves the fingertips to `FK(q_cmd)` and finds the object pose at which
/// contact springs balance gravity. Fingertips travel from their previous
/// positions in increments of at most [`CONTINUATION_STEP`], re-solving the
/// equilibrium after each, so the pose follows the quasi-static path. An
/// increment whose solve fails is halved, up to [`CONTINUATION_BISECTIONS`]
/// times.
pub fn plant_step(
    state: &PlantState,
    q_cmd: &JointState,
    model: &HandModel,
    anchors: &[Anchor],
    cfg: &PlantConfig,
) -> Result<PlantState, PlantError> {
    cfg.validate()?;
    let tips = model.forward_kinematics(q_cmd)?.into_iter().map(|p| p.position).collect::<Vec<_>>();
    if tips.len() != anchors.len() {
        return Err(PlantError::Config(format!("{} fingertips but {} anchors", tips.len(), anchors.len())));
    }
    let from = if state.tips.len() == tips.len() && state.active_contacts() > 0 { Some(&state.tips) } else { None };
    let Some(old) = from else {
        let (pose, eval, it) = equilibrium(state.pose, &tips, anchors, cfg);
        return settle(pose, tips, eval, it, cfg);
    };
    let travel = old.iter().zip(&tips).map(|(a, b)| (b - a).norm()).fold(0.0, f64::max);
    let full = (CONTINUATION_STEP / travel.max(f64::MIN_POSITIVE)).min(1.0);
    let min_dt = full / (1 << CONTINUATION_BISECTIONS) as f64;
    let interp = |t: f64| -> Vec<Vector3<f64>> {
        if t >= 1.0 {
            tips.clone()
        } else {
            old.iter().zip(&tips).map(|(a, b)| a + (b - a) * t).collect()
        }
    };
    let mut pose = state.pose;
    let mut t = 0.0;
    let mut dt = full;
    let mut total = 0;
    loop {
        let t_next = (t + dt).min(1.0);
        let at = interp(t_next);
        let (p, eval, it) = equilibrium(pose, &at, anchors, cfg);
        total += it;
        let active = eval.penetration.iter().filter(|&&d| d > 0.0).count();
        let converged = eval.wrench.amax() <= EQUILIBRIUM_TOL;
        if converged && active >= 3 && t_next < 1.0 {
            pose = p;
            t = t_next;
            dt = (dt * 2.0).min(full);
            continue;
        }
        if !converged && dt > min_dt {
            // Retry the same stretch in smaller pieces before giving up.
            dt *= 0.5;
            continue;
        }
        return settle(p, at, eval, total, cfg);
    }
}

/// Classifies a solved (or abandoned) equilibrium.
fn settle(
    pose: Pose,
    tips: Vec<Vector3<f64>>,
    eval: ContactEval,
    iterations: usize,
    cfg: &PlantConfig,
) -> Result<PlantState, PlantError> {
    let res = eval.wrench.amax();
    let saturated = eval.slip;
    let active = eval.penetration.iter().filter(|&&d| d > 0.0).count();
    let mut s = finish(pose, tips, eval, iterations);
    if active < 3 {
        s.flags.drop = true;
        return Ok(s);
    }
    if res > EQUILIBRIUM_TOL {
        if saturated {
            // No static equilibrium with capped friction: the object slides.
            s.flags.slip = true;
            return Ok(s);
        }
        return Err(PlantError::NoEquilibrium { residual: res, iterations });
    }
    let report = check_failures(&s, &cfg.failure_params());
    s.flags.slip |= !report.slip.is_empty();
    s.flags.deformation = !report.deformation.is_empty();
    Ok(s)
}

fn finish(pose: Pose, tips: Vec<Vector3<f64>>, e: ContactEval, iterations: usize) -> PlantState {
    PlantState {
        pose,
        tips,
        residual: e.wrench.amax(),
        penetration: e.penetration,
        forces: e.forces,
        local_forces: e.local,
        tangential_demand: e.demand,
        flags: FailureFlags { slip: e.slip, ..FailureFlags::default() },
        iterations,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    /// `(finger, demand / (μ N))` for each slipping contact.
    pub slip: Vec<(usize, f64)>,
    /// `(finger, N / threshold)` for each over-pressed contact.
    pub deformation: Vec<(usize, f64)>,
    pub drop: bool,
}

impl FailureReport {
    pub fn is_empty(&self) -> bool {
        self.slip.is_empty() && self.deformation.is_empty() && !self.drop
    }
}

/// Slip where the tangential demand exceeds `μ N`, deformation where the
/// normal force exceeds `f_n_max`, drop below three active contacts.
pub fn check_failures(state: &PlantState, fp: &FrictionParams) -> FailureReport {
    let mut r = FailureReport::default();
    for (i, (f, &demand)) in state.local_forces.iter().zip(&state.tangential_demand).enumerate() {
        if f.z <= 0.0 {
            continue;
        }
        let cap = fp.mu * f.z;
        if demand > cap * (1.0 + 1e-9) {
            r.slip.push((i, demand / cap));
        }
        if f.z > fp.f_n_max {
            r.deformation.push((i, f.z / fp.f_n_max));
        }
    }
    r.drop = state.active_contacts() < 3 || state.flags.drop;
    r
}

/// Pose observation with zero-mean Gaussian noise.
pub struct Observer {
    rng: ChaCha8Rng,
}

impl Observer {
    pub fn new(seed: u64) -> Self {
        Observer { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn observe(&mut self, state: &PlantState, cfg: &PlantConfig) -> Pose {
        let mut pose = state.pose;
        if cfg.noise_position_std > 0.0 {
            let n = Normal::new(0.0, cfg.noise_position_std).expect("finite std");
            pose.position += Vector3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng));
        }
        if cfg.noise_rotation_std > 0.0 {
            let n = Normal::new(0.0, cfg.noise_rotation_std).expect("finite std");
            let w = Vector3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng));
            pose.rotation = pose.rotation * so3::exp(&w);
        }
        pose
    }
}

/// One-shot observation seeded by `rng_seed`.
pub fn observe(state: &PlantState, cfg: &PlantConfig, rng_seed: u64) -> Pose {
    Observer::new(rng_seed).observe(state, cfg)
}
