//! Fingertip-only framework traces: velocities projected onto the rigidity
//! constraint `R(x) v = 0` every step.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::config::ScenarioConfig;
use super::log::{IterationRecord, PoseRecord, RunHeader, RunLog, RunOutcome, WaypointSummary};
use super::HarnessError;
use crate::hand::{HandModel, JointState};
use crate::linalg;
use crate::mapper::{Pose, IK_TOL};
use crate::optimizer::{self, EqQp};
use crate::plant::FailureFlags;
use crate::rigidity::{self, ContactFramework};
use crate::so3;

/// Orientation tolerance for a reached yarn waypoint (rad).
pub const ROTATION_TOL: f64 = 1e-6;

fn centroid(x: &[Vector3<f64>]) -> Vector3<f64> {
    x.iter().sum::<Vector3<f64>>() / x.len() as f64
}

fn clamp_norm(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Velocity closest to `v_des` that keeps every edge length stationary, with
/// drift of the squared lengths fed back through `beta`.
pub fn rigid_projection(
    framework0: &ContactFramework,
    current: &ContactFramework,
    v_des: &DVector<f64>,
    beta: f64,
) -> Result<DVector<f64>, HarnessError> {
    let n = v_des.len();
    let qp = EqQp {
        h: DMatrix::identity(n, n) * 2.0,
        g: v_des * -2.0,
        a: current.rigidity_matrix(),
        b: (framework0.rigidity_function() - current.rigidity_function()) * beta,
    };
    Ok(optimizer::solve_eq_qp(&qp)?.x)
}

pub fn run_yarn_frame(sc: &ScenarioConfig) -> Result<RunLog, HarnessError> {
    sc.validate()?;
    let y = sc.yarn.as_ref().ok_or_else(|| HarnessError::Config("yarn scenario needs [yarn]".into()))?;
    let model = sc.hand_model()?;
    let points: Vec<Vector3<f64>> = y.points.iter().map(|p| Vector3::from(*p)).collect();
    if points.len() != model.finger_count() {
        return Err(HarnessError::Config(format!(
            "{} yarn points for a {}-finger hand",
            points.len(),
            model.finger_count()
        )));
    }
    let configured = match &y.edges {
        None => ContactFramework::complete(points.clone()),
        Some(e) => ContactFramework::with_edges(points.clone(), &e.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>())?,
    };
    let ev = configured.evaluate()?;
    if !ev.is_rigid {
        return Err(HarnessError::NotRigid { rank: ev.rank, expected: 3 * points.len() - 6 });
    }
    let mut q = model.solve_fingertip_positions(&points, &DVector::from_element(model.dof(), y.q_seed), IK_TOL)?;
    let mut x = model.fingertip_positions(&q);
    // Distances are measured against the tips as actually placed.
    let framework0 = configured.moved(x.clone())?;
    let c0 = centroid(&x);
    let mut heading = Matrix3::identity();
    let waypoints = sc.waypoints();
    let mut log = RunLog::new(RunHeader {
        scenario: sc.name.clone(),
        seed: sc.seed,
        fingers: points.len(),
        waypoints: waypoints.len(),
        delta: sc.mapper.delta,
    });

    'waypoints: for (k, wp) in waypoints.iter().enumerate() {
        let target_c = c0 + wp.translation;
        let target_r = wp.rotation;
        let mut summary =
            WaypointSummary { index: k, reached: false, iterations: 0, final_error: (centroid(&x) - target_c).norm() };
        for step in 1..=sc.mapper.iter {
            summary.iterations = step;
            let clock = Instant::now();
            match yarn_step(sc, &model, &framework0, &x, &q, &heading, &target_c, &target_r, y.baumgarte) {
                Ok((q_new, x_new, h_new)) => {
                    q = q_new;
                    x = x_new;
                    heading = h_new;
                }
                Err(e) => {
                    log.outcome = RunOutcome::Failed { iteration: log.records.len() + 1, reason: e.to_string() };
                    log.waypoints.push(summary);
                    break 'waypoints;
                }
            }
            let c = centroid(&x);
            let err = (c - target_c).norm();
            let rot_err = so3::angle_between(&heading, &target_r);
            let current = framework0.moved(x.clone())?;
            log.push(IterationRecord {
                iteration: 0,
                waypoint: k,
                step,
                q_cmd: q.as_slice().to_vec(),
                observed: PoseRecord::from(&Pose { position: c, rotation: heading }),
                desired: PoseRecord::from(&Pose { position: target_c, rotation: target_r }),
                pose_error: err,
                rotation_error: rot_err,
                plan: None,
                fingers: Vec::new(),
                trd: Some(rigidity::trd(&framework0, &current)?),
                flags: FailureFlags::default(),
                failures: None,
                solver_iterations: 1,
                warnings: Vec::new(),
                wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            });
            summary.final_error = err;
            if err <= sc.mapper.delta && rot_err <= ROTATION_TOL {
                summary.reached = true;
                break;
            }
        }
        if !summary.reached && log.succeeded() {
            log.outcome = RunOutcome::Failed {
                iteration: log.records.len(),
                reason: format!("waypoint {k} not reached (error {:.3e} m)", summary.final_error),
            };
        }
        log.waypoints.push(summary);
    }
    Ok(log)
}

#[allow(clippy::too_many_arguments)]
fn yarn_step(
    sc: &ScenarioConfig,
    model: &HandModel,
    framework0: &ContactFramework,
    x: &[Vector3<f64>],
    q: &DVector<f64>,
    heading: &Matrix3<f64>,
    target_c: &Vector3<f64>,
    target_r: &Matrix3<f64>,
    beta: f64,
) -> Result<(DVector<f64>, Vec<Vector3<f64>>, Matrix3<f64>), HarnessError> {
    let c = centroid(x);
    let dp = clamp_norm(target_c - c, sc.mapper.max_step_translation);
    let dtheta = clamp_norm(so3::log_unchecked(&(target_r * heading.transpose())), sc.mapper.max_step_rotation);
    let v_des: Vec<Vector3<f64>> = x.iter().map(|p| dp + dtheta.cross(&(p - c))).collect();
    let current = framework0.moved(x.to_vec())?;
    let v = rigid_projection(framework0, &current, &linalg::stack3(&v_des), beta)?;
    let cmd: Vec<Vector3<f64>> = x.iter().zip(linalg::unstack3(&v)).map(|(p, vi)| p + vi).collect();
    let q_new = model.solve_fingertip_positions(&cmd, q, IK_TOL)?;
    model.check_limits(&q_new)?;
    let x_new =
        model.forward_kinematics(&JointState::at_rest(q_new.clone()))?.into_iter().map(|p| p.position).collect();
    Ok((q_new, x_new, so3::exp(&dtheta) * heading))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::fixtures;

    #[test]
    fn zero_length_trace_keeps_shape() {
        let log = run_yarn_frame(&fixtures::yarn()).unwrap();
        assert!(log.succeeded());
        assert!(log.records.iter().all(|r| r.trd == Some(0.0)));
    }

    #[test]
    fn translation_is_rigid() {
        let mut sc = fixtures::yarn();
        sc.waypoints = vec![[0.004, -0.003, 0.002]];
        let log = run_yarn_frame(&sc).unwrap();
        assert!(log.succeeded(), "{:?}", log.outcome);
        let worst = log.records.iter().filter_map(|r| r.trd).fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{worst}");
    }

    #[test]
    fn flat_frame_is_rejected() {
        let mut sc = fixtures::yarn();
        for p in &mut sc.yarn.as_mut().unwrap().points {
            p[2] = 0.07;
        }
        assert!(matches!(run_yarn_frame(&sc), Err(HarnessError::NotRigid { .. })));
    }

    #[test]
    fn projection_passes_rigid_motion() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let fw = ContactFramework::complete(pts.clone());
        let w = Vector3::new(0.1, -0.2, 0.3);
        let rigid: Vec<_> = pts.iter().map(|p| Vector3::new(0.5, 0.0, 0.0) + w.cross(p)).collect();
        let v = linalg::stack3(&rigid);
        assert!((rigid_projection(&fw, &fw, &v, 1.0).unwrap() - &v).amax() < 1e-12);
        // A pure stretch is removed.
        let stretch = linalg::stack3(&pts.iter().map(|p| p * 0.1).collect::<Vec<_>>());
        let out = rigid_projection(&fw, &fw, &stretch, 1.0).unwrap();
        assert!((fw.rigidity_matrix() * out).amax() < 1e-12);
    }
}
