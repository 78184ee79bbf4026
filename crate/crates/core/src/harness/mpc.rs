//! Receding-horizon force-to-joint loop on the simulated plant.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::config::{ScenarioConfig, Waypoint};
use super::log::{FingerRecord, IterationRecord, PoseRecord, RunHeader, RunLog, RunOutcome, WaypointSummary};
use super::HarnessError;
use crate::grasp::GraspState;
use crate::hand::{HandModel, JointState};
use crate::linalg;
use crate::mapper::{self, ComplianceGains, GraspAnchors, Pose, IK_TOL};
use crate::planner::{self, ForcePlan, PlannerInputs};
use crate::plant::{self, Anchor, Observer, PlantConfig, PlantState};
use crate::rigidity::{self, ContactFramework};
use crate::so3;

/// Relative normal-force mismatch between plan and plant that raises a
/// warning.
pub const NORMAL_MISMATCH_WARN: f64 = 0.10;

/// Everything fixed once the object is grasped.
#[derive(Debug, Clone)]
pub struct GraspSetup {
    pub model: HandModel,
    pub anchors: Vec<Anchor>,
    pub grasp_anchors: GraspAnchors,
    /// Contact framework at the initial pose (world frame).
    pub framework: ContactFramework,
    pub pose0: Pose,
    pub plant: PlantConfig,
    pub gains: ComplianceGains,
    /// Joint angles that put the fingertips on the contact points.
    pub q_contact: DVector<f64>,
    /// Joint angles after squeezing to the first plan.
    pub q_grasp: DVector<f64>,
    pub first_plan: ForcePlan,
    pub state: PlantState,
    /// Fingertip positions once grasped; TRD reference.
    pub tips0: ContactFramework,
}

/// Contact frames of the anchors at `pose`.
fn frames_at(anchors: &[Anchor], pose: &Pose) -> Vec<Matrix3<f64>> {
    anchors.iter().map(|a| pose.rotation * a.frame).collect()
}

/// Rigid contact-velocity field of the first horizon step toward `target`.
fn step_velocity(sc: &ScenarioConfig, contacts: &[Vector3<f64>], current: &Pose, target: &Pose) -> DVector<f64> {
    let (a, b) = mapper::step_fraction(&sc.mapper, current, target, 1);
    let dp = (target.position - current.position) * a / sc.mpc.step_time;
    let w =
        current.rotation * so3::log_unchecked(&(current.rotation.transpose() * target.rotation)) * b / sc.mpc.step_time;
    let v: Vec<Vector3<f64>> = contacts.iter().map(|x| dp + w.cross(&(x - current.position))).collect();
    linalg::stack3(&v)
}

/// Plans contact forces for the object at `pose` with the hand at `q`.
#[allow(clippy::too_many_arguments)]
fn plan_at(
    sc: &ScenarioConfig,
    model: &HandModel,
    anchors: &[Anchor],
    framework0: &ContactFramework,
    pose: &Pose,
    target: &Pose,
    q: &DVector<f64>,
    warm: Option<DVector<f64>>,
) -> Result<ForcePlan, HarnessError> {
    let obj = sc.object.as_ref().expect("validated");
    let frames = frames_at(anchors, pose);
    let contacts: Vec<Vector3<f64>> = anchors.iter().map(|a| pose.transform(&a.point)).collect();
    let normals: Vec<Vector3<f64>> = frames.iter().map(|f| -f.column(2).into_owned()).collect();
    let grasp = GraspState::new(contacts.clone(), normals, pose.position, pose.rotation, obj.mass)?;
    let framework = framework0.moved(contacts.clone())?;
    let inputs = PlannerInputs {
        grasp,
        framework,
        friction: sc.friction.expect("validated"),
        gravity_wrench: planner::gravity_wrench(obj.mass, &Vector3::from(sc.gravity)),
        task_inertia: model.task_inertia(&JointState::at_rest(q.clone()))?,
        contact_velocity: step_velocity(sc, &contacts, pose, target),
        alpha: DVector::zeros(3 * anchors.len()),
        warm_start: warm,
        check_gradients: false,
    };
    Ok(planner::plan_contact_forces(&inputs)?)
}

/// Object-frame virtual points: contact plus compliance penetration.
fn body_targets(plan: &ForcePlan, anchors: &[Anchor], pose: &Pose, gains: &ComplianceGains) -> Vec<Vector3<f64>> {
    let frames = frames_at(anchors, pose);
    let f_local = local_forces(plan, &frames);
    let d = mapper::penetration_world(gains, &f_local, &frames);
    anchors.iter().zip(&d).map(|(a, di)| a.point + pose.rotation.transpose() * di).collect()
}

fn local_forces(plan: &ForcePlan, frames: &[Matrix3<f64>]) -> Vec<Vector3<f64>> {
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| f.transpose() * Vector3::new(plan.f_c[3 * i], plan.f_c[3 * i + 1], plan.f_c[3 * i + 2]))
        .collect()
}

/// Places the hand on the object, plans the holding forces and squeezes
/// until the plant settles.
pub fn init_grasp(sc: &ScenarioConfig) -> Result<GraspSetup, HarnessError> {
    sc.validate()?;
    let model = sc.hand_model()?;
    let obj = sc.object.as_ref().expect("validated");
    let gcfg = sc.grasp.as_ref().expect("validated");
    let gains = sc.compliance.expect("validated");
    let plant_cfg = sc.plant_config()?;
    if gcfg.contacts.len() != model.finger_count() {
        return Err(HarnessError::Config(format!(
            "{} contacts for a {}-finger hand",
            gcfg.contacts.len(),
            model.finger_count()
        )));
    }
    let pose0 = Pose { position: Vector3::from(obj.center), rotation: Matrix3::identity() };
    let points: Vec<Vector3<f64>> =
        gcfg.contacts.iter().map(|d| obj.geometry.surface_point(&Vector3::from(*d))).collect();
    let anchors = plant::anchors_on(&obj.geometry, &points, 1e-9)?;
    let world: Vec<Vector3<f64>> = points.iter().map(|p| pose0.transform(p)).collect();

    let framework = match &gcfg.edges {
        None => ContactFramework::complete(world.clone()),
        Some(e) => ContactFramework::with_edges(world.clone(), &e.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>())?,
    };
    let ev = framework.evaluate()?;
    if !ev.is_rigid {
        return Err(HarnessError::NotRigid { rank: ev.rank, expected: 3 * world.len() - 6 });
    }
    let g = crate::grasp::grasp_matrix(&world, &pose0.position);
    let rank = linalg::numerical_rank(&g, 1e-9);
    if rank < 6 {
        return Err(HarnessError::DegenerateGrasp { rank });
    }

    let seed = DVector::from_element(model.dof(), gcfg.q_seed);
    let q_contact = model.solve_fingertip_positions(&world, &seed, IK_TOL)?;
    let tip_rotations =
        model.fingertip_poses(&q_contact).iter().map(|p| pose0.rotation.transpose() * p.rotation).collect();
    let grasp_anchors = GraspAnchors { contacts: points.clone(), tip_rotations };

    let first_plan = plan_at(sc, &model, &anchors, &framework, &pose0, &pose0, &q_contact, None)?;
    let b = body_targets(&first_plan, &anchors, &pose0, &gains);
    let targets: Vec<Vector3<f64>> = b.iter().map(|p| pose0.transform(p)).collect();
    let q_grasp = model.solve_fingertip_positions(&targets, &q_contact, IK_TOL)?;
    let state = plant::plant_step(
        &PlantState::at_rest(pose0, anchors.len()),
        &JointState::at_rest(q_grasp.clone()),
        &model,
        &anchors,
        &plant_cfg,
    )?;
    if state.flags.any() {
        return Err(HarnessError::GraspFailed(format!("initial squeeze raised {:?}", state.flags)));
    }
    let tips0 = framework.moved(state.tips.clone())?;
    Ok(GraspSetup {
        model,
        anchors,
        grasp_anchors,
        framework,
        pose0,
        plant: plant_cfg,
        gains,
        q_contact,
        q_grasp,
        first_plan,
        state,
        tips0,
    })
}

/// Desired object pose for a waypoint offset from the initial pose.
pub fn waypoint_pose(pose0: &Pose, wp: &Waypoint) -> Pose {
    Pose { position: pose0.position + wp.translation, rotation: pose0.rotation * wp.rotation }
}

struct Step {
    record: IterationRecord,
    state: PlantState,
    q: DVector<f64>,
    observed: Pose,
    warm: DVector<f64>,
}

#[allow(clippy::too_many_arguments)]
fn mpc_step(
    sc: &ScenarioConfig,
    setup: &GraspSetup,
    state: &PlantState,
    q: &DVector<f64>,
    observed: &Pose,
    target: &Pose,
    warm: Option<DVector<f64>>,
    observer: &mut Observer,
) -> Result<Step, HarnessError> {
    let clock = Instant::now();
    let plan = plan_at(sc, &setup.model, &setup.anchors, &setup.framework, observed, target, q, warm)?;
    let b = body_targets(&plan, &setup.anchors, observed, &setup.gains);
    let rd = setup.grasp_anchors.desired_rotations(&target.rotation);
    let sol = mapper::solve_joint_trajectory(
        &setup.model,
        &JointState::at_rest(q.clone()),
        *observed,
        *target,
        &b,
        &rd,
        &sc.mapper,
        false,
    )?;
    let q_cmd = sol.q[0].clone();
    let next =
        plant::plant_step(state, &JointState::at_rest(q_cmd.clone()), &setup.model, &setup.anchors, &setup.plant)?;
    let report = plant::check_failures(&next, &setup.plant.failure_params());
    let obs = observer.observe(&next, &setup.plant);

    let frames = frames_at(&setup.anchors, observed);
    let planned = local_forces(&plan, &frames);
    let mut warnings = Vec::new();
    let fingers: Vec<FingerRecord> = planned
        .iter()
        .zip(&next.local_forces)
        .zip(&plan.margins)
        .enumerate()
        .map(|(i, ((p, r), m))| {
            if m.ratio > sc.mpc.warn_cone_ratio {
                warnings.push(format!("finger {i}: cone ratio {:.3}", m.ratio));
            }
            if p.z > 0.0 && ((r.z - p.z) / p.z).abs() > NORMAL_MISMATCH_WARN {
                warnings.push(format!("finger {i}: plant normal {:.4} N vs planned {:.4} N", r.z, p.z));
            }
            FingerRecord {
                planned_normal: p.z,
                planned_tangential: p.xy().norm(),
                realized_normal: r.z,
                realized_tangential: r.xy().norm(),
                cone_ratio: m.ratio,
            }
        })
        .collect();
    let trd = rigidity::trd(&setup.tips0, &setup.tips0.moved(next.tips.clone())?)?;
    let warm = DVector::from_column_slice(&plan.f_int_mu);
    let record = IterationRecord {
        iteration: 0,
        waypoint: 0,
        step: 0,
        q_cmd: q_cmd.as_slice().to_vec(),
        observed: PoseRecord::from(&obs),
        desired: PoseRecord::from(target),
        pose_error: (obs.position - target.position).norm(),
        rotation_error: so3::angle_between(&obs.rotation, &target.rotation),
        plan: Some(plan),
        fingers,
        trd: Some(trd),
        flags: next.flags,
        failures: if report.is_empty() { None } else { Some(report) },
        solver_iterations: sol.iterations,
        warnings,
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
    };
    Ok(Step { record, state: next, q: q_cmd, observed: obs, warm })
}

/// Runs a grasp scenario through every waypoint.
pub fn run_mpc(sc: &ScenarioConfig) -> Result<RunLog, HarnessError> {
    let setup = init_grasp(sc)?;
    Ok(run_mpc_from(sc, &setup))
}

/// Runs the loop from an established grasp.
pub fn run_mpc_from(sc: &ScenarioConfig, setup: &GraspSetup) -> RunLog {
    let waypoints = sc.waypoints();
    let mut log = RunLog::new(RunHeader {
        scenario: sc.name.clone(),
        seed: sc.seed,
        fingers: setup.anchors.len(),
        waypoints: waypoints.len(),
        delta: sc.mapper.delta,
    });
    let mut observer = Observer::new(sc.seed);
    let mut state = setup.state.clone();
    let mut q = setup.q_grasp.clone();
    let mut observed = observer.observe(&state, &setup.plant);
    let mut warm = None;
    'waypoints: for (k, wp) in waypoints.iter().enumerate() {
        let target = waypoint_pose(&setup.pose0, wp);
        let mut summary = WaypointSummary {
            index: k,
            reached: false,
            iterations: 0,
            final_error: (observed.position - target.position).norm(),
        };
        for step in 1..=sc.mapper.iter {
            summary.iterations = step;
            let s = match mpc_step(sc, setup, &state, &q, &observed, &target, warm.take(), &mut observer) {
                Ok(s) => s,
                Err(e) => {
                    log.outcome = RunOutcome::Failed { iteration: log.records.len() + 1, reason: e.to_string() };
                    log.waypoints.push(summary);
                    break 'waypoints;
                }
            };
            let mut rec = s.record;
            rec.waypoint = k;
            rec.step = step;
            summary.final_error = rec.pose_error;
            let flags = rec.flags;
            log.push(rec);
            state = s.state;
            q = s.q;
            observed = s.observed;
            warm = Some(s.warm);
            if flags.any() {
                log.outcome =
                    RunOutcome::Failed { iteration: log.records.len(), reason: format!("plant failure {flags:?}") };
                log.waypoints.push(summary);
                break 'waypoints;
            }
            if summary.final_error <= sc.mapper.delta {
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
    log
}

/// Normal forces the plant realizes at the established grasp, against the
/// plan that produced it.
pub fn grasp_normal_forces(setup: &GraspSetup) -> (Vec<f64>, Vec<f64>) {
    let frames = frames_at(&setup.anchors, &setup.pose0);
    let planned = local_forces(&setup.first_plan, &frames).iter().map(|f| f.z).collect();
    let realized = setup.state.local_forces.iter().map(|f| f.z).collect();
    (planned, realized)
}

/// Grasp matrix at the initial pose, exposed for diagnostics.
pub fn initial_grasp_matrix(setup: &GraspSetup) -> DMatrix<f64> {
    crate::grasp::grasp_matrix(setup.framework.points(), &setup.pose0.position)
}
