//! Acceptance checks. Each test prints one `PASS`/`FAIL` line straight to
//! stdout (not through the test harness capture) and then asserts.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rigigrip::grasp::{self, GraspState};
use rigigrip::harness::{self, config::ScenarioConfig, mpc, RunLog, ScenarioKind};
use rigigrip::mapper::{JointTrajectoryNlp, Pose};
use rigigrip::optimizer;
use rigigrip::planner::{self, FrictionNlp, SAFETY_TOL};
use rigigrip::rigidity::{self, ContactFramework};
use rigigrip::so3;

fn report(name: &str, pass: bool, detail: &str) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const GRASP_SCENARIOS: [&str; 7] =
    ["empty_cup", "water_cup", "egg_ral", "side_cup", "side_egg", "cup_mass_sweep", "cup_mu_sweep"];
const NOMINAL: [&str; 5] = ["empty_cup", "water_cup", "egg_ral", "side_cup", "side_egg"];

fn random_points(rng: &mut ChaCha8Rng, m: usize) -> Vec<Vector3<f64>> {
    (0..m)
        .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn flags_clear(log: &RunLog) -> bool {
    log.records.iter().all(|r| !r.flags.slip && !r.flags.deformation && !r.flags.drop)
}

#[test]
fn rigidity_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let clock = Instant::now();
    let mut wrong = Vec::new();
    for k in 0..100 {
        let m = 3 + k % 4;
        let ev = ContactFramework::complete(random_points(&mut rng, m)).evaluate().unwrap();
        if ev.rank != 3 * m - 6 || !ev.is_rigid {
            wrong.push((m, ev.rank));
        }
    }
    let mut degenerate_missed = 0;
    for k in 0..20 {
        let m = 3 + k % 4;
        let dir = random_points(&mut rng, 1)[0].normalize();
        let line: Vec<_> = (0..m).map(|_| dir * rng.random_range(-1.0..1.0)).collect();
        if ContactFramework::complete(line).evaluate().unwrap().is_rigid {
            degenerate_missed += 1;
        }
        let m = 4 + k % 3;
        let (u, v) = (dir.cross(&Vector3::x()).normalize(), dir.cross(&Vector3::y()).normalize());
        let plane: Vec<_> = (0..m).map(|_| u * rng.random_range(-1.0..1.0) + v * rng.random_range(-1.0..1.0)).collect();
        if ContactFramework::complete(plane).evaluate().unwrap().is_rigid {
            degenerate_missed += 1;
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    let pass = wrong.is_empty() && degenerate_missed == 0 && secs < 1.0;
    report(
        "rigidity rank",
        pass,
        &format!(
            "100 complete frameworks, {} wrong ranks; 40 degenerate, {degenerate_missed} called rigid; {secs:.3} s",
            wrong.len()
        ),
    );
    assert!(pass, "{wrong:?}");
}

#[test]
fn rigid_motion_null_space() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0_f64;
    for k in 0..100 {
        let pts = random_points(&mut rng, 3 + k % 4);
        let r = ContactFramework::complete(pts.clone()).rigidity_matrix();
        for v in rigidity::rigid_motions(&pts) {
            worst = worst.max((&r * v).norm());
        }
    }
    let pass = worst <= 1e-10;
    report("rigid-motion null space", pass, &format!("max ||R v|| = {worst:.2e} over 100 frameworks x 6 motions"));
    assert!(pass);
}

#[test]
fn internal_force_purity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    for k in 0..100 {
        let pts = random_points(&mut rng, 3 + k % 4);
        let center = random_points(&mut rng, 1)[0] * 0.5;
        let r = ContactFramework::complete(pts.clone()).rigidity_matrix();
        let g = grasp::grasp_matrix(&pts, &center);
        let y = DVector::from_fn(r.nrows(), |_, _| rng.random_range(-1.0..1.0));
        worst = worst.max((g * r.transpose() * y).norm());
    }
    let pass = worst <= 1e-10;
    report("internal-force purity", pass, &format!("max ||G R^T y|| = {worst:.2e} over 100 frameworks"));
    assert!(pass);
}

#[test]
fn closed_form_matches_qp() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0_f64;
    for k in 0..100 {
        let m = 3 + k % 4;
        let pts = random_points(&mut rng, m);
        let fw = ContactFramework::complete(pts.clone());
        let n = 3 * m;
        // Contact velocities of a rigid grasp satisfy R v = 0.
        let v = rigidity::rigid_motions(&pts)
            .iter()
            .fold(DVector::zeros(n), |acc, b| acc + b * rng.random_range(-1.0..1.0));
        let alpha = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let m_c = random_spd(&mut rng, n);
        let r = fw.rigidity_matrix();
        let r_dot = fw.rigidity_matrix_rate(&v).unwrap();
        let closed = planner::rigidity_internal_force(&r, &r_dot, &m_c, &v, &alpha).unwrap();
        let qp = planner::rigidity_internal_force_qp(&r, &r_dot, &m_c, &v, &alpha).unwrap();
        worst = worst.max((&closed - &qp).norm() / closed.norm().max(1e-12));
    }
    let pass = worst <= 1e-6;
    report("closed-form vs QP internal force", pass, &format!("max relative error {worst:.2e} on 100 instances"));
    assert!(pass);
}

/// Rechecks every emitted plan against the grasp rebuilt from the pose it
/// was planned at.
#[test]
fn force_plan_safety() {
    let mut checked = 0;
    let mut bad = Vec::new();
    for name in GRASP_SCENARIOS {
        let sc = scenario(name);
        let setup = mpc::init_grasp(&sc).unwrap();
        let log = mpc::run_mpc_from(&sc, &setup);
        let obj = sc.object.as_ref().unwrap();
        let fp = sc.friction.unwrap();
        let g_o = planner::gravity_wrench(obj.mass, &Vector3::from(sc.gravity));
        let mut plans = vec![(setup.pose0, setup.first_plan.clone())];
        let mut pose = setup.state.pose;
        for r in &log.records {
            plans.push((pose, r.plan.clone().expect("grasp records carry a plan")));
            pose = Pose { position: r.observed.position(), rotation: r.observed.rotation() };
        }
        for (k, (pose, plan)) in plans.iter().enumerate() {
            let contacts: Vec<_> = setup.anchors.iter().map(|a| pose.transform(&a.point)).collect();
            let frames: Vec<Matrix3<f64>> = setup.anchors.iter().map(|a| pose.rotation * a.frame).collect();
            let f = plan.total();
            let balance = (grasp::grasp_matrix(&contacts, &pose.position) * &f + &g_o).norm();
            let violations = planner::violations(&f, &frames, &fp, 1e-9);
            if balance > SAFETY_TOL || !violations.is_empty() {
                bad.push(format!("{name} plan {k}: balance {balance:.2e}, {violations:?}"));
            }
            checked += 1;
        }
    }
    let pass = bad.is_empty();
    report(
        "force-plan safety",
        pass,
        &format!("{checked} plans over {} scenarios, {} unsafe", GRASP_SCENARIOS.len(), bad.len()),
    );
    assert!(pass, "{bad:#?}");
}

#[test]
fn gradient_audits() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sc = scenario("water_cup");
    let setup = mpc::init_grasp(&sc).unwrap();
    let pose = setup.pose0;
    let contacts: Vec<_> = setup.anchors.iter().map(|a| pose.transform(&a.point)).collect();
    let normals: Vec<_> = setup.anchors.iter().map(|a| -(pose.rotation * a.frame).column(2).into_owned()).collect();
    let gs = GraspState::new(contacts, normals, pose.position, pose.rotation, 0.053).unwrap();
    let nlp = FrictionNlp {
        f_pre: setup.first_plan.total() - setup.first_plan.friction_component(),
        grasp: gs.grasp_matrix(),
        frames: gs.contact_frames().unwrap(),
        params: sc.friction.unwrap(),
    };
    let mut worst_friction = 0.0_f64;
    for _ in 0..20 {
        let y = DVector::from_fn(12, |_, _| rng.random_range(-0.1..0.1));
        worst_friction = worst_friction.max(optimizer::audit_gradients(&nlp, &y).max());
    }

    let body: Vec<_> = setup.anchors.iter().map(|a| a.point + Vector3::new(-0.001, 0.0005, 0.0)).collect();
    let target = Pose {
        position: pose.position + Vector3::new(0.0, 0.02, 0.01),
        rotation: so3::exp(&Vector3::new(0.05, 0.0, 0.1)),
    };
    let rd = setup.grasp_anchors.desired_rotations(&target.rotation);
    let mut worst_traj = 0.0_f64;
    for k in 0..20 {
        let mut cfg = sc.mapper.clone();
        if k % 2 == 1 {
            cfg.epsilon = 1e-3;
        }
        let nlp = JointTrajectoryNlp::new(&setup.model, pose, target, body.clone(), rd.clone(), cfg.clone());
        let dof = setup.model.dof();
        let mut x = DVector::zeros(cfg.horizon * dof + 18);
        for t in 0..cfg.horizon {
            for j in 0..dof {
                x[t * dof + j] = setup.q_grasp[j] + rng.random_range(-0.05..0.05);
            }
        }
        for j in 0..3 {
            x[cfg.horizon * dof + j] = target.position[j] + rng.random_range(-0.01..0.01);
            x[cfg.horizon * dof + 3 + j] = rng.random_range(-0.1..0.1);
        }
        for j in 0..12 {
            x[cfg.horizon * dof + 6 + j] = rng.random_range(0.0..0.01);
        }
        worst_traj = worst_traj.max(optimizer::audit_gradients(&nlp, &x).max());
    }
    let pass = worst_friction <= 1e-4 && worst_traj <= 1e-4;
    report(
        "gradient audits",
        pass,
        &format!("friction program {worst_friction:.2e}, joint trajectory program {worst_traj:.2e} (20 points each)"),
    );
    assert!(pass);
}

fn max_trd(log: &RunLog) -> f64 {
    log.records.iter().filter_map(|r| r.trd).fold(0.0, f64::max)
}

#[test]
fn yarn_frame() {
    let square = harness::run_scenario(&scenario("yarn_square")).unwrap();
    let translate = harness::run_scenario(&scenario("yarn_translate")).unwrap();
    let (ts, tt) = (max_trd(&square), max_trd(&translate));
    let pass = square.succeeded() && translate.succeeded() && ts <= 2.0 && tt <= 1e-10;
    report(
        "yarn frame",
        pass,
        &format!(
            "square {} max TRD {ts:.4} %; translation {} max TRD {tt:.2e} %",
            if square.succeeded() { "completed," } else { "FAILED," },
            if translate.succeeded() { "completed," } else { "FAILED," }
        ),
    );
    assert!(pass);
}

#[test]
fn cup_scenarios() {
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["empty_cup", "water_cup"] {
        let sc = scenario(name);
        let clock = Instant::now();
        let log = harness::run_scenario(&sc).unwrap();
        let secs = clock.elapsed().as_secs_f64();
        let worst = log.waypoints.iter().map(|w| w.final_error).fold(0.0, f64::max);
        let ok = log.succeeded()
            && log.waypoints.len() == sc.waypoints.len()
            && log.waypoints.iter().all(|w| w.reached && w.final_error <= sc.mapper.delta)
            && flags_clear(&log)
            && secs < 60.0;
        pass &= ok;
        parts.push(format!(
            "{name} {}/{} reached, max error {:.3} mm, {secs:.1} s",
            log.waypoints.iter().filter(|w| w.reached).count(),
            sc.waypoints.len(),
            worst * 1e3
        ));
    }
    report("cup scenarios", pass, &parts.join("; "));
    assert!(pass);
}

#[test]
fn egg_ral() {
    let sc = scenario("egg_ral");
    let log = harness::run_scenario(&sc).unwrap();
    let reached = log.waypoints.iter().filter(|w| w.reached && w.final_error <= 1e-3).count();
    let worst = log.waypoints.iter().map(|w| w.final_error).fold(0.0, f64::max);
    let pass = log.succeeded() && sc.waypoints.len() == 18 && reached == 18 && worst <= 0.5e-3;
    report("egg RAL", pass, &format!("{reached}/18 waypoints within 1 mm, max waypoint error {:.4} mm", worst * 1e3));
    assert!(pass);
}

#[test]
fn side_grasps() {
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["side_cup", "side_egg"] {
        let sc = scenario(name);
        let log = harness::run_scenario(&sc).unwrap();
        let slip = log.records.iter().any(|r| r.flags.slip);
        let mean = log.waypoints.iter().map(|w| w.final_error).sum::<f64>() / log.waypoints.len().max(1) as f64;
        let ok = log.succeeded() && log.waypoints.len() == sc.waypoints.len() && !slip && mean <= 1e-3;
        pass &= ok;
        parts.push(format!(
            "{name} {}, slip {slip}, mean error {:.4} mm",
            if log.succeeded() { "completed" } else { "FAILED" },
            mean * 1e3
        ));
    }
    report("side grasps", pass, &parts.join("; "));
    assert!(pass);
}

/// Walks away from `start` one gram at a time until a run fails.
fn first_failure(sc: &ScenarioConfig, start: f64, step: f64, limit: f64) -> Option<(f64, harness::SweepPoint)> {
    let values: Vec<f64> =
        (0..).map(|k| start + step * k as f64).take_while(|v| (v - limit) * step.signum() <= 1e-12).collect();
    for v in values {
        let p = harness::run_sweep(sc, "plant.mass", &[v]).unwrap().remove(0);
        if !p.success {
            return Some((v, p));
        }
    }
    None
}

#[test]
fn robustness_sweeps() {
    let sc = scenario("cup_mass_sweep");
    let band: Vec<f64> = (53..=64).map(|g| g as f64 * 1e-3).collect();
    let points = harness::run_sweep(&sc, "plant.mass", &band).unwrap();
    let band_ok = points.iter().all(|p| p.success);
    let below = first_failure(&sc, 0.052, -0.001, 0.020);
    let above = first_failure(&sc, 0.065, 0.001, 0.120);
    let below_ok = below.as_ref().is_some_and(|(_, p)| {
        p.flags.deformation || p.failure.as_deref().is_some_and(|f| f.contains("deformation: true"))
    });
    let above_ok = above
        .as_ref()
        .is_some_and(|(_, p)| p.flags.slip || p.failure.as_deref().is_some_and(|f| f.contains("slip: true")));
    let lo = below.as_ref().map_or(f64::NAN, |(v, _)| v + 0.001);
    let hi = above.as_ref().map_or(f64::NAN, |(v, _)| v - 0.001);

    let mu = scenario("cup_mu_sweep");
    let mus = harness::parse_range("0.50:0.75:6").unwrap();
    let mu_points = harness::run_sweep(&mu, "friction.mu", &mus).unwrap();
    let mu_ok = mu.plant_config().unwrap().mu == 0.65 && mu_points.iter().all(|p| p.success);

    let pass = band_ok && below_ok && above_ok && mu_ok;
    report(
        "robustness sweeps",
        pass,
        &format!(
            "planner 60 g: 53-64 g {}; simulated band [{:.0}, {:.0}] g, deformation below {}, slip above {}; assumed mu 0.50-0.75 at plant mu 0.65 {}",
            if band_ok { "all succeed" } else { "NOT all succeed" },
            lo * 1e3,
            hi * 1e3,
            below_ok,
            above_ok,
            if mu_ok { "all succeed" } else { "NOT all succeed" }
        ),
    );
    assert!(pass);
}

#[test]
fn compliance_duality() {
    let mut worst = (0.0_f64, "");
    let mut grasp_worst = 0.0_f64;
    for name in NOMINAL {
        let sc = scenario(name);
        assert_eq!(sc.kind, ScenarioKind::Grasp);
        assert_eq!(sc.plant.noise_position_std, 0.0);
        let setup = mpc::init_grasp(&sc).unwrap();
        let (planned, realized) = mpc::grasp_normal_forces(&setup);
        for (p, r) in planned.iter().zip(&realized) {
            grasp_worst = grasp_worst.max((r - p).abs() / p);
        }
        let log = mpc::run_mpc_from(&sc, &setup);
        for f in log.records.iter().flat_map(|r| &r.fingers) {
            let e = (f.realized_normal - f.planned_normal).abs() / f.planned_normal;
            if e > worst.0 {
                worst = (e, name);
            }
        }
    }
    let pass = worst.0.max(grasp_worst) <= 0.10;
    report(
        "compliance duality",
        pass,
        &format!(
            "max per-finger normal mismatch {:.2} % over every iteration ({}), {:.1e} % at the initial grasps",
            worst.0 * 100.0,
            worst.1,
            grasp_worst * 100.0
        ),
    );
    assert!(pass);
}

#[test]
fn determinism() {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, noise) in [("water_cup", 2e-5), ("yarn_square", 0.0)] {
        let mut sc = scenario(name);
        sc.plant.noise_position_std = noise;
        sc.plant.noise_rotation_std = noise * 10.0;
        let a = harness::run_scenario(&sc).unwrap().without_timing();
        let b = harness::run_scenario(&sc).unwrap().without_timing();
        let mut ja = Vec::new();
        let mut jb = Vec::new();
        a.write_jsonl(&mut ja).unwrap();
        b.write_jsonl(&mut jb).unwrap();
        let same = a == b && ja == jb;
        pass &= same;
        parts.push(format!("{name} {}", if same { "identical" } else { "DIFFERENT" }));
    }
    report("determinism", pass, &parts.join("; "));
    assert!(pass);
}
