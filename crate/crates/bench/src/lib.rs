//! Fixtures shared by the pipeline benchmarks.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rigigrip::harness::{self, ForceSnapshot, GraspSetup};
use rigigrip::{mapper, JointState, Pose, ScenarioConfig};

pub fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenarios_dir().join(name)).expect("bundled scenario loads")
}

pub fn snapshot() -> ForceSnapshot {
    ForceSnapshot::load(&scenarios_dir().join("snapshots/water_cup_grasp.toml")).expect("bundled snapshot loads")
}

/// A settled grasp plus the inputs of one mapper solve toward `lift` metres up.
pub struct MapperCase {
    pub sc: ScenarioConfig,
    pub setup: GraspSetup,
    pub q0: JointState,
    pub target: Pose,
    pub body_targets: Vec<Vector3<f64>>,
    pub desired_rotations: Vec<Matrix3<f64>>,
}

pub fn mapper_case(name: &str, lift: f64) -> MapperCase {
    let sc = scenario(name);
    let setup = harness::init_grasp(&sc).expect("grasp settles");
    let pose = setup.pose0;
    let target = Pose { position: pose.position + Vector3::new(0.0, 0.0, lift), rotation: pose.rotation };
    let frames: Vec<Matrix3<f64>> = setup.anchors.iter().map(|a| pose.rotation * a.frame).collect();
    let f = &setup.first_plan.f_c;
    let f_local: Vec<Vector3<f64>> = frames
        .iter()
        .enumerate()
        .map(|(i, r)| r.transpose() * Vector3::new(f[3 * i], f[3 * i + 1], f[3 * i + 2]))
        .collect();
    let d = mapper::penetration_world(&setup.gains, &f_local, &frames);
    let body_targets = setup.anchors.iter().zip(&d).map(|(a, di)| a.point + pose.rotation.transpose() * di).collect();
    let desired_rotations = setup.grasp_anchors.desired_rotations(&target.rotation);
    let q0 = JointState::at_rest(setup.q_grasp.clone());
    MapperCase { sc, setup, q0, target, body_targets, desired_rotations }
}

impl MapperCase {
    pub fn solve(&self) -> mapper::TrajectorySolution {
        mapper::solve_joint_trajectory(
            &self.setup.model,
            &self.q0,
            self.setup.pose0,
            self.target,
            &self.body_targets,
            &self.desired_rotations,
            &self.sc.mapper,
            false,
        )
        .expect("mapper solves")
    }
}
