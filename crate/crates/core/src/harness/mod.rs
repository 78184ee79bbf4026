//! Scenario runner: configuration, the receding-horizon loop, yarn-frame
//! traces, sweeps and run logs.

pub mod config;
pub mod log;
pub mod mpc;
pub mod sweep;
pub mod yarn;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::grasp::{GraspError, GraspState};
use crate::hand::HandError;
use crate::mapper::MapperError;
use crate::optimizer::OptError;
use crate::planner::{self, ForcePlan, PlannerError, PlannerInputs};
use crate::plant::PlantError;
use crate::rigidity::{ContactFramework, FrameworkDescription, RigidityError, RigidityEvaluation};

pub use config::{ForceSnapshot, ScenarioConfig, ScenarioKind};
pub use log::{RunLog, RunOutcome, RunReport};
pub use mpc::{init_grasp, run_mpc, GraspSetup};
pub use sweep::{parse_range, run_sweep, success_band, SweepPoint};
pub use yarn::run_yarn_frame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Hand(#[from] HandError),
    #[error(transparent)]
    Grasp(#[from] GraspError),
    #[error(transparent)]
    Rigidity(#[from] RigidityError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Mapper(#[from] MapperError),
    #[error(transparent)]
    Optimizer(#[from] OptError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("initial framework is not rigid (rank {rank}, need {expected})")]
    NotRigid { rank: usize, expected: usize },
    #[error("initial grasp matrix has rank {rank}, need 6")]
    DegenerateGrasp { rank: usize },
    #[error("grasp could not be established: {0}")]
    GraspFailed(String),
}

/// Runs a scenario of either kind.
pub fn run_scenario(sc: &ScenarioConfig) -> Result<RunLog, HarnessError> {
    match sc.kind {
        ScenarioKind::Grasp => run_mpc(sc),
        ScenarioKind::Yarn => run_yarn_frame(sc),
    }
}

fn vecs(v: &[[f64; 3]]) -> Vec<Vector3<f64>> {
    v.iter().map(|p| Vector3::from(*p)).collect()
}

/// One-shot force plan for a snapshot.
pub fn plan_snapshot(s: &ForceSnapshot) -> Result<ForcePlan, HarnessError> {
    let contacts = vecs(&s.contacts);
    let m = contacts.len();
    let grasp =
        GraspState::new(contacts.clone(), vecs(&s.normals), Vector3::from(s.center), Matrix3::identity(), s.mass)?;
    let framework = match &s.edges {
        None => ContactFramework::complete(contacts),
        Some(e) => ContactFramework::with_edges(contacts, &e.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>())?,
    };
    let field = |v: &Option<Vec<[f64; 3]>>, name: &str| -> Result<DVector<f64>, HarnessError> {
        match v {
            None => Ok(DVector::zeros(3 * m)),
            Some(v) if v.len() == m => Ok(crate::linalg::stack3(&vecs(v))),
            Some(v) => Err(HarnessError::Config(format!("{name} has {} entries for {m} contacts", v.len()))),
        }
    };
    let inputs = PlannerInputs {
        grasp,
        framework,
        friction: s.friction,
        gravity_wrench: planner::gravity_wrench(s.mass, &Vector3::from(s.gravity)),
        task_inertia: DMatrix::identity(3 * m, 3 * m) * s.task_inertia,
        contact_velocity: field(&s.contact_velocity, "contact_velocity")?,
        alpha: field(&s.alpha, "alpha")?,
        warm_start: None,
        check_gradients: false,
    };
    Ok(planner::plan_contact_forces(&inputs)?)
}

/// Loads a framework file and evaluates its rigidity.
pub fn check_framework(path: &std::path::Path) -> Result<RigidityEvaluation, HarnessError> {
    let path = config::resolve_toml(path);
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    let desc: FrameworkDescription =
        toml::from_str(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?;
    Ok(desc.build()?.evaluate()?)
}
