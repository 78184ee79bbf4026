//! Contact force planning for multi-fingered hands from graph rigidity and
//! friction constraints, conversion of planned forces to joint commands via
//! virtual penetration, and a quasi-static compliant plant to run them on.

pub mod grasp;
pub mod hand;
pub mod harness;
pub mod linalg;
pub mod mapper;
pub mod optimizer;
pub mod planner;
pub mod plant;
pub mod rigidity;
pub mod so3;

pub use grasp::{FrictionParams, GraspState};
pub use hand::{HandDescription, HandModel, JointState};
pub use harness::{HarnessError, RunLog, ScenarioConfig};
pub use mapper::{ComplianceGains, MapperConfig, Pose};
pub use optimizer::SolveStatus;
pub use planner::{ForcePlan, PlannerInputs};
pub use plant::{FailureFlags, ObjectGeometry, PlantConfig, PlantState};
pub use rigidity::{ContactFramework, FrameworkDescription, RigidityEvaluation};
