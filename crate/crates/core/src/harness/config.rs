//! Scenario files (TOML, versioned by `schema_version`).

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::grasp::FrictionParams;
use crate::hand::{HandDescription, HandModel};
use crate::mapper::{ComplianceGains, MapperConfig};
use crate::plant::{ObjectGeometry, PlantConfig};
use crate::so3;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Grasp,
    Yarn,
}

/// Hand given inline or as a path relative to the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HandSource {
    File { file: PathBuf },
    Inline(HandDescription),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectConfig {
    pub geometry: ObjectGeometry,
    /// Mass the planner assumes (kg).
    pub mass: f64,
    /// Centre of mass in the world frame at the start (m).
    pub center: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspConfig {
    /// Object-frame contact directions; each is projected radially onto the
    /// object surface.
    pub contacts: Vec<[f64; 3]>,
    /// Framework edges; complete graph when absent.
    #[serde(default)]
    pub edges: Option<Vec<[usize; 2]>>,
    /// Joint seed for the initial inverse kinematics.
    #[serde(default = "default_seed_angle")]
    pub q_seed: f64,
}

fn default_seed_angle() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YarnConfig {
    /// Initial fingertip positions in the world frame (m).
    pub points: Vec<[f64; 3]>,
    #[serde(default)]
    pub edges: Option<Vec<[usize; 2]>>,
    /// Drift correction gain on the squared edge lengths (0 disables).
    #[serde(default = "default_baumgarte")]
    pub baumgarte: f64,
    #[serde(default = "default_seed_angle")]
    pub q_seed: f64,
}

fn default_baumgarte() -> f64 {
    1.0
}

/// Plant-side values; anything unset follows the planner's assumption.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantOverrides {
    pub mass: Option<f64>,
    pub mu: Option<f64>,
    /// N/mm per contact axis; `1 / gain` when absent.
    pub stiffness: Option<[f64; 3]>,
    /// N; `1.2 · f_n_max` when absent.
    pub deformation_threshold: Option<f64>,
    /// N/kg of threshold change with plant mass.
    #[serde(default)]
    pub deformation_slope: f64,
    /// Mass at which `deformation_threshold` applies; plant mass when absent.
    pub reference_mass: Option<f64>,
    #[serde(default)]
    pub noise_position_std: f64,
    #[serde(default)]
    pub noise_rotation_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    /// Time allotted to one horizon step when deriving contact velocities (s).
    #[serde(default = "default_step_time")]
    pub step_time: f64,
    /// Cone ratio above which `--strict` fails a run.
    #[serde(default = "default_warn_ratio")]
    pub warn_cone_ratio: f64,
}

fn default_step_time() -> f64 {
    1.0
}
fn default_warn_ratio() -> f64 {
    0.95
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig { step_time: default_step_time(), warn_cone_ratio: default_warn_ratio() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hand: Option<HandSource>,
    #[serde(default)]
    pub object: Option<ObjectConfig>,
    #[serde(default)]
    pub grasp: Option<GraspConfig>,
    #[serde(default)]
    pub yarn: Option<YarnConfig>,
    #[serde(default)]
    pub friction: Option<FrictionParams>,
    #[serde(default)]
    pub compliance: Option<ComplianceGains>,
    pub mapper: MapperConfig,
    #[serde(default)]
    pub mpc: MpcConfig,
    /// Object translations relative to the initial pose (m).
    pub waypoints: Vec<[f64; 3]>,
    /// Optional rotation vectors (rad), one per waypoint.
    #[serde(default)]
    pub waypoint_rotations: Option<Vec<[f64; 3]>>,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub plant: PlantOverrides,
    /// Directory that relative paths resolve against; set by `load`.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -1.0]
}

/// Offset of waypoint `k` relative to the initial pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub translation: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let sc: ScenarioConfig = toml::from_str(s).map_err(|e| HarnessError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    /// Loads `path`, trying `path.toml` when `path` has no extension and
    /// does not exist.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let path = resolve_toml(path);
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut sc: ScenarioConfig =
            toml::from_str(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?;
        sc.base_dir = path.parent().map(Path::to_path_buf);
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.waypoints.is_empty() {
            return bad("waypoints must not be empty".into());
        }
        if let Some(r) = &self.waypoint_rotations {
            if r.len() != self.waypoints.len() {
                return bad(format!("{} waypoint_rotations for {} waypoints", r.len(), self.waypoints.len()));
            }
        }
        if (Vector3::from(self.gravity).norm() - 1.0).abs() > 1e-9 {
            return bad("gravity must be a unit vector".into());
        }
        self.mapper.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.mpc.step_time > 0.0) {
            return bad("mpc.step_time must be positive".into());
        }
        match self.kind {
            ScenarioKind::Grasp => {
                let obj =
                    self.object.as_ref().ok_or_else(|| HarnessError::Config("grasp scenario needs [object]".into()))?;
                if !(obj.mass >= 0.0) {
                    return bad("object.mass must be non-negative".into());
                }
                let g =
                    self.grasp.as_ref().ok_or_else(|| HarnessError::Config("grasp scenario needs [grasp]".into()))?;
                if g.contacts.len() < 3 {
                    return bad("at least three contacts are required".into());
                }
                let fp = self.friction.ok_or_else(|| HarnessError::Config("grasp scenario needs [friction]".into()))?;
                fp.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                self.compliance
                    .ok_or_else(|| HarnessError::Config("grasp scenario needs [compliance]".into()))?
                    .validate()
                    .map_err(|e| HarnessError::Config(e.to_string()))?;
                self.plant_config()?.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            }
            ScenarioKind::Yarn => {
                let y = self.yarn.as_ref().ok_or_else(|| HarnessError::Config("yarn scenario needs [yarn]".into()))?;
                if y.points.len() < 3 {
                    return bad("at least three yarn points are required".into());
                }
                if !(y.baumgarte >= 0.0) {
                    return bad("yarn.baumgarte must be non-negative".into());
                }
            }
        }
        Ok(())
    }

    pub fn hand_model(&self) -> Result<HandModel, HarnessError> {
        let desc = match &self.hand {
            None => HandModel::default_description(),
            Some(HandSource::Inline(d)) => d.clone(),
            Some(HandSource::File { file }) => {
                let path = match &self.base_dir {
                    Some(b) if file.is_relative() => b.join(file),
                    _ => file.clone(),
                };
                let text =
                    std::fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?
            }
        };
        Ok(desc.build()?)
    }

    pub fn waypoints(&self) -> Vec<Waypoint> {
        self.waypoints
            .iter()
            .enumerate()
            .map(|(k, w)| Waypoint {
                translation: Vector3::from(*w),
                rotation: self
                    .waypoint_rotations
                    .as_ref()
                    .map_or(Matrix3::identity(), |r| so3::exp(&Vector3::from(r[k]))),
            })
            .collect()
    }

    /// Plant configuration after applying overrides.
    pub fn plant_config(&self) -> Result<PlantConfig, HarnessError> {
        let obj = self.object.as_ref().ok_or_else(|| HarnessError::Config("missing [object]".into()))?;
        let fp = self.friction.ok_or_else(|| HarnessError::Config("missing [friction]".into()))?;
        let gains = self.compliance.ok_or_else(|| HarnessError::Config("missing [compliance]".into()))?;
        let p = &self.plant;
        let stiffness = match p.stiffness {
            Some(k) => [k[0] * 1e3, k[1] * 1e3, k[2] * 1e3],
            None => {
                let k = gains.stiffness();
                [k.x, k.y, k.z]
            }
        };
        let mass = p.mass.unwrap_or(obj.mass);
        Ok(PlantConfig {
            geometry: obj.geometry,
            mass,
            stiffness,
            mu: p.mu.unwrap_or(fp.mu),
            deformation_threshold: p.deformation_threshold.unwrap_or(1.2 * fp.f_n_max),
            deformation_slope: p.deformation_slope,
            reference_mass: p.reference_mass.unwrap_or(mass),
            noise_position_std: p.noise_position_std,
            noise_rotation_std: p.noise_rotation_std,
            gravity: self.gravity,
        })
    }

    /// Sets a numeric parameter by dotted name, as used by sweeps and CLI
    /// overrides.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<(), HarnessError> {
        let need =
            |o: bool| if o { Ok(()) } else { Err(HarnessError::Config(format!("{name} is not set in this scenario"))) };
        match name {
            "plant.mass" => self.plant.mass = Some(value),
            "plant.mu" => self.plant.mu = Some(value),
            "plant.noise_position_std" => self.plant.noise_position_std = value,
            "plant.noise_rotation_std" => self.plant.noise_rotation_std = value,
            "plant.deformation_threshold" => self.plant.deformation_threshold = Some(value),
            "object.mass" | "planner.mass" => {
                need(self.object.is_some())?;
                self.object.as_mut().unwrap().mass = value;
            }
            "friction.mu" | "planner.mu" => {
                need(self.friction.is_some())?;
                self.friction.as_mut().unwrap().mu = value;
            }
            "friction.f_n_min" => {
                need(self.friction.is_some())?;
                self.friction.as_mut().unwrap().f_n_min = value;
            }
            "friction.f_n_max" => {
                need(self.friction.is_some())?;
                self.friction.as_mut().unwrap().f_n_max = value;
            }
            "mapper.delta" => self.mapper.delta = value,
            "mapper.epsilon" => self.mapper.epsilon = value,
            "mapper.iter" => self.mapper.iter = value.round().max(0.0) as usize,
            "seed" => self.seed = value.round().max(0.0) as u64,
            _ => return Err(HarnessError::Config(format!("unknown parameter {name}"))),
        }
        Ok(())
    }
}

/// `path`, or `path.toml` when only that exists.
pub fn resolve_toml(path: &Path) -> PathBuf {
    if !path.exists() && path.extension().is_none() {
        let with = path.with_extension("toml");
        if with.exists() {
            return with;
        }
    }
    path.to_path_buf()
}

/// One-shot planner input: contact set and loading, no hand involved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceSnapshot {
    pub schema_version: u32,
    /// World-frame contact points (m).
    pub contacts: Vec<[f64; 3]>,
    /// Outward unit normals.
    pub normals: Vec<[f64; 3]>,
    pub center: [f64; 3],
    pub mass: f64,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    pub friction: FrictionParams,
    #[serde(default)]
    pub edges: Option<Vec<[usize; 2]>>,
    /// Diagonal task-space inertia (kg); identity scaled by this value.
    #[serde(default = "default_task_inertia")]
    pub task_inertia: f64,
    #[serde(default)]
    pub contact_velocity: Option<Vec<[f64; 3]>>,
    #[serde(default)]
    pub alpha: Option<Vec<[f64; 3]>>,
}

fn default_task_inertia() -> f64 {
    0.05
}

impl ForceSnapshot {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let path = resolve_toml(path);
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let s: ForceSnapshot =
            toml::from_str(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!("schema_version {} is not supported", s.schema_version)));
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
name = "t"
kind = "grasp"
waypoints = [[0.0, 0.01, 0.0]]

[object]
geometry = { kind = "cylinder", radius = 0.03, height = 0.1 }
mass = 0.01
center = [0.0, 0.0, 0.07]

[grasp]
contacts = [[1.0, 0.0, 0.1], [0.0, 1.0, -0.1], [-1.0, 0.0, 0.1], [0.0, -1.0, -0.1]]

[friction]
mu = 0.65
f_n_min = 0.05
f_n_max = 0.3

[compliance]
c = [2.0, 2.0, 5.0]

[mapper]
lambda1 = [30.0, 30.0, 30.0, 0.01, 0.01, 0.01]
lambda2 = [0.1, 0.1, 0.1]
epsilon = 1e-9
delta = 0.001
horizon = 2
iter = 20
"#;

    #[test]
    fn parses_and_defaults() {
        let sc = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        let pc = sc.plant_config().unwrap();
        assert!((pc.stiffness[2] - 200.0).abs() < 1e-9);
        assert!((pc.deformation_threshold - 0.36).abs() < 1e-12);
        assert_eq!(pc.mu, 0.65);
        assert_eq!(sc.waypoints()[0].rotation, Matrix3::identity());
        assert_eq!(sc.hand_model().unwrap().finger_count(), 4);
    }

    #[test]
    fn parse_errors_carry_location() {
        let broken = MINIMAL.replace("mu = 0.65", "mu = \"high\"");
        let err = ScenarioConfig::from_toml_str(&broken).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
        assert!(err.contains("mu"), "{err}");
    }

    #[test]
    fn rejects_bad_values() {
        let no_wp = MINIMAL.replace("waypoints = [[0.0, 0.01, 0.0]]", "waypoints = []");
        assert!(matches!(ScenarioConfig::from_toml_str(&no_wp), Err(HarnessError::Config(_))));
        let version = MINIMAL.replace("schema_version = 1", "schema_version = 9");
        assert!(matches!(ScenarioConfig::from_toml_str(&version), Err(HarnessError::Config(_))));
        let unknown = MINIMAL.replace("kind = \"grasp\"", "kind = \"grasp\"\nbogus = 1");
        assert!(matches!(ScenarioConfig::from_toml_str(&unknown), Err(HarnessError::Parse(_))));
    }

    #[test]
    fn set_param_paths() {
        let mut sc = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        sc.set_param("plant.mass", 0.07).unwrap();
        sc.set_param("planner.mu", 0.5).unwrap();
        assert_eq!(sc.plant_config().unwrap().mass, 0.07);
        assert_eq!(sc.friction.unwrap().mu, 0.5);
        assert_eq!(sc.plant_config().unwrap().mu, 0.5);
        assert!(sc.set_param("nope", 1.0).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let sc = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
        let back = ScenarioConfig::from_toml_str(&sc.to_toml_string()).unwrap();
        assert_eq!(sc, back);
    }
}
