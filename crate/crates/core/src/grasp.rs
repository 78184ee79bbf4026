//! Grasp matrix, local contact frames, friction-cone margins and the
//! normal/tangential split of contact forces.
//!
//! Forces are expressed in world coordinates throughout; the contact frame
//! `{C_i}` is only used to read off normal and tangential components. The
//! local z axis of `{C_i}` is the inward surface normal.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, skew};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraspError {
    #[error("normal vector must be non-zero")]
    ZeroNormal,
    #[error("normal {index} is not unit length (norm {norm})")]
    NonUnitNormal { index: usize, norm: f64 },
    #[error("grasp needs at least 3 contacts, got {0}")]
    TooFewContacts(usize),
    #[error("contacts {0} and {1} coincide")]
    CoincidentContacts(usize, usize),
    #[error("{points} contact points but {normals} normals")]
    Dimension { points: usize, normals: usize },
    #[error("invalid friction parameters: {0}")]
    Friction(String),
}

/// Contact geometry and object mass properties in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspState {
    pub contacts: Vec<Vector3<f64>>,
    /// Outward surface normals at the contacts.
    pub normals: Vec<Vector3<f64>>,
    /// Object centre of mass.
    pub center: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub mass: f64,
}

impl GraspState {
    pub fn new(
        contacts: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
        center: Vector3<f64>,
        rotation: Matrix3<f64>,
        mass: f64,
    ) -> Result<Self, GraspError> {
        if contacts.len() != normals.len() {
            return Err(GraspError::Dimension { points: contacts.len(), normals: normals.len() });
        }
        if contacts.len() < 3 {
            return Err(GraspError::TooFewContacts(contacts.len()));
        }
        for (i, n) in normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > 1e-10 {
                return Err(GraspError::NonUnitNormal { index: i, norm: n.norm() });
            }
        }
        for i in 0..contacts.len() {
            for j in i + 1..contacts.len() {
                if (contacts[i] - contacts[j]).norm() == 0.0 {
                    return Err(GraspError::CoincidentContacts(i, j));
                }
            }
        }
        Ok(GraspState { contacts, normals, center, rotation, mass })
    }

    pub fn contact_count(&self) -> usize {
        self.contacts.len()
    }

    pub fn grasp_matrix(&self) -> DMatrix<f64> {
        grasp_matrix(&self.contacts, &self.center)
    }

    pub fn contact_frames(&self) -> Result<Vec<Matrix3<f64>>, GraspError> {
        self.normals.iter().map(contact_frame).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionParams {
    pub mu: f64,
    pub f_n_min: f64,
    pub f_n_max: f64,
}

impl FrictionParams {
    pub fn new(mu: f64, f_n_min: f64, f_n_max: f64) -> Result<Self, GraspError> {
        let fp = FrictionParams { mu, f_n_min, f_n_max };
        fp.validate()?;
        Ok(fp)
    }

    pub fn validate(&self) -> Result<(), GraspError> {
        if !(self.mu > 0.0) {
            return Err(GraspError::Friction(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.f_n_min >= 0.0 && self.f_n_min < self.f_n_max) {
            return Err(GraspError::Friction(format!(
                "need 0 <= f_n_min < f_n_max, got [{}, {}]",
                self.f_n_min, self.f_n_max
            )));
        }
        Ok(())
    }
}

/// 6 × 3m grasp matrix with blocks `[I₃; S(p_i − p_o)]`.
pub fn grasp_matrix(contacts: &[Vector3<f64>], center: &Vector3<f64>) -> DMatrix<f64> {
    let m = contacts.len();
    let mut g = DMatrix::zeros(6, 3 * m);
    for (i, p) in contacts.iter().enumerate() {
        g.view_mut((0, 3 * i), (3, 3)).copy_from(&Matrix3::identity());
        g.view_mut((3, 3 * i), (3, 3)).copy_from(&skew(&(p - center)));
    }
    g
}

/// Contact frame for outward normal `n`: columns are two tangent axes and
/// the inward normal `-n`. Tangents come from Gram–Schmidt against the world
/// x axis, or the y axis when `|n·x| > 0.9`.
pub fn contact_frame(n: &Vector3<f64>) -> Result<Matrix3<f64>, GraspError> {
    let norm = n.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(GraspError::ZeroNormal);
    }
    let z = -n / norm;
    let reference = if z.x.abs() > 0.9 { Vector3::y() } else { Vector3::x() };
    let x = (reference - z * z.dot(&reference)).normalize();
    let y = z.cross(&x);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

/// Per-finger friction-cone and normal-bound report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeMargin {
    pub tangential: f64,
    /// `μ f_z`
    pub capacity: f64,
    /// `‖f_t‖ / (μ f_z)`, infinite when `f_z ≤ 0`.
    pub ratio: f64,
    pub cone_violated: bool,
    pub below_min: bool,
    pub above_max: bool,
}

impl ConeMargin {
    pub fn is_ok(&self) -> bool {
        !(self.cone_violated || self.below_min || self.above_max)
    }
}

/// Cone and bound check for local-frame forces `(f_x, f_y, f_z)`, with an
/// absolute slack `tol` on each inequality.
pub fn cone_margin_tol(f_local: &[Vector3<f64>], fp: &FrictionParams, tol: f64) -> Vec<ConeMargin> {
    f_local
        .iter()
        .map(|f| {
            let tangential = (f.x * f.x + f.y * f.y).sqrt();
            let capacity = fp.mu * f.z;
            let ratio = if f.z > 0.0 {
                tangential / capacity
            } else if tangential == 0.0 && f.z == 0.0 {
                // The zero force sits on the cone apex.
                0.0
            } else {
                f64::INFINITY
            };
            ConeMargin {
                tangential,
                capacity,
                ratio,
                cone_violated: tangential > capacity + tol,
                below_min: f.z < fp.f_n_min - tol,
                above_max: f.z > fp.f_n_max + tol,
            }
        })
        .collect()
}

pub fn cone_margin(f_local: &[Vector3<f64>], fp: &FrictionParams) -> Vec<ConeMargin> {
    cone_margin_tol(f_local, fp, 0.0)
}

/// World-frame stacked forces to per-finger local components.
pub fn to_local(f_world: &DVector<f64>, frames: &[Matrix3<f64>]) -> Vec<Vector3<f64>> {
    frames.iter().enumerate().map(|(i, r)| r.transpose() * linalg::block3(f_world, i)).collect()
}

pub fn to_world(f_local: &[Vector3<f64>], frames: &[Matrix3<f64>]) -> DVector<f64> {
    let w: Vec<Vector3<f64>> = f_local.iter().zip(frames).map(|(f, r)| r * f).collect();
    linalg::stack3(&w)
}

/// Inward-normal component and tangential magnitude for each finger.
pub fn decompose_force(f_world: &DVector<f64>, frames: &[Matrix3<f64>]) -> (DVector<f64>, DVector<f64>) {
    let local = to_local(f_world, frames);
    let perp = DVector::from_iterator(local.len(), local.iter().map(|f| f.z));
    let par = DVector::from_iterator(local.len(), local.iter().map(|f| (f.x * f.x + f.y * f.y).sqrt()));
    (perp, par)
}
