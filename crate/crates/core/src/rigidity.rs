//! Contact frameworks: the graph of pairwise distance constraints between
//! contact points, its rigidity function and rigidity matrix, the
//! infinitesimal-rigidity rank test, and the total-relative-deviation metric.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Singular values below `RANK_RTOL * sigma_max` count as zero.
pub const RANK_RTOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RigidityError {
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) references a vertex outside 0..{2}")]
    VertexOutOfRange(usize, usize, usize),
    #[error("rigidity test needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("frameworks differ in vertex count or edge set")]
    Mismatch,
    #[error("edge ({0}, {1}) has zero initial length")]
    ZeroLength(usize, usize),
    #[error("velocity has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Contact framework: vertices `0..m` at `points`, with undirected edges
/// stored as `(i, j)` with `i < j` in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactFramework {
    points: Vec<Vector3<f64>>,
    edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidityEvaluation {
    pub phi: DVector<f64>,
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    pub is_rigid: bool,
}

impl ContactFramework {
    /// Framework over the complete graph `K_m`.
    pub fn complete(points: Vec<Vector3<f64>>) -> Self {
        let m = points.len();
        let edges = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
        ContactFramework { points, edges }
    }

    pub fn with_edges(points: Vec<Vector3<f64>>, edges: &[(usize, usize)]) -> Result<Self, RigidityError> {
        let m = points.len();
        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(RigidityError::SelfLoop(a, b));
            }
            if a >= m || b >= m {
                return Err(RigidityError::VertexOutOfRange(a, b, m));
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        if let Some(w) = canon.windows(2).find(|w| w[0] == w[1]) {
            return Err(RigidityError::DuplicateEdge(w[0].0, w[0].1));
        }
        Ok(ContactFramework { points, edges: canon })
    }

    /// Same graph at a new configuration.
    pub fn moved(&self, points: Vec<Vector3<f64>>) -> Result<Self, RigidityError> {
        if points.len() != self.points.len() {
            return Err(RigidityError::Mismatch);
        }
        Ok(ContactFramework { points, edges: self.edges.clone() })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.points.len()
    }

    pub fn configuration(&self) -> DVector<f64> {
        linalg::stack3(&self.points)
    }

    pub fn edge_lengths(&self) -> Vec<f64> {
        self.edges.iter().map(|&(i, j)| (self.points[i] - self.points[j]).norm()).collect()
    }

    /// Squared edge lengths in canonical edge order.
    pub fn rigidity_function(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.edges.len(),
            self.edges.iter().map(|&(i, j)| (self.points[i] - self.points[j]).norm_squared()),
        )
    }

    /// `∂φ/∂p`: row for edge (i, j) holds `2(p_i − p_j)ᵀ` in block i and the
    /// negation in block j.
    pub fn rigidity_matrix(&self) -> DMatrix<f64> {
        edge_pattern(&self.edges, self.points.len(), |i, j| self.points[i] - self.points[j])
    }

    /// Time derivative of the rigidity matrix along contact velocities `v`.
    pub fn rigidity_matrix_rate(&self, v: &DVector<f64>) -> Result<DMatrix<f64>, RigidityError> {
        let m = self.points.len();
        if v.len() != 3 * m {
            return Err(RigidityError::Dimension { expected: 3 * m, got: v.len() });
        }
        Ok(edge_pattern(&self.edges, m, |i, j| linalg::block3(v, i) - linalg::block3(v, j)))
    }

    pub fn evaluate(&self) -> Result<RigidityEvaluation, RigidityError> {
        let m = self.points.len();
        if m < 3 {
            return Err(RigidityError::TooFewVertices(m));
        }
        let matrix = self.rigidity_matrix();
        let rank = linalg::numerical_rank(&matrix, RANK_RTOL);
        Ok(RigidityEvaluation { phi: self.rigidity_function(), matrix, rank, is_rigid: rank == 3 * m - 6 })
    }

    pub fn is_infinitesimally_rigid(&self) -> Result<RigidityEvaluation, RigidityError> {
        self.evaluate()
    }
}

fn edge_pattern<F>(edges: &[(usize, usize)], m: usize, diff: F) -> DMatrix<f64>
where
    F: Fn(usize, usize) -> Vector3<f64>,
{
    let mut r = DMatrix::zeros(edges.len(), 3 * m);
    for (row, &(i, j)) in edges.iter().enumerate() {
        let d = diff(i, j) * 2.0;
        for k in 0..3 {
            r[(row, 3 * i + k)] = d[k];
            r[(row, 3 * j + k)] = -d[k];
        }
    }
    r
}

/// Total relative deviation of edge lengths, in percent.
pub fn trd(initial: &ContactFramework, current: &ContactFramework) -> Result<f64, RigidityError> {
    if initial.edges != current.edges || initial.points.len() != current.points.len() {
        return Err(RigidityError::Mismatch);
    }
    let mut total = 0.0;
    for &(i, j) in &initial.edges {
        let d0 = (initial.points[i] - initial.points[j]).norm();
        if d0 == 0.0 {
            return Err(RigidityError::ZeroLength(i, j));
        }
        let d = (current.points[i] - current.points[j]).norm();
        total += ((d - d0) / d0).abs();
    }
    Ok(total * 100.0)
}

/// Serializable framework (points plus optional explicit edges; complete
/// graph when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkDescription {
    pub points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
}

impl FrameworkDescription {
    pub fn build(&self) -> Result<ContactFramework, RigidityError> {
        let pts: Vec<Vector3<f64>> = self.points.iter().map(|p| Vector3::from(*p)).collect();
        match &self.edges {
            None => Ok(ContactFramework::complete(pts)),
            Some(e) => {
                let pairs: Vec<(usize, usize)> = e.iter().map(|p| (p[0], p[1])).collect();
                ContactFramework::with_edges(pts, &pairs)
            }
        }
    }

    pub fn from_framework(f: &ContactFramework) -> Self {
        FrameworkDescription {
            points: f.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            edges: Some(f.edges.iter().map(|&(i, j)| [i, j]).collect()),
        }
    }
}

/// The six rigid-body velocity fields (3 translations, 3 rotations about
/// the origin) evaluated at the framework's points.
pub fn rigid_motions(points: &[Vector3<f64>]) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(6);
    for axis in 0..3 {
        let mut t = Vector3::zeros();
        t[axis] = 1.0;
        out.push(linalg::stack3(&vec![t; points.len()]));
    }
    for axis in 0..3 {
        let mut w = Vector3::zeros();
        w[axis] = 1.0;
        let v: Vec<Vector3<f64>> = points.iter().map(|p| w.cross(p)).collect();
        out.push(linalg::stack3(&v));
    }
    out
}
