//! SO(3) exponential/logarithm maps and right Jacobians.
//!
//! Rotations are plain `Matrix3<f64>` here because the logarithm has to
//! validate arbitrary matrices read from configs and solver iterates.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::linalg::skew;

/// Orthonormality / determinant tolerance accepted by [`log`].
pub const ROTATION_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum So3Error {
    #[error("matrix is not a rotation (orthonormality error {orth:.3e}, det {det:.6})")]
    NotARotation { orth: f64, det: f64 },
}

/// Exponential map: rotation vector to rotation matrix (Rodrigues).
pub fn exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if theta2 < 1e-10 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Logarithm map returning the axis-angle vector with norm in `[0, π]`.
pub fn log(r: &Matrix3<f64>) -> Result<Vector3<f64>, So3Error> {
    let orth = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if !orth.is_finite() || orth > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
        return Err(So3Error::NotARotation { orth, det });
    }
    Ok(log_unchecked(r))
}

/// Logarithm without validation; callers guarantee `r` is a rotation.
pub fn log_unchecked(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if cos > 1.0 - 1e-6 {
        // sin(θ)/θ ≈ 1 - θ²/6 with θ² ≈ 2(1 - cos)
        let theta2 = 2.0 * (1.0 - cos);
        return vee * 0.5 * (1.0 + theta2 / 6.0);
    }
    let theta = cos.acos();
    if cos > -0.99 {
        return vee * (theta / (2.0 * theta.sin()));
    }
    // Near π: recover the axis from the symmetric part, then fix the sign
    // using the antisymmetric part.
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos;
    let mut best = 0;
    for k in 1..3 {
        if b[(k, k)] > b[(best, best)] {
            best = k;
        }
    }
    let mut axis: Vector3<f64> = b.column(best).into();
    let n = axis.norm();
    axis /= n;
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    // Refine the angle with atan2 for accuracy away from exactly π.
    let sin = 0.5 * vee.dot(&axis);
    let theta = sin.atan2(cos);
    axis * theta
}

/// Right Jacobian: `exp(w + d) ≈ exp(w) exp(Jr(w) d)`.
pub fn right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if theta2 < 1e-8 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Inverse right Jacobian: `log(exp(e) exp(d)) ≈ e + Jr⁻¹(e) d`.
pub fn right_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let c = if theta2 < 1e-8 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + k * 0.5 + k * k * c
}

/// Geodesic angle between two rotations.
pub fn angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    log_unchecked(&(a.transpose() * b)).norm()
}
