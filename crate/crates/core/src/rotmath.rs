//! Minimal SO(3) toolkit: exponential/log maps, axis rotations, heading
//! (yaw) decomposition about the gravity axis and horizontal projection.
//!
//! Orientations are carried as 3x3 rotation matrices. Quaternions only show
//! up inside [`log_map`], where they give a branch-free inverse near pi.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotError {
    #[error("degenerate axis")]
    DegenerateAxis,
}

/// A proper rotation matrix (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix that the caller guarantees to be a rotation.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Projects an arbitrary (non-singular) matrix onto the nearest rotation.
    pub fn from_matrix_nearest(m: Matrix3<f64>) -> Self {
        Self(nearest_rotation(&m))
    }

    /// Builds a rotation from 9 row-major entries, snapping to the nearest
    /// orthonormal matrix so that values rounded through text files stay valid.
    pub fn from_row_major(v: &[f64; 9]) -> Self {
        Self::from_matrix_nearest(Matrix3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Applies the inverse rotation (R^T v).
    pub fn apply_inverse(&self, v: &Vec3) -> Vec3 {
        self.0.tr_mul(v)
    }

    /// Rotation angle of this rotation, in [0, pi].
    pub fn angle(&self) -> f64 {
        log_map(self).norm()
    }

    /// Geodesic distance to `other`, in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (self.transpose() * *other).angle()
    }

    /// Replaces the matrix by its nearest orthonormal matrix.
    pub fn renormalized(&self) -> Self {
        Self(nearest_rotation(&self.0))
    }

    /// Largest absolute entry of R^T R - I.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;

    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula: axis-angle vector to rotation matrix.
pub fn exp_map(v: &Vec3) -> Rotation {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    // sin(t)/t and (1 - cos(t))/t^2, with Taylor series near zero
    let (a, b) = if theta < 1e-4 {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(v);
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Inverse of [`exp_map`]: returns the axis-angle vector with angle in [0, pi].
///
/// Goes through a unit quaternion (Shepperd's method), which stays well
/// conditioned for angles close to pi where the trace-based formula breaks down.
pub fn log_map(r: &Rotation) -> Vec3 {
    let m = &r.0;
    let tr = m.trace();
    let (w, x, y, z);
    if tr > m[(0, 0)] && tr > m[(1, 1)] && tr > m[(2, 2)] {
        let s = (1.0 + tr).max(0.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[(2, 1)] - m[(1, 2)]) / s;
        y = (m[(0, 2)] - m[(2, 0)]) / s;
        z = (m[(1, 0)] - m[(0, 1)]) / s;
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).max(0.0).sqrt() * 2.0;
        w = (m[(2, 1)] - m[(1, 2)]) / s;
        x = 0.25 * s;
        y = (m[(0, 1)] + m[(1, 0)]) / s;
        z = (m[(0, 2)] + m[(2, 0)]) / s;
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).max(0.0).sqrt() * 2.0;
        w = (m[(0, 2)] - m[(2, 0)]) / s;
        x = (m[(0, 1)] + m[(1, 0)]) / s;
        y = 0.25 * s;
        z = (m[(1, 2)] + m[(2, 1)]) / s;
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).max(0.0).sqrt() * 2.0;
        w = (m[(1, 0)] - m[(0, 1)]) / s;
        x = (m[(0, 2)] + m[(2, 0)]) / s;
        y = (m[(1, 2)] + m[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let (w, v) = if w < 0.0 {
        (-w, -Vec3::new(x, y, z))
    } else {
        (w, Vec3::new(x, y, z))
    };
    let n = v.norm();
    if n < 1e-300 {
        return Vec3::zeros();
    }
    let angle = 2.0 * n.atan2(w);
    v * (angle / n)
}

/// Rotation of `theta` radians about `axis` (normalized internally).
pub fn rot_about_axis(axis: &Vec3, theta: f64) -> Result<Rotation, RotError> {
    let n = axis.norm();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(RotError::DegenerateAxis);
    }
    Ok(exp_map(&(axis * (theta / n))))
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Heading offset between two orientations: the angle `theta` about the unit
/// axis `g` for which `rot_about_axis(g, theta) * r_gt` is geodesically closest
/// to `r_est`. Result lies in (-pi, pi].
///
/// With M = r_gt r_est^T, tr(R_g(theta) M) = cos(theta) (tr M - g'Mg)
/// + sin(theta) tr([g]x M) + g'Mg, which is maximized in closed form.
pub fn yaw_between(r_est: &Rotation, r_gt: &Rotation, g: &Vec3) -> f64 {
    let g = g.normalize();
    let m = r_gt.0 * r_est.0.transpose();
    let gmg = g.dot(&(m * g));
    let c = m.trace() - gmg;
    let s = (skew(&g) * m).trace();
    if c.abs() < 1e-300 && s.abs() < 1e-300 {
        return 0.0;
    }
    let theta = s.atan2(c);
    if theta <= -PI {
        PI
    } else {
        theta
    }
}

/// Removes the component of `m` along the unit vector `g`.
pub fn project_horizontal(m: &Vec3, g: &Vec3) -> Vec3 {
    m - g * m.dot(g)
}

/// Nearest orthonormal matrix in the Frobenius sense (polar decomposition).
fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}
