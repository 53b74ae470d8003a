use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

/// Proper rotation matrix (orthonormal, det = +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    const TOL: f64 = 1e-10;

    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if ortho > Self::TOL || (det - 1.0).abs() > Self::TOL {
            return Err(Error::Domain(format!(
                "not a rotation: orthogonality error {ortho:.2e}, det {det}"
            )));
        }
        Ok(Self(m))
    }

    /// Wraps a matrix known to be a rotation (products of rotations, exp maps).
    pub(crate) fn new_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self(so3_exp(&(axis.normalize() * angle)))
    }

    /// Unit quaternion `(w, x, y, z)`; normalized on input.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Self(q.to_rotation_matrix().into_inner())
    }

    pub fn to_quaternion(&self) -> [f64; 4] {
        let r = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&r);
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Self(self.0 * other.0)
    }
}

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn vee_antisym(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

/// Rodrigues' formula.
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = hat(w);
    if theta < 1e-8 {
        return Matrix3::identity() + k + k * k * 0.5;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + k * a + k * k * b
}

/// Axis-angle vector `theta * axis` with `theta` in `[0, pi]`.
pub fn so3_log(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    let cos = (m.trace() - 1.0) * 0.5;
    let s = vee_antisym(m); // sin(theta) * axis
    let sin = s.norm();
    let theta = sin.atan2(cos);
    if theta < 1e-6 {
        return s;
    }
    if std::f64::consts::PI - theta < 1e-3 {
        // (R + R^T)/2 = cos I + (1 - cos) a a^T
        let sym = (m + m.transpose()) * 0.5;
        let outer = (sym - Matrix3::identity() * cos) / (1.0 - cos);
        let i = (0..3)
            .max_by(|&a, &b| outer[(a, a)].total_cmp(&outer[(b, b)]))
            .unwrap();
        let mut axis = outer.column(i).into_owned() / outer[(i, i)].max(0.0).sqrt();
        axis.normalize_mut();
        if axis.dot(&s) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    s * (theta / sin)
}

/// Inverse of the right Jacobian of SO(3): `Log(R exp(d)) ~ Log(R) + J_r^{-1}(Log R) d`.
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let coeff = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + k * 0.5 + k * k * coeff
}
