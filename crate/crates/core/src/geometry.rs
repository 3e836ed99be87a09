//! Rigid-body transforms on SE(3).
//!
//! Tangent vectors are ordered `(ω, ρ)`: the first three components are the
//! rotation (axis-angle), the last three the translational part. The
//! retraction used by the pose-graph solver is `T ∘ exp(δ)`.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

/// Rotation angles at or beyond `π - LOG_ANGLE_MARGIN` are outside the
/// domain of [`Pose::log`].
pub const LOG_ANGLE_MARGIN: f64 = 1e-6;

/// Squared angle below which trigonometric coefficients use Taylor series.
const SERIES_ANGLE2: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("rotation angle {angle} is too close to pi for a unique logarithm")]
    LogDomain { angle: f64 },
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
}

/// An element of SE(3): `x ↦ rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Matrix3::identity(), Vector3::new(x, y, z))
    }

    /// Rotation about `axis` (need not be normalized) by `angle` radians, zero translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::new(so3_exp(&(axis / n * angle)), Vector3::zeros())
    }

    /// Rotation about +z by `angle` radians followed by a translation.
    pub fn rot_z(angle: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = angle.sin_cos();
        let r = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self::new(r, translation)
    }

    /// Builds a pose from a quaternion in `(qx, qy, qz, qw)` order; the quaternion is normalized.
    pub fn from_quaternion(
        translation: Vector3<f64>,
        qx: f64,
        qy: f64,
        qz: f64,
        qw: f64,
    ) -> Result<Self, GeometryError> {
        let q = Quaternion::new(qw, qx, qy, qz);
        let n = q.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::ZeroQuaternion);
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(Self::new(*uq.to_rotation_matrix().matrix(), translation))
    }

    /// Quaternion of the rotation in `(qx, qy, qz, qw)` order with `qw >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = q.quaternion();
        let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
        [sign * q.i, sign * q.j, sign * q.k, sign * q.w]
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose::new(rt, -(rt * self.translation))
    }

    /// `self⁻¹ ∘ other`, the pose of `other` expressed in the frame of `self`.
    pub fn between(&self, other: &Pose) -> Pose {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn exp(xi: &Vector6<f64>) -> Pose {
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let rho = Vector3::new(xi[3], xi[4], xi[5]);
        Pose::new(so3_exp(&omega), so3_left_jacobian(&omega) * rho)
    }

    pub fn log(&self) -> Result<Vector6<f64>, GeometryError> {
        let omega = so3_log(&self.rotation)?;
        let rho = so3_left_jacobian_inverse(&omega) * self.translation;
        Ok(Vector6::new(omega[0], omega[1], omega[2], rho[0], rho[1], rho[2]))
    }

    /// Rotation angle in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Frobenius norm of `RᵀR − I` and `|det R − 1|`, the larger of the two.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    /// Largest absolute difference between rotation entries and between translation entries.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let r = (self.rotation - other.rotation).amax();
        let t = (self.translation - other.translation).amax();
        r.max(t)
    }

    /// Projects the rotation back onto SO(3) (nearest rotation in Frobenius norm).
    pub fn renormalized(&self) -> Pose {
        Pose::new(project_to_so3(&self.rotation), self.translation)
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn inverse(p: &Pose) -> Pose {
    p.inverse()
}

pub fn se3_exp(xi: &Vector6<f64>) -> Pose {
    Pose::exp(xi)
}

pub fn se3_log(p: &Pose) -> Result<Vector6<f64>, GeometryError> {
    p.log()
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Rodrigues' formula.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    let (a, b) = if theta2 < SERIES_ANGLE2 {
        let t4 = theta2 * theta2;
        (1.0 - theta2 / 6.0 + t4 / 120.0, 0.5 - theta2 / 24.0 + t4 / 720.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + w * a + w * w * b
}

pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos()
}

pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let theta = rotation_angle(r);
    if theta >= std::f64::consts::PI - LOG_ANGLE_MARGIN {
        return Err(GeometryError::LogDomain { angle: theta });
    }
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-6 {
        // θ / (2 sin θ) ≈ ½ (1 + θ²/6)
        return Ok(vee * (0.5 * (1.0 + theta * theta / 6.0)));
    }
    if theta < 3.0 {
        return Ok(vee * (theta / (2.0 * theta.sin())));
    }
    // Close to π the antisymmetric part vanishes; recover the axis from the
    // symmetric part and take the sign from the antisymmetric one.
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * theta.cos();
    let scale = 1.0 - theta.cos();
    let (mut k, mut best) = (0, b[(0, 0)]);
    for i in 1..3 {
        if b[(i, i)] > best {
            best = b[(i, i)];
            k = i;
        }
    }
    let mut axis = b.column(k) / (best * scale).sqrt();
    axis /= axis.norm();
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    let (b, c) = if theta2 < SERIES_ANGLE2 {
        let t4 = theta2 * theta2;
        (
            0.5 - theta2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - theta2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let theta = theta2.sqrt();
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    Matrix3::identity() + w * b + w * w * c
}

pub fn so3_left_jacobian_inverse(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    let c = if theta2 < SERIES_ANGLE2 {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        let theta = theta2.sqrt();
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
    };
    Matrix3::identity() - w * 0.5 + w * w * c
}

pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}
