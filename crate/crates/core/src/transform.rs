//! Rigid SE(3) transforms stored as homogeneous 4x4 matrices.

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

/// Tolerance used when checking that a rotation block is orthonormal.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

/// A rigid transform `x' = R x + t`.
///
/// The matrix is kept verbatim (not re-derived from a quaternion) so that a
/// transform read from disk is written back bit-identically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 16]", into = "[f64; 16]")]
pub struct RigidTransform(Matrix4<f64>);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("transform contains non-finite entries")]
    NonFinite,
    #[error("bottom row must be [0, 0, 0, 1]")]
    NotHomogeneous,
    #[error("rotation block is not orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    /// Builds a transform from a matrix, validating the rigid-body structure.
    pub fn from_matrix(m: Matrix4<f64>) -> Result<Self, TransformError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(TransformError::NonFinite);
        }
        if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
            return Err(TransformError::NotHomogeneous);
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if dev > ORTHONORMAL_TOLERANCE || (det - 1.0).abs() > 10.0 * ORTHONORMAL_TOLERANCE {
            return Err(TransformError::NotOrthonormal(dev.max((det - 1.0).abs())));
        }
        Ok(Self(m))
    }

    pub fn from_row_major(values: &[f64; 16]) -> Result<Self, TransformError> {
        Self::from_matrix(Matrix4::from_row_slice(values))
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.0[(r, c)];
            }
        }
        out
    }

    pub fn from_parts(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self(m)
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::from_parts(Rotation3::identity(), Vector3::new(x, y, z))
    }

    /// Rotation about +z by `yaw` radians followed by a translation.
    pub fn from_yaw_translation(yaw: f64, translation: Vector3<f64>) -> Self {
        Self::from_parts(
            Rotation3::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
        )
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation() * p.coords + self.translation())
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * v
    }

    /// Exact-structure inverse `[R^T | -R^T t]`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        let t = -(rt * self.translation());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self(m)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self(self.0 * other.0)
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl TryFrom<[f64; 16]> for RigidTransform {
    type Error = TransformError;

    fn try_from(values: [f64; 16]) -> Result<Self, Self::Error> {
        Self::from_row_major(&values)
    }
}

impl From<RigidTransform> for [f64; 16] {
    fn from(t: RigidTransform) -> Self {
        t.to_row_major()
    }
}
