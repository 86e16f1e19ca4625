//! Rigid transforms and their 6-DOF optimizer parameterization.
//!
//! A [`RigidTransform`] `T_a_b` maps coordinates expressed in frame `b` into
//! frame `a` (it is the pose of `b` in `a`). Rotations are stored as matrices;
//! axis-angle only appears at the optimizer boundary through [`PoseParam`].

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "TransformRepr", into = "TransformRepr")]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Row-major wire form used by every document in this crate.
#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<TransformRepr> for RigidTransform {
    fn from(r: TransformRepr) -> Self {
        let m = r.rotation;
        RigidTransform {
            rotation: Matrix3::new(
                m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
            ),
            translation: Vector3::from(r.translation),
        }
    }
}

impl From<RigidTransform> for TransformRepr {
    fn from(t: RigidTransform) -> Self {
        let r = &t.rotation;
        TransformRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        RigidTransform::new(Matrix3::identity(), t)
    }

    /// Rotation about a unit axis followed by a translation.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let n = axis.norm();
        let rv = if n > 0.0 { axis * (angle / n) } else { Vector3::zeros() };
        RigidTransform::new(exp_so3(&rv), translation)
    }

    /// `self · other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        log_so3(&self.rotation).norm()
    }

    /// Translation distance and rotation angle of `self⁻¹ · other`-style
    /// discrepancy, measured as `‖t_a − t_b‖` and `angle(R_a R_bᵀ)`.
    pub fn difference(&self, other: &RigidTransform) -> (f64, f64) {
        let dt = (self.translation - other.translation).norm();
        let dr = log_so3(&(self.rotation * other.rotation.transpose())).norm();
        (dt, dr)
    }

    /// Largest per-entry deviation from orthonormality and `|det − 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.orthonormality_error() <= tol
    }

    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        (self.rotation - other.rotation)
            .amax()
            .max((self.translation - other.translation).amax())
    }
}

/// Rodrigues' formula with a Taylor fallback near zero.
pub fn exp_so3(rv: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = rv.norm_squared();
    let k = rv.cross_matrix();
    let (a, b) = if theta2 < 1e-10 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of [`exp_so3`], returning the canonical rotation vector with
/// angle in `[0, π]`. At π (within 1e-12) the representative whose first nonzero
/// component is non-negative is chosen.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let mut w = q.w;
    let mut v = q.imag();
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let s = v.norm();
    if s < 1e-12 {
        // small angle: θ ≈ 2 s, axis = v / s
        return v * (2.0 / w.max(f64::MIN_POSITIVE));
    }
    let theta = 2.0 * s.atan2(w);
    let mut rv = v * (theta / s);
    if w < 1e-12 {
        if let Some(first) = rv.iter().copied().find(|c| *c != 0.0) {
            if first < 0.0 {
                rv = -rv;
            }
        }
    }
    rv
}

/// Six optimizer scalars for one rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseParam {
    pub rotation_vector: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl PoseParam {
    pub fn from_transform(t: &RigidTransform) -> Self {
        PoseParam {
            rotation_vector: log_so3(&t.rotation),
            translation: t.translation,
        }
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::new(exp_so3(&self.rotation_vector), self.translation)
    }

    pub fn from_slice(x: &[f64]) -> Self {
        PoseParam {
            rotation_vector: Vector3::new(x[0], x[1], x[2]),
            translation: Vector3::new(x[3], x[4], x[5]),
        }
    }

    pub fn write_to(&self, out: &mut [f64]) {
        out[..3].copy_from_slice(self.rotation_vector.as_slice());
        out[3..6].copy_from_slice(self.translation.as_slice());
    }

    pub fn to_array(&self) -> [f64; 6] {
        let mut a = [0.0; 6];
        self.write_to(&mut a);
        a
    }

    /// Re-wrap the rotation vector so its angle stays below π.
    pub fn canonicalize(&mut self) {
        if self.rotation_vector.norm() >= PI {
            self.rotation_vector = log_so3(&exp_so3(&self.rotation_vector));
        }
    }
}

/// Rotation taking `+z` onto `dir` (unit), with `+x` as close as possible to
/// `x_hint` projected into the orthogonal plane.
pub fn frame_from_z_axis(dir: &Vector3<f64>, x_hint: &Vector3<f64>) -> Matrix3<f64> {
    let z = dir.normalize();
    let mut x = x_hint - z * z.dot(x_hint);
    if x.norm() < 1e-9 {
        let alt = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        x = alt - z * z.dot(&alt);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}
