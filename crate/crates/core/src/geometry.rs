//! Rigid and similarity transforms plus the pinhole camera model.
//!
//! Poses are camera-to-world: `pose.transform_point(p_cam)` gives the world
//! point. Projecting a world point into a frame therefore always goes through
//! `pose.inverse()` first.

use nalgebra::{Matrix3, Vector3, SVD};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Points closer than this to the camera plane cannot be projected.
pub const MIN_DEPTH: f64 = 1e-12;

const ORTHONORMAL_TOL: f64 = 1e-9;
const DRIFT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point has non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("rotation is not orthonormal with det +1 (deviation {0:e})")]
    NotARotation(f64),
    #[error("scale must be positive and finite, got {0}")]
    NonPositiveScale(f64),
    #[error("focal length must be positive and finite, got {0}")]
    NonPositiveFocal(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Infinity norm of `RᵀR − I`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}

/// Closest rotation (Frobenius norm) to an arbitrary 3×3 matrix.
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.expect("U requested");
    let v_t = svd.v_t.expect("Vᵀ requested");
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Rotation about a unit axis by `angle` radians (Rodrigues).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let n = axis.norm();
    if n == 0.0 || angle == 0.0 {
        return Mat3::identity();
    }
    let k = axis / n;
    let kx = skew(&k);
    Mat3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos())
}

/// Rotation for a rotation vector (axis scaled by angle).
pub fn exp_so3(omega: &Vec3) -> Mat3 {
    axis_angle(omega, omega.norm())
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Geodesic angle of a rotation matrix in radians.
///
/// Uses `atan2(sin, cos)` so that small angles keep full precision.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vec3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        )
        .norm();
    sin.atan2(cos)
}

/// Geodesic distance between two rotations, radians.
pub fn rotation_distance(a: &Mat3, b: &Mat3) -> f64 {
    rotation_angle(&(a.transpose() * b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    rotation: Mat3,
    translation: Vec3,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|x| x.is_finite()) {
            return Err(GeometryError::NonFinite("rigid pose"));
        }
        let err = orthonormality_error(&rotation);
        if err > ORTHONORMAL_TOL || rotation.determinant() <= 0.0 {
            return Err(GeometryError::NotARotation(err));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Builds a pose, projecting `rotation` onto SO(3) first.
    pub fn from_approx(rotation: &Mat3, translation: Vec3) -> Self {
        Self {
            rotation: nearest_rotation(rotation),
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        let mut rotation = self.rotation * other.rotation;
        if orthonormality_error(&rotation) > DRIFT_TOL {
            rotation = nearest_rotation(&rotation);
        }
        RigidPose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation.transpose();
        RigidPose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Same rotation, translation multiplied by `factor`.
    pub fn scale_translation(&self, factor: f64) -> RigidPose {
        RigidPose {
            rotation: self.rotation,
            translation: self.translation * factor,
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.rotation - Mat3::identity()).abs().max() <= tol && self.translation.abs().max() <= tol
    }
}

/// `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimTransform {
    scale: f64,
    rotation: Mat3,
    translation: Vec3,
}

impl SimTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(GeometryError::NonPositiveScale(scale));
        }
        let rigid = RigidPose::new(rotation, translation)?;
        Ok(Self {
            scale,
            rotation: rigid.rotation,
            translation: rigid.translation,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    pub fn unapply(&self, q: &Vec3) -> Vec3 {
        self.rotation.transpose() * (q - self.translation) / self.scale
    }

    pub fn inverse(&self) -> SimTransform {
        let rt = self.rotation.transpose();
        SimTransform {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    /// Maps a camera-to-world pose into the target frame of this transform.
    pub fn apply_to_pose(&self, pose: &RigidPose) -> RigidPose {
        RigidPose {
            rotation: self.rotation * pose.rotation,
            translation: self.apply(&pose.translation),
        }
    }
}

/// Square-pixel, zero-skew pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(focal: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(GeometryError::NonPositiveFocal(focal));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::NonFinite("principal point"));
        }
        Ok(Self { focal, cx, cy })
    }

    /// Principal point fixed at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        Self::new(focal, width as f64 / 2.0, height as f64 / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Center of the integer pixel at column `col`, row `row`.
    pub fn center(col: usize, row: usize) -> Self {
        Self {
            u: col as f64 + 0.5,
            v: row as f64 + 0.5,
        }
    }
}

pub fn project(point_cam: &Vec3, k: &Intrinsics) -> Result<Pixel, GeometryError> {
    if !(point_cam.z > MIN_DEPTH) {
        return Err(GeometryError::NonPositiveDepth(point_cam.z));
    }
    Ok(Pixel {
        u: k.focal * point_cam.x / point_cam.z + k.cx,
        v: k.focal * point_cam.y / point_cam.z + k.cy,
    })
}

pub fn unproject(px: &Pixel, depth: f64, k: &Intrinsics) -> Result<Vec3, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(Vec3::new(
        (px.u - k.cx) * depth / k.focal,
        (px.v - k.cy) * depth / k.focal,
        depth,
    ))
}
