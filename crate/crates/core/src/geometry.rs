//! Rigid transforms, boxes and pinhole cameras shared by every stage.

use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rigid transform, child frame to world frame.
pub type Pose = Isometry3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box has non-positive extent on at least one axis: min {min:?}, max {max:?}")]
    EmptyBox { min: [f64; 3], max: [f64; 3] },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with det +1 (residual {0:.3e})")]
    NotARotation(f64),
    #[error("pose matrix must have 16 finite entries with last row [0 0 0 1]")]
    MalformedPoseMatrix,
}

/// Axis-aligned box with closed bounds, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    /// Box with strictly positive extent on every axis.
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Result<Self, GeometryError> {
        let b = Self { min, max };
        if (0..3).all(|i| b.max[i] > b.min[i] && b.min[i].is_finite() && b.max[i].is_finite()) {
            Ok(b)
        } else {
            Err(GeometryError::EmptyBox { min: min.coords.into(), max: max.coords.into() })
        }
    }

    /// Smallest box containing all points; `None` for an empty iterator.
    pub fn around<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (mut min, mut max) = (first, first);
        for p in it {
            for i in 0..3 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        Some(Self { min, max })
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    /// Grown by `margin` on every side (may be negative).
    pub fn expanded(&self, margin: f64) -> Self {
        let m = Vector3::repeat(margin);
        Self { min: self.min - m, max: self.max + m }
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics("zero image size".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Square image with the principal point at the center and the given full
    /// horizontal field of view.
    pub fn square_fov(size: u32, fov_deg: f64) -> Self {
        let f = (size as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Self { fx: f, fy: f, cx: size as f64 / 2.0, cy: size as f64 / 2.0, width: size, height: size }
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

/// Calibrated camera. Optical frame convention: +x right, +y down, +z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    /// Camera-to-world.
    pub pose: Pose,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        check_rotation(pose.rotation.to_rotation_matrix().matrix())?;
        Ok(Self { intrinsics, pose })
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }

    /// Viewing direction (camera +z) in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.pose.rotation * Vector3::z()
    }

    /// Unit ray direction through pixel (u, v) in world coordinates.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        let d = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        (self.pose.rotation * d).normalize()
    }
}

/// `‖RᵀR − I‖∞ ≤ 1e-6` and `det R > 0`.
pub fn check_rotation(r: &Matrix3<f64>) -> Result<(), GeometryError> {
    let residual = (r.transpose() * r - Matrix3::identity()).abs().max();
    if residual <= 1e-6 && r.determinant() > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::NotARotation(residual))
    }
}

/// Camera-to-world pose at `eye` whose +z axis points at `target`.
///
/// Image "up" (-y) is aligned with `up` as far as possible; when the viewing
/// direction is parallel to `up` the world x axis is used instead. Returns
/// `None` when `eye == target`.
pub fn look_at(eye: &Point3<f64>, target: &Point3<f64>, up: &Vector3<f64>) -> Option<Pose> {
    let z = (target - eye).try_normalize(1e-12)?;
    let mut x = z.cross(up);
    if x.norm() < 1e-9 {
        x = z.cross(&Vector3::x());
        if x.norm() < 1e-9 {
            x = z.cross(&Vector3::y());
        }
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let r = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Some(Isometry3::from_parts(Translation3::from(eye.coords), UnitQuaternion::from_rotation_matrix(&r)))
}

/// Angle between a camera's optical axis and the direction to `target`.
pub fn look_at_residual(pose: &Pose, target: &Point3<f64>) -> f64 {
    let forward = pose.rotation * Vector3::z();
    let to_target = target - Point3::from(pose.translation.vector);
    angle_between(&forward, &to_target)
}

/// Unsigned angle between two vectors, robust near 0 and π.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Geodesic distance on SO(3).
pub fn rotation_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.angle_to(b)
}

pub fn pose_to_row_major(pose: &Pose) -> [f64; 16] {
    let m = pose.to_homogeneous();
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[r * 4 + c] = m[(r, c)];
        }
    }
    out
}

pub fn pose_to_rows(pose: &Pose) -> [[f64; 4]; 4] {
    let flat = pose_to_row_major(pose);
    std::array::from_fn(|r| std::array::from_fn(|c| flat[r * 4 + c]))
}

/// Parses a row-major homogeneous matrix; the rotation block must pass
/// [`check_rotation`].
pub fn pose_from_row_major(m: &[f64]) -> Result<Pose, GeometryError> {
    if m.len() != 16 || m.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::MalformedPoseMatrix);
    }
    let h = Matrix4::from_row_slice(m);
    let last = h.row(3);
    if (last[0].abs() + last[1].abs() + last[2].abs() + (last[3] - 1.0).abs()) > 1e-9 {
        return Err(GeometryError::MalformedPoseMatrix);
    }
    let r: Matrix3<f64> = h.fixed_view::<3, 3>(0, 0).into_owned();
    check_rotation(&r)?;
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    Ok(Isometry3::from_parts(Translation3::new(h[(0, 3)], h[(1, 3)], h[(2, 3)]), rot))
}

/// Point on a sphere around `center`; `inclination` is measured from +z.
pub fn spherical_point(center: &Point3<f64>, radius: f64, azimuth_rad: f64, inclination_rad: f64) -> Point3<f64> {
    center
        + radius
            * Vector3::new(
                inclination_rad.sin() * azimuth_rad.cos(),
                inclination_rad.sin() * azimuth_rad.sin(),
                inclination_rad.cos(),
            )
}
