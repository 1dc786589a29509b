//! Spherical capture trajectories.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::SceneError;
use crate::geometry::{look_at, pose_to_rows, spherical_point, CameraModel, Intrinsics};

/// Spherical patch swept by the capture. Angles in degrees; inclination is
/// measured from world +z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryParams {
    pub center: [f64; 3],
    pub radius: f64,
    pub azimuth_deg: (f64, f64),
    pub inclination_deg: (f64, f64),
    pub n: usize,
    pub intrinsics: Intrinsics,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            radius: 0.45,
            azimuth_deg: (-100.0, 100.0),
            inclination_deg: (30.0, 75.0),
            n: 60,
            intrinsics: Intrinsics::default(),
        }
    }
}

fn lerp_range((lo, hi): (f64, f64), i: usize, count: usize) -> f64 {
    if count <= 1 {
        (lo + hi) / 2.0
    } else {
        lo + (hi - lo) * i as f64 / (count - 1) as f64
    }
}

/// `n` look-at cameras on the patch, visited as a serpentine sweep: rows of
/// constant inclination (low to high), alternating azimuth direction. The row
/// count keeps the angular spacing roughly equal along both axes.
pub fn capture_trajectory(params: &TrajectoryParams) -> Result<Vec<CameraModel>, SceneError> {
    let TrajectoryParams { center, radius, azimuth_deg: az, inclination_deg: incl, n, intrinsics } = *params;
    let degenerate = |msg: &str| Err(SceneError::DegenerateRange(msg.into()));
    if n < 2 {
        return degenerate("need at least 2 poses");
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return degenerate("radius must be positive");
    }
    if ![az.0, az.1, incl.0, incl.1].iter().all(|v| v.is_finite()) || center.iter().any(|v| !v.is_finite()) {
        return degenerate("non-finite range");
    }
    if az.0 > az.1 || incl.0 > incl.1 {
        return degenerate("range minimum exceeds maximum");
    }
    if incl.0 < 0.0 || incl.1 > 180.0 {
        return degenerate("inclination must lie in [0, 180] degrees");
    }
    intrinsics.validate()?;

    let (d_az, d_incl) = (az.1 - az.0, incl.1 - incl.0);
    let rows = if d_incl == 0.0 {
        1
    } else if d_az == 0.0 {
        n
    } else {
        ((n as f64 * d_incl / d_az).sqrt().round() as usize).clamp(1, n)
    };
    let center = Point3::from(center);
    let mut out = Vec::with_capacity(n);
    for r in 0..rows {
        let len = n / rows + usize::from(r < n % rows);
        let inclination = lerp_range(incl, r, rows).to_radians();
        for j in 0..len {
            let j = if r % 2 == 0 { j } else { len - 1 - j };
            let azimuth = lerp_range(az, j, len).to_radians();
            let eye = spherical_point(&center, radius, azimuth, inclination);
            let pose = look_at(&eye, &center, &Vector3::z()).expect("radius is positive");
            out.push(CameraModel::new(intrinsics, pose)?);
        }
    }
    Ok(out)
}

/// JSON list of camera-to-world 4x4 matrices, row-major nested arrays.
pub fn trajectory_json(cameras: &[CameraModel]) -> serde_json::Value {
    serde_json::Value::from(
        cameras.iter().map(|c| serde_json::to_value(pose_to_rows(&c.pose)).unwrap()).collect::<Vec<_>>(),
    )
}
