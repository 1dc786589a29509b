//! Built-in antipodal grasp sampler.

use std::ops::ControlFlow;

use nalgebra::{Matrix3, Point3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GraspCandidate, GraspProposer, GripperParams, ProposerError};
use crate::geometry::{angle_between, Pose};
use crate::scene_io::PointCloud;
use crate::spatial::SpatialGrid;

const ANGLE_EPS: f64 = 1e-9;

/// Outward unit normals from a `k`-nearest-neighbor plane fit, flipped to face
/// `viewpoint`.
pub fn estimate_normals(points: &[Point3<f64>], k: usize, viewpoint: &Point3<f64>) -> Vec<Vector3<f64>> {
    use rayon::prelude::*;
    let grid = SpatialGrid::new(points);
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let p = points[i];
            let nn = grid.knn(&p, k, Some(i));
            let mut mean = p.coords;
            for &(j, _) in &nn {
                mean += points[j].coords;
            }
            mean /= (nn.len() + 1) as f64;
            let mut cov = Matrix3::zeros();
            for q in std::iter::once(p).chain(nn.iter().map(|&(j, _)| points[j])) {
                let d = q.coords - mean;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let (mut imin, mut vmin) = (0, f64::INFINITY);
            for c in 0..3 {
                if eig.eigenvalues[c] < vmin {
                    vmin = eig.eigenvalues[c];
                    imin = c;
                }
            }
            let mut n: Vector3<f64> = eig.eigenvectors.column(imin).into_owned();
            if n.dot(&(viewpoint - p)) < 0.0 {
                n = -n;
            }
            n.try_normalize(1e-12).unwrap_or_else(Vector3::z)
        })
        .collect()
}

/// Contact angles of a pair: closing direction `d = (p2 − p1)/|p2 − p1|`,
/// `a1 = ∠(−n1, d)`, `a2 = ∠(n2, d)` for outward normals. `None` for
/// coincident points.
fn contact_angles(p1: &Point3<f64>, n1: &Vector3<f64>, p2: &Point3<f64>, n2: &Vector3<f64>) -> Option<(f64, f64)> {
    let d = (p2 - p1).try_normalize(1e-12)?;
    Some((angle_between(&-n1, &d), angle_between(n2, &d)))
}

/// Whether both contacts lie within the friction cone.
pub fn is_antipodal(
    p1: &Point3<f64>,
    n1: &Vector3<f64>,
    p2: &Point3<f64>,
    n2: &Vector3<f64>,
    friction_rad: f64,
) -> bool {
    contact_angles(p1, n1, p2, n2)
        .is_some_and(|(a1, a2)| a1 <= friction_rad + ANGLE_EPS && a2 <= friction_rad + ANGLE_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntipodalPair {
    pub i: usize,
    pub j: usize,
    /// `cos(a1) · cos(a2)`.
    pub quality: f64,
}

/// For `n_samples` random first contacts, the best antipodal partner within
/// `max_width` (ties: smaller index). Samples without a partner are skipped.
pub fn antipodal_pairs(
    grid: &SpatialGrid,
    normals: &[Vector3<f64>],
    friction_deg: f64,
    min_width: f64,
    max_width: f64,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Vec<AntipodalPair> {
    let points = grid.points();
    // a <= mu  <=>  cos(a) >= cos(mu) on [0, pi].
    let cos_mu = (friction_deg.to_radians() + ANGLE_EPS).min(std::f64::consts::PI).cos();
    let mut out = Vec::new();
    if points.len() < 2 {
        return out;
    }
    for _ in 0..n_samples {
        let i = rng.random_range(0..points.len());
        let (p1, n1) = (points[i], normals[i]);
        let mut best: Option<AntipodalPair> = None;
        grid.for_each_within(&p1, max_width, |j, d2| {
            if j == i || d2 < min_width * min_width || d2 == 0.0 {
                return;
            }
            let d = (points[j] - p1) / d2.sqrt();
            let c1 = (-n1.dot(&d)).clamp(-1.0, 1.0);
            let c2 = normals[j].dot(&d).clamp(-1.0, 1.0);
            if c1 < cos_mu || c2 < cos_mu {
                return;
            }
            let quality = (c1 * c2).clamp(0.0, 1.0);
            let better = match best {
                None => true,
                Some(b) => quality > b.quality || (quality == b.quality && j < b.j),
            };
            if better {
                best = Some(AntipodalPair { i, j, quality });
            }
        });
        out.extend(best);
    }
    out
}

/// Antipodal sampler standing in for a learned proposer. Works on the cloud in
/// a camera frame; the approach direction is the collision-free one among
/// `n_approaches` directions around the closing axis that best aligns with the
/// camera's viewing direction. Pairs without one are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AntipodalProposer {
    pub gripper: GripperParams,
    pub friction_deg: f64,
    pub n_samples: usize,
    pub n_approaches: usize,
    pub normal_k: usize,
    pub min_width: f64,
    pub seed: u64,
}

impl Default for AntipodalProposer {
    fn default() -> Self {
        Self {
            gripper: GripperParams::default(),
            friction_deg: 20.0,
            n_samples: 400,
            n_approaches: 12,
            normal_k: 10,
            min_width: 0.005,
            seed: 0,
        }
    }
}

impl AntipodalProposer {
    /// Whether any cloud point lies inside a finger or the palm.
    fn collides(&self, grid: &SpatialGrid, center: &Point3<f64>, rot: &Rotation3<f64>, width: f64) -> bool {
        let g = &self.gripper;
        let half_w = width / 2.0;
        let outer = half_w + g.finger_thickness;
        let half_h = g.jaw_height / 2.0;
        let half_d = g.finger_depth / 2.0;
        let reach = Vector3::new(outer, half_h, half_d + g.palm_depth).norm();
        let points = grid.points();
        let inv = rot.inverse();
        grid.try_for_each_within(center, reach, |i, _| {
            let q = inv * (points[i] - center);
            if q.y.abs() > half_h || q.x.abs() > outer {
                return ControlFlow::Continue(());
            }
            let finger = q.x.abs() > half_w && q.z.abs() <= half_d;
            let palm = q.z < -half_d && q.z >= -half_d - g.palm_depth;
            if finger || palm {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .is_break()
    }

    /// Collision-free approach with the largest camera-z component (ties: the
    /// earlier direction), or `None` when every direction collides.
    fn grasp_for_pair(&self, grid: &SpatialGrid, pair: &AntipodalPair) -> Option<GraspCandidate> {
        let points = grid.points();
        let (p1, p2) = (points[pair.i], points[pair.j]);
        let span = p2 - p1;
        let dist = span.norm();
        let x = span / dist;
        let width = (dist + self.gripper.clearance).min(self.gripper.max_width);
        let center = Point3::from((p1.coords + p2.coords) / 2.0);
        // Deterministic basis of the plane orthogonal to x.
        let seed_axis = if x.x.abs() <= x.y.abs() && x.x.abs() <= x.z.abs() {
            Vector3::x()
        } else if x.y.abs() <= x.z.abs() {
            Vector3::y()
        } else {
            Vector3::z()
        };
        let u = x.cross(&seed_axis).normalize();
        let v = x.cross(&u);
        let n = self.n_approaches.max(1);
        let mut approaches: Vec<Vector3<f64>> = (0..n)
            .map(|k| {
                let theta = std::f64::consts::TAU * k as f64 / n as f64;
                u * theta.cos() + v * theta.sin()
            })
            .collect();
        approaches.sort_by(|a, b| b.z.total_cmp(&a.z));
        approaches.into_iter().find_map(|z| {
            let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, z.cross(&x), z]));
            (!self.collides(grid, &center, &rot, width)).then(|| {
                let pose = Pose::from_parts(center.coords.into(), UnitQuaternion::from_rotation_matrix(&rot));
                GraspCandidate::new(pose, width, pair.quality)
            })
        })
    }
}

impl GraspProposer for AntipodalProposer {
    fn propose(
        &self,
        cloud: &PointCloud,
        camera_index: usize,
        _world_from_camera: &Pose,
    ) -> Result<Vec<GraspCandidate>, ProposerError> {
        if cloud.len() < 2 {
            return Err(ProposerError::NoValidPairs);
        }
        let estimated;
        let normals = match &cloud.normals {
            Some(n) => n,
            None => {
                estimated = estimate_normals(&cloud.points, self.normal_k, &Point3::origin());
                &estimated
            }
        };
        let grid = SpatialGrid::new(&cloud.points);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (camera_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let pairs = antipodal_pairs(
            &grid,
            normals,
            self.friction_deg,
            self.min_width,
            self.gripper.max_width,
            self.n_samples,
            &mut rng,
        );
        let grasps: Vec<GraspCandidate> = pairs.iter().filter_map(|p| self.grasp_for_pair(&grid, p)).collect();
        if grasps.is_empty() {
            return Err(ProposerError::NoValidPairs);
        }
        Ok(grasps)
    }
}
