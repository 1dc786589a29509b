//! Grasp proposal, deduplication, semantic scoring, ranking and pose chains.
//!
//! Gripper frame: +z is the approach direction, +x the closing axis, origin
//! midway between the jaws.

mod antipodal;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Point3, Translation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    look_at, pose_from_row_major, pose_to_row_major, rotation_distance, spherical_point, CameraModel, GeometryError,
    Intrinsics, Pose,
};
use crate::scene_io::PointCloud;
use crate::spatial::{lower_median, SpatialGrid};

pub use antipodal::{antipodal_pairs, estimate_normals, is_antipodal, AntipodalPair, AntipodalProposer};

pub const DEFAULT_WEIGHT: f64 = 0.95;
pub const DEFAULT_NMS_TRANSLATION: f64 = 0.01;
pub const DEFAULT_NMS_ROTATION_DEG: f64 = 15.0;
pub const PRE_GRASP_OFFSET: f64 = 0.05;
pub const POST_GRASP_LIFT: f64 = 0.10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProposerError {
    #[error("no antipodal point pairs found")]
    NoValidPairs,
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraspError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("proposer failed for camera {camera}: {source}")]
    ProposerFailure { camera: usize, source: ProposerError },
    #[error("weight {0} outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("grasp {0} has no semantic score")]
    MissingSemanticScore(usize),
    #[error("invalid grasp: {0}")]
    InvalidGrasp(String),
    #[error("malformed grasp file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GraspError {
    fn from(e: std::io::Error) -> Self {
        GraspError::Io(e.to_string())
    }
}

/// Parallel-jaw gripper dimensions in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GripperParams {
    pub max_width: f64,
    /// Grasp-volume extent along the approach axis.
    pub finger_depth: f64,
    /// Grasp-volume extent along the jaw (y) axis.
    pub jaw_height: f64,
    pub finger_thickness: f64,
    pub palm_depth: f64,
    /// Added to the contact distance when opening the jaws.
    pub clearance: f64,
}

impl Default for GripperParams {
    fn default() -> Self {
        Self {
            max_width: 0.085,
            finger_depth: 0.04,
            jaw_height: 0.02,
            finger_thickness: 0.01,
            palm_depth: 0.02,
            clearance: 0.01,
        }
    }
}

impl GripperParams {
    pub fn volume(&self, width: f64) -> GraspVolume {
        GraspVolume { width, finger_depth: self.finger_depth, jaw_height: self.jaw_height }
    }
}

/// Box between the jaws, centered on the grasp origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspVolume {
    pub width: f64,
    pub finger_depth: f64,
    pub jaw_height: f64,
}

impl GraspVolume {
    /// Closed membership test in gripper coordinates.
    pub fn contains(&self, q: &Point3<f64>) -> bool {
        q.x.abs() <= self.width / 2.0 && q.y.abs() <= self.jaw_height / 2.0 && q.z.abs() <= self.finger_depth / 2.0
    }

    pub fn bounding_radius(&self) -> f64 {
        Vector3::new(self.width, self.jaw_height, self.finger_depth).norm() / 2.0
    }
}

/// 6-DOF parallel-jaw grasp (gripper-to-world pose).
#[derive(Debug, Clone, PartialEq)]
pub struct GraspCandidate {
    pub pose: Pose,
    pub width: f64,
    pub s_geom: f64,
    pub s_sem: Option<f64>,
    pub s: Option<f64>,
}

impl GraspCandidate {
    pub fn new(pose: Pose, width: f64, s_geom: f64) -> Self {
        Self { pose, width, s_geom, s_sem: None, s: None }
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.pose.translation.vector)
    }

    pub fn closing_axis(&self) -> Vector3<f64> {
        self.pose.rotation * Vector3::x()
    }

    pub fn approach(&self) -> Vector3<f64> {
        self.pose.rotation * Vector3::z()
    }
}

/// Look-at cameras on the upper hemisphere: `n_az` azimuths over [0°, 360°)
/// and `n_incl` inclinations over [15°, 75°] from +z (45° when `n_incl = 1`).
/// Ordered by inclination, then azimuth.
pub fn virtual_cameras(
    center: &Point3<f64>,
    radius: f64,
    n_az: usize,
    n_incl: usize,
    intrinsics: Intrinsics,
) -> Vec<CameraModel> {
    let mut out = Vec::with_capacity(n_az * n_incl);
    for j in 0..n_incl {
        let incl = if n_incl == 1 { 45.0 } else { 15.0 + 60.0 * j as f64 / (n_incl - 1) as f64 };
        for i in 0..n_az {
            let az = 360.0 * i as f64 / n_az as f64;
            let eye = spherical_point(center, radius, az.to_radians(), incl.to_radians());
            if let Some(pose) = look_at(&eye, center, &Vector3::z()) {
                out.push(CameraModel { intrinsics, pose });
            }
        }
    }
    out
}

/// Produces grasps from a cloud expressed in a camera's optical frame.
/// Returned poses are in that same frame. `world_from_camera` is the pose of
/// that camera.
pub trait GraspProposer: Sync {
    fn propose(
        &self,
        cloud: &PointCloud,
        camera_index: usize,
        world_from_camera: &Pose,
    ) -> Result<Vec<GraspCandidate>, ProposerError>;
}

/// Runs `proposer` once per camera on the cloud expressed in that camera's
/// frame and maps the results back to world. Output order: camera order, then
/// proposer order.
pub fn propose_grasps(
    pc: &PointCloud,
    cameras: &[CameraModel],
    proposer: &dyn GraspProposer,
) -> Result<Vec<GraspCandidate>, GraspError> {
    if pc.is_empty() {
        return Err(GraspError::EmptyCloud);
    }
    let per_camera: Vec<Result<Vec<GraspCandidate>, ProposerError>> = cameras
        .par_iter()
        .enumerate()
        .map(|(i, cam)| {
            let local = pc.transformed(&cam.pose.inverse());
            let mut grasps = proposer.propose(&local, i, &cam.pose)?;
            for g in &mut grasps {
                g.pose = cam.pose * g.pose;
            }
            Ok(grasps)
        })
        .collect();
    let mut out = Vec::new();
    for (camera, r) in per_camera.into_iter().enumerate() {
        out.extend(r.map_err(|source| GraspError::ProposerFailure { camera, source })?);
    }
    Ok(out)
}

/// Rotation distance that treats a grasp and its 180° flip about the
/// approach axis as the same grasp.
pub fn grasp_rotation_distance(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    let flip = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI);
    rotation_distance(a, b).min(rotation_distance(a, &(b * flip)))
}

/// Both tolerances met.
pub fn grasps_overlap(a: &GraspCandidate, b: &GraspCandidate, trans_tol: f64, rot_tol: f64) -> bool {
    (a.center() - b.center()).norm() <= trans_tol
        && grasp_rotation_distance(&a.pose.rotation, &b.pose.rotation) <= rot_tol
}

/// Greedy non-maximum suppression by descending `s_geom` (stable). A grasp is
/// dropped when it overlaps an already kept grasp in both translation and
/// rotation.
pub fn nms(grasps: &[GraspCandidate], trans_tol: f64, rot_tol: f64) -> Vec<GraspCandidate> {
    let mut order: Vec<usize> = (0..grasps.len()).collect();
    order.sort_by(|&a, &b| grasps[b].s_geom.total_cmp(&grasps[a].s_geom));
    let cell = trans_tol.max(1e-9);
    let key = |p: &Point3<f64>| ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64);
    let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let mut kept = Vec::new();
    for i in order {
        let g = &grasps[i];
        let (cx, cy, cz) = key(&g.center());
        let mut suppressed = false;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                        if bucket.iter().any(|&k| grasps_overlap(&grasps[k], g, trans_tol, rot_tol)) {
                            suppressed = true;
                            break 'search;
                        }
                    }
                }
            }
        }
        if !suppressed {
            buckets.entry((cx, cy, cz)).or_default().push(i);
            kept.push(g.clone());
        }
    }
    kept
}

/// Lower-median relevancy of the cloud points inside the grasp volume; 0
/// when the volume is empty or the cloud carries no relevancy.
pub fn semantic_score(grasp: &GraspCandidate, pc: &PointCloud, gripper: &GripperParams) -> f64 {
    SemanticScorer::new(pc, *gripper).score(grasp)
}

/// Reusable [`semantic_score`] over one relevancy cloud.
pub struct SemanticScorer<'a> {
    grid: SpatialGrid,
    relevancy: Option<&'a [f64]>,
    gripper: GripperParams,
}

impl<'a> SemanticScorer<'a> {
    pub fn new(pc: &'a PointCloud, gripper: GripperParams) -> Self {
        Self { grid: SpatialGrid::new(&pc.points), relevancy: pc.relevancy.as_deref(), gripper }
    }

    pub fn score(&self, grasp: &GraspCandidate) -> f64 {
        let Some(relevancy) = self.relevancy else { return 0.0 };
        let volume = self.gripper.volume(grasp.width);
        let reach = volume.bounding_radius() * (1.0 + 1e-9) + 1e-12;
        let points = self.grid.points();
        let mut inside = Vec::new();
        self.grid.for_each_within(&grasp.center(), reach, |i, _| {
            if volume.contains(&grasp.pose.inverse_transform_point(&points[i])) {
                inside.push(relevancy[i]);
            }
        });
        lower_median(&mut inside).unwrap_or(0.0)
    }

    /// Sets `s_sem` on every grasp.
    pub fn score_all(&self, grasps: &mut [GraspCandidate]) {
        grasps.par_iter_mut().for_each(|g| g.s_sem = Some(self.score(g)));
    }
}

/// Sets `s = w·s_sem + (1−w)·s_geom` and sorts by `s` descending, then
/// `s_geom` descending, then input order.
pub fn rank(grasps: &[GraspCandidate], w: f64) -> Result<Vec<GraspCandidate>, GraspError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(GraspError::WeightOutOfRange(w));
    }
    let mut out = grasps.to_vec();
    for (i, g) in out.iter_mut().enumerate() {
        let s_sem = g.s_sem.ok_or(GraspError::MissingSemanticScore(i))?;
        g.s = Some(w * s_sem + (1.0 - w) * g.s_geom);
    }
    out.sort_by(|a, b| b.s.unwrap().total_cmp(&a.s.unwrap()).then(b.s_geom.total_cmp(&a.s_geom)));
    Ok(out)
}

/// Approach, grasp and lift waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseChain {
    pub pre_grasp: Pose,
    pub grasp: Pose,
    pub post_grasp: Pose,
    pub wrist_alternate: bool,
}

/// Pose chain for `grasp`, and the same chain with the wrist turned 180°
/// about the approach axis.
pub fn pose_chain(grasp: &Pose) -> (PoseChain, PoseChain) {
    let chain = |g: Pose, wrist_alternate| PoseChain {
        pre_grasp: g * Translation3::new(0.0, 0.0, -PRE_GRASP_OFFSET),
        grasp: g,
        post_grasp: Translation3::new(0.0, 0.0, POST_GRASP_LIFT) * g,
        wrist_alternate,
    };
    let flip = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI);
    (chain(*grasp, false), chain(grasp * flip, true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GraspRecord {
    pose: Vec<f64>,
    width: f64,
    s_geom: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s_sem: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GraspFile {
    grasps: Vec<GraspRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_w: Option<f64>,
}

/// `{"grasps": [{"pose": [16 row-major], "width", "s_geom", "s_sem", "s"}], "weight_w"}`.
pub fn grasps_to_json(grasps: &[GraspCandidate], weight_w: Option<f64>) -> String {
    let file = GraspFile {
        grasps: grasps
            .iter()
            .map(|g| GraspRecord {
                pose: pose_to_row_major(&g.pose).to_vec(),
                width: g.width,
                s_geom: g.s_geom,
                s_sem: g.s_sem,
                s: g.s,
            })
            .collect(),
        weight_w,
    };
    serde_json::to_string_pretty(&file).expect("grasp records serialize")
}

/// Parses the grasp schema; `s_sem` and `s` may be absent.
pub fn grasps_from_json(text: &str) -> Result<(Vec<GraspCandidate>, Option<f64>), GraspError> {
    let file: GraspFile = serde_json::from_str(text).map_err(|e| GraspError::Malformed(e.to_string()))?;
    let mut out = Vec::with_capacity(file.grasps.len());
    for (i, r) in file.grasps.into_iter().enumerate() {
        let pose = pose_from_row_major(&r.pose)?;
        if !(r.width > 0.0 && r.width.is_finite()) {
            return Err(GraspError::InvalidGrasp(format!("grasp {i}: width must be positive")));
        }
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(r.s_geom) || !r.s_sem.is_none_or(in_unit) || !r.s.is_none_or(in_unit) {
            return Err(GraspError::InvalidGrasp(format!("grasp {i}: scores must lie in [0, 1]")));
        }
        out.push(GraspCandidate { pose, width: r.width, s_geom: r.s_geom, s_sem: r.s_sem, s: r.s });
    }
    Ok((out, file.weight_w))
}

pub fn save_grasps(path: impl AsRef<Path>, grasps: &[GraspCandidate], weight_w: Option<f64>) -> Result<(), GraspError> {
    std::fs::write(path, grasps_to_json(grasps, weight_w))?;
    Ok(())
}

pub fn load_grasps(path: impl AsRef<Path>) -> Result<Vec<GraspCandidate>, GraspError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| GraspError::Io(format!("{}: {e}", path.as_ref().display())))?;
    Ok(grasps_from_json(&text)?.0)
}

/// Proposer that replays externally computed world-frame grasps, e.g. from a
/// learned model. It answers only for camera 0 so the grasps appear once.
pub struct ExternalProposer {
    grasps: Vec<GraspCandidate>,
}

impl ExternalProposer {
    pub fn new(grasps: Vec<GraspCandidate>) -> Self {
        Self { grasps }
    }
}

impl GraspProposer for ExternalProposer {
    fn propose(
        &self,
        _cloud: &PointCloud,
        camera_index: usize,
        world_from_camera: &Pose,
    ) -> Result<Vec<GraspCandidate>, ProposerError> {
        if camera_index != 0 {
            return Ok(Vec::new());
        }
        let to_camera = world_from_camera.inverse();
        Ok(self
            .grasps
            .iter()
            .map(|g| GraspCandidate { pose: to_camera * g.pose, s_sem: None, s: None, ..g.clone() })
            .collect())
    }
}
