//! Point clouds, depth maps, capture trajectories and image sharpness.

mod ply;
mod trajectory;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::field::FeatureField;
use crate::geometry::{Aabb, CameraModel, GeometryError, Pose};
use crate::spatial::SpatialGrid;

pub use ply::{load_ply, read_ply, save_ply, write_ply};
pub use trajectory::{capture_trajectory, trajectory_json, TrajectoryParams};

pub const DEFAULT_OUTLIER_K: usize = 20;
pub const DEFAULT_OUTLIER_STD_RATIO: f64 = 2.0;
pub const DEFAULT_BLUR_FRACTION: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("depth map has no valid pixels")]
    AllInvalidDepth,
    #[error("need more than k={k} points for outlier rejection, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("image must be at least 3x3, got {width}x{height}")]
    ImageTooSmall { width: usize, height: usize },
    #[error("degenerate trajectory range: {0}")]
    DegenerateRange(String),
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("invalid depth map: {0}")]
    InvalidDepth(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SceneError {
    fn from(e: std::io::Error) -> Self {
        SceneError::Io(e.to_string())
    }
}

/// Row-major per-point feature matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Features {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl Features {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, row: &[f32]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }
}

/// 3D points with optional per-point attributes. Every present attribute
/// array has one entry per point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    /// RGB in [0, 1].
    pub colors: Option<Vec<[f32; 3]>>,
    /// Outward unit normals, when known.
    pub normals: Option<Vec<Vector3<f64>>>,
    pub group_feats: Option<Features>,
    /// Relevancy in [0, 1].
    pub relevancy: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self { points, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.len();
        let bad =
            |what: &str, len: usize| Err(SceneError::InvalidCloud(format!("{what} has {len} entries for {n} points")));
        if let Some(c) = &self.colors {
            if c.len() != n {
                return bad("colors", c.len());
            }
        }
        if let Some(c) = &self.normals {
            if c.len() != n {
                return bad("normals", c.len());
            }
        }
        if let Some(f) = &self.group_feats {
            if f.dim == 0 || f.data.len() != n * f.dim {
                return bad("group_feats", f.len());
            }
        }
        if let Some(r) = &self.relevancy {
            if r.len() != n {
                return bad("relevancy", r.len());
            }
        }
        if self.points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
            return Err(SceneError::InvalidCloud("non-finite point".into()));
        }
        Ok(())
    }

    /// Points (and attributes) at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            normals: self.normals.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            group_feats: self.group_feats.as_ref().map(|f| {
                let mut out = Features::new(f.dim);
                for &i in indices {
                    out.push(f.row(i));
                }
                out
            }),
            relevancy: self.relevancy.as_ref().map(|r| indices.iter().map(|&i| r[i]).collect()),
        }
    }

    /// Applies `pose` to points and normals.
    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose * p).collect(),
            normals: self.normals.as_ref().map(|n| n.iter().map(|v| pose.rotation * v).collect()),
            ..self.clone()
        }
    }

    /// Appends `other`; attributes survive only if both clouds carry them.
    pub fn append(&mut self, other: &PointCloud) {
        let was_empty = self.is_empty();
        fn merge<T: Clone>(a: &mut Option<Vec<T>>, b: &Option<Vec<T>>, was_empty: bool) {
            match (a.as_mut(), b) {
                (Some(x), Some(y)) => x.extend_from_slice(y),
                (None, Some(y)) if was_empty => *a = Some(y.clone()),
                _ => *a = None,
            }
        }
        merge(&mut self.colors, &other.colors, was_empty);
        merge(&mut self.normals, &other.normals, was_empty);
        merge(&mut self.relevancy, &other.relevancy, was_empty);
        match (self.group_feats.as_mut(), &other.group_feats) {
            (Some(x), Some(y)) if x.dim == y.dim => x.data.extend_from_slice(&y.data),
            (None, Some(y)) if was_empty => self.group_feats = Some(y.clone()),
            _ => self.group_feats = None,
        }
        self.points.extend_from_slice(&other.points);
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.len() as f64))
    }
}

/// Metric depth along the optical axis, row-major; 0 marks invalid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Vec<f64>,
    pub camera: CameraModel,
}

impl DepthMap {
    pub fn new(values: Vec<f64>, camera: CameraModel) -> Result<Self, SceneError> {
        let (w, h) = (camera.intrinsics.width as usize, camera.intrinsics.height as usize);
        if values.len() != w * h {
            return Err(SceneError::InvalidDepth(format!("{} values for a {w}x{h} camera", values.len())));
        }
        if values.iter().any(|&z| !(z >= 0.0 && z.is_finite())) {
            return Err(SceneError::InvalidDepth("depth must be finite and non-negative".into()));
        }
        Ok(Self { values, camera })
    }

    pub fn width(&self) -> usize {
        self.camera.intrinsics.width as usize
    }

    pub fn height(&self) -> usize {
        self.camera.intrinsics.height as usize
    }
}

/// World-space points for every valid pixel:
/// `pose · (z (u − cx)/fx, z (v − cy)/fy, z)`.
pub fn deproject(depth: &DepthMap) -> Result<PointCloud, SceneError> {
    let k = &depth.camera.intrinsics;
    let w = depth.width();
    let points: Vec<Point3<f64>> = depth
        .values
        .iter()
        .enumerate()
        .filter(|(_, &z)| z > 0.0)
        .map(|(i, &z)| {
            let (u, v) = ((i % w) as f64, (i / w) as f64);
            depth.camera.pose * Point3::new(z * (u - k.cx) / k.fx, z * (v - k.cy) / k.fy, z)
        })
        .collect();
    if points.is_empty() {
        return Err(SceneError::AllInvalidDepth);
    }
    Ok(PointCloud::from_points(points))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub voxel: usize,
    /// Outward normal of the voxel face the ray entered.
    pub normal: Vector3<f64>,
}

/// Occupancy-surface render: depth plus the voxel behind every valid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub depth: DepthMap,
    /// Row-major; `Some` exactly where depth is valid.
    pub hits: Vec<Option<SurfaceHit>>,
}

/// Renders the first occupied voxel surface along each pixel ray. Pixel
/// `(u, v)` samples the ray through image coordinates `(u, v)`, matching
/// [`deproject`]. Rays longer than `max_depth` along the optical axis miss.
pub fn render_view(field: &FeatureField, camera: &CameraModel, max_depth: f64) -> RenderedView {
    let k = camera.intrinsics;
    let (w, h) = (k.width as usize, k.height as usize);
    let origin = camera.position();
    let (values, hits): (Vec<f64>, Vec<Option<SurfaceHit>>) = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = ((i % w) as f64, (i / w) as f64);
            let d_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
            let len = d_cam.norm();
            let dir = camera.pose.rotation * (d_cam / len);
            match field.raycast(&origin, &dir, max_depth * len) {
                Some((voxel, t, normal)) if t > 0.0 => (t / len, Some(SurfaceHit { voxel, normal })),
                _ => (0.0, None),
            }
        })
        .unzip();
    RenderedView { depth: DepthMap { values, camera: camera.clone() }, hits }
}

/// Depth-only [`render_view`].
pub fn render_depth(field: &FeatureField, camera: &CameraModel, max_depth: f64) -> DepthMap {
    render_view(field, camera, max_depth).depth
}

/// Samples every exposed face of the occupied voxels on a
/// `samples_per_edge²` grid. Points carry the face normal and the voxel's
/// grouping embedding.
pub fn surface_cloud(field: &FeatureField, samples_per_edge: usize) -> PointCloud {
    let dims = field.dims();
    let mut pc = PointCloud {
        normals: Some(Vec::new()),
        group_feats: Some(Features::new(field.d_group())),
        ..Default::default()
    };
    for voxel in field.occupied_voxels() {
        let c = field.voxel_coords(voxel);
        for axis in 0..3 {
            for sign in [-1i64, 1] {
                let nb = c[axis] as i64 + sign;
                let exposed = nb < 0 || nb >= dims[axis] as i64 || {
                    let mut m = c;
                    m[axis] = nb as usize;
                    !field.is_occupied(field.linear_index(m[0], m[1], m[2]))
                };
                if exposed {
                    push_face_samples(field, VoxelFace { voxel, axis, positive: sign > 0 }, samples_per_edge, &mut pc);
                }
            }
        }
    }
    pc
}

/// One face of a voxel: the side of `axis` facing `+axis` when `positive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelFace {
    pub voxel: usize,
    pub axis: usize,
    pub positive: bool,
}

impl VoxelFace {
    /// Face whose outward normal is (closest to) `normal`.
    pub fn from_normal(voxel: usize, normal: &Vector3<f64>) -> Self {
        let axis = normal.iamax();
        VoxelFace { voxel, axis, positive: normal[axis] > 0.0 }
    }

    pub fn normal(&self) -> Vector3<f64> {
        let mut n = Vector3::zeros();
        n[self.axis] = if self.positive { 1.0 } else { -1.0 };
        n
    }
}

/// Appends a `samples_per_edge²` grid on `face` with its normal and the
/// voxel's grouping embedding. `pc` must carry normals and features.
pub fn push_face_samples(field: &FeatureField, face: VoxelFace, samples_per_edge: usize, pc: &mut PointCloud) {
    let n = samples_per_edge.max(1);
    let step = field.step();
    let center = field.voxel_center(face.voxel);
    let normal = face.normal();
    let axis = face.axis;
    let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
    let group = field.group_at(face.voxel).expect("face of an occupied voxel");
    for i in 0..n {
        for j in 0..n {
            let mut p = center;
            p[axis] += normal[axis] * step[axis] / 2.0;
            p[a1] += ((i as f64 + 0.5) / n as f64 - 0.5) * step[a1];
            p[a2] += ((j as f64 + 0.5) / n as f64 - 0.5) * step[a2];
            pc.points.push(p);
            pc.normals.as_mut().expect("normals").push(normal);
            pc.group_feats.as_mut().expect("features").push(group);
        }
    }
}

/// Points inside `bounds` (closed), attributes filtered alongside.
pub fn crop_workspace(pc: &PointCloud, bounds: &Aabb) -> PointCloud {
    let keep: Vec<usize> = (0..pc.len()).filter(|&i| bounds.contains(&pc.points[i])).collect();
    pc.select(&keep)
}

/// Removes points whose mean distance to their `k` nearest neighbors exceeds
/// `mean + std_ratio * stddev` of that statistic over the cloud.
pub fn reject_outliers(pc: &PointCloud, k: usize, std_ratio: f64) -> Result<PointCloud, SceneError> {
    if k == 0 || pc.len() <= k {
        return Err(SceneError::TooFewPoints { n: pc.len(), k });
    }
    let grid = SpatialGrid::new(&pc.points);
    let stats: Vec<f64> = (0..pc.len())
        .into_par_iter()
        .map(|i| {
            let nn = grid.knn(&pc.points[i], k, Some(i));
            nn.iter().map(|&(_, d2)| d2.sqrt()).sum::<f64>() / nn.len() as f64
        })
        .collect();
    let n = stats.len() as f64;
    let mean = stats.iter().sum::<f64>() / n;
    let std = (stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt();
    let threshold = mean + std_ratio * std;
    let keep: Vec<usize> = (0..pc.len()).filter(|&i| stats[i] <= threshold).collect();
    Ok(pc.select(&keep))
}

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Variance of the 4-neighbor Laplacian over the valid (interior) region.
/// Higher means sharper.
pub fn blur_score(image: &GrayImage) -> Result<f64, SceneError> {
    let (w, h) = (image.width, image.height);
    if w < 3 || h < 3 {
        return Err(SceneError::ImageTooSmall { width: w, height: h });
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let l = image.get(x, y - 1) as f64
                + image.get(x - 1, y) as f64
                + image.get(x + 1, y) as f64
                + image.get(x, y + 1) as f64
                - 4.0 * image.get(x, y) as f64;
            sum += l;
            sum_sq += l * l;
        }
    }
    let n = ((w - 2) * (h - 2)) as f64;
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}

/// Flags frames whose blur score is below `fraction` of the capture's
/// (lower) median score. `true` means discard.
pub fn flag_blurry(scores: &[f64], fraction: f64) -> Vec<bool> {
    let mut sorted = scores.to_vec();
    let Some(median) = crate::spatial::lower_median(&mut sorted) else {
        return Vec::new();
    };
    scores.iter().map(|&s| s < fraction * median).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at, Intrinsics};
    use nalgebra::{Isometry3, Translation3};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_camera(w: u32, h: u32, pose: Pose) -> CameraModel {
        let k = Intrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0, width: w, height: h };
        CameraModel::new(k, pose).unwrap()
    }

    #[test]
    fn pinhole_identity() {
        let d = DepthMap::new(vec![1.0], unit_camera(1, 1, Pose::identity())).unwrap();
        let pc = deproject(&d).unwrap();
        assert_eq!(pc.points, vec![Point3::new(0.0, 0.0, 1.0)]);
    }

    #[test]
    fn translation_shifts_every_point() {
        let values = vec![0.5, 0.0, 2.0, 1.5, 3.0, 0.7];
        let a = deproject(&DepthMap::new(values.clone(), unit_camera(3, 2, Pose::identity())).unwrap()).unwrap();
        let t = Vector3::new(0.3, -1.0, 2.5);
        let shifted = Isometry3::from_parts(Translation3::from(t), Default::default());
        let b = deproject(&DepthMap::new(values, unit_camera(3, 2, shifted)).unwrap()).unwrap();
        assert_eq!(a.len(), 5);
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((q - (p + t)).norm() < 1e-12);
        }
    }

    #[test]
    fn all_invalid_depth() {
        let d = DepthMap::new(vec![0.0; 4], unit_camera(2, 2, Pose::identity())).unwrap();
        assert_eq!(deproject(&d), Err(SceneError::AllInvalidDepth));
        assert!(DepthMap::new(vec![-1.0; 4], unit_camera(2, 2, Pose::identity())).is_err());
    }

    /// Analytic ray/sphere depth, fused from two views.
    #[test]
    fn fused_sphere_views_lie_on_the_surface() {
        let center = Point3::new(0.0, 0.0, 0.0);
        let radius = 0.1;
        let k = Intrinsics::square_fov(64, 40.0);
        let mut fused = PointCloud::default();
        for eye in [Point3::new(0.4, 0.0, 0.1), Point3::new(-0.1, 0.4, 0.2)] {
            let cam = CameraModel::new(k, look_at(&eye, &center, &Vector3::z()).unwrap()).unwrap();
            let mut values = vec![0.0; 64 * 64];
            for v in 0..64 {
                for u in 0..64 {
                    let d_cam = Vector3::new((u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0);
                    let dir = cam.pose.rotation * d_cam.normalize();
                    let oc = eye - center;
                    let b = oc.dot(&dir);
                    let disc = b * b - (oc.norm_squared() - radius * radius);
                    if disc >= 0.0 {
                        let t = -b - disc.sqrt();
                        values[v * 64 + u] = t / d_cam.norm();
                    }
                }
            }
            fused.append(&deproject(&DepthMap::new(values, cam).unwrap()).unwrap());
        }
        let voxel_diag = 3f64.sqrt() * 0.01;
        let near = fused.points.iter().filter(|p| ((*p - center).norm() - radius).abs() <= 2.0 * voxel_diag).count();
        assert!(near as f64 >= 0.95 * fused.len() as f64);
        assert!(fused.len() > 100);
    }

    #[test]
    fn crop_edge_cases() {
        let pc = PointCloud::from_points(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0)]);
        let all = Aabb::new(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(crop_workspace(&pc, &all), pc);
        let none = Aabb::new(Point3::new(2.0, 2.0, 2.0), Point3::new(3.0, 3.0, 3.0)).unwrap();
        assert!(crop_workspace(&pc, &none).is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn crop_matches_brute_force_and_is_idempotent(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(0..200);
            let points: Vec<Point3<f64>> = (0..n).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect();
            let relevancy: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let pc = PointCloud { points: points.clone(), relevancy: Some(relevancy.clone()), ..Default::default() };
            let a = Point3::new(rng.random(), rng.random(), rng.random());
            let b = a + Vector3::new(rng.random_range(0.01..0.8), rng.random_range(0.01..0.8), rng.random_range(0.01..0.8));
            let bounds = Aabb::new(a, b).unwrap();
            let out = crop_workspace(&pc, &bounds);
            let mut exp_pts = Vec::new();
            let mut exp_rel = Vec::new();
            for i in 0..n {
                let p = points[i];
                if p.x >= a.x && p.x <= b.x && p.y >= a.y && p.y <= b.y && p.z >= a.z && p.z <= b.z {
                    exp_pts.push(p);
                    exp_rel.push(relevancy[i]);
                }
            }
            prop_assert_eq!(&out.points, &exp_pts);
            prop_assert_eq!(out.relevancy.as_ref(), Some(&exp_rel));
            prop_assert_eq!(crop_workspace(&out, &bounds), out);
        }
    }

    #[test]
    fn far_point_is_rejected() {
        let mut pts = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..5 {
                    pts.push(Point3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let grid_len = pts.len();
        pts.push(Point3::new(100.0, 0.0, 0.0));
        let pc = PointCloud::from_points(pts.clone());
        let out = reject_outliers(&pc, 4, 2.0).unwrap();
        assert_eq!(out.points, pts[..grid_len].to_vec());
    }

    #[test]
    fn equal_statistics_remove_nothing() {
        let cube: Vec<Point3<f64>> =
            (0..8).map(|i| Point3::new((i & 1) as f64, (i >> 1 & 1) as f64, (i >> 2 & 1) as f64)).collect();
        let pc = PointCloud::from_points(cube);
        assert_eq!(reject_outliers(&pc, 3, 2.0).unwrap(), pc);
        assert_eq!(reject_outliers(&pc, 8, 2.0), Err(SceneError::TooFewPoints { n: 8, k: 8 }));
        assert_eq!(reject_outliers(&pc, 0, 2.0), Err(SceneError::TooFewPoints { n: 8, k: 0 }));
    }

    #[test]
    fn blur_of_constant_is_zero() {
        let img = GrayImage::new(5, 4, vec![0.7; 20]);
        assert_eq!(blur_score(&img).unwrap(), 0.0);
        assert_eq!(
            blur_score(&GrayImage::new(2, 5, vec![0.0; 10])),
            Err(SceneError::ImageTooSmall { width: 2, height: 5 })
        );
    }

    #[test]
    fn impulse_blur_score_matches_closed_form() {
        // Response: -4 at the impulse, +1 at its 4 neighbors, 0 elsewhere; mean 0.
        for (w, h, x, y) in [(10, 10, 4, 4), (16, 9, 2, 6), (31, 20, 28, 17)] {
            let mut data = vec![0.0; w * h];
            data[y * w + x] = 1.0;
            let m = ((w - 2) * (h - 2)) as f64;
            let expected = 20.0 / m;
            let got = blur_score(&GrayImage::new(w, h, data)).unwrap();
            assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        }
    }

    #[test]
    fn interior_impulse_score_is_translation_invariant() {
        let score_at = |x: usize, y: usize| {
            let mut data = vec![0.0; 144];
            data[y * 12 + x] = 2.5;
            blur_score(&GrayImage::new(12, 12, data)).unwrap()
        };
        let base = score_at(3, 3);
        for (x, y) in [(2, 2), (5, 8), (9, 9), (2, 9)] {
            assert!((score_at(x, y) - base).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_blur_lowers_the_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, h) = (40, 30);
        let data: Vec<f32> = (0..w * h).map(|_| rng.random()).collect();
        let img = GrayImage::new(w, h, data);
        let kernel = [1.0f32, 4.0, 6.0, 4.0, 1.0].map(|k| k / 16.0);
        let blur_axis = |src: &GrayImage, horizontal: bool| {
            let mut out = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (j, &k) in kernel.iter().enumerate() {
                        let o = j as isize - 2;
                        let (sx, sy) = if horizontal {
                            ((x as isize + o).clamp(0, w as isize - 1) as usize, y)
                        } else {
                            (x, (y as isize + o).clamp(0, h as isize - 1) as usize)
                        };
                        acc += k * src.get(sx, sy);
                    }
                    out[y * w + x] = acc;
                }
            }
            GrayImage::new(w, h, out)
        };
        let blurred = blur_axis(&blur_axis(&img, true), false);
        assert!(blur_score(&blurred).unwrap() < blur_score(&img).unwrap());
    }

    #[test]
    fn blurry_frames_flagged_relative_to_median() {
        assert_eq!(flag_blurry(&[10.0, 4.0, 12.0, 11.0, 5.5], 0.5), vec![false, true, false, false, false]);
        assert!(flag_blurry(&[], 0.5).is_empty());
    }

    #[test]
    fn append_and_select_keep_attributes_aligned() {
        let mut a = PointCloud {
            points: vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)],
            relevancy: Some(vec![0.1, 0.2]),
            ..Default::default()
        };
        let b =
            PointCloud { points: vec![Point3::new(2.0, 0.0, 0.0)], relevancy: Some(vec![0.3]), ..Default::default() };
        a.append(&b);
        assert_eq!(a.relevancy, Some(vec![0.1, 0.2, 0.3]));
        let s = a.select(&[2, 0]);
        assert_eq!(s.relevancy, Some(vec![0.3, 0.1]));
        assert!(s.validate().is_ok());
        a.append(&PointCloud::from_points(vec![Point3::origin()]));
        assert_eq!(a.relevancy, None);
    }
}
