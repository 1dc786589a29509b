//! Object extraction: top-down foreground mask, seed localization,
//! object-centric cloud and grouping-feature flood fill.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, Point3, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::field::{Embedding, FeatureField, FieldError, ScaleHit, TextQuery};
use crate::geometry::{look_at, spherical_point, CameraModel, GeometryError, Intrinsics};
use crate::scene_io::{push_face_samples, render_view, Features, PointCloud, SceneError, VoxelFace};
use crate::spatial::{dist2, lower_median, SpatialGrid};

/// Default flood-fill threshold on the PCA-projected feature distance,
/// calibrated on the synthetic suite (half the median object/table separation).
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractionError {
    #[error("need at least 2 valid pixels, got {0}")]
    TooFewPixels(usize),
    #[error("grouping features have zero variance")]
    DegenerateFeatures,
    #[error("no occupied voxel projects into the foreground mask")]
    EmptyForeground,
    #[error("no view of the seed hit an occupied voxel")]
    NoSurface,
    #[error("point cloud has no grouping features")]
    MissingFeatures,
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Dense `width x height` image of `dim`-vectors with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl FeatureImage {
    pub fn new(width: usize, height: usize, dim: usize) -> Self {
        Self { width, height, dim, data: vec![0.0; width * height * dim], valid: vec![false; width * height] }
    }

    pub fn set(&mut self, px: usize, py: usize, v: &[f32]) {
        assert_eq!(v.len(), self.dim);
        let i = py * self.width + px;
        self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
        self.valid[i] = true;
    }

    pub fn get(&self, px: usize, py: usize) -> Option<&[f32]> {
        let i = py * self.width + px;
        self.valid[i].then(|| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn is_valid(&self, px: usize, py: usize) -> bool {
        self.valid[py * self.width + px]
    }

    /// Row-major indices of valid pixels.
    pub fn valid_pixels(&self) -> impl Iterator<Item = usize> + '_ {
        self.valid.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i)
    }

    fn pixel(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Principal axes of a feature population, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureProjection {
    pub mean: Vec<f64>,
    /// Unit component vectors; each one's largest-magnitude entry is positive.
    pub components: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl FeatureProjection {
    pub const MAX_COMPONENTS: usize = 8;

    /// PCA over `rows`. Errors with `DegenerateFeatures` when the total
    /// variance is ≤ 1e-12.
    pub fn fit(rows: &[&[f32]]) -> Result<Self, ExtractionError> {
        let n = rows.len();
        if n < 2 {
            return Err(ExtractionError::TooFewPixels(n));
        }
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, &x) in mean.iter_mut().zip(r.iter()) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let centered = DMatrix::<f64>::from_fn(n, d, |i, j| rows[i][j] as f64 - mean[j]);
        let cov = centered.tr_mul(&centered) / n as f64;
        if cov.trace() <= 1e-12 {
            return Err(ExtractionError::DegenerateFeatures);
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let k = d.min(Self::MAX_COMPONENTS);
        let mut components = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for &c in &order[..k] {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let pivot = (0..d).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(v);
            variances.push(eig.eigenvalues[c].max(0.0));
        }
        Ok(Self { mean, components, variances })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Coordinates of `f` along the first `k` components.
    pub fn project(&self, f: &[f32], k: usize) -> Vec<f64> {
        self.components[..k]
            .iter()
            .map(|c| c.iter().zip(f).zip(&self.mean).map(|((ci, &x), m)| ci * (x as f64 - m)).sum())
            .collect()
    }
}

/// Top-down foreground mask; `true` marks foreground pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
    pub projection: FeatureProjection,
    /// Otsu threshold on the first-component projection.
    pub threshold: f64,
}

impl ForegroundMask {
    pub fn get(&self, px: usize, py: usize) -> bool {
        self.mask[py * self.width + px]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Exact Otsu split of `values`: returns `(threshold, low_class)` where
/// `low_class[i]` is true for values at or below the threshold. `None` when
/// all values are equal.
pub fn otsu_split(values: &[f64]) -> Option<(f64, Vec<bool>)> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let total: f64 = sorted.iter().sum();
    let mut prefix = 0.0;
    let mut best: Option<(f64, usize)> = None;
    for k in 1..n {
        prefix += sorted[k - 1];
        if sorted[k - 1] == sorted[k] {
            continue;
        }
        let (w0, w1) = (k as f64, (n - k) as f64);
        let diff = prefix / w0 - (total - prefix) / w1;
        let between = w0 * w1 * diff * diff;
        if best.is_none_or(|(b, _)| between > b) {
            best = Some((between, k));
        }
    }
    let (_, k) = best?;
    let threshold = (sorted[k - 1] + sorted[k]) / 2.0;
    let mut low = vec![false; n];
    for &i in &order[..k] {
        low[i] = true;
    }
    Some((threshold, low))
}

/// Foreground pixels of a top-down grouping-feature image: Otsu threshold on
/// the first principal component, the smaller side being foreground. On an
/// even split the side not containing the first valid pixel is foreground.
pub fn foreground_mask(image: &FeatureImage) -> Result<ForegroundMask, ExtractionError> {
    let pixels: Vec<usize> = image.valid_pixels().collect();
    if pixels.len() < 2 {
        return Err(ExtractionError::TooFewPixels(pixels.len()));
    }
    let rows: Vec<&[f32]> = pixels.iter().map(|&i| image.pixel(i)).collect();
    let projection = FeatureProjection::fit(&rows)?;
    let values: Vec<f64> = rows.iter().map(|r| projection.project(r, 1)[0]).collect();
    let (threshold, low) = otsu_split(&values).ok_or(ExtractionError::DegenerateFeatures)?;
    let n_low = low.iter().filter(|&&l| l).count();
    let n_high = low.len() - n_low;
    let fg_low = match n_low.cmp(&n_high) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => !low[0],
    };
    let mut mask = vec![false; image.width * image.height];
    for (j, &i) in pixels.iter().enumerate() {
        mask[i] = low[j] == fg_low;
    }
    Ok(ForegroundMask { width: image.width, height: image.height, mask, projection, threshold })
}

/// Most relevant occupied voxel among those whose column falls in the
/// foreground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localization {
    pub voxel: usize,
    pub seed: Point3<f64>,
    pub hit: ScaleHit,
}

/// Argmax of best-scale relevancy over occupied voxels whose top-down
/// projection lies in `fg`; ties go to the smaller voxel index.
pub fn localize_object(
    field: &FeatureField,
    q: &TextQuery,
    fg: &ForegroundMask,
) -> Result<Localization, ExtractionError> {
    if q.dim() != field.d_lang() {
        return Err(FieldError::DimensionMismatch { expected: field.d_lang(), got: q.dim() }.into());
    }
    let candidates: Vec<usize> = field
        .occupied_voxels()
        .filter(|&v| {
            let [ix, iy, _] = field.voxel_coords(v);
            let (px, py) = field.column_pixel(ix, iy, fg.width, fg.height);
            fg.get(px, py)
        })
        .collect();
    let hits: Vec<ScaleHit> =
        candidates.par_iter().map(|&v| field.voxel_relevancy(v, q).expect("occupied voxel")).collect();
    let mut best: Option<usize> = None;
    for i in 0..hits.len() {
        if best.is_none_or(|b| hits[i].score > hits[b].score) {
            best = Some(i);
        }
    }
    let i = best.ok_or(ExtractionError::EmptyForeground)?;
    Ok(Localization { voxel: candidates[i], seed: field.voxel_center(candidates[i]), hit: hits[i] })
}

/// Cameras for the object-centric cloud: `n_views` look-at views at a fixed
/// inclination, spread over an azimuth arc about the vertical through the seed.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ObjectViewParams {
    pub n_views: usize,
    /// Total azimuth span in degrees, centered on `center_azimuth_deg`.
    pub arc_deg: f64,
    pub center_azimuth_deg: f64,
    /// Measured from world +z.
    pub inclination_deg: f64,
    pub radius: f64,
    pub image_size: u32,
    pub fov_deg: f64,
    /// Samples per edge of every visible voxel face.
    pub samples_per_edge: usize,
}

impl Default for ObjectViewParams {
    fn default() -> Self {
        Self {
            n_views: 6,
            arc_deg: 180.0,
            center_azimuth_deg: 0.0,
            inclination_deg: 45.0,
            radius: 0.4,
            image_size: 128,
            fov_deg: 53.0,
            samples_per_edge: 2,
        }
    }
}

impl ObjectViewParams {
    pub fn cameras(&self, seed: &Point3<f64>) -> Result<Vec<CameraModel>, ExtractionError> {
        if self.n_views == 0 || !(self.radius > 0.0) || self.image_size == 0 {
            return Err(ExtractionError::InvalidParams("object views need n_views ≥ 1, radius > 0".into()));
        }
        let k = Intrinsics::square_fov(self.image_size, self.fov_deg);
        (0..self.n_views)
            .map(|i| {
                let offset = if self.n_views == 1 {
                    0.0
                } else {
                    -self.arc_deg / 2.0 + self.arc_deg * i as f64 / (self.n_views - 1) as f64
                };
                let az = (self.center_azimuth_deg + offset).to_radians();
                let eye = spherical_point(seed, self.radius, az, self.inclination_deg.to_radians());
                let pose = look_at(&eye, seed, &nalgebra::Vector3::z()).expect("radius is positive");
                Ok(CameraModel::new(k, pose)?)
            })
            .collect()
    }
}

/// Object-centric cloud from views around `seed`. Rendering decides which
/// voxel faces are visible; each visible face is then sampled on a fixed
/// `samples_per_edge²` grid, so density does not depend on view overlap.
/// Points carry the face normal and the voxel's grouping embedding, ordered
/// by voxel then face.
pub fn object_cloud(
    field: &FeatureField,
    seed: &Point3<f64>,
    params: &ObjectViewParams,
) -> Result<PointCloud, ExtractionError> {
    let max_depth = 2.0 * params.radius + field.bounds().extent().norm();
    let mut faces = BTreeSet::new();
    for cam in params.cameras(seed)? {
        let view = render_view(field, &cam, max_depth);
        faces.extend(view.hits.iter().flatten().map(|h| VoxelFace::from_normal(h.voxel, &h.normal)));
    }
    if faces.is_empty() {
        return Err(ExtractionError::NoSurface);
    }
    let mut out = PointCloud {
        normals: Some(Vec::new()),
        group_feats: Some(Features::new(field.d_group())),
        ..Default::default()
    };
    for face in faces {
        push_face_samples(field, face, params.samples_per_edge, &mut out);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FloodFillParams {
    /// Admission threshold on the projected feature distance to the seed.
    pub tau: f64,
    /// Neighbor radius as a multiple of the median nearest-neighbor spacing.
    pub neighbor_radius_factor: f64,
    pub pca_components: usize,
}

impl Default for FloodFillParams {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, neighbor_radius_factor: 2.0, pca_components: 1 }
    }
}

impl FloodFillParams {
    pub fn validate(&self, projection: &FeatureProjection) -> Result<(), ExtractionError> {
        if !(self.tau >= 0.0) {
            return Err(ExtractionError::InvalidParams(format!("tau must be non-negative, got {}", self.tau)));
        }
        if !(self.neighbor_radius_factor > 1.0 && self.neighbor_radius_factor.is_finite()) {
            return Err(ExtractionError::InvalidParams("neighbor_radius_factor must be finite and > 1".into()));
        }
        if self.pca_components == 0 || self.pca_components > projection.components.len() {
            return Err(ExtractionError::InvalidParams(format!(
                "pca_components must be in 1..={}",
                projection.components.len()
            )));
        }
        Ok(())
    }
}

/// Points of one object inside an owning cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    pub seed: Point3<f64>,
    /// Cloud point nearest to `seed`; always a member.
    pub seed_index: usize,
    /// Ascending.
    pub indices: Vec<usize>,
    pub seed_group_feat: Embedding,
}

impl ObjectMask {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `{"seed": [x, y, z], "indices": [...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": [self.seed.x, self.seed.y, self.seed.z],
            "indices": self.indices,
        })
    }
}

/// Shared set-up of the flood fill and its brute-force reference.
pub(crate) struct FillSetup {
    pub seed_index: usize,
    pub radius: f64,
    pub admitted: Vec<bool>,
}

pub(crate) fn nearest_index(points: &[Point3<f64>], q: &Point3<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, q);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Projected-distance admission: `‖P f_i − P f_seed‖₂ ≤ tau`.
pub(crate) fn admissions(
    feats: &Features,
    seed_index: usize,
    projection: &FeatureProjection,
    params: &FloodFillParams,
) -> Vec<bool> {
    let k = params.pca_components;
    let seed = projection.project(feats.row(seed_index), k);
    (0..feats.len())
        .into_par_iter()
        .map(|i| {
            let p = projection.project(feats.row(i), k);
            let d2: f64 = p.iter().zip(&seed).map(|(a, b)| (a - b) * (a - b)).sum();
            i == seed_index || d2.sqrt() <= params.tau
        })
        .collect()
}

pub(crate) fn fill_setup(
    pc: &PointCloud,
    seed: &Point3<f64>,
    params: &FloodFillParams,
    projection: &FeatureProjection,
    spacing: impl FnOnce() -> f64,
) -> Result<(FillSetup, Embedding), ExtractionError> {
    let feats = pc.group_feats.as_ref().ok_or(ExtractionError::MissingFeatures)?;
    if pc.is_empty() {
        return Err(ExtractionError::EmptyCloud);
    }
    if feats.dim != projection.dim() {
        return Err(FieldError::DimensionMismatch { expected: projection.dim(), got: feats.dim }.into());
    }
    params.validate(projection)?;
    let seed_index = nearest_index(&pc.points, seed);
    let seed_feat = Embedding::normalized(feats.row(seed_index).to_vec()).ok_or(ExtractionError::MissingFeatures)?;
    let radius = if pc.len() == 1 { 0.0 } else { params.neighbor_radius_factor * spacing() };
    let admitted = admissions(feats, seed_index, projection, params);
    Ok((FillSetup { seed_index, radius, admitted }, seed_feat))
}

/// Moves `seed` to the nearest cloud point whose projected grouping feature
/// lies within `tau` of `seed_feat`'s. Returns `seed` when no point qualifies.
pub fn snap_seed(
    pc: &PointCloud,
    seed: &Point3<f64>,
    seed_feat: &[f32],
    params: &FloodFillParams,
    projection: &FeatureProjection,
) -> Result<Point3<f64>, ExtractionError> {
    let feats = pc.group_feats.as_ref().ok_or(ExtractionError::MissingFeatures)?;
    if feats.dim != projection.dim() || seed_feat.len() != projection.dim() {
        return Err(FieldError::DimensionMismatch { expected: projection.dim(), got: seed_feat.len() }.into());
    }
    params.validate(projection)?;
    let k = params.pca_components;
    let target = projection.project(seed_feat, k);
    let best = (0..pc.len())
        .filter(|&i| {
            let p = projection.project(feats.row(i), k);
            p.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= params.tau
        })
        .min_by(|&a, &b| dist2(&pc.points[a], seed).total_cmp(&dist2(&pc.points[b], seed)));
    Ok(best.map_or(*seed, |i| pc.points[i]))
}

/// Grows an object mask from the cloud point nearest `seed` over the radius
/// graph (radius = factor × lower-median nearest-neighbor spacing). A point
/// joins when its projected grouping feature lies within `tau` of the seed's.
pub fn floodfill(
    pc: &PointCloud,
    seed: &Point3<f64>,
    params: &FloodFillParams,
    projection: &FeatureProjection,
) -> Result<ObjectMask, ExtractionError> {
    let grid = SpatialGrid::new(&pc.points);
    let (setup, seed_group_feat) = fill_setup(pc, seed, params, projection, || {
        lower_median(&mut grid.nearest_neighbor_distances()).unwrap_or(0.0)
    })?;
    if pc.len() == 1 {
        log::warn!("flood fill on a single-point cloud; mask is that point");
    }
    let mut visited = vec![false; pc.len()];
    visited[setup.seed_index] = true;
    let mut queue = VecDeque::from([setup.seed_index]);
    while let Some(u) = queue.pop_front() {
        grid.for_each_within(&pc.points[u], setup.radius, |v, _| {
            if !visited[v] && setup.admitted[v] {
                visited[v] = true;
                queue.push_back(v);
            }
        });
    }
    let indices = (0..pc.len()).filter(|&i| visited[i]).collect();
    Ok(ObjectMask { seed: *seed, seed_index: setup.seed_index, indices, seed_group_feat })
}
