//! Labeled synthetic scenes and brute-force references.
//!
//! Label embeddings are random orthonormal vectors, so relevancy values are
//! predictable: a voxel carrying the query label scores `1/(1+e^-1)` and one
//! carrying an unrelated label scores 0.5 (before noise).

use std::collections::VecDeque;
use std::f64::consts::PI;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::{fill_setup, ExtractionError, FeatureProjection, FloodFillParams};
use crate::field::{
    relevancy, Embedding, FeatureField, FieldError, FieldLayout, TextEmbeddings, TextQuery, DEFAULT_NEGATIVES,
};
use crate::geometry::{Aabb, GeometryError, Pose};
use crate::scene_io::PointCloud;
use crate::spatial::{dist2, lower_median};

pub const DEFAULT_NOISE_SIGMA: f64 = 0.02;
pub const PART_OFFSET_NORM: f64 = 0.15;
pub const DEFAULT_CLOUD_SPACING: f64 = 0.005;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("voxel {voxel} claimed by objects {first} and {second}")]
    OverlappingObjects { voxel: usize, first: usize, second: usize },
    #[error("{labels} labels do not fit in {dim} embedding dimensions")]
    TooManyLabels { labels: usize, dim: usize },
    #[error("could not place {0} objects without overlap")]
    PlacementFailed(usize),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("scene spec JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Solid centered on its local origin. Cylinders run along z; the torus ring
/// lies in the xz plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Solid {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
    Torus { major: f64, minor: f64 },
}

const INSIDE_EPS: f64 = 1e-9;

impl Solid {
    fn validate(&self) -> Result<(), SynthError> {
        let ok = match *self {
            Solid::Box { size } => size.iter().all(|&s| s > 0.0 && s.is_finite()),
            Solid::Cylinder { radius, height } => {
                radius > 0.0 && height > 0.0 && radius.is_finite() && height.is_finite()
            }
            Solid::Sphere { radius } => radius > 0.0 && radius.is_finite(),
            Solid::Torus { major, minor } => minor > 0.0 && major > minor && major.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidSpec(format!("bad solid dimensions {self:?}")))
        }
    }

    pub fn half_extents(&self) -> Vector3<f64> {
        match *self {
            Solid::Box { size } => Vector3::new(size[0], size[1], size[2]) / 2.0,
            Solid::Cylinder { radius, height } => Vector3::new(radius, radius, height / 2.0),
            Solid::Sphere { radius } => Vector3::repeat(radius),
            Solid::Torus { major, minor } => Vector3::new(major + minor, minor, major + minor),
        }
    }

    /// Closed membership with a small tolerance.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let e = INSIDE_EPS;
        match *self {
            Solid::Box { size } => (0..3).all(|i| p[i].abs() <= size[i] / 2.0 + e),
            Solid::Cylinder { radius, height } => p.x.hypot(p.y) <= radius + e && p.z.abs() <= height / 2.0 + e,
            Solid::Sphere { radius } => p.coords.norm() <= radius + e,
            Solid::Torus { major, minor } => (p.x.hypot(p.z) - major).hypot(p.y) <= minor + e,
        }
    }

    /// Surface samples about `spacing` apart with outward unit normals.
    pub fn surface_samples(&self, spacing: f64) -> Vec<(Point3<f64>, Vector3<f64>)> {
        let n_of = |len: f64| ((len / spacing).ceil() as usize).max(1);
        let mut out = Vec::new();
        match *self {
            Solid::Box { size } => {
                for axis in 0..3 {
                    let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                    let (na, nb) = (n_of(size[a]), n_of(size[b]));
                    for sign in [-1.0, 1.0] {
                        for i in 0..na {
                            for j in 0..nb {
                                let mut p = Point3::origin();
                                p[axis] = sign * size[axis] / 2.0;
                                p[a] = -size[a] / 2.0 + (i as f64 + 0.5) * size[a] / na as f64;
                                p[b] = -size[b] / 2.0 + (j as f64 + 0.5) * size[b] / nb as f64;
                                let mut n = Vector3::zeros();
                                n[axis] = sign;
                                out.push((p, n));
                            }
                        }
                    }
                }
            }
            Solid::Cylinder { radius, height } => {
                let nu = n_of(2.0 * PI * radius);
                let nz = n_of(height);
                for i in 0..nu {
                    let t = 2.0 * PI * i as f64 / nu as f64;
                    let n = Vector3::new(t.cos(), t.sin(), 0.0);
                    for j in 0..nz {
                        let z = -height / 2.0 + (j as f64 + 0.5) * height / nz as f64;
                        out.push((Point3::new(radius * n.x, radius * n.y, z), n));
                    }
                }
                let rings = n_of(radius);
                for sign in [-1.0, 1.0] {
                    for k in 0..rings {
                        let r = (k as f64 + 0.5) * radius / rings as f64;
                        let m = n_of(2.0 * PI * r);
                        for i in 0..m {
                            let t = 2.0 * PI * (i as f64 + 0.5 * (k % 2) as f64) / m as f64;
                            out.push((
                                Point3::new(r * t.cos(), r * t.sin(), sign * height / 2.0),
                                Vector3::new(0.0, 0.0, sign),
                            ));
                        }
                    }
                }
            }
            Solid::Sphere { radius } => {
                let n = n_of(4.0 * PI * radius * radius / spacing);
                let golden = PI * (3.0 - 5f64.sqrt());
                for i in 0..n {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * i as f64;
                    let dir = Vector3::new(r * t.cos(), r * t.sin(), z);
                    out.push((Point3::from(radius * dir), dir));
                }
            }
            Solid::Torus { major, minor } => {
                let nu = n_of(2.0 * PI * (major + minor));
                let nv = n_of(2.0 * PI * minor);
                for i in 0..nu {
                    let u = 2.0 * PI * i as f64 / nu as f64;
                    for j in 0..nv {
                        let v = 2.0 * PI * j as f64 / nv as f64;
                        let n = Vector3::new(v.cos() * u.cos(), v.sin(), v.cos() * u.sin());
                        let c = Vector3::new(major * u.cos(), 0.0, major * u.sin());
                        out.push((Point3::from(c + minor * n), n));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub solid: Solid,
    /// Solid center in the object frame.
    pub offset: [f64; 3],
}

impl Element {
    fn local(&self, p: &Point3<f64>) -> Point3<f64> {
        p - Vector3::from(self.offset)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.solid.contains(&self.local(p))
    }

    pub fn bounds(&self) -> Aabb {
        let c = Point3::from(self.offset);
        let h = self.solid.half_extents();
        Aabb { min: c - h, max: c + h }
    }
}

/// Object geometry in its own frame; single solids rest on z = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
    Composite { elements: Vec<Element> },
}

impl Shape {
    pub fn elements(&self) -> Vec<Element> {
        match *self {
            Shape::Box { size } => vec![Element { solid: Solid::Box { size }, offset: [0.0, 0.0, size[2] / 2.0] }],
            Shape::Cylinder { radius, height } => {
                vec![Element { solid: Solid::Cylinder { radius, height }, offset: [0.0, 0.0, height / 2.0] }]
            }
            Shape::Sphere { radius } => vec![Element { solid: Solid::Sphere { radius }, offset: [0.0, 0.0, radius] }],
            Shape::Composite { ref elements } => elements.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPose {
    pub position: [f64; 3],
    /// Rotation about world +z.
    #[serde(default)]
    pub yaw_deg: f64,
}

impl ObjectPose {
    pub fn to_pose(&self) -> Pose {
        let [x, y, z] = self.position;
        Isometry3::from_parts(
            Translation3::new(x, y, z),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw_deg.to_radians()),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub name: String,
    /// Object-frame box; a voxel belongs to the first part whose box holds its center.
    pub region: Aabb,
    pub lang_label: String,
    /// Index of the largest scale carrying the pure part label.
    pub scale_affinity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub name: String,
    pub lang_label: String,
    pub pose: ObjectPose,
    pub shape: Shape,
    #[serde(default)]
    pub parts: Vec<PartSpec>,
}

impl ObjectSpec {
    /// Object-frame bounding box of the shape.
    pub fn bounds(&self) -> Aabb {
        let els = self.shape.elements();
        let mut b = els[0].bounds();
        for e in &els[1..] {
            let o = e.bounds();
            b.min = b.min.inf(&o.min);
            b.max = b.max.sup(&o.max);
        }
        b
    }

    pub fn part_index(&self, name: &str) -> Option<usize> {
        self.parts.iter().position(|p| p.name == name || p.lang_label == name)
    }

    /// Whether world point `p` lies in the object's bounding box.
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        self.bounds().contains(&self.pose.to_pose().inverse_transform_point(p))
    }

    /// Whether world point `p` lies in the region of part `part`.
    pub fn part_contains(&self, part: usize, p: &Point3<f64>) -> bool {
        self.parts[part].region.contains(&self.pose.to_pose().inverse_transform_point(p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub lang_label: String,
}

impl Default for TableSpec {
    fn default() -> Self {
        TableSpec { lang_label: "table".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub bounds: Aabb,
    pub dims: [usize; 3],
    pub scales: Vec<f64>,
    pub d_lang: usize,
    pub d_group: usize,
}

impl Default for GridSpec {
    /// 64³ voxels over a 0.6 m cube whose two lowest layers sit below the table.
    fn default() -> Self {
        let step = 0.6 / 64.0;
        GridSpec {
            bounds: Aabb { min: Point3::new(-0.3, -0.3, -2.0 * step), max: Point3::new(0.3, 0.3, 0.6 - 2.0 * step) },
            dims: [64, 64, 64],
            scales: vec![0.025, 0.05, 0.1, 0.2, 0.4, 0.8],
            d_lang: 64,
            d_group: 128,
        }
    }
}

fn default_sigma() -> f64 {
    DEFAULT_NOISE_SIGMA
}

fn default_spacing() -> f64 {
    DEFAULT_CLOUD_SPACING
}

fn default_table() -> Option<TableSpec> {
    Some(TableSpec::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    #[serde(default)]
    pub grid: GridSpec,
    pub objects: Vec<ObjectSpec>,
    #[serde(default = "default_table")]
    pub table: Option<TableSpec>,
    pub vocabulary: Vec<String>,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_spacing")]
    pub cloud_spacing: f64,
}

impl SyntheticSceneSpec {
    /// Index of the object named or labelled `phrase`.
    pub fn object_index(&self, phrase: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == phrase || o.lang_label == phrase)
    }

    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, SynthError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(self.cloud_spacing > 0.0 && self.cloud_spacing.is_finite()) {
            return bad("cloud_spacing must be positive".into());
        }
        let covered = |l: &str| self.vocabulary.iter().any(|v| v == l);
        if let Some(t) = &self.table {
            if !covered(&t.lang_label) {
                return bad(format!("table label {:?} missing from vocabulary", t.lang_label));
            }
        }
        let s = self.grid.scales.len();
        for (i, o) in self.objects.iter().enumerate() {
            if !covered(&o.lang_label) {
                return bad(format!("object label {:?} missing from vocabulary", o.lang_label));
            }
            if self.objects[..i].iter().any(|p| p.lang_label == o.lang_label) {
                return bad(format!("object label {:?} used twice", o.lang_label));
            }
            let els = o.shape.elements();
            if els.is_empty() {
                return bad(format!("object {:?} has no elements", o.name));
            }
            for e in &els {
                e.solid.validate()?;
            }
            let b = o.bounds();
            for p in &o.parts {
                if !covered(&p.lang_label) {
                    return bad(format!("part label {:?} missing from vocabulary", p.lang_label));
                }
                let tol = 1e-6;
                if (0..3).any(|k| {
                    p.region.min[k] < b.min[k] - tol
                        || p.region.max[k] > b.max[k] + tol
                        || p.region.min[k] > p.region.max[k]
                }) {
                    return bad(format!("part {:?} of {:?} leaves the object bounds", p.name, o.name));
                }
                if s >= 2 && p.scale_affinity > s - 2 {
                    log::debug!("scale affinity {} of part {:?} clamped to {}", p.scale_affinity, p.name, s - 2);
                }
            }
        }
        Ok(())
    }
}

/// Ground-truth owner of a voxel or cloud point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Owner {
    Empty,
    Table,
    Object { object: usize, part: Option<usize> },
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// One entry per grid voxel.
    pub voxel_owner: Vec<Owner>,
    /// One entry per scene-cloud point.
    pub cloud_owner: Vec<Owner>,
    /// Every label plus the default negatives, as a text sidecar.
    pub labels: TextEmbeddings,
    pub objects: Vec<ObjectSpec>,
}

impl GroundTruth {
    pub fn object_pose(&self, object: usize) -> Pose {
        self.objects[object].pose.to_pose()
    }

    pub fn in_object(&self, object: usize, p: &Point3<f64>) -> bool {
        self.objects[object].contains(p)
    }

    pub fn in_part(&self, object: usize, part: usize, p: &Point3<f64>) -> bool {
        self.objects[object].part_contains(part, p)
    }

    pub fn voxels_of(&self, object: usize, part: Option<usize>) -> Vec<usize> {
        (0..self.voxel_owner.len())
            .filter(|&v| match self.voxel_owner[v] {
                Owner::Object { object: o, part: p } => o == object && (part.is_none() || p == part),
                _ => false,
            })
            .collect()
    }

    pub fn query(&self, phrase: &str) -> Result<TextQuery, FieldError> {
        self.labels.default_query(phrase)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// `count` orthonormal vectors in `d` dimensions (Gram-Schmidt on Gaussians).
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = gaussian(rng, d);
        for _ in 0..2 {
            for b in &out {
                let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

fn unit_f32(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

fn with_noise(rng: &mut ChaCha8Rng, v: &[f64], sigma: f64) -> Vec<f32> {
    if sigma == 0.0 {
        return unit_f32(v);
    }
    let noisy: Vec<f64> = v.iter().map(|x| x + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    unit_f32(&noisy)
}

/// Label order in the embedding basis: default negatives, then the vocabulary.
fn label_list(spec: &SyntheticSceneSpec) -> Vec<String> {
    let mut labels: Vec<String> = DEFAULT_NEGATIVES.iter().map(|s| s.to_string()).collect();
    for v in &spec.vocabulary {
        if !labels.contains(v) {
            labels.push(v.clone());
        }
    }
    labels
}

/// Voxelizes `spec` into a field, samples an analytic scene cloud, and records
/// ground truth. Deterministic for a given `seed`.
pub fn build_scene(
    spec: &SyntheticSceneSpec,
    seed: u64,
) -> Result<(FeatureField, PointCloud, GroundTruth), SynthError> {
    spec.validate()?;
    let g = &spec.grid;
    let layout =
        FieldLayout { bounds: g.bounds, dims: g.dims, scales: g.scales.clone(), d_lang: g.d_lang, d_group: g.d_group };
    let mut builder = FeatureField::builder(layout)?;
    let probe = FeatureField::builder(FieldLayout {
        bounds: g.bounds,
        dims: g.dims,
        scales: g.scales.clone(),
        d_lang: g.d_lang,
        d_group: g.d_group,
    })?
    .build()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = label_list(spec);
    if labels.len() > g.d_lang {
        return Err(SynthError::TooManyLabels { labels: labels.len(), dim: g.d_lang });
    }
    let n_obj = spec.objects.len();
    if n_obj + 1 > g.d_group {
        return Err(SynthError::TooManyLabels { labels: n_obj + 1, dim: g.d_group });
    }
    let label_vecs = orthonormal(&mut rng, labels.len(), g.d_lang);
    let lookup = |l: &str| &label_vecs[labels.iter().position(|x| x == l).expect("validated label")];
    let group_bases = orthonormal(&mut rng, n_obj + 1, g.d_group);
    let part_offsets: Vec<Vec<Vec<f64>>> = spec
        .objects
        .iter()
        .map(|o| {
            o.parts
                .iter()
                .map(|_| {
                    let v = gaussian(&mut rng, g.d_group);
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| PART_OFFSET_NORM * x / n).collect()
                })
                .collect()
        })
        .collect();

    // Ownership.
    let mut owner = vec![Owner::Empty; probe.voxel_count()];
    let [nx, ny, nz] = g.dims;
    if spec.table.is_some() {
        for (v, o) in owner.iter_mut().enumerate() {
            if probe.voxel_center(v).z < 0.0 {
                *o = Owner::Table;
            }
        }
    }
    let step = probe.step();
    let origin = probe.bounds().min;
    for (oi, o) in spec.objects.iter().enumerate() {
        let pose = o.pose.to_pose();
        let els = o.shape.elements();
        let wb = world_bounds(&o.bounds(), &pose);
        // Voxel index span whose centers can fall inside the world box.
        let range = |k: usize, n: usize| {
            let lo = ((wb.min[k] - origin[k]) / step[k] - 0.5).floor().max(0.0) as usize;
            let hi = ((wb.max[k] - origin[k]) / step[k] - 0.5).ceil().min(n as f64 - 1.0);
            if hi < 0.0 {
                0..0
            } else {
                lo..hi as usize + 1
            }
        };
        for ix in range(0, nx) {
            for iy in range(1, ny) {
                for iz in range(2, nz) {
                    let v = probe.linear_index(ix, iy, iz);
                    let local = pose.inverse_transform_point(&probe.voxel_center(v));
                    if !els.iter().any(|e| e.contains(&local)) {
                        continue;
                    }
                    match owner[v] {
                        Owner::Object { object, .. } => {
                            return Err(SynthError::OverlappingObjects { voxel: v, first: object, second: oi })
                        }
                        Owner::Table => {
                            return Err(SynthError::InvalidSpec(format!("object {:?} reaches below the table", o.name)))
                        }
                        Owner::Empty => {}
                    }
                    let part = o.parts.iter().position(|p| p.region.contains(&local));
                    owner[v] = Owner::Object { object: oi, part };
                }
            }
        }
    }

    // Embeddings.
    let s = g.scales.len();
    let sigma = spec.noise_sigma;
    let table_vec = spec.table.as_ref().map(|t| lookup(&t.lang_label).clone());
    for (v, &own) in owner.iter().enumerate() {
        let (per_scale, group): (Vec<Vec<f64>>, Vec<f64>) = match own {
            Owner::Empty => continue,
            Owner::Table => (vec![table_vec.clone().expect("table present"); s], group_bases[n_obj].clone()),
            Owner::Object { object, part } => {
                let o = &spec.objects[object];
                let obj = lookup(&o.lang_label);
                match part {
                    None => (vec![obj.clone(); s], group_bases[object].clone()),
                    Some(pi) => {
                        let p = &o.parts[pi];
                        let pv = lookup(&p.lang_label);
                        let a = p.scale_affinity.min(s.saturating_sub(2));
                        let per: Vec<Vec<f64>> = (0..s)
                            .map(|k| {
                                if s == 1 || k <= a {
                                    pv.clone()
                                } else {
                                    let t = (k - a) as f64 / (s - 1 - a) as f64;
                                    pv.iter().zip(obj).map(|(x, y)| (1.0 - t) * x + t * y).collect()
                                }
                            })
                            .collect();
                        let gv =
                            group_bases[object].iter().zip(&part_offsets[object][pi]).map(|(b, o)| b + o).collect();
                        (per, gv)
                    }
                }
            }
        };
        let mut lang = Vec::with_capacity(s * g.d_lang);
        for e in &per_scale {
            let u: Vec<f64> = unit_f32(e).into_iter().map(f64::from).collect();
            lang.extend(with_noise(&mut rng, &u, sigma));
        }
        let gu: Vec<f64> = unit_f32(&group).into_iter().map(f64::from).collect();
        builder.set_voxel(v, lang, with_noise(&mut rng, &gu, sigma))?;
    }
    let field = builder.build()?;

    let mut text = TextEmbeddings::new(g.d_lang);
    for (l, v) in labels.iter().zip(&label_vecs) {
        text.insert(l.clone(), unit_f32(v))?;
    }
    let (cloud, cloud_owner) = scene_cloud(spec, &field);
    let truth = GroundTruth { voxel_owner: owner, cloud_owner, labels: text, objects: spec.objects.clone() };
    Ok((field, cloud, truth))
}

fn world_bounds(local: &Aabb, pose: &Pose) -> Aabb {
    let mut min = Point3::from(Vector3::repeat(f64::INFINITY));
    let mut max = Point3::from(Vector3::repeat(f64::NEG_INFINITY));
    for i in 0..8 {
        let c = Point3::new(
            if i & 1 == 0 { local.min.x } else { local.max.x },
            if i & 2 == 0 { local.min.y } else { local.max.y },
            if i & 4 == 0 { local.min.z } else { local.max.z },
        );
        let w = pose.transform_point(&c);
        min = min.inf(&w);
        max = max.sup(&w);
    }
    Aabb { min, max }
}

/// Analytic surface samples of every object plus the table plane. Samples
/// inside another solid (internal faces) or on the table are dropped.
fn scene_cloud(spec: &SyntheticSceneSpec, field: &FeatureField) -> (PointCloud, Vec<Owner>) {
    let posed: Vec<(usize, Pose, Element)> = spec
        .objects
        .iter()
        .enumerate()
        .flat_map(|(oi, o)| o.shape.elements().into_iter().map(move |e| (oi, o.pose.to_pose(), e)))
        .collect();
    let inside_any = |w: &Point3<f64>, skip: Option<usize>| {
        posed
            .iter()
            .enumerate()
            .any(|(k, (_, pose, e))| Some(k) != skip && e.contains(&pose.inverse_transform_point(w)))
    };
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut owners = Vec::new();
    for (k, (oi, pose, e)) in posed.iter().enumerate() {
        let o = &spec.objects[*oi];
        for (p, n) in e.solid.surface_samples(spec.cloud_spacing) {
            let local = p + Vector3::from(e.offset);
            let w = pose.transform_point(&local);
            if w.z < 1e-6 || inside_any(&w, Some(k)) || !field.bounds().contains(&w) {
                continue;
            }
            points.push(w);
            normals.push(pose.rotation * n);
            owners.push(Owner::Object { object: *oi, part: o.parts.iter().position(|pt| pt.region.contains(&local)) });
        }
    }
    if spec.table.is_some() {
        let b = field.bounds();
        let s = spec.cloud_spacing;
        let (nx, ny) = (((b.max.x - b.min.x) / s).floor() as usize, ((b.max.y - b.min.y) / s).floor() as usize);
        for i in 0..nx {
            for j in 0..ny {
                let w = Point3::new(b.min.x + (i as f64 + 0.5) * s, b.min.y + (j as f64 + 0.5) * s, 0.0);
                if inside_any(&Point3::new(w.x, w.y, 1e-6), None) {
                    continue;
                }
                points.push(w);
                normals.push(Vector3::z());
                owners.push(Owner::Table);
            }
        }
    }
    (PointCloud { points, normals: Some(normals), ..Default::default() }, owners)
}

/// Mug on the table: cylinder body with a torus handle on its +x side.
pub fn mug_spec() -> SyntheticSceneSpec {
    let (r, h) = (0.04, 0.10);
    let (major, minor) = (0.03, 0.01);
    let body = Element { solid: Solid::Cylinder { radius: r, height: h }, offset: [0.0, 0.0, h / 2.0] };
    let handle = Element { solid: Solid::Torus { major, minor }, offset: [r, 0.0, h / 2.0] };
    let handle_region = Aabb {
        min: Point3::new(r + 1e-4, -minor, h / 2.0 - major - minor),
        max: Point3::new(r + major + minor, minor, h / 2.0 + major + minor),
    };
    SyntheticSceneSpec {
        grid: GridSpec::default(),
        objects: vec![ObjectSpec {
            name: "mug".into(),
            lang_label: "mug".into(),
            pose: ObjectPose { position: [-0.02, 0.0, 0.0], yaw_deg: 0.0 },
            shape: Shape::Composite { elements: vec![body, handle] },
            parts: vec![PartSpec {
                name: "handle".into(),
                region: handle_region,
                lang_label: "handle".into(),
                scale_affinity: 1,
            }],
        }],
        table: Some(TableSpec::default()),
        vocabulary: vec!["table".into(), "mug".into(), "handle".into()],
        noise_sigma: DEFAULT_NOISE_SIGMA,
        cloud_spacing: DEFAULT_CLOUD_SPACING,
    }
}

/// Object and part to ask for in a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneQuery {
    pub object: usize,
    pub part: usize,
    pub object_label: String,
    pub part_label: String,
}

/// Ranges for generated benchmark scenes. Objects are chains of box and
/// upright-cylinder segments along their own x axis, one part per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSceneParams {
    pub objects: (usize, usize),
    pub parts: (usize, usize),
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub length: (f64, f64),
    /// Upper bound on the summed segment length of one object.
    pub max_object_length: f64,
    pub gap: f64,
    /// Object footprints stay within `[-w, w]²`.
    pub workspace_half: f64,
    pub noise_sigma: f64,
}

impl Default for RandomSceneParams {
    fn default() -> Self {
        RandomSceneParams {
            objects: (3, 6),
            parts: (2, 4),
            width: (0.02, 0.06),
            height: (0.03, 0.08),
            length: (0.03, 0.08),
            max_object_length: 0.2,
            gap: 0.03,
            workspace_half: 0.26,
            noise_sigma: DEFAULT_NOISE_SIGMA,
        }
    }
}

const OBJECT_NAMES: [&str; 12] =
    ["mug", "knife", "brush", "kettle", "spatula", "hammer", "bottle", "lamp", "scissors", "stapler", "ladle", "whisk"];
const PART_NAMES: [&str; 12] =
    ["handle", "head", "base", "rim", "lid", "blade", "cap", "neck", "tip", "spout", "grip", "knob"];

/// Footprint rectangle: center, half extents, yaw.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    center: Vector2<f64>,
    half: Vector2<f64>,
    yaw: f64,
}

impl Footprint {
    fn axes(&self) -> [Vector2<f64>; 2] {
        let (s, c) = self.yaw.sin_cos();
        [Vector2::new(c, s), Vector2::new(-s, c)]
    }

    fn radius_along(&self, a: &Vector2<f64>) -> f64 {
        let [u, v] = self.axes();
        self.half.x * a.dot(&u).abs() + self.half.y * a.dot(&v).abs()
    }
}

/// Separating-axis test with a clearance: true when the rectangles are at
/// least `gap` apart along some face axis.
fn separated(a: &Footprint, b: &Footprint, gap: f64) -> bool {
    let d = b.center - a.center;
    a.axes().iter().chain(b.axes().iter()).any(|ax| d.dot(ax).abs() - a.radius_along(ax) - b.radius_along(ax) >= gap)
}

fn random_object(rng: &mut ChaCha8Rng, p: &RandomSceneParams, name: &str, n_scales: usize) -> ObjectSpec {
    let n_parts = rng.random_range(p.parts.0..=p.parts.1);
    let max_len = p.length.1.min(p.max_object_length / n_parts as f64).max(p.length.0);
    let mut names: Vec<&str> = PART_NAMES.to_vec();
    names.shuffle(rng);
    let mut segments = Vec::new();
    for _ in 0..n_parts {
        let height = rng.random_range(p.height.0..=p.height.1);
        if rng.random_bool(0.5) {
            let len = rng.random_range(p.length.0..=max_len);
            let width = rng.random_range(p.width.0..=p.width.1);
            segments.push((len, width, height, false));
        } else {
            let d = rng.random_range(
                p.length.0.max(p.width.0)..=(max_len / 0.8).min(p.width.1).max(p.length.0.max(p.width.0)),
            );
            segments.push((0.8 * d, d, height, true));
        }
    }
    let total: f64 = segments.iter().map(|s| s.0).sum();
    let mut x = -total / 2.0;
    let mut elements = Vec::new();
    let mut parts = Vec::new();
    let max_aff = n_scales.saturating_sub(2).min(2);
    for (i, &(len, width, height, round)) in segments.iter().enumerate() {
        let cx = x + len / 2.0;
        let solid = if round {
            Solid::Cylinder { radius: width / 2.0, height }
        } else {
            Solid::Box { size: [len, width, height] }
        };
        elements.push(Element { solid, offset: [cx, 0.0, height / 2.0] });
        let region = Aabb { min: Point3::new(x, -width / 2.0, 0.0), max: Point3::new(x + len, width / 2.0, height) };
        parts.push(PartSpec {
            name: names[i].to_string(),
            region,
            lang_label: names[i].to_string(),
            scale_affinity: rng.random_range(0..=max_aff),
        });
        x += len;
    }
    ObjectSpec {
        name: name.to_string(),
        lang_label: name.to_string(),
        pose: ObjectPose { position: [0.0; 3], yaw_deg: 0.0 },
        shape: Shape::Composite { elements },
        parts,
    }
}

/// A random tabletop scene with one object/part query.
pub fn random_scene(seed: u64, params: &RandomSceneParams) -> Result<(SyntheticSceneSpec, SceneQuery), SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_5CE9E);
    let grid = GridSpec::default();
    let n = rng.random_range(params.objects.0..=params.objects.1);
    let mut names: Vec<&str> = OBJECT_NAMES.to_vec();
    names.shuffle(&mut rng);
    let mut objects: Vec<ObjectSpec> = Vec::with_capacity(n);
    let mut prints: Vec<Footprint> = Vec::with_capacity(n);
    for &name in names.iter().take(n) {
        let mut obj = random_object(&mut rng, params, name, grid.scales.len());
        let b = obj.bounds();
        let half = Vector2::new((b.max.x - b.min.x) / 2.0, (b.max.y - b.min.y) / 2.0);
        let local_c = Vector2::new((b.max.x + b.min.x) / 2.0, (b.max.y + b.min.y) / 2.0);
        let mut placed = false;
        for _ in 0..2000 {
            let yaw = rng.random_range(0.0..2.0 * PI);
            let w = params.workspace_half;
            let pos = Vector2::new(rng.random_range(-w..w), rng.random_range(-w..w));
            let (s, c) = yaw.sin_cos();
            let center = pos + Vector2::new(c * local_c.x - s * local_c.y, s * local_c.x + c * local_c.y);
            let fp = Footprint { center, half, yaw };
            let reach = Vector2::new(fp.radius_along(&Vector2::x()), fp.radius_along(&Vector2::y()));
            if (center.x.abs() + reach.x) > w || (center.y.abs() + reach.y) > w {
                continue;
            }
            if prints.iter().all(|o| separated(o, &fp, params.gap)) {
                obj.pose = ObjectPose { position: [pos.x, pos.y, 0.0], yaw_deg: yaw.to_degrees() };
                prints.push(fp);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::PlacementFailed(n));
        }
        objects.push(obj);
    }
    let mut vocabulary = vec!["table".to_string()];
    for o in &objects {
        for l in std::iter::once(&o.lang_label).chain(o.parts.iter().map(|p| &p.lang_label)) {
            if !vocabulary.contains(l) {
                vocabulary.push(l.clone());
            }
        }
    }
    let object = rng.random_range(0..objects.len());
    let part = rng.random_range(0..objects[object].parts.len());
    let query = SceneQuery {
        object,
        part,
        object_label: objects[object].lang_label.clone(),
        part_label: objects[object].parts[part].lang_label.clone(),
    };
    let spec = SyntheticSceneSpec {
        grid,
        objects,
        table: Some(TableSpec::default()),
        vocabulary,
        noise_sigma: params.noise_sigma,
        cloud_spacing: DEFAULT_CLOUD_SPACING,
    };
    Ok((spec, query))
}

/// Exhaustive argmax of relevancy over every occupied voxel and stored scale.
/// Ties go to the smaller voxel index, then the smaller scale.
pub fn brute_force_argmax_relevancy(field: &FeatureField, q: &TextQuery) -> Option<(usize, Point3<f64>, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for v in field.occupied_voxels() {
        for k in 0..field.scales().len() {
            let phi = Embedding::normalized(field.lang_at(v, k)?.to_vec())?;
            let r = relevancy(&phi, q).ok()?;
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((v, r));
            }
        }
    }
    best.map(|(v, r)| (v, field.voxel_center(v), r))
}

/// Flood-fill reference over the full O(N²) adjacency, with the same
/// admission rule and neighbor radius as [`crate::extraction::floodfill`].
pub fn brute_force_mask(
    pc: &PointCloud,
    seed: &Point3<f64>,
    params: &FloodFillParams,
    projection: &FeatureProjection,
) -> Result<Vec<usize>, ExtractionError> {
    let n = pc.len();
    let (setup, _) = fill_setup(pc, seed, params, projection, || {
        let mut nn: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| j != i)
                    .map(|j| dist2(&pc.points[j], &pc.points[i]))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect();
        lower_median(&mut nn).unwrap_or(0.0)
    })?;
    let r2 = setup.radius * setup.radius;
    let mut visited = vec![false; n];
    visited[setup.seed_index] = true;
    let mut queue = VecDeque::from([setup.seed_index]);
    while let Some(u) = queue.pop_front() {
        for (v, seen) in visited.iter_mut().enumerate() {
            if !*seen && setup.admitted[v] && dist2(&pc.points[v], &pc.points[u]) <= r2 {
                *seen = true;
                queue.push_back(v);
            }
        }
    }
    Ok((0..n).filter(|&i| visited[i]).collect())
}
