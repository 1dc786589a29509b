//! Multi-scale language feature fields: storage, interpolation and relevancy.
//!
//! A [`FeatureField`] holds one language embedding per (scale, voxel) and one
//! grouping embedding per voxel over a regular grid. Only occupied voxels are
//! kept in memory; a voxel is occupied when its grouping embedding is
//! non-zero. Every stored vector goes through half-precision quantization and
//! renormalization, so an in-memory field and its reloaded LFLD export agree.

mod lfld;
mod text;
mod topdown;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::geometry::{Aabb, GeometryError};

pub use lfld::{load_field, read_field, save_field, write_field, LFLD_MAGIC, LFLD_VERSION};
pub use text::{TextEmbeddings, DEFAULT_NEGATIVES};
pub use topdown::{render_relevancy_topdown, TopDownRelevancy};

/// Occupancy threshold on the raw grouping-embedding norm.
pub const OCCUPANCY_EPS: f64 = 1e-6;
/// Interpolated vectors shorter than this cannot be renormalized.
pub const DEGENERATE_EPS: f64 = 1e-6;
/// Accepted raw norm range for stored embeddings before renormalization.
pub const UNIT_NORM_RANGE: (f64, f64) = (0.9, 1.1);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("malformed LFLD header: {0}")]
    MalformedHeader(String),
    #[error("LFLD payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("voxel {voxel} has a non-unit {kind} embedding (norm {norm:.4})")]
    NonUnitEmbedding { voxel: usize, kind: &'static str, norm: f64 },
    #[error("point ({x:.4}, {y:.4}, {z:.4}) lies outside the field bounds")]
    OutOfBounds { x: f64, y: f64, z: f64 },
    #[error("scale {scale} outside stored range [{min}, {max}]")]
    ScaleOutOfRange { scale: f64, min: f64, max: f64 },
    #[error("interpolated embedding has (near) zero norm")]
    DegenerateInterpolation,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("field has no occupied voxels")]
    EmptyField,
    #[error("invalid field layout: {0}")]
    InvalidLayout(String),
    #[error("text query needs at least one negative phrase")]
    NoNegatives,
    #[error("phrase {0:?} not present in the text-embedding sidecar")]
    UnknownPhrase(String),
    #[error("text sidecar: {0}")]
    Sidecar(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FieldError {
    fn from(e: std::io::Error) -> Self {
        FieldError::Io(e.to_string())
    }
}

impl From<GeometryError> for FieldError {
    fn from(e: GeometryError) -> Self {
        FieldError::InvalidLayout(e.to_string())
    }
}

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Normalizes `values`; `None` when the norm is below [`DEGENERATE_EPS`].
    pub fn normalized(mut values: Vec<f32>) -> Option<Self> {
        normalize_in_place(&mut values).then_some(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[inline]
pub(crate) fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Returns false (leaving `v` untouched) when `v` is degenerate.
pub(crate) fn normalize_in_place(v: &mut [f32]) -> bool {
    let n = norm(v);
    if !(n >= DEGENERATE_EPS) {
        return false;
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / n) as f32;
    }
    true
}

/// Text query with its canonical negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TextQuery {
    pub phrase: String,
    pub embedding: Embedding,
    pub negatives: Vec<(String, Embedding)>,
}

impl TextQuery {
    pub fn new(
        phrase: impl Into<String>,
        embedding: Embedding,
        negatives: Vec<(String, Embedding)>,
    ) -> Result<Self, FieldError> {
        if negatives.is_empty() {
            return Err(FieldError::NoNegatives);
        }
        let d = embedding.dim();
        if let Some((_, n)) = negatives.iter().find(|(_, n)| n.dim() != d) {
            return Err(FieldError::DimensionMismatch { expected: d, got: n.dim() });
        }
        Ok(Self { phrase: phrase.into(), embedding, negatives })
    }

    pub fn dim(&self) -> usize {
        self.embedding.dim()
    }
}

/// Pairwise-softmax relevancy of `phi` for `q`, minimized over negatives.
///
/// `min_i exp(φ·q) / (exp(φ·q) + exp(φ·n_i))`, evaluated as a logistic of the
/// similarity gap.
pub fn relevancy(phi: &Embedding, q: &TextQuery) -> Result<f64, FieldError> {
    if phi.dim() != q.dim() {
        return Err(FieldError::DimensionMismatch { expected: q.dim(), got: phi.dim() });
    }
    Ok(relevancy_slice(phi.as_slice(), q))
}

pub(crate) fn relevancy_slice(phi: &[f32], q: &TextQuery) -> f64 {
    let pos = dot(phi, q.embedding.as_slice());
    q.negatives.iter().map(|(_, n)| 1.0 / (1.0 + (dot(phi, n.as_slice()) - pos).exp())).fold(f64::INFINITY, f64::min)
}

/// Best relevancy over the searched scales, and the scale attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleHit {
    pub score: f64,
    pub scale: f64,
}

/// Grid geometry and embedding sizes of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldLayout {
    pub bounds: Aabb,
    pub dims: [usize; 3],
    pub scales: Vec<f64>,
    pub d_lang: usize,
    pub d_group: usize,
}

impl FieldLayout {
    pub fn validate(&self) -> Result<(), FieldError> {
        Aabb::new(self.bounds.min, self.bounds.max)?;
        if self.dims.contains(&0) {
            return Err(FieldError::InvalidLayout(format!("zero grid dimension {:?}", self.dims)));
        }
        if self.d_lang == 0 || self.d_group == 0 {
            return Err(FieldError::InvalidLayout("embedding dimensions must be positive".into()));
        }
        if self.scales.is_empty() {
            return Err(FieldError::InvalidLayout("at least one scale required".into()));
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) || self.scales.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FieldError::InvalidLayout(format!(
                "scales must be positive and strictly increasing: {:?}",
                self.scales
            )));
        }
        self.dims
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .filter(|&n| n < u32::MAX as usize)
            .ok_or_else(|| FieldError::InvalidLayout("grid too large".into()))?;
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

/// Multi-scale language field plus single-scale grouping field.
///
/// Immutable once built; all queries take `&self` and may run concurrently.
#[derive(Debug, Clone)]
pub struct FeatureField {
    layout: FieldLayout,
    step: Vector3<f64>,
    slots: Vec<u32>,
    voxels: Vec<u32>,
    lang: Vec<f32>,
    group: Vec<f32>,
}

const EMPTY: u32 = u32::MAX;

/// One corner of a trilinear stencil.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Corner {
    pub voxel: usize,
    pub weight: f64,
}

/// Accumulates voxels, then quantizes and validates them into a field.
#[derive(Debug)]
pub struct FieldBuilder {
    layout: FieldLayout,
    entries: Vec<(u32, Vec<f32>, Vec<f32>)>,
}

impl FieldBuilder {
    /// Sets voxel `voxel` (linear index); `lang` is `[scale][d_lang]`.
    pub fn set_voxel(&mut self, voxel: usize, lang: Vec<f32>, group: Vec<f32>) -> Result<(), FieldError> {
        let l = &self.layout;
        if voxel >= l.voxel_count() {
            return Err(FieldError::InvalidLayout(format!("voxel index {voxel} out of range")));
        }
        if lang.len() != l.scales.len() * l.d_lang {
            return Err(FieldError::DimensionMismatch { expected: l.scales.len() * l.d_lang, got: lang.len() });
        }
        if group.len() != l.d_group {
            return Err(FieldError::DimensionMismatch { expected: l.d_group, got: group.len() });
        }
        self.entries.push((voxel as u32, lang, group));
        Ok(())
    }

    /// Quantizes every vector to f16, drops voxels with a zero grouping vector,
    /// validates norms and renormalizes. A voxel set twice keeps the last value.
    pub fn build(mut self) -> Result<FeatureField, FieldError> {
        self.entries.sort_by_key(|e| e.0);
        let mut dedup: Vec<(u32, Vec<f32>, Vec<f32>)> = Vec::with_capacity(self.entries.len());
        for e in self.entries {
            match dedup.last_mut() {
                Some(last) if last.0 == e.0 => *last = e,
                _ => dedup.push(e),
            }
        }
        let mut field = FeatureField::empty(self.layout)?;
        for (voxel, mut lang, mut group) in dedup {
            quantize(&mut lang);
            quantize(&mut group);
            field.push_voxel(voxel as usize, &lang, &group)?;
        }
        Ok(field)
    }
}

fn quantize(v: &mut [f32]) {
    for x in v.iter_mut() {
        *x = half::f16::from_f32(*x).to_f32();
    }
}

impl FeatureField {
    pub fn builder(mut layout: FieldLayout) -> Result<FieldBuilder, FieldError> {
        // Scales and bounds are stored as f32 on disk.
        layout.scales = layout.scales.iter().map(|&s| s as f32 as f64).collect();
        for i in 0..3 {
            layout.bounds.min[i] = layout.bounds.min[i] as f32 as f64;
            layout.bounds.max[i] = layout.bounds.max[i] as f32 as f64;
        }
        layout.validate()?;
        Ok(FieldBuilder { layout, entries: Vec::new() })
    }

    pub(crate) fn empty(layout: FieldLayout) -> Result<Self, FieldError> {
        layout.validate()?;
        let e = layout.bounds.extent();
        let step = Vector3::new(e.x / layout.dims[0] as f64, e.y / layout.dims[1] as f64, e.z / layout.dims[2] as f64);
        let n = layout.voxel_count();
        Ok(Self { layout, step, slots: vec![EMPTY; n], voxels: Vec::new(), lang: Vec::new(), group: Vec::new() })
    }

    /// Adds a dequantized voxel. Voxels must arrive in increasing index order.
    /// Zero grouping vectors mark empty voxels and are skipped.
    pub(crate) fn push_voxel(&mut self, voxel: usize, lang: &[f32], group: &[f32]) -> Result<(), FieldError> {
        let gn = norm(group);
        if gn <= OCCUPANCY_EPS {
            return Ok(());
        }
        debug_assert!(self.voxels.last().is_none_or(|&v| (v as usize) < voxel));
        check_unit(voxel, "grouping", gn)?;
        let slot = self.voxels.len();
        self.group.extend(group.iter().map(|&x| (x as f64 / gn) as f32));
        let d = self.layout.d_lang;
        for s in 0..self.layout.scales.len() {
            let slice = &lang[s * d..(s + 1) * d];
            let n = norm(slice);
            check_unit(voxel, "language", n)?;
            self.lang.extend(slice.iter().map(|&x| (x as f64 / n) as f32));
        }
        self.voxels.push(voxel as u32);
        self.slots[voxel] = slot as u32;
        Ok(())
    }

    pub fn layout(&self) -> &FieldLayout {
        &self.layout
    }

    pub fn bounds(&self) -> &Aabb {
        &self.layout.bounds
    }

    pub fn dims(&self) -> [usize; 3] {
        self.layout.dims
    }

    pub fn scales(&self) -> &[f64] {
        &self.layout.scales
    }

    pub fn d_lang(&self) -> usize {
        self.layout.d_lang
    }

    pub fn d_group(&self) -> usize {
        self.layout.d_group
    }

    /// Voxel edge lengths.
    pub fn step(&self) -> Vector3<f64> {
        self.step
    }

    pub fn voxel_count(&self) -> usize {
        self.slots.len()
    }

    /// Linear indices of occupied voxels, ascending.
    pub fn occupied_voxels(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.voxels.iter().map(|&v| v as usize)
    }

    pub fn occupied_count(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_occupied(&self, voxel: usize) -> bool {
        self.slots[voxel] != EMPTY
    }

    /// Linear index with z fastest, then y, then x.
    pub fn linear_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let [_, ny, nz] = self.layout.dims;
        (ix * ny + iy) * nz + iz
    }

    pub fn voxel_coords(&self, voxel: usize) -> [usize; 3] {
        let [_, ny, nz] = self.layout.dims;
        [voxel / (ny * nz), (voxel / nz) % ny, voxel % nz]
    }

    pub fn voxel_center(&self, voxel: usize) -> Point3<f64> {
        let [ix, iy, iz] = self.voxel_coords(voxel);
        let min = &self.layout.bounds.min;
        Point3::new(
            min.x + (ix as f64 + 0.5) * self.step.x,
            min.y + (iy as f64 + 0.5) * self.step.y,
            min.z + (iz as f64 + 0.5) * self.step.z,
        )
    }

    /// Voxel whose cell contains `p` (upper faces belong to the next cell,
    /// except on the outer boundary).
    pub fn voxel_containing(&self, p: &Point3<f64>) -> Option<usize> {
        if !self.layout.bounds.contains(p) {
            return None;
        }
        let min = &self.layout.bounds.min;
        let idx: [usize; 3] =
            std::array::from_fn(|i| (((p[i] - min[i]) / self.step[i]).floor() as usize).min(self.layout.dims[i] - 1));
        Some(self.linear_index(idx[0], idx[1], idx[2]))
    }

    /// Stored language embedding of an occupied voxel at stored scale `scale`.
    pub fn lang_at(&self, voxel: usize, scale: usize) -> Option<&[f32]> {
        let slot = self.slots[voxel];
        (slot != EMPTY).then(|| {
            let d = self.layout.d_lang;
            let base = (slot as usize * self.layout.scales.len() + scale) * d;
            &self.lang[base..base + d]
        })
    }

    /// Stored grouping embedding of an occupied voxel.
    pub fn group_at(&self, voxel: usize) -> Option<&[f32]> {
        let slot = self.slots[voxel];
        (slot != EMPTY).then(|| {
            let d = self.layout.d_group;
            &self.group[slot as usize * d..(slot as usize + 1) * d]
        })
    }

    /// Trilinear stencil between voxel centers. Points between the outer
    /// voxel centers and the boundary clamp to the outer layer.
    pub(crate) fn stencil(&self, p: &Point3<f64>) -> Result<[Corner; 8], FieldError> {
        if !self.layout.bounds.contains(p) || !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(FieldError::OutOfBounds { x: p.x, y: p.y, z: p.z });
        }
        let min = &self.layout.bounds.min;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut t = [0f64; 3];
        for i in 0..3 {
            let n = self.layout.dims[i];
            let mut u = ((p[i] - min[i]) / self.step[i] - 0.5).clamp(0.0, (n - 1) as f64);
            let r = u.round();
            if (u - r).abs() < 1e-9 {
                u = r;
            }
            if n == 1 {
                lo[i] = 0;
                hi[i] = 0;
                t[i] = 0.0;
            } else {
                let i0 = (u.floor() as usize).min(n - 2);
                lo[i] = i0;
                hi[i] = i0 + 1;
                t[i] = u - i0 as f64;
            }
        }
        let mut corners = [Corner { voxel: 0, weight: 0.0 }; 8];
        for (c, corner) in corners.iter_mut().enumerate() {
            let pick =
                |axis: usize| if c >> (2 - axis) & 1 == 1 { (hi[axis], t[axis]) } else { (lo[axis], 1.0 - t[axis]) };
            let (ix, wx) = pick(0);
            let (iy, wy) = pick(1);
            let (iz, wz) = pick(2);
            *corner = Corner { voxel: self.linear_index(ix, iy, iz), weight: wx * wy * wz };
        }
        Ok(corners)
    }

    /// Un-normalized trilinear blend of the language vectors at stored scale
    /// `scale`; empty voxels contribute zero vectors.
    pub(crate) fn blend_lang(&self, corners: &[Corner; 8], scale: usize, out: &mut [f32]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for c in corners {
            if c.weight == 0.0 {
                continue;
            }
            if let Some(v) = self.lang_at(c.voxel, scale) {
                let w = c.weight as f32;
                for (o, &x) in out.iter_mut().zip(v) {
                    *o += w * x;
                }
            }
        }
    }

    /// Pre-normalization trilinear interpolation at a stored scale index.
    pub fn interpolate_lang_raw(&self, p: &Point3<f64>, scale: usize) -> Result<Vec<f32>, FieldError> {
        let corners = self.stencil(p)?;
        let mut out = vec![0.0; self.layout.d_lang];
        self.blend_lang(&corners, scale, &mut out);
        Ok(out)
    }

    /// Language embedding at `p` and physical scale `scale`: trilinear in
    /// space, linear between the bracketing stored scales, renormalized.
    pub fn query_embedding(&self, p: &Point3<f64>, scale: f64) -> Result<Embedding, FieldError> {
        let scales = &self.layout.scales;
        let (first, last) = (scales[0], scales[scales.len() - 1]);
        // Stored scales are f32; accept f64 requests that round onto the range.
        let slack = 1e-6 * last.abs();
        if !(scale >= first - slack && scale <= last + slack) {
            return Err(FieldError::ScaleOutOfRange { scale, min: first, max: last });
        }
        let scale = scale.clamp(first, last);
        let corners = self.stencil(p)?;
        let d = self.layout.d_lang;
        let k = scales.partition_point(|&s| s <= scale).saturating_sub(1);
        let mut v = vec![0.0; d];
        self.blend_lang(&corners, k, &mut v);
        if k + 1 < scales.len() && scale > scales[k] {
            let t = (scale - scales[k]) / (scales[k + 1] - scales[k]);
            let mut upper = vec![0.0; d];
            self.blend_lang(&corners, k + 1, &mut upper);
            let (a, b) = ((1.0 - t) as f32, t as f32);
            for (x, &y) in v.iter_mut().zip(&upper) {
                *x = a * *x + b * y;
            }
        }
        Embedding::normalized(v).ok_or(FieldError::DegenerateInterpolation)
    }

    /// Trilinearly interpolated, renormalized grouping embedding.
    pub fn query_group(&self, p: &Point3<f64>) -> Result<Embedding, FieldError> {
        let corners = self.stencil(p)?;
        let mut out = vec![0.0f32; self.layout.d_group];
        for c in &corners {
            if c.weight == 0.0 {
                continue;
            }
            if let Some(v) = self.group_at(c.voxel) {
                for (o, &x) in out.iter_mut().zip(v) {
                    *o += c.weight as f32 * x;
                }
            }
        }
        Embedding::normalized(out).ok_or(FieldError::DegenerateInterpolation)
    }

    /// Grid search over scales: every stored scale plus `n_refine` evenly
    /// spaced midpoints per interval. Ties go to the smaller scale; scales
    /// whose interpolated vector is degenerate are skipped.
    pub fn best_scale_relevancy_refined(
        &self,
        p: &Point3<f64>,
        q: &TextQuery,
        n_refine: usize,
    ) -> Result<ScaleHit, FieldError> {
        if q.dim() != self.layout.d_lang {
            return Err(FieldError::DimensionMismatch { expected: self.layout.d_lang, got: q.dim() });
        }
        let corners = self.stencil(p)?;
        let scales = &self.layout.scales;
        let d = self.layout.d_lang;
        let mut cur = vec![0.0f32; d];
        let mut next = vec![0.0f32; d];
        let mut tmp = vec![0.0f32; d];
        let mut best: Option<ScaleHit> = None;
        let mut consider = |v: &mut [f32], scale: f64| {
            if normalize_in_place(v) {
                let score = relevancy_slice(v, q);
                if best.is_none_or(|b| score > b.score) {
                    best = Some(ScaleHit { score, scale });
                }
            }
        };
        self.blend_lang(&corners, 0, &mut cur);
        for k in 0..scales.len() {
            tmp.copy_from_slice(&cur);
            consider(&mut tmp, scales[k]);
            if k + 1 == scales.len() {
                break;
            }
            self.blend_lang(&corners, k + 1, &mut next);
            for j in 1..=n_refine {
                let scale = scales[k] + (scales[k + 1] - scales[k]) * j as f64 / (n_refine + 1) as f64;
                let t = (scale - scales[k]) / (scales[k + 1] - scales[k]);
                let (a, b) = ((1.0 - t) as f32, t as f32);
                for ((o, &x), &y) in tmp.iter_mut().zip(&cur).zip(&next) {
                    *o = a * x + b * y;
                }
                consider(&mut tmp, scale);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        best.ok_or(FieldError::DegenerateInterpolation)
    }

    /// [`Self::best_scale_relevancy_refined`] over the stored scales only.
    pub fn best_scale_relevancy(&self, p: &Point3<f64>, q: &TextQuery) -> Result<ScaleHit, FieldError> {
        self.best_scale_relevancy_refined(p, q, 0)
    }

    /// Best-scale relevancy at an occupied voxel's center, using the stored
    /// vectors directly.
    pub fn voxel_relevancy(&self, voxel: usize, q: &TextQuery) -> Option<ScaleHit> {
        let mut best: Option<ScaleHit> = None;
        for (k, &scale) in self.layout.scales.iter().enumerate() {
            let score = relevancy_slice(self.lang_at(voxel, k)?, q);
            if best.is_none_or(|b| score > b.score) {
                best = Some(ScaleHit { score, scale });
            }
        }
        best
    }

    /// First occupied voxel hit by a ray, with entry distance and the outward
    /// normal of the entered face. Uses a 3D DDA over the grid.
    pub fn raycast(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        max_dist: f64,
    ) -> Option<(usize, f64, Vector3<f64>)> {
        let b = &self.layout.bounds;
        // Slab intersection with the bounds.
        let (mut t0, mut t1) = (0.0f64, max_dist);
        for i in 0..3 {
            if dir[i].abs() < 1e-15 {
                if origin[i] < b.min[i] || origin[i] > b.max[i] {
                    return None;
                }
            } else {
                let inv = 1.0 / dir[i];
                let (mut a, mut c) = ((b.min[i] - origin[i]) * inv, (b.max[i] - origin[i]) * inv);
                if a > c {
                    std::mem::swap(&mut a, &mut c);
                }
                t0 = t0.max(a);
                t1 = t1.min(c);
            }
        }
        if t0 > t1 {
            return None;
        }
        let entry = origin + dir * t0;
        let dims = self.layout.dims;
        let mut idx = [0i64; 3];
        let mut step_dir = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        // Normal of the face through which the ray entered the current cell.
        let mut entered_axis = {
            let mut axis = 0;
            let mut best = f64::INFINITY;
            for i in 0..3 {
                let d = (entry[i] - b.min[i]).abs().min((entry[i] - b.max[i]).abs());
                if d < best {
                    best = d;
                    axis = i;
                }
            }
            axis
        };
        for i in 0..3 {
            let u = (entry[i] - b.min[i]) / self.step[i];
            idx[i] = (u.floor() as i64).clamp(0, dims[i] as i64 - 1);
            if dir[i] > 1e-15 {
                step_dir[i] = 1;
                let boundary = b.min[i] + (idx[i] + 1) as f64 * self.step[i];
                t_max[i] = t0 + (boundary - entry[i]) / dir[i];
                t_delta[i] = self.step[i] / dir[i];
            } else if dir[i] < -1e-15 {
                step_dir[i] = -1;
                let boundary = b.min[i] + idx[i] as f64 * self.step[i];
                t_max[i] = t0 + (boundary - entry[i]) / dir[i];
                t_delta[i] = -self.step[i] / dir[i];
            }
        }
        let mut t = t0;
        loop {
            let voxel = self.linear_index(idx[0] as usize, idx[1] as usize, idx[2] as usize);
            if self.is_occupied(voxel) {
                let mut n = Vector3::zeros();
                n[entered_axis] = -(step_dir[entered_axis] as f64);
                if step_dir[entered_axis] == 0 {
                    n[entered_axis] = -dir[entered_axis].signum();
                }
                return Some((voxel, t, n));
            }
            let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            t = t_max[axis];
            if t > t1 {
                return None;
            }
            idx[axis] += step_dir[axis];
            if idx[axis] < 0 || idx[axis] >= dims[axis] as i64 {
                return None;
            }
            t_max[axis] += t_delta[axis];
            entered_axis = axis;
        }
    }
}

fn check_unit(voxel: usize, kind: &'static str, norm: f64) -> Result<(), FieldError> {
    if norm >= UNIT_NORM_RANGE.0 && norm <= UNIT_NORM_RANGE.1 {
        Ok(())
    } else {
        Err(FieldError::NonUnitEmbedding { voxel, kind, norm })
    }
}
