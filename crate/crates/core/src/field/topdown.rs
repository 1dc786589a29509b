//! Orthographic top-down renders of a field (looking down -z).

use nalgebra::Point3;
use rayon::prelude::*;

use super::{FeatureField, FieldError, ScaleHit, TextQuery};
use crate::extraction::FeatureImage;

/// Per-pixel best-scale relevancy, max over the occupied voxels of each
/// pixel's column. Rows run along +y, columns along +x.
#[derive(Debug, Clone, PartialEq)]
pub struct TopDownRelevancy {
    pub width: usize,
    pub height: usize,
    /// `None` over columns with no occupied voxel.
    pub values: Vec<Option<f64>>,
    pub argmax_voxel: usize,
    pub argmax: Point3<f64>,
    pub argmax_hit: ScaleHit,
}

impl TopDownRelevancy {
    pub fn get(&self, px: usize, py: usize) -> Option<f64> {
        self.values[py * self.width + px]
    }
}

impl FeatureField {
    /// Voxel column `(ix, iy)` under the center of pixel `(px, py)`.
    pub fn pixel_column(&self, px: usize, py: usize, width: usize, height: usize) -> (usize, usize) {
        let b = self.bounds();
        let e = b.extent();
        let x = b.min.x + (px as f64 + 0.5) * e.x / width as f64;
        let y = b.min.y + (py as f64 + 0.5) * e.y / height as f64;
        let [nx, ny, _] = self.dims();
        let ix = (((x - b.min.x) / self.step().x).floor() as usize).min(nx - 1);
        let iy = (((y - b.min.y) / self.step().y).floor() as usize).min(ny - 1);
        (ix, iy)
    }

    /// Pixel `(px, py)` containing the center of voxel column `(ix, iy)`.
    pub fn column_pixel(&self, ix: usize, iy: usize, width: usize, height: usize) -> (usize, usize) {
        let b = self.bounds();
        let e = b.extent();
        let x = (ix as f64 + 0.5) * self.step().x;
        let y = (iy as f64 + 0.5) * self.step().y;
        (
            ((x / e.x * width as f64).floor() as usize).min(width - 1),
            ((y / e.y * height as f64).floor() as usize).min(height - 1),
        )
    }

    /// Topmost occupied voxel of every column, indexed `ix * ny + iy`.
    pub fn top_voxels(&self) -> Vec<Option<usize>> {
        let [nx, ny, _] = self.dims();
        let mut top = vec![None; nx * ny];
        for v in self.occupied_voxels() {
            let [ix, iy, _] = self.voxel_coords(v);
            // Ascending voxel order visits z upward within a column.
            top[ix * ny + iy] = Some(v);
        }
        top
    }

    /// Top-down image of grouping embeddings: each pixel shows the topmost
    /// occupied voxel of its column.
    pub fn topdown_group_image(&self, width: usize, height: usize) -> FeatureImage {
        let [_, ny, _] = self.dims();
        let top = self.top_voxels();
        let d = self.d_group();
        let mut img = FeatureImage::new(width, height, d);
        for py in 0..height {
            for px in 0..width {
                let (ix, iy) = self.pixel_column(px, py, width, height);
                if let Some(v) = top[ix * ny + iy] {
                    img.set(px, py, self.group_at(v).expect("top voxel is occupied"));
                }
            }
        }
        img
    }
}

/// Renders the relevancy of `q` from above at `width x height` pixels and
/// returns the occupied voxel with the global maximum (ties: smallest index).
pub fn render_relevancy_topdown(
    field: &FeatureField,
    q: &TextQuery,
    width: usize,
    height: usize,
) -> Result<TopDownRelevancy, FieldError> {
    if width == 0 || height == 0 {
        return Err(FieldError::InvalidLayout("render resolution must be at least 1x1".into()));
    }
    if q.dim() != field.d_lang() {
        return Err(FieldError::DimensionMismatch { expected: field.d_lang(), got: q.dim() });
    }
    if field.occupied_count() == 0 {
        return Err(FieldError::EmptyField);
    }
    let voxels: Vec<usize> = field.occupied_voxels().collect();
    let hits: Vec<ScaleHit> =
        voxels.par_iter().map(|&v| field.voxel_relevancy(v, q).expect("occupied voxel")).collect();
    let [nx, ny, _] = field.dims();
    let mut column_best: Vec<Option<(f64, usize)>> = vec![None; nx * ny];
    for (i, &v) in voxels.iter().enumerate() {
        let [ix, iy, _] = field.voxel_coords(v);
        let slot = &mut column_best[ix * ny + iy];
        if slot.is_none_or(|(s, _)| hits[i].score > s) {
            *slot = Some((hits[i].score, i));
        }
    }
    let mut values = vec![None; width * height];
    let mut best: Option<(f64, usize)> = None;
    for py in 0..height {
        for px in 0..width {
            let (ix, iy) = field.pixel_column(px, py, width, height);
            if let Some((score, i)) = column_best[ix * ny + iy] {
                values[py * width + px] = Some(score);
                let better = match best {
                    None => true,
                    Some((bs, bi)) => score > bs || (score == bs && i < bi),
                };
                if better {
                    best = Some((score, i));
                }
            }
        }
    }
    let (_, i) = best.ok_or(FieldError::EmptyField)?;
    Ok(TopDownRelevancy {
        width,
        height,
        values,
        argmax_voxel: voxels[i],
        argmax: field.voxel_center(voxels[i]),
        argmax_hit: hits[i],
    })
}
