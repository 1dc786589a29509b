//! Part relevancy conditioned on an object mask.

use rayon::prelude::*;
use thiserror::Error;

use crate::extraction::ObjectMask;
use crate::field::{FeatureField, FieldError, ScaleHit, TextQuery};
use crate::scene_io::PointCloud;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConditionalError {
    #[error("object mask is empty")]
    EmptyMask,
    #[error("mask index {index} out of range for a cloud of {len} points")]
    InvalidMask { index: usize, len: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Absolute part relevancy over the points of one object mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PartDistribution {
    pub mask: ObjectMask,
    /// Aligned with `mask.indices`.
    pub scores: Vec<f64>,
    pub best_scale: Vec<f64>,
}

impl PartDistribution {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn max_score(&self) -> Option<f64> {
        self.scores.iter().copied().reduce(f64::max)
    }

    /// The masked points of `pc`, carrying their part relevancy.
    pub fn relevancy_cloud(&self, pc: &PointCloud) -> PointCloud {
        let mut out = pc.select(&self.mask.indices);
        out.relevancy = Some(self.scores.clone());
        out
    }
}

/// Best-scale relevancy of `part_q` at every masked point, over the stored
/// scales. Scores are not renormalized across the mask.
pub fn conditional_part_relevancy(
    field: &FeatureField,
    pc: &PointCloud,
    mask: &ObjectMask,
    part_q: &TextQuery,
) -> Result<PartDistribution, ConditionalError> {
    if mask.indices.is_empty() {
        return Err(ConditionalError::EmptyMask);
    }
    if let Some(&index) = mask.indices.iter().find(|&&i| i >= pc.len()) {
        return Err(ConditionalError::InvalidMask { index, len: pc.len() });
    }
    let hits: Vec<ScaleHit> = mask
        .indices
        .par_iter()
        .map(|&i| field.best_scale_relevancy(&pc.points[i], part_q))
        .collect::<Result<_, _>>()?;
    Ok(PartDistribution {
        mask: mask.clone(),
        scores: hits.iter().map(|h| h.score).collect(),
        best_scale: hits.iter().map(|h| h.scale).collect(),
    })
}

/// The `ceil(frac · n)` highest-scoring cloud indices of `dist`, best first;
/// equal scores keep ascending index order.
pub fn top_fraction(dist: &PartDistribution, frac: f64) -> Vec<usize> {
    let n = dist.len();
    let take = ((frac.clamp(0.0, 1.0) * n as f64).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dist.scores[b].total_cmp(&dist.scores[a]).then(dist.mask.indices[a].cmp(&dist.mask.indices[b]))
    });
    order[..take].iter().map(|&j| dist.mask.indices[j]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Embedding;
    use nalgebra::Point3;
    use proptest::prelude::*;

    fn dist(scores: Vec<f64>) -> PartDistribution {
        let n = scores.len();
        PartDistribution {
            mask: ObjectMask {
                seed: Point3::origin(),
                seed_index: 0,
                indices: (0..n).map(|i| 3 * i + 1).collect(),
                seed_group_feat: Embedding::normalized(vec![1.0]).unwrap(),
            },
            best_scale: vec![0.1; n],
            scores,
        }
    }

    #[test]
    fn full_fraction_is_everything() {
        let d = dist(vec![0.2, 0.9, 0.5]);
        assert_eq!(top_fraction(&d, 1.0), vec![4, 7, 1]);
    }

    #[test]
    fn five_percent_of_a_hundred() {
        let d = dist((0..100).map(|i| ((i * 37) % 100) as f64 / 100.0).collect());
        let top = top_fraction(&d, 0.05);
        let mut expected: Vec<(f64, usize)> = d.scores.iter().zip(&d.mask.indices).map(|(&s, &i)| (s, i)).collect();
        expected.sort_by(|a, b| b.0.total_cmp(&a.0));
        assert_eq!(top, expected[..5].iter().map(|e| e.1).collect::<Vec<_>>());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn top_fraction_matches_sort_and_is_scale_invariant(
            scores in prop::collection::vec(0u8..10, 1..80), frac in 0.01..1.0f64, c in 0.1..10.0f64,
        ) {
            let d = dist(scores.iter().map(|&s| s as f64 / 10.0).collect());
            let got = top_fraction(&d, frac);
            let mut pairs: Vec<(f64, usize)> = d.scores.iter().zip(&d.mask.indices).map(|(&s, &i)| (s, i)).collect();
            pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let k = (frac * pairs.len() as f64).ceil() as usize;
            prop_assert_eq!(&got, &pairs[..k].iter().map(|p| p.1).collect::<Vec<_>>());
            let mut scaled = d.clone();
            scaled.scores.iter_mut().for_each(|s| *s *= c);
            prop_assert_eq!(top_fraction(&scaled, frac), got);
        }
    }
}
