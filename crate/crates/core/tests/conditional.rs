use std::sync::OnceLock;

use proptest::prelude::*;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use taskgrasp_core::conditional::*;
use taskgrasp_core::extraction::*;
use taskgrasp_core::synth::*;
use taskgrasp_core::{Aabb, FeatureField, GroundTruth, PointCloud};

fn brush() -> SyntheticSceneSpec {
    let aabb = |min: [f64; 3], max: [f64; 3]| Aabb::new(min.into(), max.into()).unwrap();
    SyntheticSceneSpec {
        objects: vec![ObjectSpec {
            name: "brush".into(),
            lang_label: "brush".into(),
            pose: ObjectPose { position: [-0.03, 0.01, 0.0], yaw_deg: -20.0 },
            shape: Shape::Composite {
                elements: vec![
                    Element { solid: Solid::Box { size: [0.12, 0.025, 0.02] }, offset: [-0.03, 0.0, 0.01] },
                    Element { solid: Solid::Box { size: [0.06, 0.04, 0.04] }, offset: [0.06, 0.0, 0.02] },
                ],
            },
            parts: vec![
                PartSpec {
                    name: "handle".into(),
                    region: aabb([-0.09, -0.0125, 0.0], [0.03, 0.0125, 0.02]),
                    lang_label: "handle".into(),
                    scale_affinity: 1,
                },
                PartSpec {
                    name: "bristles".into(),
                    region: aabb([0.03, -0.02, 0.0], [0.09, 0.02, 0.04]),
                    lang_label: "bristles".into(),
                    scale_affinity: 1,
                },
            ],
        }],
        vocabulary: vec!["brush".into(), "handle".into(), "bristles".into(), "table".into()],
        ..mug_spec()
    }
}

/// Brush field, its object cloud and flood-filled mask.
struct Extracted {
    field: FeatureField,
    truth: GroundTruth,
    cloud: PointCloud,
    mask: ObjectMask,
}

fn extracted() -> &'static Extracted {
    static CELL: OnceLock<Extracted> = OnceLock::new();
    CELL.get_or_init(|| {
        let (field, _, truth) = build_scene(&brush(), 8).unwrap();
        let fg = foreground_mask(&field.topdown_group_image(128, 128)).unwrap();
        let loc = localize_object(&field, &truth.query("brush").unwrap(), &fg).unwrap();
        let views = ObjectViewParams { arc_deg: 360.0, ..Default::default() };
        let cloud = object_cloud(&field, &loc.seed, &views).unwrap();
        let params = FloodFillParams::default();
        let seed = snap_seed(&cloud, &loc.seed, field.group_at(loc.voxel).unwrap(), &params, &fg.projection).unwrap();
        let mask = floodfill(&cloud, &seed, &params, &fg.projection).unwrap();
        Extracted { field, truth, cloud, mask }
    })
}

#[test]
fn handle_query_concentrates_on_the_handle() {
    let e = extracted();
    let dist = conditional_part_relevancy(&e.field, &e.cloud, &e.mask, &e.truth.query("handle").unwrap()).unwrap();
    let (mut handle, mut bristles) = (Vec::new(), Vec::new());
    for (k, &i) in e.mask.indices.iter().enumerate() {
        let p = &e.cloud.points[i];
        if e.truth.in_part(0, 0, p) {
            handle.push(dist.scores[k]);
        } else if e.truth.in_part(0, 1, p) {
            bristles.push(dist.scores[k]);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!handle.is_empty() && !bristles.is_empty());
    let (h, b) = (mean(&handle), mean(&bristles));
    // Orthogonal embeddings score 0.5 and a perfect match e/(1+e), so the
    // ratio is taken over that baseline.
    assert!(h > b, "handle {h} bristles {b}");
    assert!(h - 0.5 >= 2.0 * (b - 0.5), "handle {h} bristles {b}");
}

#[test]
fn one_point_mask_gives_one_score() {
    let e = extracted();
    let mask = ObjectMask { indices: vec![e.mask.seed_index], ..e.mask.clone() };
    let dist = conditional_part_relevancy(&e.field, &e.cloud, &mask, &e.truth.query("handle").unwrap()).unwrap();
    assert_eq!(dist.len(), 1);
    assert_eq!(dist.best_scale.len(), 1);
}

#[test]
fn object_phrase_as_part_reproduces_the_direct_query() {
    let e = extracted();
    let q = e.truth.query("brush").unwrap();
    let dist = conditional_part_relevancy(&e.field, &e.cloud, &e.mask, &q).unwrap();
    for (k, &i) in e.mask.indices.iter().enumerate() {
        let direct = e.field.best_scale_relevancy(&e.cloud.points[i], &q).unwrap();
        assert_eq!(dist.scores[k], direct.score);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Any sub-mask: scores cover exactly its indices, stay in [0, 1] and
    /// equal the unrestricted per-point query.
    #[test]
    fn conditioning_only_restricts_the_support(seed in any::<u64>(), frac in 0.01f64..1.0, part in 0usize..2) {
        let e = extracted();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = e.mask.len();
        let take = ((frac * n as f64).ceil() as usize).clamp(1, n);
        let mut indices: Vec<usize> = sample(&mut rng, n, take).into_iter().map(|k| e.mask.indices[k]).collect();
        indices.sort_unstable();
        let mask = ObjectMask { indices: indices.clone(), ..e.mask.clone() };
        let q = e.truth.query(["handle", "bristles"][part]).unwrap();
        let dist = conditional_part_relevancy(&e.field, &e.cloud, &mask, &q).unwrap();
        prop_assert_eq!(&dist.mask.indices, &indices);
        prop_assert_eq!(dist.scores.len(), indices.len());
        for (k, &i) in indices.iter().enumerate() {
            prop_assert!((0.0..=1.0).contains(&dist.scores[k]));
            let direct = e.field.best_scale_relevancy(&e.cloud.points[i], &q).unwrap();
            prop_assert_eq!(dist.scores[k], direct.score);
            prop_assert_eq!(dist.best_scale[k], direct.scale);
        }
    }
}
