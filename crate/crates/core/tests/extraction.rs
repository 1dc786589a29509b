use std::collections::{HashSet, VecDeque};

use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taskgrasp_core::extraction::*;
use taskgrasp_core::field::{Embedding, FeatureField, FieldLayout, TextQuery};
use taskgrasp_core::scene_io::{Features, PointCloud};
use taskgrasp_core::synth::*;

/// Points in a few separated blobs with grouping features drawn near one of
/// two directions, plus a projection fitted on those features.
fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (PointCloud, FeatureProjection) {
    let n_blobs = rng.random_range(1..4);
    let centers: Vec<Point3<f64>> = (0..n_blobs)
        .map(|_| Point3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(0.0..0.2)))
        .collect();
    let dirs: Vec<Vec<f32>> = (0..2).map(|_| (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect();
    let mut points = Vec::with_capacity(n);
    let mut feats = Features::new(d);
    for _ in 0..n {
        let b = rng.random_range(0..n_blobs);
        let spread = 0.03;
        points.push(
            centers[b]
                + Vector3::new(
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                ),
        );
        let base = &dirs[rng.random_range(0..2)];
        let row: Vec<f32> = base.iter().map(|&x| x + rng.random_range(-0.3f32..0.3)).collect();
        feats.push(&row);
    }
    let rows: Vec<&[f32]> = (0..n).map(|i| feats.row(i)).collect();
    let projection = FeatureProjection::fit(&rows).unwrap();
    (PointCloud { points, group_feats: Some(feats), ..Default::default() }, projection)
}

fn dist(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    (a - b).norm()
}

/// Lower median of each point's nearest-neighbor distance, by full scan.
fn spacing(pc: &PointCloud) -> f64 {
    let n = pc.len();
    let mut nn: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| dist(&pc.points[i], &pc.points[j])).fold(f64::INFINITY, f64::min))
        .collect();
    nn.sort_by(|a, b| a.total_cmp(b));
    nn[(n - 1) / 2]
}

fn nearest(pc: &PointCloud, q: &Point3<f64>) -> usize {
    (0..pc.len()).min_by(|&a, &b| dist(&pc.points[a], q).total_cmp(&dist(&pc.points[b], q))).unwrap()
}

#[test]
fn floodfill_matches_brute_force_on_fifty_random_clouds() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let n = rng.random_range(200..=2000);
        let (pc, projection) = random_cloud(&mut rng, n, 8);
        let params = FloodFillParams {
            tau: rng.random_range(0.1..2.0),
            neighbor_radius_factor: rng.random_range(1.5..3.0),
            pca_components: rng.random_range(1..=3),
        };
        let seed = pc.points[rng.random_range(0..n)] + Vector3::new(0.001, -0.001, 0.0005);
        let fast = floodfill(&pc, &seed, &params, &projection).unwrap();
        let slow = brute_force_mask(&pc, &seed, &params, &projection).unwrap();
        assert_eq!(fast.indices, slow, "cloud {case} (n = {n})");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn floodfill_is_connected_seeded_and_monotone_in_tau(
        seed in any::<u64>(),
        n in 20usize..200,
        tau_a in 0.0f64..2.0,
        tau_b in 0.0f64..2.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pc, projection) = random_cloud(&mut rng, n, 6);
        let q = pc.points[rng.random_range(0..n)];
        let (lo, hi) = (tau_a.min(tau_b), tau_a.max(tau_b));
        let small = floodfill(&pc, &q, &FloodFillParams { tau: lo, ..Default::default() }, &projection).unwrap();
        let large = floodfill(&pc, &q, &FloodFillParams { tau: hi, ..Default::default() }, &projection).unwrap();

        let s = nearest(&pc, &q);
        prop_assert!(small.indices.contains(&s));
        prop_assert_eq!(small.seed_index, s);

        let big: HashSet<usize> = large.indices.iter().copied().collect();
        prop_assert!(small.indices.iter().all(|i| big.contains(i)));

        // Every member is reachable from the seed without leaving the mask.
        let r = 2.0 * spacing(&pc);
        let members: HashSet<usize> = small.indices.iter().copied().collect();
        let mut seen = HashSet::from([s]);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &small.indices {
                if !seen.contains(&v) && dist(&pc.points[u], &pc.points[v]) <= r {
                    seen.insert(v);
                    queue.push_back(v);
                }
            }
        }
        prop_assert_eq!(seen, members);
    }
}

fn scene(seed: u64) -> (SyntheticSceneSpec, SceneQuery, FeatureField, PointCloud, GroundTruth) {
    let (spec, q) = random_scene(seed, &RandomSceneParams::default()).unwrap();
    let (field, cloud, truth) = build_scene(&spec, seed).unwrap();
    (spec, q, field, cloud, truth)
}

#[test]
fn localization_matches_exhaustive_argmax_and_lands_on_the_object() {
    for seed in 0..4 {
        let (spec, q, field, _, truth) = scene(seed);
        let fg = foreground_mask(&field.topdown_group_image(128, 128)).unwrap();
        let query = truth.query(&q.object_label).unwrap();
        let loc = localize_object(&field, &query, &fg).unwrap();
        let (voxel, point, score) = brute_force_argmax_relevancy(&field, &query).unwrap();
        assert_eq!(loc.voxel, voxel, "scene {seed}");
        assert_eq!(loc.seed, point);
        assert!((loc.hit.score - score).abs() <= 1e-6);
        assert!(
            matches!(truth.voxel_owner[loc.voxel], Owner::Object { object, .. } if object == q.object),
            "scene {seed} ({})",
            spec.objects[q.object].name
        );
    }
}

#[test]
fn single_column_foreground_pins_the_seed_column() {
    let (_, q, field, _, truth) = scene(5);
    let mut fg = foreground_mask(&field.topdown_group_image(64, 64)).unwrap();
    let (px, py) = (0..64 * 64)
        .map(|i| (i % 64, i / 64))
        .find(|&(px, py)| {
            let (ix, iy) = field.pixel_column(px, py, 64, 64);
            field.occupied_voxels().any(|v| field.voxel_coords(v)[..2] == [ix, iy])
        })
        .unwrap();
    fg.mask.iter_mut().for_each(|m| *m = false);
    fg.mask[py * 64 + px] = true;
    let loc = localize_object(&field, &truth.query(&q.object_label).unwrap(), &fg).unwrap();
    let [ix, iy, _] = field.voxel_coords(loc.voxel);
    assert_eq!((ix, iy), field.pixel_column(px, py, 64, 64));
}

#[test]
fn unrelated_query_still_localizes_near_the_baseline() {
    let (_, _, field, _, truth) = scene(6);
    let fg = foreground_mask(&field.topdown_group_image(128, 128)).unwrap();
    // Unit vector orthogonal to every label in the scene.
    let labels: Vec<&Embedding> = truth.labels.phrases().map(|p| truth.labels.get(p).unwrap()).collect();
    let mut v = vec![0.0f64; field.d_lang()];
    v[field.d_lang() - 1] = 1.0;
    v[0] = 0.5;
    for e in &labels {
        let dot: f64 = e.as_slice().iter().zip(&v).map(|(&a, b)| a as f64 * b).sum();
        for (x, &a) in v.iter_mut().zip(e.as_slice()) {
            *x -= dot * a as f64;
        }
    }
    let pos = Embedding::normalized(v.iter().map(|&x| x as f32).collect()).unwrap();
    let negatives = ["object", "things", "stuff", "texture"]
        .iter()
        .map(|p| (p.to_string(), truth.labels.get(p).unwrap().clone()))
        .collect();
    let query = TextQuery::new("unrelated", pos, negatives).unwrap();
    let loc = localize_object(&field, &query, &fg).unwrap();
    assert!((loc.hit.score - 0.5).abs() < 0.05, "score {}", loc.hit.score);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// The argmax survives any positive affine map of the scores.
    #[test]
    fn localization_is_invariant_to_affine_score_rescaling(a in 0.01f64..100.0, b in -10.0f64..10.0, seed in 0u64..4) {
        let (_, q, field, _, truth) = scene_cached(seed);
        let fg = foreground_cached(seed);
        let query = truth.query(&q.object_label).unwrap();
        let loc = localize_object(field, &query, fg).unwrap();
        let mut best: Option<(usize, f64)> = None;
        for v in field.occupied_voxels() {
            let [ix, iy, _] = field.voxel_coords(v);
            let (px, py) = field.column_pixel(ix, iy, fg.width, fg.height);
            if !fg.get(px, py) {
                continue;
            }
            let s = a * field.voxel_relevancy(v, &query).unwrap().score + b;
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((v, s));
            }
        }
        prop_assert_eq!(best.unwrap().0, loc.voxel);
    }
}

type Scene = (SyntheticSceneSpec, SceneQuery, FeatureField, PointCloud, GroundTruth);

fn scene_cached(seed: u64) -> &'static Scene {
    use std::sync::OnceLock;
    static SCENES: [OnceLock<Scene>; 4] = [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()];
    SCENES[seed as usize].get_or_init(|| scene(seed))
}

fn foreground_cached(seed: u64) -> &'static ForegroundMask {
    use std::sync::OnceLock;
    static MASKS: [OnceLock<ForegroundMask>; 4] = [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()];
    MASKS[seed as usize].get_or_init(|| foreground_mask(&scene_cached(seed).2.topdown_group_image(128, 128)).unwrap())
}

/// Occupied voxels of `object` with at least one empty or out-of-grid face
/// neighbor.
fn surface_voxels(field: &FeatureField, truth: &GroundTruth, object: usize) -> Vec<usize> {
    let dims = field.dims().map(|d| d as i64);
    truth
        .voxels_of(object, None)
        .into_iter()
        .filter(|&v| {
            let c = field.voxel_coords(v).map(|x| x as i64);
            [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]].iter().any(|d| {
                let n = [c[0] + d[0], c[1] + d[1], c[2] + d[2]];
                if (0..3).any(|k| n[k] < 0 || n[k] >= dims[k]) {
                    return true;
                }
                !field.is_occupied(field.linear_index(n[0] as usize, n[1] as usize, n[2] as usize))
            })
        })
        .collect()
}

/// Voxels whose faces carry cloud samples.
fn sampled_voxels(field: &FeatureField, pc: &PointCloud) -> HashSet<usize> {
    let step = field.step();
    pc.points
        .iter()
        .zip(pc.normals.as_ref().unwrap())
        .filter_map(|(p, n)| field.voxel_containing(&(p - n.component_mul(&step) * 0.25)))
        .collect()
}

fn mug_coverage(arc_deg: f64) -> f64 {
    let spec = mug_spec();
    let (field, _, truth) = build_scene(&spec, 0).unwrap();
    let [x, y, _] = spec.objects[0].pose.position;
    let params = ObjectViewParams { arc_deg, ..Default::default() };
    let pc = object_cloud(&field, &Point3::new(x, y, 0.05), &params).unwrap();
    let hit = sampled_voxels(&field, &pc);
    let surface = surface_voxels(&field, &truth, 0);
    surface.iter().filter(|v| hit.contains(v)).count() as f64 / surface.len() as f64
}

#[test]
fn surrounding_views_cover_the_mug_surface() {
    assert!(mug_coverage(360.0) >= 0.9);
}

#[test]
fn half_arc_views_cover_the_visible_side_of_the_mug() {
    // Six views over 180° never see the back wall; 87.1% measured.
    let c = mug_coverage(180.0);
    assert!(c >= 0.85, "coverage {c}");
}

fn single_box_scene(size: [f64; 3]) -> (FeatureField, GroundTruth) {
    let spec = SyntheticSceneSpec {
        objects: vec![ObjectSpec {
            name: "bar".into(),
            lang_label: "bar".into(),
            pose: ObjectPose { position: [0.0, 0.0, 0.0], yaw_deg: 0.0 },
            shape: Shape::Box { size },
            parts: vec![],
        }],
        table: None,
        vocabulary: vec!["bar".into()],
        ..mug_spec()
    };
    let (field, _, truth) = build_scene(&spec, 2).unwrap();
    (field, truth)
}

#[test]
fn single_voxel_object_yields_only_its_faces() {
    let layout = FieldLayout {
        bounds: taskgrasp_core::Aabb::new(Point3::new(-0.1, -0.1, 0.0), Point3::new(0.1, 0.1, 0.2)).unwrap(),
        dims: [8, 8, 8],
        scales: vec![0.05],
        d_lang: 4,
        d_group: 4,
    };
    let mut b = FeatureField::builder(layout).unwrap();
    let v = (3 * 8 + 4) * 8 + 2;
    b.set_voxel(v, vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
    let field = b.build().unwrap();
    let c = field.voxel_center(v);
    let pc = object_cloud(&field, &c, &ObjectViewParams::default()).unwrap();
    assert!(!pc.is_empty());
    let half = field.step() / 2.0;
    for p in &pc.points {
        let d = (p - c).abs();
        assert!(d.x <= half.x + 1e-9 && d.y <= half.y + 1e-9 && d.z <= half.z + 1e-9);
        assert!((0..3).any(|k| (d[k] - half[k]).abs() <= 1e-9), "{p} is not on a face");
    }
}

#[test]
fn six_views_see_more_of_an_oblong_object_than_one() {
    let (field, _) = single_box_scene([0.2, 0.02, 0.03]);
    let seed = Point3::new(0.0, 0.0, 0.03);
    let one = object_cloud(&field, &seed, &ObjectViewParams { n_views: 1, ..Default::default() }).unwrap();
    let six = object_cloud(&field, &seed, &ObjectViewParams::default()).unwrap();
    assert!(sampled_voxels(&field, &six).len() > sampled_voxels(&field, &one).len());
}

/// Body and handle share the object's grouping base; the table does not.
fn can_opener() -> SyntheticSceneSpec {
    let aabb = |min: [f64; 3], max: [f64; 3]| taskgrasp_core::Aabb::new(min.into(), max.into()).unwrap();
    SyntheticSceneSpec {
        objects: vec![ObjectSpec {
            name: "can opener".into(),
            lang_label: "can opener".into(),
            pose: ObjectPose { position: [0.0, 0.02, 0.0], yaw_deg: 30.0 },
            shape: Shape::Composite {
                elements: vec![
                    Element { solid: Solid::Box { size: [0.05, 0.04, 0.03] }, offset: [-0.025, 0.0, 0.015] },
                    Element { solid: Solid::Box { size: [0.1, 0.02, 0.015] }, offset: [0.05, 0.0, 0.0075] },
                ],
            },
            parts: vec![
                PartSpec {
                    name: "head".into(),
                    region: aabb([-0.05, -0.02, 0.0], [0.0, 0.02, 0.03]),
                    lang_label: "head".into(),
                    scale_affinity: 1,
                },
                PartSpec {
                    name: "handle".into(),
                    region: aabb([0.0, -0.01, 0.0], [0.1, 0.01, 0.015]),
                    lang_label: "handle".into(),
                    scale_affinity: 1,
                },
            ],
        }],
        vocabulary: vec!["can opener".into(), "head".into(), "handle".into(), "table".into()],
        ..mug_spec()
    }
}

#[test]
fn floodfill_extracts_the_whole_can_opener_and_no_table() {
    let spec = can_opener();
    let (field, _, truth) = build_scene(&spec, 4).unwrap();
    let fg = foreground_mask(&field.topdown_group_image(128, 128)).unwrap();
    let loc = localize_object(&field, &truth.query("can opener").unwrap(), &fg).unwrap();
    let pc = object_cloud(&field, &loc.seed, &ObjectViewParams { arc_deg: 360.0, ..Default::default() }).unwrap();
    let seed_feat = field.group_at(loc.voxel).unwrap();
    let params = FloodFillParams::default();
    let seed = snap_seed(&pc, &loc.seed, seed_feat, &params, &fg.projection).unwrap();
    let mask = floodfill(&pc, &seed, &params, &fg.projection).unwrap();

    let step = field.step();
    let owner = |i: usize| {
        let p = pc.points[i] - pc.normals.as_ref().unwrap()[i].component_mul(&step) * 0.25;
        field.voxel_containing(&p).map(|v| truth.voxel_owner[v]).unwrap()
    };
    let on_object: Vec<usize> = (0..pc.len()).filter(|&i| matches!(owner(i), Owner::Object { .. })).collect();
    let table = mask.indices.iter().filter(|&&i| owner(i) == Owner::Table).count();
    assert_eq!(table, 0);
    assert_eq!(mask.indices, on_object);
}

#[test]
fn default_tau_is_half_the_object_table_separation() {
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.total_cmp(b));
        v[(v.len() - 1) / 2]
    };
    let mut separations = Vec::new();
    for seed in 0..10 {
        let (spec, _, field, _, truth) = scene(seed);
        let fg = foreground_mask(&field.topdown_group_image(128, 128)).unwrap();
        let n = spec.objects.len();
        let mut per: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
        for v in field.occupied_voxels() {
            let p = fg.projection.project(field.group_at(v).unwrap(), 1)[0];
            match truth.voxel_owner[v] {
                Owner::Table => per[n].push(p),
                Owner::Object { object, .. } => per[object].push(p),
                Owner::Empty => {}
            }
        }
        let table = median(&mut per[n]);
        for cluster in per.iter_mut().take(n) {
            separations.push((median(cluster) - table).abs());
        }
    }
    let calibrated = 0.5 * median(&mut separations);
    assert!((DEFAULT_TAU - calibrated).abs() <= 0.1 * calibrated, "calibrated {calibrated}");
}
