//! Shared fixtures for the criterion benches.

use nalgebra::Point3;
use taskgrasp_core::extraction::{
    floodfill, foreground_mask, localize_object, object_cloud, snap_seed, ForegroundMask,
};
use taskgrasp_core::synth::{build_scene, mug_spec};
use taskgrasp_core::{
    FeatureField, GraspPipeline, GroundTruth, ObjectMask, PipelineOutput, PipelineParams, PointCloud,
};

/// Mug scene with every intermediate the benches start from.
pub struct MugFixture {
    pub field: FeatureField,
    pub scene: PointCloud,
    pub truth: GroundTruth,
    pub foreground: ForegroundMask,
    pub object_cloud: PointCloud,
    pub seed: Point3<f64>,
    pub mask: ObjectMask,
    pub output: PipelineOutput,
}

impl MugFixture {
    pub fn new() -> Self {
        let (field, scene, truth) = build_scene(&mug_spec(), 0).expect("mug scene builds");
        let params = PipelineParams::default();
        let foreground = foreground_mask(&field.topdown_group_image(params.topdown_size, params.topdown_size)).unwrap();
        let loc = localize_object(&field, &truth.query("mug").unwrap(), &foreground).unwrap();
        let object_cloud = object_cloud(&field, &loc.seed, &params.object_views).unwrap();
        let group = field.group_at(loc.voxel).unwrap();
        let seed = snap_seed(&object_cloud, &loc.seed, group, &params.floodfill, &foreground.projection).unwrap();
        let mask = floodfill(&object_cloud, &seed, &params.floodfill, &foreground.projection).unwrap();
        let output =
            GraspPipeline::new(params).run(&field, &truth.labels, "mug", Some("handle"), Some(&scene)).unwrap();
        MugFixture { field, scene, truth, foreground, object_cloud, seed, mask, output }
    }
}

impl Default for MugFixture {
    fn default() -> Self {
        Self::new()
    }
}
