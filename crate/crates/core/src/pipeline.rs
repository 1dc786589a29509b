//! Object query to ranked grasps, stage by stage.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::conditional::{conditional_part_relevancy, PartDistribution};
use crate::extraction::{
    floodfill, foreground_mask, localize_object, object_cloud, snap_seed, FloodFillParams, ForegroundMask,
    Localization, ObjectMask, ObjectViewParams,
};
use crate::field::{FeatureField, TextEmbeddings};
use crate::geometry::{pose_to_row_major, Aabb, Intrinsics};
use crate::grasp::{
    nms, pose_chain, propose_grasps, rank, virtual_cameras, AntipodalProposer, GraspCandidate, GraspError,
    GraspProposer, ProposerError, SemanticScorer, DEFAULT_NMS_ROTATION_DEG, DEFAULT_NMS_TRANSLATION, DEFAULT_WEIGHT,
};
use crate::scene_io::{crop_workspace, PointCloud};
use crate::Error;

/// Hemisphere of virtual cameras around the object for grasp proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalCameras {
    pub n_azimuth: usize,
    pub n_inclination: usize,
    pub radius: f64,
    pub image_size: u32,
    pub fov_deg: f64,
}

impl Default for ProposalCameras {
    fn default() -> Self {
        ProposalCameras { n_azimuth: 8, n_inclination: 3, radius: 0.5, image_size: 128, fov_deg: 53.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub weight: f64,
    pub floodfill: FloodFillParams,
    pub object_views: ObjectViewParams,
    /// Side of the square top-down grouping image used for the foreground mask.
    pub topdown_size: usize,
    pub nms_translation: f64,
    pub nms_rotation_deg: f64,
    pub cameras: ProposalCameras,
    pub proposer: AntipodalProposer,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            weight: DEFAULT_WEIGHT,
            floodfill: FloodFillParams::default(),
            object_views: ObjectViewParams::default(),
            topdown_size: 128,
            nms_translation: DEFAULT_NMS_TRANSLATION,
            nms_rotation_deg: DEFAULT_NMS_ROTATION_DEG,
            cameras: ProposalCameras::default(),
            proposer: AntipodalProposer::default(),
        }
    }
}

/// Everything a run produces. `candidates` carry `s_sem` but no combined
/// score, so they can be re-ranked under another weight.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub foreground: ForegroundMask,
    pub localization: Localization,
    pub object_cloud: PointCloud,
    pub mask: ObjectMask,
    pub part: PartDistribution,
    pub relevancy_cloud: PointCloud,
    pub raw_proposals: usize,
    pub candidates: Vec<GraspCandidate>,
    pub ranked: Vec<GraspCandidate>,
}

impl PipelineOutput {
    pub fn top(&self) -> Option<&GraspCandidate> {
        self.ranked.first()
    }

    /// Masked object-cloud points.
    pub fn mask_cloud(&self) -> PointCloud {
        self.object_cloud.select(&self.mask.indices)
    }
}

pub struct GraspPipeline {
    pub params: PipelineParams,
}

impl GraspPipeline {
    pub fn new(params: PipelineParams) -> Self {
        GraspPipeline { params }
    }

    /// Runs every stage. Grasps are proposed on `scene` when given, otherwise
    /// on the object-centric cloud. Without `part` the object phrase is used
    /// for the semantic score as well.
    pub fn run(
        &self,
        field: &FeatureField,
        text: &TextEmbeddings,
        object: &str,
        part: Option<&str>,
        scene: Option<&PointCloud>,
    ) -> Result<PipelineOutput, Error> {
        self.run_with(field, text, object, part, scene, &self.params.proposer)
    }

    pub fn run_with(
        &self,
        field: &FeatureField,
        text: &TextEmbeddings,
        object: &str,
        part: Option<&str>,
        scene: Option<&PointCloud>,
        proposer: &dyn GraspProposer,
    ) -> Result<PipelineOutput, Error> {
        let p = &self.params;
        if !(0.0..=1.0).contains(&p.weight) {
            return Err(GraspError::WeightOutOfRange(p.weight).into());
        }
        let q_obj = text.default_query(object)?;
        let q_part = match part {
            Some(ph) => text.default_query(ph)?,
            None => q_obj.clone(),
        };
        let image = field.topdown_group_image(p.topdown_size, p.topdown_size);
        let foreground = foreground_mask(&image)?;
        let localization = localize_object(field, &q_obj, &foreground)?;
        log::info!("object {:?} seeded at {:?} (relevancy {:.4})", object, localization.seed, localization.hit.score);
        let object_cloud = object_cloud(field, &localization.seed, &p.object_views)?;
        let seed_feat = field.group_at(localization.voxel).ok_or(Error::NoGraspFound)?;
        let seed = snap_seed(&object_cloud, &localization.seed, seed_feat, &p.floodfill, &foreground.projection)?;
        let mask = floodfill(&object_cloud, &seed, &p.floodfill, &foreground.projection)?;
        log::info!("object mask: {} of {} points", mask.len(), object_cloud.len());
        let dist = conditional_part_relevancy(field, &object_cloud, &mask, &q_part)?;
        let relevancy_cloud = dist.relevancy_cloud(&object_cloud);

        let mask_box =
            Aabb::around(mask.indices.iter().map(|&i| &object_cloud.points[i])).ok_or(Error::NoGraspFound)?;
        let center = Point3::from(
            mask.indices.iter().map(|&i| object_cloud.points[i].coords).sum::<nalgebra::Vector3<f64>>()
                / mask.len() as f64,
        );
        let source = scene.unwrap_or(&object_cloud);
        let cropped = crop_workspace(source, &mask_box.expanded(p.proposer.gripper.max_width));
        if cropped.is_empty() {
            return Err(Error::NoGraspFound);
        }
        let c = &p.cameras;
        let cams = virtual_cameras(
            &center,
            c.radius,
            c.n_azimuth,
            c.n_inclination,
            Intrinsics::square_fov(c.image_size, c.fov_deg),
        );
        let raw = match propose_grasps(&cropped, &cams, proposer) {
            Err(GraspError::ProposerFailure { source: ProposerError::NoValidPairs, .. }) => {
                return Err(Error::NoGraspFound)
            }
            r => r?,
        };
        let raw_proposals = raw.len();
        let mut candidates = nms(&raw, p.nms_translation, p.nms_rotation_deg.to_radians());
        SemanticScorer::new(&relevancy_cloud, p.proposer.gripper).score_all(&mut candidates);
        let ranked = rank(&candidates, p.weight)?;
        log::info!("{raw_proposals} proposals, {} after NMS", candidates.len());
        if ranked.is_empty() {
            return Err(Error::NoGraspFound);
        }
        Ok(PipelineOutput {
            foreground,
            localization,
            object_cloud,
            mask,
            part: dist,
            relevancy_cloud,
            raw_proposals,
            candidates,
            ranked,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspSummary {
    /// Row-major 4x4 world pose.
    pub pose: Vec<f64>,
    pub center: [f64; 3],
    pub width: f64,
    pub s_geom: f64,
    pub s_sem: Option<f64>,
    pub s: Option<f64>,
    pub pre_grasp: Vec<f64>,
    pub post_grasp: Vec<f64>,
}

impl GraspSummary {
    pub fn new(g: &GraspCandidate) -> Self {
        let (chain, _) = pose_chain(&g.pose);
        let c = g.center();
        GraspSummary {
            pose: pose_to_row_major(&g.pose).to_vec(),
            center: [c.x, c.y, c.z],
            width: g.width,
            s_geom: g.s_geom,
            s_sem: g.s_sem,
            s: g.s,
            pre_grasp: pose_to_row_major(&chain.pre_grasp).to_vec(),
            post_grasp: pose_to_row_major(&chain.post_grasp).to_vec(),
        }
    }
}

/// Run summary. Contains no timings, so equal inputs give equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub object: String,
    pub part: Option<String>,
    pub weight: f64,
    pub seed: u64,
    pub seed_point: [f64; 3],
    pub seed_voxel: usize,
    pub seed_relevancy: f64,
    pub foreground_pixels: usize,
    pub object_cloud_size: usize,
    pub mask_size: usize,
    pub max_part_relevancy: f64,
    pub raw_proposals: usize,
    pub grasps_after_nms: usize,
    pub top_grasp: GraspSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct_object: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct_part: Option<bool>,
}

impl PipelineReport {
    pub fn new(out: &PipelineOutput, object: &str, part: Option<&str>, weight: f64, seed: u64) -> Self {
        let s = out.localization.seed;
        PipelineReport {
            object: object.to_string(),
            part: part.map(str::to_string),
            weight,
            seed,
            seed_point: [s.x, s.y, s.z],
            seed_voxel: out.localization.voxel,
            seed_relevancy: out.localization.hit.score,
            foreground_pixels: out.foreground.count(),
            object_cloud_size: out.object_cloud.len(),
            mask_size: out.mask.len(),
            max_part_relevancy: out.part.max_score().unwrap_or(0.0),
            raw_proposals: out.raw_proposals,
            grasps_after_nms: out.candidates.len(),
            top_grasp: GraspSummary::new(out.top().expect("ranked grasps are non-empty")),
            correct_object: None,
            correct_part: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
