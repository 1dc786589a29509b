//! Task-oriented grasp selection from language feature fields.

// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod conditional;
pub mod extraction;
pub mod field;
pub mod geometry;
pub mod grasp;
pub mod pipeline;
pub mod planner;
pub mod scene_io;
pub mod spatial;
pub mod synth;

pub use conditional::{ConditionalError, PartDistribution};
pub use extraction::{ExtractionError, FloodFillParams, ObjectMask, ObjectViewParams};
pub use field::{Embedding, FeatureField, FieldError, TextEmbeddings, TextQuery};
pub use geometry::{Aabb, CameraModel, GeometryError, Intrinsics, Pose};
pub use grasp::{GraspCandidate, GraspError, GripperParams};
pub use pipeline::{GraspPipeline, PipelineOutput, PipelineParams, PipelineReport};
pub use planner::{Action, LLMClientConfig, LLMPlan, PlannerError};
pub use scene_io::{PointCloud, SceneError};
pub use synth::{GroundTruth, SynthError, SyntheticSceneSpec};

/// Any failure of the library, by stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Conditional(#[from] ConditionalError),
    #[error(transparent)]
    Grasp(#[from] GraspError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("no grasp survived proposal and filtering")]
    NoGraspFound,
}
