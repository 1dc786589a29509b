//! CLI errors and their process exit codes.

use taskgrasp_core::{
    ConditionalError, Error, ExtractionError, FieldError, GeometryError, GraspError, PlannerError, SceneError,
    SynthError,
};

pub mod exit {
    pub const NO_GRASP: u8 = 2;
    pub const FIELD_LOAD: u8 = 3;
    pub const FIELD_QUERY: u8 = 4;
    pub const SCENE: u8 = 5;
    pub const EXTRACTION: u8 = 6;
    pub const CONDITIONAL: u8 = 7;
    pub const GRASP: u8 = 8;
    pub const PLANNER: u8 = 9;
    pub const SYNTH: u8 = 10;
    pub const CONFIG: u8 = 11;
    pub const USAGE: u8 = 64;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

via_core!(
    FieldError,
    SceneError,
    ExtractionError,
    ConditionalError,
    GraspError,
    PlannerError,
    SynthError,
    GeometryError
);

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => core_code(e),
            CliError::Config(_) | CliError::Io { .. } => exit::CONFIG,
        }
    }
}

fn field_code(e: &FieldError) -> u8 {
    use FieldError::*;
    match e {
        OutOfBounds { .. }
        | ScaleOutOfRange { .. }
        | DegenerateInterpolation
        | DimensionMismatch { .. }
        | NoNegatives
        | UnknownPhrase(_) => exit::FIELD_QUERY,
        MalformedHeader(_)
        | TruncatedPayload { .. }
        | NonUnitEmbedding { .. }
        | EmptyField
        | InvalidLayout(_)
        | Sidecar(_)
        | Io(_) => exit::FIELD_LOAD,
    }
}

fn core_code(e: &Error) -> u8 {
    match e {
        Error::NoGraspFound => exit::NO_GRASP,
        Error::Field(f) => field_code(f),
        Error::Scene(_) | Error::Geometry(_) => exit::SCENE,
        Error::Extraction(ExtractionError::Field(f)) => field_code(f),
        Error::Extraction(_) => exit::EXTRACTION,
        Error::Conditional(ConditionalError::Field(f)) => field_code(f),
        Error::Conditional(_) => exit::CONDITIONAL,
        Error::Grasp(_) => exit::GRASP,
        Error::Planner(_) => exit::PLANNER,
        Error::Synth(_) => exit::SYNTH,
    }
}
