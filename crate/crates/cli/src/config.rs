//! Grasp-run configuration: flags, an optional TOML file, or both.
//!
//! TOML keys are the flag names (`nms-translation = 0.01`). Relative paths in
//! a file resolve against the file's directory. Flags win over the file.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PipelineConfig {
    /// LFLD feature field.
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Text-embedding sidecar (JSON phrase -> vector).
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Object phrase.
    #[arg(long)]
    pub object: Option<String>,
    /// Part phrase; defaults to the object phrase.
    #[arg(long)]
    pub part: Option<String>,
    /// Semantic weight w in s = w*s_sem + (1-w)*s_geom.
    #[arg(long)]
    pub weight: Option<f64>,
    /// Flood-fill threshold on projected grouping features.
    #[arg(long)]
    pub tau: Option<f64>,
    /// NMS translation radius in meters.
    #[arg(long)]
    pub nms_translation: Option<f64>,
    /// NMS rotation radius in degrees.
    #[arg(long)]
    pub nms_rotation_deg: Option<f64>,
    /// `antipodal`, or a grasp JSON file produced by an external proposer.
    #[arg(long)]
    pub proposer: Option<String>,
    /// Scene point cloud (PLY) to propose grasps on.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Directory for grasps.json, mask.ply, relevancy.ply and report.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Synthetic scene spec; adds correct_object/correct_part to the report.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Natural-language task; the planner picks object and part.
    #[arg(long)]
    pub task: Option<String>,
    /// Objects in the scene, offered to the planner.
    #[arg(long, value_delimiter = ',')]
    pub objects: Option<Vec<String>>,
    /// Canned LLM responses separated by `---` lines, instead of HTTP.
    #[arg(long)]
    pub llm_responses: Option<PathBuf>,
    /// LLM samples to vote over (odd).
    #[arg(long)]
    pub votes: Option<usize>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut().filter(|q| q.is_relative()) {
                *q = dir.join(&*q);
            }
        };
        for p in [
            &mut self.field,
            &mut self.text,
            &mut self.scene,
            &mut self.out_dir,
            &mut self.ground_truth,
            &mut self.llm_responses,
        ] {
            fix(p);
        }
        if let Some(p) =
            self.proposer.as_mut().filter(|p| p.as_str() != ANTIPODAL && Path::new(p.as_str()).is_relative())
        {
            *p = dir.join(&*p).display().to_string();
        }
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: PipelineConfig) -> PipelineConfig {
        PipelineConfig {
            field: over.field.or(self.field),
            text: over.text.or(self.text),
            object: over.object.or(self.object),
            part: over.part.or(self.part),
            weight: over.weight.or(self.weight),
            tau: over.tau.or(self.tau),
            nms_translation: over.nms_translation.or(self.nms_translation),
            nms_rotation_deg: over.nms_rotation_deg.or(self.nms_rotation_deg),
            proposer: over.proposer.or(self.proposer),
            scene: over.scene.or(self.scene),
            out_dir: over.out_dir.or(self.out_dir),
            seed: over.seed.or(self.seed),
            ground_truth: over.ground_truth.or(self.ground_truth),
            task: over.task.or(self.task),
            objects: over.objects.or(self.objects),
            llm_responses: over.llm_responses.or(self.llm_responses),
            votes: over.votes.or(self.votes),
        }
    }

    pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| CliError::Config(format!("missing --{flag}")))
    }
}

pub const ANTIPODAL: &str = "antipodal";
