//! Synthetic top-1 benchmark: correct-object and correct-part rates per weight.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grasp::rank;
use crate::pipeline::{GraspPipeline, PipelineParams};
use crate::synth::{build_scene, random_scene, RandomSceneParams, SceneQuery};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchParams {
    pub n_scenes: usize,
    pub base_seed: u64,
    pub weights: Vec<f64>,
    pub scene: RandomSceneParams,
    pub pipeline: PipelineParams,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            n_scenes: 50,
            base_seed: 0,
            weights: vec![0.0, 0.5, 0.95, 1.0],
            scene: RandomSceneParams::default(),
            pipeline: PipelineParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub weight: f64,
    pub correct_object: bool,
    pub correct_part: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub index: usize,
    pub seed: u64,
    pub n_objects: usize,
    pub query: Option<SceneQuery>,
    pub outcomes: Vec<Outcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRate {
    pub weight: f64,
    pub correct_object: f64,
    pub correct_part: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rates: Vec<WeightRate>,
    pub scenes: Vec<SceneResult>,
    pub elapsed_s: f64,
}

impl BenchReport {
    pub fn rate(&self, weight: f64) -> Option<WeightRate> {
        self.rates.iter().copied().find(|r| r.weight == weight)
    }
}

/// Builds scene `index`, runs the pipeline once and ranks its candidates under
/// every weight. A failed run counts as wrong under all weights.
pub fn run_scene(index: usize, params: &BenchParams) -> SceneResult {
    let seed = params.base_seed + index as u64;
    let fail = |n_objects, query, e: String| SceneResult {
        index,
        seed,
        n_objects,
        query,
        outcomes: params
            .weights
            .iter()
            .map(|&weight| Outcome { weight, correct_object: false, correct_part: false })
            .collect(),
        error: Some(e),
    };
    let (spec, query) = match random_scene(seed, &params.scene) {
        Ok(s) => s,
        Err(e) => return fail(0, None, e.to_string()),
    };
    let n_objects = spec.objects.len();
    let (field, cloud, truth) = match build_scene(&spec, seed) {
        Ok(s) => s,
        Err(e) => return fail(n_objects, Some(query), e.to_string()),
    };
    let mut pp = params.pipeline.clone();
    pp.proposer.seed = seed;
    let out = match GraspPipeline::new(pp).run(
        &field,
        &truth.labels,
        &query.object_label,
        Some(&query.part_label),
        Some(&cloud),
    ) {
        Ok(o) => o,
        Err(e) => return fail(n_objects, Some(query), e.to_string()),
    };
    let mut outcomes = Vec::with_capacity(params.weights.len());
    for &weight in &params.weights {
        let ranked = match rank(&out.candidates, weight) {
            Ok(r) => r,
            Err(e) => return fail(n_objects, Some(query), e.to_string()),
        };
        let c = ranked[0].center();
        outcomes.push(Outcome {
            weight,
            correct_object: truth.in_object(query.object, &c),
            correct_part: truth.in_part(query.object, query.part, &c),
        });
    }
    SceneResult { index, seed, n_objects, query: Some(query), outcomes, error: None }
}

pub fn run_benchmark(params: &BenchParams) -> BenchReport {
    let start = Instant::now();
    let scenes: Vec<SceneResult> = (0..params.n_scenes).into_par_iter().map(|i| run_scene(i, params)).collect();
    let n = scenes.len().max(1) as f64;
    let rates = params
        .weights
        .iter()
        .enumerate()
        .map(|(k, &weight)| WeightRate {
            weight,
            correct_object: scenes.iter().filter(|s| s.outcomes[k].correct_object).count() as f64 / n,
            correct_part: scenes.iter().filter(|s| s.outcomes[k].correct_part).count() as f64 / n,
        })
        .collect();
    BenchReport { rates, scenes, elapsed_s: start.elapsed().as_secs_f64() }
}
