//! Subcommand implementations. Each writes its human-facing output to `out`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;
use taskgrasp_core::bench::{run_benchmark, BenchParams};
use taskgrasp_core::field::{load_field, render_relevancy_topdown, save_field, TextEmbeddings, DEFAULT_NEGATIVES};
use taskgrasp_core::grasp::{grasps_to_json, load_grasps, ExternalProposer};
use taskgrasp_core::planner::majority_vote;
use taskgrasp_core::scene_io::{
    capture_trajectory, load_ply, save_ply, trajectory_json, write_ply, PointCloud, TrajectoryParams,
};
use taskgrasp_core::synth::{build_scene, mug_spec, random_scene, RandomSceneParams};
use taskgrasp_core::{
    GraspError, GraspPipeline, LLMClientConfig, LLMPlan, PipelineOutput, PipelineParams, PipelineReport,
    SyntheticSceneSpec,
};

use crate::args::{BenchArgs, GraspArgs, PlanArgs, QueryArgs, SynthArgs, TrajectoryArgs};
use crate::config::{PipelineConfig, ANTIPODAL};
use crate::error::CliError;
use crate::{heatmap, llm};

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::io("<stdout>", e))
}

fn ply_bytes(pc: &PointCloud) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_ply(pc, &mut buf)?;
    Ok(buf)
}

/// Object and part to query, planned from `--task` when no object is given.
fn resolve_phrases(cfg: &PipelineConfig) -> Result<(String, Option<String>, Option<LLMPlan>), CliError> {
    if let Some(object) = &cfg.object {
        return Ok((object.clone(), cfg.part.clone(), None));
    }
    let task = PipelineConfig::require(&cfg.task, "object (or --task)")?;
    let objects = PipelineConfig::require(&cfg.objects, "objects (needed with --task)")?;
    let client = llm::client(cfg.llm_responses.as_deref(), LLMClientConfig::default())?;
    let votes = cfg.votes.unwrap_or(taskgrasp_core::planner::DEFAULT_VOTES);
    let plan = majority_vote(task, objects, client.as_ref(), votes)?;
    log::info!("planned {} {} / {}", plan.action, plan.object, plan.part);
    Ok((plan.object.clone(), Some(plan.part.clone()), Some(plan)))
}

fn pipeline_params(cfg: &PipelineConfig) -> Result<PipelineParams, CliError> {
    let mut p = PipelineParams::default();
    if let Some(w) = cfg.weight {
        if !(0.0..=1.0).contains(&w) {
            return Err(GraspError::WeightOutOfRange(w).into());
        }
        p.weight = w;
    }
    if let Some(t) = cfg.tau {
        p.floodfill.tau = t;
    }
    if let Some(t) = cfg.nms_translation {
        p.nms_translation = t;
    }
    if let Some(r) = cfg.nms_rotation_deg {
        p.nms_rotation_deg = r;
    }
    p.proposer.seed = cfg.seed.unwrap_or(0);
    Ok(p)
}

/// Scores the top grasp against a synthetic spec.
fn judge(report: &mut PipelineReport, spec: &SyntheticSceneSpec) {
    let [x, y, z] = report.top_grasp.center;
    let c = nalgebra::Point3::new(x, y, z);
    let obj = spec.object_index(&report.object).map(|i| &spec.objects[i]);
    report.correct_object = Some(obj.is_some_and(|o| o.contains(&c)));
    report.correct_part = report
        .part
        .as_deref()
        .map(|part| obj.and_then(|o| o.part_index(part).map(|k| o.part_contains(k, &c))).unwrap_or(false));
}

pub struct GraspRun {
    pub output: PipelineOutput,
    pub report: PipelineReport,
    pub plan: Option<LLMPlan>,
    pub out_dir: PathBuf,
}

pub fn grasp(args: GraspArgs, out: &mut dyn Write) -> Result<GraspRun, CliError> {
    let cfg = match &args.config {
        Some(path) => PipelineConfig::load(path)?.overlay(args.pipeline),
        None => args.pipeline,
    };
    let params = pipeline_params(&cfg)?;
    let out_dir = PipelineConfig::require(&cfg.out_dir, "out-dir")?.clone();
    let field_path = PipelineConfig::require(&cfg.field, "field")?;
    let text_path = PipelineConfig::require(&cfg.text, "text")?;
    let external = match cfg.proposer.as_deref() {
        None | Some(ANTIPODAL) => None,
        Some(path) => Some(ExternalProposer::new(load_grasps(path)?)),
    };
    let truth = cfg.ground_truth.as_ref().map(SyntheticSceneSpec::load).transpose()?;
    let (object, part, plan) = resolve_phrases(&cfg)?;

    let field = load_field(field_path)?;
    let text = TextEmbeddings::load(text_path)?;
    let scene = cfg.scene.as_ref().map(load_ply).transpose()?;
    let weight = params.weight;
    let seed = params.proposer.seed;
    let pipeline = GraspPipeline::new(params);
    let output = match &external {
        Some(ext) => pipeline.run_with(&field, &text, &object, part.as_deref(), scene.as_ref(), ext)?,
        None => pipeline.run(&field, &text, &object, part.as_deref(), scene.as_ref())?,
    };
    let mut report = PipelineReport::new(&output, &object, part.as_deref(), weight, seed);
    if let Some(spec) = &truth {
        judge(&mut report, spec);
    }

    // Serialize everything before touching the output directory.
    let files = [
        ("grasps.json", grasps_to_json(&output.ranked, Some(weight)).into_bytes()),
        ("mask.ply", ply_bytes(&output.mask_cloud())?),
        ("relevancy.ply", ply_bytes(&output.relevancy_cloud)?),
        ("report.json", report.to_json().into_bytes()),
    ];
    create_dir(&out_dir)?;
    for (name, bytes) in &files {
        write_file(&out_dir.join(name), bytes)?;
    }
    let top = &report.top_grasp;
    emit(
        out,
        &format!(
            "{} grasps on {object}{}; top s={:.4} at ({:.4}, {:.4}, {:.4}); wrote {}",
            output.ranked.len(),
            part.as_deref().map(|p| format!(" / {p}")).unwrap_or_default(),
            top.s.unwrap_or(f64::NAN),
            top.center[0],
            top.center[1],
            top.center[2],
            out_dir.display()
        ),
    )?;
    Ok(GraspRun { output, report, plan, out_dir })
}

pub fn query(args: QueryArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let field = load_field(&args.field)?;
    let text = TextEmbeddings::load(&args.text)?;
    let q = match &args.negatives {
        Some(n) => text.query(&args.phrase, n)?,
        None => text.query(&args.phrase, &DEFAULT_NEGATIVES)?,
    };
    let img = render_relevancy_topdown(&field, &q, args.size, args.size)?;
    if let Some(path) = &args.png {
        let mut buf = Vec::new();
        heatmap::write_png(&img, &mut buf).map_err(|e| CliError::Config(format!("png: {e}")))?;
        write_file(path, &buf)?;
    }
    let a = img.argmax;
    let summary = json!({
        "phrase": args.phrase,
        "argmax": [a.x, a.y, a.z],
        "voxel": img.argmax_voxel,
        "score": img.argmax_hit.score,
        "scale": img.argmax_hit.scale,
        "covered_pixels": img.values.iter().flatten().count(),
    });
    emit(out, &serde_json::to_string_pretty(&summary).expect("json"))
}

pub fn synth(args: SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (spec, query) = if let Some(path) = &args.spec {
        (SyntheticSceneSpec::load(path)?, None)
    } else if args.mug {
        (mug_spec(), None)
    } else {
        let (s, q) = random_scene(args.seed, &RandomSceneParams::default())?;
        (s, Some(q))
    };
    let (field, cloud, truth) = build_scene(&spec, args.seed)?;
    create_dir(&args.out_dir)?;
    let d = &args.out_dir;
    save_field(&field, d.join("field.lfld"))?;
    truth.labels.save(d.join("text.json"))?;
    save_ply(&cloud, d.join("scene.ply"))?;
    write_file(&d.join("spec.json"), spec.to_json().as_bytes())?;
    if let Some(q) = &query {
        write_file(&d.join("query.json"), serde_json::to_string_pretty(q).expect("json").as_bytes())?;
    }
    let summary = json!({
        "out_dir": d,
        "objects": spec.objects.iter().map(|o| &o.name).collect::<Vec<_>>(),
        "occupied_voxels": field.occupied_count(),
        "cloud_points": cloud.len(),
        "query": query,
    });
    emit(out, &serde_json::to_string_pretty(&summary).expect("json"))
}

pub fn plan(args: PlanArgs, out: &mut dyn Write) -> Result<LLMPlan, CliError> {
    let config = LLMClientConfig { model: args.model, temperature: args.temperature, ..Default::default() };
    let client = llm::client(args.llm_responses.as_deref(), config)?;
    let plan = majority_vote(&args.task, &args.objects, client.as_ref(), args.votes)?;
    emit(out, &serde_json::to_string_pretty(&plan).expect("json"))?;
    Ok(plan)
}

pub fn trajectory(args: TrajectoryArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params = TrajectoryParams {
        center: args.center,
        radius: args.radius,
        azimuth_deg: args.azimuth.into(),
        inclination_deg: args.inclination.into(),
        n: args.n,
        ..Default::default()
    };
    let cams = capture_trajectory(&params)?;
    let text = serde_json::to_string_pretty(&trajectory_json(&cams)).expect("json");
    match &args.out {
        Some(path) => write_file(path, text.as_bytes()),
        None => emit(out, &text),
    }
}

pub fn bench(args: BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let params =
        BenchParams { n_scenes: args.scenes, base_seed: args.base_seed, weights: args.weights, ..Default::default() };
    for &w in &params.weights {
        if !(0.0..=1.0).contains(&w) {
            return Err(GraspError::WeightOutOfRange(w).into());
        }
    }
    let report = run_benchmark(&params);
    for r in &report.rates {
        emit(
            out,
            &format!("w={:<5} correct_object={:.3} correct_part={:.3}", r.weight, r.correct_object, r.correct_part),
        )?;
    }
    let failed = report.scenes.iter().filter(|s| s.error.is_some()).count();
    emit(out, &format!("{} scenes, {failed} failed, {:.1} s", report.scenes.len(), report.elapsed_s))?;
    if let Some(path) = &args.out {
        write_file(path, serde_json::to_string_pretty(&report).expect("json").as_bytes())?;
    }
    Ok(())
}
