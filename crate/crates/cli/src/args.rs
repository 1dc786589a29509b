//! Command-line surface.

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};

use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "taskgrasp", version, about = "Task-oriented grasp selection from language feature fields")]
pub struct Cli {
    /// Log filter, e.g. `info` or `taskgrasp_core=debug`. Overrides RUST_LOG.
    #[arg(long, global = true)]
    pub log: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

// Parsed once per process; boxing the large variant buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract the object, score the part and write ranked grasps.
    Grasp(GraspArgs),
    /// Render a top-down relevancy heatmap for one phrase.
    Query(QueryArgs),
    /// Write a synthetic scene: field, text sidecar, cloud and spec.
    Synth(SynthArgs),
    /// Ask the LLM planner for action, object and part.
    Plan(PlanArgs),
    /// Print a spherical capture trajectory as camera-to-world matrices.
    Trajectory(TrajectoryArgs),
    /// Run the synthetic top-1 benchmark.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GraspArgs {
    /// TOML file with any of the flags below as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub text: PathBuf,
    #[arg(long)]
    pub phrase: String,
    /// Negative phrases; defaults to object, things, stuff, texture.
    #[arg(long, value_delimiter = ',')]
    pub negatives: Option<Vec<String>>,
    /// Heatmap side in pixels.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// PNG output path.
    #[arg(long)]
    pub png: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["spec", "mug", "random"])))]
pub struct SynthArgs {
    /// Scene spec JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// The built-in mug-on-a-table scene.
    #[arg(long)]
    pub mug: bool,
    /// A random benchmark scene drawn from `--seed`.
    #[arg(long)]
    pub random: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub task: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub objects: Vec<String>,
    /// Canned responses separated by `---` lines, instead of HTTP.
    #[arg(long)]
    pub llm_responses: Option<PathBuf>,
    #[arg(long, default_value_t = taskgrasp_core::planner::DEFAULT_VOTES)]
    pub votes: usize,
    #[arg(long, default_value = "gpt-4")]
    pub model: String,
    #[arg(long, default_value_t = taskgrasp_core::planner::DEFAULT_TEMPERATURE)]
    pub temperature: f64,
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    /// `x,y,z` in meters.
    #[arg(long, value_parser = floats::<3>, default_value = "0,0,0", allow_hyphen_values = true)]
    pub center: [f64; 3],
    #[arg(long, default_value_t = 0.45)]
    pub radius: f64,
    /// Azimuth range in degrees, `lo,hi`.
    #[arg(long, value_parser = floats::<2>, default_value = "-100,100", allow_hyphen_values = true)]
    pub azimuth: [f64; 2],
    /// Inclination range from +z in degrees, `lo,hi`.
    #[arg(long, value_parser = floats::<2>, default_value = "30,75")]
    pub inclination: [f64; 2],
    #[arg(long, default_value_t = 60)]
    pub n: usize,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exactly `N` comma-separated numbers.
fn floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let v: Vec<f64> =
        s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"))).collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 50)]
    pub scenes: usize,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 0.95, 1.0])]
    pub weights: Vec<f64>,
    /// Full per-scene report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn kebab_case_pipeline_flags() {
        let cli = Cli::try_parse_from([
            "taskgrasp",
            "grasp",
            "--field",
            "f.lfld",
            "--nms-rotation-deg",
            "20",
            "--objects",
            "mug,bowl",
            "--out-dir",
            "o",
        ])
        .unwrap();
        let Command::Grasp(g) = cli.command else { panic!() };
        assert_eq!(g.pipeline.nms_rotation_deg, Some(20.0));
        assert_eq!(g.pipeline.objects, Some(vec!["mug".into(), "bowl".into()]));
    }

    #[test]
    fn synth_needs_exactly_one_source() {
        assert!(Cli::try_parse_from(["taskgrasp", "synth", "--out-dir", "o"]).is_err());
        assert!(Cli::try_parse_from(["taskgrasp", "synth", "--mug", "--random", "--out-dir", "o"]).is_err());
        assert!(Cli::try_parse_from(["taskgrasp", "synth", "--mug", "--out-dir", "o"]).is_ok());
    }

    #[test]
    fn negative_azimuth_range_parses() {
        let cli = Cli::try_parse_from(["taskgrasp", "trajectory", "--azimuth", "-90,45"]).unwrap();
        let Command::Trajectory(t) = cli.command else { panic!() };
        assert_eq!(t.azimuth, [-90.0, 45.0]);
        assert_eq!(t.inclination, [30.0, 75.0]);
        assert!(Cli::try_parse_from(["taskgrasp", "trajectory", "--center", "1,2"]).is_err());
    }
}
