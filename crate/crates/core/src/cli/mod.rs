//! The `microsplat` command line.
//!
//! Every subcommand writes its results under `--out` and logs to stderr.
//! Hyperparameters resolve as defaults, then `--config`, then flags.

mod commands;
mod manifest;

pub use manifest::{version_string, RunManifest};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::scene::SceneKind;
use crate::train::TrainConfig;
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "microsplat", version = manifest::VERSION, about = "CPU Gaussian splatting trainer")]
pub struct Cli {
    /// JSON file with flat config keys.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads for rendering (falls back to MICROSPLAT_THREADS).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene with cameras and ground-truth images.
    GenScene(SynthArgs),
    /// Run the full three-phase pipeline.
    Train(TrainArgs),
    /// Render a scene from one or all cameras to PNG.
    Render(RenderArgs),
    /// Remove points below an opacity threshold.
    Prune(PruneArgs),
    /// Run encoder refinement alone on any scene.
    GsdoPost(GsdoPostArgs),
    /// PSNR and SSIM between two images or two directories of images.
    Metrics(MetricsArgs),
    /// Compare analytic gradients against finite differences.
    CheckGrad(CheckGradArgs),
    /// Run the component ablation.
    Ablate(TrainArgs),
}

/// Synthetic scene parameters; the scene seed is `--seed`.
#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "textured-sphere")]
    pub kind: SceneKind,
    /// Number of reference Gaussians.
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset directory (see `gen-scene`). Without it a synthetic scene is
    /// generated in memory.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    /// Starting point cloud; defaults to the dataset's init.ply.
    #[arg(long, value_name = "PLY")]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub synth: SynthArgs,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    #[arg(long, value_name = "PLY")]
    pub scene: PathBuf,
    #[arg(long, value_name = "JSON")]
    pub cameras: PathBuf,
    /// Render only this camera index, to `--output` if given.
    #[arg(long)]
    pub view: Option<usize>,
    #[arg(short, long, value_name = "PNG")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PruneArgs {
    #[arg(value_name = "INPUT")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    #[arg(short, long, value_name = "PLY")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GsdoPostArgs {
    #[arg(value_name = "INPUT")]
    pub input: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    #[arg(value_name = "A")]
    pub a: PathBuf,
    #[arg(value_name = "B")]
    pub b: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CheckGradArgs {
    /// Loss to check (render, opacity_reg, cet, smt, final) or `all`.
    #[arg(long, default_value = "all")]
    pub loss: String,
    /// Number of random problems.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 16)]
    pub points: usize,
    /// Image side length.
    #[arg(long, default_value_t = 16)]
    pub size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
}

/// One optional flag per config key; set flags win over the config file.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Overrides {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_position: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_scale: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_rotation: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_opacity: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_color: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_encoder: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase1_iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase2_iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase3_iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub densify: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_elbo_stop: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_opacity_reg: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_pruning: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_gsdo: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub post_prune_threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_interval: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_xi: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ema_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda3: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_interval: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub percent_dense: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub densify_interval: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_points: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knn_k: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighborhoods: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighborhood_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_c: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph_refresh: Option<usize>,
}

/// Defaults, then the config file, then the flags.
pub fn resolve_config(
    file: Option<&std::path::Path>,
    seed: Option<u64>,
    overrides: &Overrides,
) -> Result<TrainConfig> {
    let mut map = match serde_json::to_value(TrainConfig::default())? {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("config serializes to an object"),
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str::<serde_json::Value>(&text)? {
            serde_json::Value::Object(file_map) => map.extend(file_map),
            _ => {
                return Err(Error::Config(format!(
                    "{}: config must be a JSON object",
                    path.display()
                )))
            }
        }
    }
    if let serde_json::Value::Object(flag_map) = serde_json::to_value(overrides)? {
        map.extend(flag_map);
    }
    if let Some(seed) = seed {
        map.insert("seed".into(), seed.into());
    }
    TrainConfig::from_value(serde_json::Value::Object(map))
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("MICROSPLAT_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            v.trim().parse().map(Some).map_err(|_| {
                Error::Config(format!("MICROSPLAT_THREADS='{v}' is not a thread count"))
            })
        }
        _ => Ok(None),
    }
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match execute(cli, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn execute(cli: Cli, argv: &[OsString]) -> Result<()> {
    let threads = thread_count(cli.threads)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let args: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    pool.install(|| commands::dispatch(&cli, &args, pool.current_num_threads()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_config_key_has_a_flag() {
        let mut cmd = Cli::command();
        cmd.build();
        let train = cmd.find_subcommand("train").unwrap();
        let ids: Vec<String> = train
            .get_arguments()
            .map(|a| a.get_id().to_string())
            .collect();
        for key in TrainConfig::keys() {
            assert!(ids.contains(&key), "no flag for config key '{key}'");
        }
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"tau": 0.02, "prune_interval": 200, "seed": 4}"#).unwrap();
        let o = Overrides {
            prune_interval: Some(400),
            ..Default::default()
        };
        let c = resolve_config(Some(&path), None, &o).unwrap();
        assert_eq!(c.adp.tau, 0.02);
        assert_eq!(c.adp.prune_interval, 400);
        assert_eq!(c.seed, 4);
        assert_eq!(c.adp.window, 500);
        let c = resolve_config(Some(&path), Some(9), &o).unwrap();
        assert_eq!(c.seed, 9);
        std::fs::write(&path, r#"{"bogus": 1}"#).unwrap();
        assert!(resolve_config(Some(&path), None, &o).is_err());
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["microsplat", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["microsplat", "train", "--no-such-flag"]), EXIT_USAGE);
        assert_eq!(run(["microsplat", "--help"]), EXIT_OK);
    }
}
