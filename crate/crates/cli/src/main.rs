//! `voxsplat` command-line front end.
//!
//! Exit status: 0 on success, 1 for usage errors and bad inputs, 2 for
//! internal failures (panics, failing self-test).

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "voxsplat", version, about = "Sparse voxel Gaussian splat scenes: build, render, simulate and evaluate")]
pub struct Cli {
    /// Worker thread cap (default: all cores).
    #[arg(long, global = true, env = "VOXSPLAT_THREADS")]
    pub threads: Option<usize>,

    /// Seed for every random choice made by a command.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// JSON configuration file; unset fields keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Voxelize a PLY point cloud into a `.svg2` grid.
    Voxelize(VoxelizeArgs),
    /// Unproject per-pixel features along depth bins into a voxel grid.
    Condition(ConditionArgs),
    /// Attach per-voxel Gaussians to a grid and decode them.
    Decode(DecodeArgs),
    /// Rasterize a decoded scene.
    Render(RenderArgs),
    /// Build or sample a sky panorama.
    #[command(subcommand)]
    Sky(SkyCommand),
    /// Simulate a LiDAR scan against a scene.
    Lidar(LidarArgs),
    /// Turn sensor frames into chunked training grids.
    Pipeline(PipelineArgs),
    /// Compare an image with its reference.
    Metrics(MetricsArgs),
    /// Check the optimized code paths against brute-force references.
    Selftest,
}

#[derive(Debug, Args)]
pub struct VoxelizeArgs {
    /// Input point cloud (PLY with x, y, z and optional label).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub voxel_size: Option<f64>,
    /// Grid origin as `x,y,z`.
    #[arg(long, value_parser = parse_vec3)]
    pub origin: Option<[f64; 3]>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the 4x coarser parent grid here.
    #[arg(long)]
    pub coarse_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConditionArgs {
    /// Tensor file of shape [N, H, W, C + D] or [H, W, C + D]: C feature
    /// channels followed by D depth logits.
    #[arg(long)]
    pub features: PathBuf,
    /// JSON camera or list of cameras, one per feature map.
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub z_near: Option<f64>,
    #[arg(long)]
    pub z_far: Option<f64>,
    #[arg(long)]
    pub voxel_size: Option<f64>,
    /// The last D channels already hold probabilities, not logits.
    #[arg(long)]
    pub depth_probs: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Init {
    /// Every record decodes to a unit Gaussian at its voxel centroid with
    /// opacity 0.5 and zero color.
    Zero,
    /// Seeded random raw parameters.
    Random,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub grid: PathBuf,
    /// Gaussians per voxel.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_enum, default_value_t = Init::Zero)]
    pub init: Init,
    /// Center offset radius in meters (default: 3 voxel sizes).
    #[arg(long)]
    pub radius: Option<f64>,
    /// Output scene grid with the raw parameters attached.
    #[arg(long)]
    pub out: PathBuf,
    /// Also export the decoded Gaussians as a splat PLY.
    #[arg(long)]
    pub ply: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    /// Sky panorama used as background.
    #[arg(long, conflicts_with = "background")]
    pub sky: Option<PathBuf>,
    /// Constant background as `r,g,b`.
    #[arg(long, value_parser = parse_vec3)]
    pub background: Option<[f64; 3]>,
    #[arg(long)]
    pub radius: Option<f64>,
    /// Color output (.png, .pfm or .rtns).
    #[arg(long)]
    pub out: PathBuf,
    /// Accumulated opacity output.
    #[arg(long)]
    pub alpha_out: Option<PathBuf>,
    /// Expected depth output; pixels with too little opacity are 0.
    #[arg(long)]
    pub depth_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SkyCommand {
    /// Build a panorama from masked views.
    Build(SkyBuildArgs),
    /// Render a panorama into a camera.
    Sample(SkySampleArgs),
}

#[derive(Debug, Args)]
pub struct SkyBuildArgs {
    /// JSON list of `{"image", "mask", "camera"}`; paths are relative to
    /// this file. Mask values above 0.5 mark sky.
    #[arg(long)]
    pub views: PathBuf,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SkySampleArgs {
    #[arg(long)]
    pub pano: PathBuf,
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub fill: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LidarArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// JSON world-from-sensor transform.
    #[arg(long)]
    pub pose: PathBuf,
    /// JSON scan pattern (default: the configured spinning pattern).
    #[arg(long)]
    pub pattern: Option<PathBuf>,
    #[arg(long)]
    pub hit_threshold: Option<f64>,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// JSON-lines manifest, one scene per line.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Non-sky mask (1 where the scene should be opaque).
    #[arg(long, requires = "alpha")]
    pub mask: Option<PathBuf>,
    /// Accumulated opacity of the prediction.
    #[arg(long, requires = "mask")]
    pub alpha: Option<PathBuf>,
    #[arg(long, requires = "gt_grid")]
    pub pred_grid: Option<PathBuf>,
    #[arg(long, requires = "pred_grid")]
    pub gt_grid: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got {s:?}"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse::<f64>().map_err(|e| format!("{p:?}: {e}"))?;
        if !o.is_finite() {
            return Err(format!("{p:?} is not finite"));
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match std::panic::catch_unwind(|| commands::run(cli)) {
        Ok(Ok(code)) => code,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(_) => ExitCode::from(2),
    }
}
