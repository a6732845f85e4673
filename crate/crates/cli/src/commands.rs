use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};
use voxsplat::conditioning::{unproject_features, DepthBins, PixelFeatureMap};
use voxsplat::gaussian::{export_ply, OFFSET_COLOR, OFFSET_MEAN, OFFSET_OPACITY, OFFSET_ROTATION, OFFSET_SCALE};
use voxsplat::lidar::{simulate_scan, ScanPatternConfig};
use voxsplat::metrics::{self, LossWeights, SSIM_WINDOW};
use voxsplat::pipeline::{self, ChunkSpec, DynamicBox, Frame};
use voxsplat::raster_tensor::RasterTensor;
use voxsplat::renderer::{rasterize, render_depth};
use voxsplat::sky::{build_panorama, sample_background, IdentityDecoder, SkyDecoder, SkyView};
use voxsplat::sparse_grid::{voxelize, DEFAULT_SUBDIVISION, RAW_GAUSSIAN_CHANNEL};
use voxsplat::{selftest, Camera, GridMeta, LabeledPointCloud, Raster, RawGaussianParams, RigidTransform, Vec3, VoxSplatScene};

use crate::config::Config;
use crate::io::{read_bytes, read_grid, read_json, read_json_list, read_mask, read_panorama, read_raster, write_bytes, write_grid, write_panorama, write_raster};
use crate::{Cli, Command, ConditionArgs, DecodeArgs, Init, LidarArgs, MetricsArgs, PipelineArgs, RenderArgs, SkyBuildArgs, SkyCommand, SkySampleArgs, VoxelizeArgs};

pub fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        ensure!(n >= 1, "--threads must be at least 1");
        // a pool already exists only when run twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Voxelize(a) => voxelize_cmd(&cfg, a),
        Command::Condition(a) => condition_cmd(&cfg, a),
        Command::Decode(a) => decode_cmd(&cfg, a, cli.seed),
        Command::Render(a) => render_cmd(&cfg, a),
        Command::Sky(SkyCommand::Build(a)) => sky_build_cmd(&cfg, a),
        Command::Sky(SkyCommand::Sample(a)) => sky_sample_cmd(&cfg, a),
        Command::Lidar(a) => lidar_cmd(&cfg, a),
        Command::Pipeline(a) => pipeline_cmd(&cfg, a, cli.seed),
        Command::Metrics(a) => metrics_cmd(&cfg, a),
        Command::Selftest => return Ok(selftest_cmd(cli.seed)),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn voxelize_cmd(cfg: &Config, a: VoxelizeArgs) -> Result<()> {
    let cloud = LabeledPointCloud::from_ply(&read_bytes(&a.input)?)
        .with_context(|| format!("decoding point cloud {}", a.input.display()))?;
    let meta = GridMeta::new(
        Vec3::from(a.origin.unwrap_or(cfg.grid.origin)),
        a.voxel_size.unwrap_or(cfg.grid.voxel_size),
    )?;
    let grid = voxelize(&cloud, &meta)?;
    write_grid(&a.out, &grid)?;
    println!("{} points -> {} voxels at {} m", cloud.len(), grid.len(), meta.voxel_size);
    if let Some(path) = &a.coarse_out {
        let coarse = grid.coarsen(DEFAULT_SUBDIVISION)?;
        write_grid(path, &coarse)?;
        println!("coarse grid: {} voxels at {} m", coarse.len(), coarse.voxel_size());
    }
    Ok(())
}

fn condition_cmd(cfg: &Config, a: ConditionArgs) -> Result<()> {
    let c = &cfg.condition;
    let bins = DepthBins::linear_increasing(
        a.z_near.unwrap_or(c.z_near),
        a.z_far.unwrap_or(c.z_far),
        a.bins.unwrap_or(c.bins),
    )?;
    let mut meta = c.meta()?;
    if let Some(s) = a.voxel_size {
        meta = GridMeta { voxel_size: s, ..meta };
        GridMeta::new(meta.origin, s)?;
    }
    let tensor = RasterTensor::from_bytes(&read_bytes(&a.features)?)
        .with_context(|| format!("decoding {}", a.features.display()))?;
    let (n, h, w, width) = match *tensor.shape() {
        [h, w, k] => (1, h, w, k),
        [n, h, w, k] => (n, h, w, k),
        ref s => bail!("feature tensor must be [H, W, C + D] or [N, H, W, C + D], got {s:?}"),
    };
    let d = bins.count();
    ensure!(width > d, "feature tensor has {width} channels per pixel, needs more than the {d} depth bins");
    let channels = width - d;
    let cameras: Vec<Camera> = read_json_list(&a.cameras)?;
    ensure!(cameras.len() == n, "{} feature maps but {} cameras", n, cameras.len());

    let data = tensor.data();
    let maps = (0..n)
        .map(|i| {
            let img = &data[i * h * w * width..(i + 1) * h * w * width];
            let mut features = Vec::with_capacity(h * w * channels);
            let mut depth = Vec::with_capacity(h * w * d);
            for px in img.chunks_exact(width) {
                features.extend_from_slice(&px[..channels]);
                depth.extend_from_slice(&px[channels..]);
            }
            let map = if a.depth_probs {
                PixelFeatureMap::new(w, h, channels, d, features, depth)
            } else {
                PixelFeatureMap::from_logits(w, h, channels, d, features, &depth)
            };
            map.with_context(|| format!("feature map {i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let (grid, stats) = unproject_features(&maps, &cameras, &bins, &meta, c.dense_cap)?;
    let out = grid.to_sparse_grid()?;
    write_grid(&a.out, &out)?;
    println!(
        "{} samples, {} outside the grid; {} voxels with {channels} channels",
        stats.samples,
        stats.dropped,
        out.len()
    );
    Ok(())
}

/// Seeded raw parameters: offsets within the voxel neighborhood, moderate
/// opacities, scales around half a voxel and arbitrary rotations and colors.
fn random_raw(voxels: usize, m: usize, voxel_size: f64, seed: u64) -> Result<RawGaussianParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = RawGaussianParams::zeros(voxels, m)?;
    let log_half = (0.5 * voxel_size).ln();
    for n in 0..raw.gaussian_count() {
        let rec = raw.record_mut(n);
        for a in 0..3 {
            rec[OFFSET_MEAN + a] = rng.gen_range(-1.0..1.0);
            rec[OFFSET_SCALE + a] = log_half + rng.gen_range(-0.5..0.5);
            rec[OFFSET_COLOR + a] = rng.gen_range(0.0..1.0);
        }
        rec[OFFSET_OPACITY] = rng.gen_range(-2.0..2.0);
        loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            if q.iter().map(|v| v * v).sum::<f64>() > 1e-2 {
                rec[OFFSET_ROTATION..OFFSET_ROTATION + 4].copy_from_slice(&q);
                break;
            }
        }
    }
    Ok(raw)
}

fn decode_cmd(cfg: &Config, a: DecodeArgs, seed: u64) -> Result<()> {
    let grid = read_grid(&a.grid)?.without_channel(RAW_GAUSSIAN_CHANNEL);
    let m = a.m.unwrap_or(cfg.decode.per_voxel);
    ensure!(m >= 1, "--m must be at least 1");
    let radius = a.radius.unwrap_or(cfg.decode.radius_factor * grid.voxel_size());
    let raw = match a.init {
        Init::Zero => RawGaussianParams::neutral(grid.len(), m)?,
        Init::Random => random_raw(grid.len(), m, grid.voxel_size(), seed)?,
    };
    let scene = VoxSplatScene::decode(grid, raw, radius)?;
    write_grid(&a.out, &scene.to_grid()?)?;
    if let Some(path) = &a.ply {
        write_bytes(path, &export_ply(scene.gaussians())?)?;
    }
    println!("{} voxels x {m} -> {} Gaussians, radius {radius} m", scene.grid().len(), scene.len());
    Ok(())
}

fn load_scene(cfg: &Config, path: &Path, radius: Option<f64>) -> Result<VoxSplatScene> {
    let grid = read_grid(path)?;
    let radius = radius.unwrap_or(cfg.decode.radius_factor * grid.voxel_size());
    VoxSplatScene::from_grid(grid, radius).with_context(|| format!("decoding scene {}", path.display()))
}

fn sky_background(path: &Path, cam: &Camera, fill: f64) -> Result<Raster> {
    let pano = read_panorama(path)?;
    let sample = sample_background(&pano, cam, fill);
    if sample.warning() {
        eprintln!(
            "warning: {} pixels see uncovered sky, filled with {fill}",
            sample.uncovered_pixels
        );
    }
    IdentityDecoder.decode(&sample.image).context("sky panorama cannot be shown as RGB")
}

fn render_cmd(cfg: &Config, a: RenderArgs) -> Result<()> {
    let scene = load_scene(cfg, &a.scene, a.radius)?;
    let cam: Camera = read_json(&a.camera)?;
    let background = match &a.sky {
        Some(path) => sky_background(path, &cam, cfg.sky.fill)?,
        None => Raster::constant(cam.width, cam.height, &a.background.unwrap_or(cfg.render.background)),
    };
    let out = rasterize(&scene, &cam, &background)?;
    write_raster(&a.out, &out.color)?;
    if let Some(path) = &a.alpha_out {
        write_raster(path, &out.alpha)?;
    }
    if let Some(path) = &a.depth_out {
        write_raster(path, &render_depth(&scene, &cam).depth)?;
    }
    println!("rendered {} Gaussians at {}x{}", scene.len(), cam.width, cam.height);
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewEntry {
    image: PathBuf,
    mask: PathBuf,
    camera: Camera,
}

fn relative_to(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new("")).join(p)
    }
}

fn sky_build_cmd(cfg: &Config, a: SkyBuildArgs) -> Result<()> {
    let entries: Vec<ViewEntry> = read_json(&a.views)?;
    let loaded = entries
        .iter()
        .map(|e| {
            Ok((
                read_raster(&relative_to(&a.views, &e.image))?,
                read_mask(&relative_to(&a.views, &e.mask))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<SkyView<'_>> = entries
        .iter()
        .zip(&loaded)
        .map(|(e, (image, mask))| SkyView {
            image,
            mask,
            camera: &e.camera,
        })
        .collect();
    let pano = build_panorama(
        &views,
        a.width.unwrap_or(cfg.sky.width),
        a.height.unwrap_or(cfg.sky.height),
    )?;
    write_panorama(&a.out, &pano)?;
    println!(
        "panorama {}x{}x{}, {:.1}% covered",
        pano.width(),
        pano.height(),
        pano.channels(),
        100.0 * pano.covered_fraction()
    );
    Ok(())
}

fn sky_sample_cmd(cfg: &Config, a: SkySampleArgs) -> Result<()> {
    let pano = read_panorama(&a.pano)?;
    let cam: Camera = read_json(&a.camera)?;
    let fill = a.fill.unwrap_or(cfg.sky.fill);
    let sample = sample_background(&pano, &cam, fill);
    if sample.warning() {
        eprintln!(
            "warning: {} pixels see uncovered sky, filled with {fill}",
            sample.uncovered_pixels
        );
    }
    write_raster(&a.out, &sample.image)
}

fn lidar_cmd(cfg: &Config, a: LidarArgs) -> Result<()> {
    let scene = load_scene(cfg, &a.scene, a.radius)?;
    let pose: RigidTransform = read_json(&a.pose)?;
    let pattern = match &a.pattern {
        Some(path) => read_json::<ScanPatternConfig>(path)?,
        None => cfg.lidar.pattern.clone(),
    }
    .build()?;
    let lambda = a.hit_threshold.unwrap_or(cfg.lidar.hit_threshold);
    ensure!(lambda > 0.0 && lambda.is_finite(), "--hit-threshold must be positive");
    let scan = simulate_scan(&scene, &pose, &pattern, lambda)?;
    write_bytes(&a.out, &scan.to_ply()?)?;
    println!("{} returns from {} rays", scan.ranges.len(), pattern.directions().len());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameEntry {
    frame_id: u32,
    points: PathBuf,
    world_from_sensor: RigidTransform,
}

/// One manifest line.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneEntry {
    name: String,
    frames: Vec<FrameEntry>,
    /// Boxes of moving objects in the frames, used to remove them.
    #[serde(default)]
    boxes: Vec<DynamicBox>,
    /// Boxes at the target frame, re-inserted as surface samples.
    #[serde(default)]
    target_boxes: Vec<DynamicBox>,
    world_from_ego: Option<RigidTransform>,
    samples_per_box: Option<usize>,
}

fn process_scene(cfg: &Config, manifest: &Path, out_dir: &Path, entry: &SceneEntry, seed: u64) -> Result<Value> {
    let frames = entry
        .frames
        .iter()
        .map(|f| {
            let path = relative_to(manifest, &f.points);
            let cloud = LabeledPointCloud::from_ply(&read_bytes(&path)?)
                .with_context(|| format!("decoding {}", path.display()))?;
            Ok(Frame {
                frame_id: f.frame_id,
                cloud,
                world_from_sensor: f.world_from_sensor,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let accumulated = pipeline::accumulate(&frames, &entry.boxes)?;
    let labeled = if accumulated.labels.iter().any(Option::is_some) {
        pipeline::propagate_semantics(&accumulated)?
    } else {
        accumulated
    };
    let samples = entry.samples_per_box.unwrap_or(cfg.pipeline.samples_per_box);
    let full = pipeline::insert_dynamic(&labeled, &entry.target_boxes, samples, seed)?;
    let spec = ChunkSpec {
        world_from_ego: entry.world_from_ego.unwrap_or(cfg.pipeline.chunk.world_from_ego),
        ..cfg.pipeline.chunk.clone()
    };
    let (chunk, fine_meta) = pipeline::crop_chunk(&full, &spec)?;
    let coarse_meta = GridMeta::new(fine_meta.origin, cfg.pipeline.coarse_voxel_size)?;
    let pair = pipeline::make_training_pair(&chunk, &fine_meta, &coarse_meta)?;
    ensure!(pair.containment_violations().is_empty(), "hierarchy containment failed");

    let dir = out_dir.join(&entry.name);
    write_grid(&dir.join("fine.svg2"), &pair.fine)?;
    write_grid(&dir.join("coarse.svg2"), &pair.coarse)?;
    write_bytes(&dir.join("chunk.ply"), &chunk.to_ply(Vec::new())?)?;
    Ok(json!({
        "name": entry.name,
        "accumulated_points": labeled.len(),
        "inserted_points": full.len() - labeled.len(),
        "chunk_points": chunk.len(),
        "fine_voxels": pair.fine.len(),
        "coarse_voxels": pair.coarse.len(),
    }))
}

fn pipeline_cmd(cfg: &Config, a: PipelineArgs, seed: u64) -> Result<()> {
    let text = std::fs::read_to_string(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: SceneEntry = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", a.manifest.display(), n + 1))?;
        let safe = !e.name.is_empty()
            && e.name != "."
            && e.name != ".."
            && !e.name.contains(['/', '\\']);
        ensure!(safe, "line {}: scene name {:?} is not a plain directory name", n + 1, e.name);
        ensure!(
            entries.iter().all(|p: &SceneEntry| p.name != e.name),
            "line {}: duplicate scene name {:?}",
            n + 1,
            e.name
        );
        entries.push(e);
    }
    let summaries = entries
        .par_iter()
        .map(|e| process_scene(cfg, &a.manifest, &a.out_dir, e, seed).with_context(|| format!("scene {:?}", e.name)))
        .collect::<Result<Vec<_>>>()?;
    let report = serde_json::to_string_pretty(&summaries)?;
    write_bytes(&a.out_dir.join("summary.json"), report.as_bytes())?;
    println!("{report}");
    Ok(())
}

fn finite_or_label(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(if v > 0.0 { "inf" } else { "-inf" })
    }
}

fn metrics_report(weights: &LossWeights, a: &MetricsArgs) -> Result<Value> {
    let pred = read_raster(&a.pred)?;
    let gt = read_raster(&a.gt)?;
    ensure!(pred.same_shape(&gt), "--pred and --gt differ in size or channels");
    let mae = metrics::mean_abs_error(&pred, &gt)?;
    let mse = metrics::mean_squared_error(&pred, &gt)?;
    let ssim = (gt.width() >= SSIM_WINDOW && gt.height() >= SSIM_WINDOW)
        .then(|| metrics::ssim(&pred, &gt))
        .transpose()?;
    let alpha_l1 = match (&a.alpha, &a.mask) {
        (Some(alpha), Some(mask)) => Some(metrics::mean_abs_error(&read_mask(alpha)?, &read_mask(mask)?)?),
        _ => None,
    };
    let total = weights.color_l1 * mae
        + alpha_l1.map_or(0.0, |l| weights.alpha_l1 * l)
        + ssim.map_or(0.0, |s| weights.ssim * (1.0 - s));
    let mut report = json!({
        "color_l1": mae,
        "mse": mse,
        "psnr": finite_or_label(metrics::psnr_from_mse(mse)),
        "ssim": ssim,
        "alpha_l1": alpha_l1,
        "lpips": Value::Null,
        "weighted_total": total,
        "weights": weights,
    });
    if let (Some(p), Some(g)) = (&a.pred_grid, &a.gt_grid) {
        report["voxel_chamfer"] = json!(metrics::voxel_chamfer(&read_grid(p)?, &read_grid(g)?)?);
    }
    Ok(report)
}

fn metrics_cmd(cfg: &Config, a: MetricsArgs) -> Result<()> {
    let text = serde_json::to_string_pretty(&metrics_report(&cfg.loss, &a)?)?;
    match &a.out {
        Some(path) => write_bytes(path, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn selftest_cmd(seed: u64) -> ExitCode {
    let start = Instant::now();
    let results = selftest::run(seed);
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    println!("{:<width$}  {:<6}  {:>8}  detail", "check", "result", "seconds");
    for r in &results {
        println!(
            "{:<width$}  {:<6}  {:>8.3}  {}",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.seconds,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "{} of {} checks passed in {:.2} s (seed {seed})",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
