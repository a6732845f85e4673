//! Fixtures shared by the CLI integration tests: small input files for every
//! subcommand and helpers to run the binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use voxsplat::raster_tensor::{DType, RasterTensor};
use voxsplat::{Camera, LabeledPointCloud, Mat3, Raster, RigidTransform, Vec3};

pub const WIDTH: usize = 48;
pub const HEIGHT: usize = 32;

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_voxsplat"));
    cmd.env_remove("VOXSPLAT_THREADS");
    cmd
}

pub fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

/// Runs and insists on exit status 0.
pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "voxsplat {args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Camera at `position` looking along world `+x`, with world `+z` up.
pub fn forward_camera(position: Vec3, width: usize, height: usize) -> Camera {
    let rot = Mat3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    Camera::from_fov(1.0, width, height, RigidTransform::new(rot, position).unwrap()).unwrap()
}

fn write_json(path: &Path, value: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

fn write_png(path: &Path, r: &Raster) {
    let bytes: Vec<u8> = r.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let color = if r.channels() == 1 { image::ColorType::L8 } else { image::ColorType::Rgb8 };
    image::save_buffer(path, &bytes, r.width() as u32, r.height() as u32, color).unwrap();
}

/// Labeled box of points 8-9 m ahead of the origin.
pub fn block_cloud(rng: &mut ChaCha8Rng, n: usize) -> LabeledPointCloud {
    let positions: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(rng.gen_range(8.0..9.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)))
        .collect();
    let labels = positions
        .iter()
        .map(|p| if rng.gen_bool(0.3) { Some(u32::from(p.y > 0.0)) } else { None })
        .collect();
    LabeledPointCloud::from_labeled(positions, labels, 2).unwrap()
}

/// Writes every input used by the command chain into `dir`.
pub fn write_fixture(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cloud = block_cloud(&mut rng, 4000);
    std::fs::write(dir.join("points.ply"), cloud.to_ply(Vec::new()).unwrap()).unwrap();

    let cam = forward_camera(Vec3::zeros(), WIDTH, HEIGHT);
    write_json(&dir.join("cam.json"), &cam);
    write_json(&dir.join("cams.json"), &vec![cam.clone(), forward_camera(Vec3::new(0.0, 0.5, 0.0), WIDTH, HEIGHT)]);
    write_json(&dir.join("pose.json"), &RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.2)));
    write_json(
        &dir.join("pattern.json"),
        &json!({"elevation_count": 16, "azimuth_count": 90, "elevation_min_deg": -10.0, "elevation_max_deg": 10.0, "max_range": 40.0}),
    );

    // sky: two views, upper half marked as sky
    let mut views = Vec::new();
    for (n, yaw) in [0.0f64, 1.2].into_iter().enumerate() {
        let image = Raster::from_vec(
            WIDTH,
            HEIGHT,
            3,
            (0..WIDTH * HEIGHT * 3).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let mask = Raster::from_vec(
            WIDTH,
            HEIGHT,
            1,
            (0..WIDTH * HEIGHT).map(|i| if i / WIDTH < HEIGHT / 2 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        write_png(&dir.join(format!("view{n}.png")), &image);
        write_png(&dir.join(format!("mask{n}.png")), &mask);
        let pose = RigidTransform::from_yaw(yaw, Vec3::new(3.0 * n as f64, 0.0, 1.5)).compose(cam.world_from_camera());
        views.push(json!({"image": format!("view{n}.png"), "mask": format!("mask{n}.png"), "camera": cam.with_pose(pose)}));
    }
    write_json(&dir.join("views.json"), &views);

    // two feature maps: 4 channels + 8 depth logits
    let (c, d) = (4usize, 8usize);
    let data: Vec<f64> = (0..2 * WIDTH * HEIGHT * (c + d)).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let t = RasterTensor::new(DType::F32, vec![2, HEIGHT, WIDTH, c + d], data).unwrap();
    std::fs::write(dir.join("feats.rtns"), t.to_bytes()).unwrap();

    // pipeline: two frames of one scene, a moving object removed in frame 0
    // and re-inserted at the target frame
    let frame0 = block_cloud(&mut rng, 3000);
    let frame1 = block_cloud(&mut rng, 3000);
    std::fs::write(dir.join("frame0.ply"), frame0.to_ply(Vec::new()).unwrap()).unwrap();
    std::fs::write(dir.join("frame1.ply"), frame1.to_ply(Vec::new()).unwrap()).unwrap();
    let scene = json!({
        "name": "scene_a",
        "frames": [
            {"frame_id": 0, "points": "frame0.ply", "world_from_sensor": RigidTransform::identity()},
            {"frame_id": 1, "points": "frame1.ply", "world_from_sensor": RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0))},
        ],
        "boxes": [{"center": [8.5, 0.0, 0.0], "half_extent": [0.3, 0.3, 0.3], "yaw": 0.4, "frame_id": 0, "object_id": 7, "class_label": 1}],
        "target_boxes": [{"center": [12.0, 2.0, 0.0], "half_extent": [2.0, 1.0, 0.8], "yaw": 0.3, "frame_id": 1, "object_id": 7, "class_label": 1}],
        "samples_per_box": 300,
    });
    let mut manifest = serde_json::to_string(&scene).unwrap();
    manifest.push('\n');
    let mut second = scene.clone();
    second["name"] = json!("scene_b");
    second["world_from_ego"] = serde_json::to_value(RigidTransform::from_yaw(0.5, Vec3::new(2.0, 0.0, 0.0))).unwrap();
    manifest.push_str(&serde_json::to_string(&second).unwrap());
    manifest.push('\n');
    std::fs::write(dir.join("scenes.jsonl"), manifest).unwrap();
}

/// Every output file of the chain, in a fixed order.
pub const CHAIN_OUTPUTS: &[&str] = &[
    "grid.svg2",
    "coarse.svg2",
    "scene.svg2",
    "scene.ply",
    "img.png",
    "img.rtns",
    "alpha.pfm",
    "depth.pfm",
    "scan.ply",
    "sky.pfm",
    "sky.pfm.json",
    "sky.pfm.coverage.pfm",
    "bg.png",
    "sky_img.png",
    "cond.svg2",
    "metrics.json",
    "gt/summary.json",
    "gt/scene_a/fine.svg2",
    "gt/scene_a/coarse.svg2",
    "gt/scene_a/chunk.ply",
    "gt/scene_b/fine.svg2",
    "gt/scene_b/coarse.svg2",
    "gt/scene_b/chunk.ply",
];

/// Runs every data-producing subcommand in `dir` (which must hold the
/// fixture) with the given seed and thread cap.
pub fn run_chain(dir: &Path, seed: u64, threads: usize) {
    let s = seed.to_string();
    let t = threads.to_string();
    let g = |args: &[&str]| {
        let mut all: Vec<&str> = vec!["--seed", &s, "--threads", &t];
        all.extend_from_slice(args);
        ok(dir, &all);
    };
    g(&["voxelize", "--in", "points.ply", "--voxel-size", "0.1", "--out", "grid.svg2", "--coarse-out", "coarse.svg2"]);
    g(&["decode", "--grid", "grid.svg2", "--m", "2", "--init", "random", "--out", "scene.svg2", "--ply", "scene.ply"]);
    g(&["render", "--scene", "scene.svg2", "--camera", "cam.json", "--background", "0.2,0.4,0.6", "--out", "img.png", "--alpha-out", "alpha.pfm", "--depth-out", "depth.pfm"]);
    g(&["render", "--scene", "scene.svg2", "--camera", "cam.json", "--out", "img.rtns"]);
    g(&["lidar", "--scene", "scene.svg2", "--pose", "pose.json", "--pattern", "pattern.json", "--out", "scan.ply"]);
    g(&["sky", "build", "--views", "views.json", "--height", "64", "--width", "128", "--out", "sky.pfm"]);
    g(&["sky", "sample", "--pano", "sky.pfm", "--camera", "cam.json", "--out", "bg.png"]);
    g(&["render", "--scene", "scene.svg2", "--camera", "cam.json", "--sky", "sky.pfm", "--out", "sky_img.png"]);
    g(&["condition", "--features", "feats.rtns", "--cameras", "cams.json", "--bins", "8", "--z-near", "0.5", "--z-far", "20", "--out", "cond.svg2"]);
    g(&["metrics", "--pred", "img.png", "--gt", "sky_img.png", "--mask", "alpha.pfm", "--alpha", "alpha.pfm", "--pred-grid", "grid.svg2", "--gt-grid", "grid.svg2", "--out", "metrics.json"]);
    g(&["pipeline", "--manifest", "scenes.jsonl", "--out-dir", "gt"]);
}

pub fn read_outputs(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    CHAIN_OUTPUTS
        .iter()
        .map(|name| {
            let p = dir.join(name);
            let bytes = std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (PathBuf::from(name), bytes)
        })
        .collect()
}
