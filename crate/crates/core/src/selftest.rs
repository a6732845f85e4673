//! Randomized comparisons of the optimized paths against [`crate::oracle`],
//! plus the scenario generators and the finite-difference gradient checker
//! they share with the test suites.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conditioning::{unproject_features, DepthBins, PixelFeatureMap, DEFAULT_DENSE_CAP};
use crate::gaussian::{decode_gaussian, RAW_WIDTH};
use crate::lidar::{LidarTracer, DEFAULT_HIT_THRESHOLD};
use crate::metrics::{ssim, voxel_chamfer};
use crate::pipeline::{accumulate, propagate_semantics, DynamicBox, Frame};
use crate::renderer::{rasterize_gaussians, rasterize_gaussians_backward};
use crate::sky::{dir_to_pixel, pixel_to_dir};
use crate::sparse_grid::{format, voxelize, Extent, GridMeta, VoxelCoord};
use crate::{oracle, Camera, Gaussian, LabeledPointCloud, Raster, Result, RigidTransform, SparseVoxelGrid, Vec3};

/// Outcome of one self-test check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_quaternion(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 {
            return q.map(|v| v / n);
        }
    }
}

/// Small camera at the origin looking down `+z`.
pub fn small_camera(width: usize, height: usize) -> Camera {
    let f = 1.2 * width.max(height) as f64;
    Camera::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height, RigidTransform::identity())
        .expect("valid intrinsics")
}

/// Random Gaussian in front of `small_camera`, with camera depth in
/// `depth` and a footprint of a few pixels.
pub fn random_gaussian(rng: &mut impl Rng, depth: (f64, f64), max_opacity: f64) -> Gaussian {
    let z = rng.gen_range(depth.0..depth.1);
    let mean = Vec3::new(rng.gen_range(-0.35..0.35) * z, rng.gen_range(-0.35..0.35) * z, z);
    let scale = Vec3::new(
        rng.gen_range(0.02..0.12) * z,
        rng.gen_range(0.02..0.12) * z,
        rng.gen_range(0.02..0.12) * z,
    );
    let color = [rng.gen(), rng.gen(), rng.gen()];
    Gaussian::new(mean, rng.gen_range(0.05..max_opacity), scale, random_quaternion(rng), color)
        .expect("random quaternion is normalized")
}

/// Random renderer scenario: up to `max_gaussians` Gaussians, a camera of
/// up to `max_side` pixels per side and a random background.
pub fn random_render_scene(rng: &mut impl Rng, max_gaussians: usize, max_side: usize) -> (Vec<Gaussian>, Camera, Raster) {
    let (w, h) = (rng.gen_range(1..=max_side), rng.gen_range(1..=max_side));
    let cam = small_camera(w, h);
    let n = rng.gen_range(0..=max_gaussians);
    let gs = (0..n).map(|_| random_gaussian(rng, (0.5, 6.0), 0.99)).collect();
    let bg = Raster::from_vec(w, h, 3, (0..w * h * 3).map(|_| rng.gen()).collect()).expect("shape matches");
    (gs, cam, bg)
}

/// Largest per-channel difference between the tiled render and the oracle.
pub fn render_oracle_gap(gaussians: &[Gaussian], cam: &Camera, bg: &Raster) -> Result<f64> {
    let fast = rasterize_gaussians(gaussians, cam, bg)?;
    let slow = oracle::render(gaussians, cam, bg);
    let gap = |a: &Raster, b: &Raster| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    Ok(gap(&fast.color, &slow.color).max(gap(&fast.alpha, &slow.alpha)))
}

/// Gradient-check scenario: Gaussians at well separated depths so that
/// finite-difference steps never reorder them, with opacities below the
/// weight clamp.
pub fn random_gradient_scene(rng: &mut impl Rng, max_gaussians: usize) -> (Vec<Gaussian>, Camera, Raster) {
    let (w, h) = (rng.gen_range(6..=12), rng.gen_range(6..=12));
    let cam = small_camera(w, h);
    let n = rng.gen_range(1..=max_gaussians);
    let gs = (0..n)
        .map(|i| {
            let base = 1.0 + 1.5 * i as f64;
            random_gaussian(rng, (base, base + 0.5), 0.9)
        })
        .collect();
    let bg = Raster::from_vec(w, h, 3, (0..w * h * 3).map(|_| rng.gen()).collect()).expect("shape matches");
    (gs, cam, bg)
}

/// One analytic partial compared with its central difference.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMismatch {
    pub gaussian: usize,
    pub parameter: String,
    pub analytic: f64,
    pub numeric: f64,
}

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_REL_TOL: f64 = 1e-3;
pub const GRAD_ABS_TOL: f64 = 1e-6;

/// Whether an analytic partial agrees with a numeric one: relative error
/// `1e-3`, or absolute `1e-6` for values below `1e-6`.
pub fn gradient_agrees(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= GRAD_REL_TOL * analytic.abs().max(numeric.abs()) || diff <= GRAD_ABS_TOL
}

/// Checks every partial (mean, opacity, scale, quaternion, color) of the
/// loss `L = Σ g_c·I + Σ g_a·A` for random fixed weights against central
/// differences. Returns the number of partials checked and the mismatches.
pub fn check_gradients(gaussians: &[Gaussian], cam: &Camera, bg: &Raster, rng: &mut impl Rng) -> Result<(usize, Vec<GradientMismatch>)> {
    let (w, h) = (cam.width, cam.height);
    let gc = Raster::from_vec(w, h, 3, (0..w * h * 3).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let ga = Raster::from_vec(w, h, 1, (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let loss = |gs: &[Gaussian]| -> Result<f64> {
        let r = rasterize_gaussians(gs, cam, bg)?;
        let lc: f64 = r.color.data().iter().zip(gc.data()).map(|(a, b)| a * b).sum();
        let la: f64 = r.alpha.data().iter().zip(ga.data()).map(|(a, b)| a * b).sum();
        Ok(lc + la)
    };
    let grads = rasterize_gaussians_backward(gaussians, cam, bg, &gc, Some(&ga))?;

    let mut checked = 0;
    let mut bad = Vec::new();
    for n in 0..gaussians.len() {
        let g = &gaussians[n];
        // (name, analytic, perturbation)
        let mut params: Vec<(String, f64, Box<dyn Fn(f64) -> Gaussian>)> = Vec::new();
        for a in 0..3 {
            let g0 = g.clone();
            params.push((
                format!("mean[{a}]"),
                grads.mean[n][a],
                Box::new(move |d| {
                    let mut m = g0.mean;
                    m[a] += d;
                    Gaussian::new(m, g0.opacity, g0.scale, g0.rotation, g0.color).unwrap()
                }),
            ));
            let g0 = g.clone();
            params.push((
                format!("scale[{a}]"),
                grads.scale[n][a],
                Box::new(move |d| {
                    let mut s = g0.scale;
                    s[a] += d;
                    Gaussian::new(g0.mean, g0.opacity, s, g0.rotation, g0.color).unwrap()
                }),
            ));
            let g0 = g.clone();
            params.push((
                format!("color[{a}]"),
                grads.color[n][a],
                Box::new(move |d| {
                    let mut c = g0.color;
                    c[a] += d;
                    Gaussian::new(g0.mean, g0.opacity, g0.scale, g0.rotation, c).unwrap()
                }),
            ));
        }
        let g0 = g.clone();
        params.push((
            "opacity".into(),
            grads.opacity[n],
            Box::new(move |d| Gaussian::new(g0.mean, g0.opacity + d, g0.scale, g0.rotation, g0.color).unwrap()),
        ));
        for c in 0..4 {
            let g0 = g.clone();
            params.push((
                format!("rotation[{c}]"),
                grads.rotation[n][c],
                Box::new(move |d| {
                    let mut q = g0.rotation;
                    q[c] += d;
                    Gaussian::new(g0.mean, g0.opacity, g0.scale, q, g0.color).unwrap()
                }),
            ));
        }
        for (name, analytic, perturb) in params {
            let mut plus = gaussians.to_vec();
            plus[n] = perturb(FD_STEP);
            let mut minus = gaussians.to_vec();
            minus[n] = perturb(-FD_STEP);
            let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * FD_STEP);
            checked += 1;
            if !gradient_agrees(analytic, numeric) {
                bad.push(GradientMismatch {
                    gaussian: n,
                    parameter: name,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok((checked, bad))
}

/// Random sparse grid with `count` voxels inside a `span³` block.
pub fn random_grid(rng: &mut impl Rng, meta: GridMeta, count: usize, span: i32) -> SparseVoxelGrid {
    SparseVoxelGrid::from_coords(
        meta,
        (0..count).map(|_| {
            VoxelCoord::new(
                rng.gen_range(-span..span),
                rng.gen_range(-span..span),
                rng.gen_range(-span..span),
            )
        }),
    )
}

/// Random labeled cloud where roughly `labeled_share` of the points carry
/// one of `classes` labels.
pub fn random_labeled_cloud(rng: &mut impl Rng, n: usize, extent: f64, labeled_share: f64, classes: u32) -> LabeledPointCloud {
    let positions = (0..n)
        .map(|_| {
            Vec3::new(
                rng.gen_range(-extent..extent),
                rng.gen_range(-extent..extent),
                rng.gen_range(-extent..extent),
            )
        })
        .collect();
    let labels = (0..n)
        .map(|_| rng.gen_bool(labeled_share).then(|| rng.gen_range(0..classes)))
        .collect();
    LabeledPointCloud::from_labeled(positions, labels, classes as usize).expect("labels in range")
}

/// Random conditioning case whose samples all land inside the grid extent.
pub fn random_conditioning_case(rng: &mut impl Rng) -> (Vec<PixelFeatureMap>, Vec<Camera>, DepthBins, GridMeta) {
    let bins = DepthBins::linear_increasing(0.5, 8.0, rng.gen_range(1..=6)).expect("valid range");
    let channels = rng.gen_range(1..=4);
    let images = rng.gen_range(1..=3);
    let mut maps = Vec::new();
    let mut cams = Vec::new();
    for _ in 0..images {
        let (w, h) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
        let yaw = rng.gen_range(-3.0..3.0);
        let pose = RigidTransform::from_axis_angle(Vec3::x(), -std::f64::consts::FRAC_PI_2, Vec3::zeros())
            .expect("unit axis");
        let pose = RigidTransform::from_yaw(yaw, Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0)).compose(&pose);
        cams.push(Camera::from_fov(1.0, w, h, pose).expect("valid camera"));
        let features = (0..w * h * channels).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>();
        let logits = (0..w * h * bins.count()).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<_>>();
        maps.push(PixelFeatureMap::from_logits(w, h, channels, bins.count(), features, &logits).expect("valid map"));
    }
    // centered 128³ grid; narrow images reach about 21 m off axis
    let voxel = rng.gen_range(0.4..1.0);
    let meta = GridMeta::new(Vec3::repeat(-64.0 * voxel), voxel)
        .expect("valid meta")
        .with_extent(Extent::cube(128).expect("valid extent"));
    (maps, cams, bins, meta)
}

/// Runs every check with the given seed.
pub fn run(seed: u64) -> Vec<CheckResult> {
    let checks: Vec<(&'static str, fn(&mut ChaCha8Rng) -> Result<String, String>)> = vec![
        ("rasterizer_vs_oracle", check_rasterizer),
        ("gradients_vs_finite_differences", check_render_gradients),
        ("decode_fixed_point_and_confinement", check_decode),
        ("unprojection_vs_oracle", check_unprojection),
        ("first_hit_vs_oracle", check_first_hit),
        ("voxelize_vs_oracle", check_voxelize),
        ("svg2_round_trip", check_svg2),
        ("propagation_vs_oracle", check_propagation),
        ("box_filter_vs_oracle", check_box_filter),
        ("chamfer_vs_oracle", check_chamfer),
        ("ssim_vs_oracle", check_ssim),
        ("lidar_vs_oracle", check_lidar),
        ("equirect_round_trip", check_equirect),
    ];
    checks
        .into_iter()
        .enumerate()
        .map(|(i, (name, f))| {
            let mut r = rng(seed.wrapping_add(i as u64));
            let start = Instant::now();
            let outcome = f(&mut r);
            let seconds = start.elapsed().as_secs_f64();
            match outcome {
                Ok(detail) => CheckResult {
                    name,
                    passed: true,
                    detail,
                    seconds,
                },
                Err(detail) => CheckResult {
                    name,
                    passed: false,
                    detail,
                    seconds,
                },
            }
        })
        .collect()
}

fn err(e: crate::Error) -> String {
    e.to_string()
}

fn check_rasterizer(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (gs, cam, bg) = random_render_scene(rng, 8, 16);
        worst = worst.max(render_oracle_gap(&gs, &cam, &bg).map_err(err)?);
    }
    if worst <= 1e-6 {
        Ok(format!("50 scenes, max gap {worst:.2e}"))
    } else {
        Err(format!("max gap {worst:.2e} exceeds 1e-6"))
    }
}

fn check_render_gradients(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut total = 0;
    for _ in 0..4 {
        let (gs, cam, bg) = random_gradient_scene(rng, 3);
        let (checked, bad) = check_gradients(&gs, &cam, &bg, rng).map_err(err)?;
        total += checked;
        if let Some(m) = bad.first() {
            return Err(format!(
                "gaussian {} {}: analytic {:.6e} vs numeric {:.6e}",
                m.gaussian, m.parameter, m.analytic, m.numeric
            ));
        }
    }
    Ok(format!("{total} partials"))
}

fn check_decode(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let center = Vec3::new(1.0, -2.0, 3.0);
    let mut zero = [0.0; RAW_WIDTH];
    zero[7] = 1.0;
    let g = decode_gaussian(&zero, &center, 0.3).map_err(err)?;
    if g.mean != center || g.opacity != 0.5 || g.scale != Vec3::repeat(1.0) || g.rotation_matrix() != crate::Mat3::identity() {
        return Err("neutral record does not decode to the fixed point".into());
    }
    let r = 0.3;
    for _ in 0..10_000 {
        let mut raw: [f64; RAW_WIDTH] = std::array::from_fn(|_| rng.gen_range(-50.0..50.0));
        raw[7] += 1.0;
        let Ok(g) = decode_gaussian(&raw, &center, r) else { continue };
        if (g.mean - center).amax() >= r {
            return Err(format!("mean escaped its voxel radius: {:?}", g.mean - center));
        }
    }
    Ok("10000 raws confined".into())
}

fn check_unprojection(rng: &mut ChaCha8Rng) -> Result<String, String> {
    for case in 0..20 {
        let (maps, cams, bins, meta) = random_conditioning_case(rng);
        let (grid, stats) = unproject_features(&maps, &cams, &bins, &meta, DEFAULT_DENSE_CAP).map_err(err)?;
        let reference = oracle::unproject(&maps, &cams, &bins, &meta);
        for (c, v) in &reference {
            let got = grid.get(*c).ok_or(format!("case {case}: voxel {c:?} missing"))?;
            for (a, b) in got.iter().zip(v) {
                if (a - b).abs() > 1e-9 * (1.0 + b.abs()) {
                    return Err(format!("case {case}: voxel {c:?} has {a} expected {b}"));
                }
            }
        }
        if stats.dropped == 0 {
            let total = grid.total();
            let expected: Vec<f64> = (0..grid.channels())
                .map(|ch| maps.iter().map(|m| m.feature_sum()[ch]).sum())
                .collect();
            for (a, b) in total.iter().zip(&expected) {
                if (a - b).abs() > 1e-5 * b.abs().max(1e-12) {
                    return Err(format!("case {case}: mass {a} vs features {b}"));
                }
            }
        }
    }
    Ok("20 cases".into())
}

fn check_first_hit(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let meta = GridMeta::new(Vec3::new(0.13, -0.4, 0.7), 0.5).map_err(err)?;
    let mut rays = 0;
    for _ in 0..20 {
        let grid = random_grid(rng, meta, 40, 6);
        for _ in 0..50 {
            let origin = Vec3::new(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0));
            let dir = random_unit(rng);
            rays += 1;
            let fast = grid.raymarch_first_hit(&origin, &dir);
            let slow = oracle::first_hit(&grid, &origin, &dir);
            match (fast, slow) {
                (None, None) => {}
                (Some((c, t)), Some((ts, cs))) if cs.contains(&c) && (t - ts).abs() <= 1e-9 => {}
                (f, s) => return Err(format!("ray {origin:?} {dir:?}: traversal {f:?} vs oracle {s:?}")),
            }
        }
    }
    Ok(format!("{rays} rays"))
}

fn check_voxelize(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let meta = GridMeta::new(Vec3::new(-0.05, 0.3, 1.0), 0.25).map_err(err)?;
    let cloud = random_labeled_cloud(rng, 10_000, 5.0, 0.0, 1);
    let grid = voxelize(&cloud, &meta).map_err(err)?;
    let reference = oracle::voxelize(&cloud.positions, &meta);
    let keys: Vec<VoxelCoord> = reference.keys().copied().collect();
    if keys == grid.coords() {
        Ok(format!("{} voxels", keys.len()))
    } else {
        Err(format!("{} voxels vs oracle {}", grid.len(), keys.len()))
    }
}

fn check_svg2(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let meta = GridMeta::new(Vec3::new(rng.gen(), rng.gen(), rng.gen()), 0.1).map_err(err)?;
    let cloud = random_labeled_cloud(rng, 2_000, 3.0, 0.7, 5);
    let grid = voxelize(&cloud, &meta).map_err(err)?;
    let bytes = format::serialize(&grid);
    let back = format::deserialize(&bytes).map_err(err)?;
    if back == grid && format::serialize(&back) == bytes {
        Ok(format!("{} voxels, {} bytes", grid.len(), bytes.len()))
    } else {
        Err("round trip changed the grid".into())
    }
}

fn check_propagation(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let cloud = random_labeled_cloud(rng, 1_000, 10.0, 0.1, 8);
    if cloud.labels.iter().all(Option::is_none) {
        return Ok("no labels drawn".into());
    }
    let fast = propagate_semantics(&cloud).map_err(err)?;
    if fast.labels == oracle::propagate_semantics(&cloud) {
        Ok("1000 points".into())
    } else {
        Err("labels differ from exhaustive search".into())
    }
}

fn check_box_filter(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut frames = Vec::new();
    let mut flat = Vec::new();
    for f in 0..3u32 {
        let cloud = random_labeled_cloud(rng, 300, 4.0, 0.0, 1);
        let pose = RigidTransform::from_yaw(rng.gen_range(-3.0..3.0), Vec3::new(rng.gen(), rng.gen(), rng.gen()));
        for p in &cloud.positions {
            flat.push((pose.transform_point(p), f));
        }
        frames.push(Frame {
            frame_id: f,
            cloud,
            world_from_sensor: pose,
        });
    }
    let boxes: Vec<DynamicBox> = (0..6)
        .map(|i| DynamicBox {
            center: [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)],
            half_extent: [rng.gen_range(0.3..2.0), rng.gen_range(0.3..2.0), rng.gen_range(0.3..2.0)],
            yaw: rng.gen_range(-3.0..3.0),
            frame_id: rng.gen_range(0..3),
            object_id: i,
            class_label: None,
        })
        .collect();
    let out = accumulate(&frames, &boxes).map_err(err)?;
    let kept: Vec<Vec3> = oracle::kept_after_box_filter(&flat, &boxes).into_iter().map(|i| flat[i].0).collect();
    if kept.len() == out.len() && kept.iter().zip(&out.positions).all(|(a, b)| (a - b).amax() < 1e-12) {
        Ok(format!("{} of {} kept", kept.len(), flat.len()))
    } else {
        Err(format!("kept {} vs oracle {}", out.len(), kept.len()))
    }
}

fn check_chamfer(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let meta = GridMeta::new(Vec3::zeros(), 0.4).map_err(err)?;
    for _ in 0..10 {
        let (na, nb) = (rng.gen_range(1..200), rng.gen_range(1..200));
        let a = random_grid(rng, meta, na, 10);
        let b = random_grid(rng, meta, nb, 10);
        let fast = voxel_chamfer(&a, &b).map_err(err)?;
        let slow = oracle::chamfer(&a, &b);
        if (fast - slow).abs() > 1e-9 {
            return Err(format!("{fast} vs oracle {slow}"));
        }
    }
    Ok("10 grid pairs".into())
}

fn check_ssim(rng: &mut ChaCha8Rng) -> Result<String, String> {
    for _ in 0..3 {
        let (w, h) = (rng.gen_range(11..20), rng.gen_range(11..20));
        let a = Raster::from_vec(w, h, 3, (0..w * h * 3).map(|_| rng.gen()).collect()).map_err(err)?;
        let b = Raster::from_vec(w, h, 3, (0..w * h * 3).map(|_| rng.gen()).collect()).map_err(err)?;
        let fast = ssim(&a, &b).map_err(err)?;
        let slow = oracle::ssim(&a, &b);
        if (fast - slow).abs() > 1e-9 {
            return Err(format!("{fast} vs oracle {slow}"));
        }
    }
    Ok("3 image pairs".into())
}

fn check_lidar(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let meta = GridMeta::new(Vec3::zeros(), 0.5).map_err(err)?;
    let gs: Vec<Gaussian> = (0..60)
        .map(|_| {
            let mean = Vec3::new(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(-2.0..2.0));
            let scale = Vec3::new(rng.gen_range(0.05..0.6), rng.gen_range(0.05..0.6), rng.gen_range(0.05..0.6));
            Gaussian::new(mean, 1.0, scale, random_quaternion(rng), [0.0; 3]).expect("normalized")
        })
        .collect();
    let tracer = LidarTracer::new(&gs, vec![None; gs.len()], meta, DEFAULT_HIT_THRESHOLD).map_err(err)?;
    for _ in 0..100 {
        let origin = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let dir = random_unit(rng);
        let fast = tracer.trace(&origin, &dir, 90.0).map(|h| (h.range, h.gaussian));
        let slow = oracle::lidar_trace(&gs, &origin, &dir, 90.0, DEFAULT_HIT_THRESHOLD);
        let same = match (fast, slow) {
            (None, None) => true,
            (Some((a, i)), Some((b, j))) => (a - b).abs() <= 1e-9 * (1.0 + b) && (i == j || (a - b).abs() <= 1e-12),
            _ => false,
        };
        if !same {
            return Err(format!("ray {origin:?} {dir:?}: scaffold {fast:?} vs oracle {slow:?}"));
        }
    }
    Ok("100 rays".into())
}

fn check_equirect(rng: &mut ChaCha8Rng) -> Result<String, String> {
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = random_unit(rng);
        let (u, v) = dir_to_pixel(&d, 2048, 1024).map_err(err)?;
        worst = worst.max((pixel_to_dir(u, v, 2048, 1024) - d).amax());
    }
    if worst <= 1e-6 {
        Ok(format!("1000 directions, max error {worst:.1e}"))
    } else {
        Err(format!("round-trip error {worst:.2e}"))
    }
}
