//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero when any
//! criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;
use voxsplat::conditioning::{unproject_features, DepthBins, DEFAULT_DENSE_CAP};
use voxsplat::gaussian::{decode_gaussian, NEUTRAL_RECORD, OFFSET_OPACITY, OFFSET_SCALE, RAW_WIDTH};
use voxsplat::lidar::{simulate_scan, LidarTracer, ScanPattern};
use voxsplat::metrics::{cross_entropy, focal_loss, psnr_from_mse, ssim, v_target, voxel_chamfer};
use voxsplat::pipeline::{crop_chunk, propagate_semantics, ChunkSpec};
use voxsplat::renderer::rasterize_gaussians;
use voxsplat::sky::{build_panorama, dir_to_pixel, pixel_to_dir, sample_background, SkyView};
use voxsplat::sparse_grid::{self, GridHierarchy};
use voxsplat::{oracle, selftest, Camera, Gaussian, GridMeta, Mat3, Raster, RawGaussianParams, RigidTransform, SparseVoxelGrid, Vec3, VoxSplatScene, VoxelCoord};

type Outcome = Result<String, String>;

fn e(err: impl std::fmt::Display) -> String {
    err.to_string()
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

fn rasterizer_oracle_equivalence() -> Outcome {
    let mut rng = selftest::rng(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (gs, cam, bg) = selftest::random_render_scene(&mut rng, 8, 16);
        worst = worst.max(selftest::render_oracle_gap(&gs, &cam, &bg).map_err(e)?);
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("200 scenes, max gap {worst:.2e}, {secs:.2} s");
    if worst <= 1e-6 && secs < 10.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_correctness() -> Outcome {
    let mut rng = selftest::rng(2);
    let start = Instant::now();
    let mut partials = 0;
    for scene in 0..50 {
        let (gs, cam, bg) = loop {
            let s = if scene < 25 {
                selftest::random_gradient_scene(&mut rng, 1)
            } else {
                selftest::random_gradient_scene(&mut rng, 4)
            };
            if scene < 25 || s.0.len() >= 2 {
                break s;
            }
        };
        let (checked, bad) = selftest::check_gradients(&gs, &cam, &bg, &mut rng).map_err(e)?;
        partials += checked;
        if let Some(m) = bad.first() {
            return Err(format!(
                "scene {scene}, gaussian {} {}: analytic {:.6e} vs numeric {:.6e}",
                m.gaussian, m.parameter, m.analytic, m.numeric
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("50 scenes, {partials} partials, {secs:.2} s");
    if secs < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn decoding() -> Outcome {
    let center = Vec3::new(0.35, -1.25, 2.05);
    let g = decode_gaussian(&NEUTRAL_RECORD, &center, 0.3).map_err(e)?;
    if g.mean != center || g.opacity != 0.5 || g.scale != Vec3::repeat(1.0) || g.rotation_matrix() != Mat3::identity() || g.color != [0.0; 3] {
        return Err(format!("neutral record decoded to {g:?}"));
    }
    let mut rng = selftest::rng(3);
    let voxel = 0.1;
    let r = 3.0 * voxel;
    let mut violations = 0;
    let mut worst = 0.0f64;
    for i in 0..100_000 {
        let span = if i % 2 == 0 { 3.0 } else { 60.0 };
        let mut raw: [f64; RAW_WIDTH] = std::array::from_fn(|_| rng.gen_range(-span..span));
        raw[7] += 1.0;
        let c = Vec3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-5.0..5.0));
        let g = decode_gaussian(&raw, &c, r).map_err(e)?;
        let d = (g.mean - c).amax();
        worst = worst.max(d);
        if d >= r {
            violations += 1;
        }
    }
    let detail = format!("fixed point exact, 100000 raws, worst offset {worst:.12} < {r}, {violations} violations");
    if violations == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn conservation() -> Outcome {
    let mut rng = selftest::rng(4);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let (maps, cams, bins, meta) = selftest::random_conditioning_case(&mut rng);
        let (grid, stats) = unproject_features(&maps, &cams, &bins, &meta, DEFAULT_DENSE_CAP).map_err(e)?;
        if stats.dropped != 0 {
            return Err(format!("case {case}: {} samples fell outside the grid", stats.dropped));
        }
        let total = grid.total();
        for ch in 0..grid.channels() {
            let expected: f64 = maps.iter().map(|m| m.feature_sum()[ch]).sum();
            let magnitude: f64 = maps
                .iter()
                .map(|m| (0..m.width() * m.height()).map(|p| m.feature(p)[ch].abs()).sum::<f64>())
                .sum();
            let rel = (total[ch] - expected).abs() / magnitude.max(1e-300);
            worst = worst.max(rel);
        }
    }
    if worst > 1e-5 {
        return Err(format!("relative mass error {worst:.2e}"));
    }
    let bins = DepthBins::linear_increasing(0.1, 90.0, 64).map_err(e)?;
    let edges = bins.edges();
    let widths = bins.widths();
    if edges.len() != 65 || edges[0] != 0.1 || edges[64] != 90.0 {
        return Err(format!("edges {} .. {} ({} of them)", edges[0], edges[edges.len() - 1], edges.len()));
    }
    if !widths.windows(2).all(|w| w[1] > w[0]) {
        return Err("bin widths are not strictly increasing".into());
    }
    Ok(format!("100 cases, worst relative error {worst:.2e}; 64 bins from 0.1 to 90 with increasing widths"))
}

fn compositing_endpoints() -> Outcome {
    let cam = selftest::small_camera(15, 11);
    let mut rng = selftest::rng(5);
    let bg = Raster::from_vec(15, 11, 3, (0..15 * 11 * 3).map(|_| rng.gen()).collect()).map_err(e)?;
    let empty = rasterize_gaussians(&[], &cam, &bg).map_err(e)?;
    if empty.color.data().iter().zip(bg.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err("empty scene changed the background".into());
    }
    if empty.alpha.data().iter().any(|a| a.to_bits() != 0f64.to_bits()) {
        return Err("empty scene has nonzero alpha".into());
    }
    let color = [0.9, 0.2, 0.45];
    let g = Gaussian::isotropic(Vec3::new(0.0, 0.0, 4.0), 0.5, 1.0, color);
    let out = rasterize_gaussians(&[g], &cam, &bg).map_err(e)?;
    let px = out.color.pixel(7, 5);
    let gap = (0..3).map(|c| (px[c] - color[c]).abs()).fold(0.0, f64::max);
    if gap <= 1e-6 {
        Ok(format!("empty scene bit-exact; centered opaque splat off by {gap:.1e}"))
    } else {
        Err(format!("centered opaque splat off by {gap:.2e}"))
    }
}

fn sky_invariance() -> Outcome {
    let mut rng = selftest::rng(6);
    let (w, h) = (24, 16);
    let up = Mat3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let cams: Vec<Camera> = (0..3)
        .map(|i| {
            let pose = RigidTransform::from_yaw(2.0 * i as f64, Vec3::zeros())
                .compose(&RigidTransform::new(up, Vec3::zeros()).unwrap());
            Camera::from_fov(1.2, w, h, pose).unwrap()
        })
        .collect();
    let images: Vec<Raster> = (0..3)
        .map(|_| Raster::from_vec(w, h, 3, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap())
        .collect();
    let masks: Vec<Raster> = (0..3)
        .map(|_| Raster::from_vec(w, h, 1, (0..w * h).map(|i| if i / w < h / 2 { 1.0 } else { 0.0 }).collect()).unwrap())
        .collect();
    let build = |cams: &[Camera]| {
        let views: Vec<SkyView> = (0..3)
            .map(|i| SkyView { image: &images[i], mask: &masks[i], camera: &cams[i] })
            .collect();
        build_panorama(&views, 64, 32)
    };
    let base = build(&cams).map_err(e)?;
    let probe = cams[0].clone();
    let base_sample = sample_background(&base, &probe, 0.5);
    let bits = |r: &Raster| r.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    for trial in 0..20 {
        let t = Vec3::new(rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3));
        let moved: Vec<Camera> = cams
            .iter()
            .map(|c| c.with_pose(c.world_from_camera().with_translation(c.world_from_camera().translation() + t)))
            .collect();
        let pano = build(&moved).map_err(e)?;
        if bits(pano.data()) != bits(base.data()) || pano.coverage() != base.coverage() {
            return Err(format!("translation {trial} changed the panorama"));
        }
        let shifted = probe.with_pose(probe.world_from_camera().with_translation(t));
        if bits(&sample_background(&base, &shifted, 0.5).image) != bits(&base_sample.image) {
            return Err(format!("translation {trial} changed the sampled background"));
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let d = random_unit(&mut rng);
        let (u, v) = dir_to_pixel(&d, 2048, 1024).map_err(e)?;
        worst = worst.max((pixel_to_dir(u, v, 2048, 1024) - d).amax());
    }
    if worst <= 1e-6 {
        Ok(format!("20 translations bit-identical; round trip on 1000 directions within {worst:.1e}"))
    } else {
        Err(format!("round-trip error {worst:.2e}"))
    }
}

/// Voxelized wall of small Gaussians in the plane `x ≈ 10`.
fn wall_scene(voxel: f64, sigma: f64) -> VoxSplatScene {
    let meta = GridMeta::new(Vec3::zeros(), voxel).unwrap();
    let coords = (-40..40).flat_map(|j| (-25..25).map(move |k| VoxelCoord::new((10.0 / voxel) as i32, j, k)));
    let grid = SparseVoxelGrid::from_coords(meta, coords);
    let mut raw = RawGaussianParams::neutral(grid.len(), 1).unwrap();
    for n in 0..grid.len() {
        let rec = raw.record_mut(n);
        rec[OFFSET_OPACITY] = 4.0;
        for a in 0..3 {
            rec[OFFSET_SCALE + a] = sigma.ln();
        }
    }
    VoxSplatScene::decode(grid, raw, 3.0 * voxel).unwrap()
}

fn lidar() -> Outcome {
    let sigma = 0.05;
    let g = Gaussian::isotropic(Vec3::new(5.0, 0.0, 0.0), sigma, 1.0, [0.0; 3]);
    let tracer = LidarTracer::new(&[g], vec![None], GridMeta::new(Vec3::zeros(), 0.5).map_err(e)?, 2.0).map_err(e)?;
    let hit = tracer.trace(&Vec3::zeros(), &Vec3::x(), 90.0).ok_or("analytic ray missed")?;
    if (hit.range - 4.9).abs() > 1e-3 {
        return Err(format!("analytic range {} instead of 4.9", hit.range));
    }

    let mut rng = selftest::rng(7);
    let voxel = 0.5;
    let grid = selftest::random_grid(&mut rng, GridMeta::new(Vec3::new(0.1, -0.2, 0.05), voxel).map_err(e)?, 150, 12);
    let mut raw = RawGaussianParams::zeros(grid.len(), 2).map_err(e)?;
    for n in 0..raw.gaussian_count() {
        let rec = raw.record_mut(n);
        for v in rec.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for a in 0..3 {
            rec[OFFSET_SCALE + a] = (voxel / 2.0).ln() + rng.gen_range(-0.5..0.5);
        }
        rec[7] += 2.0;
    }
    let scene = VoxSplatScene::decode(grid, raw, 3.0 * voxel).map_err(e)?;
    let tracer = LidarTracer::for_scene(&scene, 2.0).map_err(e)?;
    let mut hits = 0;
    for _ in 0..100 {
        let origin = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let dir = random_unit(&mut rng);
        let fast = tracer.trace(&origin, &dir, 90.0).map(|h| (h.range, h.gaussian));
        let slow = oracle::lidar_trace(scene.gaussians(), &origin, &dir, 90.0, 2.0);
        let same = match (fast, slow) {
            (None, None) => true,
            (Some((a, i)), Some((b, j))) => {
                hits += 1;
                (a - b).abs() <= 1e-9 * (1.0 + b) && (i == j || (a - b).abs() <= 1e-12)
            }
            _ => false,
        };
        if !same {
            return Err(format!("scaffold {fast:?} vs brute force {slow:?}"));
        }
    }

    let voxel = 0.1;
    let wall = wall_scene(voxel, 0.04);
    let targets: Vec<Vec3> = (-6..=6)
        .flat_map(|j| (-4..=4).map(move |k| Vec3::new(10.0, 0.3 * j as f64 + 0.01, 0.3 * k as f64 - 0.02)))
        .collect();
    let scan_from = |pos: Vec3| {
        let pattern = ScanPattern::from_directions(targets.iter().map(|t| t - pos).collect(), 60.0).unwrap();
        simulate_scan(&wall, &RigidTransform::from_translation(pos), &pattern, 2.0).unwrap()
    };
    let a = scan_from(Vec3::zeros());
    let b = scan_from(Vec3::new(2.0, 1.5, 0.4));
    if a.cloud.len() != targets.len() || b.cloud.len() != targets.len() {
        return Err(format!("wall scans returned {} and {} of {} points", a.cloud.len(), b.cloud.len(), targets.len()));
    }
    let worst = a
        .cloud
        .positions
        .iter()
        .zip(&b.cloud.positions)
        .map(|(p, q)| (p - q).norm())
        .fold(0.0, f64::max);
    if worst > 2.0 * voxel {
        return Err(format!("two-pose disagreement {worst:.3} m"));
    }
    Ok(format!(
        "analytic range {:.6}; 100 rays ({hits} hits) match brute force; two poses agree within {worst:.3} m",
        hit.range
    ))
}

fn pipeline() -> Outcome {
    let mut rng = selftest::rng(8);
    let meta = GridMeta::new(Vec3::new(-0.03, 0.11, 0.7), 0.1).map_err(e)?;
    let cloud = selftest::random_labeled_cloud(&mut rng, 10_000, 4.0, 0.2, 4);
    let grid = sparse_grid::voxelize(&cloud, &meta).map_err(e)?;
    let reference: Vec<VoxelCoord> = oracle::voxelize(&cloud.positions, &meta).into_keys().collect();
    if reference != grid.coords() {
        return Err(format!("voxelization has {} voxels, brute force {}", grid.len(), reference.len()));
    }

    let h = GridHierarchy::from_fine(grid.clone(), 4).map_err(e)?;
    let mut checked = 0;
    for c in grid.coords() {
        checked += 1;
        if !h.coarse.contains(c.div_floor(4)) {
            return Err(format!("fine voxel {c:?} has no coarse parent"));
        }
    }
    if !h.containment_violations().is_empty() {
        return Err("hierarchy reports containment violations".into());
    }

    let spec = ChunkSpec::default();
    let chunk_meta = spec.grid_meta().map_err(e)?;
    let dims = chunk_meta.extent.ok_or("chunk grid has no extent")?.dims();
    if dims != [1024, 1024, 1024] {
        return Err(format!("chunk grid dims {dims:?}"));
    }
    let wide = selftest::random_labeled_cloud(&mut rng, 20_000, 80.0, 0.0, 1);
    let (cropped, cm) = crop_chunk(&wide, &spec).map_err(e)?;
    let fine = sparse_grid::voxelize(&cropped, &cm).map_err(e)?;
    if fine.coords().iter().any(|c| !cm.in_extent(*c)) {
        return Err("cropped points voxelize outside the 1024³ extent".into());
    }

    let small = selftest::random_labeled_cloud(&mut rng, 1_000, 10.0, 0.1, 8);
    let fast = propagate_semantics(&small).map_err(e)?;
    if fast.labels != oracle::propagate_semantics(&small) {
        return Err("propagated labels differ from exhaustive search".into());
    }
    Ok(format!(
        "10000 points -> {} voxels; {checked} fine voxels contained; chunk 1024³ ({} cropped points); 1000-point propagation exact",
        grid.len(),
        cropped.len()
    ))
}

fn metrics() -> Outcome {
    let meta = GridMeta::new(Vec3::zeros(), 0.1).map_err(e)?;
    let a = SparseVoxelGrid::from_coords(meta, [VoxelCoord::new(0, 0, 0)]);
    let b = SparseVoxelGrid::from_coords(meta, [VoxelCoord::new(3, 4, 0)]);
    let d = voxel_chamfer(&a, &b).map_err(e)?;
    if d != 5.0 {
        return Err(format!("chamfer {d}"));
    }
    let mut rng = selftest::rng(9);
    let dists: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let v: Vec<f64> = (0..6).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let preds: Vec<&[f64]> = dists.iter().map(Vec::as_slice).collect();
    let targets: Vec<Option<usize>> = (0..200).map(|i| (i % 7 != 0).then(|| rng.gen_range(0..6))).collect();
    let focal = focal_loss(&preds, &targets, 0.0, None).map_err(e)?;
    let ce = cross_entropy(&preds, &targets).map_err(e)?;
    // independent reference: mean of -ln p over supervised entries
    let (sum, n) = preds
        .iter()
        .zip(&targets)
        .filter_map(|(p, t)| t.map(|c| -p[c].ln()))
        .fold((0.0, 0), |(s, n), v| (s + v, n + 1));
    let reference = sum / n as f64;
    if (focal - ce).abs() > 1e-9 || (ce - reference).abs() > 1e-9 {
        return Err(format!("focal {focal} vs cross-entropy {ce} vs reference {reference}"));
    }
    let p = psnr_from_mse(0.01);
    if (p - 20.0).abs() > 1e-12 {
        return Err(format!("psnr {p}"));
    }
    let img = Raster::from_vec(16, 16, 3, (0..16 * 16 * 3).map(|_| rng.gen()).collect()).map_err(e)?;
    let s = ssim(&img, &img).map_err(e)?;
    if s != 1.0 {
        return Err(format!("ssim of identical images {s}"));
    }
    let x: Vec<f64> = (0..32).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let eps: Vec<f64> = (0..32).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    if v_target(&x, &eps, 0.0).map_err(e)? != neg || v_target(&x, &eps, 1.0).map_err(e)? != eps {
        return Err("v_target endpoints are not exact".into());
    }
    Ok(format!("chamfer 5.0; |focal - CE| = {:.1e}; PSNR {p}; SSIM 1.0; v_target endpoints exact", (focal - ce).abs()))
}

fn reproducibility() -> Outcome {
    let out = common::bin().arg("selftest").output().map_err(e)?;
    if out.status.code() != Some(0) {
        return Err(format!("selftest exited {:?}:\n{}", out.status.code(), String::from_utf8_lossy(&out.stdout)));
    }
    let first = tempfile::tempdir().map_err(e)?;
    let second = tempfile::tempdir().map_err(e)?;
    common::write_fixture(first.path());
    common::write_fixture(second.path());
    common::run_chain(first.path(), 7, 4);
    common::run_chain(second.path(), 7, 1);
    let a = common::read_outputs(first.path());
    let b = common::read_outputs(second.path());
    for ((name, x), (_, y)) in a.iter().zip(&b) {
        if x != y {
            return Err(format!("{} differs between runs", name.display()));
        }
    }
    Ok(format!("selftest green; {} outputs bit-identical across runs (4 vs 1 threads)", a.len()))
}

fn main() {
    let start = Instant::now();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("rasterizer matches brute-force compositing", rasterizer_oracle_equivalence),
        ("analytic gradients match finite differences", gradient_correctness),
        ("decoding fixed point and center confinement", decoding),
        ("unprojection conserves feature mass; depth bins", conservation),
        ("compositing endpoints", compositing_endpoints),
        ("sky translation invariance and equirect round trip", sky_invariance),
        ("lidar analytic range, scaffold, two-pose consistency", lidar),
        ("voxelization, containment, chunk crop, propagation", pipeline),
        ("metric identities", metrics),
        ("selftest and bit-identical reruns", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2} s): {detail}", i + 1);
            }
        }
    }
    let total = start.elapsed().as_secs_f64();
    if total < 300.0 {
        println!("PASS    full suite under 5 minutes ({total:.1} s)");
    } else {
        failed += 1;
        println!("FAIL    full suite under 5 minutes ({total:.1} s)");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
