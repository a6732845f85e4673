//! Slow, direct reference implementations used to validate the optimized
//! code paths. Each one evaluates its definition exhaustively and shares no
//! acceleration structure with the code it checks.

use std::collections::BTreeMap;

use crate::conditioning::{DepthBins, PixelFeatureMap};
use crate::metrics::{gaussian_window, ssim_window};
use crate::pipeline::DynamicBox;
use crate::renderer::{RenderTarget, COV2D_REGULARIZER, MAX_WEIGHT, Z_CLIP};
use crate::sparse_grid::{GridMeta, VoxelCoord};
use crate::{Camera, Gaussian, LabeledPointCloud, Raster, SparseVoxelGrid, Vec3};

/// Composites every Gaussian at every pixel, front to back, with no tiling
/// and no culling.
pub fn render(gaussians: &[Gaussian], cam: &Camera, background: &Raster) -> RenderTarget {
    struct Footprint {
        depth: f64,
        index: usize,
        u: f64,
        v: f64,
        inv: [f64; 3],
        opacity: f64,
        color: [f64; 3],
    }
    let rot = cam.camera_from_world().rotation();
    let mut fps: Vec<Footprint> = Vec::new();
    for (index, g) in gaussians.iter().enumerate() {
        let p = cam.to_camera(&g.mean);
        if p.z <= Z_CLIP {
            continue;
        }
        let sc = rot * g.covariance() * rot.transpose();
        // rows of the projection Jacobian
        let j0 = [cam.fx / p.z, 0.0, -cam.fx * p.x / (p.z * p.z)];
        let j1 = [0.0, cam.fy / p.z, -cam.fy * p.y / (p.z * p.z)];
        let quad = |a: &[f64; 3], b: &[f64; 3]| {
            let mut s = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    s += a[r] * sc[(r, c)] * b[c];
                }
            }
            s
        };
        let (a, b, d) = (
            quad(&j0, &j0) + COV2D_REGULARIZER,
            quad(&j0, &j1),
            quad(&j1, &j1) + COV2D_REGULARIZER,
        );
        let det = a * d - b * b;
        if det == 0.0 {
            continue;
        }
        fps.push(Footprint {
            depth: p.z,
            index,
            u: cam.fx * p.x / p.z + cam.cx,
            v: cam.fy * p.y / p.z + cam.cy,
            inv: [d / det, -b / det, a / det],
            opacity: g.opacity,
            color: g.color,
        });
    }
    fps.sort_by(|x, y| x.depth.total_cmp(&y.depth).then(x.index.cmp(&y.index)));

    let mut color = Raster::new(cam.width, cam.height, 3);
    let mut alpha = Raster::new(cam.width, cam.height, 1);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut acc = [0.0; 3];
            for f in &fps {
                let (dx, dy) = (px - f.u, py - f.v);
                let q = f.inv[0] * dx * dx + 2.0 * f.inv[1] * dx * dy + f.inv[2] * dy * dy;
                let w = (f.opacity * (-0.5 * q).exp()).min(MAX_WEIGHT);
                for c in 0..3 {
                    acc[c] += w * t * f.color[c];
                }
                t *= 1.0 - w;
            }
            for c in 0..3 {
                color.set(x, y, c, acc[c] + t * background.get(x, y, c));
            }
            alpha.set(x, y, 0, 1.0 - t);
        }
    }
    RenderTarget { color, alpha }
}

/// Voxel of every point by direct floor division, with point counts.
pub fn voxelize(points: &[Vec3], meta: &GridMeta) -> BTreeMap<VoxelCoord, usize> {
    let mut out = BTreeMap::new();
    for p in points {
        let idx: Vec<f64> = (0..3).map(|a| ((p[a] - meta.origin[a]) / meta.voxel_size).floor()).collect();
        let c = VoxelCoord::new(idx[0] as i32, idx[1] as i32, idx[2] as i32);
        if meta.in_extent(c) {
            *out.entry(c).or_insert(0) += 1;
        }
    }
    out
}

/// Slab entry distance into an axis-aligned box, or `None` when the ray
/// (restricted to `t >= 0`) misses it.
fn slab(origin: &Vec3, dir: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<f64> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] >= hi[a] {
                return None;
            }
            continue;
        }
        let (mut n, mut f) = ((lo[a] - origin[a]) / dir[a], (hi[a] - origin[a]) / dir[a]);
        if n > f {
            std::mem::swap(&mut n, &mut f);
        }
        t0 = t0.max(n);
        t1 = t1.min(f);
    }
    (t0 < t1).then_some(t0)
}

/// First occupied voxel by testing every voxel's box. Returns the smallest
/// entry distance and every voxel entered at exactly that distance.
pub fn first_hit(grid: &SparseVoxelGrid, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec<VoxelCoord>)> {
    let mut best: Option<(f64, Vec<VoxelCoord>)> = None;
    for &c in grid.coords() {
        let lo = grid.meta().min_corner(c);
        let hi = grid.meta().max_corner(c);
        let Some(t) = slab(origin, dir, &lo, &hi) else { continue };
        match &mut best {
            Some((bt, list)) if t == *bt => list.push(c),
            Some((bt, _)) if t > *bt => {}
            _ => best = Some((t, vec![c])),
        }
    }
    best
}

/// Label of the nearest labeled point for every point, by exhaustive search.
pub fn propagate_semantics(cloud: &LabeledPointCloud) -> Vec<Option<u32>> {
    (0..cloud.len())
        .map(|i| {
            if cloud.labels[i].is_some() {
                return cloud.labels[i];
            }
            let mut best: Option<(f64, usize)> = None;
            for j in 0..cloud.len() {
                if cloud.labels[j].is_none() {
                    continue;
                }
                let d = (cloud.positions[i] - cloud.positions[j]).norm_squared();
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
            best.and_then(|(_, j)| cloud.labels[j])
        })
        .collect()
}

/// Symmetric mean nearest-centroid distance in voxel units.
pub fn chamfer(a: &SparseVoxelGrid, b: &SparseVoxelGrid) -> f64 {
    let pa: Vec<Vec3> = (0..a.len()).map(|n| a.centroid(n)).collect();
    let pb: Vec<Vec3> = (0..b.len()).map(|n| b.centroid(n)).collect();
    let directed = |from: &[Vec3], to: &[Vec3]| {
        from.iter()
            .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / from.len() as f64
    };
    0.5 * (directed(&pa, &pb) + directed(&pb, &pa)) / a.voxel_size()
}

/// Mean SSIM with each 11×11 window's weighted moments evaluated directly.
pub fn ssim(a: &Raster, b: &Raster) -> f64 {
    let g = gaussian_window(11, 1.5);
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    for c in 0..a.channels() {
        let mut sum = 0.0;
        let mut windows = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wt = g[dx] * g[dy];
                        let (p, q) = (a.get(x0 + dx, y0 + dy, c), b.get(x0 + dx, y0 + dy, c));
                        mx += wt * p;
                        my += wt * q;
                        sxx += wt * p * p;
                        syy += wt * q * q;
                        sxy += wt * p * q;
                    }
                }
                sum += ssim_window(mx, my, sxx - mx * mx, syy - my * my, sxy - mx * my);
                windows += 1;
            }
        }
        total += sum / windows as f64;
    }
    total / a.channels() as f64
}

/// Accumulated voxel features by enumerating every (image, pixel, bin)
/// sample in order.
pub fn unproject(
    images: &[PixelFeatureMap],
    cameras: &[Camera],
    bins: &DepthBins,
    meta: &GridMeta,
) -> BTreeMap<VoxelCoord, Vec<f64>> {
    let mut out: BTreeMap<VoxelCoord, Vec<f64>> = BTreeMap::new();
    for (img, cam) in images.iter().zip(cameras) {
        for y in 0..img.height() {
            for x in 0..img.width() {
                let p = y * img.width() + x;
                for d in 0..bins.count() {
                    let z = 0.5 * (bins.edges()[d] + bins.edges()[d + 1]);
                    let cam_pt = Vec3::new((x as f64 + 0.5 - cam.cx) / cam.fx * z, (y as f64 + 0.5 - cam.cy) / cam.fy * z, z);
                    let world = cam.world_from_camera().transform_point(&cam_pt);
                    let Some(c) = meta.voxel_of(&world) else { continue };
                    if !meta.in_extent(c) {
                        continue;
                    }
                    let theta = img.depth_distribution(p)[d];
                    let slot = out.entry(c).or_insert_with(|| vec![0.0; img.channels()]);
                    for (s, f) in slot.iter_mut().zip(img.feature(p)) {
                        *s += theta * f;
                    }
                }
            }
        }
    }
    out
}

/// Nearest entry into any Gaussian's `lambda` ellipsoid, testing all of them.
pub fn lidar_trace(gaussians: &[Gaussian], origin: &Vec3, dir: &Vec3, max_range: f64, lambda: f64) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (n, g) in gaussians.iter().enumerate() {
        let Some(inv) = g.covariance().try_inverse() else { continue };
        let o = origin - g.mean;
        let a = dir.dot(&(inv * dir));
        let b = 2.0 * o.dot(&(inv * dir));
        let c = o.dot(&(inv * o)) - lambda * lambda;
        if c <= 0.0 {
            continue;
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            continue;
        }
        let t = (-b - disc.sqrt()) / (2.0 * a);
        if t > 0.0 && t <= max_range && best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, n));
        }
    }
    best
}

/// Indices of points outside every box of their own frame.
pub fn kept_after_box_filter(points: &[(Vec3, u32)], boxes: &[DynamicBox]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            let (p, frame) = points[i];
            !boxes.iter().any(|b| {
                if b.frame_id != frame {
                    return false;
                }
                let d = p - Vec3::from(b.center);
                let (s, c) = b.yaw.sin_cos();
                let local = [c * d.x + s * d.y, -s * d.x + c * d.y, d.z];
                (0..3).all(|a| local[a].abs() <= b.half_extent[a])
            })
        })
        .collect()
}
