//! CPU tile rasterizer for Gaussian splats.
//!
//! Gaussians are projected with the local affine (EWA) approximation, sorted
//! globally by camera depth (ties by index), binned into square tiles, and
//! composited front to back per pixel:
//!
//! ```text
//! w_n   = min(α_n · exp(-½ dᵀ Σ2⁻¹ d), MAX_WEIGHT)
//! I_GS  = Σ_n w_n · Π_{m<n}(1 - w_m) · c_n
//! A     = 1 - Π_n (1 - w_n)                 (accumulated opacity)
//! I     = I_GS + (1 - A) · I_bg
//! ```
//!
//! A Gaussian is binned into every tile its footprint reaches before its
//! weight drops below [`CULL_WEIGHT`], so the tiled result agrees with an
//! exhaustive per-pixel evaluation to within `N · CULL_WEIGHT`.

mod backward;

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use rayon::prelude::*;

pub use backward::{rasterize_backward, rasterize_gaussians_backward, RenderGradients};

use crate::{Camera, Error, Gaussian, Raster, Result, Vec3, VoxSplatScene};

/// Added to the diagonal of every projected covariance (px²).
pub const COV2D_REGULARIZER: f64 = 0.3;
/// Gaussians at or closer than this camera depth (m) are dropped.
pub const Z_CLIP: f64 = 0.01;
/// Upper bound on a single compositing weight.
pub const MAX_WEIGHT: f64 = 1.0 - 1e-7;
/// Weight below which a Gaussian's footprint is considered ended.
pub const CULL_WEIGHT: f64 = 1e-12;
pub const TILE_SIZE: usize = 16;
/// Pixels with accumulated opacity below this have no valid depth.
pub const MIN_DEPTH_ALPHA: f64 = 1e-3;

/// Screen-space footprint of a Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct Projected {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    /// `cov2d⁻¹`.
    pub conic: Matrix2<f64>,
    /// Camera-frame mean.
    pub p_cam: Vec3,
    /// `J·W`, the Jacobian of the projection composed with the view rotation.
    pub(crate) jw: Matrix2x3<f64>,
}

/// Perspective projection of a Gaussian's mean and covariance:
/// `cov2d = J W Σ Wᵀ Jᵀ + 0.3 I`. `None` when the mean is at or behind the
/// near clip plane.
pub fn project_gaussian(g: &Gaussian, cam: &Camera) -> Option<Projected> {
    let w = cam.camera_from_world().rotation();
    let p = cam.to_camera(&g.mean);
    if !(p.z > Z_CLIP) {
        return None;
    }
    let (x, y, z) = (p.x, p.y, p.z);
    let j = Matrix2x3::new(
        cam.fx / z,
        0.0,
        -cam.fx * x / (z * z),
        0.0,
        cam.fy / z,
        -cam.fy * y / (z * z),
    );
    let jw = j * w;
    let cov2d = jw * g.covariance() * jw.transpose() + Matrix2::identity() * COV2D_REGULARIZER;
    let conic = cov2d.try_inverse()?;
    Some(Projected {
        mean2d: Vector2::new(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy),
        cov2d,
        depth: z,
        conic,
        p_cam: p,
        jw,
    })
}

/// Color and accumulated-opacity images of a render.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderTarget {
    pub color: Raster,
    pub alpha: Raster,
}

#[derive(Clone, Debug)]
pub(crate) struct Splat {
    pub index: usize,
    pub proj: Projected,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Splat {
    /// Gaussian falloff at continuous pixel `(px, py)`.
    #[inline]
    pub fn falloff(&self, px: f64, py: f64) -> (f64, Vector2<f64>) {
        let d = Vector2::new(px - self.proj.mean2d.x, py - self.proj.mean2d.y);
        let c = &self.proj.conic;
        let power = -0.5 * (c[(0, 0)] * d.x * d.x + (c[(0, 1)] + c[(1, 0)]) * d.x * d.y + c[(1, 1)] * d.y * d.y);
        (power.exp(), d)
    }

    #[inline]
    pub fn weight(&self, falloff: f64) -> (f64, bool) {
        let w = self.opacity * falloff;
        if w > MAX_WEIGHT {
            (MAX_WEIGHT, true)
        } else {
            (w, false)
        }
    }
}

/// Projects and depth-sorts Gaussians, the shared front half of every pass.
pub(crate) fn prepare_splats(gaussians: &[Gaussian], cam: &Camera) -> Vec<Splat> {
    let mut splats: Vec<Splat> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(index, g)| {
            project_gaussian(g, cam).map(|proj| Splat {
                index,
                proj,
                opacity: g.opacity,
                color: g.color,
            })
        })
        .collect();
    splats.sort_by(|a, b| a.proj.depth.total_cmp(&b.proj.depth).then(a.index.cmp(&b.index)));
    splats
}

pub(crate) struct TileGrid {
    pub tiles_x: usize,
    /// Per tile, indices into the sorted splat list (ascending, hence depth order).
    pub lists: Vec<Vec<usize>>,
}

impl TileGrid {
    pub fn pixel_range(&self, tile: usize, cam: &Camera) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0..(x0 + TILE_SIZE).min(cam.width), y0..(y0 + TILE_SIZE).min(cam.height))
    }
}

/// Bins each splat into the tiles whose pixel centers may receive a weight of
/// at least [`CULL_WEIGHT`].
pub(crate) fn bin_splats(splats: &[Splat], cam: &Camera) -> TileGrid {
    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (n, s) in splats.iter().enumerate() {
        if s.opacity <= CULL_WEIGHT {
            continue;
        }
        let mahalanobis2 = 2.0 * (s.opacity / CULL_WEIGHT).ln();
        let c = &s.proj.cov2d;
        let mid = 0.5 * (c[(0, 0)] + c[(1, 1)]);
        let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
        let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
        let radius = (mahalanobis2 * lambda_max).sqrt();
        // pixel x is sampled at x + 0.5
        let x_lo = (s.proj.mean2d.x - radius - 0.5).ceil();
        let x_hi = (s.proj.mean2d.x + radius - 0.5).floor();
        let y_lo = (s.proj.mean2d.y - radius - 0.5).ceil();
        let y_hi = (s.proj.mean2d.y + radius - 0.5).floor();
        if !(x_hi >= 0.0 && y_hi >= 0.0 && x_lo < cam.width as f64 && y_lo < cam.height as f64) {
            continue;
        }
        let px0 = x_lo.max(0.0) as usize;
        let py0 = y_lo.max(0.0) as usize;
        let px1 = x_hi.min((cam.width - 1) as f64) as usize;
        let py1 = y_hi.min((cam.height - 1) as f64) as usize;
        for ty in py0 / TILE_SIZE..=py1 / TILE_SIZE {
            for tx in px0 / TILE_SIZE..=px1 / TILE_SIZE {
                lists[ty * tiles_x + tx].push(n);
            }
        }
    }
    TileGrid {
        tiles_x,
        lists,
    }
}

fn check_background(background: &Raster, cam: &Camera) -> Result<()> {
    if background.width() != cam.width || background.height() != cam.height || background.channels() != 3 {
        return Err(Error::invalid_argument(format!(
            "background is {}x{}x{}, camera needs {}x{}x3",
            background.height(),
            background.width(),
            background.channels(),
            cam.height,
            cam.width
        )));
    }
    Ok(())
}

struct TileOutput {
    color: Vec<[f64; 3]>,
    alpha: Vec<f64>,
    depth: Vec<f64>,
}

fn render_tile(
    splats: &[Splat],
    list: &[usize],
    xs: std::ops::Range<usize>,
    ys: std::ops::Range<usize>,
    background: Option<&Raster>,
) -> TileOutput {
    let n = xs.len() * ys.len();
    let mut out = TileOutput {
        color: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
    };
    for y in ys {
        for x in xs.clone() {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut transmittance = 1.0;
            let mut acc = [0.0; 3];
            let mut depth_acc = 0.0;
            for &s in list {
                let splat = &splats[s];
                let (g, _) = splat.falloff(px, py);
                let (w, _) = splat.weight(g);
                if w == 0.0 {
                    continue;
                }
                let contrib = w * transmittance;
                for c in 0..3 {
                    acc[c] += contrib * splat.color[c];
                }
                depth_acc += contrib * splat.proj.depth;
                transmittance *= 1.0 - w;
            }
            if let Some(bg) = background {
                let b = bg.pixel(x, y);
                for c in 0..3 {
                    acc[c] += transmittance * b[c];
                }
            }
            out.color.push(acc);
            out.alpha.push(1.0 - transmittance);
            out.depth.push(depth_acc);
        }
    }
    out
}

fn render_tiles(gaussians: &[Gaussian], cam: &Camera, background: Option<&Raster>) -> (Raster, Raster, Raster) {
    let splats = prepare_splats(gaussians, cam);
    let tiles = bin_splats(&splats, cam);
    let outputs: Vec<TileOutput> = (0..tiles.lists.len())
        .into_par_iter()
        .map(|t| {
            let (xs, ys) = tiles.pixel_range(t, cam);
            render_tile(&splats, &tiles.lists[t], xs, ys, background)
        })
        .collect();
    let mut color = Raster::new(cam.width, cam.height, 3);
    let mut alpha = Raster::new(cam.width, cam.height, 1);
    let mut depth = Raster::new(cam.width, cam.height, 1);
    for (t, out) in outputs.into_iter().enumerate() {
        let (xs, ys) = tiles.pixel_range(t, cam);
        let mut n = 0;
        for y in ys {
            for x in xs.clone() {
                color.pixel_mut(x, y).copy_from_slice(&out.color[n]);
                alpha.set(x, y, 0, out.alpha[n]);
                depth.set(x, y, 0, out.depth[n]);
                n += 1;
            }
        }
    }
    (color, alpha, depth)
}

/// Renders a scene over `background` (`H × W × 3`).
pub fn rasterize(scene: &VoxSplatScene, cam: &Camera, background: &Raster) -> Result<RenderTarget> {
    rasterize_gaussians(scene.gaussians(), cam, background)
}

pub fn rasterize_gaussians(gaussians: &[Gaussian], cam: &Camera, background: &Raster) -> Result<RenderTarget> {
    check_background(background, cam)?;
    let (color, alpha, _) = render_tiles(gaussians, cam, Some(background));
    Ok(RenderTarget { color, alpha })
}

/// Opacity-weighted expected camera depth per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    /// Depth in meters; 0 where invalid.
    pub depth: Raster,
    /// `false` where accumulated opacity is below [`MIN_DEPTH_ALPHA`].
    pub valid: Vec<bool>,
}

pub fn render_depth(scene: &VoxSplatScene, cam: &Camera) -> DepthMap {
    render_depth_gaussians(scene.gaussians(), cam)
}

pub fn render_depth_gaussians(gaussians: &[Gaussian], cam: &Camera) -> DepthMap {
    let (_, alpha, mut depth) = render_tiles(gaussians, cam, None);
    let mut valid = Vec::with_capacity(cam.pixel_count());
    for (d, &a) in depth.data_mut().iter_mut().zip(alpha.data()) {
        if a >= MIN_DEPTH_ALPHA {
            *d /= a;
            valid.push(true);
        } else {
            *d = 0.0;
            valid.push(false);
        }
    }
    DepthMap { depth, valid }
}

#[cfg(test)]
fn covariance_to_screen(jw: &Matrix2x3<f64>, cov: &crate::Mat3) -> Matrix2<f64> {
    jw * cov * jw.transpose() + Matrix2::identity() * COV2D_REGULARIZER
}
