//! Reverse-mode pass of the rasterizer.
//!
//! Per pixel the forward compositing is replayed to record each splat's
//! weight and incoming transmittance, then walked back to front. The color
//! seen behind splat `n` (`B_n`) and the transmittance behind it (`R_n`) are
//! accumulated from the back, which keeps the pass free of divisions by
//! `1 - w`:
//!
//! ```text
//! ∂I/∂w_n = T_n (c_n - B_n)      ∂A/∂w_n = T_n R_n      ∂I/∂c_n = w_n T_n
//! ```
//!
//! Screen-space gradients are reduced per tile and merged in tile order, then
//! chained through the projection, the covariance assembly and finally the
//! activations back to raw parameters.

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use rayon::prelude::*;

use super::{bin_splats, check_background, prepare_splats, Splat};
use crate::gaussian::{bounded_offset, quat2rot_backward, OFFSET_COLOR, OFFSET_MEAN, OFFSET_OPACITY, OFFSET_ROTATION, OFFSET_SCALE, RAW_WIDTH};
use crate::{Camera, Error, Gaussian, Mat3, Raster, Result, Vec3, VoxSplatScene};

/// Gradients of a scalar loss with respect to every Gaussian's decoded
/// parameters, plus (when computed from a scene) its raw parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradients {
    pub mean: Vec<Vec3>,
    pub opacity: Vec<f64>,
    pub scale: Vec<Vec3>,
    /// With respect to the stored unit quaternion; tangent to the unit sphere.
    pub rotation: Vec<[f64; 4]>,
    pub color: Vec<[f64; 3]>,
    /// `14` values per Gaussian, laid out like the raw records. Empty when the
    /// pass ran on bare Gaussians.
    pub raw: Vec<f64>,
}

impl RenderGradients {
    fn zeros(n: usize) -> Self {
        Self {
            mean: vec![Vec3::zeros(); n],
            opacity: vec![0.0; n],
            scale: vec![Vec3::zeros(); n],
            rotation: vec![[0.0; 4]; n],
            color: vec![[0.0; 3]; n],
            raw: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Gradient of Gaussian `n` as a raw-record-shaped slice.
    pub fn raw_record(&self, n: usize) -> &[f64] {
        &self.raw[n * RAW_WIDTH..(n + 1) * RAW_WIDTH]
    }

    pub fn all_finite(&self) -> bool {
        self.mean.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity.iter().all(|x| x.is_finite())
            && self.scale.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotation.iter().flatten().all(|x| x.is_finite())
            && self.color.iter().flatten().all(|x| x.is_finite())
            && self.raw.iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mean2d: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
}

struct Contribution {
    splat: usize,
    weight: f64,
    transmittance: f64,
    falloff: f64,
    clamped: bool,
    offset: Vector2<f64>,
}

#[allow(clippy::too_many_arguments)]
fn backward_tile(
    splats: &[Splat],
    list: &[usize],
    xs: std::ops::Range<usize>,
    ys: std::ops::Range<usize>,
    background: &Raster,
    d_color: &Raster,
    d_alpha: Option<&Raster>,
) -> Vec<ScreenGrad> {
    let mut grads = vec![ScreenGrad::default(); list.len()];
    let mut contribs: Vec<Contribution> = Vec::with_capacity(list.len());
    for y in ys {
        for x in xs.clone() {
            let dc = d_color.pixel(x, y);
            let da = d_alpha.map_or(0.0, |a| a.get(x, y, 0));
            if dc.iter().all(|&v| v == 0.0) && da == 0.0 {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            contribs.clear();
            let mut t = 1.0;
            for (slot, &s) in list.iter().enumerate() {
                let splat = &splats[s];
                let (g, offset) = splat.falloff(px, py);
                let (w, clamped) = splat.weight(g);
                if w == 0.0 {
                    continue;
                }
                contribs.push(Contribution {
                    splat: slot,
                    weight: w,
                    transmittance: t,
                    falloff: g,
                    clamped,
                    offset,
                });
                t *= 1.0 - w;
            }
            let mut behind = [0.0; 3];
            behind.copy_from_slice(background.pixel(x, y));
            let mut behind_t = 1.0;
            for c in contribs.iter().rev() {
                let splat = &splats[list[c.splat]];
                let grad = &mut grads[c.splat];
                let mut d_w = da * c.transmittance * behind_t;
                for ch in 0..3 {
                    d_w += dc[ch] * c.transmittance * (splat.color[ch] - behind[ch]);
                    grad.color[ch] += dc[ch] * c.weight * c.transmittance;
                }
                if !c.clamped {
                    grad.opacity += d_w * c.falloff;
                    let d_power = d_w * splat.opacity * c.falloff;
                    // power = -½ dᵀ P d with d = pixel - mean2d
                    grad.mean2d += d_power * (splat.proj.conic * c.offset);
                    grad.conic += d_power * -0.5 * (c.offset * c.offset.transpose());
                }
                for ch in 0..3 {
                    behind[ch] = c.weight * splat.color[ch] + (1.0 - c.weight) * behind[ch];
                }
                behind_t *= 1.0 - c.weight;
            }
        }
    }
    grads
}

/// Backward pass on bare Gaussians. `d_color` is `∂L/∂I` (`H × W × 3`);
/// `d_alpha`, when given, is `∂L/∂A` for the accumulated-opacity map.
pub fn rasterize_gaussians_backward(
    gaussians: &[Gaussian],
    cam: &Camera,
    background: &Raster,
    d_color: &Raster,
    d_alpha: Option<&Raster>,
) -> Result<RenderGradients> {
    check_background(background, cam)?;
    if !d_color.same_shape(background) {
        return Err(Error::invalid_argument("color gradient must match the background shape"));
    }
    if let Some(a) = d_alpha {
        if a.width() != cam.width || a.height() != cam.height || a.channels() != 1 {
            return Err(Error::invalid_argument("alpha gradient must be H x W x 1"));
        }
    }
    let splats = prepare_splats(gaussians, cam);
    let tiles = bin_splats(&splats, cam);
    let per_tile: Vec<Vec<ScreenGrad>> = (0..tiles.lists.len())
        .into_par_iter()
        .map(|t| {
            let (xs, ys) = tiles.pixel_range(t, cam);
            backward_tile(&splats, &tiles.lists[t], xs, ys, background, d_color, d_alpha)
        })
        .collect();

    let mut screen = vec![ScreenGrad::default(); splats.len()];
    for (t, grads) in per_tile.iter().enumerate() {
        for (slot, g) in grads.iter().enumerate() {
            let acc = &mut screen[tiles.lists[t][slot]];
            acc.mean2d += g.mean2d;
            acc.conic += g.conic;
            acc.opacity += g.opacity;
            for ch in 0..3 {
                acc.color[ch] += g.color[ch];
            }
        }
    }

    let mut out = RenderGradients::zeros(gaussians.len());
    let w = cam.camera_from_world().rotation();
    for (splat, sg) in splats.iter().zip(&screen) {
        let n = splat.index;
        let g = &gaussians[n];
        out.opacity[n] = sg.opacity;
        out.color[n] = sg.color;

        let p = &splat.proj;
        let conic = &p.conic;
        let d_cov2d = -(conic.transpose() * sg.conic * conic.transpose());
        let m = &p.jw;
        let d_cov3d: Mat3 = m.transpose() * d_cov2d * m;
        let d_m: Matrix2x3<f64> = (d_cov2d + d_cov2d.transpose()) * m * g.covariance();
        let d_j = d_m * w.transpose();

        let (x, y, z) = (p.p_cam.x, p.p_cam.y, p.p_cam.z);
        let (fx, fy) = (cam.fx, cam.fy);
        let z2 = z * z;
        let z3 = z2 * z;
        let mut d_p = Vec3::zeros();
        d_p.x += d_j[(0, 2)] * (-fx / z2);
        d_p.y += d_j[(1, 2)] * (-fy / z2);
        d_p.z += d_j[(0, 0)] * (-fx / z2)
            + d_j[(1, 1)] * (-fy / z2)
            + d_j[(0, 2)] * (2.0 * fx * x / z3)
            + d_j[(1, 2)] * (2.0 * fy * y / z3);
        d_p.x += sg.mean2d.x * fx / z;
        d_p.y += sg.mean2d.y * fy / z;
        d_p.z += -sg.mean2d.x * fx * x / z2 - sg.mean2d.y * fy * y / z2;
        out.mean[n] = w.transpose() * d_p;

        let (d_scale, d_rot) = covariance_backward(g, &d_cov3d);
        out.scale[n] = d_scale;
        out.rotation[n] = quat2rot_backward(g.rotation, &d_rot)?;
    }
    Ok(out)
}

/// `Σ = (R S)(R S)ᵀ`: returns `(∂L/∂s, ∂L/∂R)`.
fn covariance_backward(g: &Gaussian, d_cov: &Mat3) -> (Vec3, Mat3) {
    let r = g.rotation_matrix();
    let s = Mat3::from_diagonal(&g.scale);
    let rs = r * s;
    let d_rs = (d_cov + d_cov.transpose()) * rs;
    let rt_d = r.transpose() * d_rs;
    let d_scale = Vec3::new(rt_d[(0, 0)], rt_d[(1, 1)], rt_d[(2, 2)]);
    (d_scale, d_rs * s)
}

/// Backward pass on a decoded scene, chained through the activations to the
/// raw per-voxel parameters.
pub fn rasterize_backward(
    scene: &VoxSplatScene,
    cam: &Camera,
    background: &Raster,
    d_color: &Raster,
    d_alpha: Option<&Raster>,
) -> Result<RenderGradients> {
    let mut grads = rasterize_gaussians_backward(scene.gaussians(), cam, background, d_color, d_alpha)?;
    let r = scene.radius();
    let mut raw = vec![0.0; scene.len() * RAW_WIDTH];
    for (n, g) in scene.gaussians().iter().enumerate() {
        let rec = scene.raw().record(n);
        let out = &mut raw[n * RAW_WIDTH..(n + 1) * RAW_WIDTH];
        for a in 0..3 {
            out[OFFSET_MEAN + a] = grads.mean[n][a] * bounded_offset(rec[OFFSET_MEAN + a], r).1;
            out[OFFSET_SCALE + a] = grads.scale[n][a] * g.scale[a];
            out[OFFSET_COLOR + a] = grads.color[n][a];
        }
        out[OFFSET_OPACITY] = grads.opacity[n] * g.opacity * (1.0 - g.opacity);
        // the decoded-rotation gradient is already tangent at the unit
        // quaternion; normalization only rescales it
        let q = &rec[OFFSET_ROTATION..OFFSET_ROTATION + 4];
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        for c in 0..4 {
            out[OFFSET_ROTATION + c] = grads.rotation[n][c] / norm;
        }
    }
    grads.raw = raw;
    Ok(grads)
}
