//! Equirectangular sky panorama.
//!
//! The panorama covers the unit direction sphere with world-up `+z`.
//! Azimuth `φ = atan2(d_y, d_x)` maps linearly onto `u ∈ [0, W)` with
//! `φ = -π` at `u = 0`; elevation `ψ = asin(d_z)` maps onto `v ∈ [0, H]`
//! with the zenith at `v = 0`. Sky lies at infinity, so only camera rotations
//! matter and translations are ignored throughout.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Camera, Error, Mat3, Raster, Result, Vec3};

use std::f64::consts::{FRAC_PI_2, PI};

pub const DEFAULT_PANORAMA_HEIGHT: usize = 1024;
pub const DEFAULT_PANORAMA_WIDTH: usize = 2048;
/// Value rendered where the panorama has no coverage.
pub const DEFAULT_FILL: f64 = 0.5;
pub const CONVENTION: &str = "equirect/z-up/phi=atan2(y,x)/v0=zenith";

/// Continuous panorama coordinates of direction `d`.
pub fn dir_to_pixel(d: &Vec3, width: usize, height: usize) -> Result<(f64, f64)> {
    let n = d.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::invalid_argument("direction must be a nonzero finite vector"));
    }
    let d = d / n;
    let u = (d.y.atan2(d.x) + PI) / (2.0 * PI) * width as f64;
    let v = (FRAC_PI_2 - d.z.clamp(-1.0, 1.0).asin()) / PI * height as f64;
    Ok((u, v))
}

/// Unit direction at continuous panorama coordinates `(u, v)`.
pub fn pixel_to_dir(u: f64, v: f64, width: usize, height: usize) -> Vec3 {
    let phi = u / width as f64 * 2.0 * PI - PI;
    let psi = FRAC_PI_2 - v / height as f64 * PI;
    Vec3::new(psi.cos() * phi.cos(), psi.cos() * phi.sin(), psi.sin())
}

/// One masked input view for [`build_panorama`].
pub struct SkyView<'a> {
    pub image: &'a Raster,
    /// Single channel; values above 0.5 mark sky.
    pub mask: &'a Raster,
    pub camera: &'a Camera,
}

/// Header stored next to the panorama raster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkyHeader {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub convention: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkyPanorama {
    data: Raster,
    coverage: Vec<bool>,
}

impl SkyPanorama {
    /// Panorama with every pixel set to `pixel` and fully covered.
    pub fn constant(width: usize, height: usize, pixel: &[f64]) -> Result<Self> {
        if width == 0 || height == 0 || pixel.is_empty() {
            return Err(Error::invalid_argument("panorama size and channels must be at least 1"));
        }
        Ok(Self {
            data: Raster::constant(width, height, pixel),
            coverage: vec![true; width * height],
        })
    }

    pub fn from_parts(data: Raster, coverage: Vec<bool>) -> Result<Self> {
        if data.width() == 0 || data.height() == 0 || data.channels() == 0 {
            return Err(Error::invalid_argument("panorama size and channels must be at least 1"));
        }
        if coverage.len() != data.width() * data.height() {
            return Err(Error::invalid_argument("coverage mask does not match the panorama size"));
        }
        if data.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_input("panorama values must be finite"));
        }
        Ok(Self { data, coverage })
    }

    pub fn width(&self) -> usize {
        self.data.width()
    }

    pub fn height(&self) -> usize {
        self.data.height()
    }

    pub fn channels(&self) -> usize {
        self.data.channels()
    }

    pub fn data(&self) -> &Raster {
        &self.data
    }

    pub fn coverage(&self) -> &[bool] {
        &self.coverage
    }

    pub fn is_covered(&self, x: usize, y: usize) -> bool {
        self.coverage[y * self.width() + x]
    }

    pub fn covered_fraction(&self) -> f64 {
        self.coverage.iter().filter(|&&c| c).count() as f64 / self.coverage.len() as f64
    }

    /// Coverage as a single-channel 0/1 raster.
    pub fn coverage_raster(&self) -> Raster {
        let data = self.coverage.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        Raster::from_vec(self.width(), self.height(), 1, data).expect("shape matches")
    }

    pub fn header(&self) -> SkyHeader {
        SkyHeader {
            height: self.height(),
            width: self.width(),
            channels: self.channels(),
            convention: CONVENTION.to_owned(),
        }
    }

    /// Checks a stored header against this panorama.
    pub fn check_header(&self, header: &SkyHeader) -> Result<()> {
        if header.convention != CONVENTION {
            return Err(Error::invalid_input(format!("unsupported panorama convention '{}'", header.convention)));
        }
        if (header.height, header.width, header.channels) != (self.height(), self.width(), self.channels()) {
            return Err(Error::invalid_input("panorama header does not match its raster"));
        }
        Ok(())
    }

    /// Unit direction through the center of panorama pixel `(x, y)`.
    pub fn pixel_direction(&self, x: usize, y: usize) -> Vec3 {
        pixel_to_dir(x as f64 + 0.5, y as f64 + 0.5, self.width(), self.height())
    }

    /// Bilinear sample at continuous coordinates with horizontal wrap and
    /// clamped rows. Uncovered taps are replaced by the mean of the covered
    /// ones; returns `false` when no tap is covered, leaving `out` at `fill`.
    pub fn sample(&self, u: f64, v: f64, fill: f64, out: &mut [f64]) -> bool {
        let (w, h) = (self.width() as i64, self.height() as i64);
        let fx = u - 0.5;
        let fy = v - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let (tx, ty) = (fx - x0, fy - y0);
        let xs = [(x0 as i64).rem_euclid(w) as usize, (x0 as i64 + 1).rem_euclid(w) as usize];
        let ys = [(y0 as i64).clamp(0, h - 1) as usize, (y0 as i64 + 1).clamp(0, h - 1) as usize];
        let taps = [(xs[0], ys[0]), (xs[1], ys[0]), (xs[0], ys[1]), (xs[1], ys[1])];

        let c = self.channels();
        let mut mean = vec![0.0; c];
        let mut covered = 0usize;
        for &(x, y) in &taps {
            if self.is_covered(x, y) {
                covered += 1;
                for (m, &p) in mean.iter_mut().zip(self.data.pixel(x, y)) {
                    *m += (p - *m) / covered as f64;
                }
            }
        }
        if covered == 0 {
            out.iter_mut().for_each(|o| *o = fill);
            return false;
        }
        let tap = |n: usize, ch: usize| {
            let (x, y) = taps[n];
            if self.is_covered(x, y) {
                self.data.get(x, y, ch)
            } else {
                mean[ch]
            }
        };
        for (ch, o) in out.iter_mut().enumerate() {
            let top = lerp(tap(0, ch), tap(1, ch), tx);
            let bottom = lerp(tap(2, ch), tap(3, ch), tx);
            *o = lerp(top, bottom, ty);
        }
        true
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Projects the direction `d` (world frame) through a camera with rotation
/// `camera_from_world` and no translation.
fn project_direction(cam: &Camera, camera_from_world: &Mat3, d: &Vec3) -> Option<(f64, f64)> {
    let dc = camera_from_world * d;
    if dc.z <= 0.0 {
        return None;
    }
    let u = cam.fx * dc.x / dc.z + cam.cx;
    let v = cam.fy * dc.y / dc.z + cam.cy;
    cam.in_frame(u, v).then_some((u, v))
}

/// Builds a `height × width` panorama by looking up every panorama direction
/// in each view (nearest pixel) and averaging the views where it is sky.
pub fn build_panorama(views: &[SkyView<'_>], width: usize, height: usize) -> Result<SkyPanorama> {
    if views.is_empty() {
        return Err(Error::invalid_argument("building a sky panorama needs at least one camera"));
    }
    if width == 0 || height == 0 {
        return Err(Error::invalid_argument("panorama size must be at least 1x1"));
    }
    let channels = views[0].image.channels();
    for (n, view) in views.iter().enumerate() {
        let (cam, img, mask) = (view.camera, view.image, view.mask);
        if img.channels() != channels {
            return Err(Error::invalid_argument(format!("view {n} has {} channels, expected {channels}", img.channels())));
        }
        if (img.width(), img.height()) != (cam.width, cam.height)
            || (mask.width(), mask.height()) != (cam.width, cam.height)
            || mask.channels() != 1
        {
            return Err(Error::invalid_argument(format!("view {n}: image, mask and camera sizes differ")));
        }
    }
    let rotations: Vec<Mat3> = views
        .iter()
        .map(|v| v.camera.world_from_camera().rotation().transpose())
        .collect();

    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; width * channels];
            let mut cov = vec![false; width];
            let mut sum = vec![0.0; channels];
            for x in 0..width {
                let d = pixel_to_dir(x as f64 + 0.5, y as f64 + 0.5, width, height);
                sum.iter_mut().for_each(|s| *s = 0.0);
                let mut count = 0usize;
                for (view, rot) in views.iter().zip(&rotations) {
                    let Some((u, v)) = project_direction(view.camera, rot, &d) else {
                        continue;
                    };
                    let (px, py) = (u as usize, v as usize);
                    if view.mask.get(px, py, 0) <= 0.5 {
                        continue;
                    }
                    count += 1;
                    for (s, p) in sum.iter_mut().zip(view.image.pixel(px, py)) {
                        *s += p;
                    }
                }
                if count > 0 {
                    cov[x] = true;
                    for (o, s) in row[x * channels..(x + 1) * channels].iter_mut().zip(&sum) {
                        *o = s / count as f64;
                    }
                }
            }
            (row, cov)
        })
        .collect();

    let mut data = Vec::with_capacity(width * height * channels);
    let mut coverage = Vec::with_capacity(width * height);
    for (row, cov) in rows {
        data.extend(row);
        coverage.extend(cov);
    }
    SkyPanorama::from_parts(Raster::from_vec(width, height, channels, data)?, coverage)
}

/// Background raster for a camera.
#[derive(Clone, Debug, PartialEq)]
pub struct SkySample {
    pub image: Raster,
    /// Output pixels whose four panorama taps were all uncovered.
    pub uncovered_pixels: usize,
}

impl SkySample {
    /// Set when any output pixel fell back to the fill value.
    pub fn warning(&self) -> bool {
        self.uncovered_pixels > 0
    }
}

/// Samples the panorama along every pixel-center ray of `cam`.
pub fn sample_background(pano: &SkyPanorama, cam: &Camera, fill: f64) -> SkySample {
    let c = pano.channels();
    let rot = *cam.world_from_camera().rotation();
    let rows: Vec<(Vec<f64>, usize)> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; cam.width * c];
            let mut uncovered = 0;
            for x in 0..cam.width {
                let d = rot * cam.camera_ray(x as f64 + 0.5, y as f64 + 0.5);
                let (u, v) = dir_to_pixel(&d, pano.width(), pano.height()).expect("camera rays are nonzero");
                if !pano.sample(u, v, fill, &mut row[x * c..(x + 1) * c]) {
                    uncovered += 1;
                }
            }
            (row, uncovered)
        })
        .collect();
    let mut data = Vec::with_capacity(cam.pixel_count() * c);
    let mut uncovered_pixels = 0;
    for (row, u) in rows {
        data.extend(row);
        uncovered_pixels += u;
    }
    SkySample {
        image: Raster::from_vec(cam.width, cam.height, c, data).expect("shape matches"),
        uncovered_pixels,
    }
}

/// Maps sampled panorama features to RGB.
pub trait SkyDecoder {
    fn decode(&self, features: &Raster) -> Result<Raster>;
}

/// Passes stored RGB through unchanged.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDecoder;

impl SkyDecoder for IdentityDecoder {
    fn decode(&self, features: &Raster) -> Result<Raster> {
        if features.channels() != 3 {
            return Err(Error::invalid_argument(format!(
                "identity sky decoder needs 3 channels, got {}",
                features.channels()
            )));
        }
        Ok(features.clone())
    }
}
