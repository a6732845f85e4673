//! Training losses and evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::renderer::RenderTarget;
use crate::{Error, Raster, Result, SparseVoxelGrid};

pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;
/// Probability floor applied before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub depth: f64,
    pub color_l1: f64,
    pub alpha_l1: f64,
    pub ssim: f64,
    pub lpips: f64,
    pub focal_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            depth: 1.0,
            color_l1: 0.9,
            alpha_l1: 1.0,
            ssim: 0.1,
            lpips: 0.6,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.depth, self.color_l1, self.alpha_l1, self.ssim, self.lpips, self.focal_gamma];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid_argument("loss weights must be finite and nonnegative"));
        }
        Ok(())
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-5 {
        return Err(Error::invalid_argument(format!("prediction is not a distribution (sum {sum})")));
    }
    Ok(())
}

/// Mean of `-w_c (1 - p_c)^γ ln p_c` over the entries with a target class
/// `c`; entries whose target is `None` are ignored. `p_c` is floored at
/// [`PROB_FLOOR`]. Returns 0 when nothing is supervised.
pub fn focal_loss(
    predictions: &[&[f64]],
    targets: &[Option<usize>],
    gamma: f64,
    class_weights: Option<&[f64]>,
) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::invalid_argument("one target per prediction is required"));
    }
    if !(gamma >= 0.0) {
        return Err(Error::invalid_argument(format!("focal gamma must be nonnegative, got {gamma}")));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in predictions.iter().zip(targets) {
        check_distribution(p)?;
        let Some(c) = *t else { continue };
        if c >= p.len() {
            return Err(Error::invalid_argument(format!("target class {c} outside {} classes", p.len())));
        }
        let w = match class_weights {
            Some(ws) => *ws
                .get(c)
                .ok_or_else(|| Error::invalid_argument("class weights shorter than the class count"))?,
            None => 1.0,
        };
        let pc = p[c].max(PROB_FLOOR);
        sum += -w * (1.0 - pc).powf(gamma) * pc.ln();
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Mean negative log-likelihood, with the same floor and ignore rule as
/// [`focal_loss`].
pub fn cross_entropy(predictions: &[&[f64]], targets: &[Option<usize>]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::invalid_argument("one target per prediction is required"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in predictions.iter().zip(targets) {
        check_distribution(p)?;
        let Some(c) = *t else { continue };
        if c >= p.len() {
            return Err(Error::invalid_argument(format!("target class {c} outside {} classes", p.len())));
        }
        sum += -p[c].max(PROB_FLOOR).ln();
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

fn check_same_shape(a: &Raster, b: &Raster, what: &str) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::invalid_argument(format!(
            "{what}: shapes differ ({}x{}x{} vs {}x{}x{})",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )))
    }
}

pub fn mean_abs_error(a: &Raster, b: &Raster) -> Result<f64> {
    check_same_shape(a, b, "L1")?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

pub fn mean_squared_error(a: &Raster, b: &Raster) -> Result<f64> {
    check_same_shape(a, b, "MSE")?;
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio for unit-range images; `+∞` when identical.
pub fn psnr(a: &Raster, b: &Raster) -> Result<f64> {
    Ok(psnr_from_mse(mean_squared_error(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Normalized 1D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of one channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over every fully contained 11×11 Gaussian window (σ = 1.5),
/// averaged over channels.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    check_same_shape(a, b, "SSIM")?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid_argument(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..ch {
        let x = a.channel(c).into_vec();
        let y = b.channel(c).into_vec();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, ow, oh) = filter_valid(&x, w, h, &k);
        let (my, _, _) = filter_valid(&y, w, h, &k);
        let (sxx, _, _) = filter_valid(&xx, w, h, &k);
        let (syy, _, _) = filter_valid(&yy, w, h, &k);
        let (sxy, _, _) = filter_valid(&xy, w, h, &k);
        let mut sum = 0.0;
        for i in 0..ow * oh {
            sum += ssim_window(mx[i], my[i], sxx[i] - mx[i] * mx[i], syy[i] - my[i] * my[i], sxy[i] - mx[i] * my[i]);
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / ch as f64)
}

/// SSIM of one window from its local moments.
pub fn ssim_window(mu_x: f64, mu_y: f64, var_x: f64, var_y: f64, cov: f64) -> f64 {
    ((2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2))
}

/// Total appearance loss and its weighted terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AppearanceLoss {
    pub total: f64,
    pub color_l1: f64,
    pub alpha_l1: f64,
    pub ssim: f64,
    pub lpips: f64,
}

/// Perceptual distance supplied by the caller.
pub type LpipsHook<'a> = &'a dyn Fn(&Raster, &Raster) -> f64;

/// `λ₁·L1(color, gt) + λ₂·L1(alpha, mask) + λ_SSIM·(1 − SSIM) + λ_LPIPS·hook`.
/// `mask` is 1 on non-sky pixels, matching the accumulated opacity. The
/// SSIM term is 0 for images smaller than the SSIM window; the perceptual
/// term is 0 without a hook.
pub fn appearance_loss(
    pred: &RenderTarget,
    gt: &Raster,
    mask: &Raster,
    weights: &LossWeights,
    lpips: Option<LpipsHook<'_>>,
) -> Result<AppearanceLoss> {
    weights.validate()?;
    let color_l1 = weights.color_l1 * mean_abs_error(&pred.color, gt)?;
    let alpha_l1 = weights.alpha_l1 * mean_abs_error(&pred.alpha, mask)?;
    let ssim_term = if gt.width() >= SSIM_WINDOW && gt.height() >= SSIM_WINDOW {
        weights.ssim * (1.0 - ssim(&pred.color, gt)?)
    } else {
        0.0
    };
    let lpips_term = lpips.map_or(0.0, |f| weights.lpips * f(&pred.color, gt));
    Ok(AppearanceLoss {
        total: color_l1 + alpha_l1 + ssim_term + lpips_term,
        color_l1,
        alpha_l1,
        ssim: ssim_term,
        lpips: lpips_term,
    })
}

/// Symmetric mean nearest-neighbour distance between occupied voxel
/// centroids, in voxel units. Grids with a common origin are compared on
/// integer coordinates, so the result is exact up to the final square roots.
pub fn voxel_chamfer(pred: &SparseVoxelGrid, gt: &SparseVoxelGrid) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::invalid_input("Chamfer distance needs two non-empty grids"));
    }
    let (sa, sb) = (pred.voxel_size(), gt.voxel_size());
    if (sa - sb).abs() > 1e-12 * sa.max(sb) {
        return Err(Error::invalid_argument(format!("voxel sizes differ: {sa} vs {sb}")));
    }
    // offset of gt's lattice relative to pred's, in voxel units
    let shift = (gt.meta().origin - pred.meta().origin) / sa;
    let a: Vec<[f64; 3]> = pred.coords().iter().map(|c| c.as_array().map(f64::from)).collect();
    let b: Vec<[f64; 3]> = gt
        .coords()
        .iter()
        .map(|c| {
            let v = c.as_array();
            [v[0] as f64 + shift.x, v[1] as f64 + shift.y, v[2] as f64 + shift.z]
        })
        .collect();
    Ok(0.5 * (directed_mean(&a, &b) + directed_mean(&b, &a)))
}

fn directed_mean(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    use rayon::prelude::*;
    let sum: f64 = from
        .par_iter()
        .map(|p| {
            to.iter()
                .map(|q| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    sum / from.len() as f64
}

fn check_alpha_bar(alpha_bar: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha_bar) {
        Ok(())
    } else {
        Err(Error::invalid_argument(format!("alpha_bar must lie in [0, 1], got {alpha_bar}")))
    }
}

/// `√ᾱ·ε − √(1−ᾱ)·x`.
pub fn v_target(x: &[f64], noise: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    check_alpha_bar(alpha_bar)?;
    if x.len() != noise.len() {
        return Err(Error::invalid_argument("signal and noise lengths differ"));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(x.iter().zip(noise).map(|(x, e)| a * e - b * x).collect())
}

/// `√ᾱ·x + √(1−ᾱ)·ε`.
pub fn noised(x: &[f64], noise: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    check_alpha_bar(alpha_bar)?;
    if x.len() != noise.len() {
        return Err(Error::invalid_argument("signal and noise lengths differ"));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(x.iter().zip(noise).map(|(x, e)| a * x + b * e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_grid::GridMeta;
    use crate::{Vec3, VoxelCoord};

    #[test]
    fn focal_examples() {
        let p = [0.5, 0.5];
        let l = focal_loss(&[&p], &[Some(0)], 2.0, None).unwrap();
        assert!((l - 0.25 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(focal_loss(&[&[1.0, 0.0]], &[Some(0)], 2.0, None).unwrap(), 0.0);
        assert_eq!(focal_loss(&[&p], &[None], 2.0, None).unwrap(), 0.0);
        let z = focal_loss(&[&[1.0, 0.0]], &[Some(1)], 0.0, None).unwrap();
        assert!((z + PROB_FLOOR.ln()).abs() < 1e-12);
        assert!(focal_loss(&[&[0.4, 0.4]], &[Some(0)], 2.0, None).is_err());
    }

    #[test]
    fn psnr_values() {
        assert_eq!(psnr_from_mse(0.01), 20.0);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        let a = Raster::filled(2, 2, 1, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_identical_and_negated() {
        let a = Raster::from_vec(12, 12, 1, (0..144).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = Raster::from_vec(12, 12, 1, a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&a, &neg).unwrap() < 1.0);
        assert!(ssim(&Raster::new(5, 5, 1), &Raster::new(5, 5, 1)).is_err());
    }

    #[test]
    fn chamfer_three_four_five() {
        let meta = GridMeta::new(Vec3::zeros(), 0.1).unwrap();
        let a = SparseVoxelGrid::from_coords(meta, [VoxelCoord::new(0, 0, 0)]);
        let b = SparseVoxelGrid::from_coords(meta, [VoxelCoord::new(3, 4, 0)]);
        assert_eq!(voxel_chamfer(&a, &b).unwrap(), 5.0);
        assert_eq!(voxel_chamfer(&a, &a).unwrap(), 0.0);
        assert!(voxel_chamfer(&a, &SparseVoxelGrid::empty(meta)).is_err());
    }

    #[test]
    fn v_target_endpoints() {
        let x = [1.0, -2.0];
        let e = [0.5, 0.25];
        assert_eq!(v_target(&x, &e, 1.0).unwrap(), e.to_vec());
        assert_eq!(v_target(&x, &e, 0.0).unwrap(), vec![-1.0, 2.0]);
        assert!(v_target(&x, &e, 1.5).is_err());
    }

    #[test]
    fn appearance_constant_offset() {
        let gt = Raster::filled(4, 4, 3, 0.5);
        let mask = Raster::filled(4, 4, 1, 1.0);
        let pred = RenderTarget {
            color: Raster::filled(4, 4, 3, 0.6),
            alpha: mask.clone(),
        };
        let l = appearance_loss(&pred, &gt, &mask, &LossWeights::default(), None).unwrap();
        assert!((l.total - 0.09).abs() < 1e-12);
        let same = RenderTarget {
            color: gt.clone(),
            alpha: mask.clone(),
        };
        assert_eq!(appearance_loss(&same, &gt, &mask, &LossWeights::default(), None).unwrap().total, 0.0);
    }
}
