//! Per-voxel Gaussians: raw parameter records, their activation decoding and
//! the splat PLY interchange format.
//!
//! A raw record has 14 values laid out as
//! `[μ̄x μ̄y μ̄z | ᾱ | s̄x s̄y s̄z | q̄w q̄x q̄y q̄z | r g b]` and decodes to
//!
//! ```text
//! μ = r·tanh(μ̄) + center    α = sigmoid(ᾱ)    s = exp(s̄)
//! R = quat2rot(q̄ / |q̄|)      Σ = R·diag(s)²·Rᵀ
//! ```
//!
//! where `center` is the voxel centroid and `r` bounds how far a Gaussian
//! can drift from it (three voxel sizes by default). The offset is clamped
//! to `OFFSET_LIMIT·r` so that it stays strictly inside the bound once
//! `tanh` rounds to ±1.

use crate::ply::{PlyColumn, PlyData, ScalarType};
use crate::sparse_grid::{ChannelSpec, SparseVoxelGrid, RAW_GAUSSIAN_CHANNEL};
use crate::{Error, Mat3, Result, Vec3};

/// Width of one raw Gaussian record.
pub const RAW_WIDTH: usize = 14;
pub const OFFSET_MEAN: usize = 0;
pub const OFFSET_OPACITY: usize = 3;
pub const OFFSET_SCALE: usize = 4;
pub const OFFSET_ROTATION: usize = 7;
pub const OFFSET_COLOR: usize = 11;

/// The activation fixed point: zero offsets, logits and log-scales with the
/// identity quaternion. Decodes to a unit-scale, axis-aligned Gaussian at the
/// voxel centroid with opacity 0.5 and black color.
pub const NEUTRAL_RECORD: [f64; RAW_WIDTH] = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];

/// Ratio between the center-offset bound `r` and the voxel size.
pub const DEFAULT_RADIUS_FACTOR: f64 = 3.0;

/// Quaternions with a smaller norm cannot be normalized.
pub const MIN_QUATERNION_NORM: f64 = 1e-8;

/// Zeroth-order spherical harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn normalize_quaternion(q: [f64; 4]) -> Result<([f64; 4], f64)> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= MIN_QUATERNION_NORM) {
        return Err(Error::DegenerateQuaternion { norm });
    }
    Ok(([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm], norm))
}

/// Rotation matrix of the quaternion `(w, x, y, z)`, normalized first.
pub fn quat2rot(q: [f64; 4]) -> Result<Mat3> {
    let (q, _) = normalize_quaternion(q)?;
    Ok(unit_quat_to_matrix(q))
}

fn unit_quat_to_matrix([w, x, y, z]: [f64; 4]) -> Mat3 {
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on `R = quat2rot(q)` back to the (unnormalized) `q`.
pub fn quat2rot_backward(q: [f64; 4], d_rot: &Mat3) -> Result<[f64; 4]> {
    let ([w, x, y, z], norm) = normalize_quaternion(q)?;
    let g = |i, j| d_rot[(i, j)];
    let gw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let gx = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
        + z * g(2, 0)
        + w * g(2, 1)
        - 2.0 * x * g(2, 2));
    let gy = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
        - w * g(2, 0)
        + z * g(2, 1)
        - 2.0 * y * g(2, 2));
    let gz = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
        + y * g(1, 2)
        + x * g(2, 0)
        + y * g(2, 1));
    let unit = [w, x, y, z];
    let grad = [gw, gx, gy, gz];
    let dot: f64 = unit.iter().zip(&grad).map(|(a, b)| a * b).sum();
    Ok(std::array::from_fn(|n| (grad[n] - unit[n] * dot) / norm))
}

/// Render-ready Gaussian. `rotation` is a unit quaternion `(w, x, y, z)`;
/// `covariance` is derived from `scale` and `rotation` at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: Vec3,
    pub opacity: f64,
    pub scale: Vec3,
    pub rotation: [f64; 4],
    pub color: [f64; 3],
    covariance: Mat3,
}

impl Gaussian {
    pub fn new(mean: Vec3, opacity: f64, scale: Vec3, rotation: [f64; 4], color: [f64; 3]) -> Result<Self> {
        let (rotation, _) = normalize_quaternion(rotation)?;
        let r = unit_quat_to_matrix(rotation);
        let m = r * Mat3::from_diagonal(&scale);
        Ok(Self {
            mean,
            opacity,
            scale,
            rotation,
            color,
            covariance: m * m.transpose(),
        })
    }

    /// `Σ = σ²I`.
    pub fn isotropic(mean: Vec3, sigma: f64, opacity: f64, color: [f64; 3]) -> Self {
        Self::new(mean, opacity, Vec3::repeat(sigma), [1.0, 0.0, 0.0, 0.0], color)
            .expect("identity quaternion is valid")
    }

    pub fn covariance(&self) -> &Mat3 {
        &self.covariance
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        unit_quat_to_matrix(self.rotation)
    }
}

/// Largest offset, as a fraction of the radius.
pub const OFFSET_LIMIT: f64 = 1.0 - 1e-9;

/// `r·tanh(x)` clamped to `±OFFSET_LIMIT·r`, and its derivative in `x`
/// (zero where clamped).
pub fn bounded_offset(x: f64, r: f64) -> (f64, f64) {
    let t = x.tanh();
    if t.abs() >= OFFSET_LIMIT {
        (OFFSET_LIMIT * r * t.signum(), 0.0)
    } else {
        (r * t, r * (1.0 - t * t))
    }
}

/// Decodes one raw 14-value record around `center`.
pub fn decode_gaussian(raw: &[f64], center: &Vec3, r: f64) -> Result<Gaussian> {
    if raw.len() != RAW_WIDTH {
        return Err(Error::invalid_argument(format!(
            "raw Gaussian record has {} values, expected {RAW_WIDTH}",
            raw.len()
        )));
    }
    if !(r > 0.0) {
        return Err(Error::invalid_argument(format!("offset radius must be positive, got {r}")));
    }
    let mean = Vec3::from_fn(|a, _| bounded_offset(raw[OFFSET_MEAN + a], r).0 + center[a]);
    let opacity = sigmoid(raw[OFFSET_OPACITY]);
    let scale = Vec3::new(raw[4].exp(), raw[5].exp(), raw[6].exp());
    let q = [raw[7], raw[8], raw[9], raw[10]];
    let color = [raw[11], raw[12], raw[13]];
    Gaussian::new(mean, opacity, scale, q, color)
}

/// Raw parameters for `M` Gaussians on each of a grid's voxels, voxel-major
/// in the grid's canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct RawGaussianParams {
    per_voxel: usize,
    data: Vec<f64>,
}

impl RawGaussianParams {
    pub fn new(per_voxel: usize, data: Vec<f64>) -> Result<Self> {
        if per_voxel == 0 {
            return Err(Error::invalid_argument("Gaussians per voxel must be at least 1"));
        }
        if data.len() % (per_voxel * RAW_WIDTH) != 0 {
            return Err(Error::invalid_argument(format!(
                "{} raw values is not a whole number of {}-wide voxel records",
                data.len(),
                per_voxel * RAW_WIDTH
            )));
        }
        Ok(Self { per_voxel, data })
    }

    pub fn zeros(voxels: usize, per_voxel: usize) -> Result<Self> {
        Self::new(per_voxel, vec![0.0; voxels * per_voxel * RAW_WIDTH])
    }

    /// Every record set to [`NEUTRAL_RECORD`].
    pub fn neutral(voxels: usize, per_voxel: usize) -> Result<Self> {
        Self::new(per_voxel, NEUTRAL_RECORD.repeat(voxels * per_voxel))
    }

    pub fn per_voxel(&self) -> usize {
        self.per_voxel
    }

    pub fn voxel_count(&self) -> usize {
        self.data.len() / (self.per_voxel * RAW_WIDTH)
    }

    pub fn gaussian_count(&self) -> usize {
        self.data.len() / RAW_WIDTH
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Record of the `n`-th Gaussian overall (voxel `n / M`).
    pub fn record(&self, n: usize) -> &[f64] {
        &self.data[n * RAW_WIDTH..(n + 1) * RAW_WIDTH]
    }

    pub fn record_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * RAW_WIDTH..(n + 1) * RAW_WIDTH]
    }
}

/// Sparse grid plus its per-voxel Gaussians, raw and decoded.
#[derive(Clone, Debug)]
pub struct VoxSplatScene {
    grid: SparseVoxelGrid,
    raw: RawGaussianParams,
    decoded: Vec<Gaussian>,
    radius: f64,
}

impl VoxSplatScene {
    pub fn default_radius(voxel_size: f64) -> f64 {
        DEFAULT_RADIUS_FACTOR * voxel_size
    }

    /// Decodes every record around its voxel centroid, in grid order.
    pub fn decode(grid: SparseVoxelGrid, raw: RawGaussianParams, radius: f64) -> Result<Self> {
        if raw.voxel_count() != grid.len() {
            return Err(Error::invalid_argument(format!(
                "raw parameters cover {} voxels, grid has {}",
                raw.voxel_count(),
                grid.len()
            )));
        }
        let m = raw.per_voxel();
        let decoded = (0..raw.gaussian_count())
            .map(|n| decode_gaussian(raw.record(n), &grid.centroid(n / m), radius))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            raw,
            decoded,
            radius,
        })
    }

    /// Reads raw parameters from the grid's `raw_gaussians` channel; `M` is
    /// its width divided by 14. The channel is kept on the stored grid.
    pub fn from_grid(grid: SparseVoxelGrid, radius: f64) -> Result<Self> {
        let ch = grid.channel(RAW_GAUSSIAN_CHANNEL).ok_or_else(|| {
            Error::invalid_input(format!("grid has no '{RAW_GAUSSIAN_CHANNEL}' channel"))
        })?;
        if ch.width() % RAW_WIDTH != 0 {
            return Err(Error::invalid_input(format!(
                "'{RAW_GAUSSIAN_CHANNEL}' width {} is not a multiple of {RAW_WIDTH}",
                ch.width()
            )));
        }
        let raw = RawGaussianParams::new(ch.width() / RAW_WIDTH, ch.data().to_vec())?;
        Self::decode(grid, raw, radius)
    }

    /// The grid with the raw parameters attached as the `raw_gaussians`
    /// channel, ready for `.svg2` serialization.
    pub fn to_grid(&self) -> Result<SparseVoxelGrid> {
        let spec = ChannelSpec::new(RAW_GAUSSIAN_CHANNEL, self.raw.per_voxel() * RAW_WIDTH)?;
        self.grid.clone().with_channel(spec, self.raw.data().to_vec())
    }

    pub fn grid(&self) -> &SparseVoxelGrid {
        &self.grid
    }

    pub fn raw(&self) -> &RawGaussianParams {
        &self.raw
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.decoded
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn per_voxel(&self) -> usize {
        self.raw.per_voxel()
    }

    /// Voxel (grid order) that owns Gaussian `n`.
    pub fn voxel_of(&self, n: usize) -> usize {
        n / self.raw.per_voxel()
    }

    pub fn len(&self) -> usize {
        self.decoded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decoded.is_empty()
    }
}

const PLY_REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

/// Opacities are clamped to this distance from 0 and 1 before taking the
/// logit so that saturated Gaussians stay finite on disk.
const OPACITY_EPS: f64 = 1e-15;

/// Writes the conventional splat layout (`x y z nx ny nz f_dc_* opacity
/// scale_* rot_*`) with opacity stored as a logit, scales as logs and color
/// as zeroth-order SH coefficients. Properties are written as `double`.
pub fn export_ply(gaussians: &[Gaussian]) -> Result<Vec<u8>> {
    let col = |name: &str, f: &dyn Fn(&Gaussian) -> f64| {
        PlyColumn::new(name, ScalarType::Double, gaussians.iter().map(f).collect())
    };
    let columns = vec![
        col("x", &|g| g.mean.x),
        col("y", &|g| g.mean.y),
        col("z", &|g| g.mean.z),
        col("nx", &|_| 0.0),
        col("ny", &|_| 0.0),
        col("nz", &|_| 0.0),
        col("f_dc_0", &|g| (g.color[0] - 0.5) / SH_C0),
        col("f_dc_1", &|g| (g.color[1] - 0.5) / SH_C0),
        col("f_dc_2", &|g| (g.color[2] - 0.5) / SH_C0),
        col("opacity", &|g| logit(g.opacity.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS))),
        col("scale_0", &|g| g.scale.x.ln()),
        col("scale_1", &|g| g.scale.y.ln()),
        col("scale_2", &|g| g.scale.z.ln()),
        col("rot_0", &|g| g.rotation[0]),
        col("rot_1", &|g| g.rotation[1]),
        col("rot_2", &|g| g.rotation[2]),
        col("rot_3", &|g| g.rotation[3]),
    ];
    PlyData::new("vertex", columns, vec![])?.to_binary_le()
}

/// Reads a splat PLY (float or double properties, any PLY encoding).
pub fn import_ply(bytes: &[u8]) -> Result<Vec<Gaussian>> {
    let ply = PlyData::parse(bytes)?;
    let cols = PLY_REQUIRED
        .iter()
        .map(|name| ply.require(name))
        .collect::<Result<Vec<_>>>()?;
    (0..ply.len())
        .map(|i| {
            let v = |c: usize| cols[c][i];
            Gaussian::new(
                Vec3::new(v(0), v(1), v(2)),
                sigmoid(v(6)),
                Vec3::new(v(7).exp(), v(8).exp(), v(9).exp()),
                [v(10), v(11), v(12), v(13)],
                [0.5 + SH_C0 * v(3), 0.5 + SH_C0 * v(4), 0.5 + SH_C0 * v(5)],
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_grid::{GridMeta, VoxelCoord};

    #[test]
    fn activation_fixed_points() {
        let g = decode_gaussian(&[0.0; RAW_WIDTH], &Vec3::zeros(), 0.3);
        // zero quaternion is degenerate
        assert!(matches!(g, Err(Error::DegenerateQuaternion { .. })));
        let mut raw = [0.0; RAW_WIDTH];
        raw[OFFSET_ROTATION] = 1.0;
        let g = decode_gaussian(&raw, &Vec3::zeros(), 0.3).unwrap();
        assert_eq!(g.mean, Vec3::zeros());
        assert_eq!(g.opacity, 0.5);
        assert_eq!(g.scale, Vec3::repeat(1.0));
        assert_eq!(*g.covariance(), Mat3::identity());
    }

    #[test]
    fn tanh_saturation_bounds_offset() {
        let mut raw = [0.0; RAW_WIDTH];
        raw[0] = 1e6;
        raw[OFFSET_ROTATION] = 1.0;
        let center = Vec3::new(1.0, 2.0, 3.0);
        let g = decode_gaussian(&raw, &center, 0.3).unwrap();
        assert!((g.mean.x - 1.3).abs() < 1e-9);
        assert!(g.mean.x - center.x < 0.3);
        raw[0] = -40.0;
        let g = decode_gaussian(&raw, &center, 0.3).unwrap();
        assert!(center.x - g.mean.x < 0.3);
    }

    #[test]
    fn quat_x_90() {
        let h = std::f64::consts::FRAC_PI_4;
        let r = quat2rot([h.cos(), h.sin(), 0.0, 0.0]).unwrap();
        let v = r * Vec3::y();
        assert!((v - Vec3::z()).norm() < 1e-12);
        assert!(matches!(quat2rot([0.0; 4]), Err(Error::DegenerateQuaternion { .. })));
    }

    #[test]
    fn quat_backward_matches_finite_difference() {
        let q = [0.3, -0.7, 0.2, 0.5];
        let weights = Mat3::new(0.1, -0.4, 0.7, 1.1, 0.3, -0.2, 0.5, 0.9, -1.3);
        let f = |q: [f64; 4]| quat2rot(q).unwrap().component_mul(&weights).sum();
        let g = quat2rot_backward(q, &weights).unwrap();
        for n in 0..4 {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[n] += h;
            qm[n] -= h;
            let fd = (f(qp) - f(qm)) / (2.0 * h);
            assert!((fd - g[n]).abs() < 1e-7, "component {n}: {fd} vs {}", g[n]);
        }
    }

    #[test]
    fn scene_count_mismatch() {
        let grid = SparseVoxelGrid::from_coords(GridMeta::new(Vec3::zeros(), 0.1).unwrap(), [VoxelCoord::new(0, 0, 0)]);
        let raw = RawGaussianParams::zeros(2, 1).unwrap();
        assert!(matches!(
            VoxSplatScene::decode(grid, raw, 0.3),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn empty_scene() {
        let grid = SparseVoxelGrid::empty(GridMeta::new(Vec3::zeros(), 0.1).unwrap());
        let scene = VoxSplatScene::decode(grid, RawGaussianParams::zeros(0, 3).unwrap(), 0.3).unwrap();
        assert!(scene.is_empty());
    }

    #[test]
    fn grid_channel_round_trip() {
        let grid = SparseVoxelGrid::from_coords(
            GridMeta::new(Vec3::zeros(), 0.1).unwrap(),
            [VoxelCoord::new(0, 0, 0), VoxelCoord::new(2, 1, 0)],
        );
        let mut raw = RawGaussianParams::zeros(2, 2).unwrap();
        for n in 0..4 {
            raw.record_mut(n)[OFFSET_ROTATION] = 1.0;
            raw.record_mut(n)[0] = n as f64 * 0.1;
        }
        let scene = VoxSplatScene::decode(grid, raw, 0.3).unwrap();
        let again = VoxSplatScene::from_grid(scene.to_grid().unwrap(), 0.3).unwrap();
        assert_eq!(again.gaussians(), scene.gaussians());
        assert_eq!(again.voxel_of(3), 1);
    }

    #[test]
    fn ply_missing_opacity_is_named() {
        let bytes = export_ply(&[Gaussian::isotropic(Vec3::zeros(), 1.0, 0.5, [0.2, 0.3, 0.4])]).unwrap();
        let text = String::from_utf8_lossy(&bytes).replace("property double opacity", "property double opacitz");
        let err = import_ply(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("'opacity'"), "{err}");
    }

    #[test]
    fn ply_identity_round_trip() {
        let g = Gaussian::isotropic(Vec3::zeros(), 1.0, 0.5, [0.2, 0.3, 0.4]);
        let back = import_ply(&export_ply(std::slice::from_ref(&g)).unwrap()).unwrap();
        assert_eq!(back.len(), 1);
        let b = &back[0];
        assert!((b.mean - g.mean).norm() < 1e-6);
        assert!((b.opacity - g.opacity).abs() < 1e-6);
        assert!((b.covariance() - g.covariance()).abs().max() < 1e-6);
        for c in 0..3 {
            assert!((b.color[c] - g.color[c]).abs() < 1e-6);
        }
    }
}
