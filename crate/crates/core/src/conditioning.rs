//! Depth-binned unprojection of per-pixel image features into a voxel grid.
//!
//! Each pixel carries a feature vector `F` and a softmax depth distribution
//! `θ` over `D` bins. For every bin the point at the bin's mid depth along the
//! pixel ray is assigned to its voxel, which receives `θ_d · F`. Bins widen
//! linearly with depth: bin `d` (1-based) has width `d·δ` with
//! `δ = 2 (z_far - z_near) / (D (D + 1))`.
//!
//! Depth here is camera-frame `z`, not distance along the ray.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::sparse_grid::{ChannelSpec, Extent, GridBuilder, GridMeta, SparseVoxelGrid, VoxelCoord, FEATURE_CHANNEL};
use crate::{Camera, Error, Result};

pub const DEFAULT_Z_NEAR: f64 = 0.1;
pub const DEFAULT_Z_FAR: f64 = 90.0;
pub const DEFAULT_BIN_COUNT: usize = 64;
pub const DEFAULT_FEATURE_CHANNELS: usize = 32;
/// Largest extent (in voxels) stored densely.
pub const DEFAULT_DENSE_CAP: usize = 256 * 256 * 256;
/// Tolerance on `Σ_d θ_d = 1`.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-5;

/// Pixels per work partition. Fixed so that the summation order, and hence
/// the floating-point result, does not depend on the thread count.
const PARTITION_PIXELS: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct DepthBins {
    edges: Vec<f64>,
}

impl DepthBins {
    /// Linearly increasing bin widths between `z_near` and `z_far`.
    pub fn linear_increasing(z_near: f64, z_far: f64, count: usize) -> Result<Self> {
        if !(z_near >= 0.0 && z_near < z_far && z_far.is_finite()) {
            return Err(Error::invalid_argument(format!(
                "depth range must satisfy 0 <= z_near < z_far, got [{z_near}, {z_far}]"
            )));
        }
        if count == 0 {
            return Err(Error::invalid_argument("depth bin count must be at least 1"));
        }
        let d = count as f64;
        let delta = 2.0 * (z_far - z_near) / (d * (d + 1.0));
        let mut edges: Vec<f64> = (0..=count)
            .map(|i| {
                let i = i as f64;
                z_near + delta * i * (i + 1.0) / 2.0
            })
            .collect();
        edges[count] = z_far;
        Ok(Self { edges })
    }

    /// Bins from explicit edges; they must be strictly increasing.
    pub fn from_edges(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::invalid_argument("bin edges must be at least two strictly increasing values"));
        }
        Ok(Self { edges })
    }

    pub fn count(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn z_near(&self) -> f64 {
        self.edges[0]
    }

    pub fn z_far(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn midpoint(&self, bin: usize) -> f64 {
        0.5 * (self.edges[bin] + self.edges[bin + 1])
    }

    /// Bin whose half-open interval `[edge_d, edge_{d+1})` contains `depth`.
    pub fn bin_of(&self, depth: f64) -> Option<usize> {
        if !(depth >= self.z_near() && depth < self.z_far()) {
            return None;
        }
        // first edge strictly greater than depth, minus one
        let upper = self.edges.partition_point(|&e| e <= depth);
        Some(upper - 1)
    }
}

/// Per-pixel features and depth distributions of one image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelFeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    bins: usize,
    features: Vec<f64>,
    depth_probs: Vec<f64>,
}

impl PixelFeatureMap {
    /// Validates that every distribution is nonnegative and sums to one.
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        bins: usize,
        features: Vec<f64>,
        depth_probs: Vec<f64>,
    ) -> Result<Self> {
        let pixels = width * height;
        if features.len() != pixels * channels || depth_probs.len() != pixels * bins {
            return Err(Error::invalid_argument(format!(
                "feature map expects {} features and {} depth values, got {} and {}",
                pixels * channels,
                pixels * bins,
                features.len(),
                depth_probs.len()
            )));
        }
        if bins == 0 {
            return Err(Error::invalid_argument("depth distribution needs at least one bin"));
        }
        for (p, theta) in depth_probs.chunks_exact(bins).enumerate() {
            let sum: f64 = theta.iter().sum();
            if theta.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
                return Err(Error::invalid_argument(format!(
                    "depth distribution of pixel {p} is not normalized (sum {sum})"
                )));
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_argument("features must be finite"));
        }
        Ok(Self {
            width,
            height,
            channels,
            bins,
            features,
            depth_probs,
        })
    }

    /// Builds the map from raw depth logits, applying a per-pixel softmax.
    pub fn from_logits(
        width: usize,
        height: usize,
        channels: usize,
        bins: usize,
        features: Vec<f64>,
        depth_logits: &[f64],
    ) -> Result<Self> {
        if bins == 0 || depth_logits.len() % bins != 0 {
            return Err(Error::invalid_argument("depth logits do not divide into bins"));
        }
        let probs = depth_logits.chunks_exact(bins).flat_map(softmax).collect();
        Self::new(width, height, channels, bins, features, probs)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn feature(&self, pixel: usize) -> &[f64] {
        &self.features[pixel * self.channels..(pixel + 1) * self.channels]
    }

    pub fn depth_distribution(&self, pixel: usize) -> &[f64] {
        &self.depth_probs[pixel * self.bins..(pixel + 1) * self.bins]
    }

    /// Element-wise sum of all pixel features.
    pub fn feature_sum(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.channels];
        for f in self.features.chunks_exact(self.channels.max(1)) {
            for (s, v) in sum.iter_mut().zip(f) {
                *s += v;
            }
        }
        sum
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Dense { extent: Extent, data: Vec<f64> },
    Sparse(BTreeMap<VoxelCoord, Vec<f64>>),
}

/// Accumulated voxel features. Dense over the grid extent when it is within
/// the caller's cap, sparse otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionGrid {
    meta: GridMeta,
    channels: usize,
    storage: Storage,
}

/// Sample bookkeeping from [`unproject_features`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UnprojectStats {
    pub samples: usize,
    /// Samples whose voxel fell outside the grid extent.
    pub dropped: usize,
}

impl ConditionGrid {
    fn new(meta: GridMeta, channels: usize, dense_cap: usize) -> Self {
        let storage = match meta.extent {
            Some(extent) if extent.volume() <= dense_cap => Storage::Dense {
                extent,
                data: vec![0.0; extent.volume() * channels],
            },
            _ => Storage::Sparse(BTreeMap::new()),
        };
        Self {
            meta,
            channels,
            storage,
        }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense { .. })
    }

    fn dense_offset(extent: &Extent, c: VoxelCoord) -> usize {
        let [nx, ny, _] = extent.dims();
        let (i, j, k) = (
            (c.i - extent.min.i) as usize,
            (c.j - extent.min.j) as usize,
            (c.k - extent.min.k) as usize,
        );
        (k * ny + j) * nx + i
    }

    fn add(&mut self, c: VoxelCoord, values: &[f64]) {
        let ch = self.channels;
        let slot: &mut [f64] = match &mut self.storage {
            Storage::Dense { extent, data } => {
                let o = Self::dense_offset(extent, c) * ch;
                &mut data[o..o + ch]
            }
            Storage::Sparse(map) => map.entry(c).or_insert_with(|| vec![0.0; ch]),
        };
        for (s, v) in slot.iter_mut().zip(values) {
            *s += v;
        }
    }

    /// Feature of voxel `c`. Inside a dense extent every voxel has a value;
    /// a sparse grid only has the voxels that received samples.
    pub fn get(&self, c: VoxelCoord) -> Option<&[f64]> {
        match &self.storage {
            Storage::Dense { extent, data } => extent.contains(c).then(|| {
                let o = Self::dense_offset(extent, c) * self.channels;
                &data[o..o + self.channels]
            }),
            Storage::Sparse(map) => map.get(&c).map(Vec::as_slice),
        }
    }

    /// Voxels with at least one nonzero feature value, in ascending order.
    pub fn nonzero(&self) -> Vec<(VoxelCoord, &[f64])> {
        let mut out: Vec<(VoxelCoord, &[f64])> = match &self.storage {
            Storage::Dense { extent, data } => {
                let [nx, ny, _] = extent.dims();
                data.chunks_exact(self.channels)
                    .enumerate()
                    .map(|(n, v)| {
                        let (i, j, k) = (n % nx, (n / nx) % ny, n / (nx * ny));
                        (
                            VoxelCoord::new(
                                extent.min.i + i as i32,
                                extent.min.j + j as i32,
                                extent.min.k + k as i32,
                            ),
                            v,
                        )
                    })
                    .collect()
            }
            Storage::Sparse(map) => map.iter().map(|(c, v)| (*c, v.as_slice())).collect(),
        };
        out.retain(|(_, v)| v.iter().any(|&x| x != 0.0));
        out.sort_by_key(|(c, _)| *c);
        out
    }

    /// Element-wise sum over all voxels.
    pub fn total(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.channels];
        let mut add = |v: &[f64]| {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        };
        match &self.storage {
            Storage::Dense { data, .. } => data.chunks_exact(self.channels).for_each(&mut add),
            Storage::Sparse(map) => map.values().for_each(|v| add(v)),
        }
        sum
    }

    /// Sparse grid of the nonzero voxels with a `feature` channel.
    pub fn to_sparse_grid(&self) -> Result<SparseVoxelGrid> {
        let mut builder = GridBuilder::new(self.meta, vec![ChannelSpec::new(FEATURE_CHANNEL, self.channels)?])?;
        for (c, v) in self.nonzero() {
            builder.insert(c, &[v])?;
        }
        Ok(builder.build())
    }
}

/// Lifts every `(image, pixel, bin)` sample to its voxel and accumulates
/// `θ · F` there. Samples outside `meta.extent` are dropped and counted.
pub fn unproject_features(
    images: &[PixelFeatureMap],
    cameras: &[Camera],
    bins: &DepthBins,
    meta: &GridMeta,
    dense_cap: usize,
) -> Result<(ConditionGrid, UnprojectStats)> {
    if images.len() != cameras.len() {
        return Err(Error::invalid_argument(format!(
            "{} feature maps but {} cameras",
            images.len(),
            cameras.len()
        )));
    }
    let channels = images.first().map_or(0, |m| m.channels);
    for (n, (img, cam)) in images.iter().zip(cameras).enumerate() {
        if img.channels != channels {
            return Err(Error::invalid_argument(format!("feature map {n} has {} channels, expected {channels}", img.channels)));
        }
        if img.bins != bins.count() {
            return Err(Error::invalid_argument(format!(
                "feature map {n} has {} depth bins, expected {}",
                img.bins,
                bins.count()
            )));
        }
        if img.width != cam.width || img.height != cam.height {
            return Err(Error::invalid_argument(format!("feature map {n} size differs from its camera")));
        }
    }

    // (image, first pixel, end pixel) partitions in a fixed order
    let mut parts = Vec::new();
    for (n, img) in images.iter().enumerate() {
        let pixels = img.width * img.height;
        let mut start = 0;
        while start < pixels {
            let end = (start + PARTITION_PIXELS).min(pixels);
            parts.push((n, start, end));
            start = end;
        }
    }
    let mids: Vec<f64> = (0..bins.count()).map(|d| bins.midpoint(d)).collect();
    let partials: Vec<(BTreeMap<VoxelCoord, Vec<f64>>, UnprojectStats)> = parts
        .par_iter()
        .map(|&(n, start, end)| {
            let img = &images[n];
            let cam = &cameras[n];
            let mut acc: BTreeMap<VoxelCoord, Vec<f64>> = BTreeMap::new();
            let mut stats = UnprojectStats::default();
            for p in start..end {
                let (u, v) = ((p % img.width) as f64 + 0.5, (p / img.width) as f64 + 0.5);
                let f = img.feature(p);
                for (d, &theta) in img.depth_distribution(p).iter().enumerate() {
                    stats.samples += 1;
                    let point = cam.unproject(u, v, mids[d]);
                    let Some(c) = meta.voxel_of(&point).filter(|&c| meta.in_extent(c)) else {
                        stats.dropped += 1;
                        continue;
                    };
                    let slot = acc.entry(c).or_insert_with(|| vec![0.0; channels]);
                    for (s, x) in slot.iter_mut().zip(f) {
                        *s += theta * x;
                    }
                }
            }
            (acc, stats)
        })
        .collect();

    let mut grid = ConditionGrid::new(*meta, channels, dense_cap);
    let mut stats = UnprojectStats::default();
    for (acc, s) in partials {
        stats.samples += s.samples;
        stats.dropped += s.dropped;
        for (c, v) in acc {
            grid.add(c, &v);
        }
    }
    Ok((grid, stats))
}

/// Per-pixel bin index for depth supervision; `None` marks pixels to ignore
/// (depth outside `[z_near, z_far)` or not finite).
#[derive(Clone, Debug, PartialEq)]
pub struct DepthTargets {
    bins: usize,
    targets: Vec<Option<usize>>,
}

impl DepthTargets {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn targets(&self) -> &[Option<usize>] {
        &self.targets
    }

    pub fn one_hot(&self, pixel: usize) -> Option<Vec<f64>> {
        self.targets[pixel].map(|b| {
            let mut v = vec![0.0; self.bins];
            v[b] = 1.0;
            v
        })
    }
}

pub fn depth_supervision_target(gt_depth: &[f64], bins: &DepthBins) -> DepthTargets {
    DepthTargets {
        bins: bins.count(),
        targets: gt_depth.iter().map(|&z| bins.bin_of(z)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{RigidTransform, Vec3};

    #[test]
    fn two_bin_example() {
        let b = DepthBins::linear_increasing(0.0, 3.0, 2).unwrap();
        assert_eq!(b.edges(), &[0.0, 1.0, 3.0]);
        assert_eq!(b.widths(), vec![1.0, 2.0]);
        let one = DepthBins::linear_increasing(0.0, 10.0, 1).unwrap();
        assert_eq!(one.edges(), &[0.0, 10.0]);
    }

    #[test]
    fn default_bins_are_increasing() {
        let b = DepthBins::linear_increasing(DEFAULT_Z_NEAR, DEFAULT_Z_FAR, DEFAULT_BIN_COUNT).unwrap();
        assert_eq!(b.edges().len(), 65);
        assert_eq!(b.z_near(), 0.1);
        assert_eq!(b.z_far(), 90.0);
        let w = b.widths();
        assert!(w.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn invalid_ranges() {
        assert!(DepthBins::linear_increasing(5.0, 1.0, 4).is_err());
        assert!(DepthBins::linear_increasing(0.1, 90.0, 0).is_err());
        assert!(DepthBins::linear_increasing(-1.0, 90.0, 4).is_err());
    }

    #[test]
    fn supervision_targets() {
        let b = DepthBins::linear_increasing(0.0, 3.0, 2).unwrap();
        let t = depth_supervision_target(&[0.0, 2.0, 3.0, 0.999, f64::NAN, -1.0], &b);
        assert_eq!(t.targets(), &[Some(0), Some(1), None, Some(0), None, None]);
        assert_eq!(t.one_hot(1), Some(vec![0.0, 1.0]));
    }

    #[test]
    fn midpoints_map_to_their_bins() {
        let b = DepthBins::linear_increasing(0.1, 90.0, 64).unwrap();
        for d in 0..64 {
            assert_eq!(b.bin_of(b.midpoint(d)), Some(d));
        }
    }

    #[test]
    fn rejects_unnormalized_distribution() {
        assert!(PixelFeatureMap::new(1, 1, 1, 2, vec![1.0], vec![0.5, 0.6]).is_err());
        assert!(PixelFeatureMap::new(1, 1, 1, 2, vec![1.0], vec![1.5, -0.5]).is_err());
    }

    fn single_pixel_camera() -> Camera {
        Camera::new(1.0, 1.0, 0.5, 0.5, 1, 1, RigidTransform::identity()).unwrap()
    }

    #[test]
    fn degenerate_distribution_hits_one_voxel() {
        let bins = DepthBins::linear_increasing(0.0, 3.0, 2).unwrap();
        let map = PixelFeatureMap::new(1, 1, 1, 2, vec![2.0], vec![1.0, 0.0]).unwrap();
        let meta = GridMeta::new(Vec3::new(-0.5, -0.5, 0.0), 1.0).unwrap();
        let (grid, stats) = unproject_features(&[map], &[single_pixel_camera()], &bins, &meta, DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(stats.dropped, 0);
        // bin 0 midpoint 0.5 -> voxel k = 0, bin 1 midpoint 2.0 -> k = 2
        assert_eq!(grid.get(VoxelCoord::new(0, 0, 0)), Some(&[2.0][..]));
        assert_eq!(grid.get(VoxelCoord::new(0, 0, 2)), Some(&[0.0][..]));
        assert_eq!(grid.nonzero().len(), 1);
    }

    #[test]
    fn split_distribution_conserves_mass() {
        let bins = DepthBins::linear_increasing(0.0, 3.0, 2).unwrap();
        let map = PixelFeatureMap::new(1, 1, 1, 2, vec![1.0], vec![0.25, 0.75]).unwrap();
        let meta = GridMeta::new(Vec3::new(-0.5, -0.5, 0.0), 1.0)
            .unwrap()
            .with_extent(Extent::new(VoxelCoord::new(-2, -2, 0), VoxelCoord::new(2, 2, 4)).unwrap());
        let (grid, _) = unproject_features(&[map], &[single_pixel_camera()], &bins, &meta, DEFAULT_DENSE_CAP).unwrap();
        assert!(grid.is_dense());
        assert_eq!(grid.get(VoxelCoord::new(0, 0, 0)), Some(&[0.25][..]));
        assert_eq!(grid.get(VoxelCoord::new(0, 0, 2)), Some(&[0.75][..]));
        assert_eq!(grid.total(), vec![1.0]);
    }

    #[test]
    fn out_of_extent_samples_are_dropped() {
        let bins = DepthBins::linear_increasing(0.0, 3.0, 2).unwrap();
        let map = PixelFeatureMap::new(1, 1, 1, 2, vec![1.0], vec![0.25, 0.75]).unwrap();
        let meta = GridMeta::new(Vec3::new(-0.5, -0.5, 0.0), 1.0)
            .unwrap()
            .with_extent(Extent::new(VoxelCoord::new(-2, -2, 0), VoxelCoord::new(2, 2, 1)).unwrap());
        let (grid, stats) = unproject_features(&[map], &[single_pixel_camera()], &bins, &meta, DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(stats, UnprojectStats { samples: 2, dropped: 1 });
        assert_eq!(grid.total(), vec![0.25]);
    }

    #[test]
    fn softmax_normalizes() {
        let p = softmax(&[1000.0, 1000.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - p[1]).abs() < 1e-15);
    }
}
