//! LiDAR simulation by ray tracing decoded Gaussians as opaque ellipsoids.
//!
//! A ray hits a Gaussian where it first enters the ellipsoid
//! `(x - μ)ᵀ Σ⁻¹ (x - μ) = λ²`. A uniform cell scaffold limits the
//! candidates to Gaussians whose ellipsoid bounding box overlaps a cell the
//! ray crosses.

use std::collections::HashMap;
use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ply::{PlyColumn, ScalarType};
use crate::sparse_grid::{walk_cells, GridMeta, VoxelCoord};
use crate::{Error, Gaussian, LabeledPointCloud, Mat3, Result, RigidTransform, Vec3, VoxSplatScene};

/// Mahalanobis radius of the hit surface.
pub const DEFAULT_HIT_THRESHOLD: f64 = 2.0;
pub const DEFAULT_MAX_RANGE: f64 = 90.0;
pub const DEFAULT_ELEVATION_COUNT: usize = 64;
pub const DEFAULT_AZIMUTH_COUNT: usize = 900;
pub const DEFAULT_ELEVATION_MIN_DEG: f64 = -25.0;
pub const DEFAULT_ELEVATION_MAX_DEG: f64 = 5.0;

/// Gaussians whose bounding box spans more cells than this are tested on
/// every ray instead of being binned.
const MAX_CELLS_PER_GAUSSIAN: i64 = 4096;

/// Sensor ray directions (sensor frame: x forward, y left, z up).
#[derive(Clone, Debug, PartialEq)]
pub struct ScanPattern {
    directions: Vec<Vec3>,
    azimuth_count: usize,
    elevation_count: usize,
    max_range: f64,
}

/// JSON form of a scan pattern: either rings or an explicit direction list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanPatternConfig {
    pub elevation_count: usize,
    pub azimuth_count: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub max_range: f64,
    pub directions: Option<Vec<[f64; 3]>>,
}

impl Default for ScanPatternConfig {
    fn default() -> Self {
        Self {
            elevation_count: DEFAULT_ELEVATION_COUNT,
            azimuth_count: DEFAULT_AZIMUTH_COUNT,
            elevation_min_deg: DEFAULT_ELEVATION_MIN_DEG,
            elevation_max_deg: DEFAULT_ELEVATION_MAX_DEG,
            max_range: DEFAULT_MAX_RANGE,
            directions: None,
        }
    }
}

impl ScanPatternConfig {
    pub fn build(&self) -> Result<ScanPattern> {
        match &self.directions {
            Some(dirs) => ScanPattern::from_directions(dirs.iter().map(|d| Vec3::from(*d)).collect(), self.max_range),
            None => ScanPattern::rings(
                self.elevation_count,
                self.azimuth_count,
                self.elevation_min_deg.to_radians(),
                self.elevation_max_deg.to_radians(),
                self.max_range,
            ),
        }
    }
}

impl ScanPattern {
    /// Spinning pattern: `azimuth_count` columns starting at forward, each
    /// with `elevation_count` beams spaced evenly over the closed elevation
    /// range. Directions are stored column by column.
    pub fn rings(
        elevation_count: usize,
        azimuth_count: usize,
        elevation_min: f64,
        elevation_max: f64,
        max_range: f64,
    ) -> Result<Self> {
        if elevation_count == 0 || azimuth_count == 0 {
            return Err(Error::invalid_argument("scan pattern needs at least one azimuth and one elevation"));
        }
        if !(elevation_min <= elevation_max) {
            return Err(Error::invalid_argument("elevation range is empty"));
        }
        check_range(max_range)?;
        let mut directions = Vec::with_capacity(elevation_count * azimuth_count);
        for a in 0..azimuth_count {
            let az = 2.0 * std::f64::consts::PI * a as f64 / azimuth_count as f64;
            for e in 0..elevation_count {
                let el = if elevation_count == 1 {
                    elevation_min
                } else {
                    elevation_min + (elevation_max - elevation_min) * e as f64 / (elevation_count - 1) as f64
                };
                directions.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        Ok(Self {
            directions,
            azimuth_count,
            elevation_count,
            max_range,
        })
    }

    pub fn default_spinning() -> Self {
        ScanPatternConfig::default().build().expect("default pattern is valid")
    }

    /// Arbitrary directions; each is normalized.
    pub fn from_directions(directions: Vec<Vec3>, max_range: f64) -> Result<Self> {
        check_range(max_range)?;
        if directions.is_empty() {
            return Err(Error::invalid_argument("scan pattern needs at least one direction"));
        }
        let directions = directions
            .into_iter()
            .map(|d| {
                let n = d.norm();
                if n > 0.0 && n.is_finite() {
                    Ok(d / n)
                } else {
                    Err(Error::invalid_argument("scan direction must be a nonzero finite vector"))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let n = directions.len();
        Ok(Self {
            directions,
            azimuth_count: n,
            elevation_count: 1,
            max_range,
        })
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn azimuth_count(&self) -> usize {
        self.azimuth_count
    }

    pub fn elevation_count(&self) -> usize {
        self.elevation_count
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }
}

fn check_range(max_range: f64) -> Result<()> {
    if max_range > 0.0 && max_range.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid_argument(format!("max range must be positive, got {max_range}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarHit {
    pub range: f64,
    pub point: Vec3,
    pub gaussian: usize,
}

/// Entry distance of a ray into one Gaussian's hit ellipsoid.
#[derive(Clone, Debug)]
pub(crate) struct Ellipsoid {
    mean: Vec3,
    precision: Mat3,
}

impl Ellipsoid {
    /// `None` when a scale is zero or not finite.
    pub(crate) fn from_gaussian(g: &Gaussian) -> Option<Self> {
        if g.scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return None;
        }
        let r = g.rotation_matrix();
        let inv = Mat3::from_diagonal(&g.scale.map(|s| 1.0 / (s * s)));
        Some(Self {
            mean: g.mean,
            precision: r * inv * r.transpose(),
        })
    }

    /// Smallest `t > 0` where the ray enters the level-`lambda` surface. A
    /// ray starting inside the surface does not hit it.
    pub(crate) fn entry(&self, origin: &Vec3, dir: &Vec3, lambda: f64) -> Option<f64> {
        let o = origin - self.mean;
        let pd = self.precision * dir;
        let a = dir.dot(&pd);
        let b = 2.0 * o.dot(&pd);
        let c = o.dot(&(self.precision * o)) - lambda * lambda;
        if c <= 0.0 || !(a > 0.0) {
            return None;
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return None;
        }
        // c > 0 keeps both roots on one side of the origin; the stable form
        // avoids cancellation for the near root.
        if b >= 0.0 {
            return None;
        }
        let q = -0.5 * (b - disc.sqrt());
        Some(c / q)
    }
}

/// Ray tracer over a fixed Gaussian set.
#[derive(Clone, Debug)]
pub struct LidarTracer {
    ellipsoids: Vec<Option<Ellipsoid>>,
    labels: Vec<Option<u32>>,
    lambda: f64,
    meta: GridMeta,
    cells: HashMap<VoxelCoord, Vec<u32>>,
    bounds: Option<(VoxelCoord, VoxelCoord)>,
    unbinned: Vec<u32>,
}

impl LidarTracer {
    /// Scaffold with cells of `meta` over `gaussians`; `labels` gives each
    /// Gaussian's semantic label.
    pub fn new(gaussians: &[Gaussian], labels: Vec<Option<u32>>, meta: GridMeta, lambda: f64) -> Result<Self> {
        if labels.len() != gaussians.len() {
            return Err(Error::invalid_argument("one label per Gaussian is required"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid_argument(format!("hit threshold must be positive, got {lambda}")));
        }
        let ellipsoids: Vec<Option<Ellipsoid>> = gaussians.iter().map(Ellipsoid::from_gaussian).collect();
        let mut cells: HashMap<VoxelCoord, Vec<u32>> = HashMap::new();
        let mut unbinned = Vec::new();
        let mut bounds: Option<(VoxelCoord, VoxelCoord)> = None;
        let pad = 1e-9 * meta.voxel_size;
        for (n, g) in gaussians.iter().enumerate() {
            if ellipsoids[n].is_none() {
                continue;
            }
            let cov = g.covariance();
            let half = Vec3::from_fn(|a, _| lambda * cov[(a, a)].sqrt() + pad);
            let range = meta
                .voxel_of(&(g.mean - half))
                .zip(meta.voxel_of(&(g.mean + half)));
            let Some((lo, hi)) = range else {
                unbinned.push(n as u32);
                continue;
            };
            let count: i64 = (0..3)
                .map(|a| hi.as_array()[a] as i64 - lo.as_array()[a] as i64 + 1)
                .product();
            if count > MAX_CELLS_PER_GAUSSIAN {
                unbinned.push(n as u32);
                continue;
            }
            for k in lo.k..=hi.k {
                for j in lo.j..=hi.j {
                    for i in lo.i..=hi.i {
                        cells.entry(VoxelCoord::new(i, j, k)).or_default().push(n as u32);
                    }
                }
            }
            bounds = Some(match bounds {
                None => (lo, hi),
                Some((a, b)) => (a.min(lo), b.max(hi)),
            });
        }
        Ok(Self {
            ellipsoids,
            labels,
            lambda,
            meta,
            cells,
            bounds,
            unbinned,
        })
    }

    /// Tracer over a scene's Gaussians with cells the size of its voxels.
    /// Each Gaussian carries the semantic label of its voxel.
    pub fn for_scene(scene: &VoxSplatScene, lambda: f64) -> Result<Self> {
        let grid = scene.grid();
        let voxel_labels = grid.semantic_labels();
        let labels = (0..scene.len()).map(|n| voxel_labels[scene.voxel_of(n)]).collect();
        let meta = GridMeta::new(grid.meta().origin, grid.voxel_size())?;
        Self::new(scene.gaussians(), labels, meta, lambda)
    }

    pub fn hit_threshold(&self) -> f64 {
        self.lambda
    }

    fn offer(&self, n: u32, origin: &Vec3, dir: &Vec3, max_range: f64, best: &mut Option<(f64, u32)>) {
        let Some(e) = &self.ellipsoids[n as usize] else {
            return;
        };
        if let Some(t) = e.entry(origin, dir, self.lambda) {
            if t <= max_range && best.map_or(true, |b| (t, n) < b) {
                *best = Some((t, n));
            }
        }
    }

    /// Nearest hit along a unit direction within `max_range`.
    pub fn trace(&self, origin: &Vec3, dir: &Vec3, max_range: f64) -> Option<LidarHit> {
        let mut best: Option<(f64, u32)> = None;
        for &n in &self.unbinned {
            self.offer(n, origin, dir, max_range, &mut best);
        }
        if let Some((lo, hi)) = self.bounds {
            walk_cells(&self.meta, lo, hi, origin, dir, 0.0, max_range, |cell| {
                if let Some(list) = self.cells.get(&cell.coord) {
                    for &n in list {
                        self.offer(n, origin, dir, max_range, &mut best);
                    }
                }
                // later cells only hold hits beyond this cell's exit
                if best.is_some_and(|(t, _)| t < cell.t_exit) {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            });
        }
        best.map(|(t, n)| LidarHit {
            range: t,
            point: origin + dir * t,
            gaussian: n as usize,
        })
    }

    pub fn label(&self, gaussian: usize) -> Option<u32> {
        self.labels[gaussian]
    }

    /// Traces every pattern direction from the sensor pose. Misses are
    /// omitted; the order of the hits follows the pattern.
    pub fn scan(&self, world_from_sensor: &RigidTransform, pattern: &ScanPattern, num_classes: usize) -> Scan {
        let origin = *world_from_sensor.translation();
        let hits: Vec<Option<LidarHit>> = pattern
            .directions()
            .par_iter()
            .map(|d| {
                let dir = world_from_sensor.transform_vector(d).normalize();
                self.trace(&origin, &dir, pattern.max_range())
            })
            .collect();
        let mut scan = Scan {
            cloud: LabeledPointCloud::new(num_classes),
            ranges: Vec::new(),
            gaussians: Vec::new(),
        };
        for hit in hits.into_iter().flatten() {
            scan.cloud.push(hit.point, self.label(hit.gaussian), 0, None);
            scan.ranges.push(hit.range);
            scan.gaussians.push(hit.gaussian);
        }
        scan
    }
}

/// Simulated returns: points in world frame with parallel ranges and hit
/// Gaussian indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub cloud: LabeledPointCloud,
    pub ranges: Vec<f64>,
    pub gaussians: Vec<usize>,
}

impl Scan {
    /// PLY with `x y z label frame range`.
    pub fn to_ply(&self) -> Result<Vec<u8>> {
        self.cloud
            .to_ply(vec![PlyColumn::new("range", ScalarType::Double, self.ranges.clone())])
    }
}

/// Single-ray convenience that builds a scaffold for the scene.
pub fn trace_ray(scene: &VoxSplatScene, origin: &Vec3, dir: &Vec3, max_range: f64, lambda: f64) -> Result<Option<LidarHit>> {
    let n = dir.norm();
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::invalid_argument(format!("ray direction must be unit length, got norm {n}")));
    }
    Ok(LidarTracer::for_scene(scene, lambda)?.trace(origin, dir, max_range))
}

/// Scans a scene from `world_from_sensor`; hit semantics come from the hit
/// Gaussian's voxel.
pub fn simulate_scan(scene: &VoxSplatScene, world_from_sensor: &RigidTransform, pattern: &ScanPattern, lambda: f64) -> Result<Scan> {
    let tracer = LidarTracer::for_scene(scene, lambda)?;
    let num_classes = scene
        .grid()
        .channel(crate::sparse_grid::SEMANTIC_CHANNEL)
        .map_or(0, |c| c.width());
    Ok(tracer.scan(world_from_sensor, pattern, num_classes))
}
