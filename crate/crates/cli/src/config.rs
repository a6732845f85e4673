//! JSON configuration. Every section and field is optional; missing values
//! take the defaults below and unknown keys are rejected.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};
use voxsplat::conditioning::{DepthBins, DEFAULT_BIN_COUNT, DEFAULT_DENSE_CAP, DEFAULT_Z_FAR, DEFAULT_Z_NEAR};
use voxsplat::gaussian::DEFAULT_RADIUS_FACTOR;
use voxsplat::lidar::{ScanPatternConfig, DEFAULT_HIT_THRESHOLD};
use voxsplat::metrics::LossWeights;
use voxsplat::pipeline::{ChunkSpec, DEFAULT_COARSE_VOXEL};
use voxsplat::sky::{DEFAULT_FILL, DEFAULT_PANORAMA_HEIGHT, DEFAULT_PANORAMA_WIDTH};
use voxsplat::sparse_grid::{Extent, DEFAULT_SUBDIVISION};
use voxsplat::{GridMeta, Vec3, VoxelCoord};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub grid: GridConfig,
    pub condition: ConditionConfig,
    pub decode: DecodeConfig,
    pub render: RenderConfig,
    pub sky: SkyConfig,
    pub lidar: LidarConfig,
    pub pipeline: PipelineConfig,
    pub loss: LossWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub voxel_size: f64,
    pub origin: [f64; 3],
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            voxel_size: voxsplat::pipeline::DEFAULT_FINE_VOXEL,
            origin: [0.0; 3],
        }
    }
}

/// Target grid and depth discretization for feature unprojection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditionConfig {
    pub z_near: f64,
    pub z_far: f64,
    pub bins: usize,
    pub voxel_size: f64,
    pub origin: [f64; 3],
    /// Half-open voxel index box `[min, max)`; unbounded when absent.
    pub extent: Option<[[i32; 3]; 2]>,
    pub dense_cap: usize,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self {
            z_near: DEFAULT_Z_NEAR,
            z_far: DEFAULT_Z_FAR,
            bins: DEFAULT_BIN_COUNT,
            voxel_size: DEFAULT_COARSE_VOXEL,
            origin: [0.0; 3],
            extent: None,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

impl ConditionConfig {
    pub fn meta(&self) -> Result<GridMeta> {
        let meta = GridMeta::new(Vec3::from(self.origin), self.voxel_size)?;
        Ok(match self.extent {
            Some([lo, hi]) => meta.with_extent(Extent::new(VoxelCoord::from_array(lo), VoxelCoord::from_array(hi))?),
            None => meta,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub per_voxel: usize,
    /// Offset radius as a multiple of the voxel size.
    pub radius_factor: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            per_voxel: 4,
            radius_factor: DEFAULT_RADIUS_FACTOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Constant background used when no sky panorama is given.
    pub background: [f64; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { background: [0.0; 3] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkyConfig {
    pub height: usize,
    pub width: usize,
    /// Value used where the panorama has no coverage.
    pub fill: f64,
}

impl Default for SkyConfig {
    fn default() -> Self {
        Self {
            height: DEFAULT_PANORAMA_HEIGHT,
            width: DEFAULT_PANORAMA_WIDTH,
            fill: DEFAULT_FILL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarConfig {
    pub hit_threshold: f64,
    pub pattern: ScanPatternConfig,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            hit_threshold: DEFAULT_HIT_THRESHOLD,
            pattern: ScanPatternConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub chunk: ChunkSpec,
    pub coarse_voxel_size: f64,
    pub samples_per_box: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            chunk: ChunkSpec::default(),
            coarse_voxel_size: DEFAULT_COARSE_VOXEL,
            samples_per_box: 600,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Config = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate().with_context(|| format!("validating config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        GridMeta::new(Vec3::from(self.grid.origin), self.grid.voxel_size)?;
        DepthBins::linear_increasing(self.condition.z_near, self.condition.z_far, self.condition.bins)?;
        self.condition.meta()?;
        ensure!(self.decode.per_voxel >= 1, "decode.per_voxel must be at least 1");
        ensure!(
            self.decode.radius_factor > 0.0 && self.decode.radius_factor.is_finite(),
            "decode.radius_factor must be positive"
        );
        ensure!(self.render.background.iter().all(|v| v.is_finite()), "render.background must be finite");
        ensure!(self.sky.height >= 1 && self.sky.width >= 1, "sky panorama size must be at least 1x1");
        ensure!(self.sky.fill.is_finite(), "sky.fill must be finite");
        ensure!(
            self.lidar.hit_threshold > 0.0 && self.lidar.hit_threshold.is_finite(),
            "lidar.hit_threshold must be positive"
        );
        self.lidar.pattern.build()?;
        self.pipeline.chunk.validate()?;
        let ratio = self.pipeline.coarse_voxel_size / self.pipeline.chunk.voxel_size;
        ensure!(
            (ratio - DEFAULT_SUBDIVISION as f64).abs() < 1e-9,
            "pipeline.coarse_voxel_size must be {DEFAULT_SUBDIVISION}x pipeline.chunk.voxel_size"
        );
        self.loss.validate()?;
        Ok(())
    }
}
