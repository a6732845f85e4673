//! Sparse voxel grids with named per-voxel attribute channels, the two-level
//! coarse/fine hierarchy, voxelization of point clouds, ray traversal and the
//! `.svg2` binary format.
//!
//! Voxel `(i, j, k)` covers the half-open cube
//! `[origin + ijk·s, origin + (ijk + 1)·s)`.

pub mod format;
mod traverse;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use format::{deserialize, serialize, MAGIC, VERSION};
pub use traverse::{walk_cells, RayCell};

use crate::{Error, LabeledPointCloud, Result, Vec3};

/// Channel holding per-voxel semantic logits (one-hot for hard labels).
pub const SEMANTIC_CHANNEL: &str = "semantic_logits";
/// Channel holding generic per-voxel features (e.g. unprojected image features).
pub const FEATURE_CHANNEL: &str = "feature";
/// Channel holding `14·M` raw Gaussian parameters per voxel.
pub const RAW_GAUSSIAN_CHANNEL: &str = "raw_gaussians";

const KNOWN_CHANNELS: [&str; 3] = [SEMANTIC_CHANNEL, FEATURE_CHANNEL, RAW_GAUSSIAN_CHANNEL];

/// Level ratio between the coarse and fine grids of a hierarchy.
pub const DEFAULT_SUBDIVISION: u32 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelCoord {
    pub i: i32,
    pub j: i32,
    pub k: i32,
}

impl VoxelCoord {
    pub const fn new(i: i32, j: i32, k: i32) -> Self {
        Self { i, j, k }
    }

    pub fn as_array(self) -> [i32; 3] {
        [self.i, self.j, self.k]
    }

    pub fn from_array(a: [i32; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Parent coordinate at a grid `factor` times coarser.
    pub fn div_floor(self, factor: i32) -> Self {
        Self::new(
            self.i.div_euclid(factor),
            self.j.div_euclid(factor),
            self.k.div_euclid(factor),
        )
    }

    pub fn min(self, o: Self) -> Self {
        Self::new(self.i.min(o.i), self.j.min(o.j), self.k.min(o.k))
    }

    pub fn max(self, o: Self) -> Self {
        Self::new(self.i.max(o.i), self.j.max(o.j), self.k.max(o.k))
    }
}

/// Axis-aligned box of voxel indices, `min` inclusive, `max` exclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub min: VoxelCoord,
    pub max: VoxelCoord,
}

impl Extent {
    pub fn new(min: VoxelCoord, max: VoxelCoord) -> Result<Self> {
        if min.i >= max.i || min.j >= max.j || min.k >= max.k {
            return Err(Error::invalid_argument(format!(
                "empty extent {min:?}..{max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    /// Cube `[0, n)³`.
    pub fn cube(n: i32) -> Result<Self> {
        Self::new(VoxelCoord::new(0, 0, 0), VoxelCoord::new(n, n, n))
    }

    pub fn contains(&self, c: VoxelCoord) -> bool {
        (self.min.i..self.max.i).contains(&c.i)
            && (self.min.j..self.max.j).contains(&c.j)
            && (self.min.k..self.max.k).contains(&c.k)
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            (self.max.i - self.min.i) as usize,
            (self.max.j - self.min.j) as usize,
            (self.max.k - self.min.k) as usize,
        ]
    }

    pub fn volume(&self) -> usize {
        self.dims().iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub origin: Vec3,
    pub voxel_size: f64,
    #[serde(default)]
    pub extent: Option<Extent>,
}

impl GridMeta {
    pub fn new(origin: Vec3, voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::invalid_argument(format!(
                "voxel size must be positive and finite, got {voxel_size}"
            )));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid_argument("grid origin must be finite"));
        }
        Ok(Self {
            origin,
            voxel_size,
            extent: None,
        })
    }

    pub fn with_extent(mut self, extent: Extent) -> Self {
        self.extent = Some(extent);
        self
    }

    /// Voxel containing `p` under the half-open convention. `None` when the
    /// index does not fit in `i32` or `p` is not finite.
    pub fn voxel_of(&self, p: &Vec3) -> Option<VoxelCoord> {
        let mut idx = [0i32; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !f.is_finite() || f < i32::MIN as f64 || f > i32::MAX as f64 {
                return None;
            }
            idx[a] = f as i32;
        }
        Some(VoxelCoord::from_array(idx))
    }

    /// `origin + (ijk + 0.5)·s`.
    pub fn centroid(&self, c: VoxelCoord) -> Vec3 {
        let s = self.voxel_size;
        Vec3::new(
            self.origin.x + (c.i as f64 + 0.5) * s,
            self.origin.y + (c.j as f64 + 0.5) * s,
            self.origin.z + (c.k as f64 + 0.5) * s,
        )
    }

    pub fn min_corner(&self, c: VoxelCoord) -> Vec3 {
        let s = self.voxel_size;
        Vec3::new(
            self.origin.x + c.i as f64 * s,
            self.origin.y + c.j as f64 * s,
            self.origin.z + c.k as f64 * s,
        )
    }

    pub fn max_corner(&self, c: VoxelCoord) -> Vec3 {
        self.min_corner(VoxelCoord::new(c.i + 1, c.j + 1, c.k + 1))
    }

    pub fn in_extent(&self, c: VoxelCoord) -> bool {
        self.extent.map_or(true, |e| e.contains(c))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelSpec {
    name: String,
    width: usize,
}

impl ChannelSpec {
    /// Channel names are restricted to the built-in set or user extensions
    /// prefixed with `x_`.
    pub fn new(name: impl Into<String>, width: usize) -> Result<Self> {
        let name = name.into();
        if !is_known_channel(&name) {
            return Err(Error::invalid_argument(format!("unknown channel '{name}'")));
        }
        if width == 0 {
            return Err(Error::invalid_argument(format!("channel '{name}' has zero width")));
        }
        Ok(Self { name, width })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

pub(crate) fn is_known_channel(name: &str) -> bool {
    KNOWN_CHANNELS.contains(&name) || (name.len() > 2 && name.starts_with("x_"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    spec: ChannelSpec,
    data: Vec<f64>,
}

impl Channel {
    pub fn spec(&self) -> &ChannelSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    /// All values, voxel-major in grid order.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn values(&self, voxel: usize) -> &[f64] {
        let w = self.spec.width;
        &self.data[voxel * w..(voxel + 1) * w]
    }
}

/// Immutable sparse grid. Voxels are stored in ascending coordinate order;
/// that order is the canonical voxel index used by every other module.
#[derive(Clone, Debug)]
pub struct SparseVoxelGrid {
    meta: GridMeta,
    coords: Vec<VoxelCoord>,
    lookup: HashMap<VoxelCoord, u32>,
    channels: Vec<Channel>,
    bounds: Option<(VoxelCoord, VoxelCoord)>,
}

impl PartialEq for SparseVoxelGrid {
    fn eq(&self, other: &Self) -> bool {
        self.meta == other.meta && self.coords == other.coords && self.channels == other.channels
    }
}

/// Borrowed view of one occupied voxel.
#[derive(Clone, Copy, Debug)]
pub struct VoxelRecord<'a> {
    grid: &'a SparseVoxelGrid,
    index: usize,
}

impl<'a> VoxelRecord<'a> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn coord(&self) -> VoxelCoord {
        self.grid.coords[self.index]
    }

    pub fn get(&self, channel: &str) -> Option<&'a [f64]> {
        self.grid.channel(channel).map(|c| c.values(self.index))
    }

    pub fn semantic_label(&self) -> Option<u32> {
        self.get(SEMANTIC_CHANNEL).and_then(argmax_label)
    }
}

/// Hard label from a logit vector: index of the maximum, smallest index on
/// ties. An all-zero vector carries no label.
pub fn argmax_label(logits: &[f64]) -> Option<u32> {
    if logits.iter().all(|&v| v == 0.0) {
        return None;
    }
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    Some(best as u32)
}

/// Majority vote over label counts, smallest label on ties. `None` if all
/// counts are zero.
fn majority(counts: &[u32]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (label, &c) in counts.iter().enumerate() {
        if c > 0 && best.map_or(true, |b| c > counts[b]) {
            best = Some(label);
        }
    }
    best
}

fn one_hot(width: usize, label: Option<usize>) -> Vec<f64> {
    let mut v = vec![0.0; width];
    if let Some(l) = label {
        v[l] = 1.0;
    }
    v
}

impl SparseVoxelGrid {
    pub fn empty(meta: GridMeta) -> Self {
        Self {
            meta,
            coords: Vec::new(),
            lookup: HashMap::new(),
            channels: Vec::new(),
            bounds: None,
        }
    }

    /// Occupancy-only grid. Duplicate coordinates collapse to one voxel.
    pub fn from_coords(meta: GridMeta, coords: impl IntoIterator<Item = VoxelCoord>) -> Self {
        let mut coords: Vec<VoxelCoord> = coords.into_iter().collect();
        coords.sort_unstable();
        coords.dedup();
        Self::from_sorted_parts(meta, coords, Vec::new())
    }

    fn from_sorted_parts(meta: GridMeta, coords: Vec<VoxelCoord>, channels: Vec<Channel>) -> Self {
        let lookup = coords
            .iter()
            .enumerate()
            .map(|(n, &c)| (c, n as u32))
            .collect();
        let bounds = coords.first().map(|&first| {
            coords
                .iter()
                .fold((first, first), |(lo, hi), &c| (lo.min(c), hi.max(c)))
        });
        Self {
            meta,
            coords,
            lookup,
            channels,
            bounds,
        }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn voxel_size(&self) -> f64 {
        self.meta.voxel_size
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Occupied coordinates in ascending order.
    pub fn coords(&self) -> &[VoxelCoord] {
        &self.coords
    }

    /// Inclusive bounding box of the occupied voxels.
    pub fn bounds(&self) -> Option<(VoxelCoord, VoxelCoord)> {
        self.bounds
    }

    pub fn contains(&self, c: VoxelCoord) -> bool {
        self.lookup.contains_key(&c)
    }

    pub fn index_of(&self, c: VoxelCoord) -> Option<usize> {
        self.lookup.get(&c).map(|&n| n as usize)
    }

    pub fn query(&self, c: VoxelCoord) -> Option<VoxelRecord<'_>> {
        self.index_of(c).map(|index| VoxelRecord { grid: self, index })
    }

    pub fn record(&self, index: usize) -> VoxelRecord<'_> {
        assert!(index < self.len(), "voxel index {index} out of range");
        VoxelRecord { grid: self, index }
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.spec.name == name)
    }

    pub fn centroid(&self, index: usize) -> Vec3 {
        self.meta.centroid(self.coords[index])
    }

    /// Semantic label of every voxel (grid order); all `None` when the grid
    /// has no semantic channel.
    pub fn semantic_labels(&self) -> Vec<Option<u32>> {
        match self.channel(SEMANTIC_CHANNEL) {
            Some(ch) => (0..self.len()).map(|n| argmax_label(ch.values(n))).collect(),
            None => vec![None; self.len()],
        }
    }

    /// Adds (or replaces) a channel. `data` is voxel-major in grid order.
    pub fn with_channel(mut self, spec: ChannelSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.width * self.len() {
            return Err(Error::invalid_argument(format!(
                "channel '{}' needs {} values for {} voxels, got {}",
                spec.name,
                spec.width * self.len(),
                self.len(),
                data.len()
            )));
        }
        self.channels.retain(|c| c.spec.name != spec.name);
        self.channels.push(Channel { spec, data });
        Ok(self)
    }

    pub fn without_channel(mut self, name: &str) -> Self {
        self.channels.retain(|c| c.spec.name != name);
        self
    }

    /// Coarser grid: a coarse voxel is occupied iff any of its `factor³`
    /// children is. The semantic channel becomes the one-hot majority of the
    /// children's labels; every other channel is averaged over the occupied
    /// children. `factor = 1` returns the grid unchanged.
    pub fn coarsen(&self, factor: u32) -> Result<SparseVoxelGrid> {
        if factor == 0 {
            return Err(Error::invalid_argument("coarsening factor must be at least 1"));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let f = factor as i32;
        let mut meta = GridMeta::new(self.meta.origin, self.meta.voxel_size * factor as f64)?;
        meta.extent = self.meta.extent.map(|e| Extent {
            min: e.min.div_floor(f),
            max: VoxelCoord::new(
                (e.max.i - 1).div_euclid(f) + 1,
                (e.max.j - 1).div_euclid(f) + 1,
                (e.max.k - 1).div_euclid(f) + 1,
            ),
        });

        // children of a coarse voxel are contiguous runs after a stable sort
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&n| (self.coords[n].div_floor(f), n));
        let labels = self.semantic_labels();

        let mut coarse_coords = Vec::new();
        let mut data: Vec<Vec<f64>> = vec![Vec::new(); self.channels.len()];
        let mut start = 0;
        while start < order.len() {
            let parent = self.coords[order[start]].div_floor(f);
            let mut end = start;
            while end < order.len() && self.coords[order[end]].div_floor(f) == parent {
                end += 1;
            }
            let children = &order[start..end];
            coarse_coords.push(parent);
            for (ci, ch) in self.channels.iter().enumerate() {
                let w = ch.width();
                if ch.name() == SEMANTIC_CHANNEL {
                    let mut counts = vec![0u32; w];
                    for &n in children {
                        if let Some(l) = labels[n] {
                            counts[l as usize] += 1;
                        }
                    }
                    data[ci].extend(one_hot(w, majority(&counts)));
                } else {
                    let mut acc = ch.values(children[0]).to_vec();
                    for &n in &children[1..] {
                        for (a, v) in acc.iter_mut().zip(ch.values(n)) {
                            *a += v;
                        }
                    }
                    let count = children.len() as f64;
                    data[ci].extend(acc.into_iter().map(|a| a / count));
                }
            }
            start = end;
        }
        let channels = self
            .channels
            .iter()
            .zip(data)
            .map(|(ch, data)| Channel {
                spec: ch.spec.clone(),
                data,
            })
            .collect();
        Ok(Self::from_sorted_parts(meta, coarse_coords, channels))
    }

    /// First occupied voxel along the ray and the distance at which the ray
    /// enters it (clamped to 0 when the origin is inside).
    pub fn raymarch_first_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<(VoxelCoord, f64)> {
        let (lo, hi) = self.bounds?;
        let mut hit = None;
        walk_cells(&self.meta, lo, hi, origin, dir, 0.0, f64::INFINITY, |cell| {
            if self.contains(cell.coord) {
                hit = Some(cell.coord);
                std::ops::ControlFlow::Break(())
            } else {
                std::ops::ControlFlow::Continue(())
            }
        });
        let coord = hit?;
        let (t_near, _) = crate::geometry::ray_aabb(
            origin,
            dir,
            &self.meta.min_corner(coord),
            &self.meta.max_corner(coord),
        )?;
        Some((coord, t_near.max(0.0)))
    }
}

/// Incremental construction of a [`SparseVoxelGrid`] with a fixed channel
/// schema.
pub struct GridBuilder {
    meta: GridMeta,
    specs: Vec<ChannelSpec>,
    entries: Vec<(VoxelCoord, Vec<f64>)>,
    seen: HashMap<VoxelCoord, ()>,
}

impl GridBuilder {
    pub fn new(meta: GridMeta, specs: Vec<ChannelSpec>) -> Result<Self> {
        for (n, s) in specs.iter().enumerate() {
            if specs[..n].iter().any(|o| o.name == s.name) {
                return Err(Error::invalid_argument(format!("duplicate channel '{}'", s.name)));
            }
        }
        Ok(Self {
            meta,
            specs,
            entries: Vec::new(),
            seen: HashMap::new(),
        })
    }

    /// Inserts a voxel with one value slice per declared channel.
    pub fn insert(&mut self, coord: VoxelCoord, attrs: &[&[f64]]) -> Result<()> {
        if attrs.len() != self.specs.len() {
            return Err(Error::invalid_argument(format!(
                "expected {} channels, got {}",
                self.specs.len(),
                attrs.len()
            )));
        }
        for (spec, values) in self.specs.iter().zip(attrs) {
            if values.len() != spec.width {
                return Err(Error::invalid_argument(format!(
                    "channel '{}' expects width {}, got {}",
                    spec.name,
                    spec.width,
                    values.len()
                )));
            }
        }
        if self.seen.insert(coord, ()).is_some() {
            return Err(Error::invalid_argument(format!("duplicate voxel {coord:?}")));
        }
        self.entries.push((coord, attrs.concat()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn build(mut self) -> SparseVoxelGrid {
        self.entries.sort_unstable_by_key(|(c, _)| *c);
        let mut channels: Vec<Channel> = self
            .specs
            .into_iter()
            .map(|spec| Channel {
                data: Vec::with_capacity(spec.width * self.entries.len()),
                spec,
            })
            .collect();
        let mut coords = Vec::with_capacity(self.entries.len());
        for (coord, values) in self.entries {
            coords.push(coord);
            let mut offset = 0;
            for ch in channels.iter_mut() {
                ch.data.extend_from_slice(&values[offset..offset + ch.spec.width]);
                offset += ch.spec.width;
            }
        }
        SparseVoxelGrid::from_sorted_parts(self.meta, coords, channels)
    }
}

/// Voxelizes a point cloud. A voxel is occupied iff at least one point falls
/// in it; points outside `meta.extent` (when set) are skipped. When the cloud
/// has a class schema the grid gets a one-hot semantic channel holding the
/// majority label of the voxel's labeled points (smallest id on ties, zeros
/// if none of its points is labeled).
pub fn voxelize(points: &LabeledPointCloud, meta: &GridMeta) -> Result<SparseVoxelGrid> {
    GridMeta::new(meta.origin, meta.voxel_size)?;
    points.validate()?;
    let k = points.num_classes;
    let mut buckets: HashMap<VoxelCoord, Vec<u32>> = HashMap::new();
    for (p, label) in points.positions.iter().zip(&points.labels) {
        let Some(c) = meta.voxel_of(p) else { continue };
        if !meta.in_extent(c) {
            continue;
        }
        let counts = buckets.entry(c).or_insert_with(|| vec![0; k]);
        if let Some(l) = label {
            counts[*l as usize] += 1;
        }
    }
    let specs = if k > 0 {
        vec![ChannelSpec::new(SEMANTIC_CHANNEL, k)?]
    } else {
        Vec::new()
    };
    let mut builder = GridBuilder::new(*meta, specs)?;
    for (coord, counts) in buckets {
        if k > 0 {
            builder.insert(coord, &[&one_hot(k, majority(&counts))])?;
        } else {
            builder.insert(coord, &[])?;
        }
    }
    Ok(builder.build())
}

/// Coarse and fine grids where every fine voxel's parent is occupied.
#[derive(Clone, Debug, PartialEq)]
pub struct GridHierarchy {
    pub coarse: SparseVoxelGrid,
    pub fine: SparseVoxelGrid,
    pub factor: u32,
}

impl GridHierarchy {
    /// Derives the coarse level from `fine` with [`SparseVoxelGrid::coarsen`].
    pub fn from_fine(fine: SparseVoxelGrid, factor: u32) -> Result<Self> {
        let coarse = fine.coarsen(factor)?;
        Ok(Self {
            coarse,
            fine,
            factor,
        })
    }

    /// Fine voxels whose parent is missing from the coarse level. Empty for
    /// a valid hierarchy.
    pub fn containment_violations(&self) -> Vec<VoxelCoord> {
        let f = self.factor as i32;
        self.fine
            .coords()
            .iter()
            .copied()
            .filter(|c| !self.coarse.contains(c.div_floor(f)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(s: f64) -> GridMeta {
        GridMeta::new(Vec3::zeros(), s).unwrap()
    }

    #[test]
    fn half_open_voxelization() {
        let cloud = LabeledPointCloud::from_positions(vec![
            Vec3::new(0.05, 0.05, 0.05),
            Vec3::new(-0.01, 0.0, 0.0),
        ]);
        let g = voxelize(&cloud, &meta(0.1)).unwrap();
        assert!(g.contains(VoxelCoord::new(0, 0, 0)));
        assert!(g.contains(VoxelCoord::new(-1, 0, 0)));
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn point_on_face_belongs_to_upper_voxel() {
        let cloud = LabeledPointCloud::from_positions(vec![Vec3::new(0.5, 0.0, 0.0)]);
        let g = voxelize(&cloud, &meta(0.5)).unwrap();
        assert_eq!(g.coords(), &[VoxelCoord::new(1, 0, 0)]);
    }

    #[test]
    fn empty_cloud_gives_empty_grid() {
        let g = voxelize(&LabeledPointCloud::default(), &meta(0.1)).unwrap();
        assert!(g.is_empty());
        assert!(g.query(VoxelCoord::new(5, 5, 5)).is_none());
    }

    #[test]
    fn rejects_nonpositive_voxel_size() {
        assert!(GridMeta::new(Vec3::zeros(), 0.0).is_err());
        assert!(GridMeta::new(Vec3::zeros(), -1.0).is_err());
    }

    #[test]
    fn majority_label_smallest_id_on_tie() {
        let p = Vec3::new(0.01, 0.01, 0.01);
        let cloud = LabeledPointCloud::from_labeled(
            vec![p, p, p, p, p],
            vec![Some(3), Some(1), Some(3), Some(1), None],
            4,
        )
        .unwrap();
        let g = voxelize(&cloud, &meta(0.1)).unwrap();
        let rec = g.query(VoxelCoord::new(0, 0, 0)).unwrap();
        assert_eq!(rec.get(SEMANTIC_CHANNEL).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(rec.semantic_label(), Some(1));
    }

    #[test]
    fn extent_filters_points() {
        let cloud = LabeledPointCloud::from_positions(vec![Vec3::new(0.05, 0.05, 0.05), Vec3::new(5.0, 0.0, 0.0)]);
        let m = meta(0.1).with_extent(Extent::cube(10).unwrap());
        assert_eq!(voxelize(&cloud, &m).unwrap().len(), 1);
    }

    #[test]
    fn coarsen_example_and_identity() {
        let g = SparseVoxelGrid::from_coords(meta(0.1), [VoxelCoord::new(7, 2, 9)]);
        let c = g.coarsen(4).unwrap();
        assert_eq!(c.coords(), &[VoxelCoord::new(1, 0, 2)]);
        assert!((c.voxel_size() - 0.4).abs() < 1e-15);
        assert_eq!(g.coarsen(1).unwrap(), g);
        assert!(matches!(g.coarsen(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn coarsen_negative_coordinates_floor() {
        let g = SparseVoxelGrid::from_coords(meta(0.1), [VoxelCoord::new(-1, -4, -5)]);
        assert_eq!(g.coarsen(4).unwrap().coords(), &[VoxelCoord::new(-1, -1, -2)]);
    }

    #[test]
    fn coarsen_semantic_majority() {
        let spec = ChannelSpec::new(SEMANTIC_CHANNEL, 3).unwrap();
        let mut b = GridBuilder::new(meta(0.1), vec![spec]).unwrap();
        b.insert(VoxelCoord::new(0, 0, 0), &[&[0.0, 0.0, 1.0]]).unwrap();
        b.insert(VoxelCoord::new(1, 0, 0), &[&[0.0, 1.0, 0.0]]).unwrap();
        b.insert(VoxelCoord::new(2, 0, 0), &[&[0.0, 0.0, 1.0]]).unwrap();
        b.insert(VoxelCoord::new(0, 1, 0), &[&[0.0, 0.0, 0.0]]).unwrap();
        let c = b.build().coarsen(4).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.record(0).semantic_label(), Some(2));
    }

    #[test]
    fn coarsen_averages_other_channels() {
        let spec = ChannelSpec::new(FEATURE_CHANNEL, 1).unwrap();
        let mut b = GridBuilder::new(meta(1.0), vec![spec]).unwrap();
        b.insert(VoxelCoord::new(0, 0, 0), &[&[1.0]]).unwrap();
        b.insert(VoxelCoord::new(1, 1, 1), &[&[3.0]]).unwrap();
        let c = b.build().coarsen(2).unwrap();
        assert_eq!(c.channel(FEATURE_CHANNEL).unwrap().data(), &[2.0]);
    }

    #[test]
    fn builder_rejects_duplicates_and_bad_widths() {
        let spec = ChannelSpec::new(FEATURE_CHANNEL, 2).unwrap();
        let mut b = GridBuilder::new(meta(1.0), vec![spec]).unwrap();
        b.insert(VoxelCoord::new(0, 0, 0), &[&[1.0, 2.0]]).unwrap();
        assert!(b.insert(VoxelCoord::new(0, 0, 0), &[&[1.0, 2.0]]).is_err());
        assert!(b.insert(VoxelCoord::new(1, 0, 0), &[&[1.0]]).is_err());
        assert!(ChannelSpec::new("bogus", 1).is_err());
        assert!(ChannelSpec::new("x_custom", 1).is_ok());
    }

    #[test]
    fn first_hit_along_z() {
        let g = SparseVoxelGrid::from_coords(meta(0.1), [VoxelCoord::new(0, 0, 50)]);
        let (c, t) = g
            .raymarch_first_hit(&Vec3::new(0.05, 0.05, 0.0), &Vec3::z())
            .unwrap();
        assert_eq!(c, VoxelCoord::new(0, 0, 50));
        assert!((t - 5.0).abs() < 1e-12);
        assert!(g
            .raymarch_first_hit(&Vec3::new(0.05, 0.05, 0.0), &-Vec3::z())
            .is_none());
    }

    #[test]
    fn first_hit_from_inside_is_zero() {
        let g = SparseVoxelGrid::from_coords(meta(1.0), [VoxelCoord::new(0, 0, 0), VoxelCoord::new(3, 0, 0)]);
        let (c, t) = g
            .raymarch_first_hit(&Vec3::new(0.5, 0.5, 0.5), &Vec3::x())
            .unwrap();
        assert_eq!((c, t), (VoxelCoord::new(0, 0, 0), 0.0));
    }

    #[test]
    fn first_hit_picks_nearest_of_two() {
        let g = SparseVoxelGrid::from_coords(meta(1.0), [VoxelCoord::new(5, 0, 0), VoxelCoord::new(2, 0, 0)]);
        let (c, t) = g
            .raymarch_first_hit(&Vec3::new(-3.0, 0.5, 0.5), &Vec3::x())
            .unwrap();
        assert_eq!(c, VoxelCoord::new(2, 0, 0));
        assert!((t - 5.0).abs() < 1e-12);
    }
}
