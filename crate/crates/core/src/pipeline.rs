//! Ground-truth point-cloud processing: multi-frame accumulation with
//! dynamic-object removal, nearest-neighbour semantic propagation, dynamic
//! object re-insertion, ego-centred chunk cropping and the fine/coarse grid
//! pair used for training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::rotation_z;
use crate::spatial::{NearestIndex, DEFAULT_CELL_SIZE};
use crate::sparse_grid::{voxelize, Extent, GridHierarchy, GridMeta, VoxelCoord, DEFAULT_SUBDIVISION};
use crate::{Camera, Error, LabeledPointCloud, Result, RigidTransform, SparseVoxelGrid, Vec3};

pub const DEFAULT_CHUNK_SIDE: f64 = 102.4;
pub const DEFAULT_FORWARD_FRACTION: f64 = 0.75;
pub const DEFAULT_CHUNK_Z_MIN: f64 = -10.0;
pub const DEFAULT_CHUNK_Z_MAX: f64 = 92.4;
pub const DEFAULT_FINE_VOXEL: f64 = 0.1;
pub const DEFAULT_COARSE_VOXEL: f64 = 0.4;

/// Oriented box of a moving object, in world coordinates. `yaw` rotates the
/// box about world `+z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicBox {
    pub center: [f64; 3],
    pub half_extent: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    pub frame_id: u32,
    pub object_id: u64,
    #[serde(default)]
    pub class_label: Option<u32>,
}

impl DynamicBox {
    pub fn validate(&self) -> Result<()> {
        if self.half_extent.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::invalid_argument(format!(
                "box {} half extents must be positive, got {:?}",
                self.object_id, self.half_extent
            )));
        }
        if self.center.iter().chain([&self.yaw]).any(|v| !v.is_finite()) {
            return Err(Error::invalid_argument(format!("box {} has non-finite pose", self.object_id)));
        }
        Ok(())
    }

    fn to_local(&self, p: &Vec3) -> Vec3 {
        rotation_z(-self.yaw) * (p - Vec3::from(self.center))
    }

    fn to_world(&self, local: &Vec3) -> Vec3 {
        rotation_z(self.yaw) * local + Vec3::from(self.center)
    }

    /// Closed containment test, with every half extent grown by `margin`.
    pub fn contains(&self, p: &Vec3, margin: f64) -> bool {
        let l = self.to_local(p);
        (0..3).all(|a| l[a].abs() <= self.half_extent[a] + margin)
    }
}

/// One sensor sweep.
#[derive(Clone, Debug)]
pub struct Frame {
    pub frame_id: u32,
    pub cloud: LabeledPointCloud,
    pub world_from_sensor: RigidTransform,
}

/// Transforms every frame to world coordinates and concatenates them,
/// dropping points inside a box of the same frame.
pub fn accumulate(frames: &[Frame], boxes: &[DynamicBox]) -> Result<LabeledPointCloud> {
    for b in boxes {
        b.validate()?;
    }
    let mut out = LabeledPointCloud::new(frames.iter().map(|f| f.cloud.num_classes).max().unwrap_or(0));
    for frame in frames {
        frame.cloud.validate()?;
        let own: Vec<&DynamicBox> = boxes.iter().filter(|b| b.frame_id == frame.frame_id).collect();
        let mut world = frame.cloud.clone();
        for p in world.positions.iter_mut() {
            *p = frame.world_from_sensor.transform_point(p);
        }
        world.frame_ids.iter_mut().for_each(|f| *f = frame.frame_id);
        let kept = world.filter_indices(|i| !own.iter().any(|b| b.contains(&world.positions[i], 0.0)));
        out.extend_from(&kept);
    }
    Ok(out)
}

/// Gives every unlabeled point the label of its nearest labeled point
/// (smallest index on equal distance).
pub fn propagate_semantics(cloud: &LabeledPointCloud) -> Result<LabeledPointCloud> {
    cloud.validate()?;
    let labeled = cloud
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_some())
        .map(|(i, _)| (i, cloud.positions[i]));
    let index = NearestIndex::new(labeled, DEFAULT_CELL_SIZE);
    let any_unlabeled = cloud.labels.iter().any(Option::is_none);
    if any_unlabeled && index.is_empty() {
        return Err(Error::invalid_input("cloud has unlabeled points but no labeled point to copy from"));
    }
    let labels: Vec<Option<u32>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| match cloud.labels[i] {
            Some(l) => Some(l),
            None => index.nearest(&cloud.positions[i]).and_then(|(j, _)| cloud.labels[j]),
        })
        .collect();
    let mut out = cloud.clone();
    out.labels = labels;
    Ok(out)
}

/// Splits `total` over `weights` proportionally with the largest-remainder
/// rule (ties to the lower index).
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || !(sum > 0.0) {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &f in order.iter().take(total.saturating_sub(assigned)) {
        counts[f] += 1;
    }
    counts
}

/// Box faces as (normal axis, sign). Order: -x, +x, -y, +y, -z, +z.
const FACES: [(usize, f64); 6] = [(0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0), (2, -1.0), (2, 1.0)];

/// Samples `samples_per_box` points on the surface of every box and appends
/// them with the box's class label and frame. Faces get samples in
/// proportion to their area; within a face the samples are jittered over a
/// near-square grid of strata. The jitter is seeded from `seed` and the
/// object id, so the output is deterministic.
pub fn insert_dynamic(
    cloud: &LabeledPointCloud,
    boxes: &[DynamicBox],
    samples_per_box: usize,
    seed: u64,
) -> Result<LabeledPointCloud> {
    let mut out = cloud.clone();
    for b in boxes {
        b.validate()?;
        if let Some(l) = b.class_label {
            out.num_classes = out.num_classes.max(l as usize + 1);
        }
        let h = b.half_extent;
        let areas: Vec<f64> = FACES
            .iter()
            .map(|&(axis, _)| {
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                4.0 * h[u] * h[v]
            })
            .collect();
        let counts = largest_remainder(samples_per_box, &areas);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ b.object_id.rotate_left(29));
        for (&(axis, sign), &n) in FACES.iter().zip(&counts) {
            if n == 0 {
                continue;
            }
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let rows = ((n as f64 * h[v] / h[u]).sqrt().round() as usize).clamp(1, n);
            let cols = n.div_ceil(rows);
            for s in 0..n {
                let (r, c) = (s / cols, s % cols);
                let fu = (c as f64 + rng.gen::<f64>()) / cols as f64;
                let fv = (r as f64 + rng.gen::<f64>()) / rows as f64;
                let mut local = Vec3::zeros();
                local[axis] = sign * h[axis];
                local[u] = (2.0 * fu - 1.0) * h[u];
                local[v] = (2.0 * fv - 1.0) * h[v];
                out.push(b.to_world(&local), b.class_label, b.frame_id, None);
            }
        }
    }
    out.validate()?;
    Ok(out)
}

/// Ego-centred crop window. The ego frame has `x` forward, `y` left and
/// `z` up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkSpec {
    pub world_from_ego: RigidTransform,
    pub side: f64,
    /// Share of `side` ahead of the ego.
    pub forward_fraction: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub voxel_size: f64,
}

impl Default for ChunkSpec {
    fn default() -> Self {
        Self {
            world_from_ego: RigidTransform::identity(),
            side: DEFAULT_CHUNK_SIDE,
            forward_fraction: DEFAULT_FORWARD_FRACTION,
            z_min: DEFAULT_CHUNK_Z_MIN,
            z_max: DEFAULT_CHUNK_Z_MAX,
            voxel_size: DEFAULT_FINE_VOXEL,
        }
    }
}

impl ChunkSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.side > 0.0 && self.side.is_finite()) {
            return Err(Error::invalid_argument(format!("chunk side must be positive, got {}", self.side)));
        }
        if !(self.forward_fraction > 0.0 && self.forward_fraction < 1.0) {
            return Err(Error::invalid_argument(format!(
                "forward fraction must lie in (0, 1), got {}",
                self.forward_fraction
            )));
        }
        if !(self.z_min < self.z_max && self.z_min.is_finite() && self.z_max.is_finite()) {
            return Err(Error::invalid_argument("chunk height bounds must satisfy z_min < z_max"));
        }
        GridMeta::new(Vec3::zeros(), self.voxel_size)?;
        Ok(())
    }

    /// Forward bound `f·side`.
    pub fn forward_bound(&self) -> f64 {
        self.forward_fraction * self.side
    }

    /// Rear bound `-(1 - f)·side`.
    pub fn rear_bound(&self) -> f64 {
        -(1.0 - self.forward_fraction) * self.side
    }

    /// Ego-frame grid whose extent exactly tiles the chunk.
    pub fn grid_meta(&self) -> Result<GridMeta> {
        self.validate()?;
        let n = |len: f64| (len / self.voxel_size).round() as i32;
        let extent = Extent::new(
            VoxelCoord::new(0, 0, 0),
            VoxelCoord::new(n(self.side), n(self.side), n(self.z_max - self.z_min)),
        )?;
        Ok(GridMeta::new(Vec3::new(self.rear_bound(), -0.5 * self.side, self.z_min), self.voxel_size)?
            .with_extent(extent))
    }
}

/// Points inside the chunk, expressed in the ego frame, and the grid meta
/// that covers the chunk. A point is kept iff its coordinates fall in the
/// half-open window and its voxel lies inside the grid extent.
pub fn crop_chunk(cloud: &LabeledPointCloud, spec: &ChunkSpec) -> Result<(LabeledPointCloud, GridMeta)> {
    let meta = spec.grid_meta()?;
    let ego_from_world = spec.world_from_ego.inverse();
    let (rear, fwd, half) = (spec.rear_bound(), spec.forward_bound(), 0.5 * spec.side);
    let local: Vec<Vec3> = cloud.positions.iter().map(|p| ego_from_world.transform_point(p)).collect();
    let keep: Vec<bool> = local
        .iter()
        .map(|p| {
            p.x >= rear
                && p.x < fwd
                && p.y >= -half
                && p.y < half
                && p.z >= spec.z_min
                && p.z < spec.z_max
                && meta.voxel_of(p).is_some_and(|c| meta.in_extent(c))
        })
        .collect();
    let mut out = cloud.filter_indices(|i| keep[i]);
    out.positions = local.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| p).collect();
    Ok((out, meta))
}

/// Fine grid from the cloud and the coarse grid derived from it.
pub fn make_training_pair(cloud: &LabeledPointCloud, fine: &GridMeta, coarse: &GridMeta) -> Result<GridHierarchy> {
    let ratio = coarse.voxel_size / fine.voxel_size;
    if (ratio - DEFAULT_SUBDIVISION as f64).abs() > 1e-9 {
        return Err(Error::invalid_argument(format!(
            "coarse voxel size must be {DEFAULT_SUBDIVISION}x the fine one, got ratio {ratio}"
        )));
    }
    if (coarse.origin - fine.origin).amax() > 1e-12 {
        return Err(Error::invalid_argument("fine and coarse grids must share an origin"));
    }
    GridHierarchy::from_fine(voxelize(cloud, fine)?, DEFAULT_SUBDIVISION)
}

/// Per-voxel visibility from a set of cameras.
#[derive(Clone, Debug, PartialEq)]
pub struct Visibility {
    pub visible: Vec<bool>,
}

impl Visibility {
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    pub fn occluded_count(&self) -> usize {
        self.visible.len() - self.visible_count()
    }

    /// Occluded over total; 0 for an empty grid.
    pub fn occluded_fraction(&self) -> f64 {
        if self.visible.is_empty() {
            0.0
        } else {
            self.occluded_count() as f64 / self.visible.len() as f64
        }
    }
}

/// A voxel is visible when its centroid projects inside some image and the
/// ray from that camera towards the centroid reaches this voxel before any
/// other occupied voxel.
pub fn voxel_visibility(grid: &SparseVoxelGrid, cams: &[Camera]) -> Visibility {
    let visible = (0..grid.len())
        .into_par_iter()
        .map(|n| {
            let c = grid.centroid(n);
            cams.iter().any(|cam| {
                let Some((u, v, _)) = cam.project(&c) else {
                    return false;
                };
                if !cam.in_frame(u, v) {
                    return false;
                }
                let origin = cam.center();
                let dir = (c - origin).normalize();
                grid.raymarch_first_hit(&origin, &dir)
                    .is_some_and(|(hit, _)| hit == grid.coords()[n])
            })
        })
        .collect();
    Visibility { visible }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(id: u64) -> DynamicBox {
        DynamicBox {
            center: [0.0; 3],
            half_extent: [0.5; 3],
            yaw: 0.0,
            frame_id: 0,
            object_id: id,
            class_label: Some(3),
        }
    }

    #[test]
    fn removes_points_in_own_frame_boxes() {
        let cloud = LabeledPointCloud::from_positions(vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)]);
        let frames = [
            Frame {
                frame_id: 0,
                cloud: cloud.clone(),
                world_from_sensor: RigidTransform::identity(),
            },
            Frame {
                frame_id: 1,
                cloud,
                world_from_sensor: RigidTransform::identity(),
            },
        ];
        let out = accumulate(&frames, &[unit_box(1)]).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out.frame_ids, vec![0, 1, 1]);
    }

    #[test]
    fn yawed_box_test() {
        let mut b = unit_box(0);
        b.half_extent = [2.0, 0.5, 0.5];
        b.yaw = std::f64::consts::FRAC_PI_2;
        assert!(b.contains(&Vec3::new(0.0, 1.9, 0.0), 0.0));
        assert!(!b.contains(&Vec3::new(1.9, 0.0, 0.0), 0.0));
    }

    #[test]
    fn propagation_and_tie_rule() {
        let cloud = LabeledPointCloud::from_labeled(
            vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::zeros()],
            vec![Some(2), Some(5), None],
            6,
        )
        .unwrap();
        let out = propagate_semantics(&cloud).unwrap();
        assert_eq!(out.labels[2], Some(2));
        let none = LabeledPointCloud::from_positions(vec![Vec3::zeros()]);
        assert!(matches!(propagate_semantics(&none), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn unit_box_faces_get_equal_shares() {
        let out = insert_dynamic(&LabeledPointCloud::new(0), &[unit_box(9)], 600, 0).unwrap();
        assert_eq!(out.len(), 600);
        let on_face = |axis: usize, sign: f64| {
            out.positions
                .iter()
                .filter(|p| (p[axis] - sign * 0.5).abs() < 1e-12)
                .count()
        };
        for (axis, sign) in FACES {
            assert_eq!(on_face(axis, sign), 100);
        }
        assert!(out.positions.iter().all(|p| unit_box(9).contains(p, 1e-6)));
        assert!(out.labels.iter().all(|&l| l == Some(3)));
        assert_eq!(insert_dynamic(&out, &[unit_box(9)], 0, 0).unwrap(), out);
    }

    #[test]
    fn largest_remainder_sums() {
        assert_eq!(largest_remainder(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(largest_remainder(7, &[0.0, 2.0]), vec![0, 7]);
    }

    #[test]
    fn chunk_bounds() {
        let spec = ChunkSpec::default();
        assert!((spec.forward_bound() - 76.8).abs() < 1e-12);
        assert!((spec.rear_bound() + 25.6).abs() < 1e-12);
        let meta = spec.grid_meta().unwrap();
        assert_eq!(meta.extent.unwrap().dims(), [1024, 1024, 1024]);
        let cloud = LabeledPointCloud::from_positions(vec![Vec3::zeros(), Vec3::new(80.0, 0.0, 0.0)]);
        let (out, _) = crop_chunk(&cloud, &spec).unwrap();
        assert_eq!(out.positions, vec![Vec3::zeros()]);
    }

    #[test]
    fn visibility_of_occluded_voxel() {
        let meta = GridMeta::new(Vec3::zeros(), 1.0).unwrap();
        let grid = SparseVoxelGrid::from_coords(meta, [VoxelCoord::new(0, 0, 5), VoxelCoord::new(0, 0, 8)]);
        let cam = Camera::from_fov(1.0, 8, 8, RigidTransform::from_translation(Vec3::new(0.5, 0.5, 0.0))).unwrap();
        let vis = voxel_visibility(&grid, &[cam]);
        assert_eq!(vis.visible, vec![true, false]);
        assert_eq!(vis.occluded_fraction(), 0.5);
    }
}
