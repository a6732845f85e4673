// Integer grid traversal after Amanatides & Woo, "A Fast Voxel Traversal
// Algorithm for Ray Tracing". Cell exit distances are recomputed from the
// absolute plane positions at every step instead of accumulated, so they match
// a per-voxel slab test exactly.

use std::ops::ControlFlow;

use super::{GridMeta, VoxelCoord};
use crate::geometry::ray_aabb;
use crate::Vec3;

/// One grid cell crossed by a ray, with the parametric interval spent inside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayCell {
    pub coord: VoxelCoord,
    pub t_enter: f64,
    pub t_exit: f64,
}

/// Visits every cell of the inclusive block `lo..=hi` crossed by the ray
/// within `[t_min, t_max]`, in order of increasing distance. The visitor can
/// stop the walk early.
#[allow(clippy::too_many_arguments)]
pub fn walk_cells(
    meta: &GridMeta,
    lo: VoxelCoord,
    hi: VoxelCoord,
    origin: &Vec3,
    dir: &Vec3,
    t_min: f64,
    t_max: f64,
    mut visit: impl FnMut(RayCell) -> ControlFlow<()>,
) {
    let box_lo = meta.min_corner(lo);
    let box_hi = meta.max_corner(hi);
    let Some((t0, t1)) = ray_aabb(origin, dir, &box_lo, &box_hi) else {
        return;
    };
    let t_start = t0.max(t_min);
    let t_end = t1.min(t_max);
    if !(t_start <= t_end) {
        return;
    }

    let s = meta.voxel_size;
    let lo_a = lo.as_array();
    let hi_a = hi.as_array();
    let entry = origin + dir * t_start;
    let mut idx = [0i32; 3];
    let mut step = [0i32; 3];
    for a in 0..3 {
        let f = ((entry[a] - meta.origin[a]) / s).floor();
        idx[a] = (f.clamp(lo_a[a] as f64, hi_a[a] as f64)) as i32;
        step[a] = if dir[a] > 0.0 {
            1
        } else if dir[a] < 0.0 {
            -1
        } else {
            0
        };
    }

    let plane_t = |a: usize, cell: i32| -> f64 {
        if step[a] == 0 {
            return f64::INFINITY;
        }
        let boundary = if step[a] > 0 { cell + 1 } else { cell };
        (meta.origin[a] + boundary as f64 * s - origin[a]) / dir[a]
    };

    let mut t_cur = t_start;
    loop {
        let exits = [plane_t(0, idx[0]), plane_t(1, idx[1]), plane_t(2, idx[2])];
        let mut axis = 0;
        for a in 1..3 {
            if exits[a] < exits[axis] {
                axis = a;
            }
        }
        let t_exit = exits[axis].min(t_end);
        let cell = RayCell {
            coord: VoxelCoord::from_array(idx),
            t_enter: t_cur,
            t_exit,
        };
        if visit(cell).is_break() || exits[axis] >= t_end {
            return;
        }
        idx[axis] += step[axis];
        if idx[axis] < lo_a[axis] || idx[axis] > hi_a[axis] {
            return;
        }
        t_cur = exits[axis].max(t_cur);
    }
}
