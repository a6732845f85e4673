//! Bucketed nearest-neighbour search over a fixed point set.

use std::collections::HashMap;

use crate::Vec3;

pub const DEFAULT_CELL_SIZE: f64 = 1.0;

/// Rings searched before falling back to a linear scan.
const MAX_RINGS: i64 = 32;

/// Uniform-grid point index. Results are exact: the nearest point by squared
/// Euclidean distance, ties broken by the smaller point id.
#[derive(Clone, Debug)]
pub struct NearestIndex {
    cell: f64,
    points: Vec<(usize, Vec3)>,
    buckets: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl NearestIndex {
    /// Indexes `(id, position)` pairs. Non-finite positions are skipped.
    pub fn new(points: impl IntoIterator<Item = (usize, Vec3)>, cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let points: Vec<(usize, Vec3)> = points.into_iter().filter(|(_, p)| p.iter().all(|v| v.is_finite())).collect();
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (slot, (_, p)) in points.iter().enumerate() {
            let key = Self::key(cell, p);
            for a in 0..3 {
                lo[a] = lo[a].min(key[a]);
                hi[a] = hi[a].max(key[a]);
            }
            buckets.entry(key).or_default().push(slot);
        }
        Self {
            cell,
            points,
            buckets,
            lo,
            hi,
        }
    }

    fn key(cell: f64, p: &Vec3) -> [i64; 3] {
        std::array::from_fn(|a| (p[a] / cell).floor() as i64)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest indexed point as `(id, squared distance)`.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        let c = Self::key(self.cell, q);
        // rings beyond this one hold no points
        let last = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap();
        if last > MAX_RINGS {
            (0..self.points.len()).for_each(|s| self.offer(s, q, &mut best));
        } else {
            for r in 0..=last {
                self.visit_ring(c, r, &mut |s| self.offer(s, q, &mut best));
                // every point in ring r + 1 is at least r cells away
                let bound = r as f64 * self.cell;
                if best.is_some_and(|(d2, _)| d2 < bound * bound) {
                    break;
                }
            }
        }
        best.map(|(d2, id)| (id, d2))
    }

    fn offer(&self, slot: usize, q: &Vec3, best: &mut Option<(f64, usize)>) {
        let (id, p) = self.points[slot];
        let d2 = (p - q).norm_squared();
        if best.map_or(true, |b| (d2, id) < b) {
            *best = Some((d2, id));
        }
    }

    fn visit_ring(&self, c: [i64; 3], r: i64, visit: &mut impl FnMut(usize)) {
        for dx in -r..=r {
            for dy in -r..=r {
                let on_shell = dx.abs() == r || dy.abs() == r;
                let dzs: Box<dyn Iterator<Item = i64>> = if on_shell {
                    Box::new(-r..=r)
                } else if r == 0 {
                    Box::new(std::iter::once(0))
                } else {
                    Box::new([-r, r].into_iter())
                };
                for dz in dzs {
                    if let Some(slots) = self.buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        slots.iter().for_each(|&s| visit(s));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_nearest_and_breaks_ties_by_id() {
        let idx = NearestIndex::new(vec![(7, Vec3::new(1.0, 0.0, 0.0)), (3, Vec3::new(-1.0, 0.0, 0.0))], 1.0);
        assert_eq!(idx.nearest(&Vec3::zeros()), Some((3, 1.0)));
        assert_eq!(idx.nearest(&Vec3::new(0.9, 0.0, 0.0)).unwrap().0, 7);
    }

    #[test]
    fn far_queries_fall_back_to_scan() {
        let idx = NearestIndex::new(vec![(0, Vec3::zeros()), (1, Vec3::new(500.0, 0.0, 0.0))], 1.0);
        assert_eq!(idx.nearest(&Vec3::new(400.0, 100.0, 0.0)).unwrap().0, 1);
    }

    #[test]
    fn empty_index() {
        assert_eq!(NearestIndex::new(Vec::new(), 1.0).nearest(&Vec3::zeros()), None);
    }
}
