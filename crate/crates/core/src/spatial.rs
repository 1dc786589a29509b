//! Uniform hash grid for radius and k-nearest-neighbor queries over point sets.

use std::collections::HashMap;
use std::ops::ControlFlow;

use nalgebra::Point3;

type Cell = (i64, i64, i64);

/// Static point index. Query results are always sorted by point index (radius)
/// or by (distance, index) (k-NN), so callers get deterministic output.
#[derive(Debug, Clone)]
pub struct SpatialGrid {
    cell: f64,
    cells: HashMap<Cell, Vec<u32>>,
    lo: Cell,
    hi: Cell,
    points: Vec<Point3<f64>>,
}

#[inline]
pub(crate) fn dist2(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl SpatialGrid {
    /// Grid with an explicit cell size (> 0).
    pub fn with_cell_size(points: &[Point3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p, cell);
            lo = (lo.0.min(c.0), lo.1.min(c.1), lo.2.min(c.2));
            hi = (hi.0.max(c.0), hi.1.max(c.1), hi.2.max(c.2));
            cells.entry(c).or_default().push(i as u32);
        }
        Self { cell, cells, lo, hi, points: points.to_vec() }
    }

    /// Grid with a cell size chosen from the point density, assuming points
    /// sample 2-manifold surfaces.
    pub fn new(points: &[Point3<f64>]) -> Self {
        let cell = match crate::geometry::Aabb::around(points) {
            Some(b) => {
                let extent = b.extent().max();
                let per_axis = ((points.len() as f64).sqrt() / 2.0).round().max(1.0);
                if extent > 0.0 {
                    extent / per_axis
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        Self::with_cell_size(points, cell)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    /// Indices of points with `|p - q| ≤ radius`, ascending.
    pub fn within_radius(&self, q: &Point3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(q, radius, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    /// Calls `f(index, squared_distance)` for every point within `radius`,
    /// in unspecified order.
    pub fn for_each_within(&self, q: &Point3<f64>, radius: f64, mut f: impl FnMut(usize, f64)) {
        let _ = self.try_for_each_within(q, radius, |i, d2| {
            f(i, d2);
            ControlFlow::Continue(())
        });
    }

    /// [`Self::for_each_within`] that stops as soon as `f` breaks.
    pub fn try_for_each_within(
        &self,
        q: &Point3<f64>,
        radius: f64,
        mut f: impl FnMut(usize, f64) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        if self.points.is_empty() || !(radius >= 0.0) {
            return ControlFlow::Continue(());
        }
        let r2 = radius * radius;
        let a = cell_of(&Point3::new(q.x - radius, q.y - radius, q.z - radius), self.cell);
        let b = cell_of(&Point3::new(q.x + radius, q.y + radius, q.z + radius), self.cell);
        let a = (a.0.max(self.lo.0), a.1.max(self.lo.1), a.2.max(self.lo.2));
        let b = (b.0.min(self.hi.0), b.1.min(self.hi.1), b.2.min(self.hi.2));
        let span = (b.0 - a.0 + 1).max(0) * (b.1 - a.1 + 1).max(0) * (b.2 - a.2 + 1).max(0);
        if span as usize > self.cells.len() {
            for bucket in self.cells.values() {
                self.scan(bucket, q, r2, &mut f)?;
            }
            return ControlFlow::Continue(());
        }
        for x in a.0..=b.0 {
            for y in a.1..=b.1 {
                for z in a.2..=b.2 {
                    if let Some(bucket) = self.cells.get(&(x, y, z)) {
                        self.scan(bucket, q, r2, &mut f)?;
                    }
                }
            }
        }
        ControlFlow::Continue(())
    }

    fn scan(
        &self,
        bucket: &[u32],
        q: &Point3<f64>,
        r2: f64,
        f: &mut impl FnMut(usize, f64) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        for &i in bucket {
            let d2 = dist2(&self.points[i as usize], q);
            if d2 <= r2 {
                f(i as usize, d2)?;
            }
        }
        ControlFlow::Continue(())
    }

    /// The `k` nearest points to `q` as `(index, squared distance)`, sorted by
    /// distance then index. `exclude` is skipped (use it for self-queries).
    pub fn knn(&self, q: &Point3<f64>, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let center = cell_of(q, self.cell);
        let max_ring = [
            (center.0 - self.lo.0).abs(),
            (self.hi.0 - center.0).abs(),
            (center.1 - self.lo.1).abs(),
            (self.hi.1 - center.1).abs(),
            (center.2 - self.lo.2).abs(),
            (self.hi.2 - center.2).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);
        let mut found: Vec<(usize, f64)> = Vec::new();
        let mut ring = 0i64;
        loop {
            self.visit_ring(center, ring, |bucket| {
                for &i in bucket {
                    let i = i as usize;
                    if Some(i) != exclude {
                        found.push((i, dist2(&self.points[i], q)));
                    }
                }
            });
            // Points outside the visited cube are at least `ring * cell` away.
            if found.len() >= k {
                found.sort_unstable_by(cmp_candidate);
                found.truncate(k);
                let guaranteed = ring as f64 * self.cell;
                if found[k - 1].1 <= guaranteed * guaranteed || ring >= max_ring {
                    return found;
                }
            }
            if ring >= max_ring {
                found.sort_unstable_by(cmp_candidate);
                found.truncate(k);
                return found;
            }
            ring += 1;
        }
    }

    fn visit_ring(&self, c: Cell, ring: i64, mut f: impl FnMut(&[u32])) {
        if ring == 0 {
            if let Some(b) = self.cells.get(&c) {
                f(b);
            }
            return;
        }
        for x in -ring..=ring {
            for y in -ring..=ring {
                let on_face = x.abs() == ring || y.abs() == ring;
                if on_face {
                    for z in -ring..=ring {
                        if let Some(b) = self.cells.get(&(c.0 + x, c.1 + y, c.2 + z)) {
                            f(b);
                        }
                    }
                } else {
                    for z in [-ring, ring] {
                        if let Some(b) = self.cells.get(&(c.0 + x, c.1 + y, c.2 + z)) {
                            f(b);
                        }
                    }
                }
            }
        }
    }

    /// Distance from every point to its nearest other point.
    pub fn nearest_neighbor_distances(&self) -> Vec<f64> {
        use rayon::prelude::*;
        (0..self.points.len())
            .into_par_iter()
            .map(|i| self.knn(&self.points[i], 1, Some(i)).first().map_or(f64::INFINITY, |&(_, d2)| d2.sqrt()))
            .collect()
    }
}

fn cmp_candidate(a: &(usize, f64), b: &(usize, f64)) -> std::cmp::Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

fn cell_of(p: &Point3<f64>, cell: f64) -> Cell {
    ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
}

/// Lower median (element `(n - 1) / 2` of the sorted values). `None` if empty.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mid = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    Some(*m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud() -> impl Strategy<Value = Vec<Point3<f64>>> {
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -0.2..0.2f64), 1..300)
            .prop_map(|v| v.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn radius_matches_scan(pts in cloud(), qx in -1.2..1.2f64, r in 0.0..0.8f64, cell in 0.01..0.5f64) {
            let grid = SpatialGrid::with_cell_size(&pts, cell);
            let q = Point3::new(qx, 0.1, 0.0);
            let expected: Vec<usize> = (0..pts.len()).filter(|&i| dist2(&pts[i], &q) <= r * r).collect();
            prop_assert_eq!(grid.within_radius(&q, r), expected);
        }

        #[test]
        fn knn_matches_sort(pts in cloud(), k in 1usize..12) {
            let grid = SpatialGrid::new(&pts);
            let q = pts[0];
            let mut all: Vec<(usize, f64)> = (1..pts.len()).map(|i| (i, dist2(&pts[i], &q))).collect();
            all.sort_by(cmp_candidate);
            all.truncate(k);
            prop_assert_eq!(grid.knn(&q, k, Some(0)), all);
        }
    }

    #[test]
    fn median_is_lower() {
        assert_eq!(lower_median(&mut [3.0, 1.0, 2.0, 4.0]), Some(2.0));
        assert_eq!(lower_median(&mut [5.0]), Some(5.0));
        assert_eq!(lower_median(&mut []), None);
    }
}
