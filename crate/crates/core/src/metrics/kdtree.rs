//! Exact nearest-neighbour queries over 3-D points.

use nalgebra::Point3;

/// Balanced kd-tree stored implicitly: each subrange `[lo, hi)` has its split
/// point at the midpoint, with the split axis kept alongside.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    axes: Vec<u8>,
}

pub(crate) fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl KdTree {
    pub fn new(points: &[Point3<f64>]) -> Self {
        let mut pts: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut axes = vec![0u8; pts.len()];
        build(&mut pts, &mut axes);
        Self { points: pts, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest squared distance from `q` to any stored point; `+∞` when empty.
    pub fn nearest_sq(&self, q: &Point3<f64>) -> f64 {
        let q = [q.x, q.y, q.z];
        let mut best = f64::INFINITY;
        self.search(&q, 0, self.points.len(), &mut best);
        best
    }

    fn search(&self, q: &[f64; 3], lo: usize, hi: usize, best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = &self.points[mid];
        let d = sq_dist(q, p);
        if d < *best {
            *best = d;
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, best);
        // Any point across the plane is at least |diff| away along this axis.
        if diff * diff < *best {
            self.search(q, far.0, far.1, best);
        }
    }
}

fn build(pts: &mut [[f64; 3]], axes: &mut [u8]) {
    if pts.len() <= 1 {
        return;
    }
    let mut lo = pts[0];
    let mut hi = pts[0];
    for p in pts.iter() {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
    let mid = pts.len() / 2;
    pts.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    axes[mid] = axis as u8;
    let (lp, rest) = pts.split_at_mut(mid);
    let (la, ra) = axes.split_at_mut(mid);
    build(lp, la);
    build(&mut rest[1..], &mut ra[1..]);
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn brute(points: &[Point3<f64>], q: &Point3<f64>) -> f64 {
        let q = [q.x, q.y, q.z];
        points.iter().map(|p| sq_dist(&q, &[p.x, p.y, p.z])).fold(f64::INFINITY, f64::min)
    }

    fn pt() -> impl Strategy<Value = Point3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn matches_brute_force(points in prop::collection::vec(pt(), 1..300), queries in prop::collection::vec(pt(), 1..20)) {
            let tree = KdTree::new(&points);
            for q in &queries {
                prop_assert_eq!(tree.nearest_sq(q), brute(&points, q));
            }
        }
    }

    #[test]
    fn duplicate_points_and_grid_ties() {
        let mut pts = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                pts.push(Point3::new(i as f64, j as f64, 0.0));
                pts.push(Point3::new(i as f64, j as f64, 0.0));
            }
        }
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest_sq(&Point3::new(2.5, 2.5, 0.0)), 0.5);
        assert_eq!(tree.nearest_sq(&Point3::new(3.0, 1.0, 2.0)), 4.0);
        assert!(KdTree::new(&[]).nearest_sq(&Point3::origin()).is_infinite());
    }
}
