//! Average overlapping ratio between voxelized parts.

use log::warn;
use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::sampling::fill_points;
use crate::artcore::{Aabb, ArticulatedObject};
use crate::error::{Error, Result};
use crate::sparsegrid::{voxelize_points, SparseOccupancy};

/// `|A ∩ B| / min(|A|, |B|)`, or `None` when either side is empty.
pub fn overlap_ratio(a: &SparseOccupancy, b: &SparseOccupancy) -> Option<f64> {
    let denom = a.len().min(b.len());
    (denom > 0).then(|| a.intersection_count(b) as f64 / denom as f64)
}

/// Mean overlap ratio over unordered part pairs. Pairs with an empty side are skipped.
pub fn aor_from_occupancy(parts: &[SparseOccupancy]) -> Result<f64> {
    if parts.len() < 2 {
        return Err(Error::Range(format!("overlap ratio needs at least 2 parts, got {}", parts.len())));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..parts.len() {
        for j in i + 1..parts.len() {
            match overlap_ratio(&parts[i], &parts[j]) {
                Some(r) => {
                    sum += r;
                    count += 1;
                }
                None => warn!("skipping part pair ({i}, {j}): empty voxelization"),
            }
        }
    }
    if count == 0 {
        return Err(Error::Empty("every part pair has an empty voxelization".into()));
    }
    Ok(sum / count as f64)
}

/// Voxelizes point sets at `resolution` inside the cube around their joint bounding box.
pub fn voxelize_shared(parts: &[Vec<Point3<f64>>], resolution: u32) -> Result<Vec<SparseOccupancy>> {
    let bounds = Aabb::from_points(parts.iter().flatten()).ok_or_else(|| Error::Empty("no points to voxelize".into()))?;
    let c = bounds.center();
    let side = bounds.extent().max();
    let side = if side > 0.0 { side } else { 1.0 };
    parts
        .iter()
        .map(|pts| {
            let unit: Vec<Point3<f64>> = pts.iter().map(|p| ((p - c) / side).add_scalar(0.5).map(|v| v.clamp(0.0, 1.0)).into()).collect();
            Ok(voxelize_points(&unit, resolution, true)?.occupancy)
        })
        .collect()
}

/// Overlap ratio of per-part point sets sharing one voxel cube.
pub fn aor_points(parts: &[Vec<Point3<f64>>], resolution: u32) -> Result<f64> {
    aor_from_occupancy(&voxelize_shared(parts, resolution)?)
}

/// Point spacing that fills every cell at `resolution` for an object whose
/// bounding cube has side `side`.
pub(crate) fn fill_spacing(side: f64, resolution: u32) -> f64 {
    let side = if side > 0.0 { side } else { 1.0 };
    side / (2.0 * resolution as f64)
}

/// Overlap ratio of an object as it stands (call on a posed object for an articulated state).
pub fn aor(posed: &ArticulatedObject, resolution: u32) -> Result<f64> {
    if posed.len() < 2 {
        return Err(Error::Range(format!("overlap ratio needs at least 2 parts, got {}", posed.len())));
    }
    let side = posed.bounds().map_or(1.0, |b| b.extent().max());
    let spacing = fill_spacing(side, resolution);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pts: Vec<_> = posed.parts.iter().map(|p| fill_points(&p.geometry, spacing, &mut rng)).collect();
    aor_points(&pts, resolution)
}
