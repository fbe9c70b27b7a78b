//! Point sampling from part geometry.

use nalgebra::{Point3, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::artcore::{ArticulatedObject, PartGeometry, Representation, VoxelGeometry};

/// Cap on lattice/surface fill points per part.
const MAX_FILL: usize = 200_000;

fn triangle_areas(vertices: &[Point3<f64>], faces: &[[usize; 3]]) -> Vec<f64> {
    faces
        .iter()
        .map(|f| {
            let (a, b, c) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            0.5 * (b - a).cross(&(c - a)).norm()
        })
        .collect()
}

fn point_in_triangle<R: Rng>(rng: &mut R, a: Point3<f64>, b: Point3<f64>, c: Point3<f64>) -> Point3<f64> {
    let r1: f64 = rng.random::<f64>().sqrt();
    let r2: f64 = rng.random();
    a + (b - a) * (r1 * (1.0 - r2)) + (c - a) * (r1 * r2)
}

fn cell_size(v: &VoxelGeometry) -> f64 {
    v.scale / v.resolution as f64
}

fn cell_min(v: &VoxelGeometry, c: [u32; 3]) -> Point3<f64> {
    let s = cell_size(v);
    v.origin + Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) * s
}

/// `n` points from one part: a random subset of a point set, area-weighted surface
/// samples of a mesh, or uniform samples inside random occupied cells.
pub fn sample_part_points<R: Rng>(geometry: &PartGeometry, n: usize, rng: &mut R) -> Vec<Point3<f64>> {
    match geometry.repr() {
        Representation::Points(p) => subset(p, n, rng),
        Representation::Mesh { vertices, faces } => {
            let areas = triangle_areas(vertices, faces);
            match WeightedIndex::new(&areas) {
                Ok(dist) => (0..n)
                    .map(|_| {
                        let f = faces[dist.sample(rng)];
                        point_in_triangle(rng, vertices[f[0]], vertices[f[1]], vertices[f[2]])
                    })
                    .collect(),
                // No faces or zero total area: fall back to the vertices.
                Err(_) => subset(vertices, n, rng),
            }
        }
        Representation::Voxels(v) => {
            let s = cell_size(v);
            (0..n)
                .map(|_| {
                    let c = v.coords[rng.random_range(0..v.coords.len())];
                    cell_min(v, c) + Vector3::new(rng.random(), rng.random(), rng.random()) * s
                })
                .collect()
        }
    }
}

fn subset<R: Rng>(p: &[Point3<f64>], n: usize, rng: &mut R) -> Vec<Point3<f64>> {
    if p.len() <= n {
        return p.to_vec();
    }
    let mut idx = index::sample(rng, p.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| p[i]).collect()
}

/// Per-part samples at rest, with the budget split evenly over parts (at least one each).
pub fn sample_object_points(obj: &ArticulatedObject, budget: usize, seed: u64) -> Vec<Vec<Point3<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = (budget / obj.len().max(1)).max(1);
    obj.parts.iter().map(|p| sample_part_points(&p.geometry, per, &mut rng)).collect()
}

/// Dense cover of a part for voxelization with cells of side about `2 · spacing`.
///
/// Voxel parts are filled with a regular lattice per cell, meshes get surface samples
/// at about four per `spacing²`, and point sets are returned as they are.
pub fn fill_points<R: Rng>(geometry: &PartGeometry, spacing: f64, rng: &mut R) -> Vec<Point3<f64>> {
    match geometry.repr() {
        Representation::Points(p) => p.clone(),
        Representation::Mesh { vertices, faces } => {
            let area: f64 = triangle_areas(vertices, faces).iter().sum();
            let n = ((4.0 * area / (spacing * spacing)).ceil() as usize).clamp(vertices.len(), MAX_FILL);
            let mut pts = sample_part_points(geometry, n, rng);
            pts.extend_from_slice(vertices);
            pts
        }
        Representation::Voxels(v) => {
            let s = cell_size(v);
            let mut m = (s / spacing).ceil().max(1.0) as usize;
            while m > 1 && v.coords.len() * m * m * m > MAX_FILL {
                m -= 1;
            }
            let step = s / m as f64;
            let mut pts = Vec::with_capacity(v.coords.len() * m * m * m);
            for &c in &v.coords {
                let base = cell_min(v, c);
                for i in 0..m {
                    for j in 0..m {
                        for k in 0..m {
                            let off = Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * step;
                            pts.push(base + off);
                        }
                    }
                }
            }
            pts
        }
    }
}

/// Points whose bounding box is the part's true extent, so that boxes of moved
/// parts can be taken from the moved points. Voxel parts contribute cell corners.
pub fn extent_points(geometry: &PartGeometry) -> Vec<Point3<f64>> {
    match geometry.repr() {
        Representation::Voxels(v) => {
            let s = cell_size(v);
            v.coords
                .iter()
                .flat_map(|&c| {
                    let lo = cell_min(v, c);
                    (0..8).map(move |b| lo + Vector3::new((b & 1) as f64, ((b >> 1) & 1) as f64, ((b >> 2) & 1) as f64) * s)
                })
                .collect()
        }
        _ => geometry.vertices(),
    }
}
