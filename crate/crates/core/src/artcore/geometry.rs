use nalgebra::{Isometry3, Point3, Vector3};

use crate::error::{Error, Result};

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Self { min, max }
    }

    pub fn unit() -> Self {
        Self::new(Point3::origin(), Point3::new(1.0, 1.0, 1.0))
    }

    pub fn from_points<'a, I>(points: I) -> Option<Self>
    where
        I: IntoIterator<Item = &'a Point3<f64>>,
    {
        let mut iter = points.into_iter();
        let first = *iter.next()?;
        let (min, max) = iter.fold((first, first), |(lo, hi), p| {
            (Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)), Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)))
        });
        Some(Self { min, max })
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i] <= self.max[i])
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e.x.max(0.0) * e.y.max(0.0) * e.z.max(0.0)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let min = self.min.sup(&other.min);
        let max = self.max.inf(&other.max);
        let b = Aabb { min, max };
        b.is_valid().then_some(b)
    }

    pub fn hull(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    /// Corners in binary order: bit 0 selects x, bit 1 y, bit 2 z.
    pub fn corners(&self) -> [Point3<f64>; 8] {
        std::array::from_fn(|i| {
            Point3::new(
                if i & 1 == 0 { self.min.x } else { self.max.x },
                if i & 2 == 0 { self.min.y } else { self.max.y },
                if i & 4 == 0 { self.min.z } else { self.max.z },
            )
        })
    }
}

/// Voxel grid placement: cell `c` has center `origin + scale * (c + 0.5) / resolution`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGeometry {
    pub resolution: u32,
    pub coords: Vec<[u32; 3]>,
    pub origin: Point3<f64>,
    pub scale: f64,
}

impl VoxelGeometry {
    pub fn centers(&self) -> Vec<Point3<f64>> {
        let r = self.resolution as f64;
        self.coords
            .iter()
            .map(|c| self.origin + Vector3::new((c[0] as f64 + 0.5) / r, (c[1] as f64 + 0.5) / r, (c[2] as f64 + 0.5) / r) * self.scale)
            .collect()
    }

    fn same_frame(&self, other: &VoxelGeometry) -> bool {
        self.resolution == other.resolution && self.origin == other.origin && self.scale == other.scale
    }

    /// Box covered by the occupied cells (not just their centers).
    fn cell_bounds(&self) -> Option<Aabb> {
        let r = self.resolution as f64;
        let lo = self.coords.iter().copied().reduce(|a, b| [a[0].min(b[0]), a[1].min(b[1]), a[2].min(b[2])])?;
        let hi = self.coords.iter().copied().reduce(|a, b| [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2])])?;
        let at = |c: [f64; 3]| self.origin + Vector3::new(c[0] / r, c[1] / r, c[2] / r) * self.scale;
        Some(Aabb::new(at([lo[0] as f64, lo[1] as f64, lo[2] as f64]), at([hi[0] as f64 + 1.0, hi[1] as f64 + 1.0, hi[2] as f64 + 1.0])))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Points(Vec<Point3<f64>>),
    Mesh { vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]> },
    Voxels(VoxelGeometry),
}

/// Part geometry with a cached bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct PartGeometry {
    repr: Representation,
    bounds: Aabb,
}

impl PartGeometry {
    pub fn new(repr: Representation) -> Result<Self> {
        if let Representation::Mesh { vertices, faces } = &repr {
            if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
                return Err(Error::Invariant(format!("face {f:?} indexes past {} vertices", vertices.len())));
            }
        }
        let bounds = match &repr {
            Representation::Points(p) => Aabb::from_points(p),
            Representation::Mesh { vertices, .. } => Aabb::from_points(vertices),
            Representation::Voxels(v) => v.cell_bounds(),
        }
        .ok_or_else(|| Error::Empty("part geometry has no points".into()))?;
        Ok(Self { repr, bounds })
    }

    pub fn points(points: Vec<Point3<f64>>) -> Result<Self> {
        Self::new(Representation::Points(points))
    }

    pub fn repr(&self) -> &Representation {
        &self.repr
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn len(&self) -> usize {
        match &self.repr {
            Representation::Points(p) => p.len(),
            Representation::Mesh { vertices, .. } => vertices.len(),
            Representation::Voxels(v) => v.coords.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points, mesh vertices, or voxel centers.
    pub fn vertices(&self) -> Vec<Point3<f64>> {
        match &self.repr {
            Representation::Points(p) => p.clone(),
            Representation::Mesh { vertices, .. } => vertices.clone(),
            Representation::Voxels(v) => v.centers(),
        }
    }

    /// Concatenates two geometries. Meshes stay meshes, voxels in the same frame
    /// stay voxels; any other mix degrades to a point set.
    pub fn union(&self, other: &PartGeometry) -> PartGeometry {
        let repr = match (&self.repr, &other.repr) {
            (Representation::Points(a), Representation::Points(b)) => Representation::Points(a.iter().chain(b).copied().collect()),
            (Representation::Mesh { vertices: va, faces: fa }, Representation::Mesh { vertices: vb, faces: fb }) => {
                let off = va.len();
                Representation::Mesh {
                    vertices: va.iter().chain(vb).copied().collect(),
                    faces: fa.iter().copied().chain(fb.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off])).collect(),
                }
            }
            (Representation::Voxels(a), Representation::Voxels(b)) if a.same_frame(b) => {
                let mut coords = a.coords.clone();
                for c in &b.coords {
                    if !coords.contains(c) {
                        coords.push(*c);
                    }
                }
                Representation::Voxels(VoxelGeometry { coords, ..a.clone() })
            }
            _ => Representation::Points(self.vertices().into_iter().chain(other.vertices()).collect()),
        };
        // Both inputs are nonempty and well-formed, so this cannot fail.
        PartGeometry::new(repr).expect("union of valid geometries")
    }

    /// Applies a rigid transform. Voxel sets are not closed under rotation, so
    /// they become point sets of their cell centers unless the transform is the identity.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> PartGeometry {
        if *iso == Isometry3::identity() {
            return self.clone();
        }
        let repr = match &self.repr {
            Representation::Points(p) => Representation::Points(p.iter().map(|q| iso * q).collect()),
            Representation::Mesh { vertices, faces } => {
                Representation::Mesh { vertices: vertices.iter().map(|q| iso * q).collect(), faces: faces.clone() }
            }
            Representation::Voxels(v) => Representation::Points(v.centers().iter().map(|q| iso * q).collect()),
        };
        PartGeometry::new(repr).expect("transform preserves nonempty geometry")
    }
}
