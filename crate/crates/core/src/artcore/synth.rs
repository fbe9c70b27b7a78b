//! Box-built objects for tests, demos, and metric sanity runs.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Point3, Vector3};
use rand::Rng;

use super::{Aabb, ArticulatedObject, JointSpec, JointType, Part, PartGeometry, Representation, Semantic};

/// Closed triangle mesh of a box, 8 vertices and 12 faces.
pub fn box_mesh(lo: [f64; 3], hi: [f64; 3]) -> PartGeometry {
    let b = Aabb::new(Point3::from(lo), Point3::from(hi));
    // Corner index bits: x = 1, y = 2, z = 4.
    let faces = vec![
        [0, 2, 1],
        [1, 2, 3], // z min
        [4, 5, 6],
        [5, 7, 6], // z max
        [0, 1, 4],
        [1, 5, 4], // y min
        [2, 6, 3],
        [3, 6, 7], // y max
        [0, 4, 2],
        [2, 4, 6], // x min
        [1, 3, 5],
        [3, 7, 5], // x max
    ];
    PartGeometry::new(Representation::Mesh { vertices: b.corners().to_vec(), faces }).expect("box mesh")
}

/// Unit-cube base with a door hinged on the left edge of its front face (y = 0).
pub fn cabinet() -> ArticulatedObject {
    ArticulatedObject::new(vec![
        Part::new(0, box_mesh([0.0; 3], [1.0; 3]), JointSpec::root_base()),
        Part::new(
            1,
            box_mesh([0.0, -0.05, 0.0], [1.0, 0.0, 1.0]),
            JointSpec {
                joint_type: JointType::Revolute,
                semantic: Semantic::Door,
                origin: Point3::new(0.0, 0.0, 0.0),
                axis: -Vector3::z(),
                range: [0.0, FRAC_PI_2],
                parent: Some(0),
            },
        ),
    ])
}

/// Random valid depth-1 object: a box base plus `parts − 1` thin panels on its faces.
///
/// Panels are revolute doors or lids hinged on a panel edge, or prismatic drawers
/// sliding along the face normal.
pub fn random_object<R: Rng>(rng: &mut R, parts: usize) -> ArticulatedObject {
    let size = [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)];
    let mut out = vec![Part::new(0, box_mesh([0.0; 3], size), JointSpec::root_base())];
    for id in 1..parts.max(1) {
        let normal_axis = rng.random_range(0..3);
        let positive = rng.random_bool(0.5);
        let (a, b) = ((normal_axis + 1) % 3, (normal_axis + 2) % 3);
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for t in [a, b] {
            let u = rng.random_range(0.0..0.4) * size[t];
            let v = rng.random_range(0.6..1.0) * size[t];
            lo[t] = u;
            hi[t] = v;
        }
        let thick = 0.04;
        if positive {
            lo[normal_axis] = size[normal_axis];
            hi[normal_axis] = size[normal_axis] + thick;
        } else {
            lo[normal_axis] = -thick;
            hi[normal_axis] = 0.0;
        }
        let mut outward = Vector3::zeros();
        outward[normal_axis] = if positive { 1.0 } else { -1.0 };

        let joint = if rng.random_bool(0.3) {
            JointSpec {
                joint_type: JointType::Prismatic,
                semantic: Semantic::Drawer,
                origin: Point3::from(lo),
                axis: outward,
                range: [0.0, rng.random_range(0.1..0.5)],
                parent: Some(0),
            }
        } else {
            // Hinge along the panel edge at the low end of `a`, running in direction `b`.
            let mut origin = Point3::from(lo);
            origin[normal_axis] = if positive { size[normal_axis] } else { 0.0 };
            let mut axis = Vector3::zeros();
            axis[b] = 1.0;
            // Sign chosen so positive angles swing the panel outward.
            let mut tangent = Vector3::zeros();
            tangent[a] = 1.0;
            if axis.cross(&tangent).dot(&outward) < 0.0 {
                axis = -axis;
            }
            JointSpec {
                joint_type: JointType::Revolute,
                semantic: if normal_axis == 2 { Semantic::Lid } else { Semantic::Door },
                origin,
                axis,
                range: [0.0, rng.random_range(0.5..FRAC_PI_2)],
                parent: Some(0),
            }
        };
        out.push(Part::new(id as i64, box_mesh(lo, hi), joint));
    }
    ArticulatedObject::new(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::artcore::validate_object;

    #[test]
    fn random_objects_are_valid_depth1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 1..6 {
            let o = random_object(&mut rng, k);
            assert_eq!(o.len(), k);
            assert!(validate_object(&o).is_valid());
            assert!(o.is_depth1());
        }
        assert!(validate_object(&cabinet()).is_valid());
    }

    #[test]
    fn box_mesh_bounds() {
        let g = box_mesh([0.0, 1.0, 2.0], [1.0, 2.0, 4.0]);
        assert_eq!(g.bounds(), Aabb::new(Point3::new(0.0, 1.0, 2.0), Point3::new(1.0, 2.0, 4.0)));
    }
}
