//! Articulated object data model and kinematic-tree restructuring.
//!
//! An object is an ordered list of parts. Each part carries its geometry and a
//! [`JointSpec`] linking it to a parent part (or to the root). Joint origins and
//! axes are always expressed in world coordinates at rest.

mod geometry;
mod simplify;
pub mod synth;
mod validate;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

pub use geometry::{Aabb, PartGeometry, Representation, VoxelGeometry};
pub use simplify::{build_depth1, collapse_fixed_joints};
pub use validate::{validate_object, Note, ValidationReport, Violation};

use crate::error::{Error, Result};

/// Unknown JSON keys carried through load/save untouched.
pub type Extras = serde_json::Map<String, serde_json::Value>;

/// Tolerance on `‖axis‖ = 1` for movable joints.
pub const AXIS_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Fixed,
    Prismatic,
    Revolute,
}

impl JointType {
    pub const ALL: [JointType; 3] = [JointType::Fixed, JointType::Prismatic, JointType::Revolute];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JointType::Fixed => "fixed",
            JointType::Prismatic => "prismatic",
            JointType::Revolute => "revolute",
        }
    }
}

impl fmt::Display for JointType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JointType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(JointType::Fixed),
            "prismatic" => Ok(JointType::Prismatic),
            "revolute" => Ok(JointType::Revolute),
            other => Err(Error::Semantic(format!("unknown joint type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantic {
    Base,
    Door,
    Drawer,
    Lid,
    Other,
}

impl Semantic {
    pub const ALL: [Semantic; 5] = [Semantic::Base, Semantic::Door, Semantic::Drawer, Semantic::Lid, Semantic::Other];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Semantic::Base => "base",
            Semantic::Door => "door",
            Semantic::Drawer => "drawer",
            Semantic::Lid => "lid",
            Semantic::Other => "other",
        }
    }
}

impl fmt::Display for Semantic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps free-form part labels onto [`Semantic`]. Unlisted labels become `other`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SemanticVocab {
    #[serde(default)]
    pub aliases: HashMap<String, Semantic>,
}

impl SemanticVocab {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::schema("vocab", e.to_string()))
    }

    pub fn resolve(&self, label: &str) -> Semantic {
        let key = label.trim().to_ascii_lowercase();
        if let Some(s) = self.aliases.get(&key) {
            return *s;
        }
        Semantic::ALL.into_iter().find(|s| s.as_str() == key).unwrap_or(Semantic::Other)
    }
}

/// Articulation parameters of one part relative to its parent.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub joint_type: JointType,
    pub semantic: Semantic,
    /// Pivot in world coordinates.
    pub origin: Point3<f64>,
    pub axis: Vector3<f64>,
    /// Radians for revolute joints, world units for prismatic ones.
    pub range: [f64; 2],
    /// Parent part index; `None` is the root.
    pub parent: Option<usize>,
}

impl JointSpec {
    pub fn root_base() -> Self {
        Self {
            joint_type: JointType::Fixed,
            semantic: Semantic::Base,
            origin: Point3::origin(),
            axis: Vector3::z(),
            range: [0.0, 0.0],
            parent: None,
        }
    }

    pub fn is_movable(&self) -> bool {
        self.joint_type != JointType::Fixed
    }
}

/// Per-level bags of unrecognized JSON keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartExtras {
    pub part: Extras,
    pub joint: Extras,
    pub geometry: Extras,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub id: i64,
    pub geometry: PartGeometry,
    pub joint: JointSpec,
    pub extras: PartExtras,
}

impl Part {
    pub fn new(id: i64, geometry: PartGeometry, joint: JointSpec) -> Self {
        Self { id, geometry, joint, extras: PartExtras::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ArticulatedObject {
    pub parts: Vec<Part>,
    pub extra: Extras,
}

impl ArticulatedObject {
    pub fn new(parts: Vec<Part>) -> Self {
        Self { parts, extra: Extras::new() }
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn joints(&self) -> impl Iterator<Item = &JointSpec> {
        self.parts.iter().map(|p| &p.joint)
    }

    /// Indices of parts labelled `base`.
    pub fn base_indices(&self) -> Vec<usize> {
        self.parts.iter().enumerate().filter(|(_, p)| p.joint.semantic == Semantic::Base).map(|(i, _)| i).collect()
    }

    /// The unique base part, required by depth-1 operations.
    pub fn base_index(&self) -> Result<usize> {
        match self.base_indices().as_slice() {
            [b] => Ok(*b),
            [] => Err(Error::Semantic("object has no base part".into())),
            many => Err(Error::Semantic(format!("object has {} base parts: {many:?}", many.len()))),
        }
    }

    /// True when one part is the root and every other part hangs directly off it.
    pub fn is_depth1(&self) -> bool {
        let roots: Vec<usize> = (0..self.len()).filter(|&i| self.parts[i].joint.parent.is_none()).collect();
        match roots.as_slice() {
            [r] => self.parts.iter().enumerate().all(|(i, p)| i == *r || p.joint.parent == Some(*r)),
            _ => false,
        }
    }

    pub fn bounds(&self) -> Option<Aabb> {
        self.parts.iter().map(|p| p.geometry.bounds()).reduce(|a, b| a.hull(&b))
    }

    /// All points/vertices of every part, part-major.
    pub fn all_vertices(&self) -> Vec<Point3<f64>> {
        self.parts.iter().flat_map(|p| p.geometry.vertices()).collect()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn cube_points(lo: [f64; 3], hi: [f64; 3]) -> PartGeometry {
        let b = Aabb::new(Point3::from(lo), Point3::from(hi));
        PartGeometry::points(b.corners().to_vec()).unwrap()
    }

    pub fn joint(
        joint_type: JointType,
        semantic: Semantic,
        origin: [f64; 3],
        axis: [f64; 3],
        range: [f64; 2],
        parent: Option<usize>,
    ) -> JointSpec {
        JointSpec { joint_type, semantic, origin: Point3::from(origin), axis: Vector3::from(axis), range, parent }
    }

    /// Unit-cube base with a front door hinged on its left edge.
    pub fn cabinet() -> ArticulatedObject {
        ArticulatedObject::new(vec![
            Part::new(0, cube_points([0.0; 3], [1.0; 3]), JointSpec::root_base()),
            Part::new(
                1,
                cube_points([0.0, -0.1, 0.0], [1.0, 0.0, 1.0]),
                joint(JointType::Revolute, Semantic::Door, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, std::f64::consts::FRAC_PI_2], Some(0)),
            ),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_maps_unknown_to_other() {
        let v = SemanticVocab::from_toml("[aliases]\ncover = \"lid\"\n").unwrap();
        assert_eq!(v.resolve("Cover"), Semantic::Lid);
        assert_eq!(v.resolve("drawer"), Semantic::Drawer);
        assert_eq!(v.resolve("knob"), Semantic::Other);
    }

    #[test]
    fn cabinet_is_depth1() {
        let c = fixtures::cabinet();
        assert!(c.is_depth1());
        assert_eq!(c.base_index().unwrap(), 0);
    }
}
