//! URDF export of depth-1 objects and a small reader for links, joints, and boxes.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};

use crate::artcore::{validate_object, Aabb, ArticulatedObject};
use crate::error::{Error, Result};

fn link_name(id: i64) -> String {
    format!("part_{id}")
}

fn xyz(v: [f64; 3]) -> String {
    format!("{} {} {}", v[0], v[1], v[2])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One link per part with a box from its bounding box, one joint per non-base part.
///
/// Child link frames sit at the joint origin with world orientation, so a part's
/// box is stored relative to its own joint origin.
pub fn export_urdf(obj: &ArticulatedObject, name: &str) -> Result<String> {
    let report = validate_object(obj);
    if let Some(v) = report.violations.first() {
        return Err(Error::Structural(format!("cannot export invalid object: {v}")));
    }
    if !obj.is_depth1() {
        return Err(Error::Structural("URDF export needs a depth-1 object; run simplify first".into()));
    }
    let base = obj.base_index()?;
    let mut out = String::new();
    let _ = writeln!(out, "<?xml version=\"1.0\"?>");
    let _ = writeln!(out, "<robot name=\"{}\">", escape(name));
    for (i, p) in obj.parts.iter().enumerate() {
        let frame = if i == base { Point3::origin() } else { p.joint.origin };
        let b = p.geometry.bounds();
        let c = b.center() - frame;
        let size = b.extent();
        let _ = writeln!(out, "  <link name=\"{}\">", link_name(p.id));
        let _ = writeln!(out, "    <!-- semantic: {} -->", p.joint.semantic);
        for tag in ["visual", "collision"] {
            let _ = writeln!(out, "    <{tag}>");
            let _ = writeln!(out, "      <origin xyz=\"{}\" rpy=\"0 0 0\"/>", xyz(c.into()));
            let _ = writeln!(out, "      <geometry><box size=\"{}\"/></geometry>", xyz(size.into()));
            let _ = writeln!(out, "    </{tag}>");
        }
        let _ = writeln!(out, "  </link>");
    }
    for (i, p) in obj.parts.iter().enumerate() {
        if i == base {
            continue;
        }
        let j = &p.joint;
        let _ = writeln!(out, "  <joint name=\"joint_{}\" type=\"{}\">", p.id, j.joint_type);
        let _ = writeln!(out, "    <parent link=\"{}\"/>", link_name(obj.parts[base].id));
        let _ = writeln!(out, "    <child link=\"{}\"/>", link_name(p.id));
        let _ = writeln!(out, "    <origin xyz=\"{}\" rpy=\"0 0 0\"/>", xyz(j.origin.into()));
        if j.is_movable() {
            let _ = writeln!(out, "    <axis xyz=\"{}\"/>", xyz(j.axis.into()));
            let _ = writeln!(out, "    <limit lower=\"{}\" upper=\"{}\" effort=\"0\" velocity=\"0\"/>", j.range[0], j.range[1]);
        }
        let _ = writeln!(out, "  </joint>");
    }
    let _ = writeln!(out, "</robot>");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrdfBox {
    /// Box pose in the link frame.
    pub origin: Isometry3<f64>,
    pub size: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrdfLink {
    pub name: String,
    pub collision_boxes: Vec<UrdfBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrdfJoint {
    pub name: String,
    /// `revolute`, `continuous`, `prismatic`, `fixed`, ...
    pub kind: String,
    pub parent: String,
    pub child: String,
    pub origin: Isometry3<f64>,
    pub axis: Vector3<f64>,
    pub limit: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrdfModel {
    pub name: String,
    pub links: Vec<UrdfLink>,
    pub joints: Vec<UrdfJoint>,
}

fn parse_floats<const N: usize>(s: &str, what: &str) -> Result<[f64; N]> {
    let vals: Vec<f64> =
        s.split_whitespace().map(|t| t.parse::<f64>().map_err(|e| Error::Urdf(format!("{what}: `{t}`: {e}")))).collect::<Result<_>>()?;
    vals.try_into().map_err(|v: Vec<f64>| Error::Urdf(format!("{what}: expected {N} numbers, got {}", v.len())))
}

fn parse_origin(node: Option<roxmltree::Node<'_, '_>>) -> Result<Isometry3<f64>> {
    let Some(n) = node else {
        return Ok(Isometry3::identity());
    };
    let t = parse_floats::<3>(n.attribute("xyz").unwrap_or("0 0 0"), "origin xyz")?;
    let r = parse_floats::<3>(n.attribute("rpy").unwrap_or("0 0 0"), "origin rpy")?;
    Ok(Isometry3::from_parts(Translation3::new(t[0], t[1], t[2]), UnitQuaternion::from_euler_angles(r[0], r[1], r[2])))
}

fn child<'a, 'i>(n: roxmltree::Node<'a, 'i>, tag: &str) -> Option<roxmltree::Node<'a, 'i>> {
    n.children().find(|c| c.has_tag_name(tag))
}

fn required_attr<'a>(n: roxmltree::Node<'a, '_>, tag: &str, attr: &str) -> Result<&'a str> {
    child(n, tag).and_then(|c| c.attribute(attr)).ok_or_else(|| Error::Urdf(format!("<{}> lacks <{tag} {attr}=...>", n.tag_name().name())))
}

pub fn parse_urdf(text: &str) -> Result<UrdfModel> {
    let doc = roxmltree::Document::parse(text).map_err(|e| Error::Urdf(e.to_string()))?;
    let robot = doc.root_element();
    if !robot.has_tag_name("robot") {
        return Err(Error::Urdf(format!("root element is <{}>, expected <robot>", robot.tag_name().name())));
    }
    let mut links = Vec::new();
    let mut joints = Vec::new();
    for n in robot.children().filter(|n| n.is_element()) {
        match n.tag_name().name() {
            "link" => {
                let name = n.attribute("name").ok_or_else(|| Error::Urdf("link without name".into()))?.to_string();
                let mut collision_boxes = Vec::new();
                for c in n.children().filter(|c| c.has_tag_name("collision")) {
                    let origin = parse_origin(child(c, "origin"))?;
                    if let Some(b) = child(c, "geometry").and_then(|g| child(g, "box")) {
                        let s = parse_floats::<3>(b.attribute("size").unwrap_or(""), "box size")?;
                        collision_boxes.push(UrdfBox { origin, size: Vector3::from(s) });
                    }
                }
                links.push(UrdfLink { name, collision_boxes });
            }
            "joint" => {
                let name = n.attribute("name").ok_or_else(|| Error::Urdf("joint without name".into()))?.to_string();
                let kind = n.attribute("type").ok_or_else(|| Error::Urdf(format!("joint `{name}` without type")))?.to_string();
                let axis = match child(n, "axis").and_then(|a| a.attribute("xyz")) {
                    Some(s) => Vector3::from(parse_floats::<3>(s, "axis")?),
                    None => Vector3::x(),
                };
                let limit = match child(n, "limit") {
                    Some(l) => {
                        let lo = l.attribute("lower").unwrap_or("0");
                        let hi = l.attribute("upper").unwrap_or("0");
                        Some(parse_floats::<2>(&format!("{lo} {hi}"), "limit")?)
                    }
                    None => None,
                };
                joints.push(UrdfJoint {
                    parent: required_attr(n, "parent", "link")?.to_string(),
                    child: required_attr(n, "child", "link")?.to_string(),
                    origin: parse_origin(child(n, "origin"))?,
                    name,
                    kind,
                    axis,
                    limit,
                });
            }
            _ => {}
        }
    }
    Ok(UrdfModel { name: robot.attribute("name").unwrap_or_default().to_string(), links, joints })
}

impl UrdfModel {
    /// World pose of every link, with joint values by joint name (missing ones are 0).
    pub fn link_poses(&self, q: &HashMap<String, f64>) -> Result<HashMap<String, Isometry3<f64>>> {
        let by_child: HashMap<&str, &UrdfJoint> = self.joints.iter().map(|j| (j.child.as_str(), j)).collect();
        let mut poses = HashMap::new();
        for link in &self.links {
            let mut chain = Vec::new();
            let mut cur = link.name.as_str();
            while let Some(j) = by_child.get(cur) {
                if chain.len() > self.joints.len() {
                    return Err(Error::Urdf(format!("joint cycle through `{}`", link.name)));
                }
                chain.push(*j);
                cur = j.parent.as_str();
            }
            let mut pose = Isometry3::identity();
            for j in chain.iter().rev() {
                let v = q.get(&j.name).copied().unwrap_or(0.0);
                let motion = match j.kind.as_str() {
                    "revolute" | "continuous" => {
                        let axis = Unit::try_new(j.axis, 1e-12).ok_or_else(|| Error::Urdf(format!("zero axis on `{}`", j.name)))?;
                        Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&axis, v))
                    }
                    "prismatic" => Isometry3::translation(j.axis.x * v, j.axis.y * v, j.axis.z * v),
                    _ => Isometry3::identity(),
                };
                pose = pose * j.origin * motion;
            }
            poses.insert(link.name.clone(), pose);
        }
        Ok(poses)
    }

    /// World-frame corners of every collision box of `link` at the given pose.
    pub fn box_corners(&self, link: &str, pose: &Isometry3<f64>) -> Vec<Point3<f64>> {
        self.links
            .iter()
            .filter(|l| l.name == link)
            .flat_map(|l| &l.collision_boxes)
            .flat_map(|b| {
                let h = b.size / 2.0;
                let local = Aabb::new(Point3::from(-h), Point3::from(h));
                local.corners().map(|c| pose * (b.origin * c))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::artcore::collapse_fixed_joints;
    use crate::artcore::synth::{box_mesh, cabinet, random_object};
    use crate::artcore::{JointSpec, Part, Semantic};
    use crate::kinematics::{state_at_fraction, world_transforms};

    #[test]
    fn cabinet_has_two_links_one_revolute() {
        let text = export_urdf(&cabinet(), "cabinet").unwrap();
        let m = parse_urdf(&text).unwrap();
        assert_eq!(m.links.len(), 2);
        assert_eq!(m.joints.len(), 1);
        let j = &m.joints[0];
        assert_eq!(j.kind, "revolute");
        assert_eq!(j.limit, Some([0.0, std::f64::consts::FRAC_PI_2]));
        assert_eq!((j.parent.as_str(), j.child.as_str()), ("part_0", "part_1"));
    }

    #[test]
    fn fixed_only_object_is_one_link() {
        let obj = ArticulatedObject::new(vec![
            Part::new(0, box_mesh([0.0; 3], [1.0; 3]), JointSpec::root_base()),
            Part::new(1, box_mesh([1.0; 3], [2.0; 3]), JointSpec { parent: Some(0), semantic: Semantic::Other, ..JointSpec::root_base() }),
        ]);
        let m = parse_urdf(&export_urdf(&collapse_fixed_joints(&obj).unwrap(), "x").unwrap()).unwrap();
        assert_eq!(m.links.len(), 1);
        assert!(m.joints.is_empty());
    }

    #[test]
    fn rejects_non_depth1() {
        let mut obj = random_object(&mut ChaCha8Rng::seed_from_u64(1), 3);
        obj.parts[2].joint.parent = Some(1);
        assert!(matches!(export_urdf(&obj, "x"), Err(Error::Structural(_))));
    }

    #[test]
    fn posed_boxes_match_forward_kinematics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let obj = random_object(&mut rng, 4);
            let m = parse_urdf(&export_urdf(&obj, "r").unwrap()).unwrap();
            for f in [0.0, 0.5, 1.0] {
                let state = state_at_fraction(&obj, f);
                let q: HashMap<String, f64> = obj.parts.iter().zip(&state.values).map(|(p, &v)| (format!("joint_{}", p.id), v)).collect();
                let poses = m.link_poses(&q).unwrap();
                let ours = world_transforms(&obj, &state).unwrap();
                for (p, t) in obj.parts.iter().zip(&ours) {
                    let name = link_name(p.id);
                    let got = m.box_corners(&name, &poses[&name]);
                    let want: Vec<Point3<f64>> = p.geometry.bounds().corners().iter().map(|c| t * c).collect();
                    assert_eq!(got.len(), 8);
                    for (a, b) in got.iter().zip(&want) {
                        assert!((a - b).norm() < 1e-6, "{a:?} vs {b:?}");
                    }
                }
            }
        }
    }
}
