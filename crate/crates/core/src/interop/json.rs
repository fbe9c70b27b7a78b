//! Object JSON: `{"version":1,"parts":[{"id","semantic","geometry","joint"}]}`.
//!
//! Joint parents are written as part ids (`-1` for the root). Keys this reader
//! does not know are kept in the extras bag of the level they appear on.

use std::path::Path;

use log::warn;
use nalgebra::{Point3, Vector3};
use serde_json::{json, Map, Value};

use crate::artcore::{
    ArticulatedObject, Extras, JointSpec, JointType, Part, PartExtras, PartGeometry, Representation, Semantic, VoxelGeometry,
};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

/// How floats are written.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FloatFormat {
    /// Shortest text that reads back to the same `f64`.
    #[default]
    Exact,
    /// Rounded to 9 significant digits, for golden files.
    Canonical,
}

/// Rounds to 9 significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

const TOP_KEYS: [&str; 2] = ["version", "parts"];
const PART_KEYS: [&str; 4] = ["id", "semantic", "geometry", "joint"];
const JOINT_KEYS: [&str; 5] = ["type", "axis", "origin", "range", "parent"];

fn geometry_keys(kind: &str) -> &'static [&'static str] {
    match kind {
        "points" => &["type", "points"],
        "mesh" => &["type", "vertices", "faces"],
        _ => &["type", "resolution", "coords", "origin", "scale"],
    }
}

fn extras_of(map: &Map<String, Value>, known: &[&str]) -> Extras {
    map.iter().filter(|(k, _)| !known.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect()
}

struct Writer {
    fmt: FloatFormat,
}

impl Writer {
    fn num(&self, x: f64, path: &str) -> Result<Value> {
        if !x.is_finite() {
            return Err(Error::NonFinite(path.to_string()));
        }
        let x = match self.fmt {
            FloatFormat::Exact => x,
            FloatFormat::Canonical => round_sig9(x),
        };
        Ok(Value::from(x))
    }

    fn vec3(&self, v: [f64; 3], path: &str) -> Result<Value> {
        Ok(Value::Array(v.iter().map(|&x| self.num(x, path)).collect::<Result<_>>()?))
    }

    fn points(&self, pts: &[Point3<f64>], path: &str) -> Result<Value> {
        Ok(Value::Array(pts.iter().map(|p| self.vec3([p.x, p.y, p.z], path)).collect::<Result<_>>()?))
    }

    fn geometry(&self, g: &PartGeometry, extra: &Extras, path: &str) -> Result<Value> {
        let mut m = extra.clone();
        match g.repr() {
            Representation::Points(p) => {
                m.insert("type".into(), json!("points"));
                m.insert("points".into(), self.points(p, path)?);
            }
            Representation::Mesh { vertices, faces } => {
                m.insert("type".into(), json!("mesh"));
                m.insert("vertices".into(), self.points(vertices, path)?);
                m.insert("faces".into(), json!(faces));
            }
            Representation::Voxels(v) => {
                m.insert("type".into(), json!("voxels"));
                m.insert("resolution".into(), json!(v.resolution));
                m.insert("coords".into(), json!(v.coords));
                m.insert("origin".into(), self.vec3(v.origin.into(), path)?);
                m.insert("scale".into(), self.num(v.scale, path)?);
            }
        }
        Ok(Value::Object(m))
    }
}

/// Builds the JSON tree. Fails on non-finite numbers or parent indices out of range.
pub fn object_to_value(obj: &ArticulatedObject, fmt: FloatFormat) -> Result<Value> {
    let w = Writer { fmt };
    let mut parts = Vec::with_capacity(obj.len());
    for (i, p) in obj.parts.iter().enumerate() {
        let path = format!("parts[{i}]");
        let j = &p.joint;
        let parent = match j.parent {
            None => -1,
            Some(q) => {
                obj.parts.get(q).ok_or_else(|| Error::schema(format!("{path}.joint.parent"), format!("parent index {q} out of range")))?.id
            }
        };
        let mut jm = p.extras.joint.clone();
        jm.insert("type".into(), json!(j.joint_type.as_str()));
        jm.insert("axis".into(), w.vec3(j.axis.into(), &format!("{path}.joint.axis"))?);
        jm.insert("origin".into(), w.vec3(j.origin.into(), &format!("{path}.joint.origin"))?);
        jm.insert(
            "range".into(),
            Value::Array(vec![w.num(j.range[0], &format!("{path}.joint.range"))?, w.num(j.range[1], &format!("{path}.joint.range"))?]),
        );
        jm.insert("parent".into(), json!(parent));
        let mut pm = p.extras.part.clone();
        pm.insert("id".into(), json!(p.id));
        pm.insert("semantic".into(), json!(j.semantic.as_str()));
        pm.insert("geometry".into(), w.geometry(&p.geometry, &p.extras.geometry, &format!("{path}.geometry"))?);
        pm.insert("joint".into(), Value::Object(jm));
        parts.push(Value::Object(pm));
    }
    let mut top = obj.extra.clone();
    top.insert("version".into(), json!(FORMAT_VERSION));
    top.insert("parts".into(), Value::Array(parts));
    Ok(Value::Object(top))
}

pub fn to_json_string(obj: &ArticulatedObject, fmt: FloatFormat) -> Result<String> {
    let mut s = serde_json::to_string(&object_to_value(obj, fmt)?)?;
    s.push('\n');
    Ok(s)
}

struct Reader<'a> {
    path: String,
    v: &'a Value,
}

impl<'a> Reader<'a> {
    fn child(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn at(&self, key: &str) -> Result<Reader<'a>> {
        let path = self.child(key);
        let v = self.v.get(key).ok_or_else(|| Error::schema(&path, "missing field"))?;
        Ok(Reader { path, v })
    }

    fn opt(&self, key: &str) -> Option<Reader<'a>> {
        self.v.get(key).map(|v| Reader { path: self.child(key), v })
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::schema(&self.path, msg)
    }

    fn object(&self) -> Result<&'a Map<String, Value>> {
        self.v.as_object().ok_or_else(|| self.err("expected an object"))
    }

    fn array(&self) -> Result<Vec<Reader<'a>>> {
        let a = self.v.as_array().ok_or_else(|| self.err("expected an array"))?;
        Ok(a.iter().enumerate().map(|(i, v)| Reader { path: format!("{}[{i}]", self.path), v }).collect())
    }

    fn str(&self) -> Result<&'a str> {
        self.v.as_str().ok_or_else(|| self.err("expected a string"))
    }

    fn int(&self) -> Result<i64> {
        self.v.as_i64().ok_or_else(|| self.err("expected an integer"))
    }

    fn uint(&self) -> Result<u64> {
        self.v.as_u64().ok_or_else(|| self.err("expected a non-negative integer"))
    }

    fn float(&self) -> Result<f64> {
        let x = self.v.as_f64().ok_or_else(|| self.err("expected a number"))?;
        if !x.is_finite() {
            return Err(self.err("number must be finite"));
        }
        Ok(x)
    }

    fn floats<const N: usize>(&self) -> Result<[f64; N]> {
        let a = self.array()?;
        if a.len() != N {
            return Err(self.err(format!("expected {N} numbers, found {}", a.len())));
        }
        let mut out = [0.0; N];
        for (o, r) in out.iter_mut().zip(&a) {
            *o = r.float()?;
        }
        Ok(out)
    }

    fn points(&self) -> Result<Vec<Point3<f64>>> {
        self.array()?.iter().map(|r| r.floats::<3>().map(Point3::from)).collect()
    }

    fn index_triples(&self) -> Result<Vec<[u64; 3]>> {
        self.array()?
            .iter()
            .map(|r| {
                let a = r.array()?;
                if a.len() != 3 {
                    return Err(r.err("expected 3 integers"));
                }
                Ok([a[0].uint()?, a[1].uint()?, a[2].uint()?])
            })
            .collect()
    }
}

fn read_geometry(r: &Reader<'_>) -> Result<(PartGeometry, Extras)> {
    let map = r.object()?;
    let kind = r.at("type")?.str()?;
    let repr = match kind {
        "points" => Representation::Points(r.at("points")?.points()?),
        "mesh" => {
            let faces = r.at("faces")?;
            Representation::Mesh {
                vertices: r.at("vertices")?.points()?,
                faces: faces.index_triples()?.into_iter().map(|f| f.map(|i| i as usize)).collect(),
            }
        }
        "voxels" => {
            let res = r.at("resolution")?;
            let resolution = u32::try_from(res.uint()?).map_err(|_| res.err("resolution too large"))?;
            if resolution == 0 {
                return Err(res.err("resolution must be at least 1"));
            }
            let coords_r = r.at("coords")?;
            let mut coords = Vec::new();
            for c in coords_r.index_triples()? {
                if c.iter().any(|&v| v >= resolution as u64) {
                    return Err(coords_r.err(format!("cell {c:?} outside resolution {resolution}")));
                }
                coords.push(c.map(|v| v as u32));
            }
            let origin = match r.opt("origin") {
                Some(o) => Point3::from(o.floats::<3>()?),
                None => Point3::origin(),
            };
            let scale = match r.opt("scale") {
                Some(s) => s.float()?,
                None => 1.0,
            };
            Representation::Voxels(VoxelGeometry { resolution, coords, origin, scale })
        }
        other => return Err(r.at("type")?.err(format!("unknown geometry type `{other}`"))),
    };
    let g = PartGeometry::new(repr).map_err(|e| r.err(e.to_string()))?;
    Ok((g, extras_of(map, geometry_keys(kind))))
}

fn read_semantic(r: &Reader<'_>) -> Result<Semantic> {
    let s = r.str()?;
    Ok(Semantic::ALL.into_iter().find(|x| x.as_str() == s).unwrap_or_else(|| {
        warn!("{}: unknown semantic `{s}` read as `other`", r.path);
        Semantic::Other
    }))
}

/// Parses a JSON tree. Structural validity (roots, cycles, axes) is left to validation.
pub fn object_from_value(v: &Value) -> Result<ArticulatedObject> {
    let top = Reader { path: String::new(), v };
    let top_map = top.object()?;
    if let Some(ver) = top.opt("version") {
        if ver.uint()? != FORMAT_VERSION {
            return Err(ver.err(format!("unsupported version, expected {FORMAT_VERSION}")));
        }
    }
    let parts_r = top.at("parts")?.array()?;

    let mut ids = Vec::with_capacity(parts_r.len());
    for r in &parts_r {
        let id = r.at("id")?.int()?;
        if ids.contains(&id) {
            return Err(r.at("id")?.err(format!("duplicate part id {id}")));
        }
        ids.push(id);
    }

    let mut parts = Vec::with_capacity(parts_r.len());
    for (r, &id) in parts_r.iter().zip(&ids) {
        let pmap = r.object()?;
        let semantic = read_semantic(&r.at("semantic")?)?;
        let (geometry, geometry_extra) = read_geometry(&r.at("geometry")?)?;
        let jr = r.at("joint")?;
        let jmap = jr.object()?;
        let type_r = jr.at("type")?;
        let joint_type: JointType = type_r.str()?.parse().map_err(|e: Error| type_r.err(e.to_string()))?;
        let movable = joint_type != JointType::Fixed;
        let vec_field = |key: &str, default: [f64; 3]| -> Result<[f64; 3]> {
            match (jr.opt(key), movable) {
                (Some(x), _) => x.floats::<3>(),
                (None, true) => Err(Error::schema(format!("{}.{key}", jr.path), "missing field")),
                (None, false) => Ok(default),
            }
        };
        let axis = Vector3::from(vec_field("axis", [0.0, 0.0, 1.0])?);
        let origin = Point3::from(vec_field("origin", [0.0; 3])?);
        let range = match (jr.opt("range"), movable) {
            (Some(x), _) => x.floats::<2>()?,
            (None, true) => return Err(Error::schema(format!("{}.range", jr.path), "missing field")),
            (None, false) => [0.0, 0.0],
        };
        let pr = jr.at("parent")?;
        let parent = match pr.int()? {
            -1 => None,
            pid => Some(ids.iter().position(|&x| x == pid).ok_or_else(|| pr.err(format!("no part with id {pid}")))?),
        };
        parts.push(Part {
            id,
            geometry,
            joint: JointSpec { joint_type, semantic, origin, axis, range, parent },
            extras: PartExtras { part: extras_of(pmap, &PART_KEYS), joint: extras_of(jmap, &JOINT_KEYS), geometry: geometry_extra },
        });
    }
    Ok(ArticulatedObject { parts, extra: extras_of(top_map, &TOP_KEYS) })
}

pub fn from_json_str(text: &str) -> Result<ArticulatedObject> {
    object_from_value(&serde_json::from_str(text)?)
}

pub fn load_object(path: &Path) -> Result<ArticulatedObject> {
    from_json_str(&std::fs::read_to_string(path)?)
}

pub fn save_object(obj: &ArticulatedObject, path: &Path) -> Result<()> {
    save_object_with(obj, path, FloatFormat::Exact)
}

pub fn save_object_with(obj: &ArticulatedObject, path: &Path, fmt: FloatFormat) -> Result<()> {
    super::write_atomic(path, to_json_string(obj, fmt)?.as_bytes())
}

/// Reads any object JSON and rewrites it with sorted keys and 9-digit floats.
pub fn normalize_json(text: &str) -> Result<String> {
    to_json_string(&from_json_str(text)?, FloatFormat::Canonical)
}
