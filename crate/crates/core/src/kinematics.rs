//! Forward kinematics, articulation-state sampling, and revolute-origin projection.

use log::warn;
use nalgebra::{Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::artcore::{validate_object, Aabb, ArticulatedObject, JointSpec, JointType, Part, AXIS_NORM_TOL};
use crate::error::{Error, Result};

/// Rigid motion `p ↦ R p + t`.
pub type RigidTransform = Isometry3<f64>;

/// Per-part joint values (radians or world units). Fixed joints hold 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub values: Vec<f64>,
}

impl JointState {
    pub fn zeros(k: usize) -> Self {
        Self { values: vec![0.0; k] }
    }
}

/// How articulated states open the joints of an object.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpeningMode {
    /// Every movable joint at the same fraction of its range.
    #[default]
    Joint,
    /// One movable joint at a time, the others at rest.
    OneAtATime,
}

/// Default fractions of each joint range used for articulated-state metrics.
pub const DEFAULT_FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Motion of a part relative to its parent when its joint is at `q`.
///
/// `q` outside the joint range is clamped with a warning.
pub fn joint_transform(joint: &JointSpec, q: f64) -> Result<RigidTransform> {
    if joint.joint_type == JointType::Fixed {
        return Ok(Isometry3::identity());
    }
    let norm = joint.axis.norm();
    if (norm - 1.0).abs() > AXIS_NORM_TOL {
        return Err(Error::Invariant(format!("joint axis has norm {norm}, expected 1")));
    }
    let [lo, hi] = joint.range;
    let q = if q < lo || q > hi {
        let c = q.clamp(lo, hi);
        warn!("joint value {q} outside range [{lo}, {hi}], clamped to {c}");
        c
    } else {
        q
    };
    let axis = Unit::new_unchecked(joint.axis);
    Ok(match joint.joint_type {
        JointType::Prismatic => Isometry3::from_parts(Translation3::from(axis.into_inner() * q), UnitQuaternion::identity()),
        JointType::Revolute => {
            let rot = UnitQuaternion::from_axis_angle(&axis, q);
            let o = joint.origin.coords;
            let t: Vector3<f64> = o - rot * o;
            Isometry3::from_parts(Translation3::from(t), rot)
        }
        JointType::Fixed => unreachable!(),
    })
}

/// World transform of every part: each joint's motion composed along the parent chain.
pub fn world_transforms(obj: &ArticulatedObject, state: &JointState) -> Result<Vec<RigidTransform>> {
    if state.values.len() != obj.len() {
        return Err(Error::Shape(format!("state has {} values for {} parts", state.values.len(), obj.len())));
    }
    let report = validate_object(obj);
    if !report.is_valid() {
        return Err(Error::Structural(report.violations[0].to_string()));
    }
    let mut out: Vec<Option<RigidTransform>> = vec![None; obj.len()];
    fn resolve(i: usize, obj: &ArticulatedObject, state: &JointState, out: &mut Vec<Option<RigidTransform>>) -> Result<RigidTransform> {
        if let Some(t) = out[i] {
            return Ok(t);
        }
        let joint = &obj.parts[i].joint;
        let local = match joint.parent {
            None => Isometry3::identity(),
            Some(_) => joint_transform(joint, state.values[i])?,
        };
        let t = match joint.parent {
            Some(p) => resolve(p, obj, state, out)? * local,
            None => local,
        };
        out[i] = Some(t);
        Ok(t)
    }
    for i in 0..obj.len() {
        resolve(i, obj, state, &mut out)?;
    }
    Ok(out.into_iter().map(|t| t.expect("resolved")).collect())
}

/// Moves every part's geometry to the given articulation state.
///
/// Bounds are recomputed from the moved points. Joint specs are left as the
/// rest-frame parameters.
pub fn pose_object(obj: &ArticulatedObject, state: &JointState) -> Result<ArticulatedObject> {
    let transforms = world_transforms(obj, state)?;
    let parts = obj.parts.iter().zip(&transforms).map(|(p, t)| Part { geometry: p.geometry.transformed(t), ..p.clone() }).collect();
    Ok(ArticulatedObject { parts, extra: obj.extra.clone() })
}

fn check_fractions(fractions: &[f64]) -> Result<()> {
    match fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        Some(f) => Err(Error::Range(format!("fraction {f} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// State with every movable joint at `ρmin + λ(ρmax − ρmin)`.
pub fn state_at_fraction(obj: &ArticulatedObject, fraction: f64) -> JointState {
    JointState { values: obj.joints().map(|j| joint_value_at(j, fraction)).collect() }
}

fn joint_value_at(j: &JointSpec, fraction: f64) -> f64 {
    if j.is_movable() && j.parent.is_some() {
        j.range[0] + fraction * (j.range[1] - j.range[0])
    } else {
        0.0
    }
}

/// One state per fraction with all joints opened together.
pub fn sample_states(obj: &ArticulatedObject, fractions: &[f64]) -> Result<Vec<JointState>> {
    sample_states_with(obj, fractions, OpeningMode::Joint)
}

pub fn sample_states_with(obj: &ArticulatedObject, fractions: &[f64], mode: OpeningMode) -> Result<Vec<JointState>> {
    check_fractions(fractions)?;
    Ok(match mode {
        OpeningMode::Joint => fractions.iter().map(|&f| state_at_fraction(obj, f)).collect(),
        OpeningMode::OneAtATime => {
            let movable: Vec<usize> =
                (0..obj.len()).filter(|&i| obj.parts[i].joint.is_movable() && obj.parts[i].joint.parent.is_some()).collect();
            fractions
                .iter()
                .flat_map(|&f| {
                    movable.iter().map(move |&m| {
                        let mut s = JointState::zeros(obj.len());
                        s.values[m] = joint_value_at(&obj.parts[m].joint, f);
                        s
                    })
                })
                .collect()
        }
    })
}

/// Nearest point on the boundary surface of `aabb`.
///
/// Exterior points are clamped; interior points are pushed out through the
/// closest face. A box collapsed to a single point returns its min corner.
pub fn project_origin_to_aabb(origin: &Point3<f64>, aabb: &Aabb) -> Point3<f64> {
    if aabb.min == aabb.max {
        warn!("degenerate AABB at {:?}; returning min corner", aabb.min);
        return aabb.min;
    }
    let clamped = origin.coords.zip_zip_map(&aabb.min.coords, &aabb.max.coords, |p, lo, hi| p.clamp(lo, hi));
    let clamped = Point3::from(clamped);
    let inside = (0..3).all(|i| clamped[i] > aabb.min[i] && clamped[i] < aabb.max[i]);
    if !inside {
        return clamped;
    }
    // Strict interior: move along the axis with the nearest face.
    let mut best = (f64::INFINITY, 0usize, 0.0);
    for i in 0..3 {
        for face in [aabb.min[i], aabb.max[i]] {
            let d = (clamped[i] - face).abs();
            if d < best.0 {
                best = (d, i, face);
            }
        }
    }
    let mut out = clamped;
    out[best.1] = best.2;
    out
}
