use super::{validate_object, ArticulatedObject, JointType, Note, Part};
use crate::error::{Error, Result};

/// Merges every non-root fixed-joint part into its nearest movable (or root) ancestor.
///
/// Merged geometry is concatenated in part order. Parts that survive keep their
/// relative order, ids, and joint specs; only parent indices are remapped.
pub fn collapse_fixed_joints(obj: &ArticulatedObject) -> Result<ArticulatedObject> {
    let report = validate_object(obj);
    if !report.is_valid() {
        return Err(Error::Structural(format!("cannot collapse an invalid object: {}", report.violations[0])));
    }
    if !report.notes.iter().any(|n| matches!(n, Note::FixedNonRoot { .. })) {
        return Ok(obj.clone());
    }

    let k = obj.len();
    // Tree is acyclic here, so following fixed links terminates.
    let absorber: Vec<usize> = (0..k)
        .map(|mut i| loop {
            let j = &obj.parts[i].joint;
            match (j.joint_type, j.parent) {
                (JointType::Fixed, Some(p)) => i = p,
                _ => break i,
            }
        })
        .collect();

    let survivors: Vec<usize> = (0..k).filter(|&i| absorber[i] == i).collect();
    let mut new_index = vec![usize::MAX; k];
    for (n, &i) in survivors.iter().enumerate() {
        new_index[i] = n;
    }

    let parts = survivors
        .iter()
        .map(|&s| {
            let src = &obj.parts[s];
            let geometry =
                (0..k).filter(|&i| i != s && absorber[i] == s).fold(src.geometry.clone(), |g, i| g.union(&obj.parts[i].geometry));
            let mut joint = src.joint.clone();
            joint.parent = joint.parent.map(|p| new_index[absorber[p]]);
            Part { id: src.id, geometry, joint, extras: src.extras.clone() }
        })
        .collect();

    Ok(ArticulatedObject { parts, extra: obj.extra.clone() })
}

/// Re-parents every non-base part directly onto the base part.
///
/// Joint origins and axes are already world-frame rest quantities, so only
/// parent indices change.
pub fn build_depth1(obj: &ArticulatedObject) -> Result<ArticulatedObject> {
    let base = obj.base_index()?;
    if let Some((i, _)) =
        obj.parts.iter().enumerate().find(|(i, p)| *i != base && p.joint.joint_type == JointType::Fixed && p.joint.parent.is_some())
    {
        return Err(Error::Structural(format!("part {i} still has a fixed joint; collapse before building depth-1")));
    }
    let mut out = obj.clone();
    for (i, part) in out.parts.iter_mut().enumerate() {
        part.joint.parent = if i == base { None } else { Some(base) };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use nalgebra::Point3;

    use super::super::fixtures::*;
    use super::super::*;
    use super::*;
    use crate::kinematics::{pose_object, JointState};

    fn with_handle() -> ArticulatedObject {
        let mut obj = cabinet();
        obj.parts.push(Part::new(
            7,
            cube_points([0.8, -0.2, 0.4], [0.9, -0.1, 0.6]),
            joint(JointType::Fixed, Semantic::Other, [0.0; 3], [0.0, 0.0, 1.0], [0.0, 0.0], Some(1)),
        ));
        obj
    }

    #[test]
    fn handle_merges_into_door() {
        let obj = with_handle();
        let c = collapse_fixed_joints(&obj).unwrap();
        assert_eq!(c.len(), 2);
        let door = &c.parts[1];
        assert_eq!(door.geometry.len(), 16);
        let expect = obj.parts[1].geometry.bounds().hull(&obj.parts[2].geometry.bounds());
        assert_eq!(door.geometry.bounds(), expect);
        assert_eq!(door.joint, obj.parts[1].joint);
    }

    #[test]
    fn fixed_chain_collapses_to_base() {
        let obj = ArticulatedObject::new(vec![
            Part::new(0, cube_points([0.0; 3], [1.0; 3]), JointSpec::root_base()),
            Part::new(
                1,
                cube_points([1.0; 3], [2.0; 3]),
                joint(JointType::Fixed, Semantic::Other, [0.0; 3], [0.0, 0.0, 1.0], [0.0, 0.0], Some(0)),
            ),
            Part::new(
                2,
                cube_points([2.0; 3], [3.0; 3]),
                joint(JointType::Fixed, Semantic::Other, [0.0; 3], [0.0, 0.0, 1.0], [0.0, 0.0], Some(1)),
            ),
        ]);
        let c = collapse_fixed_joints(&obj).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.parts[0].geometry.len(), 24);
        assert_eq!(c.parts[0].geometry.bounds().max, Point3::new(3.0, 3.0, 3.0));
    }

    #[test]
    fn no_fixed_children_is_identity() {
        let obj = cabinet();
        assert_eq!(collapse_fixed_joints(&obj).unwrap(), obj);
    }

    #[test]
    fn collapse_rejects_cycles() {
        let mut obj = with_handle();
        obj.parts[1].joint.parent = Some(2);
        assert!(matches!(collapse_fixed_joints(&obj), Err(Error::Structural(_))));
    }

    #[test]
    fn drawer_on_door_reparented_to_base() {
        let mut obj = cabinet();
        obj.parts.push(Part::new(
            2,
            cube_points([0.2, -0.3, 0.2], [0.4, -0.1, 0.3]),
            joint(JointType::Prismatic, Semantic::Drawer, [0.3, -0.2, 0.25], [0.0, -1.0, 0.0], [0.0, 0.2], Some(1)),
        ));
        let d = build_depth1(&obj).unwrap();
        assert!(d.is_depth1());
        assert_eq!(d.parts[2].joint.parent, Some(0));
        assert_eq!(d.parts[2].joint.origin, obj.parts[2].joint.origin);
        // Rest-pose forward kinematics agree: every part stays where it was.
        let rest = JointState::zeros(d.len());
        let posed = pose_object(&d, &rest).unwrap();
        assert_eq!(posed.all_vertices(), obj.all_vertices());
    }

    #[test]
    fn depth1_idempotent() {
        let obj = cabinet();
        assert_eq!(build_depth1(&obj).unwrap(), obj);
    }

    #[test]
    fn depth1_needs_single_base() {
        let mut obj = cabinet();
        obj.parts[1].joint.semantic = Semantic::Base;
        assert!(matches!(build_depth1(&obj), Err(Error::Semantic(_))));
        obj.parts[0].joint.semantic = Semantic::Other;
        obj.parts[1].joint.semantic = Semantic::Door;
        assert!(matches!(build_depth1(&obj), Err(Error::Semantic(_))));
    }
}
