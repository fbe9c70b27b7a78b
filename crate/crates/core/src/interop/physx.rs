//! Part-level articulation from per-vertex kinematic predictions.

use std::collections::BTreeMap;

use log::{info, warn};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::artcore::{build_depth1, validate_object, ArticulatedObject, JointSpec, JointType, Part, PartGeometry, Semantic};
use crate::error::{Error, Result};

/// Mean axes shorter than this cannot be normalized.
pub const MIN_MEAN_AXIS: f64 = 1e-8;

/// Predicted kinematics of one vertex. `parent_id` is `-1` for the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexPrediction {
    pub position: [f64; 3],
    pub part_id: i64,
    pub parent_id: i64,
    pub joint_type: JointType,
    pub axis: [f64; 3],
    pub pivot: [f64; 3],
    pub range: [f64; 2],
}

impl VertexPrediction {
    fn check(&self, i: usize) -> Result<()> {
        if self.part_id < 0 {
            return Err(Error::Range(format!("vertex {i}: negative part id {}", self.part_id)));
        }
        let finite = self.position.iter().chain(&self.axis).chain(&self.pivot).chain(&self.range).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite(format!("vertex {i}")));
        }
        Ok(())
    }
}

/// Most frequent value; ties go to the smallest.
pub fn majority<T: Ord + Copy>(votes: impl IntoIterator<Item = T>) -> Option<(T, bool)> {
    let mut hist: BTreeMap<T, usize> = BTreeMap::new();
    for v in votes {
        *hist.entry(v).or_default() += 1;
    }
    let top = *hist.values().max()?;
    let mut winners = hist.iter().filter(|(_, &c)| c == top).map(|(v, _)| *v);
    let first = winners.next()?;
    Some((first, winners.next().is_some()))
}

fn lex(a: &VertexPrediction, b: &VertexPrediction) -> std::cmp::Ordering {
    let key = |v: &VertexPrediction| [v.position, v.axis, v.pivot, [v.range[0], v.range[1], v.parent_id as f64]];
    let (ka, kb) = (key(a), key(b));
    ka.iter()
        .flatten()
        .zip(kb.iter().flatten())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.joint_type.cmp(&b.joint_type))
}

/// Groups vertices by part id and votes or averages the joint attributes of each group.
///
/// Parts are ordered by id. The root part (voted parent `-1`) becomes a fixed base;
/// other parts get semantic `other`. The result is validated and re-parented to
/// depth 1 when its tree is deeper.
pub fn extract_physx_parts(preds: &[VertexPrediction]) -> Result<ArticulatedObject> {
    if preds.is_empty() {
        return Err(Error::Empty("no vertex predictions".into()));
    }
    for (i, p) in preds.iter().enumerate() {
        p.check(i)?;
    }
    let mut groups: BTreeMap<i64, Vec<&VertexPrediction>> = BTreeMap::new();
    for p in preds {
        groups.entry(p.part_id).or_default().push(p);
    }
    // Sorting members makes every sum independent of input order.
    for g in groups.values_mut() {
        g.sort_by(|a, b| lex(a, b));
    }
    let ids: Vec<i64> = groups.keys().copied().collect();

    let mut parts = Vec::with_capacity(groups.len());
    for (&id, members) in &groups {
        let n = members.len() as f64;
        let (parent_id, tie) = majority(members.iter().map(|m| m.parent_id)).expect("nonempty group");
        if tie {
            info!("part {id}: parent vote tied, picked {parent_id}");
        }
        let (mut joint_type, tie) = majority(members.iter().map(|m| m.joint_type)).expect("nonempty group");
        if tie {
            info!("part {id}: joint type vote tied, picked {joint_type}");
        }
        let parent = match parent_id {
            -1 => None,
            pid => Some(
                ids.iter()
                    .position(|&x| x == pid)
                    .ok_or_else(|| Error::Structural(format!("part {id} votes for parent {pid}, which has no vertices")))?,
            ),
        };
        let mean = |f: &dyn Fn(&VertexPrediction) -> [f64; 3]| {
            let mut s = [0.0; 3];
            for m in members {
                let v = f(m);
                for k in 0..3 {
                    s[k] += v[k];
                }
            }
            Vector3::new(s[0] / n, s[1] / n, s[2] / n)
        };
        let pivot = mean(&|m| m.pivot);
        let range = {
            let r = mean(&|m| [m.range[0], m.range[1], 0.0]);
            [r.x, r.y]
        };
        if parent.is_none() && joint_type != JointType::Fixed {
            warn!("root part {id} voted {joint_type}; treating it as the fixed base");
            joint_type = JointType::Fixed;
        }
        let joint = if joint_type == JointType::Fixed {
            JointSpec {
                semantic: if parent.is_none() { Semantic::Base } else { Semantic::Other },
                origin: Point3::from(pivot),
                parent,
                ..JointSpec::root_base()
            }
        } else {
            let axis = mean(&|m| m.axis);
            let norm = axis.norm();
            if norm < MIN_MEAN_AXIS {
                return Err(Error::DegenerateAxis { part: id.to_string(), norm });
            }
            JointSpec { joint_type, semantic: Semantic::Other, origin: Point3::from(pivot), axis: axis / norm, range, parent }
        };
        let geometry = PartGeometry::points(members.iter().map(|m| Point3::from(m.position)).collect())?;
        parts.push(Part::new(id, geometry, joint));
    }

    let obj = ArticulatedObject::new(parts);
    let report = validate_object(&obj);
    if let Some(v) = report.violations.first() {
        return Err(Error::Structural(format!("extracted articulation is invalid: {v}")));
    }
    if obj.is_depth1() {
        Ok(obj)
    } else {
        build_depth1(&obj)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn v(part: i64, parent: i64, jt: JointType, axis: [f64; 3]) -> VertexPrediction {
        VertexPrediction {
            position: [part as f64, 0.0, 0.0],
            part_id: part,
            parent_id: parent,
            joint_type: jt,
            axis,
            pivot: [0.0, 0.0, 0.0],
            range: [0.0, 1.0],
        }
    }

    #[test]
    fn single_root_part() {
        let preds = vec![v(0, -1, JointType::Fixed, [0.0, 0.0, 1.0]); 4];
        let obj = extract_physx_parts(&preds).unwrap();
        assert_eq!(obj.len(), 1);
        assert_eq!(obj.parts[0].joint.semantic, Semantic::Base);
    }

    #[test]
    fn type_vote_and_axis_average() {
        let mut preds = vec![v(0, -1, JointType::Fixed, [0.0, 0.0, 1.0])];
        for _ in 0..3 {
            preds.push(v(1, 0, JointType::Revolute, [1.0, 0.0, 0.0]));
        }
        for _ in 0..2 {
            preds.push(v(1, 0, JointType::Prismatic, [1.0, 0.0, 0.0]));
        }
        let obj = extract_physx_parts(&preds).unwrap();
        assert_eq!(obj.parts[1].joint.joint_type, JointType::Revolute);

        let preds = vec![
            v(0, -1, JointType::Fixed, [0.0, 0.0, 1.0]),
            v(1, 0, JointType::Revolute, [1.0, 0.0, 0.0]),
            v(1, 0, JointType::Revolute, [0.0, 1.0, 0.0]),
        ];
        let axis = extract_physx_parts(&preds).unwrap().parts[1].joint.axis;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((axis - Vector3::new(h, h, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn ties_take_lower_index() {
        assert_eq!(majority([JointType::Revolute, JointType::Prismatic]), Some((JointType::Prismatic, true)));
        assert_eq!(majority([3, 1, 3]), Some((3, false)));
    }

    #[test]
    fn opposing_axes_are_degenerate() {
        let preds = vec![
            v(0, -1, JointType::Fixed, [0.0, 0.0, 1.0]),
            v(4, 0, JointType::Revolute, [1.0, 0.0, 0.0]),
            v(4, 0, JointType::Revolute, [-1.0, 0.0, 0.0]),
        ];
        match extract_physx_parts(&preds) {
            Err(Error::DegenerateAxis { part, .. }) => assert_eq!(part, "4"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cycles_and_missing_parents_are_rejected() {
        let preds = vec![
            v(0, -1, JointType::Fixed, [0.0, 0.0, 1.0]),
            v(1, 2, JointType::Revolute, [1.0, 0.0, 0.0]),
            v(2, 1, JointType::Revolute, [1.0, 0.0, 0.0]),
        ];
        assert!(matches!(extract_physx_parts(&preds), Err(Error::Structural(_))));
        let preds = vec![v(0, -1, JointType::Fixed, [0.0, 0.0, 1.0]), v(1, 9, JointType::Revolute, [1.0, 0.0, 0.0])];
        assert!(matches!(extract_physx_parts(&preds), Err(Error::Structural(_))));
    }

    #[test]
    fn deeper_trees_are_flattened() {
        let preds = vec![
            v(0, -1, JointType::Fixed, [0.0, 0.0, 1.0]),
            v(1, 0, JointType::Revolute, [1.0, 0.0, 0.0]),
            v(2, 1, JointType::Prismatic, [0.0, 1.0, 0.0]),
        ];
        let obj = extract_physx_parts(&preds).unwrap();
        assert!(obj.is_depth1());
        assert_eq!(obj.parts[2].joint.parent, Some(0));
    }

    fn random_preds(rng: &mut ChaCha8Rng, parts: i64) -> Vec<VertexPrediction> {
        let mut out = Vec::new();
        for id in 0..parts {
            for _ in 0..rng.random_range(1..12) {
                let parent = if id == 0 {
                    -1
                } else if rng.random_bool(0.8) {
                    0
                } else {
                    rng.random_range(0..parts)
                };
                let parent = if parent == id { 0 } else { parent };
                out.push(VertexPrediction {
                    position: [rng.random(), rng.random(), rng.random()],
                    part_id: id,
                    parent_id: if id == 0 { -1 } else { parent },
                    joint_type: JointType::ALL[if id == 0 { 0 } else { rng.random_range(1..3) }],
                    axis: [rng.random_range(0.5..1.0), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)],
                    pivot: [rng.random(), rng.random(), rng.random()],
                    range: [rng.random_range(-0.5..0.0), rng.random_range(0.0..1.5)],
                });
            }
        }
        out
    }

    fn histogram_argmax<T: Ord + Copy>(xs: &[T]) -> T {
        let mut best: Option<(usize, T)> = None;
        for &x in xs {
            let c = xs.iter().filter(|&&y| y == x).count();
            best = match best {
                Some((bc, bx)) if bc > c || (bc == c && bx <= x) => Some((bc, bx)),
                _ => Some((c, x)),
            };
        }
        best.unwrap().1
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn order_invariant(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(1..5);
            let preds = random_preds(&mut rng, k);
            let mut shuffled = preds.clone();
            shuffled.shuffle(&mut rng);
            let a = extract_physx_parts(&preds);
            let b = extract_physx_parts(&shuffled);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }

        #[test]
        fn votes_match_histogram(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut preds = random_preds(&mut rng, 3);
            for p in preds.iter_mut().filter(|p| p.part_id != 0) {
                p.parent_id = 0;
            }
            let obj = extract_physx_parts(&preds).unwrap();
            for part in obj.parts.iter().skip(1) {
                let types: Vec<JointType> = preds.iter().filter(|p| p.part_id == part.id).map(|p| p.joint_type).collect();
                prop_assert_eq!(part.joint.joint_type, histogram_argmax(&types));
            }
        }
    }
}
