//! Shape and articulation metrics: box distances, Chamfer distance, overlap ratio,
//! part matching, and the rest/articulated-state evaluation driver.

mod aor;
mod hungarian;
mod kdtree;
mod sampling;

use std::fmt::Write as _;

use log::warn;
use nalgebra::Point3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use aor::{aor, aor_from_occupancy, aor_points, overlap_ratio, voxelize_shared};
pub use hungarian::min_cost_assignment;
pub use kdtree::KdTree;
pub use sampling::{extent_points, fill_points, sample_object_points, sample_part_points};

use crate::artcore::{validate_object, Aabb, ArticulatedObject};
use crate::error::{Error, Result};
use crate::kinematics::{sample_states, world_transforms, JointState, RigidTransform, DEFAULT_FRACTIONS};

/// Volume floor for degenerate boxes.
pub const VOLUME_EPS: f64 = 1e-12;

/// Matching cost of a part left without a partner (the largest box distance).
pub const UNMATCHED_COST: f64 = 2.0;

/// `1 − gIoU` of two boxes, in `[0, 2]`.
pub fn giou_distance(a: &Aabb, b: &Aabb) -> f64 {
    if a == b {
        return 0.0;
    }
    let inter = a.intersection(b).map_or(0.0, |i| i.volume());
    let union = a.volume() + b.volume() - inter;
    let hull = a.hull(b).volume();
    let iou = inter / union.max(VOLUME_EPS);
    let giou = iou - (hull - union) / hull.max(VOLUME_EPS);
    (1.0 - giou).clamp(0.0, 2.0)
}

pub fn center_distance(a: &Aabb, b: &Aabb) -> f64 {
    (a.center() - b.center()).norm()
}

/// Mean squared nearest-neighbour distance, taken in both directions and summed.
pub fn chamfer_distance(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer distance of an empty point set".into()));
    }
    let one_way = |from: &[Point3<f64>], to: &[Point3<f64>]| {
        let tree = KdTree::new(to);
        from.iter().map(|p| tree.nearest_sq(p)).sum::<f64>() / from.len() as f64
    };
    Ok(one_way(a, b) + one_way(b, a))
}

/// Part correspondence between a predicted and a reference object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `(pred index, gt index)` pairs, sorted by pred index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
    /// Sum of pair distances plus the penalty for each unmatched part.
    pub cost: f64,
}

/// Minimum-cost assignment of parts under box distance at rest.
pub fn match_parts(pred: &ArticulatedObject, gt: &ArticulatedObject) -> Matching {
    let pb: Vec<Aabb> = pred.parts.iter().map(|p| p.geometry.bounds()).collect();
    let gb: Vec<Aabb> = gt.parts.iter().map(|p| p.geometry.bounds()).collect();
    match_boxes(&pb, &gb)
}

pub fn match_boxes(pred: &[Aabb], gt: &[Aabb]) -> Matching {
    let n = pred.len().max(gt.len());
    // Padding rows/columns stand for "no partner".
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match (pred.get(i), gt.get(j)) {
                    (Some(a), Some(b)) => giou_distance(a, b),
                    _ => UNMATCHED_COST,
                })
                .collect()
        })
        .collect();
    let assign = min_cost_assignment(&cost);
    let mut m = Matching { pairs: Vec::new(), unmatched_pred: Vec::new(), unmatched_gt: Vec::new(), cost: 0.0 };
    for (i, &j) in assign.iter().enumerate() {
        match (i < pred.len(), j < gt.len()) {
            (true, true) => {
                m.pairs.push((i, j));
                m.cost += cost[i][j];
            }
            (true, false) => {
                m.unmatched_pred.push(i);
                m.cost += UNMATCHED_COST;
            }
            (false, true) => {
                m.unmatched_gt.push(j);
                m.cost += UNMATCHED_COST;
            }
            (false, false) => {}
        }
    }
    m.unmatched_gt.sort_unstable();
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistanceSet {
    #[serde(rename = "d_gIoU")]
    pub d_giou: f64,
    #[serde(rename = "d_cDist")]
    pub d_cdist: f64,
    #[serde(rename = "d_CD")]
    pub d_cd: f64,
}

impl DistanceSet {
    fn mean(sets: &[DistanceSet]) -> DistanceSet {
        let n = sets.len() as f64;
        DistanceSet {
            d_giou: sets.iter().map(|s| s.d_giou).sum::<f64>() / n,
            d_cdist: sets.iter().map(|s| s.d_cdist).sum::<f64>() / n,
            d_cd: sets.iter().map(|s| s.d_cd).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Resting state.
    pub rs: DistanceSet,
    /// Mean over articulated states; absent when no fractions were requested.
    #[serde(rename = "as", skip_serializing_if = "Option::is_none", default)]
    pub as_: Option<DistanceSet>,
    /// Predicted object's overlap ratio averaged over rest and articulated states;
    /// absent for single-part predictions.
    pub aor: Option<f64>,
    pub matching: Matching,
    /// Number of articulated states behind `as`.
    pub states: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub fractions: Vec<f64>,
    /// Point budget per object for Chamfer distance.
    pub points: usize,
    pub aor_resolution: u32,
    pub seed: u64,
    /// Average Chamfer over matched part pairs instead of whole-object point sets.
    pub per_part_chamfer: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { fractions: DEFAULT_FRACTIONS.to_vec(), points: 4096, aor_resolution: 64, seed: 0, per_part_chamfer: false }
    }
}

/// Geometry of one object prepared once at rest and moved per state.
struct Prepared {
    extent: Vec<Vec<Point3<f64>>>,
    samples: Vec<Vec<Point3<f64>>>,
}

impl Prepared {
    fn new(obj: &ArticulatedObject, opts: &EvalOptions) -> Self {
        Self {
            extent: obj.parts.iter().map(|p| extent_points(&p.geometry)).collect(),
            samples: sample_object_points(obj, opts.points, opts.seed),
        }
    }
}

fn move_sets(sets: &[Vec<Point3<f64>>], tf: &[RigidTransform]) -> Vec<Vec<Point3<f64>>> {
    sets.iter().zip(tf).map(|(s, t)| s.iter().map(|p| t * p).collect()).collect()
}

fn boxes(sets: &[Vec<Point3<f64>>]) -> Vec<Aabb> {
    sets.iter().map(|s| Aabb::from_points(s).expect("nonempty part")).collect()
}

fn state_distances(
    pred: &Prepared,
    gt: &Prepared,
    tp: &[RigidTransform],
    tg: &[RigidTransform],
    matching: &Matching,
    per_part_chamfer: bool,
) -> Result<DistanceSet> {
    let pb = boxes(&move_sets(&pred.extent, tp));
    let gb = boxes(&move_sets(&gt.extent, tg));
    let n = matching.pairs.len() as f64;
    let d_giou = matching.pairs.iter().map(|&(i, j)| giou_distance(&pb[i], &gb[j])).sum::<f64>() / n;
    let d_cdist = matching.pairs.iter().map(|&(i, j)| center_distance(&pb[i], &gb[j])).sum::<f64>() / n;
    let ps = move_sets(&pred.samples, tp);
    let gs = move_sets(&gt.samples, tg);
    let d_cd = if per_part_chamfer {
        let mut total = 0.0;
        for &(i, j) in &matching.pairs {
            total += chamfer_distance(&ps[i], &gs[j])?;
        }
        total / n
    } else {
        chamfer_distance(&ps.concat(), &gs.concat())?
    };
    Ok(DistanceSet { d_giou, d_cdist, d_cd })
}

fn check_depth1(obj: &ArticulatedObject, name: &str) -> Result<()> {
    let report = validate_object(obj);
    if let Some(v) = report.violations.first() {
        return Err(Error::Structural(format!("{name} object is invalid: {v}")));
    }
    if !obj.is_depth1() {
        return Err(Error::Structural(format!("{name} object is not depth-1")));
    }
    Ok(())
}

fn mean_aor(pred: &ArticulatedObject, transforms: &[Vec<RigidTransform>], resolution: u32, seed: u64) -> Result<Option<f64>> {
    if pred.len() < 2 {
        return Ok(None);
    }
    let side = pred.bounds().map_or(1.0, |b| b.extent().max());
    let spacing = aor::fill_spacing(side, resolution);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fill: Vec<_> = pred.parts.iter().map(|p| fill_points(&p.geometry, spacing, &mut rng)).collect();
    let mut values = Vec::with_capacity(transforms.len());
    for tf in transforms {
        match aor_points(&move_sets(&fill, tf), resolution) {
            Ok(v) => values.push(v),
            Err(Error::Empty(msg)) => warn!("overlap ratio skipped for one state: {msg}"),
            Err(e) => return Err(e),
        }
    }
    Ok((!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64))
}

/// Compares a predicted object with a reference at rest and at each opening fraction.
///
/// Parts are matched once at rest. Each side opens its own joints to the same
/// fraction of their own ranges.
pub fn evaluate(pred: &ArticulatedObject, gt: &ArticulatedObject, opts: &EvalOptions) -> Result<MetricsReport> {
    check_depth1(pred, "predicted")?;
    check_depth1(gt, "reference")?;
    if opts.points == 0 {
        return Err(Error::Range("point budget must be positive".into()));
    }
    let matching = match_parts(pred, gt);
    let pp = Prepared::new(pred, opts);
    let gp = Prepared::new(gt, opts);

    let rest_p = world_transforms(pred, &JointState::zeros(pred.len()))?;
    let rest_g = world_transforms(gt, &JointState::zeros(gt.len()))?;
    let rs = state_distances(&pp, &gp, &rest_p, &rest_g, &matching, opts.per_part_chamfer)?;

    let mut pred_tf = vec![rest_p];
    let mut as_sets = Vec::new();
    let states_p = sample_states(pred, &opts.fractions)?;
    let states_g = sample_states(gt, &opts.fractions)?;
    for (sp, sg) in states_p.iter().zip(&states_g) {
        let tp = world_transforms(pred, sp)?;
        let tg = world_transforms(gt, sg)?;
        as_sets.push(state_distances(&pp, &gp, &tp, &tg, &matching, opts.per_part_chamfer)?);
        pred_tf.push(tp);
    }
    let aor = mean_aor(pred, &pred_tf, opts.aor_resolution, opts.seed)?;
    Ok(MetricsReport { rs, as_: (!as_sets.is_empty()).then(|| DistanceSet::mean(&as_sets)), aor, matching, states: as_sets.len() })
}

/// Aligned plain-text table of a report.
pub fn report_table(r: &MetricsReport) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
    let mut out = String::new();
    let _ = writeln!(out, "{:<8} {:>12} {:>12}", "metric", "RS", "AS");
    let rows = [
        ("d_gIoU", r.rs.d_giou, r.as_.map(|a| a.d_giou)),
        ("d_cDist", r.rs.d_cdist, r.as_.map(|a| a.d_cdist)),
        ("d_CD", r.rs.d_cd, r.as_.map(|a| a.d_cd)),
    ];
    for (name, rs, as_) in rows {
        let _ = writeln!(out, "{:<8} {:>12} {:>12}", name, fmt(Some(rs)), fmt(as_));
    }
    let _ = writeln!(out, "{:<8} {:>12}", "AOR", fmt(r.aor));
    let _ = writeln!(out, "{:<8} {:>12.6}", "match", r.matching.cost);
    out
}

/// Image-text similarity needs a pretrained vision-language model, which is not bundled.
pub fn clip_similarity(_obj: &ArticulatedObject, _prompt: &str) -> Result<f64> {
    Err(Error::Unsupported("CLIP similarity requires a pretrained ViT-L/14 image-text model, which this crate does not ship".into()))
}
