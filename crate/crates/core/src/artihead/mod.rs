//! Articulation regression from cached denoiser features: multi-step averaging,
//! mean/max pooling, an MLP head, the squared-error loss, and decoding to joints.

mod cache;

pub use cache::{FeatureCache, CACHE_FORMAT};

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artcore::{Aabb, JointSpec, JointType, Semantic};
use crate::error::{Error, Result};
use crate::kinematics::project_origin_to_aabb;
use crate::netcore::attention::linear;
use crate::netcore::{Graph, Mat, Module, ParamId, ParamStore, Tape, TensorFile, Var};

pub const NUM_TYPES: usize = 3;
pub const NUM_SEMANTICS: usize = 5;
/// Type logits, semantic logits, origin, axis, range.
pub const RAW_DIM: usize = NUM_TYPES + NUM_SEMANTICS + 3 + 3 + 2;

const SEM_AT: usize = NUM_TYPES;
const ORIGIN_AT: usize = SEM_AT + NUM_SEMANTICS;
const AXIS_AT: usize = ORIGIN_AT + 3;
const RANGE_AT: usize = AXIS_AT + 3;

/// Axes shorter than this cannot be decoded.
pub const MIN_AXIS_NORM: f64 = 1e-8;

/// Elementwise mean of a part's features over every cached step.
pub fn aggregate_multistep(cache: &FeatureCache, part: usize) -> Result<Mat> {
    let mut mean: Option<Mat> = None;
    for (k, (step, m)) in cache.part_entries(part).enumerate() {
        match mean.as_mut() {
            None => mean = Some(m.clone()),
            Some(acc) => {
                if acc.dim() != m.dim() {
                    return Err(Error::Shape(format!("part {part} step {step}: {:?} vs {:?}", m.dim(), acc.dim())));
                }
                // Running mean keeps identical steps bit-exact.
                let w = 1.0 / (k + 1) as f64;
                ndarray::Zip::from(acc).and(m).for_each(|a, &x| *a += (x - *a) * w);
            }
        }
    }
    mean.ok_or_else(|| Error::Empty(format!("no cached features for part {part}")))
}

/// `[mean over tokens ‖ max over tokens]`.
pub fn pool_mean_max(h: &Mat) -> Result<Vec<f64>> {
    if h.nrows() == 0 {
        return Err(Error::Empty("part has no tokens".into()));
    }
    let mean = h.mean_axis(ndarray::Axis(0)).expect("nonempty");
    let max = h.fold_axis(ndarray::Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok(mean.iter().chain(max.iter()).copied().collect())
}

/// Pooling of `(part, start, len)` row groups on a tape: one `1 × 2D` row per group.
pub fn pool_groups(t: &mut Tape, feats: Var, groups: &[(usize, usize, usize)]) -> Var {
    let rows: Vec<Var> = groups
        .iter()
        .map(|&(_, s, n)| {
            let g = t.slice_rows(feats, s, n);
            let mean = t.mean_rows(g);
            let max = t.max_rows(g);
            t.concat_cols(&[mean, max])
        })
        .collect();
    t.concat_rows(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    /// Twice the denoiser width.
    pub input_dim: usize,
    pub hidden: usize,
    /// Linear layer count.
    pub layers: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { input_dim: 128, hidden: 64, layers: 6 }
    }
}

/// SiLU MLP from pooled part features to the raw joint vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticulationHead {
    config: HeadConfig,
    params: ParamStore,
    layers: Vec<(ParamId, ParamId)>,
}

impl ArticulationHead {
    pub fn new<R: Rng>(config: HeadConfig, rng: &mut R) -> Result<Self> {
        if config.layers == 0 || config.input_dim == 0 || config.hidden == 0 {
            return Err(Error::Shape(format!("invalid head config {config:?}")));
        }
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let fan_in = if i == 0 { config.input_dim } else { config.hidden };
            let fan_out = if i + 1 == config.layers { RAW_DIM } else { config.hidden };
            let gain = if i + 1 == config.layers { 1.0 } else { 2.0 };
            let w = params.add_normal(format!("layers.{i}.w"), (fan_in, fan_out), (gain / fan_in as f64).sqrt(), rng);
            let b = params.add(format!("layers.{i}.b"), Mat::zeros((1, fan_out)));
            layers.push((w, b));
        }
        Ok(Self { config, params, layers })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    /// Weight and bias leaves for every layer, in order.
    pub fn leaves(&self, t: &mut Tape) -> Vec<Var> {
        self.params.ids().map(|id| t.leaf(self.params.get(id).clone())).collect()
    }

    pub fn bind(&self, g: &mut Graph<'_>) -> Vec<Var> {
        self.params.ids().map(|id| g.param(id)).collect()
    }

    /// `x` is `n × input_dim`; `w` comes from [`Self::leaves`] or [`Self::bind`].
    pub fn apply(&self, t: &mut Tape, w: &[Var], x: Var) -> Var {
        let mut h = x;
        for (i, pair) in w.chunks(2).enumerate() {
            h = linear(t, h, pair[0], pair[1]);
            if i + 1 < self.layers.len() {
                h = t.silu(h);
            }
        }
        h
    }

    pub fn regress_batch(&self, x: &Mat) -> Result<Mat> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Shape(format!("head input width {}, expected {}", x.ncols(), self.config.input_dim)));
        }
        let mut t = Tape::new();
        let w = self.leaves(&mut t);
        let xv = t.leaf(x.clone());
        let out = self.apply(&mut t, &w, xv);
        let out = t.value(out).clone();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("articulation head output".into()));
        }
        Ok(out)
    }

    /// Raw parameter vector for one pooled part feature; no decoding.
    pub fn regress_joint(&self, h: &[f64]) -> Result<Vec<f64>> {
        let x = Mat::from_shape_vec((1, h.len()), h.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(self.regress_batch(&x)?.into_raw_vec_and_offset().0)
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        TensorFile::new(serde_json::to_value(&self.config).expect("config serializes"), self.params.to_records(""))
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        let config: HeadConfig = serde_json::from_value(file.config.clone())?;
        let mut head = Self::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        head.params.load_from(file)?;
        Ok(head)
    }
}

impl Module for ArticulationHead {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

/// One-hot type, one-hot semantic, origin, axis, range.
pub fn encode_joint(j: &JointSpec) -> Vec<f64> {
    let mut v = vec![0.0; RAW_DIM];
    v[j.joint_type.index()] = 1.0;
    v[SEM_AT + j.semantic.index()] = 1.0;
    v[ORIGIN_AT..ORIGIN_AT + 3].copy_from_slice(j.origin.coords.as_slice());
    v[AXIS_AT..AXIS_AT + 3].copy_from_slice(j.axis.as_slice());
    v[RANGE_AT..].copy_from_slice(&j.range);
    v
}

/// Sum of squared differences over the whole vector.
pub fn articulation_loss(raw: &[f64], gt: &[f64]) -> Result<f64> {
    if raw.len() != gt.len() {
        return Err(Error::Shape(format!("prediction of length {} vs target of length {}", raw.len(), gt.len())));
    }
    Ok(raw.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn decode_named(raw: &[f64], aabb: &Aabb, name: &str) -> Result<JointSpec> {
    if raw.len() != RAW_DIM {
        return Err(Error::Shape(format!("raw joint vector of length {}, expected {RAW_DIM}", raw.len())));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("raw joint vector of part {name}")));
    }
    let joint_type = JointType::ALL[argmax(&raw[..NUM_TYPES])];
    let semantic = Semantic::ALL[argmax(&raw[SEM_AT..ORIGIN_AT])];
    let axis = Vector3::new(raw[AXIS_AT], raw[AXIS_AT + 1], raw[AXIS_AT + 2]);
    let norm = axis.norm();
    if norm < MIN_AXIS_NORM {
        return Err(Error::DegenerateAxis { part: name.to_string(), norm });
    }
    let mut origin = Point3::new(raw[ORIGIN_AT], raw[ORIGIN_AT + 1], raw[ORIGIN_AT + 2]);
    if joint_type == JointType::Revolute {
        origin = project_origin_to_aabb(&origin, aabb);
    }
    let (a, b) = (raw[RANGE_AT], raw[RANGE_AT + 1]);
    let range = match joint_type {
        JointType::Fixed => [0.0, 0.0],
        _ => [a.min(b), a.max(b)],
    };
    Ok(JointSpec { joint_type, semantic, origin, axis: axis / norm, range, parent: None })
}

/// Argmax type and semantic, unit axis, AABB-projected revolute origin, sorted range.
/// The parent is left unset.
pub fn decode_joint(raw: &[f64], part_aabb: &Aabb) -> Result<JointSpec> {
    decode_named(raw, part_aabb, "?")
}

/// Index of the base part: the unique part decoded as `base`, otherwise the
/// largest-volume part among the tied candidates (or among all parts if none).
pub fn choose_base(joints: &[JointSpec], aabbs: &[Aabb]) -> usize {
    let bases: Vec<usize> = (0..joints.len()).filter(|&i| joints[i].semantic == Semantic::Base).collect();
    if bases.len() == 1 {
        return bases[0];
    }
    let pool: Vec<usize> = if bases.is_empty() { (0..joints.len()).collect() } else { bases };
    let mut best = pool[0];
    for &i in &pool[1..] {
        if aabbs[i].volume() > aabbs[best].volume() {
            best = i;
        }
    }
    best
}

/// Depth-1 joints for every part from a feature cache: aggregate, pool, regress, decode.
pub fn predict_articulation(cache: &FeatureCache, head: &ArticulationHead, aabbs: &[Aabb]) -> Result<Vec<JointSpec>> {
    if aabbs.is_empty() {
        return Err(Error::Empty("no parts to regress".into()));
    }
    let mut joints = Vec::with_capacity(aabbs.len());
    for (i, aabb) in aabbs.iter().enumerate() {
        let pooled = pool_mean_max(&aggregate_multistep(cache, i)?)?;
        let raw = head.regress_joint(&pooled)?;
        joints.push(decode_named(&raw, aabb, &i.to_string())?);
    }
    Ok(assemble_depth1(joints, aabbs))
}

/// Fixes the base as root and attaches every other part to it.
pub fn assemble_depth1(mut joints: Vec<JointSpec>, aabbs: &[Aabb]) -> Vec<JointSpec> {
    let base = choose_base(&joints, aabbs);
    for (i, j) in joints.iter_mut().enumerate() {
        if i == base {
            *j = JointSpec::root_base();
        } else {
            if j.semantic == Semantic::Base {
                j.semantic = Semantic::Other;
            }
            j.parent = Some(base);
        }
    }
    joints
}
