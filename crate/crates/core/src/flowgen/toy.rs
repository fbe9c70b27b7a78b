//! Procedural two-part objects on a small voxel grid, their image conditioning,
//! token encodings for both stages, and an end-to-end toy training run.

use std::collections::BTreeSet;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{eval_flow_loss, StepStats, TrainConfig, TrainExample, Trainer};
use super::{euler_sample, SamplerConfig};
use crate::artcore::{Aabb, ArticulatedObject, JointSpec, JointType, Part, PartGeometry, Representation, Semantic, VoxelGeometry};
use crate::artihead::{encode_joint, predict_articulation, ArticulationHead, HeadConfig, RAW_DIM};
use crate::error::{Error, Result};
use crate::netcore::{Conditioning, Denoiser, DenoiserConfig, MaskMap, Mat, Stage, TensorFile};
use crate::sparsegrid::{PartVoxelSet, SparseOccupancy, TokenSequence};

/// Grid resolution of the toy objects.
pub const TOY_RESOLUTION: u32 = 8;
/// Rendered mask side in pixels (two per voxel column).
pub const MASK_SIZE: usize = 16;
/// Channels of the synthetic conditioning features.
pub const COND_CHANNELS: usize = 4;
/// Channels of both token encodings.
pub const TOKEN_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    DoorLeft,
    DoorRight,
    Drawer,
    LidBack,
    LidFront,
}

impl ToyKind {
    pub const ALL: [ToyKind; 5] = [ToyKind::DoorLeft, ToyKind::DoorRight, ToyKind::Drawer, ToyKind::LidBack, ToyKind::LidFront];
}

#[derive(Debug, Clone)]
pub struct ToyObject {
    pub kind: ToyKind,
    pub object: ArticulatedObject,
    pub voxels: PartVoxelSet,
    pub cond: Conditioning,
}

fn boxed(set: &mut BTreeSet<[u32; 3]>, lo: [u32; 3], hi: [u32; 3]) {
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                set.insert([x, y, z]);
            }
        }
    }
}

/// Base cabinet (part 0) plus one moving part in front or on top. A handle
/// voxel opposite the hinge makes the hinge side visible in the geometry.
pub fn toy_object<R: Rng>(kind: ToyKind, rng: &mut R) -> Result<ToyObject> {
    let r = TOY_RESOLUTION;
    let s = 1.0 / r as f64;
    let x0 = rng.random_range(0..2u32);
    let x1 = rng.random_range(6..=8u32);
    let y1 = rng.random_range(6..=7u32);
    let z0 = rng.random_range(0..2u32);
    let z1 = rng.random_range(5..=7u32);
    let mut base = BTreeSet::new();
    boxed(&mut base, [x0, 2, z0], [x1, y1, z1]);
    let mut moving = BTreeSet::new();
    let xm = (x0 + x1) / 2;
    let zm = (z0 + z1) / 2;
    let w = |x: u32| x as f64 * s;
    let joint = match kind {
        ToyKind::DoorLeft | ToyKind::DoorRight => {
            // The top row of the frame stays visible above the door.
            boxed(&mut moving, [x0, 1, z0], [x1, 2, z1 - 1]);
            let left = kind == ToyKind::DoorLeft;
            moving.insert([if left { x1 - 1 } else { x0 }, 0, zm]);
            JointSpec {
                joint_type: JointType::Revolute,
                semantic: Semantic::Door,
                origin: Point3::new(if left { w(x0) } else { w(x1) }, w(2), (w(z0) + w(z1 - 1)) / 2.0),
                axis: if left { -Vector3::z() } else { Vector3::z() },
                range: [0.0, FRAC_PI_2],
                parent: Some(0),
            }
        }
        ToyKind::Drawer => {
            let lo = [x0 + 1, 1, z0];
            let hi = [x1 - 1, 4, zm.max(z0 + 1)];
            boxed(&mut moving, lo, hi);
            for c in &moving {
                base.remove(c);
            }
            moving.insert([xm, 0, (lo[2] + hi[2]) / 2]);
            JointSpec {
                joint_type: JointType::Prismatic,
                semantic: Semantic::Drawer,
                origin: Point3::new((w(lo[0]) + w(hi[0])) / 2.0, (w(lo[1]) + w(hi[1])) / 2.0, (w(lo[2]) + w(hi[2])) / 2.0),
                axis: -Vector3::y(),
                range: [0.0, 0.25],
                parent: Some(0),
            }
        }
        ToyKind::LidBack | ToyKind::LidFront => {
            boxed(&mut moving, [x0, 2, z1], [x1, y1, z1 + 1]);
            let back = kind == ToyKind::LidBack;
            moving.insert([xm, if back { 1 } else { y1 }, z1]);
            JointSpec {
                joint_type: JointType::Revolute,
                semantic: Semantic::Lid,
                origin: Point3::new((w(x0) + w(x1)) / 2.0, if back { w(y1) } else { w(2) }, w(z1)),
                axis: if back { -Vector3::x() } else { Vector3::x() },
                range: [0.0, 1.3],
                parent: Some(0),
            }
        }
    };
    let geometry = |cells: &BTreeSet<[u32; 3]>| {
        PartGeometry::new(Representation::Voxels(VoxelGeometry {
            resolution: r,
            coords: cells.iter().copied().collect(),
            origin: Point3::origin(),
            scale: 1.0,
        }))
    };
    let object =
        ArticulatedObject::new(vec![Part::new(0, geometry(&base)?, JointSpec::root_base()), Part::new(1, geometry(&moving)?, joint)]);
    let (voxels, _) = PartVoxelSet::from_parts(vec![
        SparseOccupancy::from_coords(r, base.iter().copied())?,
        SparseOccupancy::from_coords(r, moving.iter().copied())?,
    ])?;
    let cond = render_front(&voxels, 8, (8, 8))?;
    Ok(ToyObject { kind, object, voxels, cond })
}

/// `n` objects cycling through every kind, each with seeded random proportions.
pub fn toy_dataset(n: usize, seed: u64) -> Result<Vec<ToyObject>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| toy_object(ToyKind::ALL[i % ToyKind::ALL.len()], &mut rng)).collect()
}

/// Orthographic front view looking along +y: the first part hit in each column.
///
/// Mask pixels hold the part index, or `max_parts − 1` for background. Feature cells
/// (one per voxel column, top row = highest z) hold silhouette, part edge, and the
/// silhouette-masked horizontal and vertical cell position.
pub fn render_front(pv: &PartVoxelSet, max_parts: usize, grid: (usize, usize)) -> Result<Conditioning> {
    let r = pv.resolution() as usize;
    if pv.num_parts() + 1 > max_parts {
        return Err(Error::Range(format!("{} parts leave no background slot in {max_parts}", pv.num_parts())));
    }
    if grid != (r, r) || !MASK_SIZE.is_multiple_of(r) {
        return Err(Error::Shape(format!("feature grid {grid:?} must match resolution {r}")));
    }
    let background = max_parts - 1;
    let mut column = vec![background; r * r];
    for row in 0..r {
        let z = (r - 1 - row) as u32;
        for x in 0..r {
            column[row * r + x] = (0..r as u32).find_map(|y| pv.owner([x as u32, y, z])).unwrap_or(background);
        }
    }
    let k = MASK_SIZE / r;
    let values = (0..MASK_SIZE * MASK_SIZE).map(|i| column[(i / MASK_SIZE / k) * r + (i % MASK_SIZE) / k]).collect();
    cond_from_mask(MaskMap::new(MASK_SIZE, MASK_SIZE, values)?, (r, r), background)
}

/// Conditioning features computed from a part mask alone: each feature cell takes
/// the mask value at the top-left pixel of its block.
pub fn cond_from_mask(mask: MaskMap, grid: (usize, usize), background: usize) -> Result<Conditioning> {
    let (gh, gw) = grid;
    if gh == 0 || gw == 0 || !mask.height.is_multiple_of(gh) || !mask.width.is_multiple_of(gw) {
        return Err(Error::Shape(format!("{}×{} mask does not tile a {gh}×{gw} grid", mask.height, mask.width)));
    }
    let (bh, bw) = (mask.height / gh, mask.width / gw);
    let column: Vec<usize> = (0..gh * gw).map(|c| mask.get((c / gw) * bh, (c % gw) * bw)).collect();
    let mut features = Mat::zeros((gh * gw, COND_CHANNELS));
    for row in 0..gh {
        for x in 0..gw {
            let id = column[row * gw + x];
            if id == background {
                continue;
            }
            let differs = |rr: isize, xx: isize| {
                rr >= 0 && xx >= 0 && (rr as usize) < gh && (xx as usize) < gw && column[rr as usize * gw + xx as usize] != id
            };
            let (ri, xi) = (row as isize, x as isize);
            let edge = differs(ri - 1, xi) || differs(ri + 1, xi) || differs(ri, xi - 1) || differs(ri, xi + 1);
            let cell = row * gw + x;
            features[[cell, 0]] = 1.0;
            features[[cell, 1]] = f64::from(u8::from(edge));
            features[[cell, 2]] = (x as f64 + 0.5) / gw as f64;
            features[[cell, 3]] = (row as f64 + 0.5) / gh as f64;
        }
    }
    Ok(Conditioning { features, mask })
}

fn pm(b: bool) -> f64 {
    if b {
        1.0
    } else {
        -1.0
    }
}

/// Coarse latents: each part on a `2×2×2` patch grid, one ±1 channel per sub-voxel.
pub fn stage1_tokens(pv: &PartVoxelSet) -> Result<TokenSequence> {
    let r = pv.resolution();
    if !r.is_multiple_of(2) {
        return Err(Error::Shape(format!("resolution {r} is odd")));
    }
    let p = r / 2;
    let n = (p * p * p) as usize;
    let k = pv.num_parts();
    let mut tokens = Mat::zeros((k * n, TOKEN_CHANNELS));
    let mut coords = Vec::with_capacity(k * n);
    let mut ids = Vec::with_capacity(k * n);
    for (i, part) in pv.parts().iter().enumerate() {
        for pz in 0..p {
            for py in 0..p {
                for px in 0..p {
                    let row = coords.len();
                    for sub in 0..8u32 {
                        let c = [2 * px + (sub & 1), 2 * py + ((sub >> 1) & 1), 2 * pz + (sub >> 2)];
                        tokens[[row, sub as usize]] = pm(part.contains(c));
                    }
                    coords.push([px, py, pz]);
                    ids.push(i);
                }
            }
        }
    }
    TokenSequence::new(tokens, coords, ids)
}

/// Thresholds coarse latents back into part occupancy at `2 ×` the patch resolution.
pub fn decode_stage1(seq: &TokenSequence, resolution: u32, threshold: f64) -> Result<PartVoxelSet> {
    seq.check()?;
    if seq.dim() != TOKEN_CHANNELS {
        return Err(Error::Shape(format!("{} latent channels, expected {TOKEN_CHANNELS}", seq.dim())));
    }
    let mut parts = vec![SparseOccupancy::new(resolution); seq.num_parts()];
    for (row, (&c, &part)) in seq.coords.iter().zip(&seq.part_ids).enumerate() {
        for sub in 0..8u32 {
            if seq.tokens[[row, sub as usize]] > threshold {
                parts[part].insert([2 * c[0] + (sub & 1), 2 * c[1] + ((sub >> 1) & 1), 2 * c[2] + (sub >> 2)])?;
            }
        }
    }
    if let Some(i) = parts.iter().position(|p| p.is_empty()) {
        return Err(Error::DegenerateStructure { part: i });
    }
    Ok(PartVoxelSet::from_parts(parts)?.0)
}

const FACES: [[i64; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

/// Fine tokens, one per occupied voxel: six same-part face-neighbor flags, a
/// contact-with-other-part flag and a grid-boundary flag, all ±1.
pub fn stage2_tokens(pv: &PartVoxelSet) -> Result<TokenSequence> {
    let r = pv.resolution() as i64;
    let l = pv.total_voxels();
    let mut tokens = Mat::zeros((l, TOKEN_CHANNELS));
    let mut coords = Vec::with_capacity(l);
    let mut ids = Vec::with_capacity(l);
    for (i, part) in pv.parts().iter().enumerate() {
        if part.is_empty() {
            return Err(Error::DegenerateStructure { part: i });
        }
        for c in part.coords() {
            let row = coords.len();
            let mut contact = false;
            let mut boundary = false;
            for (f, d) in FACES.iter().enumerate() {
                let n = [c[0] as i64 + d[0], c[1] as i64 + d[1], c[2] as i64 + d[2]];
                if n.iter().any(|&v| v < 0 || v >= r) {
                    boundary = true;
                    tokens[[row, f]] = -1.0;
                    continue;
                }
                let n = [n[0] as u32, n[1] as u32, n[2] as u32];
                tokens[[row, f]] = pm(part.contains(n));
                contact |= pv.owner(n).is_some_and(|o| o != i);
            }
            tokens[[row, 6]] = pm(contact);
            tokens[[row, 7]] = pm(boundary);
            coords.push(c);
            ids.push(i);
        }
    }
    TokenSequence::new(tokens, coords, ids)
}

/// Zero-valued tokens on the occupied cells, for sampling templates.
pub fn stage2_template(pv: &PartVoxelSet) -> Result<TokenSequence> {
    let seq = stage2_tokens(pv)?;
    seq.with_tokens(Mat::zeros(seq.tokens.raw_dim()))
}

/// Encoded ground-truth joints, one row per part.
pub fn joint_targets(obj: &ArticulatedObject) -> Mat {
    let mut m = Mat::zeros((obj.len(), RAW_DIM));
    for (i, p) in obj.parts.iter().enumerate() {
        m.row_mut(i).assign(&ndarray::Array1::from(encode_joint(&p.joint)));
    }
    m
}

/// Settings of the end-to-end toy experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyRunConfig {
    pub seed: u64,
    pub objects: usize,
    pub net: DenoiserConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    /// Optimizer steps for the coarse-stage network (0 skips it).
    pub stage1_steps: usize,
}

impl Default for ToyRunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            objects: 32,
            net: DenoiserConfig::default(),
            head: HeadConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerConfig::default(),
            stage1_steps: 0,
        }
    }
}

impl ToyRunConfig {
    pub fn stage1_net(&self) -> DenoiserConfig {
        DenoiserConfig { stage: Stage::One, resolution: TOY_RESOLUTION / 2, ..self.net.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct ToyReport {
    pub fm_before: f64,
    pub fm_after: f64,
    /// Mean angle between predicted and true axes over movable parts, degrees.
    pub axis_error_deg: f64,
    pub type_accuracy: f64,
    pub history: Vec<StepStats>,
    pub net: Denoiser,
    pub head: ArticulationHead,
    pub stage1: Option<Denoiser>,
}

impl ToyReport {
    pub fn models(&self) -> ToyModels {
        ToyModels { net: self.net.clone(), head: self.head.clone(), stage1: self.stage1.clone() }
    }
}

/// Trained toy networks in one checkpoint, under the `net.`, `head.` and `stage1.` prefixes.
#[derive(Debug, Clone)]
pub struct ToyModels {
    pub net: Denoiser,
    pub head: ArticulationHead,
    pub stage1: Option<Denoiser>,
}

impl ToyModels {
    pub fn to_tensor_file(&self) -> TensorFile {
        let mut config = serde_json::Map::new();
        let mut tensors = Vec::new();
        let mut add = |prefix: &str, f: TensorFile| {
            config.insert(prefix.to_string(), f.config);
            tensors.extend(f.tensors.into_iter().map(|mut t| {
                t.name = format!("{prefix}.{}", t.name);
                t
            }));
        };
        add("net", self.net.to_tensor_file());
        add("head", self.head.to_tensor_file());
        if let Some(s1) = &self.stage1 {
            add("stage1", s1.to_tensor_file());
        }
        TensorFile::new(serde_json::Value::Object(config), tensors)
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        let stage1 = match file.config.get("stage1") {
            Some(_) => Some(Denoiser::from_tensor_file(&file.scoped("stage1."))?),
            None => None,
        };
        Ok(Self {
            net: Denoiser::from_tensor_file(&file.scoped("net."))?,
            head: ArticulationHead::from_tensor_file(&file.scoped("head."))?,
            stage1,
        })
    }
}

pub fn part_aabbs(pv: &PartVoxelSet) -> Vec<Aabb> {
    let r = pv.resolution() as f64;
    pv.parts()
        .iter()
        .map(|p| {
            let mut lo = [u32::MAX; 3];
            let mut hi = [0u32; 3];
            for c in p.coords() {
                for a in 0..3 {
                    lo[a] = lo[a].min(c[a]);
                    hi[a] = hi[a].max(c[a] + 1);
                }
            }
            let f = |v: [u32; 3]| Point3::new(v[0] as f64 / r, v[1] as f64 / r, v[2] as f64 / r);
            Aabb::new(f(lo), f(hi))
        })
        .collect()
}

/// Trains the fine-stage network and head on a seeded toy dataset, then samples
/// every object with feature caching and scores the decoded joints.
pub fn run_toy(cfg: &ToyRunConfig) -> Result<ToyReport> {
    let data = toy_dataset(cfg.objects, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let net_cfg = DenoiserConfig {
        stage: Stage::Two,
        in_channels: TOKEN_CHANNELS,
        out_channels: TOKEN_CHANNELS,
        cond_channels: COND_CHANNELS,
        cond_grid: (TOY_RESOLUTION as usize, TOY_RESOLUTION as usize),
        resolution: TOY_RESOLUTION,
        ..cfg.net.clone()
    };
    let net = Denoiser::new(net_cfg.clone(), &mut rng)?;
    let head = ArticulationHead::new(HeadConfig { input_dim: 2 * net_cfg.dim, ..cfg.head.clone() }, &mut rng)?;
    let examples = data
        .iter()
        .map(|o| Ok(TrainExample { tokens: stage2_tokens(&o.voxels)?, cond: o.cond.clone(), joints: Some(joint_targets(&o.object)) }))
        .collect::<Result<Vec<_>>>()?;
    let eval_seed = cfg.seed.wrapping_add(2);
    let fm_before = eval_flow_loss(&net, &examples, eval_seed)?;
    let mut trainer = Trainer::new(net, Some(head), cfg.train.clone());
    let history = trainer.fit(&examples)?;
    let fm_after = eval_flow_loss(&trainer.net, &examples, eval_seed)?;
    let head = trainer.head.take().expect("head present");
    let net = trainer.net;

    let stage1 = if cfg.stage1_steps > 0 {
        let s1 = Denoiser::new(
            DenoiserConfig {
                in_channels: TOKEN_CHANNELS,
                out_channels: TOKEN_CHANNELS,
                cond_channels: COND_CHANNELS,
                cond_grid: net_cfg.cond_grid,
                ..cfg.stage1_net()
            },
            &mut rng,
        )?;
        let ex1 = data
            .iter()
            .map(|o| Ok(TrainExample { tokens: stage1_tokens(&o.voxels)?, cond: o.cond.clone(), joints: None }))
            .collect::<Result<Vec<_>>>()?;
        let mut t1 = Trainer::new(s1, None, TrainConfig { steps: cfg.stage1_steps, ..cfg.train.clone() });
        t1.fit(&ex1)?;
        Some(t1.net)
    } else {
        None
    };

    let mut angle_sum = 0.0;
    let mut movable = 0usize;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (i, o) in data.iter().enumerate() {
        let sampler = SamplerConfig { seed: cfg.sampler.seed.wrapping_add(i as u64), ..cfg.sampler.clone() };
        let (_, cache) = euler_sample(&net, &stage2_template(&o.voxels)?, Some(&o.cond), &sampler)?;
        let joints = predict_articulation(&cache, &head, &part_aabbs(&o.voxels))?;
        for (pred, gt) in joints.iter().zip(o.object.joints()) {
            total += 1;
            correct += usize::from(pred.joint_type == gt.joint_type);
            if gt.is_movable() {
                movable += 1;
                angle_sum += pred.axis.dot(&gt.axis).clamp(-1.0, 1.0).acos().to_degrees();
            }
        }
    }
    Ok(ToyReport {
        fm_before,
        fm_after,
        axis_error_deg: if movable == 0 { 0.0 } else { angle_sum / movable as f64 },
        type_accuracy: correct as f64 / total.max(1) as f64,
        history,
        net,
        head,
        stage1,
    })
}
