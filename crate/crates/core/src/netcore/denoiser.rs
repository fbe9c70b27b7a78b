//! The part-aware velocity network: token embedding, interleaved global / within-part
//! blocks with cross-attention on conditioning tokens, and an output projection.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{block_forward, layer_norm_affine, linear, AttentionParams, AttnScope, BlockWeights, CrossWeights};
use super::embed::{pool_matrix, MaskMap};
use super::params::{Graph, ParamId, ParamStore, TensorFile};
use super::tape::{Mat, Var};
use crate::error::{Error, Result};
use crate::sparsegrid::{positional_encoding, TokenSequence};

/// Which generation stage a network serves; selects how part identity is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Stage {
    /// Coarse per-part occupancy; part embedding concatenated before the input projection.
    #[serde(rename = "stage1")]
    One,
    /// Fine token features; part embedding added after the input projection.
    #[serde(rename = "stage2")]
    Two,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::One => "stage1",
            Stage::Two => "stage2",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stage1" | "1" => Ok(Stage::One),
            "stage2" | "2" => Ok(Stage::Two),
            _ => Err(Error::Semantic(format!("unknown stage `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Even layers global, odd layers within-part.
    Interleaved,
    AllGlobal,
}

impl Schedule {
    pub fn is_global(self, layer: usize) -> bool {
        match self {
            Schedule::Interleaved => layer.is_multiple_of(2),
            Schedule::AllGlobal => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    /// Width of the part-identity table in stage 1. Stage 2 tables are `dim` wide.
    pub part_dim: usize,
    pub max_parts: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub cond_channels: usize,
    /// Conditioning feature grid `(rows, cols)`; masks are average-pooled onto it.
    pub cond_grid: (usize, usize),
    pub pe_dim: usize,
    pub time_dim: usize,
    pub resolution: u32,
    pub stage: Stage,
    pub schedule: Schedule,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            dim: 64,
            heads: 4,
            part_dim: 16,
            max_parts: 8,
            in_channels: 8,
            out_channels: 8,
            cond_channels: 4,
            cond_grid: (8, 8),
            pe_dim: 48,
            time_dim: 32,
            resolution: 8,
            stage: Stage::Two,
            schedule: Schedule::Interleaved,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Shape(m));
        if self.depth < 2 {
            return bad(format!("depth {} < 2", self.depth));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.pe_dim == 0 || !self.pe_dim.is_multiple_of(6) {
            return Err(Error::EncodingDim { dim: self.pe_dim });
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return bad(format!("time embedding width {} must be even", self.time_dim));
        }
        if self.max_parts == 0 || self.in_channels == 0 || self.out_channels == 0 || self.cond_channels == 0 {
            return bad("zero-sized config field".into());
        }
        if self.stage == Stage::One && self.part_dim == 0 {
            return bad("stage 1 needs a nonzero part embedding width".into());
        }
        if self.cond_grid.0 == 0 || self.cond_grid.1 == 0 {
            return bad("empty conditioning grid".into());
        }
        Ok(())
    }

    fn table_width(&self) -> usize {
        match self.stage {
            Stage::One => self.part_dim,
            Stage::Two => self.dim,
        }
    }

    pub fn cond_cells(&self) -> usize {
        self.cond_grid.0 * self.cond_grid.1
    }
}

/// Image-space conditioning: a feature grid (`cells × cond_channels`, row-major) and a part mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub features: Mat,
    pub mask: MaskMap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Ablation hook: drop every global layer from the stack.
    pub skip_global_layers: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub velocity: TokenSequence,
    /// Token features after the last transformer block, `L × D`.
    pub last_block: Mat,
}

#[derive(Debug, Clone, Copy)]
pub struct GraphOutput {
    pub velocity: Var,
    pub last_block: Var,
}

#[derive(Debug, Clone, PartialEq)]
struct Ids {
    part_table: ParamId,
    w_in: ParamId,
    b_in: ParamId,
    w_pe: ParamId,
    time: [ParamId; 4],
    cond_w: ParamId,
    cond_b: ParamId,
    cond_mask_w: ParamId,
    null_cond: ParamId,
    blocks: Vec<(BlockWeights<ParamId>, CrossWeights<ParamId>)>,
    out_g: ParamId,
    out_b: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamStore,
    ids: Ids,
}

/// `[sin(1000 t ω_k) ‖ cos(1000 t ω_k)]` with `ω_k = 10000^{-k/half}`.
pub fn timestep_embedding(t: f64, dim: usize) -> Mat {
    let half = dim / 2;
    let mut m = Mat::zeros((1, dim));
    for k in 0..half {
        let w = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        let a = 1000.0 * t * w;
        m[[0, k]] = a.sin();
        m[[0, half + k]] = a.cos();
    }
    m
}

impl Denoiser {
    pub fn new<R: Rng>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let d = c.dim;
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let mut p = ParamStore::new();
        let part_table = p.add_normal("part_table", (c.max_parts, c.table_width()), 1.0, rng);
        let in_width = match c.stage {
            Stage::One => c.in_channels + c.part_dim,
            Stage::Two => c.in_channels,
        };
        let w_in = p.add_normal("w_in", (in_width, d), inv(in_width), rng);
        let b_in = p.add("b_in", Mat::zeros((1, d)));
        let w_pe = p.add_normal("w_pe", (c.pe_dim, d), inv(c.pe_dim), rng);
        let time = [
            p.add_normal("time.w1", (c.time_dim, d), inv(c.time_dim), rng),
            p.add("time.b1", Mat::zeros((1, d))),
            p.add_normal("time.w2", (d, d), inv(d), rng),
            p.add("time.b2", Mat::zeros((1, d))),
        ];
        let cond_w = p.add_normal("cond.w_feat", (c.cond_channels, d), inv(c.cond_channels), rng);
        let cond_b = p.add("cond.b_feat", Mat::zeros((1, d)));
        let cond_mask_w = p.add_normal("cond.w_mask", (c.table_width(), d), inv(c.table_width()), rng);
        let null_cond = p.add_normal("null_cond", (1, d), 1.0, rng);
        let mut blocks = Vec::with_capacity(c.depth);
        for i in 0..c.depth {
            let bw = AttentionParams::init(d, rng).map(|name, m| p.add(format!("blocks.{i}.{name}"), m.clone()));
            let cw = CrossWeights {
                ln_g: Mat::ones((1, d)),
                ln_b: Mat::zeros((1, d)),
                wq: Mat::zeros((0, 0)),
                wk: Mat::zeros((0, 0)),
                wv: Mat::zeros((0, 0)),
                wo: Mat::zeros((0, 0)),
            }
            .map(|name, m| {
                let key = format!("blocks.{i}.cross.{name}");
                if m.is_empty() {
                    p.add_normal(key, (d, d), inv(d), rng)
                } else {
                    p.add(key, m.clone())
                }
            });
            blocks.push((bw, cw));
        }
        let out_g = p.add("out.ln_g", Mat::ones((1, d)));
        let out_b = p.add("out.ln_b", Mat::zeros((1, d)));
        let w_out = p.add_normal("w_out", (d, c.out_channels), 0.1 * inv(d), rng);
        let b_out = p.add("b_out", Mat::zeros((1, c.out_channels)));
        let ids = Ids { part_table, w_in, b_in, w_pe, time, cond_w, cond_b, cond_mask_w, null_cond, blocks, out_g, out_b, w_out, b_out };
        Ok(Self { config, params: p, ids })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        TensorFile::new(serde_json::to_value(&self.config).expect("config serializes"), self.params.to_records(""))
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self> {
        let config: DenoiserConfig = serde_json::from_value(file.config.clone())?;
        let mut net = Self::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        net.params.load_from(file)?;
        Ok(net)
    }

    fn check_inputs(&self, seq: &TokenSequence, t: f64, cond: Option<&Conditioning>) -> Result<()> {
        let c = &self.config;
        seq.check()?;
        if seq.is_empty() {
            return Err(Error::Empty("token sequence".into()));
        }
        if seq.dim() != c.in_channels {
            return Err(Error::Shape(format!("tokens have {} channels, network expects {}", seq.dim(), c.in_channels)));
        }
        if let Some(&p) = seq.part_ids.iter().find(|&&p| p >= c.max_parts) {
            return Err(Error::Range(format!("part index {p} exceeds table size {}", c.max_parts)));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("timestep".into()));
        }
        if let Some(cond) = cond {
            if cond.features.dim() != (c.cond_cells(), c.cond_channels) {
                return Err(Error::Shape(format!(
                    "conditioning features {:?}, expected {:?}",
                    cond.features.dim(),
                    (c.cond_cells(), c.cond_channels)
                )));
            }
            if let Some(v) = cond.mask.values.iter().find(|&&v| v >= c.max_parts) {
                return Err(Error::Range(format!("mask value {v} exceeds table size {}", c.max_parts)));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `g`, which must be bound to this network's parameters.
    pub fn forward_graph(
        &self,
        g: &mut Graph<'_>,
        seq: &TokenSequence,
        t: f64,
        cond: Option<&Conditioning>,
        opts: ForwardOptions,
    ) -> Result<GraphOutput> {
        self.check_inputs(seq, t, cond)?;
        let c = &self.config;
        let ids = &self.ids;
        let table = g.param(ids.part_table);
        let x = g.constant(seq.tokens.clone());
        let mut h = match c.stage {
            Stage::One => {
                let e = g.gather(table, &seq.part_ids);
                let xe = g.concat_cols(&[x, e]);
                let (w, b) = (g.param(ids.w_in), g.param(ids.b_in));
                linear(g, xe, w, b)
            }
            Stage::Two => {
                let (w, b) = (g.param(ids.w_in), g.param(ids.b_in));
                let y = linear(g, x, w, b);
                let e = g.gather(table, &seq.part_ids);
                g.add(y, e)
            }
        };

        let mut pe = Array2::zeros((seq.len(), c.pe_dim));
        for (mut row, &coord) in pe.axis_iter_mut(Axis(0)).zip(&seq.coords) {
            row.assign(&ndarray::Array1::from(positional_encoding(coord, c.pe_dim, c.resolution)?));
        }
        let pe = g.constant(pe);
        let w_pe = g.param(ids.w_pe);
        let pe = g.matmul(pe, w_pe);
        h = g.add(h, pe);

        let temb = g.constant(timestep_embedding(t, c.time_dim));
        let [w1, b1, w2, b2] = ids.time.map(|id| g.param(id));
        let te = linear(g, temb, w1, b1);
        let te = g.silu(te);
        let te = linear(g, te, w2, b2);
        h = g.add_row(h, te);

        let cond_tokens = match cond {
            Some(cond) => {
                let f = g.constant(cond.features.clone());
                let (w, b) = (g.param(ids.cond_w), g.param(ids.cond_b));
                let f = linear(g, f, w, b);
                let pool = g.constant(pool_matrix((cond.mask.height, cond.mask.width), c.cond_grid)?);
                let dense = g.gather(table, &cond.mask.values);
                let pooled = g.matmul(pool, dense);
                let wm = g.param(ids.cond_mask_w);
                let m = g.matmul(pooled, wm);
                g.add(f, m)
            }
            None => g.param(ids.null_cond),
        };

        let groups = seq.groups();
        for (layer, (bw, cw)) in ids.blocks.iter().enumerate() {
            let global = c.schedule.is_global(layer);
            if global && opts.skip_global_layers {
                continue;
            }
            let scope = if global { AttnScope::Global } else { AttnScope::WithinPart(&groups) };
            let bw = bw.map(|_, &id| g.param(id));
            let cw = cw.map(|_, &id| g.param(id));
            h = block_forward(g, h, &bw, c.heads, scope, Some((cond_tokens, &cw)));
        }
        let last_block = h;
        let (og, ob) = (g.param(ids.out_g), g.param(ids.out_b));
        let hn = layer_norm_affine(g, h, og, ob);
        let (w, b) = (g.param(ids.w_out), g.param(ids.b_out));
        let velocity = linear(g, hn, w, b);
        Ok(GraphOutput { velocity, last_block })
    }

    pub fn forward(&self, seq: &TokenSequence, t: f64, cond: Option<&Conditioning>, opts: ForwardOptions) -> Result<DenoiserOutput> {
        let mut g = Graph::new(&self.params);
        let out = self.forward_graph(&mut g, seq, t, cond, opts)?;
        let velocity = seq.with_tokens(g.value(out.velocity).clone())?;
        Ok(DenoiserOutput { velocity, last_block: g.value(out.last_block).clone() })
    }
}

/// Bounded pseudo-random entries for synthetic inputs.
#[cfg(test)]
pub(crate) fn random_tokens<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || (rng.random::<f64>() * std::f64::consts::TAU).sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(stage: Stage) -> DenoiserConfig {
        DenoiserConfig {
            depth: 2,
            dim: 16,
            heads: 2,
            part_dim: 4,
            max_parts: 4,
            in_channels: 3,
            out_channels: 3,
            cond_channels: 2,
            cond_grid: (2, 2),
            pe_dim: 12,
            time_dim: 8,
            resolution: 8,
            stage,
            schedule: Schedule::Interleaved,
        }
    }

    fn seq(parts: &[usize], ch: usize, rng: &mut ChaCha8Rng) -> TokenSequence {
        let ids: Vec<usize> = parts.iter().enumerate().flat_map(|(p, &n)| std::iter::repeat_n(p, n)).collect();
        let l = ids.len();
        let coords = (0..l as u32).map(|i| [i % 8, (i / 8) % 8, i % 3]).collect();
        TokenSequence::new(random_tokens(rng, l, ch), coords, ids).unwrap()
    }

    fn cond(rng: &mut ChaCha8Rng) -> Conditioning {
        Conditioning { features: random_tokens(rng, 4, 2), mask: MaskMap::new(4, 4, (0..16).map(|i| (i / 4) % 3).collect()).unwrap() }
    }

    #[test]
    fn output_shape_and_coords_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for stage in [Stage::One, Stage::Two] {
            let net = Denoiser::new(small(stage), &mut rng).unwrap();
            let s = seq(&[5, 2, 4], 3, &mut rng);
            let c = cond(&mut rng);
            let out = net.forward(&s, 0.3, Some(&c), ForwardOptions::default()).unwrap();
            assert_eq!(out.velocity.len(), 11);
            assert_eq!(out.velocity.coords, s.coords);
            assert_eq!(out.velocity.part_ids, s.part_ids);
            assert_eq!(out.last_block.dim(), (11, 16));
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Denoiser::new(small(Stage::Two), &mut rng).unwrap();
        net.params_mut().map_inplace(|_| 0.0);
        let s = seq(&[3, 3], 3, &mut rng);
        let out = net.forward(&s, 0.7, None, ForwardOptions::default()).unwrap();
        assert!(out.velocity.tokens.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_part_flow_only_through_global_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Denoiser::new(small(Stage::Two), &mut rng).unwrap();
        let s = seq(&[4, 5], 3, &mut rng);
        let mut s2 = s.clone();
        for r in 4..9 {
            s2.tokens.row_mut(r).mapv_inplace(|v| v + 10.0);
        }
        let c = cond(&mut rng);
        let run = |x: &TokenSequence, skip| {
            net.forward(x, 0.5, Some(&c), ForwardOptions { skip_global_layers: skip })
                .unwrap()
                .velocity
                .tokens
                .slice(ndarray::s![0..4, ..])
                .to_owned()
        };
        assert_eq!(run(&s, true), run(&s2, true));
        assert_ne!(run(&s, false), run(&s2, false));
    }

    #[test]
    fn single_part_interleaved_equals_all_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = Denoiser::new(small(Stage::One), &mut rng).unwrap();
        let mut global = net.clone();
        global.config.schedule = Schedule::AllGlobal;
        let s = seq(&[7], 3, &mut rng);
        let a = net.forward(&s, 0.2, None, ForwardOptions::default()).unwrap();
        let b = global.forward(&s, 0.2, None, ForwardOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conditioning_changes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Denoiser::new(small(Stage::Two), &mut rng).unwrap();
        let s = seq(&[3, 3], 3, &mut rng);
        let c = cond(&mut rng);
        let a = net.forward(&s, 0.5, Some(&c), ForwardOptions::default()).unwrap();
        let b = net.forward(&s, 0.5, None, ForwardOptions::default()).unwrap();
        assert_ne!(a.velocity, b.velocity);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = Denoiser::new(small(Stage::Two), &mut rng).unwrap();
        let s = seq(&[3], 2, &mut rng);
        assert!(matches!(net.forward(&s, 0.5, None, ForwardOptions::default()), Err(Error::Shape(_))));
        let s = seq(&[1, 1, 1, 1, 1], 3, &mut rng);
        assert!(matches!(net.forward(&s, 0.5, None, ForwardOptions::default()), Err(Error::Range(_))));
        let mut bad = small(Stage::Two);
        bad.heads = 3;
        assert!(Denoiser::new(bad, &mut rng).is_err());
        let mut bad = small(Stage::Two);
        bad.depth = 1;
        assert!(Denoiser::new(bad, &mut rng).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = Denoiser::new(small(Stage::One), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.to_tensor_file().save(&path).unwrap();
        let back = Denoiser::from_tensor_file(&TensorFile::load(&path).unwrap()).unwrap();
        assert_eq!(back, net);
    }
}
