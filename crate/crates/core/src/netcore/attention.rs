//! Scaled dot-product attention and pre-norm transformer blocks with an optional
//! within-part restriction.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tape::{softmax_rows, Mat, Tape, Var};
use crate::error::{Error, Result};
use crate::sparsegrid::TokenSequence;

/// `softmax(Q Kᵀ / √d) V` with `d` the query width.
pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> Result<Mat> {
    if q.ncols() != k.ncols() || k.nrows() != v.nrows() {
        return Err(Error::Shape(format!("attention with Q {:?}, K {:?}, V {:?}", q.dim(), k.dim(), v.dim())));
    }
    let scores = q.dot(&k.t()) / (q.ncols() as f64).sqrt();
    Ok(softmax_rows(scores.view()).dot(v))
}

/// Weights of one transformer block, generic over storage (matrices, parameter ids, tape vars).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights<T> {
    pub ln1_g: T,
    pub ln1_b: T,
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
    pub ln2_g: T,
    pub ln2_b: T,
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

/// Concrete block weights: `W_Q, W_K, W_V, W_O` are `D × D`, the FFN hidden width is `4D`.
pub type AttentionParams = BlockWeights<Mat>;

impl<T> BlockWeights<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> BlockWeights<U> {
        BlockWeights {
            ln1_g: f("ln1_g", &self.ln1_g),
            ln1_b: f("ln1_b", &self.ln1_b),
            wq: f("wq", &self.wq),
            wk: f("wk", &self.wk),
            wv: f("wv", &self.wv),
            wo: f("wo", &self.wo),
            ln2_g: f("ln2_g", &self.ln2_g),
            ln2_b: f("ln2_b", &self.ln2_b),
            w1: f("w1", &self.w1),
            b1: f("b1", &self.b1),
            w2: f("w2", &self.w2),
            b2: f("b2", &self.b2),
        }
    }
}

fn normal<R: Rng>(shape: (usize, usize), std: f64, rng: &mut R) -> Mat {
    Mat::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

impl AttentionParams {
    pub fn init<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let s = 1.0 / (dim as f64).sqrt();
        Self {
            ln1_g: Mat::ones((1, dim)),
            ln1_b: Mat::zeros((1, dim)),
            wq: normal((dim, dim), s, rng),
            wk: normal((dim, dim), s, rng),
            wv: normal((dim, dim), s, rng),
            wo: normal((dim, dim), s, rng),
            ln2_g: Mat::ones((1, dim)),
            ln2_b: Mat::zeros((1, dim)),
            w1: normal((dim, 4 * dim), s, rng),
            b1: Mat::zeros((1, 4 * dim)),
            w2: normal((4 * dim, dim), 0.5 * s, rng),
            b2: Mat::zeros((1, dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.nrows()
    }

    pub fn check(&self) -> Result<()> {
        let d = self.dim();
        let expect = self.map(|name, _| match name {
            "w1" => (d, 4 * d),
            "b1" => (1, 4 * d),
            "w2" => (4 * d, d),
            "wq" | "wk" | "wv" | "wo" => (d, d),
            _ => (1, d),
        });
        let mut bad = None;
        let _ = self.map(|name, m| {
            let want = *expect_field(&expect, name);
            if m.dim() != want && bad.is_none() {
                bad = Some(format!("{name} has shape {:?}, expected {want:?}", m.dim()));
            }
            if m.iter().any(|v| !v.is_finite()) && bad.is_none() {
                bad = Some(format!("{name} has non-finite entries"));
            }
        });
        bad.map_or(Ok(()), |m| Err(Error::Shape(m)))
    }

    pub fn leaves(&self, tape: &mut Tape) -> BlockWeights<Var> {
        self.map(|_, m| tape.leaf(m.clone()))
    }
}

fn expect_field<'a, T>(w: &'a BlockWeights<T>, name: &str) -> &'a T {
    match name {
        "ln1_g" => &w.ln1_g,
        "ln1_b" => &w.ln1_b,
        "wq" => &w.wq,
        "wk" => &w.wk,
        "wv" => &w.wv,
        "wo" => &w.wo,
        "ln2_g" => &w.ln2_g,
        "ln2_b" => &w.ln2_b,
        "w1" => &w.w1,
        "b1" => &w.b1,
        "w2" => &w.w2,
        _ => &w.b2,
    }
}

/// Cross-attention weights: queries from tokens (`D`), keys/values from conditioning (`D_c`).
#[derive(Debug, Clone, PartialEq)]
pub struct CrossWeights<T> {
    pub ln_g: T,
    pub ln_b: T,
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
}

impl<T> CrossWeights<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> CrossWeights<U> {
        CrossWeights {
            ln_g: f("ln_g", &self.ln_g),
            ln_b: f("ln_b", &self.ln_b),
            wq: f("wq", &self.wq),
            wk: f("wk", &self.wk),
            wv: f("wv", &self.wv),
            wo: f("wo", &self.wo),
        }
    }
}

/// Which tokens a self-attention layer may mix.
#[derive(Debug, Clone, Copy)]
pub enum AttnScope<'a> {
    Global,
    /// Contiguous `(part, start, len)` groups; attention never crosses a group.
    WithinPart(&'a [(usize, usize, usize)]),
}

pub fn layer_norm_affine(t: &mut Tape, x: Var, g: Var, b: Var) -> Var {
    let n = t.layer_norm(x);
    let s = t.mul_row(n, g);
    t.add_row(s, b)
}

pub fn linear(t: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let y = t.matmul(x, w);
    t.add_row(y, b)
}

/// Two-layer SiLU feed-forward network.
pub fn ffn(t: &mut Tape, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Var {
    let h = linear(t, x, w1, b1);
    let h = t.silu(h);
    linear(t, h, w2, b2)
}

/// Multi-head attention over already projected `q` (`Lq × D`), `k`, `v` (`Lk × D`).
pub fn multi_head(t: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Var {
    let d = t.value(q).ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let outs: Vec<Var> = (0..heads)
        .map(|h| {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (t.slice_cols(q, h * dh, dh), t.slice_cols(k, h * dh, dh), t.slice_cols(v, h * dh, dh))
            };
            let s = t.matmul_t(qh, kh);
            let s = t.scale(s, scale);
            let a = t.softmax_rows(s);
            t.matmul(a, vh)
        })
        .collect();
    t.concat_cols(&outs)
}

/// Self-attention of `x` (already normalized) restricted by `scope`, followed by the output projection.
pub fn self_attention(t: &mut Tape, x: Var, w: &BlockWeights<Var>, heads: usize, scope: AttnScope<'_>) -> Var {
    let q = t.matmul(x, w.wq);
    let k = t.matmul(x, w.wk);
    let v = t.matmul(x, w.wv);
    let rows = t.value(x).nrows();
    let mixed = match scope {
        AttnScope::WithinPart(groups) if !(groups.len() == 1 && groups[0].2 == rows) => {
            let outs: Vec<Var> = groups
                .iter()
                .map(|&(_, start, len)| {
                    let qg = t.slice_rows(q, start, len);
                    let kg = t.slice_rows(k, start, len);
                    let vg = t.slice_rows(v, start, len);
                    multi_head(t, qg, kg, vg, heads)
                })
                .collect();
            t.concat_rows(&outs)
        }
        _ => multi_head(t, q, k, v, heads),
    };
    t.matmul(mixed, w.wo)
}

pub fn cross_attention(t: &mut Tape, x: Var, cond: Var, w: &CrossWeights<Var>, heads: usize) -> Var {
    let xn = layer_norm_affine(t, x, w.ln_g, w.ln_b);
    let q = t.matmul(xn, w.wq);
    let k = t.matmul(cond, w.wk);
    let v = t.matmul(cond, w.wv);
    let o = multi_head(t, q, k, v, heads);
    t.matmul(o, w.wo)
}

/// Pre-norm block: `h = x + SelfAttn(LN(x))`, optional `h += CrossAttn(LN(h), cond)`, then `h += FFN(LN(h))`.
pub fn block_forward(
    t: &mut Tape,
    x: Var,
    w: &BlockWeights<Var>,
    heads: usize,
    scope: AttnScope<'_>,
    cross: Option<(Var, &CrossWeights<Var>)>,
) -> Var {
    let xn = layer_norm_affine(t, x, w.ln1_g, w.ln1_b);
    let a = self_attention(t, xn, w, heads, scope);
    let mut h = t.add(x, a);
    if let Some((cond, cw)) = cross {
        let c = cross_attention(t, h, cond, cw, heads);
        h = t.add(h, c);
    }
    let hn = layer_norm_affine(t, h, w.ln2_g, w.ln2_b);
    let f = ffn(t, hn, w.w1, w.b1, w.w2, w.b2);
    t.add(h, f)
}

fn run_block(seq: &TokenSequence, params: &AttentionParams, heads: usize, within: bool) -> Result<TokenSequence> {
    seq.check()?;
    params.check()?;
    if seq.dim() != params.dim() {
        return Err(Error::Shape(format!("tokens have width {}, block expects {}", seq.dim(), params.dim())));
    }
    if heads == 0 || !params.dim().is_multiple_of(heads) {
        return Err(Error::Shape(format!("width {} not divisible by {heads} heads", params.dim())));
    }
    let mut t = Tape::new();
    let w = params.leaves(&mut t);
    let x = t.leaf(seq.tokens.clone());
    let groups = seq.groups();
    let scope = if within { AttnScope::WithinPart(&groups) } else { AttnScope::Global };
    let y = block_forward(&mut t, x, &w, heads, scope, None);
    seq.with_tokens(t.value(y).clone())
}

/// One block whose self-attention only mixes tokens of the same part.
pub fn within_part_attention(seq: &TokenSequence, params: &AttentionParams, heads: usize) -> Result<TokenSequence> {
    run_block(seq, params, heads, true)
}

/// The same block with unrestricted self-attention.
pub fn global_attention_block(seq: &TokenSequence, params: &AttentionParams, heads: usize) -> Result<TokenSequence> {
    run_block(seq, params, heads, false)
}

/// Tokens grouped per part as `Array2` views, for tests and diagnostics.
pub fn split_by_part(seq: &TokenSequence) -> Vec<Array2<f64>> {
    seq.groups().into_iter().map(|(_, s, n)| seq.tokens.slice(ndarray::s![s..s + n, ..]).to_owned()).collect()
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn seq(parts: &[usize], d: usize, rng: &mut ChaCha8Rng) -> TokenSequence {
        let ids: Vec<usize> = parts.iter().enumerate().flat_map(|(p, &n)| std::iter::repeat_n(p, n)).collect();
        let l = ids.len();
        TokenSequence::new(normal((l, d), 1.0, rng), vec![[0, 0, 0]; l], ids).unwrap()
    }

    #[test]
    fn identical_values_pass_through() {
        let q = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]];
        let k = array![[0.3, 0.1], [2.0, 1.0]];
        let v = array![[4.0, -2.0, 1.0], [4.0, -2.0, 1.0]];
        let out = attention(&q, &k, &v).unwrap();
        for row in out.rows() {
            for (a, b) in row.iter().zip([4.0, -2.0, 1.0]) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_key_returns_value() {
        let out = attention(&array![[0.7, -3.0]], &array![[2.0, 5.0]], &array![[1.5, 2.5]]).unwrap();
        assert_eq!(out, array![[1.5, 2.5]]);
    }

    #[test]
    fn two_by_two_hand_softmax() {
        let q = array![[10.0, 0.0], [0.0, 10.0]];
        let v = array![[1.0, 0.0], [0.0, 1.0]];
        let out = attention(&q, &q, &v).unwrap();
        // Scores are diag(100)/√2; each row weights its own value by 1/(1+e^{-100/√2}).
        let s = 100.0 / 2f64.sqrt();
        let w_self = 1.0 / (1.0 + (-s).exp());
        assert!((out[[0, 0]] - w_self).abs() < 1e-15);
        assert!((out[[0, 1]] - (1.0 - w_self)).abs() < 1e-15);
        assert!((out - &v).mapv(f64::abs).sum() < 1e-12);
    }

    #[test]
    fn attention_shape_errors() {
        assert!(attention(&array![[1.0, 2.0]], &array![[1.0]], &array![[1.0]]).is_err());
    }

    #[test]
    fn single_part_matches_global() {
        let mut r = rng();
        let p = AttentionParams::init(8, &mut r);
        let s = seq(&[6], 8, &mut r);
        let a = within_part_attention(&s, &p, 2).unwrap();
        let b = global_attention_block(&s, &p, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturbing_one_part_leaves_others_bitwise() {
        let mut r = rng();
        let p = AttentionParams::init(8, &mut r);
        let s = seq(&[4, 3, 5], 8, &mut r);
        let mut s2 = s.clone();
        for row in 4..7 {
            for c in 0..8 {
                s2.tokens[[row, c]] += 10.0;
            }
        }
        let a = split_by_part(&within_part_attention(&s, &p, 2).unwrap());
        let b = split_by_part(&within_part_attention(&s2, &p, 2).unwrap());
        assert_eq!(a[0], b[0]);
        assert_eq!(a[2], b[2]);
        assert_ne!(a[1], b[1]);
    }

    #[test]
    fn singleton_parts_are_residual_self_maps() {
        let mut r = rng();
        let p = AttentionParams::init(6, &mut r);
        let s = seq(&[1, 1], 6, &mut r);
        let out = within_part_attention(&s, &p, 1).unwrap();
        // With one key per part, attention returns that token's own value projection.
        for i in 0..2 {
            let single = TokenSequence::new(s.tokens.slice(ndarray::s![i..i + 1, ..]).to_owned(), vec![[0; 3]], vec![0]).unwrap();
            let alone = global_attention_block(&single, &p, 1).unwrap();
            assert_eq!(out.tokens.row(i), alone.tokens.row(0));
        }
    }

    #[test]
    fn ungrouped_ids_rejected() {
        let mut r = rng();
        let p = AttentionParams::init(6, &mut r);
        let mut s = seq(&[2, 2], 6, &mut r);
        s.part_ids = vec![0, 1, 0, 1];
        assert!(matches!(within_part_attention(&s, &p, 1), Err(Error::Structural(_))));
    }

    #[test]
    fn permuting_within_part_permutes_outputs() {
        let mut r = rng();
        let p = AttentionParams::init(6, &mut r);
        let s = seq(&[4], 6, &mut r);
        let perm = [2, 0, 3, 1];
        let mut sp = s.clone();
        for (i, &j) in perm.iter().enumerate() {
            sp.tokens.row_mut(i).assign(&s.tokens.row(j));
        }
        let a = within_part_attention(&s, &p, 2).unwrap();
        let b = within_part_attention(&sp, &p, 2).unwrap();
        for (i, &j) in perm.iter().enumerate() {
            let diff = (&b.tokens.row(i) - &a.tokens.row(j)).mapv(f64::abs).sum();
            assert!(diff < 1e-12);
        }
    }
}
