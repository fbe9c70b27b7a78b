//! Part-identity tables and dense mask-embedding maps.

use ndarray::{concatenate, Array3, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tape::Mat;
use crate::error::{Error, Result};
use crate::sparsegrid::TokenSequence;

/// `T × d_p` table of learnable per-part vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PartEmbeddingTable {
    pub table: Mat,
}

impl PartEmbeddingTable {
    pub fn new(table: Mat) -> Self {
        Self { table }
    }

    pub fn zeros(max_parts: usize, dim: usize) -> Self {
        Self::new(Mat::zeros((max_parts, dim)))
    }

    pub fn random<R: Rng>(max_parts: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        Self::new(Mat::from_shape_simple_fn((max_parts, dim), || {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        }))
    }

    pub fn max_parts(&self) -> usize {
        self.table.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.max_parts() {
            return Err(Error::Range(format!("part index {i} exceeds table size {}", self.max_parts())));
        }
        Ok(())
    }
}

/// How part identity enters the token features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentityMode {
    /// `[z ‖ E[part]]`, width grows by `d_p`.
    Concat,
    /// `z + E[part]`, width unchanged.
    Add,
}

pub fn attach_part_identity(seq: &TokenSequence, table: &PartEmbeddingTable, mode: IdentityMode) -> Result<TokenSequence> {
    seq.check()?;
    for &p in &seq.part_ids {
        table.check_index(p)?;
    }
    let rows = table.table.select(Axis(0), &seq.part_ids);
    let tokens = match mode {
        IdentityMode::Concat => concatenate(Axis(1), &[seq.tokens.view(), rows.view()]).map_err(|e| Error::Shape(e.to_string()))?,
        IdentityMode::Add => {
            if table.dim() != seq.dim() {
                return Err(Error::Shape(format!("additive table width {} for tokens of width {}", table.dim(), seq.dim())));
            }
            &seq.tokens + &rows
        }
    };
    seq.with_tokens(tokens)
}

/// Integer part mask in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<usize>,
}

impl MaskMap {
    pub fn new(height: usize, width: usize, values: Vec<usize>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!("{} mask values for {height}×{width}", values.len())));
        }
        Ok(Self { height, width, values })
    }

    pub fn filled(height: usize, width: usize, v: usize) -> Self {
        Self { height, width, values: vec![v; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.values[row * self.width + col]
    }

    pub fn max_value(&self) -> Option<usize> {
        self.values.iter().copied().max()
    }
}

/// Row-stochastic average-pool operator from an `h × w` grid to `h' × w'` (row-major cells).
pub fn pool_matrix(src: (usize, usize), dst: (usize, usize)) -> Result<Mat> {
    let (h, w) = src;
    let (th, tw) = dst;
    if th == 0 || tw == 0 || h % th != 0 || w % tw != 0 {
        return Err(Error::Shape(format!("cannot average-pool {h}×{w} to {th}×{tw}")));
    }
    let (bh, bw) = (h / th, w / tw);
    let k = 1.0 / (bh * bw) as f64;
    let mut m = Mat::zeros((th * tw, h * w));
    for r in 0..h {
        for c in 0..w {
            m[[(r / bh) * tw + c / bw, r * w + c]] = k;
        }
    }
    Ok(m)
}

/// Pixelwise lookup `E[mask]`, then average pooling to `target`; output is `h' × w' × d_p`.
pub fn build_mask_embedding_map(mask: &MaskMap, table: &PartEmbeddingTable, target: (usize, usize)) -> Result<Array3<f64>> {
    for &v in &mask.values {
        table.check_index(v)?;
    }
    let dense = table.table.select(Axis(0), &mask.values);
    let pooled = pool_matrix((mask.height, mask.width), target)?.dot(&dense);
    pooled.into_shape_with_order((target.0, target.1, table.dim())).map_err(|e| Error::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn seq() -> TokenSequence {
        let t = Mat::from_shape_fn((5, 8), |(i, j)| (i * 8 + j) as f64 * 0.1);
        TokenSequence::new(t, vec![[0; 3]; 5], vec![0, 0, 1, 1, 1]).unwrap()
    }

    #[test]
    fn additive_zero_table_is_identity() {
        let s = seq();
        let out = attach_part_identity(&s, &PartEmbeddingTable::zeros(8, 8), IdentityMode::Add).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn concat_grows_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = PartEmbeddingTable::random(8, 4, 1.0, &mut rng);
        let out = attach_part_identity(&seq(), &table, IdentityMode::Concat).unwrap();
        assert_eq!(out.dim(), 12);
        assert_eq!(out.tokens.slice(ndarray::s![.., 8..]).row(0), table.table.row(0));
        // Same part, same embedding.
        assert_eq!(out.tokens.slice(ndarray::s![2, 8..]), out.tokens.slice(ndarray::s![4, 8..]));
        assert_eq!(out.tokens.slice(ndarray::s![.., ..8]), seq().tokens);
    }

    #[test]
    fn part_index_beyond_table() {
        let table = PartEmbeddingTable::zeros(1, 8);
        assert!(matches!(attach_part_identity(&seq(), &table, IdentityMode::Add), Err(Error::Range(_))));
        assert!(attach_part_identity(&seq(), &PartEmbeddingTable::zeros(8, 3), IdentityMode::Add).is_err());
    }

    #[test]
    fn constant_mask_gives_first_row() {
        let table = PartEmbeddingTable::new(array![[1.0, 2.0], [3.0, 4.0]]);
        let m = build_mask_embedding_map(&MaskMap::filled(4, 4, 0), &table, (2, 2)).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(m[[r, c, 0]], 1.0);
                assert_eq!(m[[r, c, 1]], 2.0);
            }
        }
    }

    #[test]
    fn half_mask_without_downsampling() {
        let table = PartEmbeddingTable::new(array![[1.0], [-1.0]]);
        let values = (0..16).map(|i| usize::from(i % 4 >= 2)).collect();
        let mask = MaskMap::new(4, 4, values).unwrap();
        let m = build_mask_embedding_map(&mask, &table, (4, 4)).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(m[[r, c, 0]], if c < 2 { 1.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn two_by_two_pool_averages() {
        let table = PartEmbeddingTable::new(array![[1.0, 0.0, 2.0], [3.0, 4.0, -2.0]]);
        let mask = MaskMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        let m = build_mask_embedding_map(&mask, &table, (1, 1)).unwrap();
        let want = (&table.table.row(0) + &table.table.row(1)) / 2.0;
        for k in 0..3 {
            assert!((m[[0, 0, k]] - want[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn mask_value_out_of_table() {
        let table = PartEmbeddingTable::zeros(2, 3);
        let mask = MaskMap::new(1, 2, vec![0, 2]).unwrap();
        assert!(build_mask_embedding_map(&mask, &table, (1, 1)).is_err());
        assert!(pool_matrix((4, 4), (3, 3)).is_err());
    }
}
