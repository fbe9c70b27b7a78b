//! Sparse occupancy grids, part-decomposed voxel sets, and flattening into token sequences.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::f64::consts::TAU;

use log::warn;
use nalgebra::Point3;
use ndarray::Array2;

use crate::error::{Error, Result};

/// Integer cell coordinate ordered in raster order: x fastest, then y, then z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VoxelCoord(pub [u32; 3]);

impl Ord for VoxelCoord {
    fn cmp(&self, other: &Self) -> Ordering {
        let [x0, y0, z0] = self.0;
        let [x1, y1, z1] = other.0;
        (z0, y0, x0).cmp(&(z1, y1, x1))
    }
}

impl PartialOrd for VoxelCoord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Occupied cells of an `R³` grid covering the unit cube.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseOccupancy {
    resolution: u32,
    occupied: BTreeSet<VoxelCoord>,
}

impl SparseOccupancy {
    pub fn new(resolution: u32) -> Self {
        assert!(resolution >= 1, "resolution must be at least 1");
        Self { resolution, occupied: BTreeSet::new() }
    }

    pub fn from_coords<I: IntoIterator<Item = [u32; 3]>>(resolution: u32, coords: I) -> Result<Self> {
        let mut occ = Self::new(resolution);
        for c in coords {
            occ.insert(c)?;
        }
        Ok(occ)
    }

    pub fn insert(&mut self, c: [u32; 3]) -> Result<bool> {
        if c.iter().any(|&v| v >= self.resolution) {
            return Err(Error::Range(format!("cell {c:?} outside grid of resolution {}", self.resolution)));
        }
        Ok(self.occupied.insert(VoxelCoord(c)))
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn contains(&self, c: [u32; 3]) -> bool {
        self.occupied.contains(&VoxelCoord(c))
    }

    /// Cells in raster order.
    pub fn coords(&self) -> impl Iterator<Item = [u32; 3]> + '_ {
        self.occupied.iter().map(|v| v.0)
    }

    pub fn remove(&mut self, c: [u32; 3]) -> bool {
        self.occupied.remove(&VoxelCoord(c))
    }

    /// Cell centers in the unit cube.
    pub fn centers(&self) -> Vec<Point3<f64>> {
        let r = self.resolution as f64;
        self.coords().map(|[x, y, z]| Point3::new((x as f64 + 0.5) / r, (y as f64 + 0.5) / r, (z as f64 + 0.5) / r)).collect()
    }

    /// Each cell becomes a `factor³` block at resolution `R · factor`.
    pub fn upsample(&self, factor: u32) -> SparseOccupancy {
        let mut out = SparseOccupancy::new(self.resolution * factor);
        for [x, y, z] in self.coords() {
            for dz in 0..factor {
                for dy in 0..factor {
                    for dx in 0..factor {
                        out.occupied.insert(VoxelCoord([x * factor + dx, y * factor + dy, z * factor + dz]));
                    }
                }
            }
        }
        out
    }

    pub fn intersection_count(&self, other: &SparseOccupancy) -> usize {
        self.occupied.intersection(&other.occupied).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voxelized {
    pub occupancy: SparseOccupancy,
    /// Points outside the unit cube that were dropped.
    pub rejected: usize,
}

/// Marks cell `⌊p·R⌋` (clamped to `R − 1`) for each point in the unit cube.
///
/// Points outside `[0, 1]³` are counted and dropped, or rejected outright when `strict`.
pub fn voxelize_points(points: &[Point3<f64>], resolution: u32, strict: bool) -> Result<Voxelized> {
    if resolution == 0 {
        return Err(Error::Range("resolution must be at least 1".into()));
    }
    let r = resolution as f64;
    let mut occupancy = SparseOccupancy::new(resolution);
    let mut rejected = 0;
    for p in points {
        if !p.iter().all(|v| (0.0..=1.0).contains(v)) {
            if strict {
                return Err(Error::Range(format!("point {p:?} outside the unit cube")));
            }
            rejected += 1;
            continue;
        }
        let cell = |v: f64| ((v * r).floor() as u32).min(resolution - 1);
        occupancy.occupied.insert(VoxelCoord([cell(p.x), cell(p.y), cell(p.z)]));
    }
    if rejected > 0 {
        warn!("voxelization dropped {rejected} points outside the unit cube");
    }
    Ok(Voxelized { occupancy, rejected })
}

/// Per-part occupancy sharing one resolution; no cell belongs to two parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartVoxelSet {
    resolution: u32,
    parts: Vec<SparseOccupancy>,
}

impl PartVoxelSet {
    /// Builds a set from possibly overlapping grids. A contested cell stays with
    /// the first part that lists it; the number of reassigned cells is returned.
    pub fn from_parts(parts: Vec<SparseOccupancy>) -> Result<(Self, usize)> {
        let resolution = parts.first().map(|p| p.resolution).ok_or_else(|| Error::Empty("no parts".into()))?;
        if let Some(p) = parts.iter().find(|p| p.resolution != resolution) {
            return Err(Error::Shape(format!("mixed resolutions {resolution} and {}", p.resolution)));
        }
        let mut claimed: BTreeSet<VoxelCoord> = BTreeSet::new();
        let mut ties = 0;
        let mut out = Vec::with_capacity(parts.len());
        for (i, mut part) in parts.into_iter().enumerate() {
            let contested: Vec<VoxelCoord> = part.occupied.intersection(&claimed).copied().collect();
            if !contested.is_empty() {
                warn!("{} cells of part {i} already belong to an earlier part", contested.len());
                ties += contested.len();
                for c in &contested {
                    part.occupied.remove(c);
                }
            }
            claimed.extend(part.occupied.iter().copied());
            out.push(part);
        }
        Ok((Self { resolution, parts: out }, ties))
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn parts(&self) -> &[SparseOccupancy] {
        &self.parts
    }

    pub fn part(&self, i: usize) -> Option<&SparseOccupancy> {
        self.parts.get(i)
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    pub fn total_voxels(&self) -> usize {
        self.parts.iter().map(|p| p.len()).sum()
    }

    /// Part that owns a cell, if any.
    pub fn owner(&self, c: [u32; 3]) -> Option<usize> {
        self.parts.iter().position(|p| p.contains(c))
    }

    pub fn upsample(&self, factor: u32) -> PartVoxelSet {
        PartVoxelSet { resolution: self.resolution * factor, parts: self.parts.iter().map(|p| p.upsample(factor)).collect() }
    }
}

/// Flattened per-part tokens. Rows are grouped by part in ascending part order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Array2<f64>,
    pub coords: Vec<[u32; 3]>,
    pub part_ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Array2<f64>, coords: Vec<[u32; 3]>, part_ids: Vec<usize>) -> Result<Self> {
        let seq = Self { tokens, coords, part_ids };
        seq.check()?;
        Ok(seq)
    }

    /// Row counts agree and part ids are grouped in ascending order.
    pub fn check(&self) -> Result<()> {
        let l = self.tokens.nrows();
        if self.coords.len() != l || self.part_ids.len() != l {
            return Err(Error::Shape(format!("{l} token rows but {} coords and {} part ids", self.coords.len(), self.part_ids.len())));
        }
        if self.part_ids.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Structural("part ids are not grouped in ascending order".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }

    /// Contiguous `(part, start, len)` row ranges.
    pub fn groups(&self) -> Vec<(usize, usize, usize)> {
        let mut out: Vec<(usize, usize, usize)> = Vec::new();
        for (row, &p) in self.part_ids.iter().enumerate() {
            match out.last_mut() {
                Some((q, _, n)) if *q == p => *n += 1,
                _ => out.push((p, row, 1)),
            }
        }
        out
    }

    pub fn with_tokens(&self, tokens: Array2<f64>) -> Result<TokenSequence> {
        TokenSequence::new(tokens, self.coords.clone(), self.part_ids.clone())
    }

    pub fn num_parts(&self) -> usize {
        self.part_ids.last().map_or(0, |p| p + 1)
    }
}

/// Axis-factored sinusoidal encoding of a grid cell.
///
/// Each axis gets `dim / 3` entries: `dim / 6` sines followed by the matching
/// cosines, at frequencies spaced geometrically from 1 to `R / 2` cycles across the grid.
pub fn positional_encoding(coord: [u32; 3], dim: usize, resolution: u32) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(6) {
        return Err(Error::EncodingDim { dim });
    }
    let nf = dim / 6;
    let r = resolution.max(1) as f64;
    let top = (r / 2.0).max(1.0);
    let freqs: Vec<f64> = (0..nf).map(|k| if nf == 1 { 1.0 } else { top.powf(k as f64 / (nf - 1) as f64) }).collect();
    let mut out = Vec::with_capacity(dim);
    for &c in &coord {
        let base = TAU * c as f64 / r;
        out.extend(freqs.iter().map(|f| (base * f).sin()));
        out.extend(freqs.iter().map(|f| (base * f).cos()));
    }
    Ok(out)
}

/// Flattens part voxels into tokens `feat(part, cell) + PE(cell)`, part-major then raster order.
pub fn flatten_tokenize<F>(pv: &PartVoxelSet, mut feat: F, dim: usize) -> Result<TokenSequence>
where
    F: FnMut(usize, [u32; 3]) -> Vec<f64>,
{
    if dim == 0 || !dim.is_multiple_of(6) {
        return Err(Error::EncodingDim { dim });
    }
    if let Some(i) = pv.parts.iter().position(|p| p.is_empty()) {
        return Err(Error::DegenerateStructure { part: i });
    }
    let l = pv.total_voxels();
    let mut tokens = Array2::zeros((l, dim));
    let mut coords = Vec::with_capacity(l);
    let mut part_ids = Vec::with_capacity(l);
    let mut row = 0;
    for (i, part) in pv.parts.iter().enumerate() {
        for c in part.coords() {
            let f = feat(i, c);
            if f.len() != dim {
                return Err(Error::Shape(format!("feature of length {} for dim {dim}", f.len())));
            }
            let pe = positional_encoding(c, dim, pv.resolution)?;
            for (j, (a, b)) in f.iter().zip(&pe).enumerate() {
                tokens[[row, j]] = a + b;
            }
            coords.push(c);
            part_ids.push(i);
            row += 1;
        }
    }
    TokenSequence::new(tokens, coords, part_ids)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    #[test]
    fn floor_rule() {
        let v = voxelize_points(&[Point3::new(0.5, 0.5, 0.5)], 2, true).unwrap();
        assert_eq!(v.occupancy.coords().collect::<Vec<_>>(), vec![[1, 1, 1]]);
    }

    #[test]
    fn cube_corners_fill_all_cells() {
        let corners: Vec<_> = (0..8).map(|i| Point3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64)).collect();
        let v = voxelize_points(&corners, 2, true).unwrap();
        // By hand: every corner lands in a distinct cell of the 2x2x2 grid.
        let expect: BTreeSet<_> = (0..8).map(|i| VoxelCoord([i & 1, (i >> 1) & 1, (i >> 2) & 1])).collect();
        assert_eq!(v.occupancy.occupied, expect);
    }

    #[test]
    fn duplicates_collapse() {
        let p = Point3::new(0.1, 0.2, 0.3);
        assert_eq!(voxelize_points(&[p, p, p], 4, true).unwrap().occupancy.len(), 1);
    }

    #[test]
    fn outside_points_reported_or_rejected() {
        let pts = [Point3::new(1.5, 0.0, 0.0), Point3::new(0.2, 0.2, 0.2)];
        let v = voxelize_points(&pts, 4, false).unwrap();
        assert_eq!(v.rejected, 1);
        assert_eq!(v.occupancy.len(), 1);
        assert!(voxelize_points(&pts, 4, true).is_err());
    }

    #[test]
    fn ties_go_to_first_part() {
        let a = SparseOccupancy::from_coords(4, [[0, 0, 0], [1, 0, 0]]).unwrap();
        let b = SparseOccupancy::from_coords(4, [[1, 0, 0], [2, 0, 0]]).unwrap();
        let (pv, ties) = PartVoxelSet::from_parts(vec![a, b]).unwrap();
        assert_eq!(ties, 1);
        assert_eq!(pv.owner([1, 0, 0]), Some(0));
        assert_eq!(pv.parts()[1].len(), 1);
    }

    #[test]
    fn single_voxel_single_part() {
        let pv = PartVoxelSet::from_parts(vec![SparseOccupancy::from_coords(4, [[1, 2, 3]]).unwrap()]).unwrap().0;
        let seq = flatten_tokenize(&pv, |_, _| vec![0.0; 6], 6).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.part_ids, vec![0]);
    }

    #[test]
    fn two_parts_concatenate() {
        let a = SparseOccupancy::from_coords(8, (0..3).map(|x| [x, 0, 0])).unwrap();
        let b = SparseOccupancy::from_coords(8, (0..5).map(|x| [x, 1, 0])).unwrap();
        let pv = PartVoxelSet::from_parts(vec![a, b]).unwrap().0;
        let seq = flatten_tokenize(&pv, |_, _| vec![0.0; 12], 12).unwrap();
        assert_eq!(seq.len(), 8);
        assert_eq!(seq.part_ids, vec![0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(seq.groups(), vec![(0, 0, 3), (1, 3, 5)]);
    }

    #[test]
    fn encoding_dim_must_divide_by_six() {
        assert!(matches!(positional_encoding([0, 0, 0], 64, 16), Err(Error::EncodingDim { dim: 64 })));
        let pv = PartVoxelSet::from_parts(vec![SparseOccupancy::from_coords(4, [[0, 0, 0]]).unwrap()]).unwrap().0;
        assert!(flatten_tokenize(&pv, |_, _| vec![0.0; 8], 8).is_err());
    }

    #[test]
    fn encoding_at_origin() {
        let pe = positional_encoding([0, 0, 0], 96, 16).unwrap();
        for axis in 0..3 {
            let block = &pe[axis * 32..(axis + 1) * 32];
            assert!(block[..16].iter().all(|&s| s == 0.0));
            assert!(block[16..].iter().all(|&c| c == 1.0));
        }
    }

    #[test]
    fn encodings_distinct_on_16_cube() {
        let mut seen = HashSet::new();
        for x in 0..16 {
            for y in 0..16 {
                for z in 0..16 {
                    let pe = positional_encoding([x, y, z], 96, 16).unwrap();
                    let key: Vec<u64> = pe.iter().map(|v| (v * 1e9).round() as i64 as u64).collect();
                    assert!(seen.insert(key), "collision at {:?}", [x, y, z]);
                }
            }
        }
        assert_eq!(seen.len(), 4096);
    }

    fn grid_coords(r: u32) -> impl Strategy<Value = Vec<[u32; 3]>> {
        proptest::collection::vec([0..r, 0..r, 0..r], 1..40)
    }

    proptest! {
        #[test]
        fn insertion_order_does_not_matter(coords in grid_coords(8), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = coords.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let build = |cs: &[[u32; 3]]| {
                let pv = PartVoxelSet::from_parts(vec![SparseOccupancy::from_coords(8, cs.iter().copied()).unwrap()]).unwrap().0;
                flatten_tokenize(&pv, |_, c| vec![c[0] as f64; 6], 6).unwrap()
            };
            let a = build(&coords);
            let b = build(&shuffled);
            prop_assert_eq!(&a, &b);
            // Oracle: canonical raster sort of the distinct cells.
            let mut canon: Vec<[u32; 3]> = coords.clone();
            canon.sort_by_key(|c| (c[2], c[1], c[0]));
            canon.dedup();
            prop_assert_eq!(a.coords, canon);
        }

        #[test]
        fn voxelize_centers_roundtrip(coords in grid_coords(16)) {
            let occ = SparseOccupancy::from_coords(16, coords).unwrap();
            let back = voxelize_points(&occ.centers(), 16, true).unwrap().occupancy;
            prop_assert_eq!(back, occ);
        }

        #[test]
        fn tokens_biject_with_part_cells(a in grid_coords(6), b in grid_coords(6)) {
            let pa = SparseOccupancy::from_coords(6, a).unwrap();
            let pb = SparseOccupancy::from_coords(6, b).unwrap();
            let (pv, _) = PartVoxelSet::from_parts(vec![pa, pb]).unwrap();
            prop_assume!(pv.parts().iter().all(|p| !p.is_empty()));
            let seq = flatten_tokenize(&pv, |_, _| vec![0.0; 6], 6).unwrap();
            let pairs: HashSet<(usize, [u32; 3])> = seq.part_ids.iter().copied().zip(seq.coords.iter().copied()).collect();
            prop_assert_eq!(pairs.len(), seq.len());
            prop_assert_eq!(seq.len(), pv.total_voxels());
            for (p, c) in pairs {
                prop_assert!(pv.parts()[p].contains(c));
            }
        }
    }
}
