//! Last-block token features recorded along a sampling trajectory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{Mat, Stage};

/// Features `H_i^t` keyed by (denoising step, part). Steps count from 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    stage: Stage,
    total_steps: usize,
    entries: BTreeMap<(usize, usize), Mat>,
}

pub const CACHE_FORMAT: &str = "artigen-cache";

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    step: usize,
    part: usize,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    format: String,
    version: u32,
    stage: Stage,
    total_steps: usize,
    entries: Vec<CacheEntry>,
}

impl FeatureCache {
    pub fn new(stage: Stage, total_steps: usize) -> Self {
        Self { stage, total_steps, entries: BTreeMap::new() }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rejects a step outside `1..=total_steps`, or a shape that disagrees with
    /// earlier entries (same token count per part, same width everywhere).
    pub fn insert(&mut self, step: usize, part: usize, features: Mat) -> Result<()> {
        if step == 0 || step > self.total_steps {
            return Err(Error::Range(format!("step {step} outside 1..={}", self.total_steps)));
        }
        if let Some(((_, _), m)) = self.entries.iter().find(|((_, p), _)| *p == part) {
            if m.nrows() != features.nrows() {
                return Err(Error::Shape(format!("part {part} has {} tokens at step {step}, {} elsewhere", features.nrows(), m.nrows())));
            }
        }
        if let Some(m) = self.entries.values().next() {
            if m.ncols() != features.ncols() {
                return Err(Error::Shape(format!("feature width {} vs {}", features.ncols(), m.ncols())));
            }
        }
        self.entries.insert((step, part), features);
        Ok(())
    }

    pub fn get(&self, step: usize, part: usize) -> Option<&Mat> {
        self.entries.get(&(step, part))
    }

    pub fn steps(&self) -> Vec<usize> {
        self.entries.keys().map(|k| k.0).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn parts(&self) -> Vec<usize> {
        self.entries.keys().map(|k| k.1).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn part_entries(&self, part: usize) -> impl Iterator<Item = (usize, &Mat)> {
        self.entries.iter().filter(move |((_, p), _)| *p == part).map(|((s, _), m)| (*s, m))
    }

    /// `(stage, step, part)` for every entry.
    pub fn key_set(&self) -> BTreeSet<(Stage, usize, usize)> {
        self.entries.keys().map(|&(s, p)| (self.stage, s, p)).collect()
    }

    /// Every cached step holds every cached part.
    pub fn check_complete(&self) -> Result<()> {
        let parts = self.parts();
        for s in self.steps() {
            if let Some(p) = parts.iter().find(|&&p| !self.entries.contains_key(&(s, p))) {
                return Err(Error::Invariant(format!("step {s} is missing part {p}")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CacheFile {
            format: CACHE_FORMAT.into(),
            version: 1,
            stage: self.stage,
            total_steps: self.total_steps,
            entries: self
                .entries
                .iter()
                .map(|(&(step, part), m)| CacheEntry { step, part, shape: [m.nrows(), m.ncols()], data: m.iter().copied().collect() })
                .collect(),
        };
        crate::interop::write_atomic(path, serde_json::to_string(&file)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CacheFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if file.format != CACHE_FORMAT {
            return Err(Error::schema("format", format!("expected `{CACHE_FORMAT}`")));
        }
        let mut cache = FeatureCache::new(file.stage, file.total_steps);
        for (i, e) in file.entries.into_iter().enumerate() {
            if e.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::schema(format!("entries[{i}].data"), "non-finite value"));
            }
            let m = Mat::from_shape_vec((e.shape[0], e.shape[1]), e.data)
                .map_err(|err| Error::schema(format!("entries[{i}].shape"), err.to_string()))?;
            cache.insert(e.step, e.part, m)?;
        }
        cache.check_complete()?;
        Ok(cache)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inconsistent_token_counts_rejected() {
        let mut c = FeatureCache::new(Stage::Two, 5);
        c.insert(4, 0, Mat::zeros((3, 2))).unwrap();
        assert!(c.insert(5, 0, Mat::zeros((4, 2))).is_err());
        assert!(c.insert(5, 1, Mat::zeros((4, 3))).is_err());
        assert!(c.insert(6, 1, Mat::zeros((4, 2))).is_err());
        c.insert(5, 1, Mat::zeros((4, 2))).unwrap();
        assert_eq!(c.steps(), vec![4, 5]);
        assert!(c.check_complete().is_err());
        c.insert(4, 1, Mat::zeros((4, 2))).unwrap();
        c.insert(5, 0, Mat::zeros((3, 2))).unwrap();
        c.check_complete().unwrap();
        assert_eq!(c.key_set().len(), 4);
    }

    #[test]
    fn file_round_trip() {
        let mut c = FeatureCache::new(Stage::One, 3);
        c.insert(3, 0, Mat::from_shape_fn((2, 2), |(i, j)| 0.1 * i as f64 - j as f64 / 3.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        c.save(&p).unwrap();
        assert_eq!(FeatureCache::load(&p).unwrap(), c);
    }
}
