use serde::{Deserialize, Serialize};

use super::toy::{decode_stage1, TOKEN_CHANNELS};
use super::{euler_sample, SamplerConfig, VelocityModel};
use crate::artihead::FeatureCache;
use crate::error::{Error, Result};
use crate::netcore::{Conditioning, Mat, Stage};
use crate::sparsegrid::{PartVoxelSet, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub sampler: SamplerConfig,
    pub coarse_resolution: u32,
    pub fine_resolution: u32,
    /// Occupancy level for coarse latents.
    pub threshold: f64,
    /// Which stage's trajectory feeds the articulation head.
    pub feature_source: Stage,
    /// Mask value reserved for background.
    pub background: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            coarse_resolution: 8,
            fine_resolution: 16,
            threshold: 0.0,
            feature_source: Stage::Two,
            background: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageOutput {
    pub voxels: PartVoxelSet,
    pub tokens: TokenSequence,
    /// Cache from the configured feature source.
    pub cache: FeatureCache,
    pub coarse_cache: Option<FeatureCache>,
    pub fine_cache: FeatureCache,
}

/// Part indices present in the mask, which must be `0..K` without gaps.
pub fn mask_parts(cond: &Conditioning, background: usize) -> Result<usize> {
    let ids: std::collections::BTreeSet<usize> = cond.mask.values.iter().copied().filter(|&v| v != background).collect();
    let k = ids.len();
    if k == 0 || ids.iter().copied().ne(0..k) {
        return Err(Error::Semantic(format!("mask parts {ids:?} are not 0..K")));
    }
    Ok(k)
}

fn coarse_template(k: usize, resolution: u32) -> Result<TokenSequence> {
    let p = resolution / 2;
    let n = (p * p * p) as usize;
    let mut coords = Vec::with_capacity(k * n);
    let mut ids = Vec::with_capacity(k * n);
    for i in 0..k {
        for z in 0..p {
            for y in 0..p {
                for x in 0..p {
                    coords.push([x, y, z]);
                    ids.push(i);
                }
            }
        }
    }
    TokenSequence::new(Mat::zeros((k * n, TOKEN_CHANNELS)), coords, ids)
}

/// Coarse occupancy per masked part, then fine token features on the upsampled cells.
///
/// `coarse` may be `None` when `known_voxels` supplies the occupancy directly.
pub fn run_two_stage<A, B>(
    cond: &Conditioning,
    coarse: Option<&A>,
    fine: &B,
    known_voxels: Option<&PartVoxelSet>,
    cfg: &PipelineConfig,
) -> Result<TwoStageOutput>
where
    A: VelocityModel + ?Sized,
    B: VelocityModel + ?Sized,
{
    let k = mask_parts(cond, cfg.background)?;
    if !cfg.coarse_resolution.is_multiple_of(2) || !cfg.fine_resolution.is_multiple_of(cfg.coarse_resolution) {
        return Err(Error::Shape(format!("resolutions {} -> {} are not compatible", cfg.coarse_resolution, cfg.fine_resolution)));
    }
    let (coarse_voxels, coarse_cache) = match (known_voxels, coarse) {
        (Some(v), _) => (v.clone(), None),
        (None, Some(model)) => {
            let (latents, cache) = euler_sample(model, &coarse_template(k, cfg.coarse_resolution)?, Some(cond), &cfg.sampler)?;
            (decode_stage1(&latents, cfg.coarse_resolution, cfg.threshold)?, Some(cache))
        }
        (None, None) => return Err(Error::Semantic("no coarse model and no known occupancy".into())),
    };
    if coarse_voxels.num_parts() != k {
        return Err(Error::Semantic(format!("{} part voxel sets for {k} masked parts", coarse_voxels.num_parts())));
    }
    let voxels = if coarse_voxels.resolution() == cfg.fine_resolution {
        coarse_voxels
    } else {
        coarse_voxels.upsample(cfg.fine_resolution / coarse_voxels.resolution())
    };
    let l = voxels.total_voxels();
    let mut coords = Vec::with_capacity(l);
    let mut ids = Vec::with_capacity(l);
    for (i, p) in voxels.parts().iter().enumerate() {
        if p.is_empty() {
            return Err(Error::DegenerateStructure { part: i });
        }
        for c in p.coords() {
            coords.push(c);
            ids.push(i);
        }
    }
    let template = TokenSequence::new(Mat::zeros((l, TOKEN_CHANNELS)), coords, ids)?;
    let fine_cfg = SamplerConfig { seed: cfg.sampler.seed.wrapping_add(1), ..cfg.sampler.clone() };
    let (tokens, fine_cache) = euler_sample(fine, &template, Some(cond), &fine_cfg)?;
    let cache = match (cfg.feature_source, &coarse_cache) {
        (Stage::Two, _) => fine_cache.clone(),
        (Stage::One, Some(c)) => c.clone(),
        (Stage::One, None) => return Err(Error::Semantic("coarse features requested but the coarse stage was skipped".into())),
    };
    Ok(TwoStageOutput { voxels, tokens, cache, coarse_cache, fine_cache })
}
