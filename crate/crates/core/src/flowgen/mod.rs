//! Rectified-flow objective, guided Euler sampling with feature caching, the
//! two-stage generation pipeline, and a procedural toy dataset with its trainer.

mod pipeline;
mod sampler;
pub mod toy;
mod train;

pub use pipeline::{run_two_stage, PipelineConfig, TwoStageOutput};
pub use sampler::{euler_sample, SamplerConfig};
pub use train::{eval_flow_loss, StepStats, TrainConfig, TrainExample, Trainer};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::netcore::{Conditioning, Denoiser, ForwardOptions, Mat, Stage};
use crate::sparsegrid::TokenSequence;

/// Point on the straight path and its velocity: `x_t = (1−t)·noise + t·x`, `v = x − noise`.
pub fn fm_pair(x_data: &Mat, noise: &Mat, t: f64) -> Result<(Mat, Mat)> {
    if x_data.dim() != noise.dim() {
        return Err(Error::Shape(format!("data {:?} vs noise {:?}", x_data.dim(), noise.dim())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Range(format!("t = {t} outside [0, 1]")));
    }
    let x_t = noise * (1.0 - t) + x_data * t;
    Ok((x_t, x_data - noise))
}

/// `v_u + s·(v_c − v_u)`; `s = 1` returns `v_c` untouched.
pub fn cfg_velocity(v_cond: &Mat, v_uncond: &Mat, s: f64) -> Result<Mat> {
    if v_cond.dim() != v_uncond.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", v_cond.dim(), v_uncond.dim())));
    }
    if s == 1.0 {
        return Ok(v_cond.clone());
    }
    Ok(v_uncond + &((v_cond - v_uncond) * s))
}

pub fn standard_normal(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Mat {
    Mat::from_shape_simple_fn(shape, || StandardNormal.sample(rng))
}

/// A velocity field over token sequences.
pub trait VelocityModel {
    fn stage(&self) -> Stage;

    /// Velocity for every token and, when available, last-block features.
    fn predict(&self, x: &TokenSequence, t: f64, cond: Option<&Conditioning>) -> Result<(Mat, Option<Mat>)>;
}

impl VelocityModel for Denoiser {
    fn stage(&self) -> Stage {
        self.config().stage
    }

    fn predict(&self, x: &TokenSequence, t: f64, cond: Option<&Conditioning>) -> Result<(Mat, Option<Mat>)> {
        let out = self.forward(x, t, cond, ForwardOptions::default())?;
        Ok((out.velocity.tokens, Some(out.last_block)))
    }
}

/// Wraps a closure as a feature-less velocity model.
pub struct FnModel<F> {
    pub stage: Stage,
    pub f: F,
}

impl<F> VelocityModel for FnModel<F>
where
    F: Fn(&TokenSequence, f64, Option<&Conditioning>) -> Result<Mat>,
{
    fn stage(&self) -> Stage {
        self.stage
    }

    fn predict(&self, x: &TokenSequence, t: f64, cond: Option<&Conditioning>) -> Result<(Mat, Option<Mat>)> {
        Ok(((self.f)(x, t, cond)?, None))
    }
}

/// One flow-matching example: clean tokens plus optional conditioning.
#[derive(Debug, Clone)]
pub struct FlowExample {
    pub tokens: TokenSequence,
    pub cond: Option<Conditioning>,
}

/// Per-example `(t, noise)` draws, `t` uniform on `[0, 1)`.
pub fn draw_flow(batch: &[FlowExample], rng: &mut ChaCha8Rng) -> Vec<(f64, Mat)> {
    batch
        .iter()
        .map(|ex| {
            let t = rng.random::<f64>();
            (t, standard_normal(rng, ex.tokens.tokens.dim()))
        })
        .collect()
}

/// Mean squared velocity error, averaged over tokens, channels and batch.
pub fn flow_loss<M: VelocityModel + ?Sized>(model: &M, batch: &[FlowExample], draws: &[(f64, Mat)]) -> Result<f64> {
    if batch.is_empty() || batch.len() != draws.len() {
        return Err(Error::Shape(format!("{} examples with {} draws", batch.len(), draws.len())));
    }
    let mut total = 0.0;
    for (ex, (t, noise)) in batch.iter().zip(draws) {
        let (x_t, v) = fm_pair(&ex.tokens.tokens, noise, *t)?;
        let (pred, _) = model.predict(&ex.tokens.with_tokens(x_t)?, *t, ex.cond.as_ref())?;
        if pred.dim() != v.dim() {
            return Err(Error::Shape(format!("prediction {:?} for target {:?}", pred.dim(), v.dim())));
        }
        total += (&pred - &v).mapv(|d| d * d).mean().unwrap_or(0.0);
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("flow loss".into()));
    }
    Ok(loss)
}
