//! Central-difference verification of tape gradients.

use super::denoiser::Denoiser;
use super::params::{Graph, ParamStore};
use super::tape::Var;
use crate::error::{Error, Result};

/// Anything that owns a parameter store.
pub trait Module {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
}

impl Module for ParamStore {
    fn params(&self) -> &ParamStore {
        self
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self
    }
}

impl Module for Denoiser {
    fn params(&self) -> &ParamStore {
        Denoiser::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        Denoiser::params_mut(self)
    }
}

/// Difference formula for the numeric derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error `O(h²)`.
    Central,
    /// Four evaluations, error `O(h⁴)`.
    FivePoint,
}

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    pub eps: f64,
    pub stencil: Stencil,
    /// Entries checked per tensor, evenly spaced; `None` checks all.
    pub max_per_tensor: Option<usize>,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, stencil: Stencil::Central, max_per_tensor: None, floor: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// `max |a − n| / max(|a|, |n|, floor)` over checked entries.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

fn eval_loss<M, F>(module: &M, loss: &F) -> Result<f64>
where
    M: Module,
    F: Fn(&M, &mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(module.params());
    let l = loss(module, &mut g)?;
    Ok(g.scalar(l))
}

/// Compares analytic parameter gradients of the scalar `loss` with finite differences.
pub fn finite_diff_gradcheck<M, F>(module: &mut M, loss: F, opts: GradcheckOptions) -> Result<GradcheckReport>
where
    M: Module,
    F: Fn(&M, &mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(module.params());
        let l = loss(module, &mut g)?;
        g.param_grads(l)
    };
    if let Some(i) = analytic.iter().position(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of `{}`", module.params().name(module.params().ids().nth(i).unwrap()))));
    }
    let ids: Vec<_> = module.params().ids().collect();
    let mut report = GradcheckReport { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0, worst: None };
    for (id, grad) in ids.into_iter().zip(&analytic) {
        let n = grad.len();
        let picks: Vec<usize> = match opts.max_per_tensor {
            Some(k) if k < n => (0..k).map(|j| j * n / k).collect(),
            _ => (0..n).collect(),
        };
        for flat in picks {
            let cols = grad.ncols();
            let idx = (flat / cols, flat % cols);
            let orig = module.params().get(id)[idx];
            let mut at = |k: f64| -> Result<f64> {
                module.params_mut().get_mut(id)[idx] = orig + k * opts.eps;
                let v = eval_loss(module, &loss);
                module.params_mut().get_mut(id)[idx] = orig;
                v
            };
            let numeric = match opts.stencil {
                Stencil::Central => (at(1.0)? - at(-1.0)?) / (2.0 * opts.eps),
                Stencil::FivePoint => (8.0 * (at(1.0)? - at(-1.0)?) - (at(2.0)? - at(-2.0)?)) / (12.0 * opts.eps),
            };
            if !numeric.is_finite() {
                return Err(Error::NonFinite(format!("numeric gradient of `{}`", module.params().name(id))));
            }
            let a = grad[idx];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((module.params().name(id).to_string(), flat));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::netcore::attention::{block_forward, AttentionParams, AttnScope};
    use crate::netcore::denoiser::random_tokens;
    use crate::netcore::tape::Mat;

    #[test]
    fn linear_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let w = store.add_normal("w", (4, 3), 1.0, &mut rng);
        let b = store.add_normal("b", (1, 3), 1.0, &mut rng);
        let x = random_tokens(&mut rng, 5, 4);
        let y = random_tokens(&mut rng, 5, 3);
        let r = finite_diff_gradcheck(
            &mut store,
            |_, g| {
                let xv = g.constant(x.clone());
                let (wv, bv) = (g.param(w), g.param(b));
                let o = crate::netcore::attention::linear(g, xv, wv, bv);
                Ok(g.mse(o, &y))
            },
            GradcheckOptions::default(),
        )
        .unwrap();
        assert_eq!(r.checked, 15);
        assert!(r.max_rel_err < 1e-7, "{r:?}");
    }

    #[test]
    fn attention_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let ids = AttentionParams::init(8, &mut rng).map(|n, m| store.add(n, m.clone()));
        let x = random_tokens(&mut rng, 6, 8);
        let groups = [(0, 0, 2), (1, 2, 4)];
        let target = random_tokens(&mut rng, 6, 8);
        for scope in [AttnScope::Global, AttnScope::WithinPart(&groups)] {
            let r = finite_diff_gradcheck(
                &mut store,
                |_, g| {
                    let w = ids.map(|_, &id| g.param(id));
                    let xv = g.constant(x.clone());
                    let o = block_forward(g, xv, &w, 2, scope, None);
                    Ok(g.mse(o, &target))
                },
                GradcheckOptions::default(),
            )
            .unwrap();
            assert!(r.max_rel_err < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn non_finite_gradient_reported() {
        let mut store = ParamStore::new();
        let w = store.add("w", Mat::from_elem((1, 1), f64::NAN));
        let r = finite_diff_gradcheck(
            &mut store,
            |_, g| {
                let v = g.param(w);
                Ok(g.sum_squares(v))
            },
            GradcheckOptions::default(),
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
