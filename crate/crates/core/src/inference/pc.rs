//! Gradient-based inference: `λ ← λ + α ∇_λ 𝓛`.

use serde::{Deserialize, Serialize};

use super::objective::{elbo_objective, map_gradient, ElboMode};
use super::{InferenceTrace, PosteriorEstimate};
use crate::error::{Error, Result};
use crate::models::GenerativeModel;
use crate::tensor::norm_inf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcConfig {
    pub step: f64,
    pub max_steps: usize,
    /// Stop once `‖∇‖∞` falls below this.
    pub tol: f64,
    /// Halve the step until the objective does not decrease.
    pub backtracking: bool,
    pub max_halvings: usize,
}

impl Default for PcConfig {
    fn default() -> Self {
        Self { step: 0.05, max_steps: 10_000, tol: 1e-8, backtracking: true, max_halvings: 20 }
    }
}

impl PcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::InvalidArgument(format!("step must be positive, got {}", self.step)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be non-negative, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Maximizes `f` from `x0`. `f` returns the objective and its gradient.
///
/// With backtracking, a step is accepted only if it does not lower the
/// objective; the reduced step carries over to the next iteration and
/// doubles back towards the configured step after each acceptance. If no
/// halving helps, the iterate is at the numerical optimum and the loop ends.
/// The trace gets one row per accepted step.
pub fn gradient_ascent(
    x0: Vec<f64>,
    config: &PcConfig,
    mut f: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
) -> Result<(Vec<f64>, InferenceTrace)> {
    config.validate()?;
    let mut x = x0;
    let mut trace = InferenceTrace::default();
    let (mut fx, mut g) = eval(&mut f, &x)?;
    let mut step = config.step;
    for _ in 0..config.max_steps {
        if norm_inf(&g) < config.tol {
            break;
        }
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(x, g)| x + step * g).collect();
            match (config.backtracking, f(&cand)) {
                (false, r) => {
                    let (fc, gc) = r?;
                    if !fc.is_finite() || cand.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Diverged(format!("objective became {fc}")));
                    }
                    accepted = Some((cand, fc, gc));
                    break;
                }
                (true, Ok((fc, gc))) if fc.is_finite() && fc >= fx => {
                    accepted = Some((cand, fc, gc));
                    break;
                }
                (true, Err(e @ (Error::DimensionMismatch(_) | Error::ModelNotLinear))) => return Err(e),
                (true, _) => step *= 0.5,
            }
        }
        let Some((cand, fc, gc)) = accepted else { break };
        if cand == x {
            break;
        }
        x = cand;
        fx = fc;
        g = gc;
        step = (2.0 * step).min(config.step);
        trace.push(fx, norm_inf(&g), x.clone());
    }
    Ok((x, trace))
}

fn eval(f: &mut impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (fx, g) = f(x)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged(format!("objective {fx} at the initial point")));
    }
    Ok((fx, g))
}

fn split(dims: &[usize], flat: &[f64]) -> Vec<Vec<f64>> {
    let mut off = 0;
    dims.iter()
        .map(|d| {
            off += d;
            flat[off - d..off].to_vec()
        })
        .collect()
}

/// MAP inference over point latents by ascent on the MAP objective.
pub fn pc_inference(
    model: &GenerativeModel,
    x: &[f64],
    init: &[Vec<f64>],
    config: &PcConfig,
) -> Result<(Vec<Vec<f64>>, InferenceTrace)> {
    model.check_latents(init)?;
    let dims = model.latent_dims();
    let x0: Vec<f64> = init.iter().flatten().copied().collect();
    let (z, trace) = gradient_ascent(x0, config, |flat| {
        let zs = split(&dims, flat);
        let obj = model.map_objective(x, &zs)?;
        let g = map_gradient(model, x, &zs)?;
        Ok((obj, g.into_iter().flatten().collect()))
    })?;
    Ok((split(&dims, &z), trace))
}

/// Variational inference by ascent on the ELBO over `λ = (μ_q, log σ_q)`.
/// With a sampled `mode` the noise is held fixed, so the objective is
/// deterministic. With `learn_std` false only the means move.
pub fn pc_variational(
    model: &GenerativeModel,
    x: &[f64],
    init: &PosteriorEstimate,
    mode: &ElboMode,
    beta: f64,
    learn_std: bool,
    config: &PcConfig,
) -> Result<(PosteriorEstimate, InferenceTrace)> {
    let dims = init.dims();
    let (flat, trace) = gradient_ascent(init.to_flat(), config, |flat| {
        let q = PosteriorEstimate::from_flat(&dims, flat)?;
        let (e, g) = elbo_objective(model, &q, x, beta, mode, None)?;
        let mut g = g;
        if !learn_std {
            g.levels.iter_mut().for_each(|l| l.log_std.iter_mut().for_each(|v| *v = 0.0));
        }
        Ok((e.elbo, g.to_flat()))
    })?;
    Ok((PosteriorEstimate::from_flat(&dims, &flat)?, trace))
}
