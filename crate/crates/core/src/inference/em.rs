//! Variational EM: per-datum posterior inference, then ascent on θ.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::amortized::{direct_infer, iterative_infer, InferenceNet, IterativeConfig};
use super::objective::{elbo_objective, local_weight_gradient, weighted_errors, ElboMode, GradEstimator};
use super::pc::{pc_inference, pc_variational, PcConfig};
use super::PosteriorEstimate;
use crate::error::{Error, Result};
use crate::models::{DeepLatentModel, GenerativeModel, Link, ModelGrad};
use crate::tensor::{norm2, Rng};

/// E-step engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Engine {
    /// Point estimate by ascent on the MAP objective, from `z = 0`.
    Map(PcConfig),
    /// Ascent on the ELBO over λ from the standard posterior, with the
    /// noise held fixed per datum.
    Variational { config: PcConfig, estimator: GradEstimator, learn_std: bool },
    /// A direct network, or `n_iters` updates of an iterative/plain one.
    Amortized { net: InferenceNet, n_iters: usize, estimator: GradEstimator },
}

impl Engine {
    pub fn infer(&self, model: &GenerativeModel, x: &[f64], beta: f64, rng: &mut Rng) -> Result<PosteriorEstimate> {
        let dims = model.latent_dims();
        match self {
            Engine::Map(cfg) => {
                let init: Vec<Vec<f64>> = dims.iter().map(|d| vec![0.0; *d]).collect();
                Ok(PosteriorEstimate::point(&pc_inference(model, x, &init, cfg)?.0))
            }
            Engine::Variational { config, estimator, learn_std } => {
                let mode = estimator.mode(&dims, rng);
                let init = PosteriorEstimate::standard(&dims);
                Ok(pc_variational(model, x, &init, &mode, beta, *learn_std, config)?.0)
            }
            Engine::Amortized { net: net @ InferenceNet::Direct { .. }, .. } => direct_infer(net, x),
            Engine::Amortized { net, n_iters, estimator } => {
                let cfg = IterativeConfig { n_iters: *n_iters, estimator: *estimator, beta };
                Ok(iterative_infer(net, model, x, &PosteriorEstimate::standard(&dims), &cfg, rng)?.0)
            }
        }
    }
}

/// How the M-step gradient w.r.t. θ is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MStepRule {
    /// Gradient of the ELBO itself under q.
    Expected,
    /// Local error-times-activity rule at `z = μ_q`: `W += (ξ_x/σ_x) zᵀ`,
    /// `b += ξ_x/σ_x`, `log σ_x += ξ_x² − 1`. Identity-link linear models only.
    LocalRule,
    /// Backpropagation of `log p(x, z)` at `z = μ_q` through the network
    /// form of the model.
    Autodiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmConfig {
    pub learn_rate: f64,
    pub beta: f64,
    pub rule: MStepRule,
    /// Used for the reported ELBO and, with [`MStepRule::Expected`], the M-step.
    pub estimator: GradEstimator,
}

/// Batch means. `elbo_after` re-scores the same posteriors under the updated model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmMetrics {
    pub elbo_before: f64,
    pub elbo_after: f64,
    pub recon: f64,
    pub kl: f64,
    pub grad_norm: f64,
}

/// One E-step over `batch` followed by one gradient-ascent step on θ.
pub fn variational_em_step(
    model: &GenerativeModel,
    engine: &Engine,
    batch: &[Vec<f64>],
    cfg: &EmConfig,
    rng: &mut Rng,
) -> Result<(GenerativeModel, EmMetrics)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("batch is empty".into()));
    }
    if !(cfg.learn_rate >= 0.0) {
        return Err(Error::InvalidArgument(format!("learn_rate must be non-negative, got {}", cfg.learn_rate)));
    }
    if matches!(cfg.rule, MStepRule::LocalRule) && !is_identity_linear(model) {
        return Err(Error::ModelNotLinear);
    }
    let dims = model.latent_dims();
    let base = Rng::new(rng.next_u64());
    let per_datum: Vec<Result<(PosteriorEstimate, ElboMode, ModelGrad, f64, f64, f64)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut r = base.child(i as u64);
            let q = engine.infer(model, x, cfg.beta, &mut r)?;
            let mode = cfg.estimator.mode(&dims, &mut r);
            let mut grad = ModelGrad::zeros_like(model);
            let (e, _) = elbo_objective(model, &q, x, cfg.beta, &mode, Some((&mut grad, 1.0)))?;
            let grad = match cfg.rule {
                MStepRule::Expected => grad,
                MStepRule::LocalRule => local_rule_grad(model, x, &q.means())?,
                MStepRule::Autodiff => autodiff_grad(model, x, &q.means())?,
            };
            Ok((q, mode, grad, e.elbo, e.recon, e.kl))
        })
        .collect();

    let scale = 1.0 / batch.len() as f64;
    let mut total = ModelGrad::zeros_like(model);
    let (mut elbo, mut recon, mut kl) = (0.0, 0.0, 0.0);
    let mut kept = Vec::with_capacity(batch.len());
    for r in per_datum {
        let (q, mode, g, e, rc, k) = r?;
        total.add_scaled(&g, scale);
        elbo += scale * e;
        recon += scale * rc;
        kl += scale * k;
        kept.push((q, mode));
    }
    if !elbo.is_finite() {
        return Err(Error::Diverged(format!("batch ELBO is {elbo}")));
    }
    let flat = total.flat();
    let grad_norm = norm2(&flat);

    let updated = if cfg.learn_rate == 0.0 {
        model.clone()
    } else {
        let mut next = model.clone();
        let params: Vec<f64> = model.params().iter().zip(&flat).map(|(p, g)| p + cfg.learn_rate * g).collect();
        next.set_params(&params)?;
        next
    };

    let mut elbo_after = 0.0;
    for ((q, mode), x) in kept.iter().zip(batch) {
        elbo_after += scale * elbo_objective(&updated, q, x, cfg.beta, mode, None)?.0.elbo;
    }
    Ok((updated, EmMetrics { elbo_before: elbo, elbo_after, recon, kl, grad_norm }))
}

fn is_identity_linear(model: &GenerativeModel) -> bool {
    matches!(model, GenerativeModel::Linear(m) if m.link == Link::Identity)
}

fn local_rule_grad(model: &GenerativeModel, x: &[f64], zs: &[Vec<f64>]) -> Result<ModelGrad> {
    let GenerativeModel::Linear(m) = model else { return Err(Error::ModelNotLinear) };
    let weight = local_weight_gradient(model, x, &zs[0])?;
    let xi = weighted_errors(model, x, zs)?;
    let bias = xi.obs.iter().zip(&m.obs_std).map(|(e, s)| e / s).collect();
    let obs_log_std = xi.obs.iter().map(|e| e * e - 1.0).collect();
    Ok(ModelGrad::Linear { weight, bias, obs_log_std })
}

fn autodiff_grad(model: &GenerativeModel, x: &[f64], zs: &[Vec<f64>]) -> Result<ModelGrad> {
    match model {
        GenerativeModel::Deep(_) => {
            let mut acc = ModelGrad::zeros_like(model);
            model.grad_log_joint_acc(x, zs, Some((&mut acc, 1.0)))?;
            Ok(acc)
        }
        GenerativeModel::Linear(m) => {
            let net: GenerativeModel = DeepLatentModel::from_linear(m)?.into();
            let mut acc = ModelGrad::zeros_like(&net);
            net.grad_log_joint_acc(x, zs, Some((&mut acc, 1.0)))?;
            let flat = acc.flat();
            let (nw, mo) = (m.weight.len(), m.obs_dim());
            let mut weight = m.weight.clone();
            weight.data_mut().copy_from_slice(&flat[..nw]);
            Ok(ModelGrad::Linear { weight, bias: flat[nw..nw + mo].to_vec(), obs_log_std: flat[nw + mo..].to_vec() })
        }
    }
}

/// Minibatch variational EM for `epochs` passes over `data`, shuffling
/// each epoch. Returns the updated model and one metrics row per step.
pub fn fit_em(
    model: &GenerativeModel,
    engine: &Engine,
    data: &[Vec<f64>],
    cfg: &EmConfig,
    epochs: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<(GenerativeModel, Vec<EmMetrics>)> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut model = model.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rows = Vec::new();
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for idx in order.chunks(batch_size) {
            let batch: Vec<Vec<f64>> = idx.iter().map(|&i| data[i].clone()).collect();
            let (next, metrics) = variational_em_step(&model, engine, &batch, cfg, rng)?;
            model = next;
            rows.push(metrics);
        }
    }
    Ok((model, rows))
}
