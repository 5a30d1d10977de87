//! MAP objective, weighted errors, and the evidence lower bound.

use serde::{Deserialize, Serialize};

use super::{PosteriorEstimate, PosteriorGrad, WeightedErrors};
use crate::distributions::{kl_diag_diag, kl_diag_diag_grad, DiagGrad, HALF_LN_2PI};
use crate::error::{check_len, Error, Result};
use crate::models::{GenerativeModel, LinearGaussianModel, Link, ModelGrad};
use crate::tensor::{Rng, Tensor};

/// See [`GenerativeModel::map_objective`].
pub fn map_objective(model: &GenerativeModel, x: &[f64], zs: &[Vec<f64>]) -> Result<f64> {
    model.map_objective(x, zs)
}

/// `ξ_x = (x − μ_x(z)) / σ_x` and `ξ_z = (z − μ_z) / σ_z` per level.
pub fn weighted_errors(model: &GenerativeModel, x: &[f64], zs: &[Vec<f64>]) -> Result<WeightedErrors> {
    let (u, _) = model.normalize_obs(x)?;
    let lik = model.cond_likelihood_params(zs)?;
    let ratio = |v: &[f64], d: &crate::distributions::DiagGaussian| -> Vec<f64> {
        v.iter().zip(&d.mean).zip(d.std()).map(|((v, m), s)| (v - m) / s).collect()
    };
    let obs = ratio(&u, &lik);
    let latents =
        (0..model.num_levels()).map(|l| Ok(ratio(&zs[l], &model.level_prior(l, zs)?))).collect::<Result<_>>()?;
    Ok(WeightedErrors { obs, latents })
}

/// Gradient of the MAP objective w.r.t. every latent level.
///
/// For the linear model this is the weighted-error form
/// `∇_z = Wᵀ (f'(a) ⊙ ξ_x / σ_x) − ξ_z / σ_z`, with `a = W z + b`.
/// Deep models pull the likelihood error back through the network Jacobian.
pub fn map_gradient(model: &GenerativeModel, x: &[f64], zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    match model {
        GenerativeModel::Linear(m) => {
            model.check_latents(zs)?;
            let xi = weighted_errors(model, x, zs)?;
            let a = m.pre_activation(&zs[0])?;
            let pulled: Vec<f64> =
                xi.obs.iter().zip(&m.obs_std).zip(&a).map(|((e, s), a)| m.link.derivative(*a) * e / s).collect();
            let mut g = m.weight.tr_matvec(&pulled)?;
            for ((gi, e), s) in g.iter_mut().zip(&xi.latents[0]).zip(&m.prior_std) {
                *gi -= e / s;
            }
            Ok(vec![g])
        }
        GenerativeModel::Deep(_) => model.grad_log_joint(x, zs),
    }
}

/// Local learning rule for the weights of an identity-link linear model:
/// the observation error times the latent, `(ξ_x / σ_x) zᵀ`. With unit
/// observation noise this is `ξ_x zᵀ`.
pub fn local_weight_gradient(model: &GenerativeModel, x: &[f64], z: &[f64]) -> Result<Tensor> {
    let m = match model {
        GenerativeModel::Linear(m) if m.link == Link::Identity => m,
        _ => return Err(Error::ModelNotLinear),
    };
    let zs = [z.to_vec()];
    let xi = weighted_errors(model, x, &zs)?;
    let (rows, cols) = (m.obs_dim(), m.latent_dim());
    let mut g = Tensor::zeros(&[rows, cols]);
    for i in 0..rows {
        let e = xi.obs[i] / m.obs_std[i];
        for j in 0..cols {
            g.set(i, j, e * z[j]);
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboEstimate {
    pub elbo: f64,
    /// `E_q[log p(x | z)]`.
    pub recon: f64,
    /// Summed per-level KL (not multiplied by β).
    pub kl: f64,
}

/// How the reconstruction expectation is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum ElboMode {
    /// Closed form; identity-link linear models only.
    Analytic,
    /// Reparameterized Monte Carlo over fixed noise `eps[sample][level][dim]`.
    Sampled(Vec<Vec<Vec<f64>>>),
}

/// Recipe for producing an [`ElboMode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradEstimator {
    Analytic,
    Sampled { n: usize },
}

impl GradEstimator {
    /// Best default for `model`: analytic where possible, else one sample.
    pub fn default_for(model: &GenerativeModel) -> Self {
        match model {
            GenerativeModel::Linear(m) if m.link == Link::Identity => GradEstimator::Analytic,
            _ => GradEstimator::Sampled { n: 1 },
        }
    }

    pub fn mode(&self, dims: &[usize], rng: &mut Rng) -> ElboMode {
        match *self {
            GradEstimator::Analytic => ElboMode::Analytic,
            GradEstimator::Sampled { n } => ElboMode::sample(n, dims, rng),
        }
    }
}

impl ElboMode {
    pub fn sample(n: usize, dims: &[usize], rng: &mut Rng) -> Self {
        ElboMode::Sampled((0..n).map(|_| dims.iter().map(|d| rng.normal_vec(*d)).collect()).collect())
    }
}

/// ELBO `E_q[log p(x|z)] − β Σ_ℓ KL(q_ℓ ‖ p(z^ℓ | z^{ℓ+1}))` and its gradient
/// w.r.t. λ. When `acc` is given, `k · ∇_θ` of the same estimate is added to it.
///
/// Conditional priors are evaluated at the reparameterized sample of the
/// level above, so their KL is analytic given that sample.
pub fn elbo_objective(
    model: &GenerativeModel,
    q: &PosteriorEstimate,
    x: &[f64],
    beta: f64,
    mode: &ElboMode,
    acc: Option<(&mut ModelGrad, f64)>,
) -> Result<(ElboEstimate, PosteriorGrad)> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be non-negative, got {beta}")));
    }
    let dims = model.latent_dims();
    check_len("posterior levels", q.levels.len(), dims.len())?;
    for (l, (g, d)) in q.levels.iter().zip(&dims).enumerate() {
        check_len(&format!("posterior level {l}"), g.dim(), *d)?;
    }
    check_len("observation", x.len(), model.obs_dim())?;
    match mode {
        ElboMode::Analytic => match model {
            GenerativeModel::Linear(m) if m.link == Link::Identity => analytic_linear(m, q, x, beta, acc),
            _ => Err(Error::ModelNotLinear),
        },
        ElboMode::Sampled(eps) => sampled(model, q, x, beta, eps, acc),
    }
}

fn analytic_linear(
    m: &LinearGaussianModel,
    q: &PosteriorEstimate,
    x: &[f64],
    beta: f64,
    acc: Option<(&mut ModelGrad, f64)>,
) -> Result<(ElboEstimate, PosteriorGrad)> {
    let ql = &q.levels[0];
    let mu = &ql.mean;
    let s2: Vec<f64> = ql.std().iter().map(|s| s * s).collect();
    let pred = m.pre_activation(mu)?;
    let (mo, k) = (m.obs_dim(), m.latent_dim());
    let mut recon = 0.0;
    let mut r_over_var = vec![0.0; mo];
    let mut spread = vec![0.0; mo];
    for i in 0..mo {
        let var = m.obs_std[i] * m.obs_std[i];
        let r = x[i] - pred[i];
        spread[i] = (0..k).map(|j| m.weight.get(i, j).powi(2) * s2[j]).sum();
        recon += -HALF_LN_2PI - m.obs_std[i].ln() - 0.5 * (r * r + spread[i]) / var;
        r_over_var[i] = r / var;
    }
    let prior = m.prior();
    let kl = kl_diag_diag(ql, &prior)?;
    let (gq, _) = kl_diag_diag_grad(ql, &prior)?;

    let mut g = DiagGrad::zeros(k);
    let pulled = m.weight.tr_matvec(&r_over_var)?;
    for j in 0..k {
        let curvature: f64 = (0..mo).map(|i| m.weight.get(i, j).powi(2) / (m.obs_std[i] * m.obs_std[i])).sum();
        g.mean[j] = pulled[j] - beta * gq.mean[j];
        g.log_std[j] = -curvature * s2[j] - beta * gq.log_std[j];
    }

    if let Some((ModelGrad::Linear { weight, bias, obs_log_std }, scale)) = acc {
        for i in 0..mo {
            let var = m.obs_std[i] * m.obs_std[i];
            let r = x[i] - pred[i];
            for j in 0..k {
                weight.data_mut()[i * k + j] += scale * (r * mu[j] - m.weight.get(i, j) * s2[j]) / var;
            }
            bias[i] += scale * r / var;
            obs_log_std[i] += scale * (-1.0 + (r * r + spread[i]) / var);
        }
    }
    Ok((ElboEstimate { elbo: recon - beta * kl, recon, kl }, PosteriorGrad { levels: vec![g] }))
}

fn sampled(
    model: &GenerativeModel,
    q: &PosteriorEstimate,
    x: &[f64],
    beta: f64,
    eps: &[Vec<Vec<f64>>],
    mut acc: Option<(&mut ModelGrad, f64)>,
) -> Result<(ElboEstimate, PosteriorGrad)> {
    if eps.is_empty() {
        return Err(Error::InvalidArgument("need at least one noise sample".into()));
    }
    let dims = model.latent_dims();
    let levels = dims.len();
    let w = 1.0 / eps.len() as f64;
    let (u, obs_ld) = model.normalize_obs(x)?;
    let stds: Vec<Vec<f64>> = q.levels.iter().map(|l| l.std()).collect();
    let mut grad = PosteriorGrad::zeros(&dims);
    let (mut recon, mut kl) = (0.0, 0.0);
    for e in eps {
        check_len("noise levels", e.len(), levels)?;
        let zs: Vec<Vec<f64>> = q.levels.iter().zip(e).map(|(l, e)| l.reparam_sample(e)).collect::<Result<_>>()?;
        let mut gz: Vec<Vec<f64>> = dims.iter().map(|d| vec![0.0; *d]).collect();

        let lik = model.cond_likelihood_params(&zs)?;
        recon += w * (lik.log_prob(&u)? + obs_ld);
        let (_, g_lik) = lik.log_prob_grad(&u)?;
        let gz0 = model.likelihood_vjp(&zs[0], &g_lik, acc.as_mut().map(|(a, k)| (&mut **a, *k * w)))?;
        gz[0].iter_mut().zip(&gz0).for_each(|(a, b)| *a += b);

        for l in 0..levels {
            let prior = model.level_prior(l, &zs)?;
            kl += w * kl_diag_diag(&q.levels[l], &prior)?;
            let (gq, gp) = kl_diag_diag_grad(&q.levels[l], &prior)?;
            for i in 0..dims[l] {
                grad.levels[l].mean[i] -= w * beta * gq.mean[i];
                grad.levels[l].log_std[i] -= w * beta * gq.log_std[i];
            }
            if l + 1 < levels {
                let up = DiagGrad {
                    mean: gp.mean.iter().map(|g| -beta * g).collect(),
                    log_std: gp.log_std.iter().map(|g| -beta * g).collect(),
                };
                let gza = model.prior_vjp(l, &zs, &up, acc.as_mut().map(|(a, k)| (&mut **a, *k * w)))?;
                gz[l + 1].iter_mut().zip(&gza).for_each(|(a, b)| *a += b);
            }
        }
        for l in 0..levels {
            for i in 0..dims[l] {
                grad.levels[l].mean[i] += w * gz[l][i];
                grad.levels[l].log_std[i] += w * gz[l][i] * stds[l][i] * e[l][i];
            }
        }
    }
    Ok((ElboEstimate { elbo: recon - beta * kl, recon, kl }, grad))
}

/// Monte-Carlo ELBO with `n_samples` fresh reparameterized draws.
pub fn elbo(
    model: &GenerativeModel,
    q: &PosteriorEstimate,
    x: &[f64],
    n_samples: usize,
    beta: f64,
    rng: &mut Rng,
) -> Result<ElboEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let mode = ElboMode::sample(n_samples, &model.latent_dims(), rng);
    Ok(elbo_objective(model, q, x, beta, &mode, None)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DiagGaussian;
    use crate::models::DeepLatentModel;

    fn unit() -> GenerativeModel {
        LinearGaussianModel::unit().into()
    }

    fn q1(mean: f64, var: f64) -> PosteriorEstimate {
        PosteriorEstimate { levels: vec![DiagGaussian::new(vec![mean], vec![0.5 * var.ln()]).unwrap()] }
    }

    #[test]
    fn map_objective_examples() {
        assert_eq!(map_objective(&unit(), &[1.0], &[vec![0.0]]).unwrap(), -0.5);
        assert_eq!(map_objective(&unit(), &[1.0], &[vec![0.5]]).unwrap(), -0.25);
    }

    #[test]
    fn map_objective_maximized_at_posterior_mean() {
        let m = unit();
        let best = (0..=2000)
            .map(|i| -1.0 + i as f64 * 1e-3)
            .max_by(|a, b| {
                let fa = map_objective(&m, &[1.0], &[vec![*a]]).unwrap();
                let fb = map_objective(&m, &[1.0], &[vec![*b]]).unwrap();
                fa.total_cmp(&fb)
            })
            .unwrap();
        assert!((best - 0.5).abs() < 1e-9);
    }

    #[test]
    fn weighted_error_examples() {
        let e = weighted_errors(&unit(), &[1.0], &[vec![0.0]]).unwrap();
        assert_eq!((e.obs.clone(), e.latents.clone()), (vec![1.0], vec![vec![0.0]]));
        let e = weighted_errors(&unit(), &[1.0], &[vec![0.5]]).unwrap();
        assert_eq!((e.obs.clone(), e.latents.clone()), (vec![0.5], vec![vec![0.5]]));
        let e = weighted_errors(&unit(), &[0.0], &[vec![0.0]]).unwrap();
        assert_eq!(e.to_flat(), vec![0.0, 0.0]);
    }

    #[test]
    fn map_gradient_examples() {
        assert_eq!(map_gradient(&unit(), &[1.0], &[vec![0.0]]).unwrap(), vec![vec![1.0]]);
        assert_eq!(map_gradient(&unit(), &[1.0], &[vec![0.5]]).unwrap(), vec![vec![0.0]]);
    }

    #[test]
    fn map_gradient_matches_differences_on_tanh_and_deep_models() {
        let mut rng = Rng::new(31);
        let mut lin = LinearGaussianModel::random(3, 4, &mut rng);
        lin.link = Link::Tanh;
        let deep = DeepLatentModel::random(&[2, 2], 3, 5, 0.4, &mut rng).unwrap();
        for m in [GenerativeModel::Linear(lin), GenerativeModel::Deep(deep)] {
            let s = m.sample_joint(&mut rng).unwrap();
            let g = map_gradient(&m, &s.observation, &s.latents).unwrap();
            let h = 1e-5;
            for l in 0..s.latents.len() {
                for i in 0..s.latents[l].len() {
                    let mut up = s.latents.clone();
                    let mut dn = s.latents.clone();
                    up[l][i] += h;
                    dn[l][i] -= h;
                    let fd = (map_objective(&m, &s.observation, &up).unwrap()
                        - map_objective(&m, &s.observation, &dn).unwrap())
                        / (2.0 * h);
                    assert!((fd - g[l][i]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn local_rule_examples() {
        let g = local_weight_gradient(&unit(), &[1.0], &[0.5]).unwrap();
        assert_eq!(g.data(), &[0.25]);
        let mut rng = Rng::new(32);
        let lin = LinearGaussianModel::random(2, 3, &mut rng);
        let z = vec![0.3, -0.8];
        let x = lin.pre_activation(&z).unwrap();
        let g = local_weight_gradient(&lin.clone().into(), &x, &z).unwrap();
        assert!(g.data().iter().all(|v| *v == 0.0));
        let mut tanh = lin;
        tanh.link = Link::Tanh;
        assert!(matches!(local_weight_gradient(&tanh.into(), &x, &z), Err(Error::ModelNotLinear)));
    }

    #[test]
    fn analytic_elbo_examples() {
        let m = unit();
        let (e, _) = elbo_objective(&m, &q1(0.5, 0.5), &[1.0], 1.0, &ElboMode::Analytic, None).unwrap();
        let log_marginal = LinearGaussianModel::unit().exact_log_marginal(&[1.0]).unwrap();
        assert!((e.elbo - log_marginal).abs() < 1e-12);
        assert!((e.elbo + 1.515512).abs() < 1e-6);

        let (e, _) = elbo_objective(&m, &q1(0.0, 1.0), &[1.0], 1.0, &ElboMode::Analytic, None).unwrap();
        assert!((e.elbo - (-HALF_LN_2PI - 1.0)).abs() < 1e-12);
        assert!((e.elbo + 1.918939).abs() < 1e-6);

        let (e0, _) = elbo_objective(&m, &q1(0.3, 0.2), &[1.0], 0.0, &ElboMode::Analytic, None).unwrap();
        assert_eq!(e0.elbo, e0.recon);
        assert!(e0.kl > 0.0);
    }

    #[test]
    fn sampled_elbo_converges_to_analytic() {
        let m = unit();
        let q = q1(0.5, 0.5);
        let mut rng = Rng::new(33);
        let mc = elbo(&m, &q, &[1.0], 100_000, 1.0, &mut rng).unwrap();
        assert!((mc.elbo + 1.515512).abs() < 5e-3, "{mc:?}");
        assert!(elbo(&m, &q, &[1.0], 0, 1.0, &mut rng).is_err());
    }

    fn check_gradients(m: &GenerativeModel, q: &PosteriorEstimate, x: &[f64], mode: &ElboMode) {
        let mut acc = ModelGrad::zeros_like(m);
        let (_, g) = elbo_objective(m, q, x, 0.7, mode, Some((&mut acc, 1.0))).unwrap();
        let flat = q.to_flat();
        let gflat = g.to_flat();
        let dims = q.dims();
        let h = 1e-6;
        let f = |v: &[f64]| {
            elbo_objective(m, &PosteriorEstimate::from_flat(&dims, v).unwrap(), x, 0.7, mode, None).unwrap().0.elbo
        };
        for i in 0..flat.len() {
            let mut a = flat.clone();
            let mut b = flat.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            assert!((fd - gflat[i]).abs() < 1e-6 * fd.abs().max(1.0), "lambda {i}: {fd} vs {}", gflat[i]);
        }
        let p = m.params();
        let ga = acc.flat();
        let mut probe = m.clone();
        for i in 0..p.len() {
            let mut a = p.clone();
            a[i] += h;
            probe.set_params(&a).unwrap();
            let up = elbo_objective(&probe, q, x, 0.7, mode, None).unwrap().0.elbo;
            a[i] -= 2.0 * h;
            probe.set_params(&a).unwrap();
            let dn = elbo_objective(&probe, q, x, 0.7, mode, None).unwrap().0.elbo;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - ga[i]).abs() < 1e-5 * fd.abs().max(1.0), "theta {i}: {fd} vs {}", ga[i]);
        }
    }

    #[test]
    fn elbo_gradients_match_differences() {
        let mut rng = Rng::new(34);
        let lin = GenerativeModel::Linear(LinearGaussianModel::random(2, 3, &mut rng));
        let q = PosteriorEstimate { levels: vec![DiagGaussian::new(vec![0.2, -0.4], vec![-0.3, -1.0]).unwrap()] };
        let x = [0.5, -1.0, 0.3];
        check_gradients(&lin, &q, &x, &ElboMode::Analytic);
        check_gradients(&lin, &q, &x, &ElboMode::sample(3, &[2], &mut rng));

        let deep = GenerativeModel::Deep(DeepLatentModel::random(&[2, 3], 3, 4, 0.5, &mut rng).unwrap());
        let q = PosteriorEstimate {
            levels: vec![
                DiagGaussian::new(vec![0.2, -0.4], vec![-0.3, -1.0]).unwrap(),
                DiagGaussian::new(vec![0.1, 0.6, -0.2], vec![-0.5, 0.1, -0.2]).unwrap(),
            ],
        };
        check_gradients(&deep, &q, &x, &ElboMode::sample(2, &[2, 3], &mut rng));
    }

    #[test]
    fn analytic_mode_requires_identity_linear() {
        let mut rng = Rng::new(35);
        let deep = GenerativeModel::Deep(DeepLatentModel::random(&[1], 1, 2, 1.0, &mut rng).unwrap());
        let r = elbo_objective(&deep, &q1(0.0, 1.0), &[0.0], 1.0, &ElboMode::Analytic, None);
        assert!(matches!(r, Err(Error::ModelNotLinear)));
    }
}
