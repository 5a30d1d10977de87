//! Generative models: `p(x, z^{1:L}) = p(x | z^1) Π_ℓ p(z^ℓ | z^{ℓ+1})`.

mod deep;
mod linear;

pub use deep::{ConditionalGaussian, ConditionalGrad, DeepLatentModel};
pub use linear::{LinearGaussianModel, Link};

use crate::distributions::{DiagGaussian, DiagGrad, HALF_LN_2PI};
use crate::error::{check_len, Error, Result};
use crate::tensor::{Rng, Tensor};

/// One ancestral draw: latents bottom level first, plus the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub latents: Vec<Vec<f64>>,
    pub observation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenerativeModel {
    Linear(LinearGaussianModel),
    Deep(DeepLatentModel),
}

/// Gradient w.r.t. a model's learnable parameters. Priors at the top
/// level are fixed and carry no gradient.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelGrad {
    Linear { weight: Tensor, bias: Vec<f64>, obs_log_std: Vec<f64> },
    Deep { likelihood: ConditionalGrad, priors: Vec<ConditionalGrad> },
}

impl ModelGrad {
    pub fn zeros_like(model: &GenerativeModel) -> Self {
        match model {
            GenerativeModel::Linear(m) => ModelGrad::Linear {
                weight: Tensor::zeros(m.weight.shape()),
                bias: vec![0.0; m.obs_dim()],
                obs_log_std: vec![0.0; m.obs_dim()],
            },
            GenerativeModel::Deep(m) => ModelGrad::Deep {
                likelihood: m.likelihood.zero_grad(),
                priors: m.priors.iter().map(ConditionalGaussian::zero_grad).collect(),
            },
        }
    }

    pub fn add_scaled(&mut self, other: &ModelGrad, k: f64) {
        match (self, other) {
            (
                ModelGrad::Linear { weight, bias, obs_log_std },
                ModelGrad::Linear { weight: w2, bias: b2, obs_log_std: s2 },
            ) => {
                weight.data_mut().iter_mut().zip(w2.data()).for_each(|(a, b)| *a += k * b);
                bias.iter_mut().zip(b2).for_each(|(a, b)| *a += k * b);
                obs_log_std.iter_mut().zip(s2).for_each(|(a, b)| *a += k * b);
            }
            (ModelGrad::Deep { likelihood, priors }, ModelGrad::Deep { likelihood: l2, priors: p2 }) => {
                likelihood.add_scaled(l2, k);
                priors.iter_mut().zip(p2).for_each(|(a, b)| a.add_scaled(b, k));
            }
            _ => panic!("adding gradients of different model kinds"),
        }
    }

    /// Flattened in the order of [`GenerativeModel::params`].
    pub fn flat(&self) -> Vec<f64> {
        match self {
            ModelGrad::Linear { weight, bias, obs_log_std } => {
                weight.data().iter().chain(bias).chain(obs_log_std).copied().collect()
            }
            ModelGrad::Deep { likelihood, priors } => {
                let mut out = likelihood.flat();
                for p in priors {
                    out.extend(p.flat());
                }
                out
            }
        }
    }
}

impl From<LinearGaussianModel> for GenerativeModel {
    fn from(m: LinearGaussianModel) -> Self {
        GenerativeModel::Linear(m)
    }
}

impl From<DeepLatentModel> for GenerativeModel {
    fn from(m: DeepLatentModel) -> Self {
        GenerativeModel::Deep(m)
    }
}

impl GenerativeModel {
    pub fn latent_dims(&self) -> Vec<usize> {
        match self {
            GenerativeModel::Linear(m) => vec![m.latent_dim()],
            GenerativeModel::Deep(m) => m.latent_dims(),
        }
    }

    pub fn num_levels(&self) -> usize {
        match self {
            GenerativeModel::Linear(_) => 1,
            GenerativeModel::Deep(m) => m.num_levels(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            GenerativeModel::Linear(m) => m.obs_dim(),
            GenerativeModel::Deep(m) => m.obs_dim(),
        }
    }

    pub fn as_linear(&self) -> Option<&LinearGaussianModel> {
        match self {
            GenerativeModel::Linear(m) => Some(m),
            GenerativeModel::Deep(_) => None,
        }
    }

    pub fn check_latents(&self, zs: &[Vec<f64>]) -> Result<()> {
        let dims = self.latent_dims();
        check_len("number of latent levels", zs.len(), dims.len())?;
        for (l, (z, d)) in zs.iter().zip(&dims).enumerate() {
            check_len(&format!("latent level {l}"), z.len(), *d)?;
        }
        Ok(())
    }

    /// Prior of level `level` given the level above it (taken from `zs`).
    pub fn level_prior(&self, level: usize, zs: &[Vec<f64>]) -> Result<DiagGaussian> {
        match self {
            GenerativeModel::Linear(m) => {
                if level != 0 {
                    return Err(Error::DimensionMismatch(format!("linear model has no level {level}")));
                }
                Ok(m.prior())
            }
            GenerativeModel::Deep(m) => {
                if level + 1 == m.num_levels() {
                    Ok(m.top_prior.clone())
                } else if level + 1 < m.num_levels() {
                    m.priors[level].eval(&zs[level + 1])
                } else {
                    Err(Error::DimensionMismatch(format!("model has no level {level}")))
                }
            }
        }
    }

    /// Conditional-likelihood Gaussian given the bottom latent level. For
    /// deep models with observation flows this lives in the flow's base space.
    pub fn cond_likelihood_params(&self, zs: &[Vec<f64>]) -> Result<DiagGaussian> {
        self.check_latents(zs)?;
        match self {
            GenerativeModel::Linear(m) => m.cond_likelihood(&zs[0]),
            GenerativeModel::Deep(m) => m.likelihood.eval(&zs[0]),
        }
    }

    /// Observation mapped into the likelihood's space, plus the inverse
    /// log-determinant of the observation flows.
    pub fn normalize_obs(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_len("observation", x.len(), self.obs_dim())?;
        match self {
            GenerativeModel::Linear(_) => Ok((x.to_vec(), 0.0)),
            GenerativeModel::Deep(m) => m.normalize_obs(x),
        }
    }

    /// Top-down ancestral sample.
    pub fn sample_joint(&self, rng: &mut Rng) -> Result<JointSample> {
        let levels = self.num_levels();
        let dims = self.latent_dims();
        let mut zs: Vec<Vec<f64>> = dims.iter().map(|d| vec![0.0; *d]).collect();
        for l in (0..levels).rev() {
            zs[l] = self.level_prior(l, &zs)?.sample(rng);
        }
        let u = self.cond_likelihood_params(&zs)?.sample(rng);
        let observation = match self {
            GenerativeModel::Linear(_) => u,
            GenerativeModel::Deep(m) => m.push_obs(&u)?,
        };
        Ok(JointSample { latents: zs, observation })
    }

    /// `log p(x | z^1)`.
    pub fn log_likelihood(&self, x: &[f64], zs: &[Vec<f64>]) -> Result<f64> {
        let (u, ld) = self.normalize_obs(x)?;
        Ok(self.cond_likelihood_params(zs)?.log_prob(&u)? + ld)
    }

    /// `log p(x, z^{1:L})`.
    pub fn log_joint(&self, x: &[f64], zs: &[Vec<f64>]) -> Result<f64> {
        let mut total = self.log_likelihood(x, zs)?;
        for l in 0..self.num_levels() {
            total += self.level_prior(l, zs)?.log_prob(&zs[l])?;
        }
        Ok(total)
    }

    pub fn joint_log_prob(&self, s: &JointSample) -> Result<f64> {
        self.log_joint(&s.observation, &s.latents)
    }

    /// Log joint with the `log 2π` constants dropped, and the `log σ`
    /// terms dropped wherever σ is a constant parameter rather than a
    /// function of the latents. For a linear model this is
    /// `−½‖(x − μ_x)/σ_x‖² − ½‖(z − μ_z)/σ_z‖²`.
    pub fn map_objective(&self, x: &[f64], zs: &[Vec<f64>]) -> Result<f64> {
        let quad = |d: &DiagGaussian, v: &[f64], with_log_std: bool| -> f64 {
            d.mean
                .iter()
                .zip(d.std())
                .zip(v)
                .map(|((m, s), v)| {
                    let r = (v - m) / s;
                    -0.5 * r * r - if with_log_std { s.ln() } else { 0.0 }
                })
                .sum()
        };
        let (u, _) = self.normalize_obs(x)?;
        let lik = self.cond_likelihood_params(zs)?;
        match self {
            GenerativeModel::Linear(_) => Ok(quad(&lik, &u, false) + quad(&self.level_prior(0, zs)?, &zs[0], false)),
            GenerativeModel::Deep(m) => {
                let mut total = quad(&lik, &u, m.likelihood.log_std.is_none());
                for l in 0..m.num_levels() {
                    let conditional = l + 1 < m.num_levels() && m.priors[l].log_std.is_none();
                    total += quad(&self.level_prior(l, zs)?, &zs[l], conditional);
                }
                Ok(total)
            }
        }
    }

    /// Gradient of `log p(x | z^1)` w.r.t. `z^1`, given the gradient `g`
    /// of some scalar w.r.t. the likelihood's (mean, log σ); parameter
    /// gradients are accumulated into `acc` scaled by `k`.
    pub fn likelihood_vjp(&self, z1: &[f64], g: &DiagGrad, acc: Option<(&mut ModelGrad, f64)>) -> Result<Vec<f64>> {
        match self {
            GenerativeModel::Linear(m) => {
                let a = m.pre_activation(z1)?;
                let delta: Vec<f64> = a.iter().zip(&g.mean).map(|(a, gm)| gm * m.link.derivative(*a)).collect();
                if let Some((ModelGrad::Linear { weight, bias, obs_log_std }, k)) = acc {
                    let kk = z1.len();
                    for (i, d) in delta.iter().enumerate() {
                        for (j, z) in z1.iter().enumerate() {
                            weight.data_mut()[i * kk + j] += k * d * z;
                        }
                        bias[i] += k * d;
                        obs_log_std[i] += k * g.log_std[i];
                    }
                }
                m.weight.tr_matvec(&delta)
            }
            GenerativeModel::Deep(m) => {
                let (gz, pg) = m.likelihood.vjp(z1, g)?;
                if let Some((ModelGrad::Deep { likelihood, .. }, k)) = acc {
                    likelihood.add_scaled(&pg, k);
                }
                Ok(gz)
            }
        }
    }

    /// Like [`Self::likelihood_vjp`] for the conditional prior of `level`;
    /// returns the gradient w.r.t. the level above. The top level has no
    /// conditioning input and yields an empty vector.
    pub fn prior_vjp(
        &self,
        level: usize,
        zs: &[Vec<f64>],
        g: &DiagGrad,
        acc: Option<(&mut ModelGrad, f64)>,
    ) -> Result<Vec<f64>> {
        match self {
            GenerativeModel::Deep(m) if level + 1 < m.num_levels() => {
                let (gz, pg) = m.priors[level].vjp(&zs[level + 1], g)?;
                if let Some((ModelGrad::Deep { priors, .. }, k)) = acc {
                    priors[level].add_scaled(&pg, k);
                }
                Ok(gz)
            }
            _ => Ok(Vec::new()),
        }
    }

    /// Exact gradient of `log p(x, z)` w.r.t. every latent level.
    pub fn grad_log_joint(&self, x: &[f64], zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.grad_log_joint_acc(x, zs, None)
    }

    /// [`Self::grad_log_joint`] that also accumulates `k · ∇_θ log p(x, z)` into `acc`.
    pub fn grad_log_joint_acc(
        &self,
        x: &[f64],
        zs: &[Vec<f64>],
        mut acc: Option<(&mut ModelGrad, f64)>,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_latents(zs)?;
        let (u, _) = self.normalize_obs(x)?;
        let mut grads: Vec<Vec<f64>> = zs.iter().map(|z| vec![0.0; z.len()]).collect();
        let lik = self.cond_likelihood_params(zs)?;
        let (_, g) = lik.log_prob_grad(&u)?;
        let gz = self.likelihood_vjp(&zs[0], &g, acc.as_mut().map(|(a, k)| (&mut **a, *k)))?;
        add_into(&mut grads[0], &gz);
        for l in 0..self.num_levels() {
            let prior = self.level_prior(l, zs)?;
            let (gx, gp) = prior.log_prob_grad(&zs[l])?;
            add_into(&mut grads[l], &gx);
            let up = self.prior_vjp(l, zs, &gp, acc.as_mut().map(|(a, k)| (&mut **a, *k)))?;
            if !up.is_empty() {
                add_into(&mut grads[l + 1], &up);
            }
        }
        Ok(grads)
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    /// Learnable parameters. Linear: `W` row-major, `b`, `log σ_x`.
    /// Deep: likelihood head, then each conditional prior.
    pub fn params(&self) -> Vec<f64> {
        match self {
            GenerativeModel::Linear(m) => {
                m.weight.data().iter().chain(&m.bias).copied().chain(m.obs_std.iter().map(|s| s.ln())).collect()
            }
            GenerativeModel::Deep(m) => {
                let mut out = m.likelihood.params();
                for p in &m.priors {
                    out.extend(p.params());
                }
                out
            }
        }
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len("model parameters", flat.len(), self.num_params())?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite model parameters".into()));
        }
        match self {
            GenerativeModel::Linear(m) => {
                let nw = m.weight.len();
                let mo = m.obs_dim();
                m.weight.data_mut().copy_from_slice(&flat[..nw]);
                m.bias.copy_from_slice(&flat[nw..nw + mo]);
                for (s, l) in m.obs_std.iter_mut().zip(&flat[nw + mo..]) {
                    *s = l.exp().max(crate::distributions::MIN_STD);
                }
            }
            GenerativeModel::Deep(m) => {
                let mut off = 0;
                let n = m.likelihood.num_params();
                m.likelihood.set_params(&flat[off..off + n])?;
                off += n;
                for p in &mut m.priors {
                    let n = p.num_params();
                    p.set_params(&flat[off..off + n])?;
                    off += n;
                }
            }
        }
        Ok(())
    }

    /// Constant `½ log 2π` per observed and latent dimension.
    pub fn log_normalizer(&self) -> f64 {
        let d: usize = self.obs_dim() + self.latent_dims().iter().sum::<usize>();
        d as f64 * HALF_LN_2PI
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}
