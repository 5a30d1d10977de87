use crate::distributions::{DiagGaussian, DiagGrad};
use crate::error::{check_len, Error, Result};
use crate::flows::ConstantAffine;
use crate::nn::{Activation, GradientBundle, Mlp};
use crate::tensor::Rng;

use super::linear::{LinearGaussianModel, Link};

/// Gaussian whose parameters are a network of a conditioning input.
///
/// With `log_std = None` the network emits `2·dim` values: the mean
/// followed by `log σ`. With `Some`, the network emits only the mean and
/// the scale is a free parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    pub net: Mlp,
    pub log_std: Option<Vec<f64>>,
}

/// Parameter gradient for a [`ConditionalGaussian`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGrad {
    pub net: GradientBundle,
    pub log_std: Option<Vec<f64>>,
}

impl ConditionalGrad {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.net.flat_params();
        if let Some(l) = &self.log_std {
            out.extend_from_slice(l);
        }
        out
    }

    pub fn add_scaled(&mut self, other: &ConditionalGrad, k: f64) {
        self.net.add_scaled(&other.net, k);
        if let (Some(a), Some(b)) = (&mut self.log_std, &other.log_std) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += k * y);
        }
    }
}

impl ConditionalGaussian {
    pub fn new(net: Mlp, log_std: Option<Vec<f64>>) -> Result<Self> {
        let g = Self { net, log_std };
        let expect = match &g.log_std {
            Some(l) => l.len(),
            None => {
                if g.net.output_dim() % 2 != 0 {
                    return Err(Error::DimensionMismatch("mean/log-std head needs an even width".into()));
                }
                g.net.output_dim() / 2
            }
        };
        check_len(
            "conditional Gaussian head",
            g.net.output_dim(),
            if g.log_std.is_some() { expect } else { 2 * expect },
        )?;
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        match &self.log_std {
            Some(l) => l.len(),
            None => self.net.output_dim() / 2,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn eval(&self, input: &[f64]) -> Result<DiagGaussian> {
        let out = self.net.forward(input)?;
        let d = self.dim();
        match &self.log_std {
            Some(l) => DiagGaussian::new(out, l.clone()),
            None => DiagGaussian::new(out[..d].to_vec(), out[d..].to_vec()),
        }
    }

    /// Pulls a gradient w.r.t. the produced Gaussian's parameters back to
    /// the conditioning input and to this head's parameters.
    pub fn vjp(&self, input: &[f64], g: &DiagGrad) -> Result<(Vec<f64>, ConditionalGrad)> {
        let upstream: Vec<f64> = match &self.log_std {
            Some(_) => g.mean.clone(),
            None => g.mean.iter().chain(&g.log_std).copied().collect(),
        };
        let mut bundle = self.net.backward(input, &upstream)?;
        let gin = std::mem::take(&mut bundle.input);
        let log_std = self.log_std.as_ref().map(|_| g.log_std.clone());
        Ok((gin, ConditionalGrad { net: bundle, log_std }))
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params() + self.log_std.as_ref().map_or(0, Vec::len)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.net.params();
        if let Some(l) = &self.log_std {
            p.extend_from_slice(l);
        }
        p
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len("conditional Gaussian parameters", flat.len(), self.num_params())?;
        let n = self.net.num_params();
        self.net.set_params(&flat[..n])?;
        if let Some(l) = &mut self.log_std {
            l.copy_from_slice(&flat[n..]);
        }
        Ok(())
    }

    pub fn zero_grad(&self) -> ConditionalGrad {
        ConditionalGrad {
            net: GradientBundle::zeros_like(&self.net),
            log_std: self.log_std.as_ref().map(|l| vec![0.0; l.len()]),
        }
    }
}

/// Hierarchical latent Gaussian model with a first-order chain of levels:
/// `z^L ~ top_prior`, `z^ℓ | z^{ℓ+1} ~ priors[ℓ]`, `x | z^1 ~ likelihood`,
/// optionally pushed through constant affine observation flows.
///
/// Level 0 is the bottom level `z^1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepLatentModel {
    pub top_prior: DiagGaussian,
    /// `priors[ℓ]` maps level `ℓ + 1` to the distribution of level `ℓ`.
    pub priors: Vec<ConditionalGaussian>,
    pub likelihood: ConditionalGaussian,
    /// Applied in order to a likelihood draw to produce the observation.
    pub obs_flow: Vec<ConstantAffine>,
}

impl DeepLatentModel {
    pub fn new(
        top_prior: DiagGaussian,
        priors: Vec<ConditionalGaussian>,
        likelihood: ConditionalGaussian,
        obs_flow: Vec<ConstantAffine>,
    ) -> Result<Self> {
        let m = Self { top_prior, priors, likelihood, obs_flow };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.latent_dims();
        for (l, p) in self.priors.iter().enumerate() {
            check_len(&format!("prior {l} input"), p.input_dim(), dims[l + 1])?;
        }
        check_len("likelihood input", self.likelihood.input_dim(), dims[0])?;
        for (i, f) in self.obs_flow.iter().enumerate() {
            check_len(&format!("observation flow {i}"), f.dim(), self.likelihood.dim())?;
        }
        Ok(())
    }

    /// Random model: each level's prior and the likelihood are tanh MLPs
    /// with one hidden layer; the likelihood has a free scale `obs_std`.
    pub fn random(latent_dims: &[usize], obs_dim: usize, hidden: usize, obs_std: f64, rng: &mut Rng) -> Result<Self> {
        if latent_dims.is_empty() {
            return Err(Error::InvalidArgument("need at least one latent level".into()));
        }
        let top = *latent_dims.last().expect("non-empty");
        let acts = [Activation::Tanh, Activation::Identity];
        let mut priors = Vec::new();
        for l in 0..latent_dims.len() - 1 {
            let net = Mlp::random(&[latent_dims[l + 1], hidden, 2 * latent_dims[l]], &acts, rng)?;
            priors.push(ConditionalGaussian::new(net, None)?);
        }
        let net = Mlp::random(&[latent_dims[0], hidden, obs_dim], &acts, rng)?;
        let likelihood = ConditionalGaussian::new(net, Some(vec![obs_std.ln(); obs_dim]))?;
        Self::new(DiagGaussian::standard(top), priors, likelihood, Vec::new())
    }

    /// Single-level model computing exactly what `linear` computes.
    pub fn from_linear(linear: &LinearGaussianModel) -> Result<Self> {
        let activation = match linear.link {
            Link::Identity => Activation::Identity,
            Link::Tanh => Activation::Tanh,
        };
        let net =
            Mlp::new(vec![crate::nn::Layer { weight: linear.weight.clone(), bias: linear.bias.clone(), activation }])?;
        let likelihood = ConditionalGaussian::new(net, Some(linear.obs_std.iter().map(|s| s.ln()).collect()))?;
        Self::new(linear.prior(), Vec::new(), likelihood, Vec::new())
    }

    pub fn num_levels(&self) -> usize {
        self.priors.len() + 1
    }

    pub fn latent_dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.priors.iter().map(ConditionalGaussian::dim).collect();
        d.push(self.top_prior.dim());
        d
    }

    pub fn obs_dim(&self) -> usize {
        self.likelihood.dim()
    }

    /// Observation to the likelihood's base space, with the summed inverse log-determinants.
    pub fn normalize_obs(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut u = x.to_vec();
        let mut total = 0.0;
        for f in self.obs_flow.iter().rev() {
            let (next, ld) = f.inverse(&u)?;
            u = next;
            total += ld;
        }
        Ok((u, total))
    }

    pub fn push_obs(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut v = u.to_vec();
        for f in &self.obs_flow {
            v = f.forward(&v)?.0;
        }
        Ok(v)
    }
}
