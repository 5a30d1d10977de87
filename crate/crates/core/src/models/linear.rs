use serde::{Deserialize, Serialize};

use crate::distributions::{DiagGaussian, FullGaussian};
use crate::error::{check_len, Error, Result};
use crate::tensor::{inverse, Rng, Tensor};

/// Elementwise function applied to `W·z + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Identity,
    Tanh,
}

impl Link {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Link::Identity => a,
            Link::Tanh => a.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
        }
    }
}

/// `z ~ N(μ_z, diag σ_z²)`, `x | z ~ N(f(W·z + b), diag σ_x²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    /// `M × K`.
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub prior_mean: Vec<f64>,
    pub prior_std: Vec<f64>,
    pub link: Link,
}

impl LinearGaussianModel {
    pub fn new(
        weight: Tensor,
        bias: Vec<f64>,
        obs_std: Vec<f64>,
        prior_mean: Vec<f64>,
        prior_std: Vec<f64>,
        link: Link,
    ) -> Result<Self> {
        let m = Self { weight, bias, obs_std, prior_mean, prior_std, link };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.weight.require_matrix("weight")?;
        let (m, k) = (self.weight.rows(), self.weight.cols());
        check_len("bias", self.bias.len(), m)?;
        check_len("obs_std", self.obs_std.len(), m)?;
        check_len("prior_mean", self.prior_mean.len(), k)?;
        check_len("prior_std", self.prior_std.len(), k)?;
        if self.obs_std.iter().chain(&self.prior_std).any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("standard deviations must be positive".into()));
        }
        if !self.weight.is_finite() || self.bias.iter().chain(&self.prior_mean).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("model parameters must be finite".into()));
        }
        Ok(())
    }

    /// One latent, one observation, `W = 1`, `b = 0`, unit variances.
    pub fn unit() -> Self {
        Self::new(Tensor::identity(1), vec![0.0], vec![1.0], vec![0.0], vec![1.0], Link::Identity)
            .expect("unit model is valid")
    }

    /// Random identity-link model: `W ~ N(0,1)`, `b ~ N(0, 0.5²)`,
    /// `σ_x ~ U(0.3, 1)`, standard-normal prior.
    pub fn random(latent_dim: usize, obs_dim: usize, rng: &mut Rng) -> Self {
        let weight = Tensor::matrix(obs_dim, latent_dim, rng.normal_vec(obs_dim * latent_dim)).expect("sized");
        let bias = rng.normal_vec(obs_dim).into_iter().map(|b| 0.5 * b).collect();
        let obs_std = (0..obs_dim).map(|_| rng.uniform_range(0.3, 1.0)).collect();
        Self::new(weight, bias, obs_std, vec![0.0; latent_dim], vec![1.0; latent_dim], Link::Identity)
            .expect("random model is valid")
    }

    pub fn latent_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn obs_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn prior(&self) -> DiagGaussian {
        DiagGaussian::from_std(self.prior_mean.clone(), &self.prior_std).expect("validated")
    }

    /// Pre-link activation `W·z + b`.
    pub fn pre_activation(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len("latent", z.len(), self.latent_dim())?;
        let mut a = self.weight.matvec(z)?;
        for (ai, bi) in a.iter_mut().zip(&self.bias) {
            *ai += bi;
        }
        Ok(a)
    }

    pub fn cond_likelihood(&self, z: &[f64]) -> Result<DiagGaussian> {
        let mean = self.pre_activation(z)?.into_iter().map(|a| self.link.apply(a)).collect();
        DiagGaussian::from_std(mean, &self.obs_std)
    }

    fn require_identity_link(&self) -> Result<()> {
        if self.link != Link::Identity {
            return Err(Error::ModelNotLinear);
        }
        Ok(())
    }

    /// Posterior precision `Σ_z⁻¹ + Wᵀ Σ_x⁻¹ W`.
    pub fn posterior_precision(&self) -> Result<Tensor> {
        self.require_identity_link()?;
        let (m, k) = (self.obs_dim(), self.latent_dim());
        let mut prec = Tensor::zeros(&[k, k]);
        for a in 0..k {
            for b in a..k {
                let mut s: f64 = (0..m)
                    .map(|i| self.weight.get(i, a) * self.weight.get(i, b) / (self.obs_std[i] * self.obs_std[i]))
                    .sum();
                if a == b {
                    s += 1.0 / (self.prior_std[a] * self.prior_std[a]);
                }
                prec.set(a, b, s);
                prec.set(b, a, s);
            }
        }
        Ok(prec)
    }

    /// Exact Gaussian posterior `p(z | x)` by conditioning.
    pub fn exact_posterior(&self, x: &[f64]) -> Result<FullGaussian> {
        check_len("observation", x.len(), self.obs_dim())?;
        let prec = self.posterior_precision()?;
        let cov = inverse(&prec)?.symmetrize();
        let weighted: Vec<f64> =
            x.iter().zip(&self.bias).zip(&self.obs_std).map(|((x, b), s)| (x - b) / (s * s)).collect();
        let mut rhs = self.weight.tr_matvec(&weighted)?;
        for ((r, m), s) in rhs.iter_mut().zip(&self.prior_mean).zip(&self.prior_std) {
            *r += m / (s * s);
        }
        FullGaussian::new(cov.matvec(&rhs)?, cov)
    }

    /// Marginal `p(x) = N(W μ_z + b, W Σ_z Wᵀ + Σ_x)`.
    pub fn marginal(&self) -> Result<FullGaussian> {
        self.require_identity_link()?;
        let mean = self.pre_activation(&self.prior_mean)?;
        let prior_var: Vec<f64> = self.prior_std.iter().map(|s| s * s).collect();
        let scaled = self.weight.matmul(&Tensor::diag(&prior_var))?;
        let mut cov = scaled.matmul(&self.weight.transpose())?;
        for (i, s) in self.obs_std.iter().enumerate() {
            cov.set(i, i, cov.get(i, i) + s * s);
        }
        FullGaussian::new(mean, cov)
    }

    pub fn exact_log_marginal(&self, x: &[f64]) -> Result<f64> {
        self.marginal()?.log_prob(x)
    }
}
