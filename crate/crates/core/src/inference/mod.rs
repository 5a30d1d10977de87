//! Inference engines and learning.
//!
//! All engines work on the same posterior parameterization
//! `λ = (μ_q, log σ_q)` per latent level:
//!
//! - [`pc`]: gradient-based optimization of λ (predictive coding); MAP
//!   inference is the case where only the means move.
//! - [`amortized`]: direct (`λ = f(x)`) and iterative
//!   (`λ ← λ + f(λ, ∇λ)` or `λ ← λ + f(λ, ξ_x, ξ_z)`) inference networks.
//! - [`em`]: variational EM over a batch.

pub mod amortized;
pub mod em;
pub mod objective;
pub mod pc;

pub use amortized::{
    direct_infer, iterative_infer, train_direct, train_iterative, InferenceNet, IterativeConfig, IterativeMode,
    TrainConfig,
};
pub use em::{fit_em, variational_em_step, EmConfig, EmMetrics, Engine, MStepRule};
pub use objective::{
    elbo, elbo_objective, local_weight_gradient, map_gradient, map_objective, weighted_errors, ElboEstimate, ElboMode,
    GradEstimator,
};
pub use pc::{gradient_ascent, pc_inference, pc_variational, PcConfig};

use serde::Serialize;

use crate::distributions::{DiagGaussian, DiagGrad};
use crate::error::{check_len, Error, Result};

/// Per-level diagonal Gaussian approximate posterior, bottom level first.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimate {
    pub levels: Vec<DiagGaussian>,
}

/// Gradient w.r.t. a [`PosteriorEstimate`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrad {
    pub levels: Vec<DiagGrad>,
}

impl PosteriorEstimate {
    /// `μ = 0`, `σ = 1` at every level.
    pub fn standard(dims: &[usize]) -> Self {
        Self { levels: dims.iter().map(|d| DiagGaussian::standard(*d)).collect() }
    }

    /// Point estimate: means `zs`, scales at the minimum standard deviation.
    pub fn point(zs: &[Vec<f64>]) -> Self {
        let floor = crate::distributions::MIN_STD.ln();
        Self { levels: zs.iter().map(|z| DiagGaussian { mean: z.clone(), log_std: vec![floor; z.len()] }).collect() }
    }

    pub fn dims(&self) -> Vec<usize> {
        self.levels.iter().map(DiagGaussian::dim).collect()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.levels.iter().map(|l| l.mean.clone()).collect()
    }

    /// `[μ_1, log σ_1, μ_2, log σ_2, …]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.levels.iter().flat_map(|l| l.mean.iter().chain(&l.log_std).copied()).collect()
    }

    pub fn from_flat(dims: &[usize], flat: &[f64]) -> Result<Self> {
        check_len("flat posterior", flat.len(), 2 * dims.iter().sum::<usize>())?;
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite posterior parameters".into()));
        }
        let mut off = 0;
        let levels = dims
            .iter()
            .map(|&d| {
                let mean = flat[off..off + d].to_vec();
                let log_std = flat[off + d..off + 2 * d].to_vec();
                off += 2 * d;
                DiagGaussian { mean, log_std }
            })
            .collect();
        Ok(Self { levels })
    }
}

impl PosteriorGrad {
    pub fn zeros(dims: &[usize]) -> Self {
        Self { levels: dims.iter().map(|d| DiagGrad::zeros(*d)).collect() }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.levels.iter().flat_map(|l| l.mean.iter().chain(&l.log_std).copied()).collect()
    }
}

/// Observation and per-level latent errors, each divided by its standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedErrors {
    pub obs: Vec<f64>,
    pub latents: Vec<Vec<f64>>,
}

impl WeightedErrors {
    pub fn to_flat(&self) -> Vec<f64> {
        self.obs.iter().chain(self.latents.iter().flatten()).copied().collect()
    }
}

/// One row per executed iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InferenceTrace {
    pub objective: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
}

impl InferenceTrace {
    pub fn len(&self) -> usize {
        self.objective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objective.is_empty()
    }

    pub(crate) fn push(&mut self, objective: f64, grad_norm: f64, snapshot: Vec<f64>) {
        self.objective.push(objective);
        self.grad_norm.push(grad_norm);
        self.snapshots.push(snapshot);
    }

    /// JSON lines: `{"step", "objective", "grad_norm", "lambda"}` per iteration.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for i in 0..self.len() {
            let row = serde_json::json!({
                "step": i,
                "objective": self.objective[i],
                "grad_norm": self.grad_norm[i],
                "lambda": self.snapshots[i],
            });
            out.push_str(&row.to_string());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_layout() {
        let q = PosteriorEstimate {
            levels: vec![
                DiagGaussian::new(vec![1.0, 2.0], vec![0.1, 0.2]).unwrap(),
                DiagGaussian::new(vec![3.0], vec![0.3]).unwrap(),
            ],
        };
        let flat = q.to_flat();
        assert_eq!(flat, vec![1.0, 2.0, 0.1, 0.2, 3.0, 0.3]);
        assert_eq!(PosteriorEstimate::from_flat(&[2, 1], &flat).unwrap(), q);
        assert!(PosteriorEstimate::from_flat(&[2, 2], &flat).is_err());
        assert!(matches!(PosteriorEstimate::from_flat(&[1], &[f64::NAN, 0.0]), Err(Error::Diverged(_))));
    }

    #[test]
    fn trace_json_lines() {
        let mut t = InferenceTrace::default();
        t.push(-1.0, 0.5, vec![0.1]);
        t.push(-0.5, 0.25, vec![0.2]);
        let text = t.to_json_lines();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(v["step"], 1);
        assert_eq!(v["lambda"][0], 0.2);
    }
}
