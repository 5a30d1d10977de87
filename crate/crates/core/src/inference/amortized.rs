//! Direct and iterative amortized inference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{elbo_objective, weighted_errors, GradEstimator};
use super::{InferenceTrace, PosteriorEstimate};
use crate::error::{check_len, Error, Result};
use crate::models::GenerativeModel;
use crate::nn::{Activation, Adam, Mlp};
use crate::tensor::{norm_inf, Rng};

/// What an iterative network sees besides the current λ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IterativeMode {
    /// `∇_λ 𝓛` at the current λ.
    Gradient,
    /// Weighted errors `ξ_x`, `ξ_z` at the current means.
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InferenceNet {
    /// `λ = net(x)`.
    Direct { net: Mlp, dims: Vec<usize> },
    /// `λ ← λ + net(λ, ∇_λ 𝓛)` or `λ ← λ + net(λ, ξ_x, ξ_z)`.
    Iterative { net: Mlp, mode: IterativeMode, dims: Vec<usize> },
    /// `λ ← λ + step · ∇_λ 𝓛`, no learned parameters.
    Plain { step: f64 },
}

fn lambda_dim(dims: &[usize]) -> usize {
    2 * dims.iter().sum::<usize>()
}

impl InferenceNet {
    /// Two tanh hidden layers of width `hidden`, linear output of size `2 Σ K`.
    pub fn direct(obs_dim: usize, dims: &[usize], hidden: usize, rng: &mut Rng) -> Result<Self> {
        let net = Mlp::random(
            &[obs_dim, hidden, hidden, lambda_dim(dims)],
            &[Activation::Tanh, Activation::Tanh, Activation::Identity],
            rng,
        )?;
        Ok(InferenceNet::Direct { net, dims: dims.to_vec() })
    }

    /// Same body as [`Self::direct`]; the output layer starts at zero so
    /// the initial update is the identity.
    pub fn iterative(
        obs_dim: usize,
        dims: &[usize],
        hidden: usize,
        mode: IterativeMode,
        rng: &mut Rng,
    ) -> Result<Self> {
        let lam = lambda_dim(dims);
        let input = match mode {
            IterativeMode::Gradient => 2 * lam,
            IterativeMode::Error => lam + obs_dim + dims.iter().sum::<usize>(),
        };
        let mut net = Mlp::random(
            &[input, hidden, hidden, lam],
            &[Activation::Tanh, Activation::Tanh, Activation::Identity],
            rng,
        )?;
        let last = net.layers_mut().last_mut().expect("three layers");
        last.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
        Ok(InferenceNet::Iterative { net, mode, dims: dims.to_vec() })
    }

    pub fn mlp(&self) -> Option<&Mlp> {
        match self {
            InferenceNet::Direct { net, .. } | InferenceNet::Iterative { net, .. } => Some(net),
            InferenceNet::Plain { .. } => None,
        }
    }

    pub fn mlp_mut(&mut self) -> Option<&mut Mlp> {
        match self {
            InferenceNet::Direct { net, .. } | InferenceNet::Iterative { net, .. } => Some(net),
            InferenceNet::Plain { .. } => None,
        }
    }

    fn check_dims(&self, model: &GenerativeModel) -> Result<()> {
        match self {
            InferenceNet::Direct { net, dims } => {
                check_len("direct net input", net.input_dim(), model.obs_dim())?;
                check_dims(dims, model)
            }
            InferenceNet::Iterative { dims, .. } => check_dims(dims, model),
            InferenceNet::Plain { step } if !(*step > 0.0) => {
                Err(Error::InvalidArgument(format!("plain step must be positive, got {step}")))
            }
            InferenceNet::Plain { .. } => Ok(()),
        }
    }
}

fn check_dims(dims: &[usize], model: &GenerativeModel) -> Result<()> {
    if dims != model.latent_dims() {
        return Err(Error::DimensionMismatch(format!(
            "inference net built for latent dims {dims:?}, model has {:?}",
            model.latent_dims()
        )));
    }
    Ok(())
}

/// One forward pass of a direct network.
pub fn direct_infer(net: &InferenceNet, x: &[f64]) -> Result<PosteriorEstimate> {
    match net {
        InferenceNet::Direct { net, dims } => PosteriorEstimate::from_flat(dims, &net.forward(x)?),
        _ => Err(Error::InvalidArgument("direct_infer needs a direct network".into())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterativeConfig {
    pub n_iters: usize,
    pub estimator: GradEstimator,
    pub beta: f64,
}

/// Runs `cfg.n_iters` updates from `init`. Each trace row holds the ELBO
/// estimate and gradient norm at the iterate an update started from, and
/// the updated λ.
pub fn iterative_infer(
    net: &InferenceNet,
    model: &GenerativeModel,
    x: &[f64],
    init: &PosteriorEstimate,
    cfg: &IterativeConfig,
    rng: &mut Rng,
) -> Result<(PosteriorEstimate, InferenceTrace)> {
    if cfg.n_iters == 0 {
        return Err(Error::InvalidArgument("n_iters must be at least 1".into()));
    }
    if matches!(net, InferenceNet::Direct { .. }) {
        return Err(Error::InvalidArgument("iterative_infer needs an iterative or plain network".into()));
    }
    net.check_dims(model)?;
    let dims = model.latent_dims();
    let mut q = init.clone();
    let mut trace = InferenceTrace::default();
    for _ in 0..cfg.n_iters {
        let mode = cfg.estimator.mode(&dims, rng);
        let (e, g) = elbo_objective(model, &q, x, cfg.beta, &mode, None)?;
        let lam = q.to_flat();
        let g = g.to_flat();
        let next: Vec<f64> = match net {
            InferenceNet::Plain { step } => lam.iter().zip(&g).map(|(l, g)| l + step * g).collect(),
            InferenceNet::Iterative { net, mode, .. } => {
                let input = net_input(*mode, model, x, &q, &lam, &g)?;
                lam.iter().zip(net.forward(&input)?).map(|(l, d)| l + d).collect()
            }
            InferenceNet::Direct { .. } => unreachable!("rejected above"),
        };
        q = PosteriorEstimate::from_flat(&dims, &next)?;
        trace.push(e.elbo, norm_inf(&g), next);
    }
    Ok((q, trace))
}

fn net_input(
    mode: IterativeMode,
    model: &GenerativeModel,
    x: &[f64],
    q: &PosteriorEstimate,
    lam: &[f64],
    grad: &[f64],
) -> Result<Vec<f64>> {
    let mut input = lam.to_vec();
    match mode {
        IterativeMode::Gradient => input.extend_from_slice(grad),
        IterativeMode::Error => input.extend(weighted_errors(model, x, &q.means())?.to_flat()),
    }
    Ok(input)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learn_rate: f64,
    pub estimator: GradEstimator,
    pub beta: f64,
    /// Unrolled updates per datum when training an iterative network.
    pub n_iters: usize,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if !(self.learn_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!("learn_rate must be non-negative, got {}", self.learn_rate)));
        }
        Ok(())
    }
}

/// Trains a direct network by Adam ascent on the batch-mean ELBO of
/// `λ = net(x)`. Returns the mean training ELBO of each epoch.
pub fn train_direct(
    net: &mut InferenceNet,
    model: &GenerativeModel,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if !matches!(net, InferenceNet::Direct { .. }) {
        return Err(Error::InvalidArgument("train_direct needs a direct network".into()));
    }
    net.check_dims(model)?;
    train(net, data, cfg, rng, |net, x, r| {
        let InferenceNet::Direct { net, dims } = net else { unreachable!() };
        let q = PosteriorEstimate::from_flat(dims, &net.forward(x)?)?;
        let mode = cfg.estimator.mode(dims, r);
        let (e, g) = elbo_objective(model, &q, x, cfg.beta, &mode, None)?;
        Ok((net.backward(x, &g.to_flat())?.flat_params(), e.elbo))
    })
}

/// Trains an iterative network by unrolling `cfg.n_iters` updates from the
/// standard posterior and ascending the summed ELBO of all iterates. Inputs
/// to each update are treated as constants. Returns the mean ELBO of the
/// final iterate per epoch.
pub fn train_iterative(
    net: &mut InferenceNet,
    model: &GenerativeModel,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if !matches!(net, InferenceNet::Iterative { .. }) {
        return Err(Error::InvalidArgument("train_iterative needs an iterative network".into()));
    }
    if cfg.n_iters == 0 {
        return Err(Error::InvalidArgument("n_iters must be at least 1".into()));
    }
    net.check_dims(model)?;
    train(net, data, cfg, rng, |net, x, r| {
        let InferenceNet::Iterative { net, mode, dims } = net else { unreachable!() };
        let mut q = PosteriorEstimate::standard(dims);
        let mut grad = vec![0.0; net.num_params()];
        let mut g = match mode {
            IterativeMode::Gradient => {
                let m = cfg.estimator.mode(dims, r);
                elbo_objective(model, &q, x, cfg.beta, &m, None)?.1.to_flat()
            }
            IterativeMode::Error => Vec::new(),
        };
        let mut last = 0.0;
        for _ in 0..cfg.n_iters {
            let lam = q.to_flat();
            let input = net_input(*mode, model, x, &q, &lam, &g)?;
            let next: Vec<f64> = lam.iter().zip(net.forward(&input)?).map(|(l, d)| l + d).collect();
            q = PosteriorEstimate::from_flat(dims, &next)?;
            let m = cfg.estimator.mode(dims, r);
            let (e, gq) = elbo_objective(model, &q, x, cfg.beta, &m, None)?;
            g = gq.to_flat();
            let gb = net.backward(&input, &g)?.flat_params();
            grad.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
            last = e.elbo;
        }
        Ok((grad, last))
    })
}

fn train(
    net: &mut InferenceNet,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut Rng,
    per_datum: impl Fn(&InferenceNet, &[f64], &mut Rng) -> Result<(Vec<f64>, f64)> + Sync,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }
    let n_params = net.mlp().expect("learned network").num_params();
    let mut adam = Adam::new(n_params, cfg.learn_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let base = Rng::new(rng.next_u64());
            let shared: &InferenceNet = net;
            let results: Vec<Result<(Vec<f64>, f64)>> = batch
                .par_iter()
                .enumerate()
                .map(|(i, &idx)| per_datum(shared, &data[idx], &mut base.child(i as u64)))
                .collect();
            let mut grad = vec![0.0; n_params];
            let scale = 1.0 / batch.len() as f64;
            for r in results {
                let (g, e) = r?;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += scale * b);
                epoch_total += e;
            }
            let mlp = net.mlp_mut().expect("learned network");
            let mut params = mlp.params();
            adam.ascend(&mut params, &grad);
            mlp.set_params(&params)?;
        }
        let mean = epoch_total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged(format!("training ELBO became {mean}")));
        }
        curve.push(mean);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::objective::ElboMode;
    use crate::models::LinearGaussianModel;

    fn unit() -> GenerativeModel {
        LinearGaussianModel::unit().into()
    }

    fn analytic(n_iters: usize) -> IterativeConfig {
        IterativeConfig { n_iters, estimator: GradEstimator::Analytic, beta: 1.0 }
    }

    #[test]
    fn zero_weight_direct_net_outputs_bias() {
        let mut rng = Rng::new(50);
        let mut net = InferenceNet::direct(3, &[2, 1], 8, &mut rng).unwrap();
        let mlp = net.mlp_mut().unwrap();
        assert_eq!(mlp.output_dim(), 6);
        let last = mlp.layers_mut().last_mut().unwrap();
        last.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        last.bias = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let q = direct_infer(&net, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(q.to_flat(), vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(direct_infer(&net, &[1.0, -2.0, 0.5]).unwrap(), q);
        assert!(direct_infer(&net, &[1.0]).is_err());
    }

    #[test]
    fn plain_single_step() {
        let net = InferenceNet::Plain { step: 0.1 };
        let init = PosteriorEstimate::standard(&[1]);
        let (q, trace) = iterative_infer(&net, &unit(), &[1.0], &init, &analytic(1), &mut Rng::new(0)).unwrap();
        assert!((q.levels[0].mean[0] - 0.1).abs() < 1e-15);
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn plain_matches_hand_rolled_loop_bit_exactly() {
        let mut rng = Rng::new(51);
        let model: GenerativeModel = LinearGaussianModel::random(2, 3, &mut rng).into();
        let x = [0.4, -0.3, 1.1];
        let init = PosteriorEstimate::standard(&[2]);
        let net = InferenceNet::Plain { step: 0.02 };
        let (q, trace) = iterative_infer(&net, &model, &x, &init, &analytic(50), &mut rng).unwrap();

        let mut lam = init.to_flat();
        let mut objectives = Vec::new();
        for _ in 0..50 {
            let qq = PosteriorEstimate::from_flat(&[2], &lam).unwrap();
            let (e, g) = elbo_objective(&model, &qq, &x, 1.0, &ElboMode::Analytic, None).unwrap();
            objectives.push(e.elbo);
            lam = lam.iter().zip(g.to_flat()).map(|(l, g)| l + 0.02 * g).collect();
        }
        assert_eq!(q.to_flat(), lam);
        assert_eq!(trace.objective, objectives);
        assert_eq!(trace.snapshots.last().unwrap(), &lam);
    }

    #[test]
    fn plain_converges_on_unit_model() {
        let net = InferenceNet::Plain { step: 0.1 };
        let init = PosteriorEstimate::standard(&[1]);
        let (q, _) = iterative_infer(&net, &unit(), &[1.0], &init, &analytic(500), &mut Rng::new(0)).unwrap();
        assert!((q.levels[0].mean[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn fresh_iterative_net_is_identity() {
        let mut rng = Rng::new(52);
        for mode in [IterativeMode::Gradient, IterativeMode::Error] {
            let net = InferenceNet::iterative(1, &[1], 8, mode, &mut rng).unwrap();
            let init = PosteriorEstimate::standard(&[1]);
            let (q, trace) = iterative_infer(&net, &unit(), &[1.0], &init, &analytic(3), &mut rng).unwrap();
            assert_eq!(q, init);
            assert_eq!(trace.len(), 3);
        }
    }

    #[test]
    fn direct_training_improves_elbo() {
        let mut rng = Rng::new(53);
        let model = unit();
        let data: Vec<Vec<f64>> = (0..128).map(|_| model.sample_joint(&mut rng).unwrap().observation).collect();
        let mut net = InferenceNet::direct(1, &[1], 8, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 32,
            learn_rate: 0.01,
            estimator: GradEstimator::Analytic,
            beta: 1.0,
            n_iters: 1,
        };
        let curve = train_direct(&mut net, &model, &data, &cfg, &mut rng).unwrap();
        assert!(curve.last().unwrap() > &curve[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let model = unit();
        let run = || {
            let mut rng = Rng::new(54);
            let data: Vec<Vec<f64>> = (0..40).map(|_| model.sample_joint(&mut rng).unwrap().observation).collect();
            let mut net = InferenceNet::iterative(1, &[1], 4, IterativeMode::Error, &mut rng).unwrap();
            let cfg = TrainConfig {
                epochs: 3,
                batch_size: 8,
                learn_rate: 0.01,
                estimator: GradEstimator::Sampled { n: 1 },
                beta: 1.0,
                n_iters: 2,
            };
            let curve = train_iterative(&mut net, &model, &data, &cfg, &mut rng).unwrap();
            (curve, net)
        };
        assert_eq!(run(), run());
    }
}
