//! Experiment pipelines behind the CLI sub-commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{Command, DataSpec, EngineKind, ExperimentConfig, InferenceSpec, ModelSpec, WhiteningMethod};
use super::data::{gen_ar1, gen_deep_dataset, gen_linear_dataset, gen_moving_square_video, load_patches, Dataset};
use super::pgm::{center_surround_fraction, render_filter_grid};
use crate::checkpoint::Checkpoint;
use crate::distributions::DiagGaussian;
use crate::error::{Error, Result};
use crate::flows::{fit_cholesky_whitening, fit_zca};
use crate::inference::{
    direct_infer, elbo_objective, fit_em, iterative_infer, pc_inference, pc_variational, train_direct, train_iterative,
    ElboEstimate, ElboMode, EmConfig, Engine, InferenceNet, InferenceTrace, IterativeConfig, PosteriorEstimate,
    TrainConfig,
};
use crate::models::{DeepLatentModel, GenerativeModel, LinearGaussianModel, Link};
use crate::tensor::{norm_inf, read_tensor_file, write_tensor_file, Rng, Tensor};

/// Files written by a run, relative to its output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
}

/// Training split, held-out split, and the generating model when known.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub truth: Option<GenerativeModel>,
}

/// Loads and validates `config_path`, then runs `command`. Configuration
/// problems are reported before anything is written.
pub fn run_experiment(
    command: Command,
    config_path: &Path,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
) -> Result<RunReport> {
    let cfg = ExperimentConfig::load(config_path, seed, out_dir)?;
    run_config(command, &cfg)
}

/// Validates `cfg`, then runs `command`. A failed run removes the files it
/// wrote, and the output directory if the run created it.
pub fn run_config(command: Command, cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate(command)?;
    let out = cfg.out_dir.clone().expect("validated");
    let created = !out.exists();
    fs::create_dir_all(&out)?;
    let mut run = Run { out: out.clone(), files: Vec::new() };
    let result = execute(command, cfg, &mut run);
    if let Err(e) = result {
        for f in &run.files {
            let _ = fs::remove_file(out.join(f));
        }
        if created {
            let _ = fs::remove_dir(&out);
        }
        return Err(e);
    }
    Ok(RunReport { out_dir: out, files: run.files })
}

fn execute(command: Command, cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    run.write("config.json", serde_json::to_string_pretty(cfg)? + "\n")?;
    match command {
        Command::GenData => gen_data(cfg, run),
        Command::Train => train(cfg, run),
        Command::Infer => infer(cfg, run),
        Command::EvalElbo => eval_elbo(cfg, run),
        Command::Whiten => whiten(cfg, run),
        Command::CompareInference => compare(cfg, run),
    }
}

struct Run {
    out: PathBuf,
    files: Vec<String>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.out.join(name)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(p, contents)?;
        Ok(())
    }
}

/// Per-purpose child streams of the experiment seed.
mod streams {
    pub const MODEL_INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const NET_INIT: u64 = 4;
    pub const INFER: u64 = 5;
}

pub fn load_data(spec: &DataSpec, seed: u64) -> Result<LoadedData> {
    let split = |ds: Dataset, test_n: usize, truth: Option<GenerativeModel>| -> Result<LoadedData> {
        if test_n >= ds.len() {
            return Err(Error::ConfigInvalid(format!("test_n {test_n} leaves no training rows")));
        }
        let (train, test) = ds.split(ds.len() - test_n)?;
        Ok(LoadedData { train, test, truth })
    };
    let none = |ds: Dataset| split(ds, 0, None);
    match spec {
        DataSpec::Linear { latent_dim, obs_dim, n, test_n } => {
            let (ds, truth) = gen_linear_dataset(*latent_dim, *obs_dim, n + test_n, seed)?;
            split(ds, *test_n, Some(truth.into()))
        }
        DataSpec::Deep { latent_dims, obs_dim, hidden, obs_std, n, test_n } => {
            let (ds, truth) = gen_deep_dataset(latent_dims, *obs_dim, *hidden, *obs_std, n + test_n, seed)?;
            split(ds, *test_n, Some(truth.into()))
        }
        DataSpec::Patches { images, patch, count, remove_mean } => {
            none(load_patches(images, *patch, *count, seed, *remove_mean)?)
        }
        DataSpec::MovingSquare { frames, height, width, size, velocity } => {
            none(gen_moving_square_video(*frames, *height, *width, *size, (velocity[0], velocity[1]), seed)?)
        }
        DataSpec::Ar1 { frames, dim, rho } => none(gen_ar1(*frames, *dim, *rho, seed)?),
        DataSpec::File { path, test_n } => {
            let t = read_tensor_file(path)?;
            split(Dataset::new(t, format!("file {}", path.display()))?, *test_n, None)
        }
    }
}

pub fn build_model(cfg: &ExperimentConfig, data: &LoadedData) -> Result<GenerativeModel> {
    let mut rng = Rng::new(cfg.seed).child(streams::MODEL_INIT);
    let model = match &cfg.model {
        None | Some(ModelSpec::Truth) => {
            data.truth.clone().ok_or_else(|| Error::ConfigInvalid("data source has no ground truth".into()))?
        }
        Some(ModelSpec::Linear { latent_dim, obs_dim, link }) => {
            let mut m = LinearGaussianModel::random(*latent_dim, *obs_dim, &mut rng);
            m.link = *link;
            m.into()
        }
        Some(ModelSpec::Deep { latent_dims, obs_dim, hidden, obs_std }) => {
            DeepLatentModel::random(latent_dims, *obs_dim, *hidden, *obs_std, &mut rng)?.into()
        }
        Some(ModelSpec::Checkpoint { path }) => GenerativeModel::try_from(&Checkpoint::load(path)?)?,
    };
    if model.obs_dim() != data.train.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model observes {} dims, data has {}",
            model.obs_dim(),
            data.train.dim()
        )));
    }
    Ok(model)
}

fn analytic_ok(model: &GenerativeModel) -> bool {
    matches!(model, GenerativeModel::Linear(m) if m.link == Link::Identity)
}

fn net_train_config(spec: &InferenceSpec, model: &GenerativeModel, beta: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: spec.net_batch_size,
        learn_rate: spec.net_learn_rate,
        estimator: spec.estimator(analytic_ok(model)),
        beta,
        n_iters: spec.iters,
    }
}

/// Fresh amortized network for `kind` (direct or iterative).
pub fn new_net(spec: &InferenceSpec, kind: EngineKind, model: &GenerativeModel, rng: &mut Rng) -> Result<InferenceNet> {
    let dims = model.latent_dims();
    match kind {
        EngineKind::Direct => InferenceNet::direct(model.obs_dim(), &dims, spec.hidden, rng),
        EngineKind::Iterative => InferenceNet::iterative(model.obs_dim(), &dims, spec.hidden, spec.mode, rng),
        _ => Err(Error::InvalidArgument("not an amortized engine".into())),
    }
}

/// Trains `net` for `epochs` against `model`.
pub fn train_net(
    net: &mut InferenceNet,
    spec: &InferenceSpec,
    model: &GenerativeModel,
    data: &[Vec<f64>],
    beta: f64,
    epochs: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let tc = net_train_config(spec, model, beta, epochs);
    match net {
        InferenceNet::Direct { .. } => train_direct(net, model, data, &tc, rng),
        _ => train_iterative(net, model, data, &tc, rng),
    }
}

fn engine_for(spec: &InferenceSpec, model: &GenerativeModel, net: Option<&InferenceNet>) -> Engine {
    let estimator = spec.estimator(analytic_ok(model));
    match spec.engine {
        EngineKind::Map => Engine::Map(spec.pc_config()),
        EngineKind::Variational => {
            Engine::Variational { config: spec.pc_config(), estimator, learn_std: spec.learn_std }
        }
        EngineKind::Plain => {
            Engine::Amortized { net: InferenceNet::Plain { step: spec.step }, n_iters: spec.iters, estimator }
        }
        EngineKind::Direct | EngineKind::Iterative => Engine::Amortized {
            net: net.expect("amortized engines carry a network").clone(),
            n_iters: spec.iters,
            estimator,
        },
    }
}

/// Posterior for one datum plus the engine's trace (empty for direct nets).
pub fn infer_one(
    engine: &Engine,
    model: &GenerativeModel,
    x: &[f64],
    beta: f64,
    rng: &mut Rng,
) -> Result<(PosteriorEstimate, InferenceTrace)> {
    let dims = model.latent_dims();
    match engine {
        Engine::Map(cfg) => {
            let init: Vec<Vec<f64>> = dims.iter().map(|d| vec![0.0; *d]).collect();
            let (z, trace) = pc_inference(model, x, &init, cfg)?;
            Ok((PosteriorEstimate::point(&z), trace))
        }
        Engine::Variational { config, estimator, learn_std } => {
            let mode = estimator.mode(&dims, rng);
            pc_variational(model, x, &PosteriorEstimate::standard(&dims), &mode, beta, *learn_std, config)
        }
        Engine::Amortized { net: net @ InferenceNet::Direct { .. }, .. } => {
            Ok((direct_infer(net, x)?, InferenceTrace::default()))
        }
        Engine::Amortized { net, n_iters, estimator } => {
            let cfg = IterativeConfig { n_iters: *n_iters, estimator: *estimator, beta };
            iterative_infer(net, model, x, &PosteriorEstimate::standard(&dims), &cfg, rng)
        }
    }
}

/// ELBO of `q` for the evaluation protocol: analytic for identity-link
/// linear models, otherwise `n` reparameterized samples drawn from `rng`.
/// Callers pass the same stream per datum to every engine so comparisons
/// use common random numbers.
pub fn evaluate_elbo(
    model: &GenerativeModel,
    q: &PosteriorEstimate,
    x: &[f64],
    beta: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<(ElboEstimate, f64)> {
    let mode = if analytic_ok(model) { ElboMode::Analytic } else { ElboMode::sample(n, &model.latent_dims(), rng) };
    let (e, g) = elbo_objective(model, q, x, beta, &mode, None)?;
    Ok((e, norm_inf(&g.to_flat())))
}

fn csv_row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

fn gen_data(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let data = load_data(&cfg.data, cfg.seed)?;
    write_tensor_file(run.path("data.pftensor"), &data.train.data)?;
    if !data.test.is_empty() {
        write_tensor_file(run.path("test.pftensor"), &data.test.data)?;
    }
    if let Some(t) = &data.truth {
        Checkpoint::from(t).save(run.path("truth.ckpt"))?;
    }
    let mut csv = String::from("split,rows,cols,mean,variance\n");
    for (name, ds) in [("train", &data.train), ("test", &data.test)] {
        if ds.is_empty() {
            continue;
        }
        let n = ds.data.len() as f64;
        let mean = ds.data.data().iter().sum::<f64>() / n;
        let var = ds.data.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        csv_row(
            &mut csv,
            &[name.into(), ds.len().to_string(), ds.dim().to_string(), mean.to_string(), var.to_string()],
        );
    }
    run.write("metrics.csv", csv)
}

fn train(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let data = load_data(&cfg.data, cfg.seed)?;
    let mut model = build_model(cfg, &data)?;
    let root = Rng::new(cfg.seed);
    let mut rng = root.child(streams::TRAIN);
    let spec = &cfg.inference;
    let t = &cfg.training;
    let rows = data.train.rows();
    let em = EmConfig {
        learn_rate: t.learn_rate,
        beta: t.beta,
        rule: t.rule,
        estimator: spec.estimator(analytic_ok(&model)),
    };

    let mut net = match spec.engine {
        EngineKind::Direct | EngineKind::Iterative => {
            Some(new_net(spec, spec.engine, &model, &mut root.child(streams::NET_INIT))?)
        }
        _ => None,
    };
    let mut csv = String::from("step,elbo,recon,kl,grad_norm\n");
    let mut step = 0;
    for _ in 0..t.epochs {
        if let Some(n) = net.as_mut() {
            train_net(n, spec, &model, &rows, t.beta, 1, &mut rng)?;
        }
        let engine = engine_for(spec, &model, net.as_ref());
        let (next, metrics) = fit_em(&model, &engine, &rows, &em, 1, t.batch_size, &mut rng)?;
        model = next;
        for m in metrics {
            csv_row(
                &mut csv,
                &[
                    step.to_string(),
                    m.elbo_before.to_string(),
                    m.recon.to_string(),
                    m.kl.to_string(),
                    m.grad_norm.to_string(),
                ],
            );
            step += 1;
        }
    }
    run.write("metrics.csv", csv)?;
    Checkpoint::from(&model).save(run.path("model.ckpt"))?;
    if let Some(n) = &net {
        Checkpoint::from(n).save(run.path("inference_net.ckpt"))?;
    }
    if !data.test.is_empty() {
        let test = data.test.rows();
        let mut held = String::from("model,mean_log_marginal\n");
        let mut models = vec![("learned", &model)];
        if let Some(truth) = &data.truth {
            models.push(("truth", truth));
        }
        for (name, m) in models {
            let value = match m {
                GenerativeModel::Linear(l) if l.link == Link::Identity => {
                    let total: f64 = test.iter().map(|x| l.exact_log_marginal(x)).sum::<Result<f64>>()?;
                    (total / test.len() as f64).to_string()
                }
                _ => String::new(),
            };
            csv_row(&mut held, &[name.into(), value]);
        }
        run.write("heldout.csv", held)?;
    }
    Ok(())
}

/// Posteriors, traces and ELBOs for every row, in row order.
fn infer_all(
    engine: &Engine,
    model: &GenerativeModel,
    xs: &[Vec<f64>],
    beta: f64,
    eval_samples: usize,
    root: &Rng,
) -> Result<Vec<(PosteriorEstimate, InferenceTrace, ElboEstimate, f64)>> {
    let infer_base = root.child(streams::INFER);
    let eval_base = root.child(streams::EVAL);
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let (q, trace) = infer_one(engine, model, x, beta, &mut infer_base.child(i as u64))?;
            let (e, g) = evaluate_elbo(model, &q, x, beta, eval_samples, &mut eval_base.child(i as u64))?;
            Ok((q, trace, e, g))
        })
        .collect()
}

fn prepared_engine(cfg: &ExperimentConfig, model: &GenerativeModel, data: &LoadedData) -> Result<Engine> {
    let spec = &cfg.inference;
    let net = match spec.engine {
        EngineKind::Direct | EngineKind::Iterative => {
            let root = Rng::new(cfg.seed);
            let mut net = new_net(spec, spec.engine, model, &mut root.child(streams::NET_INIT))?;
            train_net(
                &mut net,
                spec,
                model,
                &data.train.rows(),
                cfg.training.beta,
                spec.net_epochs,
                &mut root.child(streams::TRAIN),
            )?;
            Some(net)
        }
        _ => None,
    };
    Ok(engine_for(spec, model, net.as_ref()))
}

fn infer(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let data = load_data(&cfg.data, cfg.seed)?;
    let model = build_model(cfg, &data)?;
    let engine = prepared_engine(cfg, &model, &data)?;
    let xs = data.train.rows();
    let results = infer_all(&engine, &model, &xs, cfg.training.beta, cfg.evaluation.n_samples, &Rng::new(cfg.seed))?;

    let mut csv = String::from("step,elbo,recon,kl,grad_norm\n");
    let mut lambdas = Vec::new();
    let mut traces = String::new();
    for (i, (q, trace, e, g)) in results.iter().enumerate() {
        csv_row(&mut csv, &[i.to_string(), e.elbo.to_string(), e.recon.to_string(), e.kl.to_string(), g.to_string()]);
        lambdas.extend(q.to_flat());
        if i < cfg.inference.trace_limit {
            for line in trace.to_json_lines().lines() {
                let mut v: serde_json::Value = serde_json::from_str(line)?;
                v["datum"] = i.into();
                writeln!(traces, "{v}").expect("writing to a String");
            }
        }
    }
    let width = 2 * model.latent_dims().iter().sum::<usize>();
    write_tensor_file(run.path("posterior.pftensor"), &Tensor::matrix(xs.len(), width, lambdas)?)?;
    run.write("traces.jsonl", traces)?;
    run.write("metrics.csv", csv)
}

fn eval_elbo(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let data = load_data(&cfg.data, cfg.seed)?;
    let model = build_model(cfg, &data)?;
    let engine = prepared_engine(cfg, &model, &data)?;
    let mut csv = String::from("split,mean_elbo,mean_recon,mean_kl,mean_log_marginal\n");
    for (name, ds) in [("train", &data.train), ("test", &data.test)] {
        if ds.is_empty() {
            continue;
        }
        let xs = ds.rows();
        let results =
            infer_all(&engine, &model, &xs, cfg.training.beta, cfg.evaluation.n_samples, &Rng::new(cfg.seed))?;
        let n = xs.len() as f64;
        let mean = |f: &dyn Fn(&ElboEstimate) -> f64| results.iter().map(|r| f(&r.2)).sum::<f64>() / n;
        let lm = match &model {
            GenerativeModel::Linear(l) if l.link == Link::Identity => {
                (xs.iter().map(|x| l.exact_log_marginal(x)).sum::<Result<f64>>()? / n).to_string()
            }
            _ => String::new(),
        };
        csv_row(
            &mut csv,
            &[
                name.into(),
                mean(&|e| e.elbo).to_string(),
                mean(&|e| e.recon).to_string(),
                mean(&|e| e.kl).to_string(),
                lm,
            ],
        );
    }
    run.write("metrics.csv", csv)
}

/// Summary numbers of a whitening fit.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningReport {
    pub max_cov_error: f64,
    pub symmetry_error: f64,
    /// Largest entry above the diagonal of the whitening matrix.
    pub upper_max_abs: f64,
    pub center_surround: Option<f64>,
}

fn whiten(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let data = load_data(&cfg.data, cfg.seed)?;
    let x = &data.train.data;
    let m = x.cols();
    let flow = match cfg.whitening.method {
        WhiteningMethod::Zca => fit_zca(x)?,
        WhiteningMethod::Cholesky => fit_cholesky_whitening(x)?,
    };
    let tile = match cfg.whitening.tile {
        Some([h, w]) => (h, w),
        None => {
            let s = (m as f64).sqrt().round() as usize;
            if s * s == m {
                (s, s)
            } else {
                (1, m)
            }
        }
    };
    let report = whitening_report(&flow, x, tile)?;
    let mut csv =
        String::from("method,dim,samples,max_cov_error,symmetry_error,upper_max_abs,center_surround_fraction\n");
    let method = match cfg.whitening.method {
        WhiteningMethod::Zca => "zca",
        WhiteningMethod::Cholesky => "cholesky",
    };
    csv_row(
        &mut csv,
        &[
            method.into(),
            m.to_string(),
            x.rows().to_string(),
            report.max_cov_error.to_string(),
            report.symmetry_error.to_string(),
            report.upper_max_abs.to_string(),
            report.center_surround.map(|v| v.to_string()).unwrap_or_default(),
        ],
    );
    run.write("metrics.csv", csv)?;
    Checkpoint::from(&flow).save(run.path("whitening.ckpt"))?;
    if cfg.whitening.filter_grid {
        let img = render_filter_grid(flow.inverse_scale(), tile)?;
        img.write(run.path("filters.pgm"))?;
    }
    Ok(())
}

/// Covariance of the whitened data against the identity, plus structure
/// checks on the whitening matrix.
pub fn whitening_report(
    flow: &crate::flows::ConstantAffine,
    x: &Tensor,
    tile: (usize, usize),
) -> Result<WhiteningReport> {
    let rows: Vec<Vec<f64>> = (0..x.rows()).map(|i| Ok(flow.inverse(x.row(i))?.0)).collect::<Result<_>>()?;
    let (_, cov) = Tensor::from_rows(&rows)?.sample_moments()?;
    let m = x.cols();
    let max_cov_error = cov.max_abs_diff(&Tensor::identity(m));
    let w = flow.inverse_scale();
    let symmetry_error = w.max_abs_diff(&w.transpose());
    let mut upper_max_abs: f64 = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            upper_max_abs = upper_max_abs.max(w.get(i, j).abs());
        }
    }
    let center_surround = if tile.0 >= 3 && tile.1 >= 3 { Some(center_surround_fraction(w, tile)?) } else { None };
    Ok(WhiteningReport { max_cov_error, symmetry_error, upper_max_abs, center_surround })
}

/// Mean held-out ELBO per inference approach.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// `(engine, mean ELBO)` in output order.
    pub rows: Vec<(String, f64)>,
    /// Row every other row is compared against: `oracle` for
    /// identity-link linear models, otherwise `pc`.
    pub reference: String,
}

impl Comparison {
    pub fn get(&self, engine: &str) -> Option<f64> {
        self.rows.iter().find(|(n, _)| n == engine).map(|(_, v)| *v)
    }

    pub fn to_csv(&self) -> String {
        let r = self.get(&self.reference).expect("reference row");
        let mut csv = String::from("engine,mean_elbo,diff_to_reference\n");
        for (name, v) in &self.rows {
            csv_row(&mut csv, &[name.clone(), v.to_string(), (v - r).to_string()]);
        }
        if let (Some(it), Some(d)) = (self.get("iterative"), self.get("direct")) {
            csv_row(&mut csv, &["iterative_minus_direct".into(), (it - d).to_string(), String::new()]);
        }
        csv
    }
}

/// Trains direct and iterative networks on `train`, then scores every
/// approach on `test` with common evaluation noise per datum.
///
/// Rows: `log_marginal` and `oracle` (the best diagonal Gaussian: exact
/// posterior mean, variances `1 / diag(Λ)`) for identity-link linear
/// models, then `pc` (ELBO ascent over λ), `iterative`, `direct`.
pub fn compare_inference(
    model: &GenerativeModel,
    train: &[Vec<f64>],
    test: &[Vec<f64>],
    spec: &InferenceSpec,
    beta: f64,
    eval_samples: usize,
    seed: u64,
) -> Result<Comparison> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("no test data".into()));
    }
    let root = Rng::new(seed);
    let eval_base = root.child(streams::EVAL);
    let infer_base = root.child(streams::INFER);
    let n = test.len() as f64;
    let score = |q_of: &(dyn Fn(usize, &[f64]) -> Result<PosteriorEstimate> + Sync)| -> Result<f64> {
        let vals: Vec<Result<f64>> = test
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let q = q_of(i, x)?;
                Ok(evaluate_elbo(model, &q, x, beta, eval_samples, &mut eval_base.child(i as u64))?.0.elbo)
            })
            .collect();
        Ok(vals.into_iter().sum::<Result<f64>>()? / n)
    };

    let mut rows = Vec::new();
    let reference;
    if let (GenerativeModel::Linear(l), true) = (model, analytic_ok(model)) {
        let lm: f64 = test.iter().map(|x| l.exact_log_marginal(x)).sum::<Result<f64>>()? / n;
        rows.push(("log_marginal".to_string(), lm));
        let precision = l.posterior_precision()?;
        let log_std: Vec<f64> = (0..l.latent_dim()).map(|k| -0.5 * precision.get(k, k).ln()).collect();
        let oracle = score(&|_, x| {
            let post = l.exact_posterior(x)?;
            Ok(PosteriorEstimate { levels: vec![DiagGaussian::new(post.mean().to_vec(), log_std.clone())?] })
        })?;
        rows.push(("oracle".to_string(), oracle));
        reference = "oracle".to_string();
    } else {
        reference = "pc".to_string();
    }

    let dims = model.latent_dims();
    let estimator = spec.estimator(analytic_ok(model));
    let pc_cfg = spec.pc_config();
    let pc = score(&|i, x| {
        let mode = estimator.mode(&dims, &mut infer_base.child(i as u64));
        Ok(pc_variational(model, x, &PosteriorEstimate::standard(&dims), &mode, beta, spec.learn_std, &pc_cfg)?.0)
    })?;
    rows.push(("pc".to_string(), pc));

    let mut net_rng = root.child(streams::NET_INIT);
    let mut train_rng = root.child(streams::TRAIN);
    let mut iterative = new_net(spec, EngineKind::Iterative, model, &mut net_rng)?;
    train_net(&mut iterative, spec, model, train, beta, spec.net_epochs, &mut train_rng)?;
    let mut direct = new_net(spec, EngineKind::Direct, model, &mut net_rng)?;
    train_net(&mut direct, spec, model, train, beta, spec.net_epochs, &mut train_rng)?;

    let it_cfg = IterativeConfig { n_iters: spec.iters, estimator, beta };
    let it = score(&|i, x| {
        let init = PosteriorEstimate::standard(&dims);
        Ok(iterative_infer(&iterative, model, x, &init, &it_cfg, &mut infer_base.child(i as u64))?.0)
    })?;
    rows.push(("iterative".to_string(), it));
    let d = score(&|_, x| direct_infer(&direct, x))?;
    rows.push(("direct".to_string(), d));
    Ok(Comparison { rows, reference })
}

fn compare(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let data = load_data(&cfg.data, cfg.seed)?;
    let model = build_model(cfg, &data)?;
    let c = compare_inference(
        &model,
        &data.train.rows(),
        &data.test.rows(),
        &cfg.inference,
        cfg.training.beta,
        cfg.evaluation.n_samples,
        cfg.seed,
    )?;
    run.write("metrics.csv", c.to_csv())?;
    Checkpoint::from(&model).save(run.path("model.ckpt"))
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConfigInvalid(_) => 2,
        _ => 1,
    }
}
