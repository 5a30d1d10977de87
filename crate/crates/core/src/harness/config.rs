//! Experiment configuration (JSON). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{GradEstimator, IterativeMode, MStepRule, PcConfig};
use crate::models::Link;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub data: DataSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub inference: InferenceSpec,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub whitening: WhiteningSpec,
    #[serde(default)]
    pub evaluation: EvalSpec,
}

fn default_hidden() -> usize {
    16
}

fn default_obs_std() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

fn default_velocity() -> [i64; 2] {
    [0, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Samples from a random linear-Gaussian model; the last `test_n` rows are held out.
    Linear {
        latent_dim: usize,
        obs_dim: usize,
        n: usize,
        #[serde(default)]
        test_n: usize,
    },
    /// Samples from a random deep latent model.
    Deep {
        latent_dims: Vec<usize>,
        obs_dim: usize,
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_obs_std")]
        obs_std: f64,
        n: usize,
        #[serde(default)]
        test_n: usize,
    },
    /// Crops from PGM images; relative paths resolve against the config file.
    Patches {
        images: Vec<PathBuf>,
        patch: usize,
        count: usize,
        #[serde(default = "default_true")]
        remove_mean: bool,
    },
    MovingSquare {
        frames: usize,
        height: usize,
        width: usize,
        size: usize,
        #[serde(default = "default_velocity")]
        velocity: [i64; 2],
    },
    Ar1 {
        frames: usize,
        dim: usize,
        rho: f64,
    },
    /// A rank-2 PFTENSOR file.
    File {
        path: PathBuf,
        #[serde(default)]
        test_n: usize,
    },
}

impl DataSpec {
    /// Row width when it is known without loading anything.
    pub fn static_dim(&self) -> Option<usize> {
        match self {
            DataSpec::Linear { obs_dim, .. } | DataSpec::Deep { obs_dim, .. } => Some(*obs_dim),
            DataSpec::Patches { patch, .. } => Some(patch * patch),
            DataSpec::MovingSquare { height, width, .. } => Some(height * width),
            DataSpec::Ar1 { dim, .. } => Some(*dim),
            DataSpec::File { .. } => None,
        }
    }

    pub fn test_n(&self) -> usize {
        match self {
            DataSpec::Linear { test_n, .. } | DataSpec::Deep { test_n, .. } | DataSpec::File { test_n, .. } => *test_n,
            _ => 0,
        }
    }

    pub fn has_truth(&self) -> bool {
        matches!(self, DataSpec::Linear { .. } | DataSpec::Deep { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Random initialization.
    Linear {
        latent_dim: usize,
        obs_dim: usize,
        #[serde(default)]
        link: Link,
    },
    Deep {
        latent_dims: Vec<usize>,
        obs_dim: usize,
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_obs_std")]
        obs_std: f64,
    },
    /// A model checkpoint written by `train` or `gen-data`.
    Checkpoint { path: PathBuf },
    /// The ground-truth model of a `linear` or `deep` data source.
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Map,
    Variational,
    Direct,
    Iterative,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSpec {
    pub engine: EngineKind,
    pub step: f64,
    pub max_steps: usize,
    pub tol: f64,
    pub backtracking: bool,
    /// Noise samples per ELBO gradient; absent means analytic where possible, else 1.
    pub n_samples: Option<usize>,
    pub learn_std: bool,
    /// Updates per datum for iterative and plain engines.
    pub iters: usize,
    pub mode: IterativeMode,
    pub hidden: usize,
    /// Amortized network training.
    pub net_epochs: usize,
    pub net_batch_size: usize,
    pub net_learn_rate: f64,
    /// Data whose inference traces are written by `infer`.
    pub trace_limit: usize,
}

impl Default for InferenceSpec {
    fn default() -> Self {
        let pc = PcConfig::default();
        Self {
            engine: EngineKind::Variational,
            step: pc.step,
            max_steps: pc.max_steps,
            tol: pc.tol,
            backtracking: pc.backtracking,
            n_samples: None,
            learn_std: true,
            iters: 5,
            mode: IterativeMode::Error,
            hidden: 16,
            net_epochs: 50,
            net_batch_size: 32,
            net_learn_rate: 0.01,
            trace_limit: 8,
        }
    }
}

impl InferenceSpec {
    pub fn pc_config(&self) -> PcConfig {
        PcConfig {
            step: self.step,
            max_steps: self.max_steps,
            tol: self.tol,
            backtracking: self.backtracking,
            max_halvings: PcConfig::default().max_halvings,
        }
    }

    pub fn estimator(&self, analytic_ok: bool) -> GradEstimator {
        match self.n_samples {
            Some(n) => GradEstimator::Sampled { n },
            None if analytic_ok => GradEstimator::Analytic,
            None => GradEstimator::Sampled { n: 1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub learn_rate: f64,
    pub beta: f64,
    pub rule: MStepRule,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 50, learn_rate: 0.05, beta: 1.0, rule: MStepRule::Expected }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhiteningMethod {
    Zca,
    Cholesky,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhiteningSpec {
    pub method: WhiteningMethod,
    /// Write the whitening matrix rows as a PGM filter grid.
    pub filter_grid: bool,
    /// Tile shape for the grid; defaults to square tiles.
    pub tile: Option<[usize; 2]>,
}

impl Default for WhiteningSpec {
    fn default() -> Self {
        Self { method: WhiteningMethod::Zca, filter_grid: true, tile: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    /// Monte-Carlo samples per datum when an analytic ELBO is unavailable.
    pub n_samples: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { n_samples: 64 }
    }
}

/// Sub-command, used for command-specific validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Infer,
    Whiten,
    CompareInference,
    EvalElbo,
    GenData,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Infer => "infer",
            Command::Whiten => "whiten",
            Command::CompareInference => "compare-inference",
            Command::EvalElbo => "eval-elbo",
            Command::GenData => "gen-data",
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

impl ExperimentConfig {
    /// Reads and validates a config; relative data paths are resolved
    /// against the config's directory. `seed` and `out_dir` override the file.
    pub fn load(path: &Path, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if out_dir.is_some() {
            cfg.out_dir = out_dir;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataSpec::Patches { images, .. } => images.iter_mut().for_each(fix),
            DataSpec::File { path, .. } => fix(path),
            _ => {}
        }
        if let Some(ModelSpec::Checkpoint { path }) = &mut self.model {
            fix(path);
        }
    }

    pub fn validate(&self, command: Command) -> Result<()> {
        if self.out_dir.is_none() {
            return Err(invalid("no output directory: set `out_dir` or pass --out"));
        }
        self.validate_data()?;
        self.validate_model(command)?;
        self.validate_engine(command)?;
        let t = &self.training;
        if command == Command::Train {
            if t.epochs == 0 || t.batch_size == 0 {
                return Err(invalid("training.epochs and training.batch_size must be positive"));
            }
            if !(t.learn_rate >= 0.0) || !t.learn_rate.is_finite() {
                return Err(invalid("training.learn_rate must be a non-negative number"));
            }
            if t.rule == MStepRule::LocalRule
                && !matches!(self.model, Some(ModelSpec::Linear { link: Link::Identity, .. }))
            {
                return Err(invalid("training.rule local_rule needs an identity-link linear model"));
            }
        }
        if !(t.beta >= 0.0) {
            return Err(invalid("training.beta must be non-negative"));
        }
        if command == Command::CompareInference {
            if !self.data.has_truth() && !matches!(self.model, Some(ModelSpec::Checkpoint { .. })) {
                return Err(invalid("compare-inference needs a linear or deep data source or a model checkpoint"));
            }
            if self.data.test_n() == 0 {
                return Err(invalid("compare-inference needs held-out data (data.test_n > 0)"));
            }
        }
        if self.evaluation.n_samples == 0 {
            return Err(invalid("evaluation.n_samples must be positive"));
        }
        if command == Command::Whiten {
            if let (Some([h, w]), Some(m)) = (self.whitening.tile, self.data.static_dim()) {
                if h * w != m {
                    return Err(invalid(format!("whitening.tile {h}x{w} does not match data width {m}")));
                }
            }
        }
        Ok(())
    }

    fn validate_data(&self) -> Result<()> {
        let positive = |what: &str, v: usize| {
            if v == 0 {
                Err(invalid(format!("data.{what} must be positive")))
            } else {
                Ok(())
            }
        };
        match &self.data {
            DataSpec::Linear { latent_dim, obs_dim, n, .. } => {
                positive("latent_dim", *latent_dim)?;
                positive("obs_dim", *obs_dim)?;
                positive("n", *n)?;
            }
            DataSpec::Deep { latent_dims, obs_dim, hidden, obs_std, n, .. } => {
                if latent_dims.is_empty() || latent_dims.contains(&0) {
                    return Err(invalid("data.latent_dims must be non-empty and positive"));
                }
                positive("obs_dim", *obs_dim)?;
                positive("hidden", *hidden)?;
                positive("n", *n)?;
                if !(*obs_std > 0.0) {
                    return Err(invalid("data.obs_std must be positive"));
                }
            }
            DataSpec::Patches { images, patch, count, .. } => {
                positive("patch", *patch)?;
                positive("count", *count)?;
                if images.is_empty() {
                    return Err(invalid("data.images is empty"));
                }
                if let Some(p) = images.iter().find(|p| !p.is_file()) {
                    return Err(invalid(format!("image {} does not exist", p.display())));
                }
            }
            DataSpec::MovingSquare { frames, height, width, size, .. } => {
                positive("frames", *frames)?;
                positive("size", *size)?;
                if size > height || size > width {
                    return Err(invalid("data.size does not fit the frame"));
                }
            }
            DataSpec::Ar1 { frames, dim, rho } => {
                positive("frames", *frames)?;
                positive("dim", *dim)?;
                if !(rho.abs() < 1.0) {
                    return Err(invalid("data.rho must satisfy |rho| < 1"));
                }
            }
            DataSpec::File { path, .. } => {
                if !path.is_file() {
                    return Err(invalid(format!("data file {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    fn validate_model(&self, command: Command) -> Result<()> {
        let needs_model = matches!(command, Command::Train | Command::Infer | Command::EvalElbo);
        let dim = self.data.static_dim();
        match &self.model {
            None if needs_model && !self.data.has_truth() => {
                return Err(invalid(format!("{} needs a model", command.name())))
            }
            None => {}
            Some(ModelSpec::Truth) if !self.data.has_truth() => {
                return Err(invalid("model kind `truth` needs a linear or deep data source"))
            }
            Some(ModelSpec::Truth) => {}
            Some(ModelSpec::Linear { latent_dim, obs_dim, .. }) => {
                if *latent_dim == 0 {
                    return Err(invalid("model.latent_dim must be positive"));
                }
                check_width(*obs_dim, dim)?;
            }
            Some(ModelSpec::Deep { latent_dims, obs_dim, hidden, obs_std }) => {
                if latent_dims.is_empty() || latent_dims.contains(&0) || *hidden == 0 || !(*obs_std > 0.0) {
                    return Err(invalid("model.latent_dims, hidden and obs_std must be positive"));
                }
                check_width(*obs_dim, dim)?;
            }
            Some(ModelSpec::Checkpoint { path }) => {
                if !path.is_file() {
                    return Err(invalid(format!("model checkpoint {} does not exist", path.display())));
                }
            }
        }
        if command == Command::Train && matches!(self.model, None | Some(ModelSpec::Truth)) {
            return Err(invalid("train needs a linear, deep or checkpoint model"));
        }
        Ok(())
    }

    fn validate_engine(&self, command: Command) -> Result<()> {
        let s = &self.inference;
        if !(s.step > 0.0) || !s.step.is_finite() {
            return Err(invalid("inference.step must be positive"));
        }
        if !(s.tol >= 0.0) {
            return Err(invalid("inference.tol must be non-negative"));
        }
        if s.n_samples == Some(0) {
            return Err(invalid("inference.n_samples must be positive"));
        }
        let amortized =
            matches!(s.engine, EngineKind::Direct | EngineKind::Iterative) || command == Command::CompareInference;
        if amortized && (s.hidden == 0 || s.net_batch_size == 0 || !(s.net_learn_rate >= 0.0)) {
            return Err(invalid("inference.hidden, net_batch_size and net_learn_rate must be positive"));
        }
        if matches!(s.engine, EngineKind::Iterative | EngineKind::Plain) && s.iters == 0 {
            return Err(invalid("inference.iters must be positive"));
        }
        Ok(())
    }
}

fn check_width(model_dim: usize, data_dim: Option<usize>) -> Result<()> {
    match data_dim {
        Some(d) if d != model_dim => Err(invalid(format!("model.obs_dim {model_dim} does not match data width {d}"))),
        _ if model_dim == 0 => Err(invalid("model.obs_dim must be positive")),
        _ => Ok(()),
    }
}
