//! C ABI for predflow.
//!
//! Every fallible function returns a [`PfStatus`]; on failure the message is
//! available from [`pf_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Arrays are
//! row-major `double` buffers whose lengths the caller states explicitly.
//!
//! # Safety
//!
//! Pointer arguments must be null or valid for the stated number of
//! elements; strings must be NUL-terminated. Handles must come from this
//! library and be freed exactly once.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use predflow::checkpoint::Checkpoint;
use predflow::distributions::DiagGaussian;
use predflow::flows::{fit_cholesky_whitening, fit_zca, ConstantAffine};
use predflow::harness::{run_experiment, Command};
use predflow::inference::{elbo_objective, pc_inference, ElboMode, PcConfig, PosteriorEstimate};
use predflow::models::{GenerativeModel, LinearGaussianModel, Link};
use predflow::{Error, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    DimensionMismatch = 2,
    NotPositiveDefinite = 3,
    SingularScale = 4,
    DegenerateData = 5,
    ModelNotLinear = 6,
    Diverged = 7,
    InvalidArgument = 8,
    BadFormat = 9,
    ConfigInvalid = 10,
    Io = 11,
    Panic = 12,
}

impl From<&Error> for PfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DimensionMismatch(_) => PfStatus::DimensionMismatch,
            Error::NotPositiveDefinite(_) => PfStatus::NotPositiveDefinite,
            Error::SingularScale(_) => PfStatus::SingularScale,
            Error::DegenerateData(_) => PfStatus::DegenerateData,
            Error::ModelNotLinear => PfStatus::ModelNotLinear,
            Error::Diverged(_) => PfStatus::Diverged,
            Error::InvalidArgument(_) => PfStatus::InvalidArgument,
            Error::BadFormat(_) | Error::Json(_) => PfStatus::BadFormat,
            Error::ConfigInvalid(_) => PfStatus::ConfigInvalid,
            Error::Io(_) => PfStatus::Io,
        }
    }
}

/// Linear-Gaussian generative model.
pub struct PfModel(GenerativeModel);

/// Affine flow `v = shift + scale·u`, e.g. a fitted whitening transform.
pub struct PfFlow(ConstantAffine);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(PfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(PfStatus::from(&e), e.to_string())
    }
}

type Res<T> = Result<T, Fail>;

fn guard(f: impl FnOnce() -> Res<()>) -> PfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PfStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PfStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(PfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Res<&'a [f64]> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Res<&'a mut [f64]> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Res<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string(p: *const c_char, what: &str) -> Res<String> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_string)
        .map_err(|_| Fail(PfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const PfModel) -> Res<&'a LinearGaussianModel> {
    let m = m.as_ref().ok_or_else(|| null("model"))?;
    m.0.as_linear().ok_or_else(|| Fail(PfStatus::ModelNotLinear, "handle does not hold a linear model".into()))
}

fn copy_into(dst: &mut [f64], src: &[f64]) -> Res<()> {
    if dst.len() != src.len() {
        return Err(Fail(
            PfStatus::DimensionMismatch,
            format!("output buffer holds {} values, need {}", dst.len(), src.len()),
        ));
    }
    dst.copy_from_slice(src);
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len` bytes) and returns the full message length. Pass a
/// null `buf` to query the length.
#[no_mangle]
pub unsafe extern "C" fn pf_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New identity-link linear model with `latent_dim` latents and `obs_dim`
/// observations. `weight` is `obs_dim × latent_dim`.
#[no_mangle]
pub unsafe extern "C" fn pf_model_linear_new(
    latent_dim: usize,
    obs_dim: usize,
    weight: *const f64,
    bias: *const f64,
    obs_std: *const f64,
    prior_mean: *const f64,
    prior_std: *const f64,
    model_out: *mut *mut PfModel,
) -> PfStatus {
    guard(|| {
        let slot = out(model_out, "model_out")?;
        let w = Tensor::matrix(obs_dim, latent_dim, slice(weight, obs_dim * latent_dim, "weight")?.to_vec())?;
        let m = LinearGaussianModel::new(
            w,
            slice(bias, obs_dim, "bias")?.to_vec(),
            slice(obs_std, obs_dim, "obs_std")?.to_vec(),
            slice(prior_mean, latent_dim, "prior_mean")?.to_vec(),
            slice(prior_std, latent_dim, "prior_std")?.to_vec(),
            Link::Identity,
        )?;
        *slot = Box::into_raw(Box::new(PfModel(m.into())));
        Ok(())
    })
}

/// Loads a linear model checkpoint written by the `predflow` CLI.
#[no_mangle]
pub unsafe extern "C" fn pf_model_load(path: *const c_char, model_out: *mut *mut PfModel) -> PfStatus {
    guard(|| {
        let slot = out(model_out, "model_out")?;
        let model = GenerativeModel::try_from(&Checkpoint::load(string(path, "path")?)?)?;
        if model.as_linear().is_none() {
            return Err(Fail(PfStatus::ModelNotLinear, "checkpoint does not hold a linear model".into()));
        }
        *slot = Box::into_raw(Box::new(PfModel(model)));
        Ok(())
    })
}

/// Writes the model as a checkpoint file.
#[no_mangle]
pub unsafe extern "C" fn pf_model_save(model: *const PfModel, path: *const c_char) -> PfStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        Checkpoint::from(&m.0).save(string(path, "path")?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_model_free(model: *mut PfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent and observation dimensions.
#[no_mangle]
pub unsafe extern "C" fn pf_model_dims(model: *const PfModel, latent_dim: *mut usize, obs_dim: *mut usize) -> PfStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out(latent_dim, "latent_dim")? = m.latent_dim();
        *out(obs_dim, "obs_dim")? = m.obs_dim();
        Ok(())
    })
}

/// Exact Gaussian posterior `p(z | x)`: mean (`latent_dim`) and covariance
/// (`latent_dim²`, row-major).
#[no_mangle]
pub unsafe extern "C" fn pf_exact_posterior(
    model: *const PfModel,
    x: *const f64,
    x_len: usize,
    mean_out: *mut f64,
    cov_out: *mut f64,
) -> PfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let k = m.latent_dim();
        let post = m.exact_posterior(slice(x, x_len, "x")?)?;
        copy_into(slice_mut(mean_out, k, "mean_out")?, post.mean())?;
        copy_into(slice_mut(cov_out, k * k, "cov_out")?, post.covariance().data())
    })
}

/// `log p(x)` under the model.
#[no_mangle]
pub unsafe extern "C" fn pf_exact_log_marginal(
    model: *const PfModel,
    x: *const f64,
    x_len: usize,
    value_out: *mut f64,
) -> PfStatus {
    guard(|| {
        let m = model_ref(model)?;
        *out(value_out, "value_out")? = m.exact_log_marginal(slice(x, x_len, "x")?)?;
        Ok(())
    })
}

/// Gradient-ascent MAP inference from `init` (`latent_dim` values). Writes
/// the estimate to `z_out` and the number of accepted steps to `steps_out`
/// (which may be null). Non-positive `step`, `tol` or zero `max_steps`
/// select the defaults (0.05, 1e-8, 10000).
#[no_mangle]
pub unsafe extern "C" fn pf_pc_inference(
    model: *const PfModel,
    x: *const f64,
    x_len: usize,
    init: *const f64,
    step: f64,
    max_steps: usize,
    tol: f64,
    z_out: *mut f64,
    steps_out: *mut usize,
) -> PfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let k = m.latent_dim();
        let d = PcConfig::default();
        let cfg = PcConfig {
            step: if step > 0.0 { step } else { d.step },
            max_steps: if max_steps > 0 { max_steps } else { d.max_steps },
            tol: if tol > 0.0 { tol } else { d.tol },
            ..d
        };
        let g: GenerativeModel = m.clone().into();
        let (z, trace) = pc_inference(&g, slice(x, x_len, "x")?, &[slice(init, k, "init")?.to_vec()], &cfg)?;
        copy_into(slice_mut(z_out, k, "z_out")?, &z[0])?;
        if let Some(s) = steps_out.as_mut() {
            *s = trace.len();
        }
        Ok(())
    })
}

/// Closed-form ELBO of the diagonal Gaussian `q = N(mean, exp(log_std)²)`.
#[no_mangle]
pub unsafe extern "C" fn pf_elbo_analytic(
    model: *const PfModel,
    x: *const f64,
    x_len: usize,
    mean: *const f64,
    log_std: *const f64,
    beta: f64,
    value_out: *mut f64,
) -> PfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let k = m.latent_dim();
        let q = PosteriorEstimate {
            levels: vec![DiagGaussian::new(slice(mean, k, "mean")?.to_vec(), slice(log_std, k, "log_std")?.to_vec())?],
        };
        let g: GenerativeModel = m.clone().into();
        let (est, _) = elbo_objective(&g, &q, slice(x, x_len, "x")?, beta, &ElboMode::Analytic, None)?;
        *out(value_out, "value_out")? = est.elbo;
        Ok(())
    })
}

/// Affine flow with `dim`-vector `shift` and invertible `dim × dim` `scale`.
#[no_mangle]
pub unsafe extern "C" fn pf_flow_new(
    dim: usize,
    shift: *const f64,
    scale: *const f64,
    flow_out: *mut *mut PfFlow,
) -> PfStatus {
    guard(|| {
        let slot = out(flow_out, "flow_out")?;
        let b = Tensor::matrix(dim, dim, slice(scale, dim * dim, "scale")?.to_vec())?;
        let f = ConstantAffine::new(slice(shift, dim, "shift")?.to_vec(), b)?;
        *slot = Box::into_raw(Box::new(PfFlow(f)));
        Ok(())
    })
}

unsafe fn fit(
    data: *const f64,
    rows: usize,
    cols: usize,
    flow_out: *mut *mut PfFlow,
    f: fn(&Tensor) -> predflow::Result<ConstantAffine>,
) -> PfStatus {
    guard(|| {
        let slot = out(flow_out, "flow_out")?;
        let t = Tensor::matrix(rows, cols, slice(data, rows * cols, "data")?.to_vec())?;
        *slot = Box::into_raw(Box::new(PfFlow(f(&t)?)));
        Ok(())
    })
}

/// Fits ZCA whitening to `rows × cols` data. The flow maps white noise to
/// data; its inverse whitens.
#[no_mangle]
pub unsafe extern "C" fn pf_fit_zca(
    data: *const f64,
    rows: usize,
    cols: usize,
    flow_out: *mut *mut PfFlow,
) -> PfStatus {
    fit(data, rows, cols, flow_out, fit_zca)
}

/// Fits Cholesky (lower-triangular) whitening; see [`pf_fit_zca`].
#[no_mangle]
pub unsafe extern "C" fn pf_fit_cholesky(
    data: *const f64,
    rows: usize,
    cols: usize,
    flow_out: *mut *mut PfFlow,
) -> PfStatus {
    fit(data, rows, cols, flow_out, fit_cholesky_whitening)
}

#[no_mangle]
pub unsafe extern "C" fn pf_flow_dim(flow: *const PfFlow) -> usize {
    flow.as_ref().map_or(0, |f| f.0.dim())
}

/// `v = shift + scale·u` and `log|det scale|`.
#[no_mangle]
pub unsafe extern "C" fn pf_flow_forward(
    flow: *const PfFlow,
    u: *const f64,
    v_out: *mut f64,
    logdet_out: *mut f64,
) -> PfStatus {
    guard(|| {
        let f = &flow.as_ref().ok_or_else(|| null("flow"))?.0;
        let (v, ld) = f.forward(slice(u, f.dim(), "u")?)?;
        copy_into(slice_mut(v_out, f.dim(), "v_out")?, &v)?;
        if let Some(l) = logdet_out.as_mut() {
            *l = ld;
        }
        Ok(())
    })
}

/// `u = scale⁻¹(v − shift)` and `−log|det scale|`.
#[no_mangle]
pub unsafe extern "C" fn pf_flow_inverse(
    flow: *const PfFlow,
    v: *const f64,
    u_out: *mut f64,
    logdet_out: *mut f64,
) -> PfStatus {
    guard(|| {
        let f = &flow.as_ref().ok_or_else(|| null("flow"))?.0;
        let (u, ld) = f.inverse(slice(v, f.dim(), "v")?)?;
        copy_into(slice_mut(u_out, f.dim(), "u_out")?, &u)?;
        if let Some(l) = logdet_out.as_mut() {
            *l = ld;
        }
        Ok(())
    })
}

/// The whitening matrix `scale⁻¹` (`dim²`, row-major).
#[no_mangle]
pub unsafe extern "C" fn pf_flow_whitening_matrix(flow: *const PfFlow, matrix_out: *mut f64) -> PfStatus {
    guard(|| {
        let f = &flow.as_ref().ok_or_else(|| null("flow"))?.0;
        let n = f.dim();
        copy_into(slice_mut(matrix_out, n * n, "matrix_out")?, f.inverse_scale().data())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_flow_free(flow: *mut PfFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Runs a CLI sub-command (`"train"`, `"infer"`, `"whiten"`,
/// `"compare-inference"`, `"eval-elbo"`, `"gen-data"`) on a config file.
/// `out_dir` may be null to use the config's output directory.
#[no_mangle]
pub unsafe extern "C" fn pf_run_experiment(
    command: *const c_char,
    config_path: *const c_char,
    out_dir: *const c_char,
) -> PfStatus {
    guard(|| {
        let cmd = match string(command, "command")?.as_str() {
            "train" => Command::Train,
            "infer" => Command::Infer,
            "whiten" => Command::Whiten,
            "compare-inference" => Command::CompareInference,
            "eval-elbo" => Command::EvalElbo,
            "gen-data" => Command::GenData,
            other => return Err(Fail(PfStatus::InvalidArgument, format!("unknown command {other:?}"))),
        };
        let out = if out_dir.is_null() { None } else { Some(PathBuf::from(string(out_dir, "out_dir")?)) };
        run_experiment(cmd, &PathBuf::from(string(config_path, "config_path")?), None, out)?;
        Ok(())
    })
}
