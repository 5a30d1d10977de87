use std::ffi::{CStr, CString};
use std::ptr;

use predflow_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe { pf_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string()
}

fn unit_model() -> *mut PfModel {
    let mut m = ptr::null_mut();
    let s = unsafe { pf_model_linear_new(1, 1, &1.0, &0.0, &1.0, &0.0, &1.0, &mut m) };
    assert_eq!(s, PfStatus::Ok);
    m
}

#[test]
fn unit_model_posterior_and_marginal() {
    let m = unit_model();
    let (mut mean, mut cov, mut lp) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(pf_exact_posterior(m, &1.0, 1, &mut mean, &mut cov), PfStatus::Ok);
        assert_eq!(pf_exact_log_marginal(m, &1.0, 1, &mut lp), PfStatus::Ok);
    }
    assert!((mean - 0.5).abs() < 1e-12 && (cov - 0.5).abs() < 1e-12);
    let oracle = -0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - 0.25;
    assert!((lp - oracle).abs() < 1e-12);

    let mut elbo = 0.0;
    unsafe { assert_eq!(pf_elbo_analytic(m, &1.0, 1, &0.5, &(0.5f64.sqrt().ln()), 1.0, &mut elbo), PfStatus::Ok) };
    assert!((elbo - lp).abs() < 1e-9);
    unsafe { pf_model_free(m) };
}

#[test]
fn pc_inference_reaches_posterior_mean() {
    let m = unit_model();
    let (mut z, mut steps) = (0.0, 0usize);
    let s = unsafe { pf_pc_inference(m, &1.0, 1, &0.0, 0.1, 0, 0.0, &mut z, &mut steps) };
    assert_eq!(s, PfStatus::Ok);
    assert!((z - 0.5).abs() < 1e-6);
    assert!(steps > 0 && steps < 10_000);
    unsafe { pf_model_free(m) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut m = ptr::null_mut();
    let s = unsafe { pf_model_linear_new(1, 1, &1.0, &0.0, &-1.0, &0.0, &1.0, &mut m) };
    assert_ne!(s, PfStatus::Ok);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    let s = unsafe { pf_model_linear_new(1, 1, ptr::null(), &0.0, &1.0, &0.0, &1.0, &mut m) };
    assert_eq!(s, PfStatus::NullPointer);
    assert!(last_error().contains("weight"));

    let model = unit_model();
    let mut lp = 0.0;
    let s = unsafe { pf_exact_log_marginal(model, [1.0, 2.0].as_ptr(), 2, &mut lp) };
    assert_eq!(s, PfStatus::DimensionMismatch);
    let needed = unsafe { pf_last_error_message(ptr::null_mut(), 0) };
    assert_eq!(needed, last_error().len());
    unsafe { pf_model_free(model) };
    unsafe { pf_model_free(ptr::null_mut()) };
}

#[test]
fn whitening_flows() {
    let n = 2000;
    let mut data = Vec::with_capacity(2 * n);
    let mut state = 7u64;
    let mut unif = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    for _ in 0..n {
        let (a, b) = (unif(), unif());
        data.extend([a, 0.8 * a + 0.3 * b]);
    }
    for fit in [pf_fit_zca, pf_fit_cholesky] {
        let mut f = ptr::null_mut();
        unsafe { assert_eq!(fit(data.as_ptr(), n, 2, &mut f), PfStatus::Ok) };
        assert_eq!(unsafe { pf_flow_dim(f) }, 2);
        let mut white = vec![0.0; 2 * n];
        for i in 0..n {
            let s = unsafe { pf_flow_inverse(f, data[2 * i..].as_ptr(), white[2 * i..].as_mut_ptr(), ptr::null_mut()) };
            assert_eq!(s, PfStatus::Ok);
        }
        let mean = |j: usize| (0..n).map(|i| white[2 * i + j]).sum::<f64>() / n as f64;
        let (m0, m1) = (mean(0), mean(1));
        let cov = |a: usize, b: usize, ma: f64, mb: f64| {
            (0..n).map(|i| (white[2 * i + a] - ma) * (white[2 * i + b] - mb)).sum::<f64>() / (n - 1) as f64
        };
        assert!((cov(0, 0, m0, m0) - 1.0).abs() < 1e-8);
        assert!((cov(1, 1, m1, m1) - 1.0).abs() < 1e-8);
        assert!(cov(0, 1, m0, m1).abs() < 1e-8);

        let mut w = [0.0; 4];
        unsafe { assert_eq!(pf_flow_whitening_matrix(f, w.as_mut_ptr()), PfStatus::Ok) };
        let (mut v, mut back, mut ld, mut ild) = ([0.0; 2], [0.0; 2], 0.0, 0.0);
        unsafe {
            pf_flow_forward(f, [0.3, -1.2].as_ptr(), v.as_mut_ptr(), &mut ld);
            pf_flow_inverse(f, v.as_ptr(), back.as_mut_ptr(), &mut ild);
        }
        assert!((back[0] - 0.3).abs() < 1e-12 && (back[1] + 1.2).abs() < 1e-12);
        assert!((ld + ild).abs() < 1e-12);
        unsafe { pf_flow_free(f) };
    }
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { pf_fit_zca(data.as_ptr(), 2, 2, &mut f) }, PfStatus::DegenerateData);
}

#[test]
fn affine_flow_logdet() {
    let mut f = ptr::null_mut();
    let scale = [2.0, 0.0, 0.0, 2.0];
    unsafe { assert_eq!(pf_flow_new(2, [1.0, 2.0].as_ptr(), scale.as_ptr(), &mut f), PfStatus::Ok) };
    let (mut v, mut ld) = ([0.0; 2], 0.0);
    unsafe { pf_flow_forward(f, [0.0, 0.0].as_ptr(), v.as_mut_ptr(), &mut ld) };
    assert_eq!(v, [1.0, 2.0]);
    assert!((ld - 4f64.ln()).abs() < 1e-12);
    unsafe { pf_flow_free(f) };
    let singular = [1.0, 2.0, 2.0, 4.0];
    assert_eq!(unsafe { pf_flow_new(2, [0.0, 0.0].as_ptr(), singular.as_ptr(), &mut f) }, PfStatus::SingularScale);
}

#[test]
fn checkpoint_roundtrip_and_experiments() {
    let dir = tempfile::tempdir().unwrap();
    let m = unit_model();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    unsafe { assert_eq!(pf_model_save(m, path.as_ptr()), PfStatus::Ok) };
    let mut loaded = ptr::null_mut();
    unsafe { assert_eq!(pf_model_load(path.as_ptr(), &mut loaded), PfStatus::Ok) };
    let (mut k, mut d) = (0, 0);
    unsafe { assert_eq!(pf_model_dims(loaded, &mut k, &mut d), PfStatus::Ok) };
    assert_eq!((k, d), (1, 1));
    unsafe {
        pf_model_free(m);
        pf_model_free(loaded);
    }

    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 1, "data": {"source": "ar1", "frames": 200, "dim": 3, "rho": 0.5}}"#).unwrap();
    let cfg = CString::new(cfg.to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
    let whiten = CString::new("whiten").unwrap();
    unsafe { assert_eq!(pf_run_experiment(whiten.as_ptr(), cfg.as_ptr(), out.as_ptr()), PfStatus::Ok) };
    assert!(dir.path().join("out/metrics.csv").is_file());
    let bogus = CString::new("bogus").unwrap();
    unsafe { assert_eq!(pf_run_experiment(bogus.as_ptr(), cfg.as_ptr(), out.as_ptr()), PfStatus::InvalidArgument) };
    let train = CString::new("train").unwrap();
    unsafe { assert_eq!(pf_run_experiment(train.as_ptr(), cfg.as_ptr(), out.as_ptr()), PfStatus::ConfigInvalid) };
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/predflow.h")).unwrap();
    for name in [
        "pf_last_error_message",
        "pf_model_linear_new",
        "pf_exact_posterior",
        "pf_pc_inference",
        "pf_fit_zca",
        "pf_flow_inverse",
        "pf_run_experiment",
        "PF_STATUS_DIMENSION_MISMATCH",
        "typedef struct PfModel PfModel",
    ] {
        assert!(header.contains(name), "{name}");
    }
    let version = unsafe { CStr::from_ptr(pf_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}
