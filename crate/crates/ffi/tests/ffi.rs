use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use faf_ffi::*;

const MODEL: &str = r#"{"d": 2, "noise_var": 1.0,
    "red": {"beta": [1.0, 0.0], "sigma": [[2.0, 0.0], [0.0, 1.0]]},
    "blue": {"beta": [0.0, 1.0], "sigma": [[1.0, 0.0], [0.0, 2.0]]}}"#;

fn model() -> *mut FafModel {
    let json = CString::new(MODEL).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { faf_model_from_json(json.as_ptr(), &mut m) }, FafStatus::Ok);
    m
}

fn last_error() -> String {
    let p = faf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn model_roundtrip_and_optimum() {
    let m = model();
    let mut d = 0usize;
    assert_eq!(unsafe { faf_model_dim(m, &mut d) }, FafStatus::Ok);
    assert_eq!(d, 2);
    let mut beta = [0.0; 2];
    assert_eq!(unsafe { faf_model_optimal_beta(m, 0.5, beta.as_mut_ptr(), 2) }, FafStatus::Ok);
    assert!((beta[0] - 2.0 / 3.0).abs() < 1e-15 && (beta[1] - 2.0 / 3.0).abs() < 1e-15);
    let (mut r, mut b) = (0.0, 0.0);
    assert_eq!(unsafe { faf_model_risks(m, beta.as_ptr(), 2, &mut r, &mut b) }, FafStatus::Ok);
    assert!((r - 5.0 / 3.0).abs() < 1e-14 && (b - 5.0 / 3.0).abs() < 1e-14);
    assert_eq!(unsafe { faf_model_optimal_beta(m, 0.5, beta.as_mut_ptr(), 1) }, FafStatus::InvalidArgument);
    assert_eq!(unsafe { faf_model_optimal_beta(m, 1.5, beta.as_mut_ptr(), 2) }, FafStatus::Validation);
    unsafe { faf_model_free(m) };
}

#[test]
fn invalid_model_names_the_matrix() {
    let bad = CString::new(MODEL.replace("[[2.0, 0.0], [0.0, 1.0]]", "[[1.0, 2.0], [2.0, 1.0]]")).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { faf_model_from_json(bad.as_ptr(), &mut m) }, FafStatus::Validation);
    assert!(m.is_null());
    assert!(last_error().contains("red.sigma"), "{}", last_error());
    assert_eq!(unsafe { faf_model_from_json(ptr::null(), &mut m) }, FafStatus::InvalidArgument);
}

#[test]
fn frontier_handle() {
    let m = model();
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { faf_frontier_trace(m, 3, &mut f) }, FafStatus::Ok);
    assert_eq!(unsafe { faf_frontier_len(f) }, 3);
    let (mut l, mut r, mut b) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { faf_frontier_point(f, 2, &mut l, &mut r, &mut b) }, FafStatus::Ok);
    assert_eq!((l, r, b), (1.0, 1.0, 4.0));
    assert_eq!(unsafe { faf_frontier_point(f, 3, &mut l, &mut r, &mut b) }, FafStatus::InvalidArgument);
    unsafe {
        faf_frontier_free(f);
        faf_model_free(m);
        faf_frontier_free(ptr::null_mut());
    }
}

fn call_json(f: unsafe extern "C" fn(*const std::ffi::c_char, *mut *mut std::ffi::c_char) -> FafStatus, req: &str) -> (FafStatus, Option<serde_json::Value>) {
    let c = CString::new(req).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { f(c.as_ptr(), &mut out) };
    if out.is_null() {
        return (status, None);
    }
    let v = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    unsafe { faf_string_free(out) };
    (status, Some(v))
}

#[test]
fn json_entry_points() {
    let (s, v) = call_json(
        faf_allocate_json,
        r#"{"budget": 100, "regime": "known_cov_rule", "config": {"d": 2, "lambda": 0.9, "rho_r": 1.0, "rho_b": 1.0, "noise_var": 1.0}}"#,
    );
    assert_eq!(s, FafStatus::Ok);
    let v = v.unwrap();
    assert_eq!((v["n_r"].as_u64(), v["n_b"].as_u64()), (Some(90), Some(10)));

    let (s, _) = call_json(
        faf_allocate_json,
        r#"{"budget": 3, "config": {"d": 2, "lambda": 0.9, "rho_r": 1.0, "rho_b": 1.0, "noise_var": 1.0}}"#,
    );
    assert_eq!(s, FafStatus::Precondition);
    assert!(last_error().contains("n_g >= d"));

    let (s, v) = call_json(
        faf_bounds_json,
        r#"{"config": {"d": 2, "n_r": 100, "n_b": 100, "lambda": 0.5, "rho_r": 1.0, "rho_b": 1.0, "noise_var": 1.0}}"#,
    );
    assert_eq!(s, FafStatus::Ok);
    let kc = v.unwrap()["bounds"]["known_cov_excess_upper"]["value"].as_f64().unwrap();
    assert!((kc - 535.619_420_588_948).abs() < 1e-9);
}

#[test]
fn mc_matches_core() {
    let cfg = format!(
        r#"{{"model": {MODEL}, "lambda": 0.3, "n_r": 20, "n_b": 30, "estimator": "pooled_ols", "replicates": 50, "master_seed": 9}}"#
    );
    let c = CString::new(cfg.clone()).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { faf_mc_run_json(c.as_ptr(), ptr::null(), &mut out) }, FafStatus::Ok);
    let got: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    unsafe { faf_string_free(out) };
    let parsed: faf_core::montecarlo::McConfig = serde_json::from_str(&cfg).unwrap();
    let want = faf_core::api::run_mc(&parsed, &Default::default()).unwrap();
    assert_eq!(got, want);
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/faf.h")).unwrap();
    for sym in ["faf_model_from_json", "faf_frontier_trace", "faf_mc_run_json", "faf_string_free", "FAF_STATUS_PRECONDITION"] {
        assert!(header.contains(sym), "{sym}");
    }
}

/// Compiles and runs a C program against the header and static library.
#[test]
fn c_program_links_against_static_library() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("cc not available; skipping");
        return;
    }
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let test_exe = std::env::current_exe().unwrap();
    let profile_dir = test_exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libfaf_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "faf.h"
int main(void) {
    const char *json = "{\"d\":1,\"noise_var\":1.0,\"red\":{\"beta\":[1.0],\"rho\":1.0},\"blue\":{\"beta\":[0.0],\"rho\":1.0}}";
    FafModel *m = NULL;
    if (faf_model_from_json(json, &m) != FAF_STATUS_OK) return 1;
    double beta[1];
    if (faf_model_optimal_beta(m, 0.25, beta, 1) != FAF_STATUS_OK) return 2;
    printf("%.17g\n", beta[0]);
    if (faf_model_from_json("{", &m) != FAF_STATUS_VALIDATION) return 3;
    if (faf_last_error_message() == NULL) return 4;
    faf_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{out:?}");
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "0.25");
}
