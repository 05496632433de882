use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use msrisk_ffi::*;

fn panel_data() -> (Vec<f64>, usize, usize) {
    // deterministic two-regime-looking bivariate series
    let t = 120;
    let mut v = Vec::with_capacity(2 * t);
    for i in 0..t {
        let x = i as f64;
        let scale = if (i / 30) % 2 == 0 { 0.5 } else { 2.0 };
        let a = scale * ((x * 0.7).sin() + 0.3 * (x * 1.3).cos());
        let b = 0.6 * a + scale * 0.4 * (x * 2.1).sin();
        v.push(a);
        v.push(b);
    }
    (v, t, 2)
}

fn last_error() -> String {
    let p = msr_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn fit_and_query() {
    let (data, t, p) = panel_data();
    unsafe {
        let mut panel = ptr::null_mut();
        assert_eq!(msr_panel_from_array(data.as_ptr(), t, p, &mut panel), MsrStatus::Ok);
        let (mut nt, mut np) = (0, 0);
        assert_eq!(msr_panel_dims(panel, &mut nt, &mut np), MsrStatus::Ok);
        assert_eq!((nt, np), (t, p));

        let mut fit = ptr::null_mut();
        assert_eq!(msr_fit(panel, 2, 2, 7, &mut fit), MsrStatus::Ok);
        let mut ll = 0.0;
        assert_eq!(msr_fit_loglik(fit, &mut ll), MsrStatus::Ok);
        let (mut aic, mut bic, mut k) = (0.0, 0.0, 0usize);
        assert_eq!(msr_fit_information_criteria(fit, &mut aic, &mut bic, &mut k), MsrStatus::Ok);
        assert_eq!(k, 2 * (2 + 3 + 1) + 2 + 1);
        assert!((aic - (-2.0 * ll + 2.0 * k as f64)).abs() < 1e-9);

        let mut probs = vec![0.0; t * 2];
        assert_eq!(msr_fit_state_probabilities(fit, true, probs.as_mut_ptr(), probs.len()), MsrStatus::Ok);
        for row in probs.chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-10);
        }
        assert_eq!(
            msr_fit_state_probabilities(fit, true, probs.as_mut_ptr(), 3),
            MsrStatus::BufferTooSmall
        );

        let mut covar = vec![0.0; t * p];
        assert_eq!(
            msr_total_risk(fit, MsrRiskField::Covar, 0.05, 0.05, covar.as_mut_ptr(), covar.len()),
            MsrStatus::Ok
        );
        let mut var = vec![0.0; t * p];
        assert_eq!(
            msr_total_risk(fit, MsrRiskField::Var, 0.05, 0.05, var.as_mut_ptr(), var.len()),
            MsrStatus::Ok
        );
        assert!(covar.iter().all(|v| v.is_finite()));

        // p = 2: the only contributor's share is the full delta
        let mut delta = vec![0.0; t * p];
        assert_eq!(
            msr_total_risk(fit, MsrRiskField::DeltaCovar, 0.05, 0.05, delta.as_mut_ptr(), delta.len()),
            MsrStatus::Ok
        );
        let mut shares = [0.0; 2];
        let mut grand = 0.0;
        assert_eq!(
            msr_shapley(fit, 10, 0, MsrMeasure::Covar, 0.05, 0.05, shares.as_mut_ptr(), 2, &mut grand),
            MsrStatus::Ok
        );
        assert_eq!(shares[0], 0.0);
        assert!((shares[1] - grand).abs() < 1e-12);
        assert!((grand - delta[10 * p]).abs() < 1e-12);

        let mut json = ptr::null_mut();
        assert_eq!(msr_fit_model_json(fit, &mut json), MsrStatus::Ok);
        let mut refit = ptr::null_mut();
        assert_eq!(msr_fit_from_model_json(panel, json, &mut refit), MsrStatus::Ok);
        let mut ll2 = 0.0;
        msr_fit_loglik(refit, &mut ll2);
        assert!((ll - ll2).abs() < 1e-9 * ll.abs());
        msr_string_free(json);
        msr_fit_free(refit);
        msr_fit_free(fit);
        msr_panel_free(panel);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut panel = ptr::null_mut();
        let missing = CString::new("/nonexistent/panel.csv").unwrap();
        assert_eq!(msr_panel_from_csv(missing.as_ptr(), false, &mut panel), MsrStatus::Io);
        assert!(last_error().contains("nonexistent"));
        assert!(panel.is_null());

        assert_eq!(msr_panel_from_csv(ptr::null(), false, &mut panel), MsrStatus::NullPointer);
        let mut ll = 0.0;
        assert_eq!(msr_fit_loglik(ptr::null(), &mut ll), MsrStatus::NullPointer);

        let (data, t, p) = panel_data();
        assert_eq!(msr_panel_from_array(data.as_ptr(), t, p, &mut panel), MsrStatus::Ok);
        let mut fit = ptr::null_mut();
        assert_eq!(msr_fit(panel, 0, 1, 0, &mut fit), MsrStatus::Estimation);
        assert!(!last_error().is_empty());
        let bad = CString::new("{\"not\": \"a model\"}").unwrap();
        assert_eq!(msr_fit_from_model_json(panel, bad.as_ptr(), &mut fit), MsrStatus::Data);
        msr_panel_free(panel);

        let (mut aic, mut k) = (0.0, 0usize);
        assert_eq!(
            msr_information_criteria(-100.0, 2, 4, 1000, &mut aic, ptr::null_mut(), &mut k),
            MsrStatus::Ok
        );
        assert_eq!(k, 33);
        assert_eq!(aic, 266.0);
    }
}

#[test]
fn csv_prices() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prices.csv");
    let mut text = String::from("date,a,b\n");
    for d in 1..=20 {
        text += &format!("2020-01-{d:02},{},{}\n", 100.0 + d as f64, 50.0 + (d as f64).sqrt());
    }
    std::fs::write(&path, text).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut panel = ptr::null_mut();
        assert_eq!(msr_panel_from_csv(c.as_ptr(), true, &mut panel), MsrStatus::Ok);
        let mut t = 0;
        msr_panel_dims(panel, &mut t, ptr::null_mut());
        assert_eq!(t, 19);
        msr_panel_free(panel);
    }
}

/// Compiles and runs a C program against the generated header and the
/// static library.
#[test]
fn c_program_links() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok()) else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libmsrisk_ffi.a");
    if !lib.exists() {
        eprintln!("static library not built at {}; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "msrisk.h"

int main(void) {
    double aic, bic;
    uintptr_t k;
    if (msr_information_criteria(-11856.544, 2, 4, 1000, &aic, &bic, &k) != MSR_STATUS_OK) return 1;
    if (k != 33) return 2;
    MsrPanel *panel = NULL;
    if (msr_panel_from_csv("/nonexistent.csv", false, &panel) != MSR_STATUS_IO) return 3;
    if (msr_last_error_message() == NULL) return 4;
    double data[40];
    for (int i = 0; i < 40; i++) data[i] = (i % 7) * 0.1 - (i % 3) * 0.2;
    if (msr_panel_from_array(data, 20, 2, &panel) != MSR_STATUS_OK) return 5;
    uintptr_t t = 0, p = 0;
    msr_panel_dims(panel, &t, &p);
    msr_panel_free(panel);
    printf("%.3f %lu %lu\n", aic, (unsigned long)t, (unsigned long)p);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "23779.088 20 2");
}
