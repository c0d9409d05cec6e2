use std::ffi::{CStr, CString};
use std::ptr;

use wpgsa_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = wp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn uniform() -> *mut WpMeasure {
    let mut m = ptr::null_mut();
    let json = c(r#"{"family":"uniform","params":{"a":0,"b":1}}"#);
    assert_eq!(unsafe { wp_measure_from_json(json.as_ptr(), &mut m) }, WpStatus::Ok);
    m
}

#[test]
fn measure_queries() {
    let m = uniform();
    let (mut a, mut b, mut mean, mut var, mut rho) = (0.0, 0.0, 0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(wp_measure_support(m, &mut a, &mut b), WpStatus::Ok);
        assert_eq!(wp_measure_moments(m, &mut mean, &mut var), WpStatus::Ok);
        assert_eq!(wp_measure_density(m, 0.3, &mut rho), WpStatus::Ok);
        wp_measure_free(m);
    }
    assert_eq!((a, b), (0.0, 1.0));
    assert!((mean - 0.5).abs() < 1e-12 && (var - 1.0 / 12.0).abs() < 1e-12);
    assert!((rho - 1.0).abs() < 1e-12);
}

#[test]
fn bad_inputs_report_status_and_message() {
    let mut m = ptr::null_mut();
    let json = c(r#"{"family":"nope"}"#);
    assert_eq!(unsafe { wp_measure_from_json(json.as_ptr(), &mut m) }, WpStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("nope"));
    assert_eq!(unsafe { wp_measure_from_json(ptr::null(), &mut m) }, WpStatus::NullPointer);
    let bad = [0xffu8, 0];
    assert_eq!(unsafe { wp_measure_from_json(bad.as_ptr().cast(), &mut m) }, WpStatus::InvalidUtf8);
    let mut out = 0.0;
    assert_eq!(unsafe { wp_measure_density(ptr::null(), 0.5, &mut out) }, WpStatus::NullPointer);
    unsafe {
        wp_measure_free(ptr::null_mut());
        wp_weight_free(ptr::null_mut());
        wp_basis_free(ptr::null_mut());
        wp_report_free(ptr::null_mut());
        wp_string_free(ptr::null_mut());
    }
}

#[test]
fn uniform_spectrum_through_handles() {
    let m = uniform();
    let (mut w, mut basis) = (ptr::null_mut(), ptr::null_mut());
    let unit = c("unit");
    let (mut cp, mut l1, mut k) = (0.0, 0.0, 0usize);
    let (mut e, mut de) = (0.0, 0.0);
    unsafe {
        assert_eq!(wp_weight_new(m, unit.as_ptr(), 500, &mut w), WpStatus::Ok);
        assert_eq!(wp_weight_poincare_constant(w, &mut cp), WpStatus::Ok);
        assert_eq!(wp_basis_solve(m, w, 2, 500, &mut basis), WpStatus::Ok);
        assert_eq!(wp_basis_num_eig(basis, &mut k), WpStatus::Ok);
        assert_eq!(wp_basis_eigenvalue(basis, 1, &mut l1), WpStatus::Ok);
        assert_eq!(wp_basis_eval(basis, 1, 1.0, &mut e, &mut de), WpStatus::Ok);
        assert_eq!(wp_basis_eigenvalue(basis, 3, &mut l1), WpStatus::OutOfRange);
        assert_eq!(wp_basis_eval(basis, 0, 0.5, &mut e, ptr::null_mut()), WpStatus::OutOfRange);
        wp_basis_free(basis);
        wp_weight_free(w);
        wp_measure_free(m);
    }
    let pi2 = std::f64::consts::PI.powi(2);
    assert_eq!(k, 2);
    assert!((cp - 1.0 / pi2).abs() < 1e-3 / pi2);
    assert!((e - 2f64.sqrt()).abs() < 1e-2);
}

#[test]
fn data_driven_weights_are_rejected_without_a_model() {
    let m = uniform();
    let mut w = ptr::null_mut();
    let kind = c("data_driven");
    assert_eq!(unsafe { wp_weight_new(m, kind.as_ptr(), 500, &mut w) }, WpStatus::Config);
    unsafe { wp_measure_free(m) };
}

#[test]
fn report_round_trip() {
    let mut config = wp_config_default();
    config.ref_n = 2000;
    config.boot = 20;
    let (model, weights, poince) = (c("toy1"), c("unit,lin"), c("lin,gauss_ref"));
    let mut r = ptr::null_mut();
    let (mut d, mut failures) = (0usize, 0usize);
    let (mut s_ref, mut unit, mut lin, mut free, mut based) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut json = ptr::null_mut();
    unsafe {
        assert_eq!(wp_report_build(model.as_ptr(), &config, weights.as_ptr(), poince.as_ptr(), &mut r), WpStatus::Ok);
        assert_eq!(wp_report_summary(r, &mut d, &mut failures), WpStatus::Ok);
        assert_eq!(wp_report_reference(r, 0, &mut s_ref), WpStatus::Ok);
        assert_eq!(wp_report_bound(r, 0, c("unit").as_ptr(), &mut unit), WpStatus::Ok);
        assert_eq!(wp_report_bound(r, 0, c("lin").as_ptr(), &mut lin), WpStatus::Ok);
        assert_eq!(wp_report_bound(r, 0, c("gauss_ref").as_ptr(), &mut lin), WpStatus::OutOfRange);
        assert_eq!(wp_report_bound(r, 9, c("unit").as_ptr(), &mut lin), WpStatus::OutOfRange);
        assert_eq!(wp_report_poince(r, 0, c("gauss_ref").as_ptr(), &mut free, &mut based), WpStatus::Ok);
        assert_eq!(wp_report_poince(r, 0, c("lin").as_ptr(), &mut free, &mut based), WpStatus::CellError);
        assert_eq!(wp_report_to_json(r, &mut json), WpStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        wp_string_free(json);
        wp_report_free(r);
        assert!(text.contains("\"model\": \"toy1\""));
    }
    assert_eq!(d, 5);
    assert_eq!(failures, 5);
    assert!(unit > s_ref && s_ref > 0.0);
}

#[test]
fn sobol_totals_into_a_buffer() {
    let model = c("toy2");
    let mut values = [0.0; 5];
    let mut dim = 0;
    let status = unsafe { wp_sobol_total(model.as_ptr(), 2000, 3, values.as_mut_ptr(), values.len(), &mut dim) };
    assert_eq!(status, WpStatus::Ok);
    assert_eq!(dim, 5);
    assert!(values.iter().all(|v| v.is_finite()));
    let mut short = [0.0; 2];
    let status = unsafe { wp_sobol_total(model.as_ptr(), 2000, 3, short.as_mut_ptr(), short.len(), &mut dim) };
    assert_eq!(status, WpStatus::OutOfRange);
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(wp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/wpgsa.h");
    let source = include_str!("../src/lib.rs");
    for line in source.lines().filter(|l| l.contains("extern \"C\" fn ")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(header.contains(&format!("{name}(")), "{name} missing from the header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", concat!(env!("CARGO_MANIFEST_DIR"), "/include/wpgsa.h")])
        .status()
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(status.success());
}
