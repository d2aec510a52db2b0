// SPDX-License-Identifier: Apache-2.0

use std::ffi::{CStr, CString};
use std::ptr;

use spguard_ffi::*;

fn last_error() -> String {
    let p = spg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(spg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn cosine_and_error_reporting() {
    let (a, b) = ([1.0, 1.0], [1.0, 0.0]);
    let mut v = 0.0;
    assert_eq!(unsafe { spg_cosine_sim(a.as_ptr(), b.as_ptr(), 2, &mut v) }, SpgStatus::Ok);
    assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    assert!(spg_last_error().is_null());

    assert_eq!(unsafe { spg_cosine_sim(ptr::null(), b.as_ptr(), 2, &mut v) }, SpgStatus::NullPointer);
    assert!(last_error().contains("a"));
    assert_eq!(unsafe { spg_cosine_sim(a.as_ptr(), b.as_ptr(), 0, &mut v) }, SpgStatus::Contract);
    assert!(last_error().contains("empty"));
}

#[test]
fn percentile_and_mask() {
    let x: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    let mut t = 0.0;
    assert_eq!(unsafe { spg_percentile_threshold(x.as_ptr(), x.len(), 0.9, &mut t) }, SpgStatus::Ok);
    assert_eq!(t, 0.9);
    assert_eq!(unsafe { spg_percentile_threshold(x.as_ptr(), x.len(), 1.0, &mut t) }, SpgStatus::Config);

    // 1×2×2 directions: only the largest |Δc_S| entry passes q = 0.5 twice over
    let p = [1.0, -1.0, 2.0, 0.5];
    let s = [0.1, -3.0, 2.0, 0.2];
    let mut m = [f64::NAN; 4];
    assert_eq!(unsafe { spg_spguard_mask(p.as_ptr(), s.as_ptr(), 1, 2, 2, 0.5, 0, m.as_mut_ptr()) }, SpgStatus::Ok);
    // single channel: ψ = ±1, so on-entries carry 1 + |ψ| = 2
    assert_eq!(m, [0.0, 2.0, 2.0, 0.0]);
    assert_eq!(
        unsafe { spg_spguard_mask(p.as_ptr(), s.as_ptr(), 0, 2, 2, 0.5, 0, m.as_mut_ptr()) },
        SpgStatus::Config
    );
}

#[test]
fn world_method_sample_detect() {
    let mut w: *mut SpgWorld = ptr::null_mut();
    assert_eq!(unsafe { spg_world_new_default(&mut w) }, SpgStatus::Ok);
    let (mut c, mut h, mut wd) = (0, 0, 0);
    assert_eq!(unsafe { spg_world_shape(w, &mut c, &mut h, &mut wd) }, SpgStatus::Ok);
    assert_eq!((c, h, wd), (3, 16, 16));
    let n = c * h * wd;

    let mut cfg: *mut SpgMethod = ptr::null_mut();
    let mut sp: *mut SpgMethod = ptr::null_mut();
    let name = CString::new("cfg").unwrap();
    assert_eq!(unsafe { spg_method_builtin(name.as_ptr(), 7.5, &mut cfg) }, SpgStatus::Ok);
    let toml = CString::new("name = \"SP\"\nvariant = \"spguard\"\ns_g = 7.5\n").unwrap();
    assert_eq!(unsafe { spg_method_from_toml(toml.as_ptr(), &mut sp) }, SpgStatus::Ok);

    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    assert_eq!(unsafe { spg_sample(w, cfg, 1.0, 3, 0, a.as_mut_ptr(), n) }, SpgStatus::Ok);
    assert_eq!(unsafe { spg_sample(w, sp, 1.0, 3, 0, b.as_mut_ptr(), n) }, SpgStatus::Ok);
    let (mut sa, mut sb, mut d) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { spg_detector_score(w, a.as_ptr(), n, &mut sa) }, SpgStatus::Ok);
    assert_eq!(unsafe { spg_detector_score(w, b.as_ptr(), n, &mut sb) }, SpgStatus::Ok);
    assert!(sa > sb, "{sa} vs {sb}");
    assert_eq!(unsafe { spg_preservation_distance(a.as_ptr(), b.as_ptr(), n, &mut d) }, SpgStatus::Ok);
    assert!(d > 0.0);

    // same call twice is bit-identical
    let mut again = vec![0.0; n];
    assert_eq!(unsafe { spg_sample(w, cfg, 1.0, 3, 0, again.as_mut_ptr(), n) }, SpgStatus::Ok);
    assert_eq!(a, again);

    assert_eq!(unsafe { spg_sample(w, cfg, 1.0, 3, 0, a.as_mut_ptr(), n - 1) }, SpgStatus::Contract);
    assert_eq!(unsafe { spg_sample(w, cfg, 1.5, 3, 0, a.as_mut_ptr(), n) }, SpgStatus::Config);
    assert!(last_error().contains("outside [0, 1]"));
    assert_eq!(unsafe { spg_sample(ptr::null(), cfg, 1.0, 3, 0, a.as_mut_ptr(), n) }, SpgStatus::NullPointer);

    unsafe {
        spg_method_free(cfg);
        spg_method_free(sp);
        spg_method_free(ptr::null_mut());
        spg_world_free(w);
        spg_world_free(ptr::null_mut());
    }
}

#[test]
fn config_errors_from_toml_handles() {
    let mut w: *mut SpgWorld = ptr::null_mut();
    let bad = CString::new("shape = [3, 16]").unwrap();
    assert_eq!(unsafe { spg_world_from_toml(bad.as_ptr(), &mut w) }, SpgStatus::Config);
    assert!(w.is_null());
    assert!(last_error().contains("line"));

    let mut m: *mut SpgMethod = ptr::null_mut();
    let name = CString::new("sld-extreme").unwrap();
    assert_eq!(unsafe { spg_method_builtin(name.as_ptr(), 7.5, &mut m) }, SpgStatus::Config);
    let name = CString::new("sld-max").unwrap();
    assert_eq!(unsafe { spg_method_builtin(name.as_ptr(), 7.5, &mut m) }, SpgStatus::Ok);
    unsafe { spg_method_free(m) };
}
