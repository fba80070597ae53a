use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use moment_cluster_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mc_last_error()) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn explicit_mixture_round_trips_means() {
    let means = [0.0, 0.0, 10.0, 0.0];
    let weights = [0.5, 0.5];
    let base = cstr("gaussian");
    let mut mix = ptr::null_mut();
    unsafe {
        assert_eq!(mc_mixture_new(2, 2, means.as_ptr(), weights.as_ptr(), base.as_ptr(), &mut mix), McStatus::Ok);
        let (mut k, mut d) = (0, 0);
        assert_eq!(mc_mixture_shape(mix, &mut k, &mut d), McStatus::Ok);
        assert_eq!((k, d), (2, 2));
        let mut out = [0.0; 4];
        assert_eq!(mc_mixture_means(mix, out.as_mut_ptr(), 4), McStatus::Ok);
        assert_eq!(out, means);
        assert_eq!(mc_mixture_means(mix, out.as_mut_ptr(), 3), McStatus::InvalidArgument);
        assert!(last_error().contains("need 4"));
        mc_mixture_free(mix);
    }
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let base = cstr("cauchy");
    let mut mix = ptr::null_mut();
    unsafe {
        assert_eq!(mc_mixture_generate(2, 2, 10.0, base.as_ptr(), 1, &mut mix), McStatus::Config);
        assert!(mix.is_null());
        assert!(last_error().contains("cauchy"));
        assert_eq!(mc_mixture_generate(2, 2, 10.0, ptr::null(), 1, &mut mix), McStatus::NullPointer);
        assert_eq!(mc_mixture_shape(ptr::null(), ptr::null_mut(), ptr::null_mut()), McStatus::NullPointer);
        let w = [1.0];
        let m = [0.0];
        let g = cstr("gaussian");
        assert_eq!(mc_mixture_new(0, 1, m.as_ptr(), w.as_ptr(), g.as_ptr(), &mut mix), McStatus::InvalidArgument);
        mc_mixture_free(ptr::null_mut());
        mc_result_free(ptr::null_mut());
    }
}

#[test]
fn sampling_is_seeded() {
    let base = cstr("laplace");
    let mut mix = ptr::null_mut();
    unsafe {
        assert_eq!(mc_mixture_generate(3, 2, 8.0, base.as_ptr(), 7, &mut mix), McStatus::Ok);
        let mut a = vec![0.0; 200];
        let mut b = vec![0.0; 200];
        let mut labels = vec![0usize; 100];
        assert_eq!(mc_mixture_sample(mix, 3, 100, a.as_mut_ptr(), labels.as_mut_ptr()), McStatus::Ok);
        assert_eq!(mc_mixture_sample(mix, 3, 100, b.as_mut_ptr(), ptr::null_mut()), McStatus::Ok);
        assert_eq!(a, b);
        assert!(labels.iter().all(|&l| l < 3));
        mc_mixture_free(mix);
    }
}

#[test]
fn poincare_learner_recovers_point_masses() {
    let means = [0.0, 0.0, 12.0, 0.0, 6.0, 10.392304845413264];
    let weights = [1.0 / 3.0; 3];
    let base = cstr("point_mass");
    let params = cstr(r#"{"k":3,"w_min":0.25,"sep":12.0,"alpha":2.5,"t":2,"probes":90,"batch":60,"seed":5}"#);
    let mut mix = ptr::null_mut();
    let mut res = ptr::null_mut();
    unsafe {
        assert_eq!(mc_mixture_new(3, 2, means.as_ptr(), weights.as_ptr(), base.as_ptr(), &mut mix), McStatus::Ok);
        let st = mc_learn_poincare(mix, params.as_ptr(), &mut res);
        assert_eq!(st, McStatus::Ok, "{}", last_error());
        let (mut k, mut d) = (0, 0);
        mc_result_shape(res, &mut k, &mut d);
        assert_eq!((k, d), (3, 2));
        let mut learned = [0.0; 6];
        let mut w = [0.0; 3];
        assert_eq!(mc_result_means(res, learned.as_mut_ptr(), 6), McStatus::Ok);
        assert_eq!(mc_result_weights(res, w.as_mut_ptr(), 3), McStatus::Ok);
        for truth in means.chunks(2) {
            let best = learned.chunks(2).map(|m| (m[0] - truth[0]).hypot(m[1] - truth[1])).fold(f64::INFINITY, f64::min);
            assert!(best < 0.25, "{learned:?}");
        }
        let (mut idx, mut amb) = (usize::MAX, 9u8);
        assert_eq!(mc_result_assign(res, means[2..4].as_ptr(), 2, &mut idx, &mut amb), McStatus::Ok);
        assert_eq!(amb, 0);
        assert!((learned[2 * idx] - 12.0).abs() < 0.25);
        assert_eq!(mc_result_assign(res, means.as_ptr(), 3, &mut idx, &mut amb), McStatus::InvalidArgument);
        mc_result_free(res);
        mc_mixture_free(mix);
    }
}

#[test]
fn malformed_params_are_config_errors() {
    let base = cstr("gaussian");
    let params = cstr(r#"{"k":2,"bogus":1}"#);
    let mut mix = ptr::null_mut();
    let mut res = ptr::null_mut();
    unsafe {
        mc_mixture_generate(2, 2, 10.0, base.as_ptr(), 1, &mut mix);
        assert_eq!(mc_learn_poincare(mix, params.as_ptr(), &mut res), McStatus::Config);
        assert_eq!(mc_cluster_gaussian(mix, params.as_ptr(), &mut res), McStatus::Config);
        assert!(res.is_null());
        mc_mixture_free(mix);
    }
}

#[test]
fn validate_runs_a_suite() {
    let suite = cstr("hermite");
    let mut pass = 0u8;
    unsafe {
        assert_eq!(mc_validate(suite.as_ptr(), 1, 1.0, &mut pass), McStatus::Ok);
        assert_eq!(pass, 1);
        let bad = cstr("nope");
        assert_eq!(mc_validate(bad.as_ptr(), 1, 1.0, &mut pass), McStatus::Config);
    }
}

#[test]
fn header_declares_the_api_and_parses_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/moment_cluster.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["mc_last_error", "mc_mixture_new", "mc_mixture_generate", "mc_mixture_sample", "mc_learn_poincare", "mc_cluster_gaussian", "mc_result_means", "mc_result_assign", "mc_validate", "MC_STATUS_PANIC"] {
        assert!(text.contains(name), "{name} missing");
    }
    if let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c", "-std=c99"]).arg(&header).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
