//! C ABI over the moment-cluster library.
//!
//! Objects cross the boundary as opaque handles created by `mc_*_new`-style
//! functions and released by the matching `*_free`. Every fallible call
//! returns an `McStatus`; on failure `mc_last_error` returns a message valid
//! until the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use moment_cluster::base::BaseDist;
use moment_cluster::gaussian::{recursive_cluster, GmmParams};
use moment_cluster::mixture::{build_spec, GenConfig, MixtureSampler, MixtureSpec, SeparationProfile, WeightProfile};
use moment_cluster::poincare::{assign_sample, learn_means, LearnParams};
use moment_cluster::rng::Stream;
use moment_cluster::sampler::{draw_many_labeled, BaseSampler, SharedSampler};
use moment_cluster::validate::run_suite;
use moment_cluster::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    AlgorithmFailed = 5,
    Io = 6,
    Panic = 7,
}

/// A mixture specification with its sampler.
pub struct McMixture {
    spec: MixtureSpec,
}

/// Learned means and weights.
pub struct McResult {
    k: usize,
    d: usize,
    means: Vec<f64>,
    weights: Vec<f64>,
    band: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> McStatus {
    match e {
        Error::Config(_) | Error::UnsupportedDistribution(_) | Error::Json(_) => McStatus::Config,
        Error::Shape(_) | Error::InvalidIndex(_) | Error::Arity { .. } | Error::SizeLimit(_) => McStatus::InvalidArgument,
        Error::Numeric(_) => McStatus::Numeric,
        Error::Io(_) | Error::Csv(_) => McStatus::Io,
        _ => McStatus::AlgorithmFailed,
    }
}

/// Runs `f`, translating errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (McStatus, String)>) -> McStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            McStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            McStatus::Panic
        }
    }
}

fn lib<T>(r: moment_cluster::Result<T>) -> Result<T, (McStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (McStatus, String) {
    (McStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (McStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (McStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn parse_base(tag: *const c_char) -> Result<BaseDist, (McStatus, String)> {
    lib(c_str(tag, "base tag")?.parse::<BaseDist>())
}

/// Message for the last failed call on this thread (empty after success).
#[no_mangle]
pub extern "C" fn mc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// A mixture from explicit means (row-major k × d) and weights (length k).
///
/// # Safety
/// `means` must hold k·d doubles, `weights` k doubles, `base` a NUL-terminated
/// tag (gaussian, laplace, uniform_cube, point_mass) and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_mixture_new(k: usize, d: usize, means: *const f64, weights: *const f64, base: *const c_char, out: *mut *mut McMixture) -> McStatus {
    guard(|| {
        if means.is_null() || weights.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        if k == 0 || d == 0 {
            return Err((McStatus::InvalidArgument, "k and d must be positive".into()));
        }
        let flat = std::slice::from_raw_parts(means, k * d);
        let w = std::slice::from_raw_parts(weights, k).to_vec();
        let spec = lib(MixtureSpec::new(w, flat.chunks(d).map(<[f64]>::to_vec).collect(), parse_base(base)?))?;
        *out = Box::into_raw(Box::new(McMixture { spec }));
        Ok(())
    })
}

/// A synthetic mixture with uniform weights and pairwise mean distances in
/// [sep, 1.2·sep].
///
/// # Safety
/// `base` must be a NUL-terminated tag and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mc_mixture_generate(k: usize, d: usize, sep: f64, base: *const c_char, seed: u64, out: *mut *mut McMixture) -> McStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = GenConfig { k, d, separation: SeparationProfile::Uniform { sep }, weights: WeightProfile::Uniform, base: parse_base(base)?, seed };
        let spec = lib(build_spec(&cfg))?;
        *out = Box::into_raw(Box::new(McMixture { spec }));
        Ok(())
    })
}

/// # Safety
/// `mix` must come from a constructor above (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mc_mixture_free(mix: *mut McMixture) {
    if !mix.is_null() {
        drop(Box::from_raw(mix));
    }
}

/// # Safety
/// `mix` must be a live handle; `k` and `d` writable.
#[no_mangle]
pub unsafe extern "C" fn mc_mixture_shape(mix: *const McMixture, k: *mut usize, d: *mut usize) -> McStatus {
    guard(|| {
        let m = mix.as_ref().ok_or_else(|| null("mix"))?;
        if k.is_null() || d.is_null() {
            return Err(null("out"));
        }
        *k = m.spec.k();
        *d = m.spec.d();
        Ok(())
    })
}

/// Copies the true means (row-major, k·d doubles) into `out`.
///
/// # Safety
/// `mix` must be a live handle and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mc_mixture_means(mix: *const McMixture, out: *mut f64, len: usize) -> McStatus {
    guard(|| {
        let m = mix.as_ref().ok_or_else(|| null("mix"))?;
        let flat: Vec<f64> = m.spec.means.concat();
        copy_out(&flat, out, len)
    })
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), (McStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < src.len() {
        return Err((McStatus::InvalidArgument, format!("buffer of {len} doubles, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Draws `n` labeled samples: `x` receives n·d doubles row-major, `labels`
/// (may be null) n component indices.
///
/// # Safety
/// `mix` must be a live handle, `x` hold n·d doubles and `labels` n entries.
#[no_mangle]
pub unsafe extern "C" fn mc_mixture_sample(mix: *const McMixture, seed: u64, n: usize, x: *mut f64, labels: *mut usize) -> McStatus {
    guard(|| {
        let m = mix.as_ref().ok_or_else(|| null("mix"))?;
        if x.is_null() {
            return Err(null("x"));
        }
        let draws = lib(draw_many_labeled(&MixtureSampler::new(m.spec.clone()), Stream::new(seed, 0), 0, n))?;
        let d = m.spec.d();
        for (i, (row, label)) in draws.iter().enumerate() {
            ptr::copy_nonoverlapping(row.as_ptr(), x.add(i * d), d);
            if !labels.is_null() {
                *labels.add(i) = label.unwrap_or(usize::MAX);
            }
        }
        Ok(())
    })
}

fn result_from(means: Vec<Vec<f64>>, weights: Vec<f64>, d: usize, band: f64) -> McResult {
    McResult { k: means.len(), d, means: means.concat(), weights, band }
}

/// Runs the Poincaré learner on samples from `mix`. `params_json` holds
/// learner parameters as JSON (null for defaults).
///
/// # Safety
/// `mix` must be a live handle, `params_json` null or NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mc_learn_poincare(mix: *const McMixture, params_json: *const c_char, out: *mut *mut McResult) -> McStatus {
    guard(|| {
        let m = mix.as_ref().ok_or_else(|| null("mix"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p: LearnParams = if params_json.is_null() { LearnParams::default() } else { lib(serde_json::from_str(c_str(params_json, "params")?).map_err(Error::from))? };
        let sampler: SharedSampler = Arc::new(MixtureSampler::new(m.spec.clone()));
        let base: SharedSampler = Arc::new(BaseSampler::new(m.spec.base, m.spec.d()));
        let (learned, _) = lib(learn_means(sampler, base, &p))?;
        let band = learned.meta.band;
        *out = Box::into_raw(Box::new(result_from(learned.means, learned.weights, m.spec.d(), band)));
        Ok(())
    })
}

/// Runs the recursive Gaussian clustering on samples from `mix`.
///
/// # Safety
/// As for `mc_learn_poincare`.
#[no_mangle]
pub unsafe extern "C" fn mc_cluster_gaussian(mix: *const McMixture, params_json: *const c_char, out: *mut *mut McResult) -> McStatus {
    guard(|| {
        let m = mix.as_ref().ok_or_else(|| null("mix"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p: GmmParams = if params_json.is_null() { GmmParams::default() } else { lib(serde_json::from_str(c_str(params_json, "params")?).map_err(Error::from))? };
        let sampler: SharedSampler = Arc::new(MixtureSampler::new(m.spec.clone()));
        let o = lib(recursive_cluster(sampler, &p, None))?;
        if let Some(e) = o.error {
            return Err((McStatus::AlgorithmFailed, e));
        }
        let band = p.constants.cluster_band * p.sep;
        *out = Box::into_raw(Box::new(result_from(o.learned.means, o.learned.weights, m.spec.d(), band)));
        Ok(())
    })
}

/// # Safety
/// `res` must come from a learner above (or be null) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mc_result_free(res: *mut McResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// # Safety
/// `res` must be a live handle; `k` and `d` writable.
#[no_mangle]
pub unsafe extern "C" fn mc_result_shape(res: *const McResult, k: *mut usize, d: *mut usize) -> McStatus {
    guard(|| {
        let r = res.as_ref().ok_or_else(|| null("result"))?;
        if k.is_null() || d.is_null() {
            return Err(null("out"));
        }
        *k = r.k;
        *d = r.d;
        Ok(())
    })
}

/// Copies the learned means (row-major, k·d doubles).
///
/// # Safety
/// `res` must be a live handle and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mc_result_means(res: *const McResult, out: *mut f64, len: usize) -> McStatus {
    guard(|| copy_out(&res.as_ref().ok_or_else(|| null("result"))?.means, out, len))
}

/// Copies the learned weights (k doubles).
///
/// # Safety
/// `res` must be a live handle and `out` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mc_result_weights(res: *const McResult, out: *mut f64, len: usize) -> McStatus {
    guard(|| copy_out(&res.as_ref().ok_or_else(|| null("result"))?.weights, out, len))
}

/// Assigns one point to a learned component; `ambiguous` (may be null) is
/// set to 1 when the minimax fallback decided.
///
/// # Safety
/// `res` must be a live handle, `x` hold d doubles, `index` writable.
#[no_mangle]
pub unsafe extern "C" fn mc_result_assign(res: *const McResult, x: *const f64, d: usize, index: *mut usize, ambiguous: *mut u8) -> McStatus {
    guard(|| {
        let r = res.as_ref().ok_or_else(|| null("result"))?;
        if x.is_null() || index.is_null() {
            return Err(null("argument"));
        }
        if d != r.d {
            return Err((McStatus::InvalidArgument, format!("point of dimension {d}, result has {}", r.d)));
        }
        let means: Vec<Vec<f64>> = r.means.chunks(r.d.max(1)).map(<[f64]>::to_vec).collect();
        let a = lib(assign_sample(std::slice::from_raw_parts(x, d), &means, r.band))?;
        *index = a.index;
        if !ambiguous.is_null() {
            *ambiguous = a.ambiguous as u8;
        }
        Ok(())
    })
}

/// Runs one validation suite by name; `pass` receives 1 or 0.
///
/// # Safety
/// `suite` must be NUL-terminated and `pass` writable.
#[no_mangle]
pub unsafe extern "C" fn mc_validate(suite: *const c_char, seed: u64, scale: f64, pass: *mut u8) -> McStatus {
    guard(|| {
        if pass.is_null() {
            return Err(null("pass"));
        }
        let r = lib(run_suite(c_str(suite, "suite")?, seed, scale))?;
        *pass = r.pass as u8;
        if !r.pass {
            set_error(&r.notes.join("; "));
        }
        Ok(())
    })
}
