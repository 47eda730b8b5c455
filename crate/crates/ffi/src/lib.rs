//! C interface to `hypercone`.
//!
//! Objects cross the boundary as opaque handles created by the `hc_family_*`
//! and `hc_symmetrizer_*` constructors and released with the matching
//! `*_free`. Every fallible call returns an [`HcStatus`]; on failure, [`hc_last_error`] yields a
//! message valid until the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use hypercone::cli::{self, CliError, Command, LoadedConfig, RunOptions};
use hypercone::coefficients::{CoefficientFamily, ConeRadii};
use hypercone::matcore::Mat;
use hypercone::symmetrizer::Symmetrizer;
use libc::{c_char, c_int, size_t};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Precondition = 3,
    Runtime = 4,
    CheckFailed = 5,
    Panic = 6,
}

/// Coefficient family `t ↦ (A_1(t), …, A_n(t))`.
pub struct HcFamily {
    inner: CoefficientFamily,
}

/// Symmetrizer `S(t, ξ)` with its bounds.
pub struct HcSymmetrizer {
    inner: Symmetrizer,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: HcStatus, msg: impl Into<String>) -> HcStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> HcStatus) -> HcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == HcStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(HcStatus::Panic, "internal panic"),
    }
}

/// Message for the most recent failure on this thread; empty after success.
#[no_mangle]
pub extern "C" fn hc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn matrices(n: size_t, m: size_t, data: *const f64) -> Result<Vec<Mat>, HcStatus> {
    if data.is_null() {
        return Err(fail(HcStatus::NullPointer, "matrix data is null"));
    }
    if n == 0 || m == 0 || m > hypercone::matcore::MAX_DIM {
        return Err(fail(HcStatus::InvalidArgument, format!("bad dimensions n = {n}, m = {m}")));
    }
    let all = std::slice::from_raw_parts(data, n * m * m);
    all.chunks(m * m).map(|c| Mat::from_real(m, c).map_err(|e| fail(HcStatus::InvalidArgument, e.to_string()))).collect()
}

fn store<T>(out: *mut *mut T, value: T) -> HcStatus {
    unsafe { *out = Box::into_raw(Box::new(value)) };
    HcStatus::Ok
}

fn family_result(out: *mut *mut HcFamily, r: Result<CoefficientFamily, impl std::fmt::Display>) -> HcStatus {
    match r {
        Ok(inner) => store(out, HcFamily { inner }),
        Err(e) => fail(HcStatus::InvalidArgument, e.to_string()),
    }
}

/// Constant coefficients. `matrices` holds `n` row-major `m×m` blocks.
///
/// # Safety
/// `matrices` must point to `n·m·m` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hc_family_constant(n: size_t, m: size_t, matrices_ptr: *const f64, t_final: f64, out: *mut *mut HcFamily) -> HcStatus {
    guard(|| {
        if out.is_null() {
            return fail(HcStatus::NullPointer, "out is null");
        }
        match matrices(n, m, matrices_ptr) {
            Ok(b) => family_result(out, CoefficientFamily::constant(b, t_final)),
            Err(s) => s,
        }
    })
}

/// Oscillatory coefficients `B_j (1 + ½ sin ωt)`.
///
/// # Safety
/// As for [`hc_family_constant`].
#[no_mangle]
pub unsafe extern "C" fn hc_family_smooth(n: size_t, m: size_t, matrices_ptr: *const f64, omega: f64, t_final: f64, out: *mut *mut HcFamily) -> HcStatus {
    guard(|| {
        if out.is_null() {
            return fail(HcStatus::NullPointer, "out is null");
        }
        match matrices(n, m, matrices_ptr) {
            Ok(b) => family_result(out, CoefficientFamily::smooth(b, omega, t_final)),
            Err(s) => s,
        }
    })
}

/// # Safety
/// `family` must come from an `hc_family_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn hc_family_free(family: *mut HcFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

/// `α(t) = Σ_j ‖A_j(t)‖`.
///
/// # Safety
/// `family` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_family_alpha(family: *const HcFamily, t: f64, out: *mut f64) -> HcStatus {
    guard(|| {
        let (Some(f), false) = (family.as_ref(), out.is_null()) else {
            return fail(HcStatus::NullPointer, "null argument");
        };
        match f.inner.alpha(t) {
            Ok(a) => {
                *out = a;
                HcStatus::Ok
            }
            Err(e) => fail(HcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Forward and backward cone radii `r(t)`, `ϱ(t)` for data radius `r0`.
///
/// # Safety
/// `family` must be a live handle; `forward` and `backward` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_cone_radii(family: *const HcFamily, r0: f64, big_lambda: f64, t: f64, forward: *mut f64, backward: *mut f64) -> HcStatus {
    guard(|| {
        let Some(f) = family.as_ref() else {
            return fail(HcStatus::NullPointer, "family is null");
        };
        if forward.is_null() || backward.is_null() {
            return fail(HcStatus::NullPointer, "output is null");
        }
        let radii = match ConeRadii::new(&f.inner, r0, big_lambda) {
            Ok(r) => r,
            Err(e) => return fail(HcStatus::InvalidArgument, e.to_string()),
        };
        match (radii.forward(t), radii.backward(t)) {
            (Ok(a), Ok(b)) => {
                *forward = a;
                *backward = b;
                HcStatus::Ok
            }
            (Err(e), _) | (_, Err(e)) => fail(HcStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// `S ≡ Id` of size `m`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hc_symmetrizer_identity(m: size_t, t_final: f64, out: *mut *mut HcSymmetrizer) -> HcStatus {
    guard(|| {
        if out.is_null() {
            return fail(HcStatus::NullPointer, "out is null");
        }
        if m == 0 || m > hypercone::matcore::MAX_DIM || !(t_final > 0.0) {
            return fail(HcStatus::InvalidArgument, "bad size or horizon");
        }
        store(out, HcSymmetrizer { inner: Symmetrizer::identity(m, t_final) })
    })
}

/// Eigenprojector symmetrizer for strictly hyperbolic coefficients.
///
/// # Safety
/// `family` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_symmetrizer_build_strict(family: *const HcFamily, out: *mut *mut HcSymmetrizer) -> HcStatus {
    guard(|| {
        let (Some(f), false) = (family.as_ref(), out.is_null()) else {
            return fail(HcStatus::NullPointer, "null argument");
        };
        match Symmetrizer::build_strict(&f.inner) {
            Ok(inner) => store(out, HcSymmetrizer { inner }),
            Err(e) => fail(HcStatus::Precondition, e.to_string()),
        }
    })
}

/// # Safety
/// `s` must come from an `hc_symmetrizer_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn hc_symmetrizer_free(s: *mut HcSymmetrizer) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Declared bounds `λ ≤ S ≤ Λ`.
///
/// # Safety
/// `s` must be a live handle; `lambda` and `big_lambda` writable.
#[no_mangle]
pub unsafe extern "C" fn hc_symmetrizer_bounds(s: *const HcSymmetrizer, lambda: *mut f64, big_lambda: *mut f64) -> HcStatus {
    guard(|| {
        let Some(s) = s.as_ref() else {
            return fail(HcStatus::NullPointer, "symmetrizer is null");
        };
        if lambda.is_null() || big_lambda.is_null() {
            return fail(HcStatus::NullPointer, "output is null");
        }
        *lambda = s.inner.lambda();
        *big_lambda = s.inner.big_lambda();
        HcStatus::Ok
    })
}

/// Writes `S(t, ξ)` row-major into `re` and `im`, each of length `m·m`.
///
/// # Safety
/// `xi` must hold `n` doubles; `re` and `im` must hold `m·m` doubles.
#[no_mangle]
pub unsafe extern "C" fn hc_symmetrizer_eval(s: *const HcSymmetrizer, t: f64, xi: *const f64, n: size_t, re: *mut f64, im: *mut f64) -> HcStatus {
    guard(|| {
        let Some(s) = s.as_ref() else {
            return fail(HcStatus::NullPointer, "symmetrizer is null");
        };
        if xi.is_null() || re.is_null() || im.is_null() {
            return fail(HcStatus::NullPointer, "null buffer");
        }
        let xi = std::slice::from_raw_parts(xi, n);
        match s.inner.eval(t, xi) {
            Ok(mat) => {
                for (k, z) in mat.as_slice().iter().enumerate() {
                    *re.add(k) = z.re;
                    *im.add(k) = z.im;
                }
                HcStatus::Ok
            }
            Err(e) => fail(HcStatus::Runtime, e.to_string()),
        }
    })
}

unsafe fn path_arg(p: *const c_char) -> Result<Option<PathBuf>, HcStatus> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p).to_str().map(|s| Some(PathBuf::from(s))).map_err(|_| fail(HcStatus::InvalidArgument, "path is not UTF-8"))
}

/// Runs the full experiment described by a JSON config and writes its
/// reports to `out_dir` (or the config's own output directory when null).
/// `threads = 0` uses the global pool. Returns `CheckFailed` when the run
/// completes but a check fails.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out_dir` may be null.
#[no_mangle]
pub unsafe extern "C" fn hc_run_config(config_path: *const c_char, out_dir: *const c_char, threads: size_t, seed: u64, use_seed: c_int) -> HcStatus {
    guard(|| {
        let config = match path_arg(config_path) {
            Ok(Some(p)) => p,
            Ok(None) => return fail(HcStatus::NullPointer, "config path is null"),
            Err(s) => return s,
        };
        let out = match path_arg(out_dir) {
            Ok(o) => o,
            Err(s) => return s,
        };
        let opts = RunOptions { out, seed: (use_seed != 0).then_some(seed), checks: Vec::new() };
        let result = LoadedConfig::from_path(&config)
            .and_then(|cfg| cli::with_threads((threads > 0).then_some(threads), || cli::execute(Command::Run, &cfg, &opts)).and_then(|r| r));
        match result {
            Ok(outcome) if outcome.pass() => HcStatus::Ok,
            Ok(outcome) => {
                let failed: Vec<&str> = outcome.checks.iter().filter(|(_, p)| !**p).map(|(k, _)| k.as_str()).collect();
                fail(HcStatus::CheckFailed, format!("checks failed: {}", failed.join(", ")))
            }
            Err(e @ CliError::Config(_)) => fail(HcStatus::InvalidArgument, e.to_string()),
            Err(e @ CliError::Precondition(_)) => fail(HcStatus::Precondition, e.to_string()),
            Err(e @ CliError::Runtime(_)) => fail(HcStatus::Runtime, e.to_string()),
        }
    })
}
