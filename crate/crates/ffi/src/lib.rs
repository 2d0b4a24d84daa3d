//! C ABI over `rescon`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every fallible call returns an [`RcStatus`]; on
//! failure [`rescon_last_error`] describes the cause. Matrices cross the
//! boundary row-major in caller-owned buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use rescon::attacks::{optimal_setpoint_attack, AttackOptions, Direction};
use rescon::model::{build_discrete, DiscreteModel, ModelConfig};
use rescon::reachability::{UnsafeDecl, UnsafeSet};
use rescon::synthesis::{
    default_a_grid, parse_a_grid, synthesize, verify_certificate, ResilientResult,
    SynthesisProblem, VerifyOptions,
};
use rescon::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// No grid point admits a certificate.
    Infeasible = 3,
    /// A certificate check failed.
    VerificationFailed = 4,
    /// Caller buffer shorter than required.
    BufferTooSmall = 5,
    Numerical = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcDirection {
    Minimize = 0,
    Maximize = 1,
}

/// A built power-system model: parameters plus ZOH matrices.
pub struct RcModel {
    config: ModelConfig,
    disc: DiscreteModel,
}

/// A synthesized certificate.
pub struct RcResult {
    inner: ResilientResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_for(err: &Error) -> RcStatus {
    match err {
        Error::Infeasible { .. } => RcStatus::Infeasible,
        Error::Lp(_) | Error::NotPositiveDefinite(_) | Error::Unstable(_) => RcStatus::Numerical,
        _ => RcStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<RcStatus, (RcStatus, String)>) -> RcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => {
            if status == RcStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            status
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RcStatus::Panic
        }
    }
}

fn lib<T>(r: rescon::Result<T>) -> Result<T, (RcStatus, String)> {
    r.map_err(|e| (status_for(&e), e.to_string()))
}

fn null(what: &str) -> (RcStatus, String) {
    (RcStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (RcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (RcStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, (RcStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (RcStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies `src` into a caller buffer of length `len`.
unsafe fn fill(
    dst: *mut f64,
    len: usize,
    src: &[f64],
    what: &str,
) -> Result<(), (RcStatus, String)> {
    if dst.is_null() {
        return Err(null(what));
    }
    if len < src.len() {
        return Err((
            RcStatus::BufferTooSmall,
            format!("`{what}` holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn into_model(config: ModelConfig) -> rescon::Result<RcModel> {
    let (_, disc) = build_discrete(&config)?;
    Ok(RcModel { config, disc })
}

fn unsafe_set(model: &RcModel, text: &str) -> rescon::Result<UnsafeSet> {
    UnsafeDecl::parse(text)?.resolve(model.disc.state_dim())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rescon_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a model from JSON text (model file format).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rescon_model_from_json(
    json: *const c_char,
    out: *mut *mut RcModel,
) -> RcStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let model = lib(ModelConfig::from_json(text).and_then(into_model))?;
        *out = Box::into_raw(Box::new(model));
        Ok(RcStatus::Ok)
    })
}

/// Builds the two-generator, two-storage reference model (`τ = 2 s`).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rescon_model_case_study(out: *mut *mut RcModel) -> RcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = lib(into_model(ModelConfig::case_study()))?;
        *out = Box::into_raw(Box::new(model));
        Ok(RcStatus::Ok)
    })
}

/// # Safety
/// `model` must come from this library and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn rescon_model_free(model: *mut RcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// State dimension `n` and input dimension `m`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rescon_model_dims(
    model: *const RcModel,
    n: *mut usize,
    m: *mut usize,
) -> RcStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        *out_arg(n, "n")? = model.disc.state_dim();
        *out_arg(m, "m")? = model.disc.input_dim();
        Ok(RcStatus::Ok)
    })
}

/// Discrete matrices `A` (n×n), `B` (n×m), `H` (n×1), row-major.
///
/// # Safety
/// Each buffer must hold at least its stated length.
#[no_mangle]
pub unsafe extern "C" fn rescon_model_matrices(
    model: *const RcModel,
    a: *mut f64,
    a_len: usize,
    b: *mut f64,
    b_len: usize,
    h: *mut f64,
    h_len: usize,
) -> RcStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        fill(a, a_len, &row_major(&model.disc.a), "a")?;
        fill(b, b_len, &row_major(&model.disc.b), "b")?;
        fill(h, h_len, &row_major(&model.disc.h), "h")?;
        Ok(RcStatus::Ok)
    })
}

/// Physical setpoint bounds `γ` (m values).
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn rescon_model_physical_bounds(
    model: *const RcModel,
    out: *mut f64,
    len: usize,
) -> RcStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        fill(
            out,
            len,
            &model.config.params.physical_bounds().gamma,
            "out",
        )?;
        Ok(RcStatus::Ok)
    })
}

/// Synthesizes resilient bounds.
///
/// `unsafe_json` is either `frequency_limit:<Hz>` or JSON half-spaces;
/// `a_grid` is `start:step:end`, or null for the default grid. Returns
/// [`RcStatus::Infeasible`] when no grid point admits a certificate.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rescon_synthesize(
    model: *const RcModel,
    unsafe_json: *const c_char,
    a_grid: *const c_char,
    out: *mut *mut RcResult,
) -> RcStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let set = lib(unsafe_set(model, str_arg(unsafe_json, "unsafe_json")?))?;
        let grid = if a_grid.is_null() {
            default_a_grid()
        } else {
            lib(parse_a_grid(str_arg(a_grid, "a_grid")?))?
        };
        let out = out_arg(out, "out")?;
        let problem = lib(SynthesisProblem::new(
            model.disc.clone(),
            model.config.params.physical_bounds(),
            set,
            grid,
        ))?;
        let inner = lib(synthesize(&problem))?;
        *out = Box::into_raw(Box::new(RcResult { inner }));
        Ok(RcStatus::Ok)
    })
}

/// Loads a result saved by `rescon_result_to_json` or the CLI.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rescon_result_from_json(
    json: *const c_char,
    out: *mut *mut RcResult,
) -> RcStatus {
    guard(|| {
        let inner = lib(ResilientResult::from_json(str_arg(json, "json")?))?;
        *out_arg(out, "out")? = Box::into_raw(Box::new(RcResult { inner }));
        Ok(RcStatus::Ok)
    })
}

/// # Safety
/// `result` must come from this library and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn rescon_result_free(result: *mut RcResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Number of input channels `m`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rescon_result_input_dim(
    result: *const RcResult,
    m: *mut usize,
) -> RcStatus {
    guard(|| {
        *out_arg(m, "m")? = ref_arg(result, "result")?.inner.gamma_hat.len();
        Ok(RcStatus::Ok)
    })
}

/// Resilient bounds `γ̂` (m values).
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn rescon_result_gamma_hat(
    result: *const RcResult,
    out: *mut f64,
    len: usize,
) -> RcStatus {
    guard(|| {
        fill(out, len, &ref_arg(result, "result")?.inner.gamma_hat, "out")?;
        Ok(RcStatus::Ok)
    })
}

/// Ellipsoid shape `W` (n×n, row-major).
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn rescon_result_w(
    result: *const RcResult,
    out: *mut f64,
    len: usize,
) -> RcStatus {
    guard(|| {
        fill(
            out,
            len,
            &row_major(&ref_arg(result, "result")?.inner.w),
            "out",
        )?;
        Ok(RcStatus::Ok)
    })
}

/// Selected `a` and objective `Σγ̂`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rescon_result_scalars(
    result: *const RcResult,
    a: *mut f64,
    objective: *mut f64,
) -> RcStatus {
    guard(|| {
        let r = &ref_arg(result, "result")?.inner;
        *out_arg(a, "a")? = r.a;
        *out_arg(objective, "objective")? = r.objective;
        Ok(RcStatus::Ok)
    })
}

/// Serializes a result. Release the string with [`rescon_string_free`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rescon_result_to_json(
    result: *const RcResult,
    out: *mut *mut c_char,
) -> RcStatus {
    guard(|| {
        let text = lib(ref_arg(result, "result")?.inner.to_json())?;
        let c = CString::new(text).map_err(|e| (RcStatus::InvalidArgument, e.to_string()))?;
        *out_arg(out, "out")? = c.into_raw();
        Ok(RcStatus::Ok)
    })
}

/// # Safety
/// `s` must come from this library. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn rescon_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Re-checks a certificate without the solver: PSD checks, safety and
/// bound constraints, plus `trials` sampled trajectories of `horizon`
/// steps. Returns [`RcStatus::VerificationFailed`] if any check fails.
///
/// # Safety
/// Pointers must be valid; `unsafe_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rescon_verify(
    model: *const RcModel,
    result: *const RcResult,
    unsafe_json: *const c_char,
    trials: usize,
    horizon: usize,
    seed: u64,
) -> RcStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        let result = &ref_arg(result, "result")?.inner;
        let set = lib(unsafe_set(model, str_arg(unsafe_json, "unsafe_json")?))?;
        let opts = VerifyOptions {
            trials,
            horizon,
            seed,
            ..VerifyOptions::default()
        };
        let report = lib(verify_certificate(
            &model.disc,
            result,
            &set,
            &model.config.params.physical_bounds(),
            &opts,
        ))?;
        if report.passed() {
            Ok(RcStatus::Ok)
        } else {
            let names: Vec<_> = report.failures().iter().map(|c| c.name.clone()).collect();
            Err((
                RcStatus::VerificationFailed,
                format!("failed checks: {}", names.join(", ")),
            ))
        }
    })
}

/// Worst-case setpoint attack from rest with no disturbance: writes
/// `Δf(horizon)` to `achieved` and, if `signal` is non-null, the
/// `horizon × m` setpoints row-major.
///
/// # Safety
/// `bounds` must hold `bounds_len` values; `signal`, when non-null, `signal_len`.
#[no_mangle]
pub unsafe extern "C" fn rescon_optimal_setpoint_attack(
    model: *const RcModel,
    bounds: *const f64,
    bounds_len: usize,
    horizon: usize,
    direction: RcDirection,
    achieved: *mut f64,
    signal: *mut f64,
    signal_len: usize,
) -> RcStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        if bounds.is_null() {
            return Err(null("bounds"));
        }
        let bounds = std::slice::from_raw_parts(bounds, bounds_len);
        let dir = match direction {
            RcDirection::Minimize => Direction::Minimize,
            RcDirection::Maximize => Direction::Maximize,
        };
        let att = lib(optimal_setpoint_attack(
            &model.disc,
            bounds,
            &AttackOptions::new(horizon, dir),
        ))?;
        *out_arg(achieved, "achieved")? = att.achieved;
        if !signal.is_null() {
            let flat: Vec<f64> = att.signal.iter().flat_map(|u| u.iter().copied()).collect();
            fill(signal, signal_len, &flat, "signal")?;
        }
        Ok(RcStatus::Ok)
    })
}
