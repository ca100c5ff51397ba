//! C ABI over `faf-core`.
//!
//! Every fallible function returns a [`FafStatus`]. On failure the message
//! is available from [`faf_last_error_message`] on the same thread until the
//! next call. Handles are opaque and must be released with their `_free`
//! function; strings returned through `char **` must be released with
//! [`faf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use faf_core::api::{self, BoundsRequest, McOptions};
use faf_core::allocation::AllocateRequest;
use faf_core::model::{trace_frontier, uniform_grid, FrontierPoint, PopulationModel, Weight};
use faf_core::montecarlo::McConfig;
use faf_core::{ErrorClass, FafError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FafStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an undersized output buffer.
    InvalidArgument = 1,
    Validation = 2,
    Numerical = 3,
    Precondition = 4,
    NotFound = 5,
    Conflict = 6,
    Io = 7,
    Panic = 99,
}

/// Opaque population model.
pub struct FafModel {
    inner: PopulationModel,
}

/// Opaque traced frontier.
pub struct FafFrontier {
    points: Vec<FrontierPoint>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: FafStatus, msg: impl Into<String>) -> FafStatus {
    set_error(msg.into());
    status
}

fn from_error(e: FafError) -> FafStatus {
    let status = match e.class() {
        ErrorClass::Validation => FafStatus::Validation,
        ErrorClass::Numerical => FafStatus::Numerical,
        ErrorClass::Precondition => FafStatus::Precondition,
        ErrorClass::NotFound => FafStatus::NotFound,
        ErrorClass::Conflict => FafStatus::Conflict,
        ErrorClass::Io => FafStatus::Io,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), FafStatus>) -> FafStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FafStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(FafStatus::Panic, format!("panic: {msg}"))
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, FafStatus>;
}

impl<T> OrStatus<T> for Result<T, FafError> {
    fn or_status(self) -> Result<T, FafStatus> {
        self.map_err(from_error)
    }
}

impl<T> OrStatus<T> for Result<T, serde_json::Error> {
    fn or_status(self) -> Result<T, FafStatus> {
        self.map_err(|e| from_error(FafError::Json(e)))
    }
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, FafStatus> {
    if p.is_null() {
        return Err(fail(FafStatus::InvalidArgument, format!("{name} is null")));
    }
    // SAFETY: caller passes a nul-terminated string
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(FafStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

fn check_out<T>(p: *mut T, name: &str) -> Result<(), FafStatus> {
    if p.is_null() {
        Err(fail(FafStatus::InvalidArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), FafStatus> {
    check_out(out, "out_json")?;
    let c = CString::new(s).map_err(|_| fail(FafStatus::Panic, "output contains a nul byte"))?;
    // SAFETY: checked non-null above
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn faf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn faf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a model from its JSON form.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn faf_model_from_json(json: *const c_char, out: *mut *mut FafModel) -> FafStatus {
    guard(|| {
        check_out(out, "out")?;
        let text = unsafe { read_str(json, "json") }?;
        let inner = faf_core::io::parse_model(text).or_status()?;
        unsafe { *out = Box::into_raw(Box::new(FafModel { inner })) };
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`faf_model_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn faf_model_free(model: *mut FafModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

unsafe fn model_ref<'a>(model: *const FafModel) -> Result<&'a PopulationModel, FafStatus> {
    if model.is_null() {
        return Err(fail(FafStatus::InvalidArgument, "model is null"));
    }
    Ok(unsafe { &(*model).inner })
}

/// # Safety
/// `model` must be a live handle; `out_dim` must be writable.
#[no_mangle]
pub unsafe extern "C" fn faf_model_dim(model: *const FafModel, out_dim: *mut usize) -> FafStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        check_out(out_dim, "out_dim")?;
        unsafe { *out_dim = m.dim() };
        Ok(())
    })
}

/// Writes β_λ into `out_beta`, which must hold at least `len ≥ d` values.
///
/// # Safety
/// `model` must be a live handle; `out_beta` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn faf_model_optimal_beta(
    model: *const FafModel,
    lambda: f64,
    out_beta: *mut f64,
    len: usize,
) -> FafStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        check_out(out_beta, "out_beta")?;
        if len < m.dim() {
            return Err(fail(FafStatus::InvalidArgument, format!("out_beta holds {len} < d = {} values", m.dim())));
        }
        let beta = m.optimal_beta(Weight::new(lambda).or_status()?).or_status()?;
        let out = unsafe { std::slice::from_raw_parts_mut(out_beta, len) };
        out[..beta.len()].copy_from_slice(beta.as_slice());
        Ok(())
    })
}

/// Population risks `R_r(β)`, `R_b(β)` for `beta` of length `len == d`.
///
/// # Safety
/// `beta` must point to `len` doubles; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn faf_model_risks(
    model: *const FafModel,
    beta: *const f64,
    len: usize,
    out_risk_r: *mut f64,
    out_risk_b: *mut f64,
) -> FafStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        if beta.is_null() {
            return Err(fail(FafStatus::InvalidArgument, "beta is null"));
        }
        check_out(out_risk_r, "out_risk_r")?;
        check_out(out_risk_b, "out_risk_b")?;
        let b = faf_core::nalgebra::DVector::from_column_slice(unsafe { std::slice::from_raw_parts(beta, len) });
        let p = m.risk_pair(&b).or_status()?;
        unsafe {
            *out_risk_r = p.risk_r;
            *out_risk_b = p.risk_b;
        }
        Ok(())
    })
}

/// Traces the frontier on a uniform grid of `grid` weights.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn faf_frontier_trace(model: *const FafModel, grid: usize, out: *mut *mut FafFrontier) -> FafStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        check_out(out, "out")?;
        let points = trace_frontier(m, &uniform_grid(grid).or_status()?).or_status()?;
        unsafe { *out = Box::into_raw(Box::new(FafFrontier { points })) };
        Ok(())
    })
}

/// Number of points; 0 for a null handle.
///
/// # Safety
/// `frontier` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn faf_frontier_len(frontier: *const FafFrontier) -> usize {
    if frontier.is_null() {
        0
    } else {
        unsafe { (*frontier).points.len() }
    }
}

/// # Safety
/// `frontier` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn faf_frontier_point(
    frontier: *const FafFrontier,
    index: usize,
    out_lambda: *mut f64,
    out_risk_r: *mut f64,
    out_risk_b: *mut f64,
) -> FafStatus {
    guard(|| {
        if frontier.is_null() {
            return Err(fail(FafStatus::InvalidArgument, "frontier is null"));
        }
        check_out(out_lambda, "out_lambda")?;
        check_out(out_risk_r, "out_risk_r")?;
        check_out(out_risk_b, "out_risk_b")?;
        let pts = unsafe { &(*frontier).points };
        let p = pts
            .get(index)
            .ok_or_else(|| fail(FafStatus::InvalidArgument, format!("index {index} out of range 0..{}", pts.len())))?;
        unsafe {
            *out_lambda = p.lambda.value();
            *out_risk_r = p.risks.risk_r;
            *out_risk_b = p.risks.risk_b;
        }
        Ok(())
    })
}

/// # Safety
/// `frontier` must come from [`faf_frontier_trace`] or be null.
#[no_mangle]
pub unsafe extern "C" fn faf_frontier_free(frontier: *mut FafFrontier) {
    if !frontier.is_null() {
        drop(unsafe { Box::from_raw(frontier) });
    }
}

/// Runs a Monte Carlo analysis. `config_json` is an MC config,
/// `options_json` selects the analysis and may be null. The report is
/// returned in `out_json`.
///
/// # Safety
/// String arguments must be nul-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn faf_mc_run_json(
    config_json: *const c_char,
    options_json: *const c_char,
    out_json: *mut *mut c_char,
) -> FafStatus {
    guard(|| {
        let cfg: McConfig = serde_json::from_str(unsafe { read_str(config_json, "config_json") }?).or_status()?;
        let opts: McOptions = if options_json.is_null() {
            McOptions::default()
        } else {
            serde_json::from_str(unsafe { read_str(options_json, "options_json") }?).or_status()?
        };
        let v = api::run_mc(&cfg, &opts).or_status()?;
        unsafe { write_string(out_json, serde_json::to_string(&v).or_status()?) }
    })
}

/// Evaluates a bounds request (`{"config": ..., "sweep": ...}`).
///
/// # Safety
/// As [`faf_mc_run_json`].
#[no_mangle]
pub unsafe extern "C" fn faf_bounds_json(request_json: *const c_char, out_json: *mut *mut c_char) -> FafStatus {
    guard(|| {
        let req: BoundsRequest = serde_json::from_str(unsafe { read_str(request_json, "request_json") }?).or_status()?;
        let resp = api::bounds(&req).or_status()?;
        unsafe { write_string(out_json, serde_json::to_string(&resp).or_status()?) }
    })
}

/// Computes an allocation plan (`{"budget": ..., "config": ...}`).
///
/// # Safety
/// As [`faf_mc_run_json`].
#[no_mangle]
pub unsafe extern "C" fn faf_allocate_json(request_json: *const c_char, out_json: *mut *mut c_char) -> FafStatus {
    guard(|| {
        let req: AllocateRequest = serde_json::from_str(unsafe { read_str(request_json, "request_json") }?).or_status()?;
        let plan = api::allocation(&req).or_status()?;
        unsafe { write_string(out_json, serde_json::to_string(&plan).or_status()?) }
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn faf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
