//! C ABI over `rkhs_ode`.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns an
//! [`RkhsStatus`]; on failure a message for the calling thread is available
//! from [`rkhs_last_error`]. Panics are caught and reported as
//! `RKHS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rkhs_ode::data::{load_dataset, Dataset};
use rkhs_ode::solver::{penalty_fit_with, predict, FitOptions, SolverConfig};
use rkhs_ode::{Error, VectorField};

/// Result of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkhsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Observations loaded from a dataset CSV.
pub struct RkhsDataset(Dataset);

/// A fitted or deserialized vector field.
pub struct RkhsField(VectorField);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> RkhsStatus {
    match err.exit_code() {
        3 => RkhsStatus::Numerical,
        4 => RkhsStatus::Io,
        _ => RkhsStatus::InvalidArgument,
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (RkhsStatus, String)>) -> RkhsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RkhsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RkhsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (RkhsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RkhsStatus, String) {
    (RkhsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, (RkhsStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (RkhsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (RkhsStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next FFI call on the same thread.
#[no_mangle]
pub extern "C" fn rkhs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rkhs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a `traj_id,t,y1..yd` CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rkhs_dataset_load(path: *const c_char, out: *mut *mut RkhsDataset) -> RkhsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let ds = load_dataset(Path::new(path)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RkhsDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from [`rkhs_dataset_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn rkhs_dataset_free(ds: *mut RkhsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// State dimension of a dataset (0 for a null handle).
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn rkhs_dataset_dim(ds: *const RkhsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.dim)
}

/// Number of trajectories in a dataset (0 for a null handle).
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn rkhs_dataset_n_trajectories(ds: *const RkhsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n_trajectories())
}

/// Fit a vector field. `config_json` is a complete solver config, or null
/// for the defaults. `threads` of 0 or 1 runs single-threaded.
///
/// # Safety
/// `ds` must be a live dataset handle, `config_json` null or NUL-terminated,
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rkhs_fit(
    ds: *const RkhsDataset,
    config_json: *const c_char,
    threads: usize,
    out: *mut *mut RkhsField,
) -> RkhsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let config = if config_json.is_null() {
            SolverConfig::default()
        } else {
            SolverConfig::from_json_str(c_str(config_json, "config_json")?).map_err(lib_err)?
        };
        let opts = FitOptions {
            threads: threads.max(1),
        };
        let fit = penalty_fit_with(&ds.0, &config, opts).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RkhsField(fit.field)));
        Ok(())
    })
}

/// Parse a field from the JSON written by `rkhs-ode fit`.
///
/// # Safety
/// `json` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rkhs_field_from_json(json: *const c_char, out: *mut *mut RkhsField) -> RkhsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let field: VectorField = serde_json::from_str(c_str(json, "json")?)
            .map_err(|e| (RkhsStatus::InvalidArgument, e.to_string()))?;
        field.validate().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(RkhsField(field)));
        Ok(())
    })
}

/// Serialize a field to JSON. The string must be released with
/// [`rkhs_string_free`].
///
/// # Safety
/// `field` must be a live field handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rkhs_field_to_json(field: *const RkhsField, out: *mut *mut c_char) -> RkhsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let field = field.as_ref().ok_or_else(|| null("field"))?;
        let json = serde_json::to_string(&field.0).map_err(|e| (RkhsStatus::InvalidArgument, e.to_string()))?;
        *out = CString::new(json)
            .map_err(|e| (RkhsStatus::InvalidArgument, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn rkhs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `field` must be null or a field handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn rkhs_field_free(field: *mut RkhsField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// State dimension of a field (0 for a null handle).
///
/// # Safety
/// `field` must be null or a live field handle.
#[no_mangle]
pub unsafe extern "C" fn rkhs_field_dim(field: *const RkhsField) -> usize {
    field.as_ref().map_or(0, |f| f.0.dim())
}

/// Evaluate `f(t, x)` into `out` (length `dim`). `t` is ignored by
/// autonomous fields.
///
/// # Safety
/// `x` and `out` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn rkhs_field_eval(
    field: *const RkhsField,
    x: *const f64,
    dim: usize,
    t: f64,
    out: *mut f64,
) -> RkhsStatus {
    guard(|| {
        let field = field.as_ref().ok_or_else(|| null("field"))?;
        let x = slice(x, dim, "x")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let v = field.0.eval(x, Some(t)).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, v.len()).copy_from_slice(&v);
        Ok(())
    })
}

/// Euler prediction from `x0` over `[t0, t0 + horizon]` with step `h`.
///
/// Writes the row count to `n_rows` and, if `capacity` (in doubles) is
/// large enough, `n_rows * (1 + dim)` values into `out` as rows
/// `t, x_1 .. x_dim`. Pass `out = NULL` to query the size; a short buffer
/// returns `RKHS_STATUS_BUFFER_TOO_SMALL` with `n_rows` set.
///
/// # Safety
/// `x0` must point to `dim` doubles, `out` to `capacity` doubles or be null,
/// `n_rows` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rkhs_predict(
    field: *const RkhsField,
    x0: *const f64,
    dim: usize,
    t0: f64,
    horizon: f64,
    h: f64,
    out: *mut f64,
    capacity: usize,
    n_rows: *mut usize,
) -> RkhsStatus {
    guard(|| {
        let field = field.as_ref().ok_or_else(|| null("field"))?;
        let x0 = slice(x0, dim, "x0")?;
        if n_rows.is_null() {
            return Err(null("n_rows"));
        }
        let (times, states) = predict(&field.0, x0, t0, horizon, h).map_err(lib_err)?;
        *n_rows = times.len();
        let needed = times.len() * (1 + dim);
        if out.is_null() {
            return Ok(());
        }
        if capacity < needed {
            return Err((
                RkhsStatus::BufferTooSmall,
                format!("need {needed} doubles, got {capacity}"),
            ));
        }
        let buf = std::slice::from_raw_parts_mut(out, needed);
        for (r, (t, x)) in times.iter().zip(&states).enumerate() {
            buf[r * (1 + dim)] = *t;
            buf[r * (1 + dim) + 1..(r + 1) * (1 + dim)].copy_from_slice(x);
        }
        Ok(())
    })
}
