//! C ABI for `cahn-spectral`.
//!
//! Every fallible function returns a [`CsStatus`]; on failure the message is
//! available from [`cs_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. No function
//! unwinds across the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cahn_spectral::experiments::{fit_rate, RatePoint};
use cahn_spectral::integrator::Stepper;
use cahn_spectral::model::InitialDatum;
use cahn_spectral::noise::NoiseFamily;
use cahn_spectral::{simulate_path, Error, ModelConfig, NoiseTable, SolverConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    InvalidArgument = 1,
    DimensionMismatch = 2,
    NonFinite = 3,
    Assumption = 4,
    NonConvergence = 5,
    PathFailure = 6,
    NoSignal = 7,
    Config = 8,
    Format = 9,
    Io = 10,
    NullPointer = 11,
    Panic = 12,
}

/// Noise covariance family codes.
pub const CS_FAMILY_POWER_LAW: u32 = 0;
pub const CS_FAMILY_TRACE_CLASS: u32 = 1;

/// Opaque noise table.
pub struct CsNoiseTable(NoiseTable);

/// Opaque implicit step solver.
pub struct CsStepper(Stepper);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsRateFit {
    pub slope: f64,
    pub intercept: f64,
    /// NaN when fewer than three points were used.
    pub ci95: f64,
    pub residual: f64,
    pub used_points: usize,
    pub excluded_points: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CsStatus {
    match e {
        Error::InvalidArgument(_) => CsStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => CsStatus::DimensionMismatch,
        Error::NonFinite(_) => CsStatus::NonFinite,
        Error::Assumption(_) => CsStatus::Assumption,
        Error::NonConvergence { .. } => CsStatus::NonConvergence,
        Error::PathFailure { .. } => CsStatus::PathFailure,
        Error::NoSignal { .. } => CsStatus::NoSignal,
        Error::Config(_) => CsStatus::Config,
        Error::Format(_) => CsStatus::Format,
        Error::Io(_) => CsStatus::Io,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Error>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err(e)) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            CsStatus::Panic
        }
    }
}

fn null_error(what: &str) -> Error {
    Error::InvalidArgument(format!("null pointer: {what}"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Error> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null_error(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Error> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null_error(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, Error> {
    if p.is_null() {
        return Err(null_error("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()))
}

fn family(code: u32, param: f64) -> Result<NoiseFamily, Error> {
    match code {
        CS_FAMILY_POWER_LAW => Ok(NoiseFamily::PowerLaw { r: param }),
        CS_FAMILY_TRACE_CLASS => Ok(NoiseFamily::TraceClass { s: param }),
        other => Err(Error::InvalidArgument(format!("unknown noise family code {other}"))),
    }
}

/// Message of the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a noise table of `m_ref` steps and `n_ref` modes on `[0, t_end]`.
#[no_mangle]
pub unsafe extern "C" fn cs_noise_table_new(
    seed: u64,
    t_end: f64,
    m_ref: usize,
    n_ref: usize,
    family_code: u32,
    family_param: f64,
    out: *mut *mut CsNoiseTable,
) -> CsStatus {
    if out.is_null() {
        set_error("null pointer: out".into());
        return CsStatus::NullPointer;
    }
    guard(|| {
        let table = NoiseTable::build(seed, t_end, m_ref, n_ref, family(family_code, family_param)?)?;
        *out = Box::into_raw(Box::new(CsNoiseTable(table)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cs_noise_table_free(table: *mut CsNoiseTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Writes `m * n` increments, step-major, summed down to `m` steps and
/// truncated to `n` modes.
#[no_mangle]
pub unsafe extern "C" fn cs_noise_table_coarsen(
    table: *const CsNoiseTable,
    m: usize,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> CsStatus {
    if table.is_null() {
        set_error("null pointer: table".into());
        return CsStatus::NullPointer;
    }
    guard(|| {
        let incs = (*table).0.coarsen(m, n)?;
        if out_len != incs.as_slice().len() {
            return Err(Error::DimensionMismatch {
                expected: incs.as_slice().len(),
                got: out_len,
            });
        }
        slice_mut(out, out_len, "out")?.copy_from_slice(incs.as_slice());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cs_noise_table_write(table: *const CsNoiseTable, path: *const c_char) -> CsStatus {
    if table.is_null() {
        set_error("null pointer: table".into());
        return CsStatus::NullPointer;
    }
    guard(|| {
        let file = std::fs::File::create(path_arg(path)?)?;
        (*table).0.write_to(std::io::BufWriter::new(file))
    })
}

#[no_mangle]
pub unsafe extern "C" fn cs_noise_table_read(path: *const c_char, out: *mut *mut CsNoiseTable) -> CsStatus {
    if out.is_null() {
        set_error("null pointer: out".into());
        return CsStatus::NullPointer;
    }
    guard(|| {
        let file = std::fs::File::open(path_arg(path)?)?;
        let table = NoiseTable::read_from(std::io::BufReader::new(file))?;
        *out = Box::into_raw(Box::new(CsNoiseTable(table)));
        Ok(())
    })
}

/// Backward Euler solver for `n` modes and step `tau`. `tol <= 0` selects the
/// default tolerance; `linear != 0` drops the nonlinearity.
#[no_mangle]
pub unsafe extern "C" fn cs_stepper_new(n: usize, tau: f64, tol: f64, linear: i32, out: *mut *mut CsStepper) -> CsStatus {
    if out.is_null() {
        set_error("null pointer: out".into());
        return CsStatus::NullPointer;
    }
    guard(|| {
        let mut cfg = SolverConfig::default();
        if tol > 0.0 {
            cfg.tol = tol;
        }
        let stepper = Stepper::with_modes(n, tau, cfg, linear != 0)?;
        *out = Box::into_raw(Box::new(CsStepper(stepper)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cs_stepper_free(stepper: *mut CsStepper) {
    if !stepper.is_null() {
        drop(Box::from_raw(stepper));
    }
}

/// One step from `x_prev` with increment `dw`, all arrays of length `n`.
/// `iterations` and `residual` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_stepper_step(
    stepper: *mut CsStepper,
    x_prev: *const f64,
    dw: *const f64,
    out: *mut f64,
    n: usize,
    iterations: *mut usize,
    residual: *mut f64,
) -> CsStatus {
    if stepper.is_null() {
        set_error("null pointer: stepper".into());
        return CsStatus::NullPointer;
    }
    guard(|| {
        let s = &mut (*stepper).0;
        let stats = s.step(slice(x_prev, n, "x_prev")?, slice(dw, n, "dw")?, slice_mut(out, n, "out")?)?;
        if !iterations.is_null() {
            *iterations = stats.iterations;
        }
        if !residual.is_null() {
            *residual = stats.residual;
        }
        Ok(())
    })
}

/// Integrates one path with `n` modes and `m` steps driven by `table`, from
/// the initial coefficients `x0[0..n]`. Writes the final state to `out[0..n]`.
#[no_mangle]
pub unsafe extern "C" fn cs_simulate_path(
    table: *const CsNoiseTable,
    n: usize,
    m: usize,
    linear: i32,
    x0: *const f64,
    out: *mut f64,
) -> CsStatus {
    if table.is_null() {
        set_error("null pointer: table".into());
        return CsStatus::NullPointer;
    }
    guard(|| {
        let table = &(*table).0;
        let x0 = slice(x0, n, "x0")?;
        let model = ModelConfig {
            t_end: table.t_end(),
            n,
            m,
            noise: table.family(),
            initial: InitialDatum {
                modes: x0.iter().enumerate().map(|(j, &c)| (j + 1, c)).collect(),
            },
            linear_mode: linear != 0,
            ..Default::default()
        };
        let incs = table.coarsen(m, n)?;
        let run = simulate_path(&model, &incs, false)?;
        slice_mut(out, n, "out")?.copy_from_slice(run.state.field.coeffs());
        Ok(())
    })
}

/// Log-log rate fit. `std_errors` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn cs_fit_rate(
    h: *const f64,
    errors: *const f64,
    std_errors: *const f64,
    len: usize,
    out: *mut CsRateFit,
) -> CsStatus {
    if out.is_null() {
        set_error("null pointer: out".into());
        return CsStatus::NullPointer;
    }
    guard(|| {
        let h = slice(h, len, "h")?;
        let e = slice(errors, len, "errors")?;
        let se = if std_errors.is_null() { None } else { Some(slice(std_errors, len, "std_errors")?) };
        let points: Vec<RatePoint> = (0..len)
            .map(|i| RatePoint {
                h: h[i],
                error: e[i],
                std_error: se.map(|s| s[i]),
            })
            .collect();
        let fit = fit_rate(&points, None)?;
        *out = CsRateFit {
            slope: fit.slope,
            intercept: fit.intercept,
            ci95: fit.ci95.unwrap_or(f64::NAN),
            residual: fit.residual,
            used_points: fit.used_points,
            excluded_points: fit.excluded_points.len(),
        };
        Ok(())
    })
}
