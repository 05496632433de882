//! C ABI over `msrisk`.
//!
//! Objects cross the boundary as opaque handles (`MsrPanel`, `MsrFit`) that
//! the caller releases with the matching `*_free`. Every fallible call
//! returns an `MsrStatus`; on failure a description is available from
//! `msr_last_error_message` on the same thread until the next failing call.
//! Matrices are passed row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use msrisk::attribution::{characteristic_values, shapley};
use msrisk::corisk::{total_risk_series, Measure, RiskField, RiskOptions};
use msrisk::ingest::{load_csv, prices_to_log_returns, CsvLayout, ReturnPanel};
use msrisk::msmodel::{fit_restarts, FitResult, ModelDocument};
use msrisk::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Numerical = 5,
    Estimation = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsrMeasure {
    Covar = 0,
    Coes = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsrRiskField {
    Var = 0,
    Es = 1,
    Covar = 2,
    Coes = 3,
    DeltaCovar = 4,
    DeltaCoes = 5,
}

/// Opaque return panel.
pub struct MsrPanel {
    inner: ReturnPanel,
}

/// Opaque fitted model together with the panel it was filtered on.
pub struct MsrFit {
    fit: FitResult,
    names: Vec<String>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MsrStatus {
    match e {
        Error::Io { .. } => MsrStatus::Io,
        Error::Csv(_)
        | Error::Json(_)
        | Error::Empty(_)
        | Error::Unparseable { .. }
        | Error::DuplicateDate(_)
        | Error::NonMonotoneDates { .. }
        | Error::RaggedRow { .. }
        | Error::NonPositivePrice { .. }
        | Error::DegenerateSeries(_) => MsrStatus::Data,
        Error::DimensionMismatch { .. }
        | Error::InvalidParameter(_)
        | Error::InvalidLevel(_)
        | Error::IndexOutOfRange { .. }
        | Error::TooLarge(_) => MsrStatus::InvalidArgument,
        Error::NotPositiveDefinite(_)
        | Error::EsUndefined(_)
        | Error::BracketFailure { .. }
        | Error::Underflow(_)
        | Error::GridFailure(_)
        | Error::IncompleteMap(_) => MsrStatus::Numerical,
        Error::RegimeCollapse { .. } | Error::AllRestartsFailed(..) => MsrStatus::Estimation,
    }
}

enum Failure {
    Lib(Error),
    Status(MsrStatus, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn fail(status: MsrStatus, msg: impl Into<String>) -> Failure {
    Failure::Status(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsrStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("internal panic: {msg}"));
            MsrStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(MsrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(MsrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(MsrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MsrStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_buffer(values: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if values.len() > len {
        return Err(fail(
            MsrStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        ));
    }
    if out.is_null() {
        return Err(fail(MsrStatus::NullPointer, "output buffer is null"));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn measure(m: MsrMeasure) -> Measure {
    match m {
        MsrMeasure::Covar => Measure::CoVaR,
        MsrMeasure::Coes => Measure::CoES,
    }
}

fn options(tau1: f64, tau2: f64) -> RiskOptions {
    RiskOptions {
        tau1,
        tau2,
        ..RiskOptions::default()
    }
}

/// Message of the last failing call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn msr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a dated CSV (first column dates, remaining columns series). With
/// `prices` nonzero the values are converted to log returns.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msr_panel_from_csv(path: *const c_char, prices: bool, out: *mut *mut MsrPanel) -> MsrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        let raw = load_csv(Path::new(path), &CsvLayout::default())?;
        let inner = if prices { prices_to_log_returns(&raw)? } else { raw };
        *out = Box::into_raw(Box::new(MsrPanel { inner }));
        Ok(())
    })
}

/// Builds a panel from a row-major `n_obs x n_series` array; series are
/// named `s1..sp` and dates are synthetic.
///
/// # Safety
/// `data` must point to `n_obs * n_series` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn msr_panel_from_array(
    data: *const f64,
    n_obs: usize,
    n_series: usize,
    out: *mut *mut MsrPanel,
) -> MsrStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if data.is_null() {
            return Err(fail(MsrStatus::NullPointer, "data is null"));
        }
        if n_obs == 0 || n_series == 0 {
            return Err(fail(MsrStatus::InvalidArgument, "panel dimensions must be positive"));
        }
        let n = n_obs
            .checked_mul(n_series)
            .ok_or_else(|| fail(MsrStatus::InvalidArgument, "panel too large"))?;
        let values = std::slice::from_raw_parts(data, n);
        let rows: Vec<Vec<f64>> = values.chunks(n_series).map(<[f64]>::to_vec).collect();
        *out = Box::into_raw(Box::new(MsrPanel {
            inner: ReturnPanel::from_rows(&rows)?,
        }));
        Ok(())
    })
}

/// # Safety
/// `panel` must be a live handle; the out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn msr_panel_dims(panel: *const MsrPanel, n_obs: *mut usize, n_series: *mut usize) -> MsrStatus {
    guard(|| {
        let p = deref(panel, "panel")?;
        if let Some(t) = n_obs.as_mut() {
            *t = p.inner.len();
        }
        if let Some(k) = n_series.as_mut() {
            *k = p.inner.dim();
        }
        Ok(())
    })
}

/// # Safety
/// `panel` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msr_panel_free(panel: *mut MsrPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Fits an `n_states` model with `restarts` EM runs.
///
/// # Safety
/// `panel` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn msr_fit(
    panel: *const MsrPanel,
    n_states: usize,
    restarts: usize,
    seed: u64,
    out: *mut *mut MsrFit,
) -> MsrStatus {
    guard(|| {
        let p = deref(panel, "panel")?;
        let out = out_ptr(out, "out")?;
        let fit = fit_restarts(&p.inner, n_states, restarts, seed)?;
        *out = Box::into_raw(Box::new(MsrFit {
            fit,
            names: p.inner.names().to_vec(),
        }));
        Ok(())
    })
}

/// Loads a model JSON and filters it over `panel` without re-estimating.
///
/// # Safety
/// `panel` must be a live handle, `json` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msr_fit_from_model_json(
    panel: *const MsrPanel,
    json: *const c_char,
    out: *mut *mut MsrFit,
) -> MsrStatus {
    guard(|| {
        let p = deref(panel, "panel")?;
        let json = str_arg(json, "json")?;
        let out = out_ptr(out, "out")?;
        let model = ModelDocument::from_json(json)?.to_model()?;
        let fit = FitResult::from_model(model, &p.inner)?;
        *out = Box::into_raw(Box::new(MsrFit {
            fit,
            names: p.inner.names().to_vec(),
        }));
        Ok(())
    })
}

/// # Safety
/// `fit` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msr_fit_free(fit: *mut MsrFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// # Safety
/// `fit` must be a live handle; the out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn msr_fit_dims(
    fit: *const MsrFit,
    n_obs: *mut usize,
    n_series: *mut usize,
    n_states: *mut usize,
) -> MsrStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        if let Some(v) = n_obs.as_mut() {
            *v = f.fit.n_obs;
        }
        if let Some(v) = n_series.as_mut() {
            *v = f.fit.model.dim();
        }
        if let Some(v) = n_states.as_mut() {
            *v = f.fit.model.n_states();
        }
        Ok(())
    })
}

/// # Safety
/// `fit` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msr_fit_loglik(fit: *const MsrFit, out: *mut f64) -> MsrStatus {
    guard(|| {
        *out_ptr(out, "out")? = deref(fit, "fit")?.fit.loglik;
        Ok(())
    })
}

/// AIC, BIC and the free-parameter count; out pointers may be NULL.
///
/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn msr_fit_information_criteria(
    fit: *const MsrFit,
    aic: *mut f64,
    bic: *mut f64,
    n_params: *mut usize,
) -> MsrStatus {
    guard(|| {
        let f = &deref(fit, "fit")?.fit;
        if let Some(v) = aic.as_mut() {
            *v = f.aic();
        }
        if let Some(v) = bic.as_mut() {
            *v = f.bic();
        }
        if let Some(v) = n_params.as_mut() {
            *v = f.model.parameter_count();
        }
        Ok(())
    })
}

/// Smoothed (`smoothed` nonzero) or filtered state probabilities,
/// `n_obs x n_states` row-major.
///
/// # Safety
/// `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn msr_fit_state_probabilities(
    fit: *const MsrFit,
    smoothed: bool,
    out: *mut f64,
    len: usize,
) -> MsrStatus {
    guard(|| {
        let f = &deref(fit, "fit")?.fit;
        let m = if smoothed { &f.smoothed } else { &f.filtered };
        let values: Vec<f64> = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
        write_buffer(&values, out, len)
    })
}

/// Model as JSON; release with `msr_string_free`.
///
/// # Safety
/// `fit` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn msr_fit_model_json(fit: *const MsrFit, out: *mut *mut c_char) -> MsrStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        let out = out_ptr(out, "out")?;
        let text = ModelDocument::from_fit(&f.fit, &f.names).to_json()?;
        *out = CString::new(text)
            .map_err(|_| fail(MsrStatus::Data, "JSON contains NUL"))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn msr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Total-risk series of every sector for one field (each sector against all
/// others distressed), `n_obs x n_series` row-major.
///
/// # Safety
/// `fit` must be a live handle and `out` have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn msr_total_risk(
    fit: *const MsrFit,
    field: MsrRiskField,
    tau1: f64,
    tau2: f64,
    out: *mut f64,
    len: usize,
) -> MsrStatus {
    guard(|| {
        let f = &deref(fit, "fit")?.fit;
        let needed = f.n_obs * f.model.dim();
        if needed > len {
            return Err(fail(MsrStatus::BufferTooSmall, format!("buffer holds {len} values, {needed} needed")));
        }
        let field = match field {
            MsrRiskField::Var => RiskField::Var,
            MsrRiskField::Es => RiskField::Es,
            MsrRiskField::Covar => RiskField::CoVaR,
            MsrRiskField::Coes => RiskField::CoES,
            MsrRiskField::DeltaCovar => RiskField::DeltaCoVaR,
            MsrRiskField::DeltaCoes => RiskField::DeltaCoES,
        };
        let series = total_risk_series(f, &options(tau1, tau2))?;
        let cols: Vec<Vec<f64>> = series.iter().map(|s| s.values(field)).collect();
        let values: Vec<f64> = (0..f.n_obs).flat_map(|t| cols.iter().map(move |c| c[t])).collect();
        write_buffer(&values, out, len)
    })
}

/// Shapley shares of `target`'s delta measure at index `t`. `shares` gets
/// one entry per sector (the target's own entry is 0); `grand_value` the
/// delta with every other sector distressed.
///
/// # Safety
/// `fit` must be a live handle, `shares` have room for `len` doubles and
/// `grand_value` be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn msr_shapley(
    fit: *const MsrFit,
    t: usize,
    target: usize,
    which: MsrMeasure,
    tau1: f64,
    tau2: f64,
    shares: *mut f64,
    len: usize,
    grand_value: *mut f64,
) -> MsrStatus {
    guard(|| {
        let f = &deref(fit, "fit")?.fit;
        let map = characteristic_values(f, t, target, measure(which), &options(tau1, tau2))?;
        let report = shapley(&map);
        let mut values = vec![0.0; f.model.dim()];
        for (&c, &s) in report.contributors.iter().zip(&report.shares) {
            values[c] = s;
        }
        write_buffer(&values, shares, len)?;
        if let Some(g) = grand_value.as_mut() {
            *g = report.grand_value;
        }
        Ok(())
    })
}

/// `(AIC, BIC)` and parameter count for a given log-likelihood, state count,
/// dimension and sample size, without a fit.
///
/// # Safety
/// Out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn msr_information_criteria(
    loglik: f64,
    n_states: usize,
    n_series: usize,
    n_obs: usize,
    aic: *mut f64,
    bic: *mut f64,
    n_params: *mut usize,
) -> MsrStatus {
    guard(|| {
        if n_states == 0 || n_series == 0 || n_obs == 0 {
            return Err(fail(MsrStatus::InvalidArgument, "dimensions must be positive"));
        }
        let k = msrisk::msmodel::parameter_count(n_states, n_series);
        let (a, b) = msrisk::msmodel::information_criteria(loglik, k, n_obs);
        if let Some(v) = aic.as_mut() {
            *v = a;
        }
        if let Some(v) = bic.as_mut() {
            *v = b;
        }
        if let Some(v) = n_params.as_mut() {
            *v = k;
        }
        Ok(())
    })
}
