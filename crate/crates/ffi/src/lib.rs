//! C ABI over the `ratfid` library.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free` function. Every fallible call
//! returns a [`RatfidStatus`]; on failure [`ratfid_last_error`] describes
//! what went wrong on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ratfid::curves::{fidelity_curve, CurveConfig, FidelityCurve};
use ratfid::ingest::{load_dataset, DatasetFormat, LoadOptions};
use ratfid::metrics::{self, evaluate_dataset, FidelityRecord, MetricMode};
use ratfid::predictor::{train_builtin, LinearModel, TrainConfig};
use ratfid::{Dataset, Error, LabelSpace};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatfidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidInput = 5,
    EmptyDataset = 6,
    Predictor = 7,
    CacheMiss = 8,
    OutOfRange = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatfidFormat {
    Simple = 0,
    Eraser = 1,
    Sst = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatfidMode {
    Clipped = 0,
    Eraser = 1,
}

impl From<RatfidMode> for MetricMode {
    fn from(m: RatfidMode) -> Self {
        match m {
            RatfidMode::Clipped => MetricMode::Clipped,
            RatfidMode::Eraser => MetricMode::Eraser,
        }
    }
}

/// A loaded dataset.
pub struct RatfidDataset {
    inner: Dataset,
}

/// A builtin bag-of-words logistic regression.
pub struct RatfidModel {
    inner: LinearModel,
}

/// Per-example fidelity records.
pub struct RatfidRecords {
    inner: Vec<FidelityRecord>,
    space: LabelSpace,
}

/// A fidelity curve.
pub struct RatfidCurve {
    inner: FidelityCurve,
}

/// One fidelity record. Normalized values are NaN when `defined` is false.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RatfidRecord {
    pub p_full: f64,
    pub suff: f64,
    pub comp: f64,
    pub null_diff: f64,
    pub norm_suff: f64,
    pub norm_comp: f64,
    pub defined: bool,
    /// Index of the predicted class in the dataset's label order.
    pub predicted_class: usize,
}

/// One point of a fidelity curve. Means and stds are NaN when `n` is 0.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RatfidCurvePoint {
    pub rate: f64,
    pub suff_mean: f64,
    pub suff_std: f64,
    pub comp_mean: f64,
    pub comp_std: f64,
    pub n: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> RatfidStatus {
    match err {
        Error::Io(_) => RatfidStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::MalformedTree(_) | Error::InvalidRecord { .. } => {
            RatfidStatus::Parse
        }
        Error::EmptyDataset => RatfidStatus::EmptyDataset,
        Error::AdapterUnavailable(_) | Error::ProtocolViolation(_) | Error::AdapterError { .. } => {
            RatfidStatus::Predictor
        }
        Error::CacheMiss { .. } => RatfidStatus::CacheMiss,
        Error::InvalidRate(_) | Error::SpanOutOfRange { .. } | Error::MissingRate(_) => {
            RatfidStatus::OutOfRange
        }
        _ => RatfidStatus::InvalidInput,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard<F>(f: F) -> RatfidStatus
where
    F: FnOnce() -> Result<(), (RatfidStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RatfidStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RatfidStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (RatfidStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RatfidStatus, String) {
    (RatfidStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn path_arg(s: *const c_char, what: &str) -> Result<PathBuf, (RatfidStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (RatfidStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` must be null or point to a live handle.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (RatfidStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), (RatfidStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: checked non-null; the caller provides writable storage
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn ratfid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a dataset from a file or directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ratfid_dataset_load(
    path: *const c_char,
    format: RatfidFormat,
    out: *mut *mut RatfidDataset,
) -> RatfidStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let format = match format {
            RatfidFormat::Simple => DatasetFormat::Simple,
            RatfidFormat::Eraser => DatasetFormat::Eraser,
            RatfidFormat::Sst => DatasetFormat::Sst,
        };
        let ds = load_dataset(&path, format, &LoadOptions::default()).map_err(lib_err)?;
        put(out, RatfidDataset { inner: ds })
    })
}

/// Number of examples, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ratfid_dataset_len(dataset: *const RatfidDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// Number of labels, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ratfid_dataset_num_labels(dataset: *const RatfidDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.label_space.len())
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ratfid_dataset_free(dataset: *mut RatfidDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains the builtin model on every example of `dataset`.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ratfid_model_train(
    dataset: *const RatfidDataset,
    seed: u64,
    out: *mut *mut RatfidModel,
) -> RatfidStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let m = train_builtin(&ds.inner, &TrainConfig::default(), false, seed).map_err(lib_err)?;
        put(out, RatfidModel { inner: m })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ratfid_model_load(
    path: *const c_char,
    out: *mut *mut RatfidModel,
) -> RatfidStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let m = LinearModel::load(&path).map_err(lib_err)?;
        put(out, RatfidModel { inner: m })
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ratfid_model_save(
    model: *const RatfidModel,
    path: *const c_char,
) -> RatfidStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let path = path_arg(path, "path")?;
        m.inner.save(&path).map_err(lib_err)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ratfid_model_free(model: *mut RatfidModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Point fidelity of every example under `model`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ratfid_evaluate(
    model: *const RatfidModel,
    dataset: *const RatfidDataset,
    mode: RatfidMode,
    out: *mut *mut RatfidRecords,
) -> RatfidStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(dataset, "dataset")?;
        let recs = evaluate_dataset(&m.inner, &ds.inner, mode.into()).map_err(lib_err)?;
        put(
            out,
            RatfidRecords {
                inner: recs,
                space: ds.inner.label_space.clone(),
            },
        )
    })
}

/// # Safety
/// `records` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ratfid_records_len(records: *const RatfidRecords) -> usize {
    records.as_ref().map_or(0, |r| r.inner.len())
}

/// Copies record `index` into `out`.
///
/// # Safety
/// `records` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ratfid_records_get(
    records: *const RatfidRecords,
    index: usize,
    out: *mut RatfidRecord,
) -> RatfidStatus {
    guard(|| {
        let rs = handle(records, "records")?;
        let r = rs.inner.get(index).ok_or_else(|| {
            (
                RatfidStatus::OutOfRange,
                format!("record {index} of {}", rs.inner.len()),
            )
        })?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = RatfidRecord {
            p_full: r.p_full,
            suff: r.suff,
            comp: r.comp,
            null_diff: r.null_diff,
            norm_suff: r.norm_suff.unwrap_or(f64::NAN),
            norm_comp: r.norm_comp.unwrap_or(f64::NAN),
            defined: r.is_defined(),
            predicted_class: rs.space.index_of(&r.predicted_class).unwrap_or(usize::MAX),
        };
        Ok(())
    })
}

/// # Safety
/// `records` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ratfid_records_free(records: *mut RatfidRecords) {
    if !records.is_null() {
        drop(Box::from_raw(records));
    }
}

/// Fidelity curve of `dataset` under `model` over `n_rates` rates.
///
/// # Safety
/// Handles must be live; `rates` must point to `n_rates` doubles; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ratfid_curve(
    model: *const RatfidModel,
    dataset: *const RatfidDataset,
    rates: *const f64,
    n_rates: usize,
    trials: u32,
    seed: u64,
    mode: RatfidMode,
    out: *mut *mut RatfidCurve,
) -> RatfidStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(dataset, "dataset")?;
        if rates.is_null() && n_rates > 0 {
            return Err(null("rates"));
        }
        let rates = if n_rates == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(rates, n_rates).to_vec()
        };
        let config = CurveConfig {
            rates,
            trials,
            seed,
            mode: mode.into(),
            ..Default::default()
        };
        let curve = fidelity_curve(&m.inner, &ds.inner.examples, &config).map_err(lib_err)?;
        put(out, RatfidCurve { inner: curve })
    })
}

/// # Safety
/// `curve` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ratfid_curve_len(curve: *const RatfidCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.inner.points.len())
}

/// # Safety
/// `curve` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ratfid_curve_point(
    curve: *const RatfidCurve,
    index: usize,
    out: *mut RatfidCurvePoint,
) -> RatfidStatus {
    guard(|| {
        let c = handle(curve, "curve")?;
        let p = c.inner.points.get(index).ok_or_else(|| {
            (
                RatfidStatus::OutOfRange,
                format!("point {index} of {}", c.inner.points.len()),
            )
        })?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        *out = RatfidCurvePoint {
            rate: p.rate,
            suff_mean: p.suff.mean.unwrap_or(f64::NAN),
            suff_std: p.suff.std.unwrap_or(f64::NAN),
            comp_mean: p.comp.mean.unwrap_or(f64::NAN),
            comp_std: p.comp.std.unwrap_or(f64::NAN),
            n: p.suff.n,
        };
        Ok(())
    })
}

/// # Safety
/// `curve` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ratfid_curve_free(curve: *mut RatfidCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Sufficiency from the predicted-class probability on the full input and
/// on the rationale alone.
#[no_mangle]
pub extern "C" fn ratfid_sufficiency(p_full: f64, p_rationale: f64, mode: RatfidMode) -> f64 {
    metrics::sufficiency(p_full, p_rationale, mode.into())
}

/// Comprehensiveness from the predicted-class probability on the full
/// input and on the rationale's complement.
#[no_mangle]
pub extern "C" fn ratfid_comprehensiveness(p_full: f64, p_complement: f64, mode: RatfidMode) -> f64 {
    metrics::comprehensiveness(p_full, p_complement, mode.into())
}
