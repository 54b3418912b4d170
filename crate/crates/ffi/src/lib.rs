//! C ABI over perspex-core.
//!
//! Every function returns a [`PerspexStatus`]. On failure the calling
//! thread's last error message is set and can be read with
//! [`perspex_last_error`]. Handles are opaque and owned by the caller, who
//! releases them with the matching `_free` function. Strings returned through
//! `char **` out-parameters are released with [`perspex_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use perspex_core::meta::ModelBundle;
use perspex_core::metrics::{f_at_n, precision_at_n, recall_at_n};
use perspex_core::pipeline::{load_dataset, run_on_data, RunConfig, RunResult, RunStatus};
use perspex_core::{DataMatrix, Error};

/// Outcome of an API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerspexStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    NotFound = 3,
    Io = 4,
    /// Malformed CSV content or labels.
    Data = 5,
    InvalidArgument = 6,
    Rank = 7,
    /// The budget cannot satisfy the diversity bounds. The run handle is
    /// still produced.
    Infeasible = 8,
    /// The run failed after starting. The run handle is still produced.
    RunFailed = 9,
    /// A caller buffer is too small; the needed length was written.
    BufferTooSmall = 10,
    Serialization = 11,
    Internal = 12,
}

/// Lifecycle state of a run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerspexRunState {
    Completed = 0,
    Infeasible = 1,
    Failed = 2,
}

/// A loaded dataset with optional labels.
pub struct PerspexDataset {
    data: DataMatrix,
    labels: Option<Vec<bool>>,
}

/// Trained cost and utility models.
pub struct PerspexModels {
    bundle: ModelBundle,
}

/// A finished exploration run.
pub struct PerspexRun {
    run: RunResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> PerspexStatus {
    match e {
        Error::NotFound(_) => PerspexStatus::NotFound,
        Error::Io { .. } => PerspexStatus::Io,
        Error::MalformedCell { .. } | Error::Label { .. } | Error::Csv(_) => PerspexStatus::Data,
        Error::Rank { .. } => PerspexStatus::Rank,
        Error::Infeasible(_) => PerspexStatus::Infeasible,
        Error::Serde(_) => PerspexStatus::Serialization,
        _ => PerspexStatus::InvalidArgument,
    }
}

struct Failure(PerspexStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `body`, recording its error message and converting panics.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PerspexStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PerspexStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            PerspexStatus::Internal
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(PerspexStatus::NullPointer, format!("{name} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PerspexStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn handle_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

fn c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(PerspexStatus::Serialization, "string contains NUL".into()))
}

fn to_json(text: serde_json::Result<String>) -> Result<*mut c_char, Failure> {
    c_string(text.map_err(|e| Failure(PerspexStatus::Serialization, e.to_string()))?)
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Last error message on this thread, or null. Valid until the next call
/// into the library from the same thread.
#[no_mangle]
pub extern "C" fn perspex_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn perspex_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn perspex_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a CSV file. `label_column` may be null, in which case a column
/// named `label` is used as labels when present.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perspex_dataset_load_csv(
    path: *const c_char,
    label_column: *const c_char,
    out_dataset: *mut *mut PerspexDataset,
) -> PerspexStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let label = opt_str_arg(label_column, "label_column")?;
        let slot = out(out_dataset, "out_dataset")?;
        let (data, labels) = load_dataset(Path::new(path), label)?;
        *slot = Box::into_raw(Box::new(PerspexDataset { data, labels }));
        Ok(())
    })
}

/// Rows and columns of a dataset, and whether it carries labels.
///
/// # Safety
/// `dataset` must be a live handle; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn perspex_dataset_shape(
    dataset: *const PerspexDataset,
    out_rows: *mut usize,
    out_columns: *mut usize,
    out_has_labels: *mut bool,
) -> PerspexStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        *out(out_rows, "out_rows")? = ds.data.n();
        *out(out_columns, "out_columns")? = ds.data.m();
        *out(out_has_labels, "out_has_labels")? = ds.labels.is_some();
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a live handle, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn perspex_dataset_free(dataset: *mut PerspexDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Loads a model bundle written by `perspex train-meta`.
///
/// # Safety
/// `path` must be NUL-terminated; `out_models` must be writable.
#[no_mangle]
pub unsafe extern "C" fn perspex_models_load(path: *const c_char, out_models: *mut *mut PerspexModels) -> PerspexStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = out(out_models, "out_models")?;
        let bundle = ModelBundle::load(path)?;
        *slot = Box::into_raw(Box::new(PerspexModels { bundle }));
        Ok(())
    })
}

/// # Safety
/// `models` must be null or a live handle, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn perspex_models_free(models: *mut PerspexModels) {
    if !models.is_null() {
        drop(Box::from_raw(models));
    }
}

/// Runs one exploration. `config_json` may be null for defaults, or a JSON
/// object with any run configuration fields (`t_total`, `g`, `strategy`,
/// `lower_bounds`, `seeds`, ...); the `dataset` and `models` fields are
/// ignored. The run handle is produced for completed, infeasible and failed
/// runs alike; the status tells them apart.
///
/// # Safety
/// Handles must be live; `config_json` null or NUL-terminated; `out_run`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn perspex_explore(
    dataset: *const PerspexDataset,
    models: *const PerspexModels,
    config_json: *const c_char,
    out_run: *mut *mut PerspexRun,
) -> PerspexStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let models = handle(models, "models")?;
        let slot = out(out_run, "out_run")?;
        let mut config: RunConfig = match opt_str_arg(config_json, "config_json")? {
            Some(text) => serde_json::from_str(text).map_err(|e| Failure(PerspexStatus::InvalidArgument, format!("config: {e}")))?,
            None => RunConfig::default(),
        };
        if config.dataset.is_empty() {
            config.dataset = "ffi".into();
        }
        if let Err(fields) = config.validate() {
            let text: Vec<String> = fields.iter().map(|f| format!("{}: {}", f.field, f.message)).collect();
            return Err(Failure(PerspexStatus::InvalidArgument, text.join("; ")));
        }
        let run = run_on_data(&config, &ds.data, ds.labels.clone(), Some(&models.bundle), "ffi".into());
        let outcome = match run.status {
            RunStatus::Completed => Ok(()),
            RunStatus::Infeasible => Err(Failure(PerspexStatus::Infeasible, run.error.clone().unwrap_or_default())),
            _ => Err(Failure(PerspexStatus::RunFailed, run.error.clone().unwrap_or_default())),
        };
        *slot = Box::into_raw(Box::new(PerspexRun { run }));
        outcome
    })
}

/// # Safety
/// `run` must be null or a live handle, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn perspex_run_free(run: *mut PerspexRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live handle; `out_state` writable.
#[no_mangle]
pub unsafe extern "C" fn perspex_run_state(run: *const PerspexRun, out_state: *mut PerspexRunState) -> PerspexStatus {
    guard(|| {
        let run = handle(run, "run")?;
        *out(out_state, "out_state")? = match run.run.status {
            RunStatus::Completed => PerspexRunState::Completed,
            RunStatus::Infeasible => PerspexRunState::Infeasible,
            _ => PerspexRunState::Failed,
        };
        Ok(())
    })
}

/// Number of executed detectors (rows of the outlier matrix).
///
/// # Safety
/// `run` must be a live handle; `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn perspex_run_detector_count(run: *const PerspexRun, out_count: *mut usize) -> PerspexStatus {
    guard(|| {
        let run = handle(run, "run")?;
        *out(out_count, "out_count")? = run.run.detector_results.len();
        Ok(())
    })
}

/// Copies the ensemble score of every point into `buffer`. `out_len`
/// receives the number of points; when `capacity` is smaller, nothing is
/// copied and `BufferTooSmall` is returned.
///
/// # Safety
/// `buffer` must hold `capacity` doubles (may be null when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn perspex_run_scores(
    run: *const PerspexRun,
    buffer: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> PerspexStatus {
    guard(|| {
        let run = handle(run, "run")?;
        let scores = run
            .run
            .ensemble_scores
            .as_ref()
            .ok_or_else(|| Failure(PerspexStatus::InvalidArgument, "run has no scores".into()))?;
        *out(out_len, "out_len")? = scores.len();
        if capacity < scores.len() {
            return Err(Failure(
                PerspexStatus::BufferTooSmall,
                format!("{} scores do not fit in {capacity}", scores.len()),
            ));
        }
        if buffer.is_null() {
            return Err(null("buffer"));
        }
        std::slice::from_raw_parts_mut(buffer, scores.len()).copy_from_slice(scores);
        Ok(())
    })
}

/// Re-factorizes the run's stored scores into `g` perspectives. No detector
/// runs again.
///
/// # Safety
/// `run` must be a live handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn perspex_run_refactorize(run: *mut PerspexRun, g: usize) -> PerspexStatus {
    guard(|| {
        let run = handle_mut(run, "run")?;
        run.run.refactorize(g)?;
        Ok(())
    })
}

/// The perspective set and its rank-1 components as a JSON object.
///
/// # Safety
/// `run` must be a live handle; `out_json` writable. Free the string with
/// [`perspex_string_free`].
#[no_mangle]
pub unsafe extern "C" fn perspex_run_perspectives_json(run: *const PerspexRun, out_json: *mut *mut c_char) -> PerspexStatus {
    guard(|| {
        let run = handle(run, "run")?;
        let slot = out(out_json, "out_json")?;
        let set = run
            .run
            .perspective_set
            .as_ref()
            .ok_or_else(|| Failure(PerspexStatus::InvalidArgument, "run has no perspectives".into()))?;
        *slot = to_json(serde_json::to_string(&serde_json::json!({
            "perspective_set": set,
            "perspectives": run.run.perspectives(),
        })))?;
        Ok(())
    })
}

/// The whole run record as JSON.
///
/// # Safety
/// `run` must be a live handle; `out_json` writable. Free the string with
/// [`perspex_string_free`].
#[no_mangle]
pub unsafe extern "C" fn perspex_run_json(run: *const PerspexRun, out_json: *mut *mut c_char) -> PerspexStatus {
    guard(|| {
        let run = handle(run, "run")?;
        let slot = out(out_json, "out_json")?;
        *slot = to_json(serde_json::to_string(&run.run))?;
        Ok(())
    })
}

/// Precision, recall and F at `n` of the run's ensemble against the
/// dataset's labels. Any out-pointer may be null.
///
/// # Safety
/// `run` must be a live handle; non-null out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn perspex_run_metrics(
    run: *const PerspexRun,
    n: usize,
    out_precision: *mut f64,
    out_recall: *mut f64,
    out_f: *mut f64,
) -> PerspexStatus {
    guard(|| {
        let run = handle(run, "run")?;
        let rows = run.run.evaluate(None, &[n])?;
        let row = &rows[0];
        for (p, v) in [(out_precision, row.precision), (out_recall, row.recall), (out_f, row.f)] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

unsafe fn metric(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    n: usize,
    out_value: *mut f64,
    f: fn(&[f64], &[bool], usize) -> perspex_core::Result<f64>,
) -> PerspexStatus {
    guard(|| {
        let scores = slice_arg(scores, len, "scores")?;
        let labels: Vec<bool> = slice_arg(labels, len, "labels")?.iter().map(|&l| l != 0).collect();
        let slot = out(out_value, "out_value")?;
        *slot = f(scores, &labels, n)?;
        Ok(())
    })
}

/// Fraction of the top `n` scores that carry a nonzero label.
///
/// # Safety
/// `scores` and `labels` must hold `len` elements; `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn perspex_precision_at_n(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    n: usize,
    out_value: *mut f64,
) -> PerspexStatus {
    metric(scores, labels, len, n, out_value, precision_at_n)
}

/// Fraction of the labeled outliers found in the top `n` scores.
///
/// # Safety
/// As [`perspex_precision_at_n`].
#[no_mangle]
pub unsafe extern "C" fn perspex_recall_at_n(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    n: usize,
    out_value: *mut f64,
) -> PerspexStatus {
    metric(scores, labels, len, n, out_value, recall_at_n)
}

/// Harmonic mean of precision and recall at `n`.
///
/// # Safety
/// As [`perspex_precision_at_n`].
#[no_mangle]
pub unsafe extern "C" fn perspex_f_at_n(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    n: usize,
    out_value: *mut f64,
) -> PerspexStatus {
    metric(scores, labels, len, n, out_value, f_at_n)
}
