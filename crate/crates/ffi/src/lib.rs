//! C ABI over the htds library.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns an [`HtdsStatus`];
//! on failure [`htds_last_error`] describes the most recent error on the
//! calling thread. No function unwinds across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use htds::cli::load_run;
use htds::corpus::parse_stay_notes;
use htds::experiment::preprocessor_for;
use htds::metrics::MetricsReport;
use htds::model::{predict, Checkpoint};
use htds::pipeline::Preprocessor;
use htds::training::LrSchedule;
use htds::HtdsError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HtdsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Data = 5,
    Config = 6,
    Shape = 7,
    Numeric = 8,
    Checkpoint = 9,
    Panic = 10,
}

impl From<&HtdsError> for HtdsStatus {
    fn from(e: &HtdsError) -> Self {
        match e {
            HtdsError::Io { .. } => HtdsStatus::Io,
            HtdsError::Parse { .. } => HtdsStatus::Parse,
            HtdsError::Data(_) => HtdsStatus::Data,
            HtdsError::Config(_) => HtdsStatus::Config,
            HtdsError::Shape(_) => HtdsStatus::Shape,
            HtdsError::Numeric(_) => HtdsStatus::Numeric,
            HtdsError::Checkpoint(_) => HtdsStatus::Checkpoint,
        }
    }
}

/// The five evaluation metrics at one threshold.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HtdsMetrics {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub micro_auc: f64,
    pub macro_auc: f64,
    pub p_at_5: f64,
}

/// A trained model with its preprocessing.
pub struct HtdsModel {
    checkpoint: Checkpoint,
    preprocessor: Preprocessor,
    labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn fail(status: HtdsStatus, msg: impl Into<String>) -> HtdsStatus {
    set_error(msg);
    status
}

fn from_error(e: HtdsError) -> HtdsStatus {
    fail(HtdsStatus::from(&e), e.to_string())
}

/// Runs `f`, converting panics into [`HtdsStatus::Panic`].
fn guard(f: impl FnOnce() -> HtdsStatus) -> HtdsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == HtdsStatus::Ok {
                set_error("");
            }
            status
        }
        Err(_) => fail(HtdsStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, HtdsStatus> {
    if p.is_null() {
        return Err(fail(HtdsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(HtdsStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next htds call on the same thread.
#[no_mangle]
pub extern "C" fn htds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn htds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens a run directory written by `htds train`.
///
/// # Safety
/// `run_dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn htds_model_open(run_dir: *const c_char, out: *mut *mut HtdsModel) -> HtdsStatus {
    guard(|| {
        if out.is_null() {
            return fail(HtdsStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let dir = match str_arg(run_dir, "run_dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        let opened = load_run(Path::new(dir)).and_then(|(checkpoint, vocab)| {
            let preprocessor = preprocessor_for(&checkpoint, vocab)?;
            Ok((checkpoint, preprocessor))
        });
        let (checkpoint, preprocessor) = match opened {
            Ok(v) => v,
            Err(e) => return from_error(e),
        };
        let labels = checkpoint.header.labels.iter().map(|l| CString::new(l.replace('\0', " ")).expect("nul bytes removed")).collect();
        *out = Box::into_raw(Box::new(HtdsModel { checkpoint, preprocessor, labels }));
        HtdsStatus::Ok
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from `htds_model_open` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn htds_model_free(model: *mut HtdsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of labels the model scores; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn htds_model_num_labels(model: *const HtdsModel) -> usize {
    model.as_ref().map_or(0, |m| m.labels.len())
}

/// Decision threshold selected on dev; NaN for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn htds_model_threshold(model: *const HtdsModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.checkpoint.header.threshold)
}

/// Code of label `index`. The string lives as long as the model.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn htds_model_label(model: *const HtdsModel, index: usize, out: *mut *const c_char) -> HtdsStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(HtdsStatus::NullPointer, "model is null");
        };
        if out.is_null() {
            return fail(HtdsStatus::NullPointer, "out is null");
        }
        match m.labels.get(index) {
            Some(l) => {
                *out = l.as_ptr();
                HtdsStatus::Ok
            }
            None => fail(HtdsStatus::InvalidArgument, format!("label index {index} out of range {}", m.labels.len())),
        }
    })
}

/// Scores one stay given as notes-file lines (one JSON object per line with
/// `note_id`, `stay_id`, `category`, `charttime`, `text`). Writes one
/// probability per label into `probs`, which must hold `probs_len` values.
///
/// # Safety
/// `model` must be a live handle, `notes_jsonl` NUL-terminated, and `probs`
/// valid for `probs_len` writes.
#[no_mangle]
pub unsafe extern "C" fn htds_model_predict(model: *const HtdsModel, notes_jsonl: *const c_char, probs: *mut f64, probs_len: usize) -> HtdsStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(HtdsStatus::NullPointer, "model is null");
        };
        if probs.is_null() {
            return fail(HtdsStatus::NullPointer, "probs is null");
        }
        if probs_len != m.labels.len() {
            return fail(HtdsStatus::InvalidArgument, format!("probs holds {probs_len} values, model has {} labels", m.labels.len()));
        }
        let text = match str_arg(notes_jsonl, "notes_jsonl") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let scored = parse_stay_notes(text, "notes_jsonl")
            .and_then(|stay| m.preprocessor.prepare(&stay))
            .and_then(|prepared| predict(&m.checkpoint.params, &m.checkpoint.header.config, &prepared.chunks));
        match scored {
            Ok(p) => {
                std::slice::from_raw_parts_mut(probs, probs_len).copy_from_slice(&p);
                HtdsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// One-cycle learning rate at `step` of `total_steps` with the default
/// phases: warm-up over 30% from `peak/25`, cool-down over 30% back to
/// `peak/25`, then annealing over 40% to `peak/1000`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn htds_onecycle_lr(total_steps: usize, peak: f64, step: usize, out: *mut f64) -> HtdsStatus {
    guard(|| {
        if out.is_null() {
            return fail(HtdsStatus::NullPointer, "out is null");
        }
        match LrSchedule::new(total_steps, peak, [0.3, 0.3, 0.4], 25.0, 1000.0).and_then(|s| s.lr(step)) {
            Ok(lr) => {
                *out = lr;
                HtdsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Evaluation metrics for row-major `n_stays x n_labels` probabilities and
/// 0/1 gold labels at `threshold`.
///
/// # Safety
/// `probs` and `gold` must each be valid for `n_stays * n_labels` reads and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn htds_metrics(
    probs: *const f64,
    gold: *const u8,
    n_stays: usize,
    n_labels: usize,
    threshold: f64,
    out: *mut HtdsMetrics,
) -> HtdsStatus {
    guard(|| {
        if probs.is_null() || gold.is_null() || out.is_null() {
            return fail(HtdsStatus::NullPointer, "probs, gold and out must be non-null");
        }
        let Some(len) = n_stays.checked_mul(n_labels).filter(|&l| l > 0) else {
            return fail(HtdsStatus::InvalidArgument, "n_stays and n_labels must be positive");
        };
        let p = std::slice::from_raw_parts(probs, len);
        let g = std::slice::from_raw_parts(gold, len);
        let p: Vec<Vec<f64>> = p.chunks(n_labels).map(<[f64]>::to_vec).collect();
        let g: Vec<Vec<bool>> = g.chunks(n_labels).map(|r| r.iter().map(|&x| x != 0).collect()).collect();
        match MetricsReport::compute(&p, &g, threshold) {
            Ok(r) => {
                *out = HtdsMetrics { micro_f1: r.micro_f1, macro_f1: r.macro_f1, micro_auc: r.micro_auc, macro_auc: r.macro_auc, p_at_5: r.p_at_5 };
                HtdsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
