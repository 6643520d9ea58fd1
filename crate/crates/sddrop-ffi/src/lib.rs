//! C ABI over the sddrop training library: opaque handles, integer status
//! codes, and a thread-local error message. The header is generated by
//! cbindgen into `include/sddrop.h`.
//!
//! Conventions:
//! - Every function returns [`SddropStatus`]; `Ok` is 0.
//! - Out-parameters are written only on `Ok`.
//! - Handles own their data; release them with the matching `_free`.
//! - On any failure, `sddrop_last_error` returns a human-readable message
//!   for the calling thread.

// Entry points take raw pointers under the documented C contract; the
// dereferences are guarded by explicit NULL checks.
#![allow(clippy::not_unsafe_ptr_arg_deref)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sddrop::checkpoint::{load_checkpoint, save_checkpoint};
use sddrop::config::{from_toml_str, RunConfig};
use sddrop::data::{gen_blobs, gen_spirals, Dataset, Split};
use sddrop::error::Error;
use sddrop::metrics::{ece, ood_metrics};
use sddrop::model::{plain_forward, ModelSpec, Parameters};
use sddrop::trainer::{evaluate, train_run};

/// Status code returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SddropStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ConfigError = 4,
    RuntimeError = 5,
    Panic = 6,
}

/// Detector metric bundle, all fields in [0, 1].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SddropOodMetrics {
    pub fpr_at_95_tpr: f64,
    pub detection_error: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
}

/// Opaque dataset handle.
pub struct SddropDataset {
    inner: Dataset,
}

/// Opaque trained-model handle (architecture plus parameters).
pub struct SddropModel {
    spec: ModelSpec,
    params: Parameters,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> SddropStatus {
    match err {
        Error::Config(_) => SddropStatus::ConfigError,
        Error::InvalidArgument { .. } => SddropStatus::InvalidArgument,
        _ => SddropStatus::RuntimeError,
    }
}

fn fail(err: Error) -> SddropStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn guarded<F: FnOnce() -> SddropStatus>(f: F) -> SddropStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic across the FFI boundary");
            SddropStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, SddropStatus> {
    if ptr.is_null() {
        set_error("expected a NUL-terminated string, got NULL");
        return Err(SddropStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        SddropStatus::InvalidUtf8
    })
}

macro_rules! require_nonnull {
    ($ptr:expr, $what:literal) => {
        if $ptr.is_null() {
            set_error(concat!($what, " pointer is NULL"));
            return SddropStatus::NullPointer;
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sddrop_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the calling thread's last error message into `buf` (truncated to
/// `cap` - 1 bytes, always NUL-terminated when cap > 0). Returns the full
/// message length in bytes, excluding the NUL.
#[no_mangle]
pub extern "C" fn sddrop_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Generate the Gaussian-blob dataset.
#[no_mangle]
pub extern "C" fn sddrop_dataset_blobs(
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    sigma: f64,
    seed: u64,
    out: *mut *mut SddropDataset,
) -> SddropStatus {
    guarded(|| {
        require_nonnull!(out, "out dataset");
        match gen_blobs(n_per_class, num_classes, dim, sigma, seed) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(SddropDataset { inner })) };
                SddropStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Generate the interleaved-spiral dataset (2-D features).
#[no_mangle]
pub extern "C" fn sddrop_dataset_spirals(
    n_per_class: usize,
    num_classes: usize,
    noise: f64,
    seed: u64,
    out: *mut *mut SddropDataset,
) -> SddropStatus {
    guarded(|| {
        require_nonnull!(out, "out dataset");
        match gen_spirals(n_per_class, num_classes, noise, seed) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(SddropDataset { inner })) };
                SddropStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Wrap caller-provided row-major features (`n x dim`) and labels.
#[no_mangle]
pub extern "C" fn sddrop_dataset_from_arrays(
    features: *const f64,
    labels: *const u32,
    n: usize,
    dim: usize,
    num_classes: usize,
    out: *mut *mut SddropDataset,
) -> SddropStatus {
    guarded(|| {
        require_nonnull!(features, "features");
        require_nonnull!(labels, "labels");
        require_nonnull!(out, "out dataset");
        let features = unsafe { std::slice::from_raw_parts(features, n * dim) }.to_vec();
        let labels: Vec<usize> = unsafe { std::slice::from_raw_parts(labels, n) }
            .iter()
            .map(|l| *l as usize)
            .collect();
        match Dataset::new(features, labels, dim, num_classes, Split::Test) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(SddropDataset { inner })) };
                SddropStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub extern "C" fn sddrop_dataset_len(dataset: *const SddropDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    unsafe { &*dataset }.inner.len()
}

#[no_mangle]
pub extern "C" fn sddrop_dataset_dim(dataset: *const SddropDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    unsafe { &*dataset }.inner.dim()
}

#[no_mangle]
pub extern "C" fn sddrop_dataset_free(dataset: *mut SddropDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Train a model. `config_toml` may be NULL (all defaults) or a TOML string
/// in the run-config schema; `dataset` may be NULL to use the config's data
/// section.
#[no_mangle]
pub extern "C" fn sddrop_train(
    config_toml: *const c_char,
    dataset: *const SddropDataset,
    out: *mut *mut SddropModel,
) -> SddropStatus {
    guarded(|| {
        require_nonnull!(out, "out model");
        let config: RunConfig = if config_toml.is_null() {
            RunConfig::default()
        } else {
            let text = match unsafe { read_str(config_toml) } {
                Ok(t) => t,
                Err(status) => return status,
            };
            match from_toml_str(text) {
                Ok(c) => c,
                Err(e) => return fail(e),
            }
        };
        let owned;
        let data = if dataset.is_null() {
            match config.data.load() {
                Ok(d) => {
                    owned = d;
                    &owned
                }
                Err(e) => return fail(e),
            }
        } else {
            &unsafe { &*dataset }.inner
        };
        match train_run(&config.model, data, &config.train_config()) {
            Ok(outcome) => {
                let model = SddropModel {
                    spec: config.model.clone(),
                    params: outcome.params,
                };
                unsafe { *out = Box::into_raw(Box::new(model)) };
                SddropStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Load a model from a checkpoint file.
#[no_mangle]
pub extern "C" fn sddrop_model_load(
    path: *const c_char,
    out: *mut *mut SddropModel,
) -> SddropStatus {
    guarded(|| {
        require_nonnull!(out, "out model");
        let path = match unsafe { read_str(path) } {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_checkpoint(Path::new(path)) {
            Ok((spec, params)) => {
                unsafe { *out = Box::into_raw(Box::new(SddropModel { spec, params })) };
                SddropStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Save a model to a checkpoint file (bit-exact round trip).
#[no_mangle]
pub extern "C" fn sddrop_model_save(
    model: *const SddropModel,
    path: *const c_char,
) -> SddropStatus {
    guarded(|| {
        require_nonnull!(model, "model");
        let path = match unsafe { read_str(path) } {
            Ok(p) => p,
            Err(status) => return status,
        };
        let model = unsafe { &*model };
        match save_checkpoint(&model.spec, &model.params, Path::new(path)) {
            Ok(()) => SddropStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub extern "C" fn sddrop_model_num_classes(model: *const SddropModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.spec.num_classes()
}

/// Dropout-free accuracy of the model on a dataset.
#[no_mangle]
pub extern "C" fn sddrop_model_accuracy(
    model: *const SddropModel,
    dataset: *const SddropDataset,
    out_accuracy: *mut f64,
) -> SddropStatus {
    guarded(|| {
        require_nonnull!(model, "model");
        require_nonnull!(dataset, "dataset");
        require_nonnull!(out_accuracy, "out accuracy");
        let model = unsafe { &*model };
        let dataset = unsafe { &*dataset };
        match evaluate(&model.spec, &model.params, &dataset.inner) {
            Ok(eval) => {
                unsafe { *out_accuracy = eval.accuracy };
                SddropStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Logits for `rows` feature rows; `out_logits` must hold
/// `rows * num_classes` doubles.
#[no_mangle]
pub extern "C" fn sddrop_model_predict(
    model: *const SddropModel,
    features: *const f64,
    rows: usize,
    dim: usize,
    out_logits: *mut f64,
) -> SddropStatus {
    guarded(|| {
        require_nonnull!(model, "model");
        require_nonnull!(features, "features");
        require_nonnull!(out_logits, "out logits");
        let model = unsafe { &*model };
        if dim != model.spec.input_dim {
            set_error("feature dimension does not match the model input");
            return SddropStatus::InvalidArgument;
        }
        let xs = unsafe { std::slice::from_raw_parts(features, rows * dim) }.to_vec();
        let result = (|| {
            let leaves = model.params.leaves()?;
            let x = sddrop::autodiff::Tensor::matrix(rows, dim, xs)?;
            plain_forward(&model.spec, &leaves, &x)
        })();
        match result {
            Ok(logits) => {
                let values = logits.values();
                unsafe { std::ptr::copy_nonoverlapping(values.as_ptr(), out_logits, values.len()) };
                SddropStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub extern "C" fn sddrop_model_free(model: *mut SddropModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Expected calibration error over equal-width bins; `correct` entries are
/// 0 or 1.
#[no_mangle]
pub extern "C" fn sddrop_metric_ece(
    confidences: *const f64,
    correct: *const u8,
    n: usize,
    bins: usize,
    out_ece: *mut f64,
) -> SddropStatus {
    guarded(|| {
        require_nonnull!(confidences, "confidences");
        require_nonnull!(correct, "correct flags");
        require_nonnull!(out_ece, "out ece");
        let conf = unsafe { std::slice::from_raw_parts(confidences, n) };
        let ok = unsafe { std::slice::from_raw_parts(correct, n) };
        let records: Vec<(f64, bool)> = conf.iter().zip(ok).map(|(c, k)| (*c, *k != 0)).collect();
        match ece(&records, bins) {
            Ok((value, _)) => {
                unsafe { *out_ece = value };
                SddropStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Detection metrics for in/out score lists (higher score = more
/// in-distribution).
#[no_mangle]
pub extern "C" fn sddrop_metric_ood(
    in_scores: *const f64,
    n_in: usize,
    out_scores: *const f64,
    n_out: usize,
    out_metrics: *mut SddropOodMetrics,
) -> SddropStatus {
    guarded(|| {
        require_nonnull!(in_scores, "in scores");
        require_nonnull!(out_scores, "out scores");
        require_nonnull!(out_metrics, "out metrics");
        let ins = unsafe { std::slice::from_raw_parts(in_scores, n_in) };
        let outs = unsafe { std::slice::from_raw_parts(out_scores, n_out) };
        match ood_metrics(ins, outs) {
            Ok(m) => {
                unsafe {
                    *out_metrics = SddropOodMetrics {
                        fpr_at_95_tpr: m.fpr_at_95_tpr,
                        detection_error: m.detection_error,
                        auroc: m.auroc,
                        aupr_in: m.aupr_in,
                        aupr_out: m.aupr_out,
                    }
                };
                SddropStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
