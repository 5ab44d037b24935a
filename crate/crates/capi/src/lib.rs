//! C interface for the debias tagger.
//!
//! The surface is deliberately small: load a trained model file, tag
//! tokenized sentences, look up label names, export the learned
//! label-noise transformation, free the model. Everything else (training,
//! projection, evaluation) happens through the `debias-tagger` CLI or the
//! Rust library; this crate exists so taggers can be embedded in C, C++,
//! or anything with a C FFI.
//!
//! # Conventions
//!
//! * A model is an opaque [`DtModel`] handle created by [`dt_model_load`]
//!   and released by [`dt_model_free`]. Handles are immutable after
//!   loading and safe to share across threads for tagging.
//! * Fallible functions return a [`DtStatus`]; anything other than
//!   `DT_OK` leaves a human-readable message retrievable with
//!   [`dt_last_error`]. The message is thread-local and valid until the
//!   next failing call on the same thread.
//! * All strings are NUL-terminated UTF-8. Strings returned by the
//!   library are owned by it: label pointers stay valid until the model
//!   is freed, the version and error strings until the next call that
//!   replaces them.
//!
//! The build script generates `include/debias_tagger.h` from these
//! declarations.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use debias_tagger::eval::export_bias;
use debias_tagger::model::TaggerModel;
use debias_tagger::Error;

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtStatus {
    /// Success.
    DtOk = 0,
    /// Invalid configuration or argument combination.
    DtErrConfig = 2,
    /// Unreadable, malformed, or incompatible data (I/O included).
    DtErrData = 3,
    /// A numeric failure such as a non-finite value.
    DtErrNumeric = 4,
    /// A required pointer argument was NULL.
    DtErrNullArgument = 5,
    /// A string argument was not valid UTF-8.
    DtErrUtf8 = 6,
    /// The library caught an internal panic; state may be incomplete.
    DtErrInternal = 7,
}

/// A loaded tagging model. Opaque; create with `dt_model_load`, release
/// with `dt_model_free`.
pub struct DtModel {
    model: TaggerModel,
    /// Prediction-side labels as C strings, same order as the tag ids the
    /// model emits.
    labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    // A NUL inside the message cannot survive the C string; truncate there.
    let cleaned = match msg.find('\0') {
        Some(pos) => &msg[..pos],
        None => msg,
    };
    let msg = CString::new(cleaned).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg);
}

fn fail(status: DtStatus, msg: &str) -> DtStatus {
    set_last_error(msg);
    status
}

fn fail_with(err: &Error) -> DtStatus {
    let status = match err {
        Error::Config(_) => DtStatus::DtErrConfig,
        Error::NonFinite(_) => DtStatus::DtErrNumeric,
        _ => DtStatus::DtErrData,
    };
    fail(status, &err.to_string())
}

/// Runs a closure, converting panics into `DT_ERR_INTERNAL`.
fn guarded(f: impl FnOnce() -> DtStatus) -> DtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(DtStatus::DtErrInternal, "internal panic"),
    }
}

/// Borrows a C string argument as UTF-8, recording the failure otherwise.
///
/// # Safety
/// `ptr` must be NULL or a valid NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, DtStatus> {
    if ptr.is_null() {
        return Err(fail(
            DtStatus::DtErrNullArgument,
            &format!("{name} is NULL"),
        ));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(DtStatus::DtErrUtf8, &format!("{name} is not valid UTF-8")))
}

/// Version of the library, as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dt_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message describing the current thread's most recent failure, or an
/// empty string if there has been none. Valid until the next failing call
/// on this thread.
#[no_mangle]
pub extern "C" fn dt_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a model file written by the trainer and stores a handle in
/// `model_out`. On failure `model_out` is untouched.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `model_out` a valid
/// pointer. The returned handle must be released with `dt_model_free`.
#[no_mangle]
pub unsafe extern "C" fn dt_model_load(
    path: *const c_char,
    model_out: *mut *mut DtModel,
) -> DtStatus {
    guarded(|| {
        if model_out.is_null() {
            return fail(DtStatus::DtErrNullArgument, "model_out is NULL");
        }
        let path = match utf8_arg(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        let model = match TaggerModel::load(Path::new(path)) {
            Ok(m) => m,
            Err(e) => return fail_with(&e),
        };
        let labels = model
            .gold_tagset
            .labels()
            .iter()
            .map(|l| CString::new(l.as_str()).unwrap_or_default())
            .collect();
        *model_out = Box::into_raw(Box::new(DtModel { model, labels }));
        DtStatus::DtOk
    })
}

/// Releases a model handle. A NULL handle is a no-op.
///
/// # Safety
/// `model` must be NULL or a handle from `dt_model_load` that has not
/// been freed already.
#[no_mangle]
pub unsafe extern "C" fn dt_model_free(model: *mut DtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of tags the model predicts over. Tag ids returned by
/// `dt_model_tag` lie in `[0, count)`.
///
/// # Safety
/// `model` must be a live handle from `dt_model_load`.
#[no_mangle]
pub unsafe extern "C" fn dt_model_tag_count(model: *const DtModel) -> usize {
    if model.is_null() {
        return 0;
    }
    let handle = &*model;
    handle.labels.len()
}

/// Label name for a tag id, owned by the model and valid until it is
/// freed. NULL if the id is out of range or the handle is NULL.
///
/// # Safety
/// `model` must be NULL or a live handle from `dt_model_load`.
#[no_mangle]
pub unsafe extern "C" fn dt_model_tag_label(
    model: *const DtModel,
    tag_id: usize,
) -> *const c_char {
    if model.is_null() {
        return std::ptr::null();
    }
    let handle = &*model;
    match handle.labels.get(tag_id) {
        Some(label) => label.as_ptr(),
        None => std::ptr::null(),
    }
}

/// Tags one tokenized sentence. `tokens` holds `token_count` NUL-terminated
/// UTF-8 strings; the predicted tag ids are written to `tag_ids_out`, which
/// must have room for `token_count` entries. Unknown tokens are fine — the
/// model maps them to its unknown-word entry.
///
/// # Safety
/// `model` must be a live handle; `tokens` must point to `token_count`
/// valid strings; `tag_ids_out` must have room for `token_count` values.
#[no_mangle]
pub unsafe extern "C" fn dt_model_tag(
    model: *const DtModel,
    tokens: *const *const c_char,
    token_count: usize,
    tag_ids_out: *mut usize,
) -> DtStatus {
    guarded(|| {
        if model.is_null() {
            return fail(DtStatus::DtErrNullArgument, "model is NULL");
        }
        if token_count > 0 && (tokens.is_null() || tag_ids_out.is_null()) {
            return fail(
                DtStatus::DtErrNullArgument,
                "tokens or tag_ids_out is NULL",
            );
        }
        if token_count == 0 {
            return fail(DtStatus::DtErrData, "empty sentence");
        }
        let mut owned = Vec::with_capacity(token_count);
        for (i, &ptr) in slice::from_raw_parts(tokens, token_count).iter().enumerate() {
            match utf8_arg(ptr, &format!("tokens[{i}]")) {
                Ok(s) => owned.push(s.to_string()),
                Err(status) => return status,
            }
        }
        let handle = &*model;
        match handle.model.tag_indices(&owned) {
            Ok(ids) => {
                let out = slice::from_raw_parts_mut(tag_ids_out, token_count);
                out.copy_from_slice(&ids);
                DtStatus::DtOk
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Writes the model's learned label-noise transformation to `path` as CSV
/// (prediction tags down the rows, projected tags across the columns).
///
/// # Safety
/// `model` must be a live handle and `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dt_model_export_bias(
    model: *const DtModel,
    path: *const c_char,
) -> DtStatus {
    guarded(|| {
        if model.is_null() {
            return fail(DtStatus::DtErrNullArgument, "model is NULL");
        }
        let path = match utf8_arg(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        let handle = &*model;
        match export_bias(&handle.model, Path::new(path)) {
            Ok(()) => DtStatus::DtOk,
            Err(e) => fail_with(&e),
        }
    })
}
