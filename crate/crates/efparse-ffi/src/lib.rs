//! C ABI over the parser: opaque model handles, status codes, and string
//! buffers the caller frees with [`efp_string_free`].
//!
//! Every function is safe to call from any thread; the last error message
//! is thread-local. Returned strings are NUL-terminated UTF-8 allocated by
//! this library.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::io::BufReader;
use std::os::raw::c_char;
use std::path::Path;

use efparse::conll::{read_conll, write_conll, PredictedTree};
use efparse::eval::{attachment_scores, PosGroupTable, PunctuationPolicy};
use efparse::model::{Model, ModelError};
use efparse::parser::parse_record;

/// Status codes mirroring the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfpStatus {
    Ok = 0,
    Usage = 1,
    Data = 2,
    Mismatch = 3,
    NullArgument = 4,
    InvalidUtf8 = 5,
}

/// Opaque handle to a loaded model.
pub struct EfpModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn fail(status: EfpStatus, message: impl Into<String>) -> EfpStatus {
    set_error(message.into());
    status
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn efp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn efp_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, EfpStatus> {
    if ptr.is_null() {
        return Err(EfpStatus::NullArgument);
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| EfpStatus::InvalidUtf8)
}

/// Load a checkpoint (the `.meta.json` sidecar must sit next to it) and
/// hand back an owned model via `out`.
///
/// # Safety
/// `checkpoint_path` must be a valid NUL-terminated string and `out` a
/// valid pointer; the result must be released with [`efp_model_free`].
#[no_mangle]
pub unsafe extern "C" fn efp_model_load(
    checkpoint_path: *const c_char,
    out: *mut *mut EfpModel,
) -> EfpStatus {
    if out.is_null() {
        return fail(EfpStatus::NullArgument, "out pointer is NULL");
    }
    let path = match cstr_arg(checkpoint_path) {
        Ok(s) => s,
        Err(status) => return fail(status, "checkpoint path is NULL or not UTF-8"),
    };
    match Model::load(Path::new(path)) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(EfpModel { inner }));
            EfpStatus::Ok
        }
        Err(ModelError::Io(e)) => fail(EfpStatus::Data, format!("{path}: {e}")),
        Err(ModelError::Param(efparse::params::ParamError::Io(e))) => {
            fail(EfpStatus::Data, format!("{path}: {e}"))
        }
        Err(e) => fail(EfpStatus::Mismatch, e.to_string()),
    }
}

/// Release a model returned by [`efp_model_load`]. NULL is a no-op.
///
/// # Safety
/// `model` must be NULL or a pointer from [`efp_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn efp_model_free(model: *mut EfpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Parse CoNLL text and return new CoNLL text with predicted heads and
/// relations filled in. The caller owns `*out` and frees it with
/// [`efp_string_free`].
///
/// # Safety
/// `model` must come from [`efp_model_load`]; `conll` must be a valid
/// NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn efp_parse_conll(
    model: *const EfpModel,
    conll: *const c_char,
    out: *mut *mut c_char,
) -> EfpStatus {
    if model.is_null() || out.is_null() {
        return fail(EfpStatus::NullArgument, "model or out pointer is NULL");
    }
    let text = match cstr_arg(conll) {
        Ok(s) => s,
        Err(status) => return fail(status, "input is NULL or not UTF-8"),
    };
    let model = &(*model).inner;
    let records = match read_conll(BufReader::new(text.as_bytes())) {
        Ok(r) => r,
        Err(e) => return fail(EfpStatus::Data, e.to_string()),
    };
    let mut trees: Vec<PredictedTree> = Vec::with_capacity(records.len());
    for rec in &records {
        match parse_record(model, rec, None) {
            Ok(tree) => trees.push(tree),
            Err(e) => return fail(EfpStatus::Data, e.to_string()),
        }
    }
    let mut buf = Vec::new();
    if let Err(e) = write_conll(&mut buf, &records, Some(&trees)) {
        return fail(EfpStatus::Data, e.to_string());
    }
    match CString::new(buf) {
        Ok(c) => {
            *out = c.into_raw();
            EfpStatus::Ok
        }
        Err(e) => fail(EfpStatus::Data, e.to_string()),
    }
}

/// Score predicted CoNLL text against gold CoNLL text with the default
/// punctuation policy, writing UAS and LAS through the out pointers.
///
/// # Safety
/// All pointers must be valid; the strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn efp_eval_conll(
    gold: *const c_char,
    pred: *const c_char,
    uas: *mut f64,
    las: *mut f64,
) -> EfpStatus {
    if uas.is_null() || las.is_null() {
        return fail(EfpStatus::NullArgument, "uas or las pointer is NULL");
    }
    let gold_text = match cstr_arg(gold) {
        Ok(s) => s,
        Err(status) => return fail(status, "gold is NULL or not UTF-8"),
    };
    let pred_text = match cstr_arg(pred) {
        Ok(s) => s,
        Err(status) => return fail(status, "pred is NULL or not UTF-8"),
    };
    let gold_records = match read_conll(BufReader::new(gold_text.as_bytes())) {
        Ok(r) => r,
        Err(e) => return fail(EfpStatus::Data, e.to_string()),
    };
    let pred_records = match read_conll(BufReader::new(pred_text.as_bytes())) {
        Ok(r) => r,
        Err(e) => return fail(EfpStatus::Data, e.to_string()),
    };
    let mut trees: Vec<PredictedTree> = Vec::with_capacity(pred_records.len());
    for (i, rec) in pred_records.iter().enumerate() {
        let mut tree = Vec::with_capacity(rec.len());
        for t in &rec.tokens {
            let Some(head) = t.head else {
                return fail(
                    EfpStatus::Data,
                    format!("prediction sentence {} lacks a head column", i + 1),
                );
            };
            tree.push((head, t.rel.clone().unwrap_or_else(|| "_".to_string())));
        }
        trees.push(tree);
    }
    match attachment_scores(
        &gold_records,
        &trees,
        &PunctuationPolicy::default(),
        &PosGroupTable::default(),
        5,
    ) {
        Ok(report) => {
            *uas = report.uas;
            *las = report.las;
            EfpStatus::Ok
        }
        Err(e) => fail(EfpStatus::Data, e.to_string()),
    }
}

/// Free a string returned by this library. NULL is a no-op.
///
/// # Safety
/// `s` must be NULL or a pointer returned by an `efp_*` function, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn efp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
