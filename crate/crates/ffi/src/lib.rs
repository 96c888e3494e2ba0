//! C ABI for loading trained legal-form models and classifying names.
//!
//! Conventions:
//! - Every fallible function returns an `LfStatus`. On failure,
//!   `lf_last_error` returns a message for the calling thread.
//! - Handles are opaque. Free them with the matching `*_free` function.
//! - Strings returned through `char **` are owned by the caller. Release
//!   them with `lf_string_free`.
//! - Panics never cross the boundary. They are reported as
//!   `LfStatus::Panic`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use legalform::elf::{ElfCode, ElfColumnMap, ElfError, ElfRegistry};
use legalform::model_store::{self, ModelStoreError};
use legalform::pipeline::TrainedPipeline;
use legalform::preprocess::{normalize, PreprocessMode};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    CorruptModel = 4,
    VersionMismatch = 5,
    InvalidArgument = 6,
    NotFound = 7,
    Panic = 8,
}

/// Preprocessing modes accepted by `lf_normalize`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfPreprocessMode {
    LowerOnly = 0,
    Extended = 1,
}

/// One scored class. `elf_code` is NUL-terminated.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LfPrediction {
    pub elf_code: [c_char; 5],
    pub probability: f64,
}

/// Opaque trained pipeline.
pub struct LfPipeline(TrainedPipeline);

/// Opaque ELF code registry.
pub struct LfRegistry(ElfRegistry);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let msg = CString::new(message.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

type FfiResult<T> = Result<T, (LfStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> LfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            LfStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            LfStatus::Panic
        }
    }
}

unsafe fn arg_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err((LfStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (LfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn non_null<T>(p: *mut T, what: &str) -> FfiResult<()> {
    if p.is_null() {
        Err((LfStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn store_error(e: ModelStoreError) -> (LfStatus, String) {
    let status = match e {
        ModelStoreError::CorruptModel(_) => LfStatus::CorruptModel,
        ModelStoreError::VersionMismatch { .. } => LfStatus::VersionMismatch,
        ModelStoreError::Io { .. } => LfStatus::Io,
    };
    (status, e.to_string())
}

fn elf_error(e: ElfError) -> (LfStatus, String) {
    let status = match e {
        ElfError::Io(_) => LfStatus::Io,
        ElfError::UnknownCode(_) => LfStatus::NotFound,
        _ => LfStatus::InvalidArgument,
    };
    (status, e.to_string())
}

fn out_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let c = CString::new(s).map_err(|_| (LfStatus::InvalidArgument, "string contains NUL".to_owned()))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn code_buf(code: &ElfCode) -> [c_char; 5] {
    let mut buf = [0 as c_char; 5];
    for (b, &c) in buf.iter_mut().zip(code.as_str().as_bytes()) {
        *b = c as c_char;
    }
    buf
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn lf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn lf_pipeline_load(path: *const c_char, out: *mut *mut LfPipeline) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = arg_str(path, "path")?;
        let p = model_store::load(Path::new(path)).map_err(store_error)?;
        *out = Box::into_raw(Box::new(LfPipeline(p)));
        Ok(())
    })
}

/// Loads a model from an in-memory model file image.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lf_pipeline_from_bytes(data: *const u8, len: usize, out: *mut *mut LfPipeline) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        if data.is_null() {
            return Err((LfStatus::NullArgument, "data is null".into()));
        }
        let bytes = std::slice::from_raw_parts(data, len);
        let p = model_store::from_bytes(bytes).map_err(store_error)?;
        *out = Box::into_raw(Box::new(LfPipeline(p)));
        Ok(())
    })
}

/// Releases a pipeline. NULL is ignored.
///
/// # Safety
/// `p` must come from `lf_pipeline_load` or `lf_pipeline_from_bytes`.
#[no_mangle]
pub unsafe extern "C" fn lf_pipeline_free(p: *mut LfPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Classifies a legal name. Writes up to `capacity` classes, best first,
/// into `results` and their count into `written`.
///
/// # Safety
/// `p` must be a live pipeline, `name` NUL-terminated, `results` writable
/// for `capacity` elements and `written` writable.
#[no_mangle]
pub unsafe extern "C" fn lf_pipeline_classify(
    p: *const LfPipeline,
    name: *const c_char,
    results: *mut LfPrediction,
    capacity: usize,
    written: *mut usize,
) -> LfStatus {
    guard(|| {
        let p = p.as_ref().ok_or((LfStatus::NullArgument, "pipeline is null".into()))?;
        non_null(written, "written")?;
        if capacity == 0 {
            return Err((LfStatus::InvalidArgument, "capacity must be at least 1".into()));
        }
        non_null(results, "results")?;
        let name = arg_str(name, "name")?;
        let c = p.0.classify(name, capacity);
        for (i, (code, prob)) in c.top.iter().take(capacity).enumerate() {
            *results.add(i) = LfPrediction { elf_code: code_buf(code), probability: *prob };
        }
        *written = c.top.len().min(capacity);
        Ok(())
    })
}

/// Model identifier such as `cnb+prep`.
///
/// # Safety
/// `p` must be a live pipeline and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lf_pipeline_model_id(p: *const LfPipeline, out: *mut *mut c_char) -> LfStatus {
    guard(|| {
        let p = p.as_ref().ok_or((LfStatus::NullArgument, "pipeline is null".into()))?;
        non_null(out, "out")?;
        out_string(out, p.0.model_id())
    })
}

/// Jurisdiction the model was trained for.
///
/// # Safety
/// `p` must be a live pipeline and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lf_pipeline_jurisdiction(p: *const LfPipeline, out: *mut *mut c_char) -> LfStatus {
    guard(|| {
        let p = p.as_ref().ok_or((LfStatus::NullArgument, "pipeline is null".into()))?;
        non_null(out, "out")?;
        out_string(out, p.0.jurisdiction.to_string())
    })
}

/// Number of classes the model can predict.
///
/// # Safety
/// `p` must be a live pipeline or NULL (returns 0).
#[no_mangle]
pub unsafe extern "C" fn lf_pipeline_n_classes(p: *const LfPipeline) -> usize {
    p.as_ref().map_or(0, |p| p.0.class_labels().len())
}

/// Applies a preprocessing chain to a name.
///
/// # Safety
/// `name` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lf_normalize(name: *const c_char, mode: LfPreprocessMode, out: *mut *mut c_char) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        let name = arg_str(name, "name")?;
        let mode = match mode {
            LfPreprocessMode::LowerOnly => PreprocessMode::LowerOnly,
            LfPreprocessMode::Extended => PreprocessMode::Extended,
        };
        out_string(out, normalize(name, mode))
    })
}

/// Loads an ELF code list CSV with the standard column names.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lf_registry_load(path: *const c_char, out: *mut *mut LfRegistry) -> LfStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = arg_str(path, "path")?;
        let r = ElfRegistry::load(Path::new(path), &ElfColumnMap::default()).map_err(elf_error)?;
        *out = Box::into_raw(Box::new(LfRegistry(r)));
        Ok(())
    })
}

/// Releases a registry. NULL is ignored.
///
/// # Safety
/// `r` must come from `lf_registry_load`.
#[no_mangle]
pub unsafe extern "C" fn lf_registry_free(r: *mut LfRegistry) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Local legal-form name for an ELF code.
///
/// # Safety
/// `r` must be a live registry, `code` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lf_registry_local_name(
    r: *const LfRegistry,
    code: *const c_char,
    out: *mut *mut c_char,
) -> LfStatus {
    guard(|| {
        let r = r.as_ref().ok_or((LfStatus::NullArgument, "registry is null".into()))?;
        non_null(out, "out")?;
        let code = ElfCode::new(arg_str(code, "code")?).map_err(elf_error)?;
        let entry = r.0.resolve(&code).map_err(elf_error)?;
        out_string(out, entry.local_name)
    })
}
