//! C ABI over the omnivale toolkit.
//!
//! Every function returns an [`OvStatus`]; on failure the message is
//! available from [`ov_last_error`] on the same thread until the next call.
//! Handles are opaque and must be released with their `_free` function.
//! Strings returned through out-parameters are owned by the caller and
//! released with [`ov_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use omnivale::capgen::embed::EmbeddingSeries;
use omnivale::fuse::fuse_record;
use omnivale::manifest::{dataset_stats, read_manifest_file, write_manifest_file, DatasetManifest, ManifestError, TimeInterval};
use omnivale::metrics::{iou, mrsd};
use omnivale::reviewd::{Mutation, ReviewError, ReviewStore};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    NotFound = 6,
    Conflict = 7,
    Internal = 8,
}

/// Loaded dataset manifest.
pub struct OvManifest {
    inner: DatasetManifest,
}

/// Review store over a manifest.
pub struct OvReviewStore {
    inner: ReviewStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(OvStatus, String);

impl From<ManifestError> for Failure {
    fn from(e: ManifestError) -> Self {
        let status = match &e {
            ManifestError::Io(_) => OvStatus::Io,
            ManifestError::Parse { .. } | ManifestError::UnsupportedSchema { .. } => OvStatus::Parse,
            _ => OvStatus::Validation,
        };
        Failure(status, e.to_string())
    }
}

impl From<ReviewError> for Failure {
    fn from(e: ReviewError) -> Self {
        let status = match &e {
            ReviewError::NotFound { .. } => OvStatus::NotFound,
            ReviewError::Conflict { .. } | ReviewError::IllegalTransition { .. } => OvStatus::Conflict,
            ReviewError::Validation { .. } => OvStatus::Validation,
            ReviewError::Storage(_) => OvStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OvStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OvStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            OvStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(OvStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(OvStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s).expect("JSON has no interior nul").into_raw()
}

/// Message for the last failed call on this thread, or null. Borrowed;
/// valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ov_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, nul-terminated toolkit version.
#[no_mangle]
pub extern "C" fn ov_version() -> *const c_char {
    static VERSION: &[u8] = concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes();
    VERSION.as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ov_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads and validates a manifest file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ov_manifest_read(path: *const c_char, out: *mut *mut OvManifest) -> OvStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let inner = read_manifest_file(path)?;
        write_out(out, Box::into_raw(Box::new(OvManifest { inner })), "out")
    })
}

/// # Safety
/// `m` must come from [`ov_manifest_read`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ov_manifest_free(m: *mut OvManifest) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ov_manifest_video_count(m: *const OvManifest, out: *mut usize) -> OvStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("manifest"))?;
        write_out(out, m.inner.records.len(), "out")
    })
}

/// Writes the manifest; nothing is written if it fails validation.
///
/// # Safety
/// `m` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ov_manifest_write(m: *const OvManifest, path: *const c_char) -> OvStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("manifest"))?;
        write_manifest_file(&m.inner, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Replaces the omni events of every retained video with the fusion of its
/// modal events.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ov_manifest_fuse(m: *mut OvManifest) -> OvStatus {
    guard(|| {
        let m = m.as_mut().ok_or_else(|| null("manifest"))?;
        let mut next = m.inner.clone();
        for r in next.records.iter_mut().filter(|r| r.is_retained()) {
            fuse_record(r).map_err(|e| Failure(OvStatus::Validation, format!("{}: {e}", r.video_id)))?;
        }
        m.inner = next;
        Ok(())
    })
}

/// Dataset statistics as a JSON object.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ov_manifest_stats_json(m: *const OvManifest, out: *mut *mut c_char) -> OvStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("manifest"))?;
        let stats = dataset_stats(&m.inner)?;
        let json = serde_json::to_string(&stats).map_err(|e| Failure(OvStatus::Internal, e.to_string()))?;
        write_out(out, to_c_string(json), "out")
    })
}

/// IoU of `[a_start, a_end)` and `[b_start, b_end)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ov_iou(a_start: f64, a_end: f64, b_start: f64, b_end: f64, out: *mut f64) -> OvStatus {
    guard(|| {
        let a = TimeInterval::new(a_start, a_end)?;
        let b = TimeInterval::new(b_start, b_end)?;
        write_out(out, iou(&a, &b), "out")
    })
}

/// MRSD of `n` row-major vectors of length `dim`.
///
/// # Safety
/// `data` must point to `n * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ov_mrsd(data: *const f64, n: usize, dim: usize, out: *mut f64) -> OvStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = n.checked_mul(dim).ok_or_else(|| Failure(OvStatus::Validation, "n * dim overflows".into()))?;
        let flat = std::slice::from_raw_parts(data, len);
        let rows: Vec<Vec<f64>> = if dim == 0 { Vec::new() } else { flat.chunks(dim).map(<[f64]>::to_vec).collect() };
        let series = EmbeddingSeries::new(rows, 1.0).map_err(|e| Failure(OvStatus::Validation, e.to_string()))?;
        let v = mrsd(&series).map_err(|e| Failure(OvStatus::Validation, e.to_string()))?;
        write_out(out, v, "out")
    })
}

/// Opens a review store over a manifest file. With a null `data_dir` the
/// store is memory-only.
///
/// # Safety
/// `manifest_path` must be nul-terminated; `data_dir` null or
/// nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ov_review_open(
    manifest_path: *const c_char,
    data_dir: *const c_char,
    snapshot_every: usize,
    out: *mut *mut OvReviewStore,
) -> OvStatus {
    guard(|| {
        let manifest = read_manifest_file(str_arg(manifest_path, "manifest_path")?)?;
        let inner = if data_dir.is_null() {
            ReviewStore::in_memory(manifest)?
        } else {
            ReviewStore::open(manifest, Path::new(str_arg(data_dir, "data_dir")?), snapshot_every)?
        };
        write_out(out, Box::into_raw(Box::new(OvReviewStore { inner })), "out")
    })
}

/// # Safety
/// `s` must come from [`ov_review_open`] and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ov_review_free(s: *mut OvReviewStore) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Submits one mutation given as JSON, e.g.
/// `{"item_id":"vid:o0","base_revision":0,"action":"flag","reason":"..."}`.
/// On success `out` (if non-null) receives the resulting item status as JSON.
///
/// # Safety
/// `s` must be a live handle; `mutation_json` nul-terminated; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ov_review_submit(
    s: *const OvReviewStore,
    mutation_json: *const c_char,
    out: *mut *mut c_char,
) -> OvStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("store"))?;
        let m: Mutation = serde_json::from_str(str_arg(mutation_json, "mutation_json")?)
            .map_err(|e| Failure(OvStatus::Parse, e.to_string()))?;
        let applied = s.inner.submit(m)?;
        if !out.is_null() {
            let json = serde_json::to_string(&applied).map_err(|e| Failure(OvStatus::Internal, e.to_string()))?;
            out.write(to_c_string(json));
        }
        Ok(())
    })
}

/// Writes the reviewed manifest to `path`.
///
/// # Safety
/// `s` must be a live handle; `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn ov_review_export(s: *const OvReviewStore, path: *const c_char) -> OvStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("store"))?;
        let m = s.inner.view().export()?;
        write_manifest_file(&m, str_arg(path, "path")?)?;
        Ok(())
    })
}
