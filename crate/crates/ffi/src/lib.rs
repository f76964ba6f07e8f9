//! C ABI over the cwtm engine.
//!
//! Every fallible call returns a [`CwtmStatus`]; on failure the message is
//! available from [`cwtm_last_error`] on the same thread until the next
//! failing call there. Models are opaque handles released with
//! [`cwtm_model_free`]. Output buffers are caller-owned and their lengths
//! are checked before anything is written.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cwtm::backbone::{ContextualEmbeddingDoc, EmbeddingCache, EmbeddingSource};
use cwtm::corpus::DocumentRecord;
use cwtm::geometry::{check_simplex, idk_kernel, mmd_idk_flat, sample_dirichlet, DirichletPrior, SimplexVector};
use cwtm::model::CwtmModel as Model;
use cwtm::tensor::Matrix;
use cwtm::{CwtmError, Result};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CwtmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct CwtmModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &CwtmError) -> CwtmStatus {
    match err {
        CwtmError::Io { .. } => CwtmStatus::Io,
        CwtmError::Numeric(_) => CwtmStatus::Numeric,
        CwtmError::Config(_) | CwtmError::InvalidPrior(_) | CwtmError::InvalidBatch(_) | CwtmError::Shape(_) | CwtmError::UnsupportedMode { .. } => CwtmStatus::InvalidArgument,
        _ => CwtmStatus::Data,
    }
}

enum Failure {
    Status(CwtmStatus, String),
    Engine(CwtmError),
}

impl From<CwtmError> for Failure {
    fn from(e: CwtmError) -> Self {
        Failure::Engine(e)
    }
}

fn guard(f: impl FnOnce() -> std::result::Result<(), Failure>) -> CwtmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CwtmStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Failure::Engine(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            CwtmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(CwtmStatus::NullArgument, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> std::result::Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(CwtmStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> std::result::Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out(out: *mut f64, len: usize, values: &[f64]) -> std::result::Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < values.len() {
        return Err(Failure::Status(CwtmStatus::BufferTooSmall, format!("output buffer holds {len} values, {} needed", values.len())));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn model<'a>(handle: *const CwtmModel) -> std::result::Result<&'a Model, Failure> {
    handle.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cwtm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint. `cache_path` may be null for toy-mode models.
///
/// # Safety
/// String arguments must be null or nul-terminated; `out` must be a valid
/// pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn cwtm_model_load(checkpoint_path: *const c_char, cache_path: *const c_char, out: *mut *mut CwtmModel) -> CwtmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ckpt = c_str(checkpoint_path, "checkpoint_path")?;
        let cache = if cache_path.is_null() {
            None
        } else {
            Some(EmbeddingCache::read(Path::new(c_str(cache_path, "cache_path")?))?)
        };
        let inner = Model::load(Path::new(ckpt), cache)?;
        *out = Box::into_raw(Box::new(CwtmModel { inner }));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `handle` must come from [`cwtm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cwtm_model_free(handle: *mut CwtmModel) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of topics, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cwtm_model_num_topics(handle: *const CwtmModel) -> usize {
    handle.as_ref().map_or(0, |m| m.inner.num_topics())
}

/// Width of the word embeddings the model consumes, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cwtm_model_dim(handle: *const CwtmModel) -> usize {
    handle.as_ref().map_or(0, |m| m.inner.network().dim())
}

/// Document-topic vector of a raw text (toy-mode models).
///
/// # Safety
/// `text` must be nul-terminated; `theta_out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cwtm_infer_text(handle: *const CwtmModel, text: *const c_char, theta_out: *mut f64, len: usize) -> CwtmStatus {
    guard(|| {
        let m = model(handle)?;
        let text = c_str(text, "text")?;
        let inf = m.infer_document(&DocumentRecord::new("ffi", text))?;
        write_out(theta_out, len, inf.document.theta_d.as_slice())
    })
}

/// Document-topic vector from `n_words × dim` row-major word embeddings.
///
/// # Safety
/// `embeddings` must hold `n_words * dim` doubles; `theta_out` must hold
/// `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cwtm_infer_embeddings(
    handle: *const CwtmModel,
    embeddings: *const f64,
    n_words: usize,
    dim: usize,
    theta_out: *mut f64,
    len: usize,
) -> CwtmStatus {
    guard(|| {
        let m = model(handle)?;
        if dim != m.network().dim() {
            return Err(Failure::Status(CwtmStatus::InvalidArgument, format!("embedding width {dim}, model expects {}", m.network().dim())));
        }
        let n = n_words.checked_mul(dim).ok_or_else(|| Failure::Status(CwtmStatus::InvalidArgument, "n_words * dim overflows".into()))?;
        let rows = slice(embeddings, n, "embeddings")?;
        let words = (0..n_words).map(|i| format!("w{i}")).collect();
        let doc = ContextualEmbeddingDoc::new("ffi", words, Matrix::from_vec(n_words, dim, rows.to_vec()), EmbeddingSource::Cached)?;
        let inf = m.infer_embeddings(&doc)?;
        write_out(theta_out, len, inf.document.theta_d.as_slice())
    })
}

fn simplex(values: &[f64]) -> Result<SimplexVector> {
    SimplexVector::new(values.to_vec())
}

/// Information diffusion kernel of two points on the simplex.
///
/// # Safety
/// `a` and `b` must hold `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cwtm_idk_kernel(a: *const f64, b: *const f64, dim: usize, out: *mut f64) -> CwtmStatus {
    guard(|| {
        let k = idk_kernel(&simplex(slice(a, dim, "a")?)?, &simplex(slice(b, dim, "b")?)?)?;
        write_out(out, 1, &[k])
    })
}

/// Unbiased MMD between two `m × dim` row-major batches of simplex points.
///
/// # Safety
/// `q` and `p` must hold `m * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cwtm_mmd_idk(q: *const f64, p: *const f64, m: usize, dim: usize, out: *mut f64) -> CwtmStatus {
    guard(|| {
        let n = m.checked_mul(dim).ok_or_else(|| Failure::Status(CwtmStatus::InvalidArgument, "m * dim overflows".into()))?;
        let (q, p) = (slice(q, n, "q")?, slice(p, n, "p")?);
        if dim > 0 {
            for row in q.chunks_exact(dim).chain(p.chunks_exact(dim)) {
                check_simplex(row)?;
            }
        }
        let v = mmd_idk_flat(q, p, m, dim)?;
        write_out(out, 1, &[v])
    })
}

/// `m` seeded draws from a symmetric Dirichlet, written row-major.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cwtm_sample_dirichlet(alpha: f64, dim: usize, m: usize, seed: u64, out: *mut f64, len: usize) -> CwtmStatus {
    guard(|| {
        let batch = sample_dirichlet(&DirichletPrior::new(alpha, dim)?, m, seed)?;
        write_out(out, len, &batch.to_flat())
    })
}
