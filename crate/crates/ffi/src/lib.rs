//! C ABI over the degmon monitor.
//!
//! Every fallible function returns a [`DegmonStatus`]; on failure the message
//! is kept per thread and can be copied out with [`degmon_last_error`].
//! Handles are opaque and must be released with their `_free` function.
//! Images cross the boundary as interleaved 8-bit RGB, row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use degmon::container::Container;
use degmon::eval::{auroc, FlowMonitor, Monitor, ScoreSet};
use degmon::flow::FlowBaseline;
use degmon::model::ManifoldModel;
use degmon::prototype::{gate, MonitorScore};
use degmon::{Error, ImageBuffer};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegmonStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Validation = 4,
    State = 5,
    Format = 6,
    Numerical = 7,
    Io = 8,
    Panic = 9,
}

/// Trained manifold model with its prototype.
pub struct DegmonModel {
    inner: ManifoldModel,
}

/// Trained flow baseline; scoring also needs the model whose backbone it reads.
pub struct DegmonFlow {
    inner: FlowBaseline,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(DegmonStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) => DegmonStatus::Config,
            Error::Validation(_) => DegmonStatus::Validation,
            Error::State(_) => DegmonStatus::State,
            Error::Format(_) => DegmonStatus::Format,
            Error::Numerical(_) => DegmonStatus::Numerical,
            Error::Io { .. } | Error::MissingFiles(_) | Error::Decode { .. } => DegmonStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DegmonStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(DegmonStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DegmonStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure(DegmonStatus::Panic, format!("panic: {msg}")))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            DegmonStatus::Ok
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn image_arg(rgb: *const u8, height: usize, width: usize) -> Result<ImageBuffer, Failure> {
    if rgb.is_null() {
        return Err(null("rgb"));
    }
    let len = height
        .checked_mul(width)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| invalid("image dimensions overflow"))?;
    let raw = std::slice::from_raw_parts(rgb, len);
    Ok(ImageBuffer::from_rgb8(height, width, raw)?)
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn degmon_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn degmon_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn degmon_model_load(path: *const c_char, out: *mut *mut DegmonModel) -> DegmonStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let inner = ManifoldModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(DegmonModel { inner }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from `degmon_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn degmon_model_free(model: *mut DegmonModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length the model resizes inputs to; 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn degmon_model_input_size(model: *const DegmonModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.input_size())
}

/// Embedding dimension; 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn degmon_model_embed_dim(model: *const DegmonModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.spec.head.embed_dim)
}

/// Unit-norm embedding of one image into `out[0..out_len]`; `out_len` must
/// equal the embedding dimension.
///
/// # Safety
/// `rgb` must hold `height*width*3` bytes and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn degmon_model_embed_rgb8(
    model: *const DegmonModel,
    rgb: *const u8,
    height: usize,
    width: usize,
    out: *mut f64,
    out_len: usize,
) -> DegmonStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let img = image_arg(rgb, height, width)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let z = m.inner.embed(std::slice::from_ref(&img))?.remove(0);
        if out_len != z.len() {
            return Err(invalid(format!("out_len is {out_len}, embedding dimension is {}", z.len())));
        }
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&z);
        Ok(())
    })
}

/// Degradation score `1 - z·mu` of one image.
///
/// # Safety
/// `rgb` must hold `height*width*3` bytes; `score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn degmon_model_score_rgb8(
    model: *const DegmonModel,
    rgb: *const u8,
    height: usize,
    width: usize,
    score: *mut f64,
) -> DegmonStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out_arg(score, "score")?;
        let img = image_arg(rgb, height, width)?;
        *out = m.inner.score(std::slice::from_ref(&img))?[0].0;
        Ok(())
    })
}

/// Degradation score of a PNG/JPEG file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn degmon_model_score_file(
    model: *const DegmonModel,
    path: *const c_char,
    score: *mut f64,
) -> DegmonStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out_arg(score, "score")?;
        let img = ImageBuffer::load(&path_arg(path)?)?;
        *out = m.inner.score(std::slice::from_ref(&img))?[0].0;
        Ok(())
    })
}

/// Accept decision: true iff `score <= tau`.
#[no_mangle]
pub extern "C" fn degmon_gate(score: f64, tau: f64) -> bool {
    gate(MonitorScore(score), tau)
}

/// Loads a flow baseline checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn degmon_flow_load(path: *const c_char, out: *mut *mut DegmonFlow) -> DegmonStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let (inner, _) = FlowBaseline::from_container(&Container::read(&path_arg(path)?)?)?;
        *out = Box::into_raw(Box::new(DegmonFlow { inner }));
        Ok(())
    })
}

/// Releases a flow; null is ignored.
///
/// # Safety
/// `flow` must come from `degmon_flow_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn degmon_flow_free(flow: *mut DegmonFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Negative log-likelihood score of one image under a flow baseline, using
/// the backbone of `model`.
///
/// # Safety
/// Handles must be live; `rgb` must hold `height*width*3` bytes.
#[no_mangle]
pub unsafe extern "C" fn degmon_flow_score_rgb8(
    flow: *const DegmonFlow,
    model: *const DegmonModel,
    rgb: *const u8,
    height: usize,
    width: usize,
    score: *mut f64,
) -> DegmonStatus {
    guard(|| {
        let f = flow.as_ref().ok_or_else(|| null("flow"))?;
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out_arg(score, "score")?;
        let img = image_arg(rgb, height, width)?;
        let monitor = FlowMonitor {
            id: String::new(),
            model: &m.inner,
            baseline: f.inner.clone(),
        };
        *out = monitor.score_images(std::slice::from_ref(&img))?[0];
        Ok(())
    })
}

/// Applies one degradation operator (by id, e.g. `"gaussian_noise"`) to an
/// image; `out_rgb` receives `height*width*3` bytes.
///
/// # Safety
/// `rgb` and `out_rgb` must each hold `height*width*3` bytes; `op_id` must
/// be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn degmon_apply_operator_rgb8(
    rgb: *const u8,
    height: usize,
    width: usize,
    op_id: *const c_char,
    strength: f64,
    seed: u64,
    out_rgb: *mut u8,
) -> DegmonStatus {
    guard(|| {
        let img = image_arg(rgb, height, width)?;
        if op_id.is_null() {
            return Err(null("op_id"));
        }
        if out_rgb.is_null() {
            return Err(null("out_rgb"));
        }
        let op = CStr::from_ptr(op_id).to_str().map_err(|_| invalid("op_id is not valid UTF-8"))?;
        let degraded = degmon::degrade::apply_operator_by_id(&img, op, strength, seed)?;
        std::slice::from_raw_parts_mut(out_rgb, height * width * 3).copy_from_slice(&degraded.to_rgb8());
        Ok(())
    })
}

/// AUROC with degraded (`ood`) scores as the positive class; ties count half.
///
/// # Safety
/// `id_scores` and `ood_scores` must hold `n_id` and `n_ood` doubles.
#[no_mangle]
pub unsafe extern "C" fn degmon_auroc(
    id_scores: *const f64,
    n_id: usize,
    ood_scores: *const f64,
    n_ood: usize,
    out: *mut f64,
) -> DegmonStatus {
    guard(|| {
        if id_scores.is_null() || ood_scores.is_null() {
            return Err(null("scores"));
        }
        let out = out_arg(out, "out")?;
        let set = ScoreSet::new(
            std::slice::from_raw_parts(id_scores, n_id).to_vec(),
            std::slice::from_raw_parts(ood_scores, n_ood).to_vec(),
        )?;
        *out = auroc(&set)?;
        Ok(())
    })
}
