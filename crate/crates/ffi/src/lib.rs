//! C ABI over the splicing localizer.
//!
//! Every function returns an [`ScfnStatus`]; on failure a message is
//! available from [`scfn_last_error`] on the same thread. Models are opaque
//! handles created by [`scfn_model_load`] and released with
//! [`scfn_model_free`].
//!
//! Frames are planar RGB `f32` in `[0, 1]`, laid out `[3, h, w]` and
//! concatenated frame after frame.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use scfnet::metrics;
use scfnet::model::Model;
use scfnet::pipeline::{degrade_quality, load_checkpoint_as};
use scfnet::tensor::Tensor;
use scfnet::video::Mask;
use scfnet::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScfnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Config = 6,
    Runtime = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct ScfnModel {
    model: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ScfnStatus {
    match e {
        Error::Shape(_) => ScfnStatus::Shape,
        Error::Argument(_) | Error::Spec(_) => ScfnStatus::InvalidArgument,
        Error::Config(_) => ScfnStatus::Config,
        Error::Format(_) => ScfnStatus::Format,
        Error::Io { .. } | Error::Image { .. } => ScfnStatus::Io,
        _ => ScfnStatus::Runtime,
    }
}

struct Fail(ScfnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ScfnStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ScfnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ScfnStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(&m);
            s
        }
        Err(_) => {
            set_error("internal panic");
            ScfnStatus::Panic
        }
    }
}

fn checked_len(parts: &[usize]) -> Result<usize, Fail> {
    parts
        .iter()
        .try_fold(1usize, |a, &b| a.checked_mul(b))
        .ok_or_else(|| Fail(ScfnStatus::InvalidArgument, "size overflow".into()))
}

/// Message for the most recent failure on this thread; empty after a
/// success. Valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn scfn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint (either precision) from a UTF-8 path.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scfn_model_load(path: *const c_char, out: *mut *mut ScfnModel) -> ScfnStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p =
            CStr::from_ptr(path).to_str().map_err(|_| Fail(ScfnStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let model = load_checkpoint_as::<f32>(Path::new(p))?.model();
        *out = Box::into_raw(Box::new(ScfnModel { model }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`scfn_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scfn_model_free(model: *mut ScfnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input frame size the model expects.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn scfn_model_input_size(model: *const ScfnModel, h: *mut usize, w: *mut usize) -> ScfnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if h.is_null() || w.is_null() {
            return Err(null("h/w"));
        }
        *h = m.model.cfg.input_h;
        *w = m.model.cfg.input_w;
        Ok(())
    })
}

/// Localizes every frame of a clip of `n_frames >= 1` frames of size
/// `h x w` (must equal the model input). Windows at the clip ends reuse
/// the edge frame. Writes `n_frames * h * w` probabilities to `out_probs`.
///
/// # Safety
/// `frames` must hold `n_frames * 3 * h * w` floats and `out_probs`
/// `n_frames * h * w`.
#[no_mangle]
pub unsafe extern "C" fn scfn_model_infer(
    model: *const ScfnModel,
    frames: *const f32,
    n_frames: usize,
    h: usize,
    w: usize,
    out_probs: *mut f32,
) -> ScfnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if frames.is_null() {
            return Err(null("frames"));
        }
        if out_probs.is_null() {
            return Err(null("out_probs"));
        }
        if n_frames == 0 {
            return Err(Fail(ScfnStatus::InvalidArgument, "empty clip".into()));
        }
        let per = checked_len(&[3, h, w])?;
        let total = checked_len(&[n_frames, per])?;
        let src = std::slice::from_raw_parts(frames, total);
        let clip = src
            .chunks_exact(per.max(1))
            .take(n_frames)
            .map(|c| Tensor::from_vec(&[3, h, w], c.to_vec()))
            .collect::<scfnet::Result<Vec<_>>>()?;
        let maps = m.model.video_infer(&clip)?;
        let dst = std::slice::from_raw_parts_mut(out_probs, checked_len(&[n_frames, h, w])?);
        for (chunk, map) in dst.chunks_exact_mut(h * w).zip(&maps) {
            for (d, &p) in chunk.iter_mut().zip(&map.probs) {
                *d = p as f32;
            }
        }
        Ok(())
    })
}

/// IoU and F1 of one map against a binary mask (`0`/`1` bytes), a pixel
/// counting as predicted when its probability is at least `threshold`.
///
/// # Safety
/// `probs` and `mask` must each hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn scfn_score(
    probs: *const f32,
    mask: *const u8,
    len: usize,
    threshold: f64,
    out_iou: *mut f64,
    out_f1: *mut f64,
) -> ScfnStatus {
    guard(|| {
        if probs.is_null() || mask.is_null() {
            return Err(null("probs/mask"));
        }
        if out_iou.is_null() || out_f1.is_null() {
            return Err(null("out_iou/out_f1"));
        }
        let p: Vec<f64> = std::slice::from_raw_parts(probs, len).iter().map(|&v| v as f64).collect();
        let gt = Mask::new(1, len, std::slice::from_raw_parts(mask, len).to_vec())?;
        let c = metrics::count(&p, &gt, threshold)?;
        *out_iou = c.iou();
        *out_f1 = c.f1();
        Ok(())
    })
}

/// Compresses one `[3, h, w]` frame at quality `0..=51` (0 is a copy).
///
/// # Safety
/// `frame` and `out` must each hold `3 * h * w` floats; they may alias.
#[no_mangle]
pub unsafe extern "C" fn scfn_degrade(frame: *const f32, h: usize, w: usize, quality: u8, out: *mut f32) -> ScfnStatus {
    guard(|| {
        if frame.is_null() || out.is_null() {
            return Err(null("frame/out"));
        }
        let n = checked_len(&[3, h, w])?;
        let t = Tensor::from_vec(&[3, h, w], std::slice::from_raw_parts(frame, n).to_vec())?;
        let d = degrade_quality(&t, quality)?;
        ptr::copy(d.data().as_ptr(), out, n);
        Ok(())
    })
}

/// Library version, static NUL-terminated string.
#[no_mangle]
pub extern "C" fn scfn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
