//! C interface to the `cafcn` recognizer.
//!
//! Every function returns a [`CafcnStatus`]. On failure a message is
//! available from [`cafcn_last_error`] on the same thread. Strings handed
//! out by the library must be released with [`cafcn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cafcn::eval::recognize;
use cafcn::nn::io::load_weights;
use cafcn::synth::RgbImage;
use cafcn::word::{ProbMap, WordFormer};
use cafcn::{Error, Model};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CafcnStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was out of range or inconsistent.
    InvalidArgument = 2,
    /// A file could not be read.
    Io = 3,
    /// A file was malformed or did not match the expected layout.
    Format = 4,
    /// The library failed internally (including caught panics).
    Internal = 5,
}

/// Loaded network weights.
pub struct CafcnModel {
    model: Model<f32>,
    former: WordFormer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CafcnStatus {
    match e {
        Error::InvalidArgument(_) => CafcnStatus::InvalidArgument,
        Error::Io { .. } => CafcnStatus::Io,
        Error::Image { .. }
        | Error::Manifest { .. }
        | Error::Format(_)
        | Error::ShapeMismatch { .. }
        | Error::Json(_) => CafcnStatus::Format,
        _ => CafcnStatus::Internal,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (CafcnStatus, String)>) -> CafcnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CafcnStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CafcnStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (CafcnStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CafcnStatus, String) {
    (CafcnStatus::NullPointer, format!("{what} is null"))
}

fn to_c_string(s: String) -> Result<*mut c_char, (CafcnStatus, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (CafcnStatus::Internal, "output contains a NUL byte".into()))
}

/// Message for the last failure on this thread, or null if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn cafcn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cafcn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a weight file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer to
/// writable storage for one model pointer.
#[no_mangle]
pub unsafe extern "C" fn cafcn_model_load(
    path: *const c_char,
    out: *mut *mut CafcnModel,
) -> CafcnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| {
            (
                CafcnStatus::InvalidArgument,
                "path is not UTF-8".to_string(),
            )
        })?;
        let model = load_weights(Path::new(path), None).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(CafcnModel {
            model,
            former: WordFormer::default(),
        }));
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a pointer from [`cafcn_model_load`] that has not
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn cafcn_model_free(model: *mut CafcnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Change the binarization threshold used by word formation (default
/// 240/255).
///
/// # Safety
/// `model` must be a live pointer from [`cafcn_model_load`].
#[no_mangle]
pub unsafe extern "C" fn cafcn_model_set_threshold(
    model: *mut CafcnModel,
    threshold: f64,
) -> CafcnStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err((
                CafcnStatus::InvalidArgument,
                format!("threshold {threshold} outside (0, 1]"),
            ));
        }
        m.former.threshold = threshold;
        Ok(())
    })
}

/// Recognize an interleaved 8-bit RGB image (`height * width * 3` bytes, row
/// major). On success `*json_out` receives
/// `{"word": ..., "chars": [{"char", "box", "conf"}]}`.
///
/// # Safety
/// `model` must be live, `pixels` must point to `width * height * 3`
/// readable bytes and `json_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cafcn_predict_rgb8(
    model: *const CafcnModel,
    pixels: *const u8,
    width: u32,
    height: u32,
    json_out: *mut *mut c_char,
) -> CafcnStatus {
    guard(|| {
        if json_out.is_null() {
            return Err(null("json_out"));
        }
        *json_out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        if width == 0 || height == 0 {
            return Err((
                CafcnStatus::InvalidArgument,
                "image must not be empty".into(),
            ));
        }
        let len = (width as usize)
            .checked_mul(height as usize)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| (CafcnStatus::InvalidArgument, "image too large".to_string()))?;
        let bytes = std::slice::from_raw_parts(pixels, len);
        let img = RgbImage {
            width: width as usize,
            height: height as usize,
            data: bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        };
        let rec = recognize(&m.model, &img, &m.former).map_err(lib_err)?;
        let json = serde_json::to_string(&rec.prediction)
            .map_err(|e| (CafcnStatus::Internal, e.to_string()))?;
        *json_out = to_c_string(json)?;
        Ok(())
    })
}

/// Run word formation alone on a probability map laid out as
/// `height * width * classes` floats (class fastest). `*word_out` receives
/// the decoded word.
///
/// # Safety
/// `probs` must point to `height * width * classes` readable floats and
/// `word_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cafcn_form_word(
    probs: *const f32,
    height: u32,
    width: u32,
    classes: u32,
    word_out: *mut *mut c_char,
) -> CafcnStatus {
    guard(|| {
        if word_out.is_null() {
            return Err(null("word_out"));
        }
        *word_out = ptr::null_mut();
        if probs.is_null() {
            return Err(null("probs"));
        }
        let n = (height as usize)
            .checked_mul(width as usize)
            .and_then(|v| v.checked_mul(classes as usize))
            .ok_or_else(|| (CafcnStatus::InvalidArgument, "map too large".to_string()))?;
        let data = std::slice::from_raw_parts(probs, n).to_vec();
        let map = ProbMap::new(height as usize, width as usize, classes as usize, data)
            .map_err(lib_err)?;
        let result = WordFormer::default().form(&map);
        *word_out = to_c_string(result.word)?;
        Ok(())
    })
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cafcn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
