//! C ABI over `motionsrvf`.
//!
//! Every fallible function returns an [`MsStatus`]; on failure the message is
//! available from [`ms_last_error_message`] on the same thread. Handles are
//! opaque, created by `ms_*_new`/`ms_*_load`/`ms_*_encode` style functions and
//! released with the matching `ms_*_free`. Panics never cross the boundary.
//!
//! Landmark coordinates are row-major `[frame][landmark][x, y]` doubles.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use motionsrvf::alignment::{align, karcher_mean, KarcherConfig};
use motionsrvf::geometry::{geodesic_distance, srvf_decode, srvf_encode, LandmarkSequence, Srvf};
use motionsrvf::motiongan::{generate_motion, load_checkpoint, MotionGan};
use motionsrvf::synthesis::{decode_sequence, transfer_motion, IntensityFactor};
use motionsrvf::{Error, ErrorClass};

/// Status codes returned by every fallible function.
#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    MS_OK = 0,
    /// A required pointer was null.
    MS_ERR_NULL = 1,
    /// A size or scalar argument was out of range.
    MS_ERR_INVALID_ARGUMENT = 2,
    /// The output buffer is too small; the required length was reported.
    MS_ERR_BUFFER_TOO_SMALL = 3,
    /// Invalid data or file contents.
    MS_ERR_DATA = 4,
    /// A numerical procedure failed.
    MS_ERR_NUMERICAL = 5,
    MS_ERR_IO = 6,
    /// Internal error; the library state is unchanged.
    MS_ERR_PANIC = 7,
}

/// Unit-norm SRVF.
pub struct MsSrvf(Srvf);

/// Trained generator loaded from a checkpoint.
pub struct MsModel(MotionGan);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Small { needed: usize },
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsStatus::MS_OK,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            MsStatus::MS_ERR_NULL
        }
        Ok(Err(Fail::Arg(m))) => {
            set_error(m);
            MsStatus::MS_ERR_INVALID_ARGUMENT
        }
        Ok(Err(Fail::Small { needed })) => {
            set_error(format!("output buffer too small, need {needed} elements"));
            MsStatus::MS_ERR_BUFFER_TOO_SMALL
        }
        Ok(Err(Fail::Lib(e))) => {
            let status = match (&e, e.class()) {
                (Error::Io { .. }, _) => MsStatus::MS_ERR_IO,
                (_, ErrorClass::Data) => MsStatus::MS_ERR_DATA,
                (_, ErrorClass::Numerical) => MsStatus::MS_ERR_NUMERICAL,
            };
            set_error(e.to_string());
            status
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {m}"));
            MsStatus::MS_ERR_PANIC
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out_slice<'a>(ptr: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], Fail> {
    if len < needed {
        return Err(Fail::Small { needed });
    }
    if ptr.is_null() {
        return Err(Fail::Null("output buffer"));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, needed))
}

unsafe fn write_out<T>(ptr: *mut T, value: T) -> Result<(), Fail> {
    if ptr.is_null() {
        return Err(Fail::Null("output pointer"));
    }
    ptr.write(value);
    Ok(())
}

unsafe fn handle<'a, T>(ptr: *const T, what: &'static str) -> Result<&'a T, Fail> {
    ptr.as_ref().ok_or(Fail::Null(what))
}

unsafe fn c_str<'a>(ptr: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not UTF-8")))
}

fn sequence(coords: &[f64], landmarks: usize) -> Result<LandmarkSequence, Fail> {
    Ok(LandmarkSequence::from_flat("ffi", None, landmarks, coords.to_vec())?)
}

fn intensity(v: f64) -> Result<IntensityFactor, Fail> {
    Ok(IntensityFactor::new(v)?)
}

/// Semantic version of the library, static storage.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null after a success.
/// Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn ms_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Encodes `frames x landmarks` points into a new SRVF handle.
#[no_mangle]
pub unsafe extern "C" fn ms_srvf_encode(
    coords: *const f64,
    frames: usize,
    landmarks: usize,
    out: *mut *mut MsSrvf,
) -> MsStatus {
    guard(|| {
        let n = frames
            .checked_mul(landmarks)
            .and_then(|v| v.checked_mul(2))
            .ok_or_else(|| Fail::Arg("size overflow".into()))?;
        let c = slice(coords, n, "coords")?;
        let q = srvf_encode(&sequence(c, landmarks)?.to_curve())?;
        write_out(out, Box::into_raw(Box::new(MsSrvf(q))))
    })
}

/// Builds an SRVF from samples, scaling them to unit norm.
#[no_mangle]
pub unsafe extern "C" fn ms_srvf_from_samples(
    data: *const f64,
    intervals: usize,
    dim: usize,
    out: *mut *mut MsSrvf,
) -> MsStatus {
    guard(|| {
        let n = intervals
            .checked_mul(dim)
            .ok_or_else(|| Fail::Arg("size overflow".into()))?;
        let d = slice(data, n, "data")?;
        let q = Srvf::normalized(intervals, dim, d.to_vec())?;
        write_out(out, Box::into_raw(Box::new(MsSrvf(q))))
    })
}

/// Releases an SRVF handle; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ms_srvf_free(q: *mut MsSrvf) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Number of velocity samples (frames - 1); 0 for null.
#[no_mangle]
pub unsafe extern "C" fn ms_srvf_intervals(q: *const MsSrvf) -> usize {
    q.as_ref().map_or(0, |q| q.0.intervals())
}

/// Values per sample (2 x landmarks); 0 for null.
#[no_mangle]
pub unsafe extern "C" fn ms_srvf_dim(q: *const MsSrvf) -> usize {
    q.as_ref().map_or(0, |q| q.0.dim())
}

/// Copies the `intervals x dim` samples into `out`.
#[no_mangle]
pub unsafe extern "C" fn ms_srvf_copy_data(q: *const MsSrvf, out: *mut f64, len: usize) -> MsStatus {
    guard(|| {
        let q = &handle(q, "srvf")?.0;
        out_slice(out, len, q.data().len())?.copy_from_slice(q.data());
        Ok(())
    })
}

/// Decodes `q` from `initial` (2 x landmarks values) into `out`, which
/// receives `(intervals + 1) x dim` values.
#[no_mangle]
pub unsafe extern "C" fn ms_srvf_decode(
    q: *const MsSrvf,
    initial: *const f64,
    initial_len: usize,
    intensity_factor: f64,
    out: *mut f64,
    out_len: usize,
) -> MsStatus {
    guard(|| {
        let q = &handle(q, "srvf")?.0;
        let init = slice(initial, initial_len, "initial")?;
        let curve = srvf_decode(q, init, intensity(intensity_factor)?.value())?;
        out_slice(out, out_len, curve.data().len())?.copy_from_slice(curve.data());
        Ok(())
    })
}

/// Geodesic distance on the sphere.
#[no_mangle]
pub unsafe extern "C" fn ms_geodesic_distance(a: *const MsSrvf, b: *const MsSrvf, out: *mut f64) -> MsStatus {
    guard(|| {
        let d = geodesic_distance(&handle(a, "a")?.0, &handle(b, "b")?.0)?;
        write_out(out, d)
    })
}

/// Registers `b` to `a`. Writes the aligned distance to `cost` and, when
/// `warping` is non-null, the `intervals + 1` warp values.
#[no_mangle]
pub unsafe extern "C" fn ms_align(
    a: *const MsSrvf,
    b: *const MsSrvf,
    cost: *mut f64,
    warping: *mut f64,
    warping_len: usize,
) -> MsStatus {
    guard(|| {
        let al = align(&handle(a, "a")?.0, &handle(b, "b")?.0)?;
        if !warping.is_null() {
            let w = al.warping.values();
            out_slice(warping, warping_len, w.len())?.copy_from_slice(w);
        }
        write_out(cost, al.cost)
    })
}

/// Karcher mean of `n` handles; `align_each_iter` non-zero registers the
/// members to the running mean.
#[no_mangle]
pub unsafe extern "C" fn ms_karcher_mean(
    set: *const *const MsSrvf,
    n: usize,
    align_each_iter: i32,
    out: *mut *mut MsSrvf,
) -> MsStatus {
    guard(|| {
        let ptrs = slice(set, n, "set")?;
        let members = ptrs
            .iter()
            .map(|p| handle(*p, "set element").map(|q| q.0.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let config = if align_each_iter != 0 {
            KarcherConfig::default()
        } else {
            KarcherConfig::without_alignment()
        };
        let mean = karcher_mean(&members, &config)?;
        write_out(out, Box::into_raw(Box::new(MsSrvf(mean))))
    })
}

/// Replays the motion of `source` (`frames x landmarks`) from `neutral`.
/// A negative `intensity_factor` keeps the source's path length.
#[no_mangle]
pub unsafe extern "C" fn ms_transfer(
    source: *const f64,
    frames: usize,
    landmarks: usize,
    neutral: *const f64,
    intensity_factor: f64,
    out: *mut f64,
    out_len: usize,
) -> MsStatus {
    guard(|| {
        let n = frames
            .checked_mul(landmarks)
            .and_then(|v| v.checked_mul(2))
            .ok_or_else(|| Fail::Arg("size overflow".into()))?;
        let src = sequence(slice(source, n, "source")?, landmarks)?;
        let neutral = slice(neutral, 2 * landmarks, "neutral")?;
        let i = if intensity_factor < 0.0 {
            IntensityFactor::with_max(src.to_curve().path_length(), f64::INFINITY)?
        } else {
            intensity(intensity_factor)?
        };
        let seq = transfer_motion(&src, neutral, i)?;
        out_slice(out, out_len, seq.coords().len())?.copy_from_slice(seq.coords());
        Ok(())
    })
}

/// Loads a checkpoint written by `motionsrvf train`.
#[no_mangle]
pub unsafe extern "C" fn ms_model_load(path: *const c_char, out: *mut *mut MsModel) -> MsStatus {
    guard(|| {
        let p = PathBuf::from(c_str(path, "path")?);
        let model = load_checkpoint(&p)?;
        write_out(out, Box::into_raw(Box::new(MsModel(model))))
    })
}

/// Releases a model handle; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ms_model_free(m: *mut MsModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Frames per generated sequence; 0 for null.
#[no_mangle]
pub unsafe extern "C" fn ms_model_frames(m: *const MsModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.frames)
}

/// Landmarks per frame; 0 for null.
#[no_mangle]
pub unsafe extern "C" fn ms_model_landmarks(m: *const MsModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.landmarks)
}

/// Number of classes; 0 for null.
#[no_mangle]
pub unsafe extern "C" fn ms_model_num_classes(m: *const MsModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.num_classes())
}

/// Copies the nul-terminated name of class `index` into `buf`.
#[no_mangle]
pub unsafe extern "C" fn ms_model_class_name(
    m: *const MsModel,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
) -> MsStatus {
    guard(|| {
        let m = &handle(m, "model")?.0;
        let name = m
            .class_names
            .get(index)
            .ok_or_else(|| Fail::Arg(format!("class index {index} of {}", m.num_classes())))?;
        let needed = name.len() + 1;
        if buf_len < needed {
            return Err(Fail::Small { needed });
        }
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        let dst = std::slice::from_raw_parts_mut(buf.cast::<u8>(), needed);
        dst[..name.len()].copy_from_slice(name.as_bytes());
        dst[name.len()] = 0;
        Ok(())
    })
}

/// Generates one sequence of `class_name` from `neutral` into `out`
/// (`frames x landmarks x 2` values). Same seed, same output.
#[no_mangle]
pub unsafe extern "C" fn ms_model_generate(
    m: *const MsModel,
    class_name: *const c_char,
    neutral: *const f64,
    neutral_len: usize,
    intensity_factor: f64,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> MsStatus {
    guard(|| {
        let m = &handle(m, "model")?.0;
        let label = m.label(c_str(class_name, "class_name")?)?;
        let neutral = slice(neutral, neutral_len, "neutral")?;
        let q = generate_motion(m, label, seed)?;
        let seq = decode_sequence(&q, neutral, intensity(intensity_factor)?, "ffi", None)?;
        out_slice(out, out_len, seq.coords().len())?.copy_from_slice(seq.coords());
        Ok(())
    })
}
