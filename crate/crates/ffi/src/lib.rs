//! C ABI over `asd-core`.
//!
//! Every function returns an [`AsdStatus`]. On failure the message is kept in
//! thread-local storage and can be read with [`asd_last_error_message`].
//! Handles are opaque and must be released with their matching `_free`.
//! Panics never cross the boundary; they surface as `ASD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use asd_core::features::{LogMelExtractor, MelConfig, NormStats};
use asd_core::inlier::{CovarianceType, InlierKind, InlierModel};
use asd_core::scoring::{Aggregator, Detector};
use asd_core::{metrics, AsdError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numerical = 5,
    Mismatch = 6,
    Panic = 7,
}

/// Log-mel front end with the default analysis settings.
pub struct AsdLogMel {
    inner: LogMelExtractor,
}

/// A fitted GMM or LOF model.
pub struct AsdInlier {
    inner: InlierModel,
}

/// Checkpoint plus per-ID inlier models; scores raw waveforms.
pub struct AsdDetector {
    inner: Detector,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: AsdStatus,
    message: String,
}

impl Failure {
    fn new(status: AsdStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<AsdError> for Failure {
    fn from(e: AsdError) -> Self {
        Failure::new(status_of(&e), e.to_string())
    }
}

fn status_of(e: &AsdError) -> AsdStatus {
    match e {
        AsdError::Io { .. } | AsdError::Wav { .. } | AsdError::NoAudio(_) => AsdStatus::Io,
        AsdError::Json { .. } | AsdError::Corrupt { .. } | AsdError::Layout { .. } | AsdError::AudioFormat { .. } => {
            AsdStatus::Format
        }
        AsdError::Numerical(_) | AsdError::NonFiniteGradient(_) => AsdStatus::Numerical,
        AsdError::Shape(_) | AsdError::CheckpointMismatch(_) | AsdError::MissingModel { .. } => AsdStatus::Mismatch,
        AsdError::Stage { source, .. } => status_of(source),
        _ => AsdStatus::InvalidArgument,
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard<F>(body: F) -> AsdStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => AsdStatus::Ok,
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            AsdStatus::Panic
        }
    }
}

unsafe fn doubles<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Failure::new(AsdStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure::new(AsdStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure::new(AsdStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn path(ptr: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    text(ptr, what).map(|s| Path::new(s).to_path_buf())
}

unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref()
        .ok_or_else(|| Failure::new(AsdStatus::NullPointer, format!("{what} is null")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(AsdStatus::NullPointer, "output pointer is null"));
    }
    out.write(value);
    Ok(())
}

fn out_ptr<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure::new(AsdStatus::NullPointer, "output handle pointer is null"))
    } else {
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn asd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn asd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// ROC AUC with anomalies as the positive class.
///
/// # Safety
/// `normal` and `anomaly` must point to `n_normal` and `n_anomaly` doubles.
#[no_mangle]
pub unsafe extern "C" fn asd_auc(
    normal: *const f64,
    n_normal: usize,
    anomaly: *const f64,
    n_anomaly: usize,
    out: *mut f64,
) -> AsdStatus {
    guard(|| {
        let v = metrics::auc(doubles(normal, n_normal, "normal")?, doubles(anomaly, n_anomaly, "anomaly")?)?;
        write_out(out, v)
    })
}

/// Partial AUC over false positive rates in `[0, max_fpr]`, divided by `max_fpr`.
///
/// # Safety
/// Same contract as [`asd_auc`].
#[no_mangle]
pub unsafe extern "C" fn asd_pauc(
    normal: *const f64,
    n_normal: usize,
    anomaly: *const f64,
    n_anomaly: usize,
    max_fpr: f64,
    out: *mut f64,
) -> AsdStatus {
    guard(|| {
        let v = metrics::pauc(
            doubles(normal, n_normal, "normal")?,
            doubles(anomaly, n_anomaly, "anomaly")?,
            max_fpr,
        )?;
        write_out(out, v)
    })
}

/// Combines segment scores with `method`: "mean", "max" or "mean_above_median".
///
/// # Safety
/// `method` must be a NUL-terminated string and `scores` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn asd_aggregate(method: *const c_char, scores: *const f64, n: usize, out: *mut f64) -> AsdStatus {
    guard(|| {
        let agg: Aggregator = text(method, "method")?.parse()?;
        let v = agg.apply(doubles(scores, n, "scores")?)?;
        write_out(out, v)
    })
}

/// # Safety
/// `out` must be a valid pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn asd_logmel_new(out: *mut *mut AsdLogMel) -> AsdStatus {
    guard(|| {
        out_ptr(out)?;
        let inner = LogMelExtractor::new(MelConfig::default())?;
        *out = Box::into_raw(Box::new(AsdLogMel { inner }));
        Ok(())
    })
}

/// Number of mel bands per frame, or 0 for a null handle.
///
/// # Safety
/// `mel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asd_logmel_n_mels(mel: *const AsdLogMel) -> usize {
    mel.as_ref().map_or(0, |m| m.inner.config().n_mels)
}

/// Frames produced for a waveform of `n_samples`, or 0 for a null handle.
///
/// # Safety
/// `mel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asd_logmel_frames(mel: *const AsdLogMel, n_samples: usize) -> usize {
    mel.as_ref().map_or(0, |m| m.inner.config().frames_for(n_samples))
}

/// Standardizes `wave` with `mean`/`std` and writes a row-major
/// frames x n_mels matrix to `out`, which must hold exactly `out_len` doubles.
///
/// # Safety
/// `wave` must hold `n` doubles and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn asd_logmel_compute(
    mel: *const AsdLogMel,
    wave: *const f64,
    n: usize,
    mean: f64,
    std: f64,
    out: *mut f64,
    out_len: usize,
) -> AsdStatus {
    guard(|| {
        let mel = handle(mel, "log-mel handle")?;
        let stats = NormStats {
            machine_type: String::new(),
            mean,
            std,
            clamped: false,
        };
        let m = mel.inner.compute(doubles(wave, n, "wave")?, &stats)?;
        if out_len != m.data.len() {
            return Err(Failure::new(
                AsdStatus::Mismatch,
                format!("output holds {out_len} values, need {}", m.data.len()),
            ));
        }
        if out.is_null() {
            return Err(Failure::new(AsdStatus::NullPointer, "output buffer is null"));
        }
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&m.data);
        Ok(())
    })
}

/// # Safety
/// `mel` must be null or a handle from [`asd_logmel_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asd_logmel_free(mel: *mut AsdLogMel) {
    if !mel.is_null() {
        drop(Box::from_raw(mel));
    }
}

/// Loads a model written by the `fit-inlier` command.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asd_inlier_load(path_c: *const c_char, out: *mut *mut AsdInlier) -> AsdStatus {
    guard(|| {
        out_ptr(out)?;
        let (inner, _) = InlierModel::load(&path(path_c, "path")?)?;
        *out = Box::into_raw(Box::new(AsdInlier { inner }));
        Ok(())
    })
}

/// Fits a model on `n_points` row-major points of `dim` values.
/// `kind` is "gmm" (full covariance, `p` components) or "lof" (`p` neighbours).
///
/// # Safety
/// `kind` must be a NUL-terminated string, `points` must hold
/// `n_points * dim` doubles and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asd_inlier_fit(
    kind: *const c_char,
    p: usize,
    points: *const f64,
    n_points: usize,
    dim: usize,
    seed: u64,
    out: *mut *mut AsdInlier,
) -> AsdStatus {
    guard(|| {
        out_ptr(out)?;
        let kind: InlierKind = text(kind, "kind")?.parse()?;
        if dim == 0 {
            return Err(Failure::new(AsdStatus::InvalidArgument, "dim must be positive"));
        }
        let total = n_points
            .checked_mul(dim)
            .ok_or_else(|| Failure::new(AsdStatus::InvalidArgument, "n_points * dim overflows"))?;
        let flat = doubles(points, total, "points")?;
        let rows = flat.chunks_exact(dim).map(<[f64]>::to_vec).collect();
        let inner = InlierModel::fit(kind, p, rows, CovarianceType::Full, seed)?;
        *out = Box::into_raw(Box::new(AsdInlier { inner }));
        Ok(())
    })
}

/// Feature dimension of the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asd_inlier_dim(model: *const AsdInlier) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dim())
}

/// Anomaly score of one point; larger means less typical.
///
/// # Safety
/// `x` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn asd_inlier_score(model: *const AsdInlier, x: *const f64, dim: usize, out: *mut f64) -> AsdStatus {
    guard(|| {
        let model = handle(model, "inlier handle")?;
        let v = model.inner.score(doubles(x, dim, "x")?)?;
        write_out(out, v)
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asd_inlier_free(model: *mut AsdInlier) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Builds a detector from a checkpoint and a directory of inlier models.
/// Pass `p = 0` when the directory holds models for a single p.
///
/// # Safety
/// Both paths must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn asd_detector_new(
    checkpoint: *const c_char,
    inlier_dir: *const c_char,
    p: usize,
    out: *mut *mut AsdDetector,
) -> AsdStatus {
    guard(|| {
        out_ptr(out)?;
        let ck = path(checkpoint, "checkpoint")?;
        let dir = path(inlier_dir, "inlier_dir")?;
        let inner = Detector::load(&ck, &dir, (p > 0).then_some(p))?;
        *out = Box::into_raw(Box::new(AsdDetector { inner }));
        Ok(())
    })
}

/// Clip-level anomaly score for a 16 kHz waveform of product `product_id`.
///
/// # Safety
/// `wave` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn asd_detector_score(
    detector: *const AsdDetector,
    wave: *const f64,
    n: usize,
    product_id: usize,
    out: *mut f64,
) -> AsdStatus {
    guard(|| {
        let det = handle(detector, "detector handle")?;
        let (_, score) = det.inner.score_waveform(doubles(wave, n, "wave")?, product_id)?;
        write_out(out, score)
    })
}

/// # Safety
/// `detector` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asd_detector_free(detector: *mut AsdDetector) {
    if !detector.is_null() {
        drop(Box::from_raw(detector));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let p = asd_last_error_message();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn auc_round_trip() {
        let normal = [0.1, 0.2, 0.3];
        let anomaly = [0.25, 0.9];
        let mut v = f64::NAN;
        let st = unsafe { asd_auc(normal.as_ptr(), 3, anomaly.as_ptr(), 2, &mut v) };
        assert_eq!(st, AsdStatus::Ok);
        assert!((v - 5.0 / 6.0).abs() < 1e-12);
        assert!(asd_last_error_message().is_null());
    }

    #[test]
    fn null_output_is_reported() {
        let x = [1.0];
        let st = unsafe { asd_auc(x.as_ptr(), 1, x.as_ptr(), 1, ptr::null_mut()) };
        assert_eq!(st, AsdStatus::NullPointer);
        assert!(last_error().contains("null"));
    }

    #[test]
    fn empty_class_is_invalid() {
        let x = [1.0];
        let mut v = 0.0;
        let st = unsafe { asd_auc(ptr::null(), 0, x.as_ptr(), 1, &mut v) };
        assert_eq!(st, AsdStatus::InvalidArgument);
    }

    #[test]
    fn aggregate_by_name() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        let mut v = 0.0;
        let st = unsafe { asd_aggregate(c"mean_above_median".as_ptr(), s.as_ptr(), 5, &mut v) };
        assert_eq!(st, AsdStatus::Ok);
        assert_eq!(v, 4.0);
        let st = unsafe { asd_aggregate(c"median".as_ptr(), s.as_ptr(), 5, &mut v) };
        assert_eq!(st, AsdStatus::InvalidArgument);
    }

    #[test]
    fn panics_are_caught() {
        let st = guard(|| panic!("boom"));
        assert_eq!(st, AsdStatus::Panic);
        assert!(last_error().contains("boom"));
    }

    #[test]
    fn version_is_terminated() {
        let v = unsafe { CStr::from_ptr(asd_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
