//! C ABI over the core library.
//!
//! Every function returns `MOSELECT_OK` or a nonzero status code;
//! `moselect_last_error` describes the most recent failure on the calling
//! thread. Models and calibrations travel as opaque handles with matching
//! `_free` functions. Complex buffers are interleaved f64 pairs (re, im);
//! snapshot matrices are column-major so each snapshot is contiguous,
//! covariance output is row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use moselect::decision::{load_calibration, model_fingerprint, EntropyCalibration};
use moselect::ic::{ic_select, EigenProfile, IcRule};
use moselect::sim::{SnapshotBatch, SourceScene};
use moselect::vae::{load_model, ModelParameters};
use ndarray::Array2;
use num_complex::Complex64;

pub const MOSELECT_OK: i32 = 0;
pub const MOSELECT_ERR_INVALID_ARGUMENT: i32 = 1;
pub const MOSELECT_ERR_DIMENSION: i32 = 2;
pub const MOSELECT_ERR_NUMERICAL: i32 = 3;
pub const MOSELECT_ERR_DEGENERATE_DATA: i32 = 4;
pub const MOSELECT_ERR_CALIBRATION: i32 = 5;
pub const MOSELECT_ERR_TRAINING: i32 = 6;
pub const MOSELECT_ERR_MISSING_ARTIFACT: i32 = 7;
pub const MOSELECT_ERR_CONFIG: i32 = 8;
pub const MOSELECT_ERR_FORMAT: i32 = 9;
pub const MOSELECT_ERR_IO: i32 = 10;
pub const MOSELECT_ERR_NULL_POINTER: i32 = 11;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg)
        .unwrap_or_else(|_| CString::new("error message contained a NUL byte").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn code_of(e: &moselect::Error) -> i32 {
    use moselect::Error as E;
    match e {
        E::InvalidArgument(_) => MOSELECT_ERR_INVALID_ARGUMENT,
        E::DimensionMismatch(_) => MOSELECT_ERR_DIMENSION,
        E::Numerical(_) => MOSELECT_ERR_NUMERICAL,
        E::DegenerateData(_) => MOSELECT_ERR_DEGENERATE_DATA,
        E::Calibration(_) => MOSELECT_ERR_CALIBRATION,
        E::TrainingDiverged { .. } => MOSELECT_ERR_TRAINING,
        E::MissingArtifact { .. } => MOSELECT_ERR_MISSING_ARTIFACT,
        E::Config(_) => MOSELECT_ERR_CONFIG,
        E::Format(_) | E::Json(_) => MOSELECT_ERR_FORMAT,
        E::Io(_) => MOSELECT_ERR_IO,
    }
}

fn fail(e: moselect::Error) -> i32 {
    let code = code_of(&e);
    set_error(e.to_string());
    code
}

fn fail_null(what: &str) -> i32 {
    set_error(format!("{what} must not be null"));
    MOSELECT_ERR_NULL_POINTER
}

fn fail_invalid(msg: String) -> i32 {
    set_error(msg);
    MOSELECT_ERR_INVALID_ARGUMENT
}

/// Trained VAE parameters; create with `moselect_model_load`, release with
/// `moselect_model_free`.
pub struct MoselectModel(ModelParameters);

/// Entropy thresholds for one model; create with
/// `moselect_calibration_load`, release with `moselect_calibration_free`.
pub struct MoselectCalibration(EntropyCalibration);

/// Library version as a static NUL-terminated string. Never freed.
#[no_mangle]
pub extern "C" fn moselect_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn moselect_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Shannon entropy (natural log) of the sum-normalized vector.
///
/// # Safety
/// `values` must point to `len` readable f64s; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moselect_entropy(values: *const f64, len: usize, out: *mut f64) -> i32 {
    if values.is_null() {
        return fail_null("values");
    }
    if out.is_null() {
        return fail_null("out");
    }
    let slice = std::slice::from_raw_parts(values, len);
    match moselect::decision::entropy(slice) {
        Ok(h) => {
            *out = h;
            MOSELECT_OK
        }
        Err(e) => fail(e),
    }
}

/// Noise variance 10^(-snr_db/10) for unit total signal power.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moselect_snr_to_noise_var(snr_db: f64, out: *mut f64) -> i32 {
    if out.is_null() {
        return fail_null("out");
    }
    match moselect::sim::snr_to_noise_var(snr_db) {
        Ok(v) => {
            *out = v;
            MOSELECT_OK
        }
        Err(e) => fail(e),
    }
}

/// Half-wavelength ULA steering vector for broadside angle `theta_rad`,
/// written as `n_antennas` interleaved (re, im) pairs.
///
/// # Safety
/// `out` must have room for `2 * n_antennas` f64s.
#[no_mangle]
pub unsafe extern "C" fn moselect_steering_vector(
    theta_rad: f64,
    n_antennas: usize,
    out: *mut f64,
) -> i32 {
    if out.is_null() {
        return fail_null("out");
    }
    match moselect::sim::steering_vector(theta_rad, n_antennas) {
        Ok(v) => {
            let dst = std::slice::from_raw_parts_mut(out, 2 * n_antennas);
            for (i, z) in v.iter().enumerate() {
                dst[2 * i] = z.re;
                dst[2 * i + 1] = z.im;
            }
            MOSELECT_OK
        }
        Err(e) => fail(e),
    }
}

unsafe fn snapshots_from_raw(
    y: *const f64,
    n_antennas: usize,
    t_snapshots: usize,
) -> Result<Array2<Complex64>, i32> {
    if y.is_null() {
        return Err(fail_null("y"));
    }
    if n_antennas == 0 || t_snapshots == 0 {
        return Err(fail_invalid(
            "invalid argument: n_antennas and t_snapshots must be >= 1".into(),
        ));
    }
    let src = std::slice::from_raw_parts(y, 2 * n_antennas * t_snapshots);
    Ok(Array2::from_shape_fn((n_antennas, t_snapshots), |(i, t)| {
        let base = 2 * (t * n_antennas + i);
        Complex64::new(src[base], src[base + 1])
    }))
}

/// Sample covariance (1/T) Σ y_t y_tᴴ of `t_snapshots` snapshots.
/// `y` is column-major interleaved complex (snapshot t occupies elements
/// `2*n_antennas*t ..`); `out` receives the N×N matrix row-major interleaved.
///
/// # Safety
/// `y` must hold `2 * n_antennas * t_snapshots` f64s and `out` must have
/// room for `2 * n_antennas * n_antennas`.
#[no_mangle]
pub unsafe extern "C" fn moselect_sample_covariance(
    y: *const f64,
    n_antennas: usize,
    t_snapshots: usize,
    out: *mut f64,
) -> i32 {
    if out.is_null() {
        return fail_null("out");
    }
    let snapshots = match snapshots_from_raw(y, n_antennas, t_snapshots) {
        Ok(m) => m,
        Err(code) => return code,
    };
    match moselect::ic::sample_covariance(&snapshots) {
        Ok(cov) => {
            let dst = std::slice::from_raw_parts_mut(out, 2 * n_antennas * n_antennas);
            for i in 0..n_antennas {
                for j in 0..n_antennas {
                    let base = 2 * (i * n_antennas + j);
                    dst[base] = cov[(i, j)].re;
                    dst[base + 1] = cov[(i, j)].im;
                }
            }
            MOSELECT_OK
        }
        Err(e) => fail(e),
    }
}

/// Information-criterion model-order estimate from sample-covariance
/// eigenvalues (any order; sorted internally). `rule` is 0 for AIC,
/// 1 for MDL.
///
/// # Safety
/// `eigenvalues` must point to `len` readable f64s; `out_order` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn moselect_ic_select(
    eigenvalues: *const f64,
    len: usize,
    t_snapshots: usize,
    rule: i32,
    out_order: *mut usize,
) -> i32 {
    if eigenvalues.is_null() {
        return fail_null("eigenvalues");
    }
    if out_order.is_null() {
        return fail_null("out_order");
    }
    let rule = match rule {
        0 => IcRule::Aic,
        1 => IcRule::Mdl,
        other => {
            return fail_invalid(format!(
                "invalid argument: rule must be 0 (AIC) or 1 (MDL), got {other}"
            ))
        }
    };
    let vals = std::slice::from_raw_parts(eigenvalues, len).to_vec();
    let profile = match EigenProfile::new(vals, t_snapshots) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    match ic_select(&profile, rule) {
        Ok(r) => {
            *out_order = r.selected_order;
            MOSELECT_OK
        }
        Err(e) => fail(e),
    }
}

/// Load a trained model checkpoint. On success `*out` owns the handle.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moselect_model_load(
    path: *const c_char,
    out: *mut *mut MoselectModel,
) -> i32 {
    if path.is_null() {
        return fail_null("path");
    }
    if out.is_null() {
        return fail_null("out");
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => return fail_invalid("invalid argument: path is not UTF-8".into()),
    };
    match load_model(Path::new(path)) {
        Ok(params) => {
            *out = Box::into_raw(Box::new(MoselectModel(params)));
            MOSELECT_OK
        }
        Err(e) => fail(e),
    }
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer from `moselect_model_load` that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn moselect_model_free(model: *mut MoselectModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Array size N the model was trained for; snapshot buffers passed to
/// `moselect_predict_mo` must have this many rows.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moselect_model_n_antennas(
    model: *const MoselectModel,
    out: *mut usize,
) -> i32 {
    if model.is_null() {
        return fail_null("model");
    }
    if out.is_null() {
        return fail_null("out");
    }
    *out = (*model).0.arch.n_antennas;
    MOSELECT_OK
}

/// Load an entropy calibration. On success `*out` owns the handle.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moselect_calibration_load(
    path: *const c_char,
    out: *mut *mut MoselectCalibration,
) -> i32 {
    if path.is_null() {
        return fail_null("path");
    }
    if out.is_null() {
        return fail_null("out");
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => return fail_invalid("invalid argument: path is not UTF-8".into()),
    };
    match load_calibration(Path::new(path)) {
        Ok(cal) => {
            *out = Box::into_raw(Box::new(MoselectCalibration(cal)));
            MOSELECT_OK
        }
        Err(e) => fail(e),
    }
}

/// Release a calibration handle. Null is a no-op.
///
/// # Safety
/// `calibration` must be null or a pointer from `moselect_calibration_load`
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn moselect_calibration_free(calibration: *mut MoselectCalibration) {
    if !calibration.is_null() {
        drop(Box::from_raw(calibration));
    }
}

/// Model-order estimate for one snapshot batch. `y` is column-major
/// interleaved complex N×T (layout as in `moselect_sample_covariance`);
/// `noise_var` is the per-antenna complex noise variance. The calibration
/// must have been built for this model; a fingerprint mismatch fails with
/// `MOSELECT_ERR_CALIBRATION`.
///
/// # Safety
/// `model` and `calibration` must be live handles, `y` must hold
/// `2 * n_antennas * t_snapshots` f64s, `out_order` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moselect_predict_mo(
    model: *const MoselectModel,
    calibration: *const MoselectCalibration,
    y: *const f64,
    n_antennas: usize,
    t_snapshots: usize,
    noise_var: f64,
    out_order: *mut usize,
) -> i32 {
    if model.is_null() {
        return fail_null("model");
    }
    if calibration.is_null() {
        return fail_null("calibration");
    }
    if out_order.is_null() {
        return fail_null("out_order");
    }
    let params = &(*model).0;
    let cal = &(*calibration).0;
    if n_antennas != params.arch.n_antennas {
        let msg = format!(
            "dimension mismatch: {} snapshot rows for a {}-antenna model",
            n_antennas, params.arch.n_antennas
        );
        set_error(msg);
        return MOSELECT_ERR_DIMENSION;
    }
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return fail_invalid("invalid argument: noise_var must be finite and positive".into());
    }
    if cal.model_hash != model_fingerprint(params) {
        set_error("calibration failure: calibration was built for a different model".into());
        return MOSELECT_ERR_CALIBRATION;
    }
    let snapshots = match snapshots_from_raw(y, n_antennas, t_snapshots) {
        Ok(m) => m,
        Err(code) => return code,
    };
    let batch = SnapshotBatch {
        y: snapshots,
        noise_var,
        scene: SourceScene::empty(),
        snr_db: -10.0 * noise_var.log10(),
    };
    match moselect::decision::predict_mo(&batch, params, cal) {
        Ok(order) => {
            *out_order = order;
            MOSELECT_OK
        }
        Err(e) => fail(e),
    }
}
