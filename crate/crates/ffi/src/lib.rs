//! C ABI over the otflow labeling pipeline.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns an
//! [`OtflowStatus`]; on failure a description is kept per thread and can be
//! copied out with [`otflow_last_error`]. Panics never unwind into C: they
//! are reported as [`OtflowStatus::Panic`].
//!
//! Point and flow arrays are packed `x, y, z` triples of `double`, so an
//! array for `n` points holds `3 * n` values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use otflow::io::read_cloud;
use otflow::pipeline::{MatchStrategy, Refinement, SourceMode};
use otflow::{
    evaluate, generate_labels, Error, FlowField, PipelineConfig, PointCloud, PseudoLabelSet, Vec3, WalkSteps,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtflowStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument or parameter value was rejected.
    InvalidArgument = 2,
    /// Array or cloud sizes disagree.
    SizeMismatch = 3,
    /// Reading a file failed.
    Io = 4,
    /// A file was read but its contents are malformed.
    Format = 5,
    /// The computation itself failed (singular system, empty evaluation, ...).
    Computation = 6,
    /// An internal panic was caught at the boundary.
    Panic = 7,
}

/// Refinement stage selector for [`otflow_config_set_refinement`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtflowRefinement {
    Off = 0,
    NaiveSmooth = 1,
    UndirectedWalk = 2,
    Full = 3,
}

/// Accuracy summary returned by [`otflow_evaluate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OtflowMetrics {
    pub epe: f64,
    pub as_pct: f64,
    pub ar_pct: f64,
    pub out_pct: f64,
    pub point_count: usize,
}

/// Point cloud handle.
pub struct OtflowCloud(PointCloud);

/// Pipeline configuration handle.
pub struct OtflowConfig(PipelineConfig);

/// Pseudo-label result handle.
pub struct OtflowLabels(PseudoLabelSet);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_last_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

struct Failure(OtflowStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let status = match &err {
            Error::LengthMismatch { .. } | Error::DimensionMismatch(_) | Error::NotSquare { .. } => {
                OtflowStatus::SizeMismatch
            }
            Error::InvalidParameter(_)
            | Error::InvalidCloud(_)
            | Error::MissingAttribute(_)
            | Error::NotEnoughPoints { .. }
            | Error::DegenerateScene(_)
            | Error::OracleTooLarge { .. } => OtflowStatus::InvalidArgument,
            Error::Io(_) => OtflowStatus::Io,
            Error::Format(_) => OtflowStatus::Format,
            _ => OtflowStatus::Computation,
        };
        Failure(status, err.to_string())
    }
}

fn fail<T>(status: OtflowStatus, message: &str) -> Result<T, Failure> {
    Err(Failure(status, message.to_string()))
}

/// Runs `body`, records any failure and converts it to a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> OtflowStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            OtflowStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {message}"));
            OtflowStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or points to a live `T`.
unsafe fn non_null<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: forwarded from the caller.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(OtflowStatus::NullPointer, format!("{name} is null")))
}

/// # Safety
/// `p` is null or points to a live `T` with no other live reference.
unsafe fn non_null_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: forwarded from the caller.
    unsafe { p.as_mut() }.ok_or_else(|| Failure(OtflowStatus::NullPointer, format!("{name} is null")))
}

/// # Safety
/// `data` is null or points to `3 * n` readable doubles.
unsafe fn triples(data: *const f64, n: usize, name: &str) -> Result<Vec<Vec3>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if data.is_null() {
        return fail(OtflowStatus::NullPointer, &format!("{name} is null"));
    }
    let len = n
        .checked_mul(3)
        .ok_or_else(|| Failure(OtflowStatus::InvalidArgument, format!("{name}: count {n} overflows")))?;
    // SAFETY: forwarded from the caller.
    let values = unsafe { slice::from_raw_parts(data, len) };
    Ok(values.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

/// # Safety
/// `out` is null or points to a writable handle slot.
unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    // SAFETY: forwarded from the caller.
    let out = unsafe { non_null_mut(out, "output pointer") }?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (always
/// NUL-terminated when `len > 0`) and returns the full message length in
/// bytes, excluding the terminator. Pass a null `buf` to query the length.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let message = e.borrow();
        let bytes = message.as_bytes();
        if !buf.is_null() && len > 0 {
            let count = bytes.len().min(len - 1);
            // SAFETY: the caller guarantees `len` writable bytes at `buf`.
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), count);
                *buf.add(count) = 0;
            }
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn otflow_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a cloud from `n` packed positions.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_cloud_new(positions: *const f64, n: usize, out: *mut *mut OtflowCloud) -> OtflowStatus {
    guard(|| {
        let points = triples(positions, n, "positions")?;
        store(out, OtflowCloud(PointCloud::new(points)))
    })
}

/// Reads a PLY file (ascii or binary little-endian).
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn otflow_cloud_read_ply(path: *const c_char, out: *mut *mut OtflowCloud) -> OtflowStatus {
    guard(|| {
        if path.is_null() {
            return fail(OtflowStatus::NullPointer, "path is null");
        }
        // SAFETY: checked non-null; NUL termination is the caller's contract.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Failure(OtflowStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
        let cloud = read_cloud(path)?;
        store(out, OtflowCloud(cloud))
    })
}

/// Attaches `n` packed RGB colors in `[0, 1]`; `n` must equal the cloud size.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_cloud_set_colors(
    cloud: *mut OtflowCloud,
    colors: *const f64,
    n: usize,
) -> OtflowStatus {
    guard(|| {
        let cloud = non_null_mut(cloud, "cloud")?;
        if n != cloud.0.len() {
            return fail(
                OtflowStatus::SizeMismatch,
                &format!("{n} colors for {} points", cloud.0.len()),
            );
        }
        cloud.0.colors = Some(triples(colors, n, "colors")?);
        Ok(())
    })
}

/// Attaches `n` packed unit normals; `n` must equal the cloud size.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_cloud_set_normals(
    cloud: *mut OtflowCloud,
    normals: *const f64,
    n: usize,
) -> OtflowStatus {
    guard(|| {
        let cloud = non_null_mut(cloud, "cloud")?;
        if n != cloud.0.len() {
            return fail(
                OtflowStatus::SizeMismatch,
                &format!("{n} normals for {} points", cloud.0.len()),
            );
        }
        cloud.0.normals = Some(triples(normals, n, "normals")?);
        Ok(())
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_cloud_len(cloud: *const OtflowCloud) -> usize {
    non_null(cloud, "cloud").map_or(0, |c| c.0.len())
}

/// Releases a cloud; null is ignored.
///
/// # Safety
/// `cloud` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn otflow_cloud_free(cloud: *mut OtflowCloud) {
    if !cloud.is_null() {
        // SAFETY: allocated by `store` via `Box::into_raw`.
        drop(unsafe { Box::from_raw(cloud) });
    }
}

/// Creates a configuration holding the library defaults.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_config_default(out: *mut *mut OtflowConfig) -> OtflowStatus {
    guard(|| store(out, OtflowConfig(PipelineConfig::default())))
}

/// Applies `edit` and keeps the change only if the result validates.
///
/// # Safety
/// `config` is null or a live handle from this library.
unsafe fn edit_config(config: *mut OtflowConfig, edit: impl FnOnce(&mut PipelineConfig)) -> OtflowStatus {
    guard(|| {
        // SAFETY: forwarded from the caller.
        let config = unsafe { non_null_mut(config, "config") }?;
        let mut next = config.0;
        edit(&mut next);
        next.validate()?;
        config.0 = next;
        Ok(())
    })
}

/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_config_set_epsilon(config: *mut OtflowConfig, epsilon: f64) -> OtflowStatus {
    edit_config(config, |c| c.sinkhorn.epsilon = epsilon)
}

/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_config_set_sinkhorn_iterations(
    config: *mut OtflowConfig,
    iterations: usize,
) -> OtflowStatus {
    edit_config(config, |c| c.sinkhorn.max_iterations = iterations)
}

/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_config_set_newton_steps(config: *mut OtflowConfig, steps: usize) -> OtflowStatus {
    edit_config(config, |c| c.sinkhorn.newton_steps = steps)
}

/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_config_set_kernels(
    config: *mut OtflowConfig,
    theta_d: f64,
    theta_c: f64,
    theta_r: f64,
) -> OtflowStatus {
    edit_config(config, |c| {
        c.cost.theta_d = theta_d;
        c.cost.theta_c = theta_c;
        c.walk.theta_r = theta_r;
    })
}

/// Enables the optional color and normal cost terms.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_config_set_measures(
    config: *mut OtflowConfig,
    color: bool,
    normal: bool,
) -> OtflowStatus {
    edit_config(config, |c| {
        c.cost.measures.color = color;
        c.cost.measures.normal = normal;
    })
}

/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_config_set_alpha(config: *mut OtflowConfig, alpha: f64) -> OtflowStatus {
    edit_config(config, |c| c.walk.alpha = alpha)
}

/// Number of walk steps; a negative value selects the closed form.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_config_set_walk_steps(config: *mut OtflowConfig, steps: i64) -> OtflowStatus {
    edit_config(config, |c| {
        c.walk.steps = if steps < 0 {
            WalkSteps::Infinite
        } else {
            WalkSteps::Finite(steps as usize)
        }
    })
}

/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_config_set_max_displacement(config: *mut OtflowConfig, meters: f64) -> OtflowStatus {
    edit_config(config, |c| c.max_displacement = meters)
}

/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_config_set_refinement(
    config: *mut OtflowConfig,
    refinement: OtflowRefinement,
) -> OtflowStatus {
    edit_config(config, |c| {
        c.refinement = match refinement {
            OtflowRefinement::Off => Refinement::Off,
            OtflowRefinement::NaiveSmooth => Refinement::NaiveSmooth,
            OtflowRefinement::UndirectedWalk => Refinement::UndirectedOnly,
            OtflowRefinement::Full => Refinement::Full,
        }
    })
}

/// Soft (barycentric) instead of hard matching.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_config_set_soft_matching(config: *mut OtflowConfig, soft: bool) -> OtflowStatus {
    edit_config(config, |c| {
        c.matching = if soft { MatchStrategy::Soft } else { MatchStrategy::Hard }
    })
}

/// Releases a configuration; null is ignored.
///
/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn otflow_config_free(config: *mut OtflowConfig) {
    if !config.is_null() {
        // SAFETY: allocated by `store` via `Box::into_raw`.
        drop(unsafe { Box::from_raw(config) });
    }
}

/// Labels every point of `p` against `q`. With a non-null `predicted_flow`
/// (`otflow_cloud_len(p)` packed vectors) the first frame is pre-warped by
/// it before matching; with null the raw frame is matched.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_generate_labels(
    p: *const OtflowCloud,
    q: *const OtflowCloud,
    predicted_flow: *const f64,
    config: *const OtflowConfig,
    out: *mut *mut OtflowLabels,
) -> OtflowStatus {
    guard(|| {
        let p = &non_null(p, "p")?.0;
        let q = &non_null(q, "q")?.0;
        let mut config = non_null(config, "config")?.0;
        let predicted = if predicted_flow.is_null() {
            config.source = SourceMode::Raw;
            None
        } else {
            config.source = SourceMode::Prewarped;
            Some(FlowField(triples(predicted_flow, p.len(), "predicted_flow")?))
        };
        let report = generate_labels(p, q, predicted.as_ref(), &config)?;
        store(out, OtflowLabels(report.labels))
    })
}

/// Number of labels, or 0 for a null handle.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_labels_len(labels: *const OtflowLabels) -> usize {
    non_null(labels, "labels").map_or(0, |l| l.0.len())
}

/// Number of valid labels, or 0 for a null handle.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_labels_valid_count(labels: *const OtflowLabels) -> usize {
    non_null(labels, "labels").map_or(0, |l| l.0.valid_count())
}

/// Copies labels into `flow` (`3 * n` doubles) and validity into `valid`
/// (`n` bytes, 1 = valid; may be null). `n` must equal the label count.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_labels_copy(
    labels: *const OtflowLabels,
    flow: *mut f64,
    valid: *mut u8,
    n: usize,
) -> OtflowStatus {
    guard(|| {
        let labels = &non_null(labels, "labels")?.0;
        if n != labels.len() {
            return fail(
                OtflowStatus::SizeMismatch,
                &format!("buffer for {n} labels, have {}", labels.len()),
            );
        }
        if n == 0 {
            return Ok(());
        }
        if flow.is_null() {
            return fail(OtflowStatus::NullPointer, "flow is null");
        }
        // SAFETY: the caller guarantees `3 * n` writable doubles.
        let out = unsafe { slice::from_raw_parts_mut(flow, 3 * n) };
        for (chunk, v) in out.chunks_exact_mut(3).zip(&labels.labels) {
            chunk.copy_from_slice(v.as_slice());
        }
        if !valid.is_null() {
            // SAFETY: the caller guarantees `n` writable bytes.
            let out = unsafe { slice::from_raw_parts_mut(valid, n) };
            for (o, &v) in out.iter_mut().zip(&labels.valid) {
                *o = v as u8;
            }
        }
        Ok(())
    })
}

/// Releases labels; null is ignored.
///
/// # Safety
/// `labels` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn otflow_labels_free(labels: *mut OtflowLabels) {
    if !labels.is_null() {
        // SAFETY: allocated by `store` via `Box::into_raw`.
        drop(unsafe { Box::from_raw(labels) });
    }
}

/// Scores `n` packed predicted vectors against ground truth. `mask` (`n`
/// bytes, nonzero = include) may be null to score every point.
///
/// # Safety
/// Every pointer argument is null or valid for the size documented above,
/// and handles are live objects created by this library.
#[no_mangle]
pub unsafe extern "C" fn otflow_evaluate(
    pred: *const f64,
    gt: *const f64,
    mask: *const u8,
    n: usize,
    out: *mut OtflowMetrics,
) -> OtflowStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        let pred = FlowField(triples(pred, n, "pred")?);
        let gt = FlowField(triples(gt, n, "gt")?);
        let mask: Option<Vec<bool>> = if mask.is_null() || n == 0 {
            None
        } else {
            // SAFETY: the caller guarantees `n` readable bytes.
            Some(
                unsafe { slice::from_raw_parts(mask, n) }
                    .iter()
                    .map(|&m| m != 0)
                    .collect(),
            )
        };
        let m = evaluate(&pred, &gt, mask.as_deref())?;
        *out = OtflowMetrics {
            epe: m.epe,
            as_pct: m.as_pct,
            ar_pct: m.ar_pct,
            out_pct: m.out_pct,
            point_count: m.point_count,
        };
        Ok(())
    })
}
