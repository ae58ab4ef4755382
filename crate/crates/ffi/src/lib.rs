//! C ABI over the microsplat library.
//!
//! Objects cross the boundary as opaque handles created by `ms_*_load` /
//! `ms_*_new` style functions and released with the matching `*_free`.
//! Every fallible function returns an [`MsStatus`]; on failure a description
//! is available from [`ms_last_error`] on the same thread. Panics are caught
//! at the boundary and reported as `MS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use microsplat::adp::prune_low_opacity;
use microsplat::render::{psnr, render_image, ssim};
use microsplat::scene::{
    load_cameras, load_dataset, load_scene, save_scene, Camera, GaussianPoint, ImageBuffer, Scene,
};
use microsplat::train::{refine_only, train, TrainConfig, TrainOutput};
use microsplat::Error;
use nalgebra::Vector3;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    EmptyScene = 5,
    OutOfRange = 6,
    Numeric = 7,
    Panic = 8,
}

/// A set of Gaussians.
pub struct MsScene {
    inner: Scene,
}

/// An ordered list of cameras.
pub struct MsCameras {
    inner: Vec<Camera>,
}

/// Output of a training run.
pub struct MsTrainResult {
    output: TrainOutput,
    report_json: CString,
}

/// One Gaussian in its stored parameterization.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsPoint {
    pub position: [f64; 3],
    pub log_scale: [f64; 3],
    /// Unit quaternion, w first.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl From<&GaussianPoint> for MsPoint {
    fn from(p: &GaussianPoint) -> Self {
        MsPoint {
            position: p.position.into(),
            log_scale: p.log_scale.into(),
            rotation: p.rotation,
            opacity_logit: p.opacity_logit,
            color: p.color.into(),
        }
    }
}

impl From<&MsPoint> for GaussianPoint {
    fn from(p: &MsPoint) -> Self {
        let mut g = GaussianPoint {
            position: p.position.into(),
            log_scale: p.log_scale.into(),
            rotation: p.rotation,
            opacity_logit: p.opacity_logit,
            color: p.color.into(),
        };
        g.normalize_rotation();
        g
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: MsStatus,
    message: String,
}

impl Failure {
    fn new(status: MsStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => MsStatus::Io,
            Error::PlySchema(_)
            | Error::PlyElement { .. }
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Image(_) => MsStatus::Format,
            Error::EmptyScene => MsStatus::EmptyScene,
            Error::ParameterCorruption(_) | Error::GradientCheck(_) => MsStatus::Numeric,
            _ => MsStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MsStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            MsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(MsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            MsStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(MsStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn config_arg(p: *const c_char) -> Result<TrainConfig, Failure> {
    if p.is_null() {
        return Ok(TrainConfig::default());
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(MsStatus::InvalidArgument, "config is not UTF-8"))?;
    Ok(TrainConfig::from_json(s)?)
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(
            MsStatus::NullPointer,
            format!("{what} is null"),
        ));
    }
    out.write(value);
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ms_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!("microsplat ", env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a PLY file into a new scene handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_scene_load(path: *const c_char, out: *mut *mut MsScene) -> MsStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let scene = load_scene(&path)?;
        put(
            out,
            Box::into_raw(Box::new(MsScene { inner: scene })),
            "out",
        )
    })
}

/// Builds a scene from `count` points.
///
/// # Safety
/// `points` must point to `count` readable points (may be null when `count`
/// is 0); `background` to 3 doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ms_scene_new(
    points: *const MsPoint,
    count: usize,
    background: *const f64,
    out: *mut *mut MsScene,
) -> MsStatus {
    guard(|| {
        let bg = deref(background as *const [f64; 3], "background")?;
        let pts: Vec<GaussianPoint> = if count == 0 {
            Vec::new()
        } else {
            if points.is_null() {
                return Err(Failure::new(MsStatus::NullPointer, "points is null"));
            }
            std::slice::from_raw_parts(points, count)
                .iter()
                .map(GaussianPoint::from)
                .collect()
        };
        let scene = Scene::new(pts, Vector3::from(*bg));
        scene.validate()?;
        put(
            out,
            Box::into_raw(Box::new(MsScene { inner: scene })),
            "out",
        )
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `scene` a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_scene_save(scene: *const MsScene, path: *const c_char) -> MsStatus {
    guard(|| {
        let scene = deref(scene, "scene")?;
        let path = path_arg(path, "path")?;
        Ok(save_scene(&scene.inner, &path)?)
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `scene` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_scene_len(scene: *const MsScene) -> usize {
    scene.as_ref().map_or(0, |s| s.inner.len())
}

/// # Safety
/// `scene` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_scene_point(
    scene: *const MsScene,
    index: usize,
    out: *mut MsPoint,
) -> MsStatus {
    guard(|| {
        let scene = deref(scene, "scene")?;
        let p = scene.inner.points.get(index).ok_or_else(|| {
            Failure::new(
                MsStatus::OutOfRange,
                format!("point {index} out of range ({} points)", scene.inner.len()),
            )
        })?;
        put(out, MsPoint::from(p), "out")
    })
}

/// # Safety
/// `scene` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_scene_free(scene: *mut MsScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Drops points with opacity below `threshold` into a new scene. Fails with
/// `MS_STATUS_EMPTY_SCENE` rather than removing every point.
///
/// # Safety
/// `scene` must be a live handle; `out` valid; `removed` may be null.
#[no_mangle]
pub unsafe extern "C" fn ms_prune(
    scene: *const MsScene,
    threshold: f64,
    out: *mut *mut MsScene,
    removed: *mut usize,
) -> MsStatus {
    guard(|| {
        let scene = deref(scene, "scene")?;
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Failure::new(
                MsStatus::InvalidArgument,
                "threshold must lie in (0, 1)",
            ));
        }
        let res = prune_low_opacity(&scene.inner, threshold);
        if res.refused {
            return Err(Failure::new(
                MsStatus::EmptyScene,
                "every point is below the threshold",
            ));
        }
        if !removed.is_null() {
            removed.write(res.removed.len());
        }
        put(
            out,
            Box::into_raw(Box::new(MsScene { inner: res.scene })),
            "out",
        )
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_cameras_load(
    path: *const c_char,
    out: *mut *mut MsCameras,
) -> MsStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let cams = load_cameras(&path)?;
        put(
            out,
            Box::into_raw(Box::new(MsCameras { inner: cams })),
            "out",
        )
    })
}

/// # Safety
/// `cameras` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_cameras_len(cameras: *const MsCameras) -> usize {
    cameras.as_ref().map_or(0, |c| c.inner.len())
}

/// Image size of camera `view`.
///
/// # Safety
/// `cameras` must be a live handle; `width` and `height` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_camera_size(
    cameras: *const MsCameras,
    view: usize,
    width: *mut usize,
    height: *mut usize,
) -> MsStatus {
    guard(|| {
        let cam = camera(cameras, view)?;
        put(width, cam.width, "width")?;
        put(height, cam.height, "height")
    })
}

unsafe fn camera<'a>(cameras: *const MsCameras, view: usize) -> Result<&'a Camera, Failure> {
    let cams = deref(cameras, "cameras")?;
    cams.inner.get(view).ok_or_else(|| {
        Failure::new(
            MsStatus::OutOfRange,
            format!("view {view} out of range ({} cameras)", cams.inner.len()),
        )
    })
}

/// Renders camera `view` into `rgb`, row-major interleaved RGB in [0, 1].
/// `len` must equal `width * height * 3`.
///
/// # Safety
/// Handles must be live and `rgb` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ms_render(
    scene: *const MsScene,
    cameras: *const MsCameras,
    view: usize,
    rgb: *mut f64,
    len: usize,
) -> MsStatus {
    guard(|| {
        let scene = deref(scene, "scene")?;
        let cam = camera(cameras, view)?;
        if rgb.is_null() {
            return Err(Failure::new(MsStatus::NullPointer, "rgb is null"));
        }
        if len != cam.width * cam.height * 3 {
            return Err(Failure::new(
                MsStatus::InvalidArgument,
                format!(
                    "buffer holds {len} values, image needs {}",
                    cam.width * cam.height * 3
                ),
            ));
        }
        let img = render_image(&scene.inner, cam)?;
        std::slice::from_raw_parts_mut(rgb, len).copy_from_slice(&img.data);
        Ok(())
    })
}

/// PSNR (dB, capped at 100) and SSIM between two RGB images of equal size.
///
/// # Safety
/// `a` and `b` must be readable for `width * height * 3` doubles; outputs valid.
#[no_mangle]
pub unsafe extern "C" fn ms_image_metrics(
    a: *const f64,
    b: *const f64,
    width: usize,
    height: usize,
    psnr_out: *mut f64,
    ssim_out: *mut f64,
) -> MsStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(Failure::new(MsStatus::NullPointer, "image is null"));
        }
        let n = width * height * 3;
        let ia = ImageBuffer::from_data(width, height, std::slice::from_raw_parts(a, n).to_vec())?;
        let ib = ImageBuffer::from_data(width, height, std::slice::from_raw_parts(b, n).to_vec())?;
        put(psnr_out, psnr(&ia, &ib)?, "psnr_out")?;
        put(ssim_out, ssim(&ia, &ib)?, "ssim_out")
    })
}

unsafe fn run_training(
    data_dir: *const c_char,
    init: *const MsScene,
    config_json: *const c_char,
    out: *mut *mut MsTrainResult,
    refine: bool,
) -> Result<(), Failure> {
    let dir = path_arg(data_dir, "data_dir")?;
    let mut config = config_arg(config_json)?;
    let data = load_dataset(&dir)?;
    let scene = match init.as_ref() {
        Some(s) => s.inner.clone(),
        None => data.init.ok_or_else(|| {
            Failure::new(
                MsStatus::InvalidArgument,
                "dataset has no init.ply and no scene was given",
            )
        })?,
    };
    let output = if refine {
        config.use_gsdo = true;
        refine_only(scene, &data.cameras, &data.images, &config)?
    } else {
        train(scene, &data.cameras, &data.images, &config)?
    };
    let report_json = CString::new(output.report.to_json()?)
        .map_err(|_| Failure::new(MsStatus::Format, "report contains NUL"))?;
    put(
        out,
        Box::into_raw(Box::new(MsTrainResult {
            output,
            report_json,
        })),
        "out",
    )
}

/// Trains on the dataset directory `data_dir` (cameras.json, images/,
/// init.ply). `init` overrides the starting scene when non-null;
/// `config_json` is a flat JSON config, or null for defaults.
///
/// # Safety
/// Strings must be NUL-terminated; `init` null or live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_train(
    data_dir: *const c_char,
    init: *const MsScene,
    config_json: *const c_char,
    out: *mut *mut MsTrainResult,
) -> MsStatus {
    guard(|| run_training(data_dir, init, config_json, out, false))
}

/// Runs encoder refinement alone on `init` (or the dataset's init.ply).
///
/// # Safety
/// As [`ms_train`].
#[no_mangle]
pub unsafe extern "C" fn ms_gsdo_post(
    data_dir: *const c_char,
    init: *const MsScene,
    config_json: *const c_char,
    out: *mut *mut MsTrainResult,
) -> MsStatus {
    guard(|| run_training(data_dir, init, config_json, out, true))
}

/// Copies the trained scene into a new handle.
///
/// # Safety
/// `result` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ms_train_result_scene(
    result: *const MsTrainResult,
    out: *mut *mut MsScene,
) -> MsStatus {
    guard(|| {
        let r = deref(result, "result")?;
        put(
            out,
            Box::into_raw(Box::new(MsScene {
                inner: r.output.scene.clone(),
            })),
            "out",
        )
    })
}

/// The run report as JSON, owned by `result`.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_train_result_report(result: *const MsTrainResult) -> *const c_char {
    result
        .as_ref()
        .map_or(ptr::null(), |r| r.report_json.as_ptr())
}

/// Final mean PSNR over the training views, or NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_train_result_psnr(result: *const MsTrainResult) -> f64 {
    result
        .as_ref()
        .map_or(f64::NAN, |r| r.output.report.final_metrics.psnr)
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_train_result_free(result: *mut MsTrainResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `cameras` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_cameras_free(cameras: *mut MsCameras) {
    if !cameras.is_null() {
        drop(Box::from_raw(cameras));
    }
}
