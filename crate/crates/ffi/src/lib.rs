//! C interface to the `stereogen` core.
//!
//! Objects cross the boundary as opaque handles created by `sg_*_new` /
//! `sg_*_read` and released with the matching `sg_*_free`. Every fallible
//! call returns an [`SgStatus`]; on failure [`sg_last_error`] describes the
//! most recent error on the calling thread. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use stereogen::config::PipelineConfig;
use stereogen::diffusion::{make_schedule, NoiseSchedule, ScheduleConfig};
use stereogen::imaging::io::{read_depth, read_flo, read_png_frame, write_png_frame, DepthFormat};
use stereogen::imaging::{DepthMap, DisocclusionMask, FlowField, FrameBuffer};
use stereogen::pipeline::{cmd_assemble, cmd_inpaint, AssembleArgs, InpaintArgs};
use stereogen::warp::{warp_frame, CameraOffset, WarpParams, DEFAULT_MAX_BASELINE};
use stereogen::Error;

/// Result of every fallible call. The first four values match the exit
/// codes of the `stereogen` command-line tool.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    /// Invalid argument, shape or invariant violation.
    Invalid = 1,
    /// File missing, unreadable or malformed.
    Io = 2,
    /// Denoiser transport or remote failure.
    Protocol = 3,
    /// A required pointer argument was null or a string was not UTF-8.
    BadPointer = 4,
    /// The library panicked; the call had no effect on its outputs.
    Panic = 5,
}

pub struct SgFrame(FrameBuffer);
pub struct SgDepth(DepthMap);
pub struct SgMask(DisocclusionMask);
pub struct SgFlow(FlowField);
pub struct SgSchedule(NoiseSchedule);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Core(Error),
    Pointer(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn record(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            record(e.to_string());
            match e.exit_code() {
                2 => SgStatus::Io,
                3 => SgStatus::Protocol,
                _ => SgStatus::Invalid,
            }
        }
        Ok(Err(Failure::Pointer(what))) => {
            record(format!("bad pointer: {what}"));
            SgStatus::BadPointer
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            record(format!("panic: {msg}"));
            SgStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Pointer(what));
    }
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| Failure::Pointer(what))
}

unsafe fn opt_path_arg(p: *const c_char, what: &'static str) -> Result<Option<PathBuf>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        path_arg(p, what).map(Some)
    }
}

unsafe fn slice_arg<'a>(p: *const f32, len: usize, what: &'static str) -> Result<&'a [f32], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Pointer(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Pointer(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// frames ----------------------------------------------------------------------

/// Copies `len = width * height * channels` interleaved samples.
///
/// # Safety
/// `data` must point to `len` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_frame_new(
    width: usize,
    height: usize,
    channels: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut SgFrame,
) -> SgStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Pointer("out"));
        }
        let data = slice_arg(data, len, "data")?.to_vec();
        store(out, SgFrame(FrameBuffer::new(width, height, channels, data)?));
        Ok(())
    })
}

/// Reads an 8- or 16-bit PNG as linear RGB in [0, 1].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_frame_read_png(path: *const c_char, srgb_decode: bool, out: *mut *mut SgFrame) -> SgStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::Pointer("out"));
        }
        store(out, SgFrame(read_png_frame(path, srgb_decode)?));
        Ok(())
    })
}

/// # Safety
/// `frame` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sg_frame_write_png(frame: *const SgFrame, path: *const c_char) -> SgStatus {
    guard(|| {
        let f = handle(frame, "frame")?;
        write_png_frame(path_arg(path, "path")?, &f.0)?;
        Ok(())
    })
}

/// # Safety
/// `frame` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_frame_width(frame: *const SgFrame) -> usize {
    frame.as_ref().map_or(0, |f| f.0.width())
}

/// # Safety
/// `frame` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_frame_height(frame: *const SgFrame) -> usize {
    frame.as_ref().map_or(0, |f| f.0.height())
}

/// # Safety
/// `frame` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_frame_channels(frame: *const SgFrame) -> usize {
    frame.as_ref().map_or(0, |f| f.0.channels())
}

/// Borrowed pointer to the interleaved samples, valid while the handle lives.
///
/// # Safety
/// `frame` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_frame_data(frame: *const SgFrame) -> *const f32 {
    frame.as_ref().map_or(ptr::null(), |f| f.0.data().as_ptr())
}

/// # Safety
/// `frame` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_frame_free(frame: *mut SgFrame) {
    release(frame)
}

// depth -----------------------------------------------------------------------

/// # Safety
/// `data` must point to `len = width * height` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_depth_new(
    width: usize,
    height: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut SgDepth,
) -> SgStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Pointer("out"));
        }
        let data = slice_arg(data, len, "data")?.to_vec();
        store(out, SgDepth(DepthMap::new(width, height, data)?));
        Ok(())
    })
}

/// Reads a single-channel PFM depth map; `inverse` reciprocates on load.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_depth_read_pfm(path: *const c_char, inverse: bool, out: *mut *mut SgDepth) -> SgStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::Pointer("out"));
        }
        store(out, SgDepth(read_depth(path, DepthFormat::Pfm, inverse)?));
        Ok(())
    })
}

/// # Safety
/// `depth` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_depth_free(depth: *mut SgDepth) {
    release(depth)
}

// masks -----------------------------------------------------------------------

/// One byte per pixel, 1 where the warped frame has content.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_mask_data(mask: *const SgMask) -> *const u8 {
    mask.as_ref().map_or(ptr::null(), |m| m.0.data().as_ptr())
}

/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_mask_unknown_count(mask: *const SgMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.count_unknown())
}

/// # Safety
/// `mask` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_mask_free(mask: *mut SgMask) {
    release(mask)
}

// flow ------------------------------------------------------------------------

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_flow_read(path: *const c_char, out: *mut *mut SgFlow) -> SgStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(Failure::Pointer("out"));
        }
        store(out, SgFlow(read_flo(path)?));
        Ok(())
    })
}

/// # Safety
/// `flow` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_flow_width(flow: *const SgFlow) -> usize {
    flow.as_ref().map_or(0, |f| f.0.width())
}

/// # Safety
/// `flow` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_flow_height(flow: *const SgFlow) -> usize {
    flow.as_ref().map_or(0, |f| f.0.height())
}

/// Horizontal components, row-major.
///
/// # Safety
/// `flow` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_flow_u(flow: *const SgFlow) -> *const f32 {
    flow.as_ref().map_or(ptr::null(), |f| f.0.u().as_ptr())
}

/// Vertical components, row-major.
///
/// # Safety
/// `flow` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_flow_v(flow: *const SgFlow) -> *const f32 {
    flow.as_ref().map_or(ptr::null(), |f| f.0.v().as_ptr())
}

/// # Safety
/// `flow` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_flow_free(flow: *mut SgFlow) {
    release(flow)
}

// warp ------------------------------------------------------------------------

/// Warps `frame` to a camera shifted right by `baseline` with the default
/// four-plane setup. Depth must already lie in [1, 10].
///
/// # Safety
/// `frame` and `depth` must be live handles; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_warp(
    frame: *const SgFrame,
    depth: *const SgDepth,
    baseline: f64,
    focal_px: f64,
    out_frame: *mut *mut SgFrame,
    out_mask: *mut *mut SgMask,
) -> SgStatus {
    guard(|| {
        let (f, d) = (handle(frame, "frame")?, handle(depth, "depth")?);
        if out_frame.is_null() || out_mask.is_null() {
            return Err(Failure::Pointer("out"));
        }
        let cam = CameraOffset::horizontal(baseline, focal_px);
        cam.validate(DEFAULT_MAX_BASELINE)?;
        let (img, mask) = warp_frame(&f.0, &d.0, &cam, &WarpParams::default())?;
        store(out_frame, SgFrame(img));
        store(out_mask, SgMask(mask));
        Ok(())
    })
}

// schedule --------------------------------------------------------------------

/// Linear-beta schedule with the default beta range. Pass zeros for the
/// defaults (1000 steps, 50 visited, 8 / 4 resamplings).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_schedule_new(
    total_steps: usize,
    denoise_steps: usize,
    resample_hi: usize,
    resample_lo: usize,
    out: *mut *mut SgSchedule,
) -> SgStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Pointer("out"));
        }
        let d = ScheduleConfig::default();
        let pick = |v: usize, dv: usize| if v == 0 { dv } else { v };
        let cfg = ScheduleConfig {
            total_steps: pick(total_steps, d.total_steps),
            denoise_steps: pick(denoise_steps, d.denoise_steps),
            resample_hi: pick(resample_hi, d.resample_hi),
            resample_lo: pick(resample_lo, d.resample_lo),
            ..d
        };
        store(out, SgSchedule(make_schedule(&cfg)?));
        Ok(())
    })
}

/// Number of visited timesteps.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_schedule_len(s: *const SgSchedule) -> usize {
    s.as_ref().map_or(0, |s| s.0.step_plan().len())
}

/// The `i`-th visited timestep, or 0 when out of range.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_schedule_timestep(s: *const SgSchedule, i: usize) -> usize {
    s.as_ref().and_then(|s| s.0.step_plan().get(i).copied()).unwrap_or(0)
}

/// Cumulative signal level at `t`; NaN outside `0..=T`.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_schedule_alpha_bar(s: *const SgSchedule, t: usize) -> f64 {
    match s.as_ref() {
        Some(s) if t <= s.0.total_steps() => s.0.alpha_bar(t),
        _ => f64::NAN,
    }
}

/// Total resampling repetitions over the whole run.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sg_schedule_total_repetitions(s: *const SgSchedule) -> usize {
    s.as_ref().map_or(0, |s| s.0.total_repetitions())
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_schedule_free(s: *mut SgSchedule) {
    release(s)
}

// pipeline --------------------------------------------------------------------

unsafe fn load_config(config: *const c_char) -> Result<PipelineConfig, Failure> {
    Ok(match opt_path_arg(config, "config")? {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

/// Inpaints a frame-matrix directory into `out_dir`. `config` (TOML or run
/// manifest) and `oracle_targets` may be null. Without targets the denoiser
/// named in the config is used.
///
/// # Safety
/// Non-null strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sg_inpaint_matrix(
    matrix_dir: *const c_char,
    oracle_targets: *const c_char,
    out_dir: *const c_char,
    config: *const c_char,
    seed: u64,
) -> SgStatus {
    guard(|| {
        let mut cfg = load_config(config)?;
        cfg.diffusion.seed = seed;
        let args = InpaintArgs {
            matrix_dir: path_arg(matrix_dir, "matrix_dir")?,
            oracle_targets: opt_path_arg(oracle_targets, "oracle_targets")?,
            out_dir: path_arg(out_dir, "out_dir")?,
        };
        cmd_inpaint(&cfg, &args)?;
        Ok(())
    })
}

/// Writes the left/right/sbs/anaglyph sequences of a matrix directory.
///
/// # Safety
/// Both strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sg_assemble(matrix_dir: *const c_char, out_dir: *const c_char) -> SgStatus {
    guard(|| {
        let args = AssembleArgs { matrix_dir: path_arg(matrix_dir, "matrix_dir")?, out_dir: path_arg(out_dir, "out_dir")? };
        cmd_assemble(&PipelineConfig::default(), &args)?;
        Ok(())
    })
}
