//! C ABI over the simulator, observation transforms, datasets and trained
//! checkpoints.
//!
//! Objects are opaque handles created by `*_new`/`*_load`/`*_generate` and
//! released with the matching `*_free`. Every fallible call returns an
//! [`MwStatus`]; on failure a message for the calling thread is available
//! from [`mw_last_error`]. Frames cross the boundary as 4096 row-major
//! bytes with values 0 or 1.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use metaworld::checkpoint::Checkpoint;
use metaworld::dataset::Dataset;
use metaworld::frame::{Frame, FRAME_PIXELS};
use metaworld::metatrain::TrainState;
use metaworld::pongsim::{self, Action, SimState};
use metaworld::transforms::{apply_pixels, TransformKind};
use metaworld::vision::{LatentVec, LATENT_DIM};
use metaworld::Error;

pub const MW_FRAME_PIXELS: usize = 4096;
pub const MW_LATENT_DIM: usize = 32;
const _: () = assert!(MW_FRAME_PIXELS == FRAME_PIXELS && MW_LATENT_DIM == LATENT_DIM);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Corrupt = 4,
    Config = 5,
    Diverged = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MwStatus {
    match e {
        Error::Io { .. } | Error::RawIo(_) => MwStatus::Io,
        Error::Corrupt { .. } => MwStatus::Corrupt,
        Error::Config(_) => MwStatus::Config,
        Error::Diverged { .. } => MwStatus::Diverged,
        Error::Shape(_) | Error::NonFinite(_) | Error::Invalid(_) => MwStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), MwStatusError>) -> MwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MwStatus::Ok,
        Ok(Err(MwStatusError(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MwStatus::Panic
        }
    }
}

struct MwStatusError(MwStatus, String);

impl From<Error> for MwStatusError {
    fn from(e: Error) -> Self {
        MwStatusError(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> MwStatusError {
    MwStatusError(MwStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> MwStatusError {
    MwStatusError(MwStatus::InvalidArgument, msg.into())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, MwStatusError> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not UTF-8"))?;
    Ok(Path::new(s))
}

unsafe fn out_slice<'a, T>(
    p: *mut T,
    len: usize,
    want: usize,
    what: &str,
) -> Result<&'a mut [T], MwStatusError> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != want {
        return Err(invalid(format!(
            "{what} must hold {want} values, got {len}"
        )));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn in_slice<'a, T>(
    p: *const T,
    len: usize,
    want: usize,
    what: &str,
) -> Result<&'a [T], MwStatusError> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != want {
        return Err(invalid(format!(
            "{what} must hold {want} values, got {len}"
        )));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn frame_out(f: &Frame, out: &mut [u8]) {
    for (o, v) in out.iter_mut().zip(f.pixels()) {
        *o = v;
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Opaque simulator handle.
pub struct MwSim {
    state: SimState,
}

/// Creates a simulator reset with `seed`. Never returns null.
#[no_mangle]
pub extern "C" fn mw_sim_new(seed: u64) -> *mut MwSim {
    Box::into_raw(Box::new(MwSim {
        state: pongsim::reset(seed),
    }))
}

/// # Safety
/// `sim` must be null or a handle from [`mw_sim_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mw_sim_free(sim: *mut MwSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances one step with `action` in 0..6.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mw_sim_step(sim: *mut MwSim, action: u8) -> MwStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        let a = Action::new(action)?;
        sim.state.advance(a);
        Ok(())
    })
}

/// Renders the current state into `out` (4096 bytes).
///
/// # Safety
/// `sim` must be a live handle and `out` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mw_sim_render(sim: *const MwSim, out: *mut u8, len: usize) -> MwStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out_slice(out, len, FRAME_PIXELS, "out")?;
        frame_out(&pongsim::render(&sim.state), out);
        Ok(())
    })
}

/// Applies transform `kind` (0 identity, 1 transpose, 2 horizontal swap,
/// 3 color invert, 4 mirror, 5 vertical swap) to a 4096-byte frame.
///
/// # Safety
/// `input` and `out` must be valid for `len` bytes and may not overlap.
#[no_mangle]
pub unsafe extern "C" fn mw_transform(
    kind: u32,
    input: *const u8,
    out: *mut u8,
    len: usize,
) -> MwStatus {
    guard(|| {
        let k = *TransformKind::ALL
            .get(kind as usize)
            .ok_or_else(|| invalid(format!("unknown transform kind {kind}")))?;
        let input = in_slice(input, len, FRAME_PIXELS, "input")?;
        let res = apply_pixels(k, input)?;
        out_slice(out, len, FRAME_PIXELS, "out")?.copy_from_slice(&res);
        Ok(())
    })
}

/// Opaque dataset handle.
pub struct MwDataset {
    data: Dataset,
}

fn put<T>(out: *mut *mut T, v: T) -> Result<(), MwStatusError> {
    if out.is_null() {
        return Err(null("out"));
    }
    // SAFETY: checked non-null; the caller guarantees it is writable
    unsafe { *out = Box::into_raw(Box::new(v)) };
    Ok(())
}

/// Generates `episodes` random-policy episodes of `steps` frames.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn mw_dataset_generate(
    episodes: usize,
    steps: usize,
    seed: u64,
    out: *mut *mut MwDataset,
) -> MwStatus {
    guard(|| {
        put(
            out,
            MwDataset {
                data: Dataset::generate(episodes, steps, seed)?,
            },
        )
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mw_dataset_load(
    path: *const c_char,
    out: *mut *mut MwDataset,
) -> MwStatus {
    guard(|| {
        put(
            out,
            MwDataset {
                data: Dataset::load(path_arg(path)?)?,
            },
        )
    })
}

/// # Safety
/// `ds` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mw_dataset_save(ds: *const MwDataset, path: *const c_char) -> MwStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        ds.data.save(path_arg(path)?)?;
        Ok(())
    })
}

/// Number of episodes, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mw_dataset_len(ds: *const MwDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.data.len())
}

/// Frame count of episode `episode`.
///
/// # Safety
/// `ds` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mw_dataset_episode_len(
    ds: *const MwDataset,
    episode: usize,
    out: *mut usize,
) -> MwStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let e = ds
            .data
            .episodes
            .get(episode)
            .ok_or_else(|| invalid("episode index out of range"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = e.frames.len();
        Ok(())
    })
}

/// Copies frame `t` of episode `episode` into `out` (4096 bytes).
///
/// # Safety
/// `ds` must be a live handle; `out` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mw_dataset_frame(
    ds: *const MwDataset,
    episode: usize,
    t: usize,
    out: *mut u8,
    len: usize,
) -> MwStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let f = ds
            .data
            .episodes
            .get(episode)
            .and_then(|e| e.frames.get(t))
            .ok_or_else(|| invalid("episode or frame index out of range"))?;
        frame_out(f, out_slice(out, len, FRAME_PIXELS, "out")?);
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mw_dataset_free(ds: *mut MwDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Opaque handle to the models of a training checkpoint. Environment 0 is
/// the original environment, 1 the trained variant.
pub struct MwModel {
    state: TrainState<f32>,
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mw_model_load(path: *const c_char, out: *mut *mut MwModel) -> MwStatus {
    guard(|| {
        let c = Checkpoint::load(path_arg(path)?)?;
        put(
            out,
            MwModel {
                state: TrainState::from_checkpoint(&c)?,
            },
        )
    })
}

/// Transform kind of environment `env` (see [`mw_transform`]).
///
/// # Safety
/// `model` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn mw_model_env_kind(
    model: *const MwModel,
    env: u32,
    out: *mut u32,
) -> MwStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let k = *m
            .state
            .env_kinds()
            .get(env as usize)
            .ok_or_else(|| invalid("env must be 0 or 1"))?;
        let idx = TransformKind::ALL
            .iter()
            .position(|&x| x == k)
            .expect("known kind");
        *out.as_mut().ok_or_else(|| null("out"))? = idx as u32;
        Ok(())
    })
}

/// Posterior mean and log-variance (32 values each) of a frame under
/// environment `env`'s encoder.
///
/// # Safety
/// `model` must be a live handle; `frame` valid for 4096 bytes; `mu` and
/// `logvar` valid for 32 floats each.
#[no_mangle]
pub unsafe extern "C" fn mw_model_encode(
    model: *const MwModel,
    env: u32,
    frame: *const u8,
    mu: *mut f32,
    logvar: *mut f32,
) -> MwStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let v = m
            .state
            .vision
            .get(env as usize)
            .ok_or_else(|| invalid("env must be 0 or 1"))?;
        let px = in_slice(frame, FRAME_PIXELS, FRAME_PIXELS, "frame")?;
        if px.iter().any(|&b| b > 1) {
            return Err(invalid("frame entries must be 0 or 1"));
        }
        let f = Frame::from_pixels(px).expect("length checked");
        let (tm, tl) = v.encode_batch(std::slice::from_ref(&f))?;
        out_slice(mu, LATENT_DIM, LATENT_DIM, "mu")?.copy_from_slice(tm.data());
        out_slice(logvar, LATENT_DIM, LATENT_DIM, "logvar")?.copy_from_slice(tl.data());
        Ok(())
    })
}

/// Pixel probabilities (4096 floats) of decoding latent `z` (32 floats)
/// with environment `env`'s decoder.
///
/// # Safety
/// `model` must be a live handle; `z` valid for 32 floats; `out` valid
/// for 4096 floats.
#[no_mangle]
pub unsafe extern "C" fn mw_model_decode(
    model: *const MwModel,
    env: u32,
    z: *const f32,
    out: *mut f32,
) -> MwStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let v = m
            .state
            .vision
            .get(env as usize)
            .ok_or_else(|| invalid("env must be 0 or 1"))?;
        let z = in_slice(z, LATENT_DIM, LATENT_DIM, "z")?;
        if z.iter().any(|x| !x.is_finite()) {
            return Err(invalid("z must be finite"));
        }
        let p = v.decode(&LatentVec(z.iter().map(|&x| f64::from(x)).collect()))?;
        let out = out_slice(out, FRAME_PIXELS, FRAME_PIXELS, "out")?;
        for (o, &x) in out.iter_mut().zip(&p.0) {
            *o = x as f32;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mw_model_free(model: *mut MwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
