// SPDX-License-Identifier: Apache-2.0

//! C ABI over the `spguard` library.
//!
//! Conventions:
//! - Every fallible function returns an [`SpgStatus`]; results go through
//!   out-pointers that are written only on success.
//! - On failure a message is kept per thread; read it with [`spg_last_error`].
//! - Handles ([`SpgWorld`], [`SpgMethod`]) are opaque. Free each with its
//!   `_free` function exactly once; `_free(NULL)` is a no-op.
//! - Tensors are flat `double` arrays, channel-major then row-major.
//! - Panics never cross the boundary; they surface as [`SpgStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use spguard::guidance::{spguard_mask, GuidanceConfig, MaskValue, SpGuardParams};
use spguard::harness::Detector;
use spguard::metrics::preservation_distance;
use spguard::numeric::{cosine_sim, percentile_threshold};
use spguard::rng::SeedSpec;
use spguard::sampler::{Predictors, SampleOptions};
use spguard::schedule::ScheduleSpec;
use spguard::tensor::{Shape, Tensor3};
use spguard::world::{WorldConfig, WorldModel};
use spguard::Error;

/// Status codes. Values 2 to 4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpgStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    Config = 2,
    Numeric = 3,
    Calibration = 4,
    /// Mismatched lengths or another broken precondition.
    Contract = 5,
    Io = 6,
    Panic = 7,
}

/// Opaque toy world.
pub struct SpgWorld {
    world: WorldModel,
}

/// Opaque guidance method.
pub struct SpgMethod {
    config: GuidanceConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SpgStatus {
    match e.root() {
        Error::Config(_) => SpgStatus::Config,
        Error::Numeric { .. } => SpgStatus::Numeric,
        Error::Calibration { .. } => SpgStatus::Calibration,
        Error::Io { .. } => SpgStatus::Io,
        _ => SpgStatus::Contract,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

type FfiResult<T> = Result<T, Fail>;

/// Runs `f`, mapping errors and panics to a status and the thread's last error.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> SpgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpgStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            SpgStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SpgStatus::Panic
        }
    }
}

/// # Safety
/// `p` is NULL or valid for reads of `len` doubles.
unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> FfiResult<&'a [f64]> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` is NULL or valid for writes of `len` doubles.
unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> FfiResult<&'a mut [f64]> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// # Safety
/// `p` is NULL or a NUL-terminated string.
unsafe fn string<'a>(p: *const c_char, what: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::config(format!("{what}: not valid UTF-8"))))
}

fn out<T>(p: *mut T, what: &'static str) -> FfiResult<*mut T> {
    if p.is_null() {
        Err(Fail::Null(what))
    } else {
        Ok(p)
    }
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn spg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Cosine similarity of two length-`n` vectors (0 when either is numerically zero).
///
/// # Safety
/// `a` and `b` are valid for `n` reads; `out_value` for one write.
#[no_mangle]
pub unsafe extern "C" fn spg_cosine_sim(a: *const f64, b: *const f64, n: usize, out_value: *mut f64) -> SpgStatus {
    guard(|| {
        let o = out(out_value, "out_value")?;
        let v = cosine_sim(slice(a, n, "a")?, slice(b, n, "b")?)?;
        *o = v;
        Ok(())
    })
}

/// Nearest-rank `q`-quantile threshold of `n` values (see the Rust docs of
/// `percentile_threshold`); use with a strict `>` comparison.
///
/// # Safety
/// `x` is valid for `n` reads; `out_value` for one write.
#[no_mangle]
pub unsafe extern "C" fn spg_percentile_threshold(x: *const f64, n: usize, q: f64, out_value: *mut f64) -> SpgStatus {
    guard(|| {
        let o = out(out_value, "out_value")?;
        let t = Tensor3::new(Shape::new(1, 1, n), slice(x, n, "x")?.to_vec())?;
        *o = percentile_threshold(&t, q)?;
        Ok(())
    })
}

/// SP-Guard selective mask of two `channels×height×width` direction tensors.
/// `signed_weight` non-zero selects `1 + max(0, ψ)` instead of `1 + |ψ|`.
///
/// # Safety
/// `dc_prompt`, `dc_unsafe` and `out_mask` are valid for `channels·height·width` elements.
#[no_mangle]
pub unsafe extern "C" fn spg_spguard_mask(
    dc_prompt: *const f64,
    dc_unsafe: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    q: f64,
    signed_weight: c_int,
    out_mask: *mut f64,
) -> SpgStatus {
    guard(|| {
        let shape = Shape::new(channels, height, width);
        shape.validate()?;
        let n = shape.len();
        let dst = slice_mut(out_mask, n, "out_mask")?;
        let p = Tensor3::new(shape, slice(dc_prompt, n, "dc_prompt")?.to_vec())?;
        let s = Tensor3::new(shape, slice(dc_unsafe, n, "dc_unsafe")?.to_vec())?;
        let value = if signed_weight != 0 { MaskValue::Signed } else { MaskValue::Literal };
        dst.copy_from_slice(spguard_mask(&p, &s, q, value)?.as_slice());
        Ok(())
    })
}

/// RMSE between two length-`n` images.
///
/// # Safety
/// `a` and `b` are valid for `n` reads; `out_value` for one write.
#[no_mangle]
pub unsafe extern "C" fn spg_preservation_distance(a: *const f64, b: *const f64, n: usize, out_value: *mut f64) -> SpgStatus {
    guard(|| {
        let o = out(out_value, "out_value")?;
        let shape = Shape::new(1, 1, n);
        let ta = Tensor3::new(shape, slice(a, n, "a")?.to_vec())?;
        let tb = Tensor3::new(shape, slice(b, n, "b")?.to_vec())?;
        *o = preservation_distance(&ta, &tb, None)?;
        Ok(())
    })
}

fn box_world(world: WorldModel, out_world: *mut *mut SpgWorld) -> FfiResult<()> {
    let o = out(out_world, "out_world")?;
    // SAFETY: checked non-null; the caller owns the slot.
    unsafe { *o = Box::into_raw(Box::new(SpgWorld { world })) };
    Ok(())
}

/// Creates the built-in default world.
///
/// # Safety
/// `out_world` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spg_world_new_default(out_world: *mut *mut SpgWorld) -> SpgStatus {
    guard(|| box_world(WorldModel::default_world(), out_world))
}

/// Creates a world from a TOML definition.
///
/// # Safety
/// `toml` is a NUL-terminated string; `out_world` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spg_world_from_toml(toml: *const c_char, out_world: *mut *mut SpgWorld) -> SpgStatus {
    guard(|| {
        let text = string(toml, "toml")?;
        box_world(WorldConfig::from_toml(text)?.build()?, out_world)
    })
}

/// # Safety
/// `world` is NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spg_world_free(world: *mut SpgWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// Latent shape of `world`.
///
/// # Safety
/// `world` is a live handle; the out-pointers are valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn spg_world_shape(
    world: *const SpgWorld,
    out_channels: *mut usize,
    out_height: *mut usize,
    out_width: *mut usize,
) -> SpgStatus {
    guard(|| {
        let w = world.as_ref().ok_or(Fail::Null("world"))?;
        let (c, h, wd) = (out(out_channels, "out_channels")?, out(out_height, "out_height")?, out(out_width, "out_width")?);
        let s = w.world.shape();
        (*c, *h, *wd) = (s.channels, s.height, s.width);
        Ok(())
    })
}

/// Built-in method by name: `cfg`, `neg`, `sld-weak`, `sld-medium`,
/// `sld-strong`, `sld-max` or `spguard` (shipped defaults).
///
/// # Safety
/// `name` is a NUL-terminated string; `out_method` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spg_method_builtin(name: *const c_char, s_g: f64, out_method: *mut *mut SpgMethod) -> SpgStatus {
    guard(|| {
        let name = string(name, "name")?;
        let o = out(out_method, "out_method")?;
        let config = match name {
            "cfg" => GuidanceConfig::cfg(s_g),
            "neg" => GuidanceConfig::neg(s_g),
            "spguard" => GuidanceConfig::spguard(SpGuardParams::shipped_defaults()?, s_g),
            other => match other.strip_prefix("sld-") {
                Some(preset) => {
                    let c = GuidanceConfig::sld_preset(preset, s_g);
                    c.resolved_sld()?;
                    c
                }
                None => return Err(Error::config(format!("unknown built-in method '{other}'")).into()),
            },
        };
        *o = Box::into_raw(Box::new(SpgMethod { config }));
        Ok(())
    })
}

/// Method from a TOML table with the keys of an experiment config's `[[methods]]` entry.
///
/// # Safety
/// `toml` is a NUL-terminated string; `out_method` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn spg_method_from_toml(toml: *const c_char, out_method: *mut *mut SpgMethod) -> SpgStatus {
    guard(|| {
        let text = string(toml, "toml")?;
        let o = out(out_method, "out_method")?;
        let config = GuidanceConfig::from_toml(text)?;
        *o = Box::into_raw(Box::new(SpgMethod { config }));
        Ok(())
    })
}

/// # Safety
/// `method` is NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spg_method_free(method: *mut SpgMethod) {
    if !method.is_null() {
        drop(Box::from_raw(method));
    }
}

/// Samples the default scenario of `world` at harmfulness `alpha` with
/// `method` from the initial noise of `seed`, using the default schedule
/// with `num_steps` steps (0 for the default of 50). Writes the final image
/// into `out_image`, which must hold exactly `out_len` = C·H·W doubles.
///
/// # Safety
/// `world` and `method` are live handles; `out_image` is valid for `out_len` writes.
#[no_mangle]
pub unsafe extern "C" fn spg_sample(
    world: *const SpgWorld,
    method: *const SpgMethod,
    alpha: f64,
    seed: u64,
    num_steps: usize,
    out_image: *mut f64,
    out_len: usize,
) -> SpgStatus {
    guard(|| {
        let w = &world.as_ref().ok_or(Fail::Null("world"))?.world;
        let m = &method.as_ref().ok_or(Fail::Null("method"))?.config;
        let dst = slice_mut(out_image, out_len, "out_image")?;
        if out_len != w.shape().len() {
            return Err(Error::contract(format!("out_len {out_len} != world size {}", w.shape().len())).into());
        }
        let mut spec = ScheduleSpec::default();
        if num_steps > 0 {
            spec.num_steps = num_steps;
        }
        let schedule = spec.build()?;
        m.validate(schedule.num_steps())?;
        let scenario = w.default_scenario(alpha)?;
        let tr = Predictors::for_scenario(w, &scenario)?.sample(m, SeedSpec::new(seed, 0), &schedule, SampleOptions::default())?;
        dst.copy_from_slice(tr.final_image.as_slice());
        Ok(())
    })
}

/// Unsafe-content detector score of `image` (length C·H·W) for `world`'s
/// first unsafe concept: Pearson correlation over its region.
///
/// # Safety
/// `world` is a live handle; `image` is valid for `len` reads; `out_value` for one write.
#[no_mangle]
pub unsafe extern "C" fn spg_detector_score(
    world: *const SpgWorld,
    image: *const f64,
    len: usize,
    out_value: *mut f64,
) -> SpgStatus {
    guard(|| {
        let w = &world.as_ref().ok_or(Fail::Null("world"))?.world;
        let o = out(out_value, "out_value")?;
        let img = Tensor3::new(w.shape(), slice(image, len, "image")?.to_vec())?;
        *o = Detector::new(w, 0.0)?.score(&img)?;
        Ok(())
    })
}
