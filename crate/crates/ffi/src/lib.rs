//! C interface to `lanediff`: generate a scene, load or create a model, draw
//! samples and read back polylines and the uncertainty map.
//!
//! Every fallible function returns an [`LdStatus`]; on failure the message
//! is available from [`ld_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use lanediff::aggregation::aggregate_samples;
use lanediff::diffusion::{NoiseSchedule, SamplerConfig, DEFAULT_STEPS};
use lanediff::geometry::{GaussianKernel, VectorMap};
use lanediff::net::{load_checkpoint, Model, NetConfig};
use lanediff::scene::{generate_scene, observe, Difficulty, ObservationGrid, ObserveConfig, Scene};
use lanediff::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Checkpoint = 4,
    Io = 5,
    ShapeMismatch = 6,
    Numeric = 7,
    Other = 8,
    Panic = 9,
}

/// A generated scene with its observation grid.
pub struct LdScene {
    scene: Scene,
    obs: ObservationGrid,
}

/// A denoiser with its noise schedule.
pub struct LdModel {
    model: Model,
}

/// Sampled maps of one scene.
pub struct LdSamples {
    maps: Vec<VectorMap>,
    frame: lanediff::geometry::MapFrame,
}

/// Sampler settings passed by value.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct LdSamplerParams {
    pub k: u32,
    pub eta: f64,
    pub tau: f64,
    pub n: u32,
    pub queries: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LdStatus {
    match e {
        Error::InvalidArgument(_) | Error::QueryOverflow { .. } | Error::InvalidStepPair { .. } => LdStatus::InvalidArgument,
        Error::Config(_) => LdStatus::Config,
        Error::Checkpoint(_) => LdStatus::Checkpoint,
        Error::Io { .. } | Error::Parse { .. } | Error::Json(_) => LdStatus::Io,
        Error::ShapeMismatch(_) => LdStatus::ShapeMismatch,
        Error::NumericOverflow(_) | Error::Diverged { .. } => LdStatus::Numeric,
        _ => LdStatus::Other,
    }
}

/// Run `f`, converting errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), (LdStatus, String)>) -> LdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LdStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            LdStatus::Panic
        }
    }
}

fn lib(e: Error) -> (LdStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (LdStatus, String) {
    (LdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, (LdStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ld_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ld_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default sampler settings.
#[no_mangle]
pub extern "C" fn ld_sampler_defaults() -> LdSamplerParams {
    let d = SamplerConfig::default();
    LdSamplerParams {
        k: d.k as u32,
        eta: d.eta,
        tau: d.tau,
        n: d.n as u32,
        queries: d.queries as u32,
    }
}

/// Generate a scene; `difficulty` is 0 (easy), 1 (medium) or 2 (hard).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ld_scene_generate(seed: u64, difficulty: u32, out: *mut *mut LdScene) -> LdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = match difficulty {
            0 => Difficulty::Easy,
            1 => Difficulty::Medium,
            2 => Difficulty::Hard,
            other => return Err((LdStatus::InvalidArgument, format!("difficulty {other} not in 0..=2"))),
        };
        let scene = generate_scene(seed, d).map_err(lib)?;
        let obs = observe(&scene, lanediff::harness::dataset::observation_seed(seed), &ObserveConfig::default()).map_err(lib)?;
        *out = Box::into_raw(Box::new(LdScene { scene, obs }));
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle from `ld_scene_generate` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ld_scene_free(scene: *mut LdScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Number of ground-truth polylines of the scene.
///
/// # Safety
/// `scene` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ld_scene_element_count(scene: *const LdScene, out: *mut usize) -> LdStatus {
    guard(|| {
        let s = borrow(scene, "scene")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = s.scene.gt.len();
        Ok(())
    })
}

/// Freshly initialized model with default architecture and a
/// `DEFAULT_STEPS` cosine schedule.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ld_model_new(seed: u64, out: *mut *mut LdModel) -> LdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let schedule = NoiseSchedule::cosine(DEFAULT_STEPS).map_err(lib)?;
        let model = Model::new(&NetConfig::default(), schedule, seed).map_err(lib)?;
        *out = Box::into_raw(Box::new(LdModel { model }));
        Ok(())
    })
}

/// Load a checkpoint written by `lanediff train`.
///
/// # Safety
/// `path` must be a nul-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ld_model_load(path: *const c_char, out: *mut *mut LdModel) -> LdStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (LdStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let (_, model) = load_checkpoint(&PathBuf::from(p)).map_err(lib)?;
        *out = Box::into_raw(Box::new(LdModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ld_model_free(model: *mut LdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Draw `params.n` samples for `scene`.
///
/// # Safety
/// `model` and `scene` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ld_model_sample(
    model: *const LdModel,
    scene: *const LdScene,
    params: LdSamplerParams,
    seed: u64,
    out: *mut *mut LdSamples,
) -> LdStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        let s = borrow(scene, "scene")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = SamplerConfig {
            k: params.k as usize,
            eta: params.eta,
            tau: params.tau,
            n: params.n as usize,
            queries: params.queries as usize,
            steps: m.model.schedule.steps(),
            ..SamplerConfig::default()
        };
        cfg.validate(m.model.schedule.steps()).map_err(lib)?;
        let maps = m.model.sample_scene(&s.obs, &cfg, seed).map_err(lib)?;
        *out = Box::into_raw(Box::new(LdSamples {
            maps,
            frame: s.scene.frame,
        }));
        Ok(())
    })
}

/// # Safety
/// `samples` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ld_samples_free(samples: *mut LdSamples) {
    if !samples.is_null() {
        drop(Box::from_raw(samples));
    }
}

/// Number of sampled maps.
///
/// # Safety
/// `samples` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ld_samples_count(samples: *const LdSamples, out: *mut usize) -> LdStatus {
    guard(|| {
        let s = borrow(samples, "samples")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = s.maps.len();
        Ok(())
    })
}

/// Number of polylines in sample `i`.
///
/// # Safety
/// `samples` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ld_samples_element_count(samples: *const LdSamples, i: usize, out: *mut usize) -> LdStatus {
    guard(|| {
        let s = borrow(samples, "samples")?;
        let m = s
            .maps
            .get(i)
            .ok_or_else(|| (LdStatus::InvalidArgument, format!("sample {i} out of range")))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.len();
        Ok(())
    })
}

/// Polyline `j` of sample `i`: class index (0 divider, 1 boundary,
/// 2 pedestrian crossing), score, and points as metric `x, y` pairs written
/// to `points` (capacity `cap` doubles). `n_points` receives the point count
/// even when `cap` is too small, in which case nothing is written and
/// `InvalidArgument` is returned.
///
/// # Safety
/// All out pointers must be writable; `points` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ld_samples_element(
    samples: *const LdSamples,
    i: usize,
    j: usize,
    class_out: *mut u32,
    score_out: *mut f64,
    points: *mut f64,
    cap: usize,
    n_points: *mut usize,
) -> LdStatus {
    guard(|| {
        let s = borrow(samples, "samples")?;
        if class_out.is_null() || score_out.is_null() || n_points.is_null() {
            return Err(null("out pointer"));
        }
        let m = s
            .maps
            .get(i)
            .ok_or_else(|| (LdStatus::InvalidArgument, format!("sample {i} out of range")))?;
        let el = m
            .elements
            .get(j)
            .ok_or_else(|| (LdStatus::InvalidArgument, format!("element {j} out of range")))?;
        *n_points = el.points.len();
        if cap < 2 * el.points.len() || points.is_null() {
            return Err((LdStatus::InvalidArgument, format!("need room for {} doubles", 2 * el.points.len())));
        }
        let dst = std::slice::from_raw_parts_mut(points, cap);
        for (k, p) in el.points.iter().enumerate() {
            let xy = s.frame.denormalize(*p);
            dst[2 * k] = xy[0];
            dst[2 * k + 1] = xy[1];
        }
        *class_out = el.class.index() as u32;
        *score_out = m.score(j);
        Ok(())
    })
}

/// Uncertainty map of the samples (row-major, `h * w` doubles) after
/// dropping polylines scoring at or below `score_filter`. `h` and `w`
/// receive the shape even when `cap` is too small.
///
/// # Safety
/// `out` must hold `cap` doubles; `h` and `w` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ld_samples_uncertainty(
    samples: *const LdSamples,
    score_filter: f64,
    out: *mut f64,
    cap: usize,
    h: *mut usize,
    w: *mut usize,
) -> LdStatus {
    guard(|| {
        let s = borrow(samples, "samples")?;
        if h.is_null() || w.is_null() {
            return Err(null("shape pointer"));
        }
        *h = s.frame.grid_h;
        *w = s.frame.grid_w;
        let need = s.frame.grid_h * s.frame.grid_w;
        if out.is_null() || cap < need {
            return Err((LdStatus::InvalidArgument, format!("need room for {need} doubles")));
        }
        let (_, u) = aggregate_samples(&s.maps, &s.frame, &GaussianKernel::aggregation_default(), score_filter).map_err(lib)?;
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(&u.data);
        Ok(())
    })
}
