//! C ABI over the planner. Objects are opaque handles created by `*_new` /
//! `*_load` / `*_generate` and released with the matching `*_free`. Every
//! fallible call returns a [`SagaStatus`]; the message of the last failure on
//! the calling thread is available from [`saga_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use saga::geometry::{BodyState, NUM_ANCHORS, REFINE_DIM};
use saga::harness::{body_state, run_episode, select_anchor, EpisodeConfig, FailureCause, SelectionMode};
use saga::net::{NetConfig, NetInput, PlannerNet};
use saga::trajectory::solve_quintic;
use saga::world::{render_depth, PillarWorld, Pose};
use saga::SagaError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SagaStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Invalid value, configuration or index.
    InvalidArgument = 2,
    /// NaN/infinity or shape fault inside a computation.
    Numerical = 3,
    /// File could not be read or written.
    Io = 4,
    /// Malformed file contents.
    Format = 5,
    /// Output buffer too small.
    BufferTooSmall = 6,
    /// Internal panic caught at the boundary.
    Panic = 7,
}

/// Opaque pillar world.
pub struct SagaWorld(PillarWorld);

/// Opaque planner network.
pub struct SagaNet(PlannerNet);

/// Outcome of one simulated flight.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SagaFlightSummary {
    pub success: bool,
    /// 0 none, 1 collision, 2 timeout, 3 fault.
    pub failure_cause: i32,
    pub time_s: f64,
    pub length_m: f64,
    pub avg_safety_m: f64,
    pub min_safety_m: f64,
    pub smoothness: f64,
    pub replans: u64,
}

/// Selection mode for [`saga_fly`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SagaMode {
    Learned = 0,
    Oracle = 1,
    Random = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &SagaError) -> SagaStatus {
    match e {
        SagaError::NonFinite(_) | SagaError::Shape { .. } => SagaStatus::Numerical,
        SagaError::Io { .. } => SagaStatus::Io,
        SagaError::Format { .. } => SagaStatus::Format,
        _ => SagaStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics to a status and recording the
/// message.
fn guard<F: FnOnce() -> Result<(), (SagaStatus, String)>>(f: F) -> SagaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SagaStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            SagaStatus::Panic
        }
    }
}

fn lift<T>(r: saga::Result<T>) -> Result<T, (SagaStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (SagaStatus, String) {
    (SagaStatus::NullArgument, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (SagaStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SagaStatus::InvalidArgument, "path is not utf-8".to_string()))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (SagaStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn saga_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn saga_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Generates a world with the default bounds, start and goal.
///
/// # Safety
/// `out` must be a valid pointer; the handle written there must be released
/// with [`saga_world_free`].
#[no_mangle]
pub unsafe extern "C" fn saga_world_generate(seed: u64, density: f64, out: *mut *mut SagaWorld) -> SagaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let w = lift(PillarWorld::generate_default(seed, density))?;
        *out = Box::into_raw(Box::new(SagaWorld(w)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn saga_world_load(path: *const c_char, out: *mut *mut SagaWorld) -> SagaStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_ref(out, "out")?;
        let w = lift(PillarWorld::load(&path))?;
        *out = Box::into_raw(Box::new(SagaWorld(w)));
        Ok(())
    })
}

/// # Safety
/// `world` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn saga_world_save(world: *const SagaWorld, path: *const c_char) -> SagaStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        let path = path_arg(path)?;
        lift(w.0.save(&path))
    })
}

/// # Safety
/// `world` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn saga_world_free(world: *mut SagaWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// # Safety
/// `world` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn saga_world_pillar_count(world: *const SagaWorld, out: *mut usize) -> SagaStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        *out_ref(out, "out")? = w.0.pillars.len();
        Ok(())
    })
}

/// Signed distance from (x, y, z) to the nearest pillar surface.
///
/// # Safety
/// `world` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn saga_world_signed_distance(
    world: *const SagaWorld,
    x: f64,
    y: f64,
    z: f64,
    out: *mut f64,
) -> SagaStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        *out_ref(out, "out")? = w.0.signed_distance(&[x, y, z]);
        Ok(())
    })
}

/// Renders the default camera's depth image (row-major meters) into `buf`.
/// `height` and `width` receive the image size; with a null `buf` only the
/// size is reported.
///
/// # Safety
/// `buf` must be null or hold `len` floats; `height`/`width` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn saga_render_depth(
    world: *const SagaWorld,
    x: f64,
    y: f64,
    z: f64,
    yaw: f64,
    buf: *mut f32,
    len: usize,
    height: *mut usize,
    width: *mut usize,
) -> SagaStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        let camera = EpisodeConfig::default().camera;
        *out_ref(height, "height")? = camera.height;
        *out_ref(width, "width")? = camera.width;
        if buf.is_null() {
            return Ok(());
        }
        let n = camera.height * camera.width;
        if len < n {
            return Err((SagaStatus::BufferTooSmall, format!("need {n} floats, got {len}")));
        }
        let img = render_depth(&w.0, &Pose::new([x, y, z], yaw), &camera);
        std::slice::from_raw_parts_mut(buf, n).copy_from_slice(&img.data);
        Ok(())
    })
}

/// Freshly initialized network; `tiny` selects the shrunken widths.
///
/// # Safety
/// `out` must be a valid pointer; release with [`saga_net_free`].
#[no_mangle]
pub unsafe extern "C" fn saga_net_new(tiny: bool, seed: u64, out: *mut *mut SagaNet) -> SagaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let config = if tiny { NetConfig::tiny() } else { NetConfig::standard() };
        let n = lift(PlannerNet::init(config, seed))?;
        *out = Box::into_raw(Box::new(SagaNet(n)));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn saga_net_load(path: *const c_char, out: *mut *mut SagaNet) -> SagaStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_ref(out, "out")?;
        let n = lift(PlannerNet::load(&path))?;
        *out = Box::into_raw(Box::new(SagaNet(n)));
        Ok(())
    })
}

/// # Safety
/// `net` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn saga_net_save(net: *const SagaNet, path: *const c_char) -> SagaStatus {
    guard(|| {
        let n = net.as_ref().ok_or_else(|| null("net"))?;
        let path = path_arg(path)?;
        lift(n.0.save(&path))
    })
}

/// # Safety
/// `net` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn saga_net_free(net: *mut SagaNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// One planning step at a world pose: renders depth, runs the network and
/// writes the 15 scores, the 15×9 normalized refinements (row-major) and the
/// selected anchor index.
///
/// # Safety
/// Handles must be live; `scores` must hold 15 doubles, `refinements` 135
/// doubles, `selected` one usize.
#[no_mangle]
pub unsafe extern "C" fn saga_plan(
    net: *const SagaNet,
    world: *const SagaWorld,
    x: f64,
    y: f64,
    z: f64,
    yaw: f64,
    velocity: *const f64,
    v_max: f64,
    ppe: bool,
    scores: *mut f64,
    refinements: *mut f64,
    selected: *mut usize,
) -> SagaStatus {
    guard(|| {
        let n = net.as_ref().ok_or_else(|| null("net"))?;
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        if scores.is_null() || refinements.is_null() {
            return Err(null("output buffer"));
        }
        let sel = out_ref(selected, "selected")?;
        let v = if velocity.is_null() {
            [0.0; 3]
        } else {
            let s = std::slice::from_raw_parts(velocity, 3);
            [s[0], s[1], s[2]]
        };
        let config = EpisodeConfig {
            v_max,
            ..EpisodeConfig::default()
        };
        let lattice = lift(config.effective_lattice())?;
        let pose = Pose::new([x, y, z], yaw);
        let state: BodyState = body_state(&pose, &v, &[0.0; 3], &w.0.goal);
        let depth = render_depth(&w.0, &pose, &config.camera);
        let input = lift(NetInput::prepare(&depth, &state, v_max))?;
        let out = lift(n.0.forward(&lattice, &input, ppe))?;
        std::slice::from_raw_parts_mut(scores, NUM_ANCHORS).copy_from_slice(&out.scores);
        let u = std::slice::from_raw_parts_mut(refinements, NUM_ANCHORS * REFINE_DIM);
        for (i, r) in out.u_norm.iter().enumerate() {
            u[i * REFINE_DIM..(i + 1) * REFINE_DIM].copy_from_slice(&r.0);
        }
        *sel = select_anchor(&out.scores);
        Ok(())
    })
}

/// Flies one episode in `world` with default settings at speed `v_max`.
/// `net` may be null unless `mode` is learned.
///
/// # Safety
/// Handles must be live or null as described; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn saga_fly(
    world: *const SagaWorld,
    net: *const SagaNet,
    mode: SagaMode,
    v_max: f64,
    seed: u64,
    out: *mut SagaFlightSummary,
) -> SagaStatus {
    guard(|| {
        let w = world.as_ref().ok_or_else(|| null("world"))?;
        let out = out_ref(out, "out")?;
        let config = EpisodeConfig {
            v_max,
            seed,
            selection_mode: match mode {
                SagaMode::Learned => SelectionMode::Learned,
                SagaMode::Oracle => SelectionMode::Oracle,
                SagaMode::Random => SelectionMode::Random,
            },
            ..EpisodeConfig::default()
        };
        let r = lift(run_episode(&w.0, net.as_ref().map(|n| &n.0), &config))?;
        *out = SagaFlightSummary {
            success: r.success,
            failure_cause: match r.failure_cause {
                FailureCause::None => 0,
                FailureCause::Collision => 1,
                FailureCause::Timeout => 2,
                FailureCause::Fault => 3,
            },
            time_s: r.metrics.time_consumption,
            length_m: r.metrics.traj_length,
            avg_safety_m: r.metrics.avg_safety,
            min_safety_m: r.metrics.min_safety,
            smoothness: r.metrics.smoothness,
            replans: r.replans as u64,
        };
        Ok(())
    })
}

/// Single-axis quintic through the boundary conditions: writes the six
/// power-basis coefficients `c0..c5` of `q(t) = Σ c_m t^m` on `[0, duration]`.
///
/// # Safety
/// `coeffs` must hold 6 doubles.
#[no_mangle]
pub unsafe extern "C" fn saga_quintic_coeffs(
    p0: f64,
    v0: f64,
    a0: f64,
    p1: f64,
    v1: f64,
    a1: f64,
    duration: f64,
    coeffs: *mut f64,
) -> SagaStatus {
    guard(|| {
        if coeffs.is_null() {
            return Err(null("coeffs"));
        }
        let e = |x: f64| [x, 0.0, 0.0];
        let q = lift(solve_quintic(&e(p0), &e(v0), &e(a0), &e(p1), &e(v1), &e(a1), duration))?;
        std::slice::from_raw_parts_mut(coeffs, 6).copy_from_slice(&q.coeffs[0]);
        Ok(())
    })
}
