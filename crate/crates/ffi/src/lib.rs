//! C ABI over `dklab`.
//!
//! Every fallible call returns a [`DkStatus`]; on failure the message is available from
//! [`dk_last_error_message`] on the same thread. Handles are opaque and released with the
//! matching `*_free` function. Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use dklab::martingale::{q_form_direct, q_form_spectral, QFormSpec};
use dklab::measure::EmpiricalMeasure;
use dklab::particles::{simulate_replica, ModelParams, NoiseMode, Trajectory};
use dklab::runner::{self, ExperimentConfig};
use dklab::testfn::{TestFn, TestFunction};
use dklab::torus::{fourier_basis, kernel_qbar, spectral_constants, ModeIndex};
use dklab::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DkStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Singular = 3,
    Collision = 4,
    Misuse = 5,
    InsufficientData = 6,
    Config = 7,
    Parse = 8,
    Io = 9,
    Json = 10,
    InvalidUtf8 = 11,
    Panic = 12,
}

#[repr(C)]
pub enum DkNoiseMode {
    FrozenFrame = 0,
    CommonNoise = 1,
    PureFrozenFlow = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DkSpectralConstants {
    pub beta: f64,
    pub k1_n: f64,
    pub k2_n: f64,
    pub k2_inf: f64,
    pub mode_cut: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DkCollision {
    pub t: f64,
    pub i: usize,
    pub gap: f64,
}

/// Simulation parameters.
pub struct DkParams(ModelParams);
/// One simulated replica.
pub struct DkTrajectory(Trajectory);
/// Empirical measure on the torus.
pub struct DkMeasure(EmpiricalMeasure);
/// Test function parsed from its short name (`e1`, `e-2`, `de1`, `bump`, `const(2)`).
pub struct DkTestFn(Box<dyn TestFunction>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DkStatus {
    match e {
        Error::Domain(_) => DkStatus::Domain,
        Error::Singular { .. } => DkStatus::Singular,
        Error::Collision(_) => DkStatus::Collision,
        Error::Misuse(_) => DkStatus::Misuse,
        Error::InsufficientData(_) => DkStatus::InsufficientData,
        Error::Config { .. } => DkStatus::Config,
        Error::Parse { .. } => DkStatus::Parse,
        Error::Io(_) => DkStatus::Io,
        Error::Json(_) => DkStatus::Json,
    }
}

/// Runs `f`, mapping errors and panics to a status and recording the message.
fn guard(f: impl FnOnce() -> Result<(), (DkStatus, String)>) -> DkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DkStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            DkStatus::Panic
        }
    }
}

fn lib<T>(r: dklab::Result<T>) -> Result<T, (DkStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null() -> (DkStatus, String) {
    (DkStatus::NullPointer, "null pointer argument".into())
}

unsafe fn borrow<'a, T>(p: *const T) -> Result<&'a T, (DkStatus, String)> {
    p.as_ref().ok_or_else(null)
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, (DkStatus, String)> {
    p.as_mut().ok_or_else(null)
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, (DkStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|_| (DkStatus::InvalidUtf8, "string is not valid UTF-8".into()))
}

/// Message of the last failed call on this thread; empty if none. Valid until the next failure.
#[no_mangle]
pub extern "C" fn dk_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn dk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `e_k(x)`.
#[no_mangle]
pub extern "C" fn dk_fourier_basis(k: i32, x: f64) -> f64 {
    fourier_basis(ModeIndex(k), x)
}

/// Truncated kernel `Q̄_K(u)` and the bound on the omitted tail.
///
/// # Safety
/// `value` and `tail_bound` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_kernel_qbar(beta: f64, u: f64, k_trunc: usize, value: *mut f64, tail_bound: *mut f64) -> DkStatus {
    guard(|| {
        let (v, t) = (out(value)?, out(tail_bound)?);
        let b = lib(kernel_qbar(beta, u, k_trunc))?;
        *v = b.value;
        *t = b.tail_bound;
        Ok(())
    })
}

/// # Safety
/// `result` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_spectral_constants(beta: f64, n: usize, result: *mut DkSpectralConstants) -> DkStatus {
    guard(|| {
        let r = out(result)?;
        let c = lib(spectral_constants(beta, n))?;
        *r = DkSpectralConstants { beta: c.beta, k1_n: c.k1_n, k2_n: c.k2_n, k2_inf: c.k2_inf, mode_cut: c.mode_cut };
        Ok(())
    })
}

/// Parameters with defaults for everything not listed (uniform grid start, seed 0, save every step).
///
/// # Safety
/// `result` must be valid for writes; the handle is released with [`dk_params_free`].
#[no_mangle]
pub unsafe extern "C" fn dk_params_new(
    n: usize,
    beta: f64,
    alpha: f64,
    t_end: f64,
    dt: f64,
    mode: DkNoiseMode,
    result: *mut *mut DkParams,
) -> DkStatus {
    guard(|| {
        let r = out(result)?;
        let mut p = ModelParams::new(n, beta, alpha, t_end, dt);
        p.mode = match mode {
            DkNoiseMode::FrozenFrame => NoiseMode::FrozenFrame,
            DkNoiseMode::CommonNoise => NoiseMode::CommonNoise,
            DkNoiseMode::PureFrozenFlow => NoiseMode::PureFrozenFlow,
        };
        lib(p.validate())?;
        *r = Box::into_raw(Box::new(DkParams(p)));
        Ok(())
    })
}

/// # Safety
/// `params` must come from [`dk_params_new`].
#[no_mangle]
pub unsafe extern "C" fn dk_params_set_seed(params: *mut DkParams, seed: u64) -> DkStatus {
    guard(|| {
        out(params)?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `params` must come from [`dk_params_new`].
#[no_mangle]
pub unsafe extern "C" fn dk_params_set_save_stride(params: *mut DkParams, stride: usize) -> DkStatus {
    guard(|| {
        let p = out(params)?;
        let mut q = p.0.clone();
        q.save_stride = stride;
        lib(q.validate())?;
        p.0 = q;
        Ok(())
    })
}

/// # Safety
/// `params` must come from [`dk_params_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn dk_params_free(params: *mut DkParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Simulates replica `replica_id`. A collision stops the path early and is reported through
/// [`dk_trajectory_collision`], not as an error.
///
/// # Safety
/// `params` must be a live handle and `result` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_simulate_replica(params: *const DkParams, replica_id: u64, result: *mut *mut DkTrajectory) -> DkStatus {
    guard(|| {
        let (p, r) = (borrow(params)?, out(result)?);
        let t = lib(simulate_replica(&p.0, replica_id))?;
        *r = Box::into_raw(Box::new(DkTrajectory(t)));
        Ok(())
    })
}

/// Number of saved states; 0 for a null handle.
///
/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dk_trajectory_len(traj: *const DkTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.times.len())
}

/// Particle count of the saved states; 0 for a null handle.
///
/// # Safety
/// `traj` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dk_trajectory_particles(traj: *const DkTrajectory) -> usize {
    traj.as_ref().and_then(|t| t.0.states.first()).map_or(0, Vec::len)
}

/// Time of save `idx` and its positions copied into `x[0..len]`; `len` must equal the particle count.
///
/// # Safety
/// `traj` must be a live handle, `t` valid for writes and `x` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dk_trajectory_state(traj: *const DkTrajectory, idx: usize, t: *mut f64, x: *mut f64, len: usize) -> DkStatus {
    guard(|| {
        let (tr, t) = (borrow(traj)?, out(t)?);
        if x.is_null() {
            return Err(null());
        }
        let state = tr.0.states.get(idx).ok_or((DkStatus::Domain, format!("save index {idx} out of range")))?;
        if state.len() != len {
            return Err((DkStatus::Domain, format!("buffer holds {len} values, state has {}", state.len())));
        }
        std::slice::from_raw_parts_mut(x, len).copy_from_slice(state);
        *t = tr.0.times[idx];
        Ok(())
    })
}

/// Returns 1 and fills `event` if the replica stopped on a collision, 0 otherwise.
///
/// # Safety
/// `traj` must be a live handle or null; `event` valid for writes or null.
#[no_mangle]
pub unsafe extern "C" fn dk_trajectory_collision(traj: *const DkTrajectory, event: *mut DkCollision) -> i32 {
    match traj.as_ref().and_then(|t| t.0.collision.as_ref()) {
        Some(c) => {
            if let Some(e) = event.as_mut() {
                *e = DkCollision { t: c.t, i: c.i, gap: c.gap };
            }
            1
        }
        None => 0,
    }
}

/// # Safety
/// `traj` must come from [`dk_simulate_replica`] or be null.
#[no_mangle]
pub unsafe extern "C" fn dk_trajectory_free(traj: *mut DkTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Uniform-weight empirical measure of `x[0..len]`, positions taken modulo 1.
///
/// # Safety
/// `x` must be valid for `len` reads and `result` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_measure_new(x: *const f64, len: usize, result: *mut *mut DkMeasure) -> DkStatus {
    guard(|| {
        let r = out(result)?;
        if x.is_null() {
            return Err(null());
        }
        let m = lib(EmpiricalMeasure::from_positions(std::slice::from_raw_parts(x, len)))?;
        *r = Box::into_raw(Box::new(DkMeasure(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle and `result` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_measure_cdf(m: *const DkMeasure, x: f64, result: *mut f64) -> DkStatus {
    guard(|| {
        let (m, r) = (borrow(m)?, out(result)?);
        *r = lib(m.0.cdf(x))?;
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle and `result` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_measure_quantile(m: *const DkMeasure, u: f64, result: *mut f64) -> DkStatus {
    guard(|| {
        let (m, r) = (borrow(m)?, out(result)?);
        *r = lib(m.0.quantile(u))?;
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle and `result` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_measure_max_window_mass(m: *const DkMeasure, width: f64, result: *mut f64) -> DkStatus {
    guard(|| {
        let (m, r) = (borrow(m)?, out(result)?);
        *r = lib(m.0.max_window_mass(width))?;
        Ok(())
    })
}

/// Circular Wasserstein-1 distance of two measures with equal atom counts.
///
/// # Safety
/// `a` and `b` must be live handles and `result` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_measure_wasserstein1(a: *const DkMeasure, b: *const DkMeasure, result: *mut f64) -> DkStatus {
    guard(|| {
        let (a, b, r) = (borrow(a)?, borrow(b)?, out(result)?);
        *r = lib(a.0.wasserstein1(&b.0))?;
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`dk_measure_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn dk_measure_free(m: *mut DkMeasure) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `name` must be a NUL-terminated string and `result` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_testfn_parse(name: *const c_char, result: *mut *mut DkTestFn) -> DkStatus {
    guard(|| {
        let (s, r) = (text(name)?, out(result)?);
        let f: TestFn = lib(s.parse())?;
        *r = Box::into_raw(Box::new(DkTestFn(f.build())));
        Ok(())
    })
}

/// Value and first two derivatives at `x`.
///
/// # Safety
/// `f` must be a live handle; each output must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_testfn_eval(f: *const DkTestFn, x: f64, value: *mut f64, d1: *mut f64, d2: *mut f64) -> DkStatus {
    guard(|| {
        let f = borrow(f)?;
        let (v, a, b) = (out(value)?, out(d1)?, out(d2)?);
        *v = f.0.value(x);
        *a = f.0.d1(x);
        *b = f.0.d2(x);
        Ok(())
    })
}

/// # Safety
/// `f` must come from [`dk_testfn_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn dk_testfn_free(f: *mut DkTestFn) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

unsafe fn qform(
    m: *const DkMeasure,
    f: *const DkTestFn,
    beta: f64,
    k_trunc: usize,
    value: *mut f64,
    tail_bound: *mut f64,
    spectral: bool,
) -> DkStatus {
    guard(|| {
        let (m, f) = (borrow(m)?, borrow(f)?);
        let (v, t) = (out(value)?, out(tail_bound)?);
        let spec = QFormSpec { beta, k_trunc, diffusion_coeff: 0.0 };
        let b = if spectral { q_form_spectral(&m.0, f.0.as_ref(), &spec) } else { q_form_direct(&m.0, f.0.as_ref(), &spec) };
        let b = lib(b)?;
        *v = b.value;
        *t = b.tail_bound;
        Ok(())
    })
}

/// Q-form of `f` at `m` from the kernel double sum truncated at `k_trunc`.
///
/// # Safety
/// `m` and `f` must be live handles; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_qform_direct(
    m: *const DkMeasure,
    f: *const DkTestFn,
    beta: f64,
    k_trunc: usize,
    value: *mut f64,
    tail_bound: *mut f64,
) -> DkStatus {
    qform(m, f, beta, k_trunc, value, tail_bound, false)
}

/// Q-form of `f` at `m` from pushforward Fourier coefficients truncated at `k_trunc`.
///
/// # Safety
/// `m` and `f` must be live handles; outputs valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_qform_spectral(
    m: *const DkMeasure,
    f: *const DkTestFn,
    beta: f64,
    k_trunc: usize,
    value: *mut f64,
    tail_bound: *mut f64,
) -> DkStatus {
    qform(m, f, beta, k_trunc, value, tail_bound, true)
}

/// Runs a TOML experiment config. `out_dir` overrides the configured output directory when
/// non-null. `all_pass` receives 1 when every configured check passed and some replica survived.
///
/// # Safety
/// `config_path` must be a NUL-terminated string, `out_dir` one or null, `all_pass` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dk_run_config(config_path: *const c_char, out_dir: *const c_char, all_pass: *mut i32) -> DkStatus {
    guard(|| {
        let path = text(config_path)?;
        let flag = out(all_pass)?;
        let mut cfg = lib(ExperimentConfig::load(std::path::Path::new(path)))?;
        if !out_dir.is_null() {
            cfg.run.output_dir = PathBuf::from(text(out_dir)?);
        }
        let o = lib(runner::run(&cfg))?;
        *flag = i32::from(o.all_pass());
        Ok(())
    })
}
