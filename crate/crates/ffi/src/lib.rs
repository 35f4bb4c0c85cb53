//! C interface to the analytic loop model: load a scenario, move the
//! gain, and evaluate spectra, occupancies, budgets and stability.
//!
//! Every call returns a [`ColdloopStatus`]; on failure the message is
//! available from [`coldloop_last_error`] on the same thread. Handles are
//! opaque and owned by the caller until passed to [`coldloop_loop_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use coldloop::config::{reference, Scenario};
use coldloop::control::{check_closed_loop_stability, optimize_gain};
use coldloop::heterodyne::occupancy_from_powers;
use coldloop::model::{rate_budget, LoopConfig, LoopParams};
use coldloop::units::hz_to_rad;
use coldloop::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColdloopStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Unstable = 4,
    Numeric = 5,
    Io = 6,
    Panic = 7,
}

/// Opaque loop handle.
pub struct ColdloopLoop {
    name: String,
    config: LoopConfig,
}

/// Rates and occupations of a scenario (rates in rad/s).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ColdloopBudget {
    pub n_th: f64,
    pub n_ba: f64,
    pub n_bath: f64,
    pub n_c: f64,
    pub c0: f64,
    pub gamma_meas: f64,
    pub gamma_dec: f64,
    pub ratio: f64,
    pub shot_level: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ColdloopStatus {
    match e {
        Error::Config(_) | Error::Parse { .. } => ColdloopStatus::Config,
        Error::Unstable(_) | Error::Diverged { .. } => ColdloopStatus::Unstable,
        Error::Io(_) => ColdloopStatus::Io,
        Error::InvalidParameter { .. } | Error::ZeroEfficiency | Error::ZeroMeasurementRate => {
            ColdloopStatus::InvalidArgument
        }
        _ => ColdloopStatus::Numeric,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (ColdloopStatus, String)>) -> ColdloopStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ColdloopStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ColdloopStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (ColdloopStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ColdloopStatus, String) {
    (ColdloopStatus::NullPointer, format!("`{what}` is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ColdloopStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (ColdloopStatus::InvalidArgument, format!("`{what}`: {e}")))
}

fn handle_from(sc: Scenario) -> *mut ColdloopLoop {
    Box::into_raw(Box::new(ColdloopLoop { name: sc.file.name, config: sc.loop_config }))
}

/// Message of the last failed call on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn coldloop_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn coldloop_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a scenario TOML document into a new handle.
///
/// # Safety
/// `toml` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coldloop_loop_from_toml(toml: *const c_char, out: *mut *mut ColdloopLoop) -> ColdloopStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(toml, "toml")?;
        let sc = Scenario::from_toml(text).map_err(lib_err)?;
        *out = handle_from(sc);
        Ok(())
    })
}

/// Loads one of the shipped reference scenarios by name.
///
/// # Safety
/// `name` must be a valid NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coldloop_loop_from_reference(name: *const c_char, out: *mut *mut ColdloopLoop) -> ColdloopStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let sc = reference(read_str(name, "name")?).map_err(lib_err)?;
        *out = handle_from(sc);
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `h` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coldloop_loop_free(h: *mut ColdloopLoop) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `h` must be null or a live handle.
unsafe fn get<'a>(h: *const ColdloopLoop) -> Result<&'a ColdloopLoop, (ColdloopStatus, String)> {
    h.as_ref().ok_or_else(|| null("loop"))
}

/// Copies the scenario name into `buf` (truncated, always terminated).
/// Writes the full length, without terminator, to `len` when non-null.
///
/// # Safety
/// `h` must be a live handle; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn coldloop_loop_name(h: *const ColdloopLoop, buf: *mut c_char, cap: usize, len: *mut usize) -> ColdloopStatus {
    guard(|| {
        let l = get(h)?;
        let bytes = l.name.as_bytes();
        if !len.is_null() {
            *len = bytes.len();
        }
        if cap > 0 {
            if buf.is_null() {
                return Err(null("buf"));
            }
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        Ok(())
    })
}

/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coldloop_loop_gain(h: *const ColdloopLoop, out: *mut f64) -> ColdloopStatus {
    guard(|| {
        let l = get(h)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = l.config.filter.gain;
        Ok(())
    })
}

/// Sets the loop gain (1/s).
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn coldloop_loop_set_gain(h: *mut ColdloopLoop, gain: f64) -> ColdloopStatus {
    guard(|| {
        let l = h.as_mut().ok_or_else(|| null("loop"))?;
        if !(gain.is_finite() && gain >= 0.0) {
            return Err((ColdloopStatus::InvalidArgument, format!("gain must be finite and >= 0 (got {gain})")));
        }
        l.config = l.config.with_gain(gain);
        Ok(())
    })
}

/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coldloop_loop_budget(h: *const ColdloopLoop, out: *mut ColdloopBudget) -> ColdloopStatus {
    guard(|| {
        let l = get(h)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let b = rate_budget(&l.config).map_err(lib_err)?;
        *out = ColdloopBudget {
            n_th: b.n_th,
            n_ba: l.config.noise.n_ba,
            n_bath: l.config.noise.n_bath,
            n_c: b.n_c,
            c0: b.c0,
            gamma_meas: b.gamma_meas,
            gamma_dec: b.gamma_dec,
            ratio: b.ratio,
            shot_level: l.config.channel.shot_level,
        };
        Ok(())
    })
}

/// Writes 1 to `out` when the closed loop is stable, else 0.
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coldloop_loop_is_stable(h: *const ColdloopLoop, out: *mut i32) -> ColdloopStatus {
    guard(|| {
        let l = get(h)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = i32::from(check_closed_loop_stability(&l.config).stable);
        Ok(())
    })
}

/// Mean occupancy of the target mode at the current gain. Fails with
/// `Unstable` when the loop is unstable.
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coldloop_loop_phonon_number(h: *const ColdloopLoop, out: *mut f64) -> ColdloopStatus {
    guard(|| {
        let l = get(h)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let stab = check_closed_loop_stability(&l.config);
        if !stab.stable {
            return Err((ColdloopStatus::Unstable, stab.summary()));
        }
        *out = LoopParams::from_config(&l.config).phonon_number().map_err(lib_err)?.n_bar;
        Ok(())
    })
}

enum Psd {
    Measured,
    Displacement,
}

unsafe fn fill_psd(h: *const ColdloopLoop, freqs_hz: *const f64, n: usize, out: *mut f64, kind: Psd) -> ColdloopStatus {
    guard(|| {
        let l = get(h)?;
        if n == 0 {
            return Ok(());
        }
        if freqs_hz.is_null() {
            return Err(null("freqs_hz"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let f = std::slice::from_raw_parts(freqs_hz, n);
        let o = std::slice::from_raw_parts_mut(out, n);
        let p = LoopParams::from_config(&l.config);
        let shot = l.config.channel.shot_level;
        for (dst, fr) in o.iter_mut().zip(f) {
            let w = hz_to_rad(*fr);
            *dst = match kind {
                Psd::Measured => p.measured_psd(w) / shot,
                Psd::Displacement => p.displacement_psd(w),
            };
        }
        Ok(())
    })
}

/// In-loop measurement PSD in shot units at `n` frequencies (Hz).
///
/// # Safety
/// `h` must be a live handle; `freqs_hz` and `out` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn coldloop_loop_measured_psd(h: *const ColdloopLoop, freqs_hz: *const f64, n: usize, out: *mut f64) -> ColdloopStatus {
    fill_psd(h, freqs_hz, n, out, Psd::Measured)
}

/// Displacement PSD of the target mode, zero-point units per Hz.
///
/// # Safety
/// `h` must be a live handle; `freqs_hz` and `out` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn coldloop_loop_displacement_psd(
    h: *const ColdloopLoop,
    freqs_hz: *const f64,
    n: usize,
    out: *mut f64,
) -> ColdloopStatus {
    fill_psd(h, freqs_hz, n, out, Psd::Displacement)
}

/// Gain minimizing the occupancy within `[gain_min, gain_max]`.
///
/// # Safety
/// `h` must be a live handle; `gain_opt` and `n_min` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coldloop_loop_optimize_gain(
    h: *const ColdloopLoop,
    gain_min: f64,
    gain_max: f64,
    gain_opt: *mut f64,
    n_min: *mut f64,
) -> ColdloopStatus {
    guard(|| {
        let l = get(h)?;
        if gain_opt.is_null() || n_min.is_null() {
            return Err(null("output"));
        }
        let o = optimize_gain(&l.config, [gain_min, gain_max], 41).map_err(lib_err)?;
        *gain_opt = o.g_opt;
        *n_min = o.n_min;
        Ok(())
    })
}

/// Occupancy from Stokes and anti-Stokes sideband powers.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coldloop_occupancy_from_powers(stokes: f64, anti_stokes: f64, out: *mut f64) -> ColdloopStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = occupancy_from_powers(stokes, anti_stokes).map_err(lib_err)?;
        Ok(())
    })
}
