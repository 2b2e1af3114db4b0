//! C ABI for the repwatch monitoring engine.
//!
//! Every fallible call returns an [`RwStatus`]; on failure a message is kept
//! per thread and can be read with [`rw_last_error_message`]. Monitors are
//! opaque handles released with [`rw_monitor_free`]. Strings returned by the
//! library are released with [`rw_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use repwatch::betting::{bet_threshold, lambda_star, BetState};
use repwatch::harm::{ir_lower_bound, rr_lower_bound, ReportingAssumptions};
use repwatch::ztest::{zt_threshold, Variant, ZTestParams};
use repwatch::{Assignment, Error, GroupSet, Monitor, MonitorConfig};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Bad configuration or parameter.
    Config = 3,
    /// Input does not fit the schema or cannot be parsed.
    Data = 4,
    /// The monitor refused the operation, e.g. after stopping.
    Runtime = 5,
    Panic = 6,
}

/// Z-test boundary flavour.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RwVariant {
    FiniteSample = 0,
    Asymptotic = 1,
}

/// Betting-test state, mirrored by value.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwBetState {
    pub t: u64,
    pub log_wealth: f64,
    pub lambda: f64,
    pub z_sq_sum: f64,
}

/// Opaque monitor handle.
pub struct RwMonitor {
    inner: Monitor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RwStatus {
    match e.exit_code() {
        2 => RwStatus::Config,
        3 => RwStatus::Data,
        _ => RwStatus::Runtime,
    }
}

fn fail(e: Error) -> RwStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn guard(f: impl FnOnce() -> RwStatus) -> RwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic".into());
            RwStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, RwStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(RwStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        RwStatus::InvalidUtf8
    })
}

fn null_out(what: &str) -> RwStatus {
    set_error(format!("{what} is null"));
    RwStatus::NullPointer
}

fn into_c_string(s: String, out: *mut *mut c_char) -> RwStatus {
    match CString::new(s) {
        Ok(c) => {
            // SAFETY: callers check `out` before building the string.
            unsafe { *out = c.into_raw() };
            RwStatus::Ok
        }
        Err(_) => fail(Error::Snapshot("output contains a NUL byte".into())),
    }
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a monitor from a JSON group set (`schema`, `groups`,
/// `base_preponderances`) and a JSON monitor config.
///
/// # Safety
/// `group_set_json` and `config_json` must be NUL-terminated strings and
/// `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rw_monitor_new(
    group_set_json: *const c_char,
    config_json: *const c_char,
    out: *mut *mut RwMonitor,
) -> RwStatus {
    guard(|| {
        if out.is_null() {
            return null_out("out");
        }
        let gs = match read_str(group_set_json, "group_set_json") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let cfg = match read_str(config_json, "config_json") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let gs: GroupSet = match serde_json::from_str(gs) {
            Ok(g) => g,
            Err(e) => return fail(Error::Config(format!("group set: {e}"))),
        };
        let cfg: MonitorConfig = match serde_json::from_str(cfg) {
            Ok(c) => c,
            Err(e) => return fail(Error::Config(format!("monitor config: {e}"))),
        };
        match Monitor::new(gs, cfg) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(RwMonitor { inner: m }));
                RwStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Rebuilds a monitor from [`rw_monitor_snapshot`] output.
///
/// # Safety
/// `snapshot` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rw_monitor_restore(
    snapshot: *const c_char,
    out: *mut *mut RwMonitor,
) -> RwStatus {
    guard(|| {
        if out.is_null() {
            return null_out("out");
        }
        let s = match read_str(snapshot, "snapshot") {
            Ok(s) => s,
            Err(st) => return st,
        };
        match Monitor::restore(s.as_bytes()) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(RwMonitor { inner: m }));
                RwStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a monitor. NULL is ignored.
///
/// # Safety
/// `m` must come from [`rw_monitor_new`] or [`rw_monitor_restore`] and not
/// have been freed.
#[no_mangle]
pub unsafe extern "C" fn rw_monitor_free(m: *mut RwMonitor) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Feeds one report given as category indices in schema order. The number
/// of flags it produced is written to `n_new_events` when non-NULL.
///
/// # Safety
/// `m` must be a live handle and `categories` must point to `len` readable
/// values.
#[no_mangle]
pub unsafe extern "C" fn rw_monitor_ingest(
    m: *mut RwMonitor,
    categories: *const u32,
    len: usize,
    n_new_events: *mut usize,
) -> RwStatus {
    guard(|| {
        let Some(m) = m.as_mut() else {
            return null_out("monitor");
        };
        if categories.is_null() && len > 0 {
            return null_out("categories");
        }
        let x = if len == 0 {
            Assignment(Vec::new())
        } else {
            Assignment(std::slice::from_raw_parts(categories, len).to_vec())
        };
        match m.inner.ingest(&x) {
            Ok(ev) => {
                if !n_new_events.is_null() {
                    *n_new_events = ev.len();
                }
                RwStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of reports ingested so far.
///
/// # Safety
/// `m` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rw_monitor_t(m: *const RwMonitor, out: *mut u64) -> RwStatus {
    let Some(m) = m.as_ref() else {
        return null_out("monitor");
    };
    if out.is_null() {
        return null_out("out");
    }
    *out = m.inner.t();
    RwStatus::Ok
}

/// Whether a stop-at-first monitor has stopped.
///
/// # Safety
/// `m` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rw_monitor_is_stopped(m: *const RwMonitor, out: *mut bool) -> RwStatus {
    let Some(m) = m.as_ref() else {
        return null_out("monitor");
    };
    if out.is_null() {
        return null_out("out");
    }
    *out = m.inner.is_stopped();
    RwStatus::Ok
}

/// All flags so far as a JSON array. Free with [`rw_string_free`].
///
/// # Safety
/// `m` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rw_monitor_events_json(
    m: *const RwMonitor,
    out: *mut *mut c_char,
) -> RwStatus {
    guard(|| {
        let Some(m) = m.as_ref() else {
            return null_out("monitor");
        };
        if out.is_null() {
            return null_out("out");
        }
        match serde_json::to_string(m.inner.events()) {
            Ok(s) => into_c_string(s, out),
            Err(e) => fail(Error::Snapshot(e.to_string())),
        }
    })
}

/// Serialized monitor state. Free with [`rw_string_free`].
///
/// # Safety
/// `m` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rw_monitor_snapshot(
    m: *const RwMonitor,
    out: *mut *mut c_char,
) -> RwStatus {
    guard(|| {
        let Some(m) = m.as_ref() else {
            return null_out("monitor");
        };
        if out.is_null() {
            return null_out("out");
        }
        match String::from_utf8(m.inner.snapshot()) {
            Ok(s) => into_c_string(s, out),
            Err(e) => fail(Error::Snapshot(e.to_string())),
        }
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Z-test boundary at report `t` with the default boundary constant.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rw_zt_threshold(
    t: u64,
    beta_mu0: f64,
    alpha_eff: f64,
    variant: RwVariant,
    out: *mut f64,
) -> RwStatus {
    if out.is_null() {
        return null_out("out");
    }
    let variant = match variant {
        RwVariant::FiniteSample => Variant::FiniteSample,
        RwVariant::Asymptotic => Variant::Asymptotic,
    };
    match ZTestParams::new(beta_mu0, alpha_eff, variant, 0).and_then(|p| zt_threshold(t, &p)) {
        Ok(v) => {
            *out = v;
            RwStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Log-wealth threshold `ln(n_groups/α)`.
#[no_mangle]
pub extern "C" fn rw_bet_threshold(n_groups: usize, alpha: f64) -> f64 {
    bet_threshold(n_groups, alpha)
}

/// Growth-optimal constant bet for report frequency `mu`.
#[no_mangle]
pub extern "C" fn rw_lambda_star(mu: f64, beta_mu0: f64) -> f64 {
    lambda_star(mu, beta_mu0)
}

/// Zero-initialized betting state.
#[no_mangle]
pub extern "C" fn rw_bet_state_new() -> RwBetState {
    to_c(BetState::new())
}

fn to_c(s: BetState) -> RwBetState {
    RwBetState {
        t: s.t,
        log_wealth: s.log_wealth,
        lambda: s.lambda,
        z_sq_sum: s.z_sq_sum,
    }
}

/// Advances `state` by one report.
///
/// # Safety
/// `state` must be a valid, writable pointer.
#[no_mangle]
pub unsafe extern "C" fn rw_bet_step(
    state: *mut RwBetState,
    in_group: bool,
    beta_mu0: f64,
) -> RwStatus {
    let Some(s) = state.as_mut() else {
        return null_out("state");
    };
    if !(beta_mu0 > 0.0 && beta_mu0 < 1.0) {
        return fail(Error::InvalidParameter(format!(
            "beta*mu0 must lie in (0, 1), got {beta_mu0}"
        )));
    }
    let next = BetState {
        t: s.t,
        log_wealth: s.log_wealth,
        lambda: s.lambda,
        z_sq_sum: s.z_sq_sum,
    }
    .step(in_group, beta_mu0);
    *s = to_c(next);
    RwStatus::Ok
}

/// Relative-risk lower bound `beta / b`.
#[no_mangle]
pub extern "C" fn rw_rr_lower_bound(beta: f64, b: f64) -> f64 {
    rr_lower_bound(beta, b)
}

/// Clamped incidence-rate lower bound.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rw_ir_lower_bound(
    beta: f64,
    gamma_tr: f64,
    gamma_fr: f64,
    out: *mut f64,
) -> RwStatus {
    if out.is_null() {
        return null_out("out");
    }
    match ReportingAssumptions::new(1.0, gamma_tr, gamma_fr).and_then(|a| ir_lower_bound(beta, &a))
    {
        Ok(v) => {
            *out = v;
            RwStatus::Ok
        }
        Err(e) => fail(e),
    }
}
