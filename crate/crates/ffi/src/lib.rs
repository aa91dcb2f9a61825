//! C ABI for the espsim SoC simulator.
//!
//! A simulation lives behind an opaque [`EspSim`] handle. Every fallible
//! call returns one of the `ESPSIM_*` status codes; on failure the message
//! is available from [`espsim_last_error`] on the same thread.
//!
//! Typical use from C:
//!
//! ```c
//! EspSim *sim = NULL;
//! if (espsim_new(NULL, 42, &sim) != ESPSIM_OK) { puts(espsim_last_error()); }
//! espsim_load_trace(sim, "core 0: ST 0x40 7\ncore 1: LD 0x40\n");
//! uint64_t cycles = 0;
//! int rc = espsim_run(sim, 1000000, &cycles);
//! char *json = espsim_stats_json(sim);
//! espsim_string_free(json);
//! espsim_free(sim);
//! ```

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use espsim::soc::{Soc, SocConfig, Trace};
use espsim::Error;

/// Success.
pub const ESPSIM_OK: i32 = 0;
/// The run finished but a coherence monitor reported a violation.
pub const ESPSIM_VIOLATION: i32 = 1;
/// The run hit its cycle limit or the watchdog before every core finished.
pub const ESPSIM_INCOMPLETE: i32 = 2;
/// A required pointer argument was null.
pub const ESPSIM_ERR_NULL: i32 = -1;
/// A string argument was not valid UTF-8.
pub const ESPSIM_ERR_UTF8: i32 = -2;
/// Configuration or trace text failed to parse or validate.
pub const ESPSIM_ERR_PARSE: i32 = -3;
/// A file could not be read.
pub const ESPSIM_ERR_IO: i32 = -4;
/// The simulator detected an impossible protocol event.
pub const ESPSIM_ERR_PROTOCOL: i32 = -5;
/// The call is not valid in the handle's current state.
pub const ESPSIM_ERR_STATE: i32 = -6;
/// An address lies outside simulated memory.
pub const ESPSIM_ERR_ADDRESS: i32 = -7;
/// The simulator panicked; the handle should be freed.
pub const ESPSIM_ERR_PANIC: i32 = -8;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn code_of(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse { .. } | Error::UnsupportedAtop(_) | Error::Usage(_) => ESPSIM_ERR_PARSE,
        Error::AddressOutOfRange { .. } => ESPSIM_ERR_ADDRESS,
        Error::Protocol(_) | Error::BoundExceeded(_) => ESPSIM_ERR_PROTOCOL,
        Error::Io { .. } => ESPSIM_ERR_IO,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<i32, (i32, String)>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(code)) => code,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "simulator panicked".into());
            set_error(msg);
            ESPSIM_ERR_PANIC
        }
    }
}

fn lift(err: Error) -> (i32, String) {
    (code_of(&err), err.to_string())
}

/// # Safety
/// `s` must be null or point to a NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, (i32, String)> {
    if s.is_null() {
        return Err((ESPSIM_ERR_NULL, format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| (ESPSIM_ERR_UTF8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `sim` must be null or a live handle from [`espsim_new`].
unsafe fn sim_arg<'a>(sim: *mut EspSim) -> Result<&'a mut EspSim, (i32, String)> {
    sim.as_mut().ok_or_else(|| (ESPSIM_ERR_NULL, "simulator handle is null".to_string()))
}

/// Opaque simulation handle.
pub struct EspSim {
    cfg: SocConfig,
    seed: u64,
    soc: Option<Soc>,
    preload: Vec<(u64, u64)>,
}

impl EspSim {
    fn soc(&mut self) -> Result<&mut Soc, (i32, String)> {
        self.soc.as_mut().ok_or_else(|| (ESPSIM_ERR_STATE, "no trace loaded".to_string()))
    }
}

/// Message for the most recent failed call on this thread, or null. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn espsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates a simulator from TOML configuration text. A null `config_toml`
/// selects the built-in four-core layout. On success `*out` receives a
/// handle that must be released with [`espsim_free`].
///
/// # Safety
/// `config_toml` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn espsim_new(config_toml: *const c_char, seed: u64, out: *mut *mut EspSim) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err((ESPSIM_ERR_NULL, "out is null".into()));
        }
        let cfg = if config_toml.is_null() {
            SocConfig::quad()
        } else {
            SocConfig::from_toml_str(str_arg(config_toml, "config")?, "<config>").map_err(lift)?
        };
        *out = Box::into_raw(Box::new(EspSim { cfg, seed, soc: None, preload: Vec::new() }));
        Ok(ESPSIM_OK)
    })
}

/// Like [`espsim_new`] but reads the configuration from a file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn espsim_new_from_file(path: *const c_char, seed: u64, out: *mut *mut EspSim) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err((ESPSIM_ERR_NULL, "out is null".into()));
        }
        let cfg = SocConfig::from_file(str_arg(path, "path")?).map_err(lift)?;
        *out = Box::into_raw(Box::new(EspSim { cfg, seed, soc: None, preload: Vec::new() }));
        Ok(ESPSIM_OK)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn espsim_free(sim: *mut EspSim) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Parses a trace and builds a fresh SoC for it, replacing any previous
/// run. Words set with [`espsim_preload_word`] are applied again.
///
/// # Safety
/// `sim` must be a live handle; `trace_text` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn espsim_load_trace(sim: *mut EspSim, trace_text: *const c_char) -> i32 {
    guard(|| {
        let sim = sim_arg(sim)?;
        let trace = Trace::parse(str_arg(trace_text, "trace")?, "<trace>").map_err(lift)?;
        let mut soc = Soc::with_trace(sim.cfg.clone(), &trace, sim.seed).map_err(lift)?;
        for &(a, v) in &sim.preload {
            soc.preload_word(a, v);
        }
        sim.soc = Some(soc);
        Ok(ESPSIM_OK)
    })
}

/// Sets a word of backing memory before the run starts. The value is kept
/// for later [`espsim_load_trace`] calls too.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn espsim_preload_word(sim: *mut EspSim, addr: u64, value: u64) -> i32 {
    guard(|| {
        let sim = sim_arg(sim)?;
        if addr.checked_add(8).is_none_or(|end| end > sim.cfg.mem_size) {
            return Err(lift(Error::AddressOutOfRange { addr, mem_size: sim.cfg.mem_size }));
        }
        sim.preload.push((addr, value));
        if let Some(soc) = sim.soc.as_mut() {
            if soc.now() == 0 {
                soc.preload_word(addr, value);
            }
        }
        Ok(ESPSIM_OK)
    })
}

/// Runs until every core finishes, the watchdog fires or `max_cycles`
/// have elapsed. Returns [`ESPSIM_OK`], [`ESPSIM_VIOLATION`] or
/// [`ESPSIM_INCOMPLETE`]; `cycles_out` (optional) receives the cycle count.
///
/// # Safety
/// `sim` must be a live handle; `cycles_out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn espsim_run(sim: *mut EspSim, max_cycles: u64, cycles_out: *mut u64) -> i32 {
    guard(|| {
        let soc = sim_arg(sim)?.soc()?;
        let summary = soc.run(max_cycles).map_err(lift)?;
        if let Some(c) = cycles_out.as_mut() {
            *c = summary.cycles;
        }
        Ok(if summary.violations > 0 {
            ESPSIM_VIOLATION
        } else if !summary.completed {
            ESPSIM_INCOMPLETE
        } else {
            ESPSIM_OK
        })
    })
}

/// Reads the coherent value of a word: the freshest copy in any cache or
/// memory.
///
/// # Safety
/// `sim` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn espsim_read_word(sim: *mut EspSim, addr: u64, out: *mut u64) -> i32 {
    guard(|| {
        let soc = sim_arg(sim)?.soc()?;
        if addr.checked_add(8).is_none_or(|end| end > soc.config().mem_size) {
            return Err(lift(Error::AddressOutOfRange { addr, mem_size: soc.config().mem_size }));
        }
        let out = out.as_mut().ok_or((ESPSIM_ERR_NULL, "out is null".to_string()))?;
        *out = soc.read_coherent(addr);
        Ok(ESPSIM_OK)
    })
}

/// Number of monitor violations recorded so far.
///
/// # Safety
/// `sim` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn espsim_violation_count(sim: *mut EspSim, out: *mut u64) -> i32 {
    guard(|| {
        let soc = sim_arg(sim)?.soc()?;
        let out = out.as_mut().ok_or((ESPSIM_ERR_NULL, "out is null".to_string()))?;
        *out = soc.monitor.violations.len() as u64;
        Ok(ESPSIM_OK)
    })
}

/// Statistics of the current run as a JSON document, or null on error.
/// Release the string with [`espsim_string_free`].
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn espsim_stats_json(sim: *mut EspSim) -> *mut c_char {
    let mut json = None;
    let code = guard(|| {
        let soc = sim_arg(sim)?.soc()?;
        json = Some(CString::new(soc.stats().to_json()).map_err(|e| (ESPSIM_ERR_PROTOCOL, e.to_string()))?);
        Ok(ESPSIM_OK)
    });
    match json {
        Some(s) if code == ESPSIM_OK => s.into_raw(),
        _ => ptr::null_mut(),
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer from [`espsim_stats_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn espsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
