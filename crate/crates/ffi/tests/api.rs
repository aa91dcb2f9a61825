use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use espsim_ffi::*;

fn new_sim(config: Option<&str>) -> *mut EspSim {
    let text = config.map(|c| CString::new(c).unwrap());
    let mut sim = ptr::null_mut();
    let rc = unsafe { espsim_new(text.as_ref().map_or(ptr::null(), |c| c.as_ptr()), 3, &mut sim) };
    assert_eq!(rc, ESPSIM_OK, "{}", last_error());
    sim
}

fn last_error() -> String {
    let p = espsim_last_error();
    if p.is_null() {
        String::new()
    } else {
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }
}

fn load(sim: *mut EspSim, trace: &str) -> i32 {
    let t = CString::new(trace).unwrap();
    unsafe { espsim_load_trace(sim, t.as_ptr()) }
}

#[test]
fn run_store_and_amo() {
    let sim = new_sim(None);
    assert_eq!(load(sim, "core 0: ST 0x40 7\ncore 1: NOP\ncore 1: AMOADD 0x80 5\n"), ESPSIM_OK);
    let mut cycles = 0;
    assert_eq!(unsafe { espsim_run(sim, 1_000_000, &mut cycles) }, ESPSIM_OK);
    assert!(cycles > 0);
    let mut v = 0;
    assert_eq!(unsafe { espsim_read_word(sim, 0x40, &mut v) }, ESPSIM_OK);
    assert_eq!(v, 7);
    assert_eq!(unsafe { espsim_read_word(sim, 0x80, &mut v) }, ESPSIM_OK);
    assert_eq!(v, 5);
    let mut n = 1;
    assert_eq!(unsafe { espsim_violation_count(sim, &mut n) }, ESPSIM_OK);
    assert_eq!(n, 0);
    unsafe { espsim_free(sim) };
}

#[test]
fn preload_is_visible() {
    let sim = new_sim(None);
    assert_eq!(unsafe { espsim_preload_word(sim, 0x100, 41) }, ESPSIM_OK);
    assert_eq!(load(sim, "core 0: AMOADD 0x100 1\n"), ESPSIM_OK);
    assert_eq!(unsafe { espsim_run(sim, 1_000_000, ptr::null_mut()) }, ESPSIM_OK);
    let mut v = 0;
    unsafe { espsim_read_word(sim, 0x100, &mut v) };
    assert_eq!(v, 42);
    assert_eq!(unsafe { espsim_preload_word(sim, u64::MAX - 3, 1) }, ESPSIM_ERR_ADDRESS);
    unsafe { espsim_free(sim) };
}

#[test]
fn stats_json_is_deterministic() {
    let json = || {
        let sim = new_sim(None);
        load(sim, "core 0: ST 0x40 1\ncore 1: LD 0x40\ncore 2: AMOSWAP 0x40 3\n");
        unsafe { espsim_run(sim, 1_000_000, ptr::null_mut()) };
        let p = unsafe { espsim_stats_json(sim) };
        assert!(!p.is_null());
        let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
        unsafe {
            espsim_string_free(p);
            espsim_free(sim);
        }
        s
    };
    let a = json();
    assert!(a.contains("\"cycles\""));
    assert_eq!(a, json());
}

#[test]
fn error_codes_and_messages() {
    let mut sim = ptr::null_mut();
    let bad = CString::new("[grid]\ncols = \"x\"\n").unwrap();
    assert_eq!(unsafe { espsim_new(bad.as_ptr(), 0, &mut sim) }, ESPSIM_ERR_PARSE);
    assert!(sim.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { espsim_new(ptr::null(), 0, ptr::null_mut()) }, ESPSIM_ERR_NULL);

    let path = CString::new("/nonexistent/espsim.toml").unwrap();
    assert_eq!(unsafe { espsim_new_from_file(path.as_ptr(), 0, &mut sim) }, ESPSIM_ERR_IO);

    let sim = new_sim(None);
    assert_eq!(unsafe { espsim_run(sim, 10, ptr::null_mut()) }, ESPSIM_ERR_STATE);
    assert!(last_error().contains("no trace"));
    assert!(unsafe { espsim_stats_json(sim) }.is_null());
    assert_eq!(load(sim, "core 0: FROB 0x0\n"), ESPSIM_ERR_PARSE);
    assert_eq!(load(sim, "core 0: LD 0x7fffffff0\n"), ESPSIM_ERR_ADDRESS);
    assert_eq!(unsafe { espsim_load_trace(sim, ptr::null()) }, ESPSIM_ERR_NULL);
    assert_eq!(unsafe { espsim_run(ptr::null_mut(), 10, ptr::null_mut()) }, ESPSIM_ERR_NULL);
    unsafe {
        espsim_free(sim);
        espsim_free(ptr::null_mut());
        espsim_string_free(ptr::null_mut());
    }
}

#[test]
fn smoke_config_from_file() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { espsim_new_from_file(c.as_ptr(), 1, &mut sim) }, ESPSIM_OK, "{}", last_error());
    assert_eq!(load(sim, "core 0: NOP\n"), ESPSIM_OK);
    assert_eq!(unsafe { espsim_run(sim, 1000, ptr::null_mut()) }, ESPSIM_OK);
    unsafe { espsim_free(sim) };
}

#[test]
fn incomplete_run_is_reported() {
    let sim = new_sim(None);
    load(sim, "core 0: LD 0x40\ncore 0: LD 0x80040\n");
    assert_eq!(unsafe { espsim_run(sim, 3, ptr::null_mut()) }, ESPSIM_INCOMPLETE);
    unsafe { espsim_free(sim) };
}

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(header_dir().join("espsim.h")).unwrap();
    for name in [
        "typedef struct EspSim EspSim",
        "espsim_last_error",
        "espsim_new(",
        "espsim_new_from_file",
        "espsim_free",
        "espsim_load_trace",
        "espsim_preload_word",
        "espsim_run",
        "espsim_read_word",
        "espsim_violation_count",
        "espsim_stats_json",
        "espsim_string_free",
        "ESPSIM_ERR_PANIC",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Compiles the C smoke program against the header and the shared library
/// built next to this test binary, then runs it.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libespsim_ffi.so");
    assert!(lib.exists(), "missing {}", lib.display());
    let out = std::env::temp_dir().join(format!("espsim_c_smoke_{}", std::process::id()));
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/c/smoke.c");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header_dir())
        .arg("-L")
        .arg(profile_dir)
        .arg("-lespsim_ffi")
        .arg("-o")
        .arg(&out)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let run = Command::new(&out).env("LD_LIBRARY_PATH", profile_dir).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(run.status.success(), "exit {:?}: {}", run.status, String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "8");
}
