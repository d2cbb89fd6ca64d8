//! C interface to the chainbench simulator.
//!
//! Every function returns a [`CbStatus`]. On failure a message is kept per
//! thread and can be fetched with [`cb_last_error`]. Objects are opaque
//! handles created by `*_new`/`*_from_*` functions and released with the
//! matching `*_free`. Strings returned through `char **` belong to the
//! caller and must be released with [`cb_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chainbench::bench::driver::{self, RunArtifacts};
use chainbench::bench::report;
use chainbench::config::ExperimentConfig;
use chainbench::state::StateStore;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    StateError = 4,
    NotFound = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// A parsed experiment configuration.
pub struct CbExperiment {
    cfg: ExperimentConfig,
}

/// The results of one simulated run.
pub struct CbRun {
    artifacts: RunArtifacts,
}

/// A versioned key-value store with a bucketed Merkle root.
pub struct CbStore {
    store: StateStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg.into()));
}

fn fail(status: CbStatus, msg: impl Into<String>) -> CbStatus {
    set_error(msg);
    status
}

/// Run `f`, turning a panic into `CbStatus::Internal`.
fn guard(f: impl FnOnce() -> CbStatus) -> CbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(CbStatus::Internal, format!("internal error: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, CbStatus> {
    if p.is_null() {
        return Err(fail(CbStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(CbStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize, what: &str) -> Result<&'a [u8], CbStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(CbStatus::NullArgument, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, CbStatus> {
    p.as_ref().ok_or_else(|| fail(CbStatus::NullArgument, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, CbStatus> {
    p.as_mut().ok_or_else(|| fail(CbStatus::NullArgument, format!("{what} is null")))
}

unsafe fn put_out<T>(out: *mut T, v: T) -> CbStatus {
    if out.is_null() {
        return fail(CbStatus::NullArgument, "output pointer is null");
    }
    out.write(v);
    CbStatus::Ok
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> CbStatus {
    match CString::new(s) {
        Ok(c) => put_out(out, c.into_raw()),
        Err(_) => fail(CbStatus::Internal, "string contains an interior NUL"),
    }
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the calling thread's most recent error message, or NULL when
/// there is none. Release with `cb_string_free`.
#[no_mangle]
pub extern "C" fn cb_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_deref() {
        Some(m) => CString::new(m.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse and validate an experiment from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cb_experiment_from_toml(toml: *const c_char, out: *mut *mut CbExperiment) -> CbStatus {
    guard(|| {
        let text = try_ffi!(str_arg(toml, "toml"));
        match ExperimentConfig::from_toml(text) {
            Ok(cfg) => put_out(out, Box::into_raw(Box::new(CbExperiment { cfg }))),
            Err(e) => fail(CbStatus::ConfigError, e.to_string()),
        }
    })
}

/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn cb_experiment_set_seed(exp: *mut CbExperiment, seed: u64) -> CbStatus {
    guard(|| {
        try_ffi!(handle_mut(exp, "experiment")).cfg.seed = seed;
        CbStatus::Ok
    })
}

/// The normalized configuration as TOML.
///
/// # Safety
/// `exp` must be a live experiment handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cb_experiment_to_toml(exp: *const CbExperiment, out: *mut *mut c_char) -> CbStatus {
    guard(|| {
        let e = try_ffi!(handle(exp, "experiment"));
        put_string(out, e.cfg.to_toml())
    })
}

/// # Safety
/// `exp` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cb_experiment_free(exp: *mut CbExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Simulate the experiment to completion. Blocks the calling thread.
///
/// # Safety
/// `exp` must be a live experiment handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cb_experiment_run(exp: *const CbExperiment, out: *mut *mut CbRun) -> CbStatus {
    guard(|| {
        let e = try_ffi!(handle(exp, "experiment"));
        if out.is_null() {
            return fail(CbStatus::NullArgument, "output pointer is null");
        }
        match driver::run(&e.cfg) {
            Ok(artifacts) => put_out(out, Box::into_raw(Box::new(CbRun { artifacts }))),
            Err(err) => fail(CbStatus::ConfigError, err.to_string()),
        }
    })
}

/// Successful transactions per simulated second.
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cb_run_throughput(run: *const CbRun, out: *mut f64) -> CbStatus {
    guard(|| put_out(out, try_ffi!(handle(run, "run")).artifacts.report.throughput))
}

/// Blocks appended off the main branch, as seen by the observer.
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cb_run_fork_delta(run: *const CbRun, out: *mut u64) -> CbStatus {
    guard(|| put_out(out, try_ffi!(handle(run, "run")).artifacts.report.security.delta))
}

/// 1 when the run hit a liveness stall, else 0.
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cb_run_stalled(run: *const CbRun, out: *mut i32) -> CbStatus {
    guard(|| put_out(out, i32::from(try_ffi!(handle(run, "run")).artifacts.report.liveness.stalled)))
}

/// Hex digest of the run's event trace.
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cb_run_trace_hash(run: *const CbRun, out: *mut *mut c_char) -> CbStatus {
    guard(|| put_string(out, try_ffi!(handle(run, "run")).artifacts.report.trace_hash.clone()))
}

/// The JSON summary report.
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cb_run_summary_json(run: *const CbRun, out: *mut *mut c_char) -> CbStatus {
    guard(|| {
        let r = try_ffi!(handle(run, "run"));
        let mut buf = Vec::new();
        if let Err(e) = report::write_summary_json(&r.artifacts.report, &mut buf) {
            return fail(CbStatus::Internal, e.to_string());
        }
        put_string(out, String::from_utf8(buf).expect("JSON is UTF-8"))
    })
}

/// The per-second CSV series.
///
/// # Safety
/// `run` must be a live run handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cb_run_series_csv(run: *const CbRun, out: *mut *mut c_char) -> CbStatus {
    guard(|| {
        let r = try_ffi!(handle(run, "run"));
        let mut buf = Vec::new();
        if let Err(e) = report::write_series_csv(&r.artifacts.report, &mut buf) {
            return fail(CbStatus::Internal, e.to_string());
        }
        put_string(out, String::from_utf8(buf).expect("CSV is UTF-8"))
    })
}

/// # Safety
/// `run` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cb_run_free(run: *mut CbRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// A store with `num_buckets` Merkle buckets.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cb_store_new(num_buckets: u32, out: *mut *mut CbStore) -> CbStatus {
    guard(|| {
        if num_buckets == 0 {
            return fail(CbStatus::StateError, "num_buckets must be positive");
        }
        put_out(out, Box::into_raw(Box::new(CbStore { store: StateStore::new(num_buckets as usize) })))
    })
}

/// Write a new version of `key` committed at `block`; the new version
/// number goes to `version_out` when it is not NULL.
///
/// # Safety
/// `store` must be a live store handle; `key`/`value` must point to
/// `key_len`/`value_len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn cb_store_put(
    store: *mut CbStore,
    key: *const u8,
    key_len: usize,
    value: *const u8,
    value_len: usize,
    block: u64,
    version_out: *mut u64,
) -> CbStatus {
    guard(|| {
        let s = try_ffi!(handle_mut(store, "store"));
        let k = try_ffi!(bytes_arg(key, key_len, "key"));
        let v = try_ffi!(bytes_arg(value, value_len, "value"));
        match s.store.put(k, v, block) {
            Ok(version) => {
                if !version_out.is_null() {
                    version_out.write(version);
                }
                CbStatus::Ok
            }
            Err(e) => fail(CbStatus::StateError, e.to_string()),
        }
    })
}

/// Copy the latest value of `key` into `buf`. The value's length is always
/// written to `len_out`; when it exceeds `buf_len` nothing is copied and
/// `BufferTooSmall` is returned.
///
/// # Safety
/// `store` must be a live store handle; `key` must point to `key_len`
/// bytes; `buf` must have `buf_len` writable bytes; `len_out` writable.
#[no_mangle]
pub unsafe extern "C" fn cb_store_get(
    store: *const CbStore,
    key: *const u8,
    key_len: usize,
    buf: *mut u8,
    buf_len: usize,
    len_out: *mut usize,
) -> CbStatus {
    guard(|| {
        let s = try_ffi!(handle(store, "store"));
        let k = try_ffi!(bytes_arg(key, key_len, "key"));
        let Some(v) = s.store.get_latest(k) else {
            return fail(CbStatus::NotFound, format!("unknown key {}", String::from_utf8_lossy(k)));
        };
        try_ffi!(match put_out(len_out, v.len()) {
            CbStatus::Ok => Ok(()),
            other => Err(other),
        });
        if v.len() > buf_len {
            return fail(CbStatus::BufferTooSmall, format!("value needs {} bytes", v.len()));
        }
        if !v.is_empty() {
            if buf.is_null() {
                return fail(CbStatus::NullArgument, "buffer is null");
            }
            ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        }
        CbStatus::Ok
    })
}

/// Number of versions stored under `key` (0 when absent).
///
/// # Safety
/// `store` must be a live store handle; `key` must point to `key_len`
/// bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cb_store_version_count(
    store: *const CbStore,
    key: *const u8,
    key_len: usize,
    out: *mut u64,
) -> CbStatus {
    guard(|| {
        let s = try_ffi!(handle(store, "store"));
        let k = try_ffi!(bytes_arg(key, key_len, "key"));
        put_out(out, s.store.latest_version(k).unwrap_or(0))
    })
}

/// Write the 32-byte state root into `out`.
///
/// # Safety
/// `store` must be a live store handle; `out` must have 32 writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cb_store_root(store: *mut CbStore, out: *mut u8) -> CbStatus {
    guard(|| {
        let s = try_ffi!(handle_mut(store, "store"));
        if out.is_null() {
            return fail(CbStatus::NullArgument, "output pointer is null");
        }
        let root = s.store.state_root();
        ptr::copy_nonoverlapping(root.as_bytes().as_ptr(), out, 32);
        CbStatus::Ok
    })
}

/// # Safety
/// `store` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cb_store_free(store: *mut CbStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}
