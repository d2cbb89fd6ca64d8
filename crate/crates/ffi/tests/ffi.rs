use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use chainbench::state::StateStore;
use chainbench_ffi::*;

fn last_error() -> String {
    let p = cb_last_error();
    assert!(!p.is_null(), "an error message was expected");
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { cb_string_free(p) };
    s
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { cb_string_free(p) };
    s
}

#[test]
fn store_matches_the_library_root() {
    let mut reference = StateStore::new(8);
    let mut store = ptr::null_mut();
    unsafe {
        assert_eq!(cb_store_new(8, &mut store), CbStatus::Ok);
        for i in 0..50u64 {
            let k = format!("k{}", i % 7);
            let v = i.to_be_bytes();
            let mut version = 0;
            assert_eq!(cb_store_put(store, k.as_ptr(), k.len(), v.as_ptr(), v.len(), i, &mut version), CbStatus::Ok);
            assert_eq!(version, reference.put(k.as_bytes(), &v, i).unwrap());
        }
        let mut root = [0u8; 32];
        assert_eq!(cb_store_root(store, root.as_mut_ptr()), CbStatus::Ok);
        assert_eq!(&root, reference.state_root().as_bytes());

        let mut count = 0;
        assert_eq!(cb_store_version_count(store, b"k3".as_ptr(), 2, &mut count), CbStatus::Ok);
        assert_eq!(count, reference.latest_version(b"k3").unwrap());

        let mut small = [0u8; 4];
        let mut len = 0;
        assert_eq!(cb_store_get(store, b"k0".as_ptr(), 2, small.as_mut_ptr(), small.len(), &mut len), CbStatus::BufferTooSmall);
        assert_eq!(len, 8);
        let mut buf = [0u8; 8];
        assert_eq!(cb_store_get(store, b"k0".as_ptr(), 2, buf.as_mut_ptr(), buf.len(), &mut len), CbStatus::Ok);
        assert_eq!(buf, 49u64.to_be_bytes());

        // Going back in block order is refused and leaves the root alone.
        assert_eq!(cb_store_put(store, b"k0".as_ptr(), 2, b"x".as_ptr(), 1, 3, ptr::null_mut()), CbStatus::StateError);
        assert!(last_error().contains("stale commit"));
        let mut again = [0u8; 32];
        cb_store_root(store, again.as_mut_ptr());
        assert_eq!(again, root);
        cb_store_free(store);
    }
}

#[test]
fn null_and_bad_arguments_are_reported() {
    unsafe {
        assert_eq!(cb_store_new(4, ptr::null_mut()), CbStatus::NullArgument);
        let mut s = ptr::null_mut();
        assert_eq!(cb_store_new(0, &mut s), CbStatus::StateError);
        assert_eq!(cb_store_root(ptr::null_mut(), [0u8; 32].as_mut_ptr()), CbStatus::NullArgument);
        assert!(last_error().contains("store is null"));
        let mut e = ptr::null_mut();
        assert_eq!(cb_experiment_from_toml(ptr::null(), &mut e), CbStatus::NullArgument);
        let bad = [0xffu8, 0];
        assert_eq!(cb_experiment_from_toml(bad.as_ptr().cast(), &mut e), CbStatus::InvalidUtf8);
        assert!(e.is_null());
        // Freeing NULL is a no-op.
        cb_store_free(ptr::null_mut());
        cb_run_free(ptr::null_mut());
        cb_experiment_free(ptr::null_mut());
        cb_string_free(ptr::null_mut());
    }
}

#[test]
fn config_errors_name_the_field() {
    let text = CString::new("[consensus]\nbatch_sise = 10\n").unwrap();
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { cb_experiment_from_toml(text.as_ptr(), &mut e) }, CbStatus::ConfigError);
    assert!(last_error().contains("batch_sise"));
}

#[test]
fn runs_are_reproducible_through_the_interface() {
    let text = CString::new(
        "duration_s = 8\n[topology]\nnodes = 4\n[workload]\nkind = \"ycsb\"\nclients = 2\nrequest_rate = 100\n",
    )
    .unwrap();
    let run_once = |seed: u64| unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(cb_experiment_from_toml(text.as_ptr(), &mut e), CbStatus::Ok);
        assert_eq!(cb_experiment_set_seed(e, seed), CbStatus::Ok);
        let mut r = ptr::null_mut();
        assert_eq!(cb_experiment_run(e, &mut r), CbStatus::Ok);
        let (mut tps, mut delta, mut stalled) = (0.0, 1, 1);
        assert_eq!(cb_run_throughput(r, &mut tps), CbStatus::Ok);
        assert_eq!(cb_run_fork_delta(r, &mut delta), CbStatus::Ok);
        assert_eq!(cb_run_stalled(r, &mut stalled), CbStatus::Ok);
        assert!(tps > 0.0);
        assert_eq!((delta, stalled), (0, 0));
        let mut s = ptr::null_mut();
        assert_eq!(cb_run_trace_hash(r, &mut s), CbStatus::Ok);
        let hash = take_string(s);
        assert_eq!(cb_run_summary_json(r, &mut s), CbStatus::Ok);
        let json = take_string(s);
        assert_eq!(cb_run_series_csv(r, &mut s), CbStatus::Ok);
        let csv = take_string(s);
        assert_eq!(csv.lines().count(), 9);
        assert_eq!(cb_experiment_to_toml(e, &mut s), CbStatus::Ok);
        assert!(take_string(s).contains(&format!("seed = {seed}")));
        cb_run_free(r);
        cb_experiment_free(e);
        (hash, json)
    };
    let a = run_once(7);
    assert_eq!(a, run_once(7));
    assert_ne!(a.0, run_once(8).0);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(cb_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Directory holding the library artifacts built alongside this test.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_header() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = artifact_dir().join("libchainbench_ffi.a");
    if !lib.exists() {
        panic!("static library not found at {}", lib.display());
    }
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cb_smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&out)
        .status()
        .expect("a C compiler is available");
    assert!(status.success(), "compiling the C smoke test failed");
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("c smoke ok"));
}
