use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
name = "small"
seed = 3
duration_s = 8

[topology]
nodes = 4

[consensus]
engine = "pbft"

[workload]
kind = "ycsb"
clients = 2
request_rate = 50
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_chainbench"));
    c.env_remove("CHAINBENCH_OUT");
    c
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn malformed_configs_exit_2_and_name_the_field() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("typo.toml", "name = \"x\"\n[topology]\nnodez = 4\n", "nodez"),
        ("type.toml", "name = \"x\"\n[topology]\nnodes = \"four\"\n", "four"),
        ("range.toml", "name = \"x\"\n[workload]\nread_ratio = 1.5\n", "read_ratio"),
        ("pbft3.toml", "name = \"x\"\n[topology]\nnodes = 3\n[consensus]\nengine = \"pbft\"\n", "3f + 1"),
    ];
    for (file, body, needle) in cases {
        let cfg = write_config(dir.path(), file, body);
        let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
        assert_eq!(o.status.code(), Some(2), "{file}: {}", stderr(&o));
        assert!(stderr(&o).contains(needle), "{file}: {}", stderr(&o));
    }
    let o = bin().args(["run", "--config", "/nonexistent/x.toml"]).output().unwrap();
    assert_ne!(o.status.code(), Some(0));
    let o = bin().args(["run"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    let o = bin().arg("--version").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("chainbench "));
}

#[test]
fn runs_are_byte_identical_and_replay() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bin().args(["run", "--trace", "--assert", "--config"]).arg(&cfg).arg("--out").arg(out).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["small.csv", "small.json", "small-trace.jsonl"] {
        let (x, y) = (fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty(), "{f} is empty");
        assert!(x == y, "{f} differs between runs");
    }
    let o = bin().arg("replay").arg(a.join("small-trace.jsonl")).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("replay: deterministic"));

    // A truncated trace is rejected.
    let text = fs::read_to_string(a.join("small-trace.jsonl")).unwrap();
    let cut: Vec<&str> = text.lines().collect();
    let cut = cut[..cut.len() - 1].join("\n");
    let t = write_config(dir.path(), "cut.jsonl", &cut);
    assert_ne!(bin().arg("replay").arg(&t).output().unwrap().status.code(), Some(0));

    // A different seed gives a different report.
    let c = dir.path().join("c");
    let o = bin().args(["run", "--seed", "4", "--config"]).arg(&cfg).arg("--out").arg(&c).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(fs::read(a.join("small.json")).unwrap(), fs::read(c.join("small.json")).unwrap());
}

#[test]
fn output_dir_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "small.toml", &SMALL.replace("duration_s = 8", "duration_s = 2"));
    let env_out = dir.path().join("from-env");
    let o = bin().env("CHAINBENCH_OUT", &env_out).current_dir(dir.path()).args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(env_out.join("small.json").is_file());
    assert!(!dir.path().join("chainbench-out").exists());

    // An explicit flag wins over the environment.
    let flag_out = dir.path().join("from-flag");
    let o = bin().env("CHAINBENCH_OUT", &env_out).args(["run", "--config"]).arg(&cfg).arg("--out").arg(&flag_out).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(flag_out.join("small.csv").is_file());
}

#[test]
fn summary_json_has_the_reported_fields() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("small.json")).unwrap()).unwrap();
    for k in ["throughput", "latency", "security", "liveness", "trace_hash", "committed"] {
        assert!(v.get(k).is_some(), "missing {k} in {v}");
    }
    assert!(v["throughput"].as_f64().unwrap() > 0.0);
    assert_eq!(v["security"]["delta"].as_u64(), Some(0));
    let csv = fs::read_to_string(dir.path().join("small.csv")).unwrap();
    assert!(csv.lines().count() > 2);
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "small.toml", &SMALL.replace("duration_s = 8", "duration_s = 3"));
    let o = bin()
        .args(["sweep", "--dimension", "nodes", "--range", "4,7", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("small-sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    let o = bin().args(["sweep", "--dimension", "nodes", "--range", "x:y", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analytics_assert_passes_on_a_small_preload() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "an.toml",
        "name = \"an\"\nseed = 2\n[workload]\nkind = \"analytics\"\naccounts = 64\n[analytics]\npreload_blocks = 300\nqueries = 50\n",
    );
    let o = bin().args(["analytics", "--assert", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("an-analytics.json")).unwrap()).unwrap();
    assert_eq!(v["blocks"].as_u64(), Some(300));
    assert_eq!(v["q1_mismatches"].as_u64(), Some(0));
    assert_eq!(v["q2_mismatches"].as_u64(), Some(0));
}

#[test]
fn failed_expectation_exits_1() {
    let dir = TempDir::new().unwrap();
    let body = format!("{SMALL}\n[expect]\nmin_throughput = 1000000.0\n");
    let cfg = write_config(dir.path(), "greedy.toml", &body);
    let o = bin().args(["run", "--assert", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let o = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn in_process_entry_point_matches_the_binary() {
    let args = ["chainbench", "run", "--config", "/nonexistent.toml"];
    let code = chainbench::cli::run_cli(args);
    assert_ne!(code, 0);
    assert_eq!(bin().args(&args[1..]).output().unwrap().status.code(), Some(code));
    assert_eq!(chainbench::cli::run_cli(["chainbench", "bogus"]), chainbench::cli::EXIT_CONFIG);
}
