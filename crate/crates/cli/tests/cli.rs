use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const COARSE: &str = "grid = \"custom\"\ndx = 0.25\niterations = 2\n";

fn qrm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrm")).args(args).output().unwrap()
}

fn coarse_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, format!("{COARSE}{extra}")).unwrap();
    path.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_writes_traces_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = coarse_config(tmp.path(), "delta = 0.0\n");
    let out = tmp.path().join("out");
    let o = qrm(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["traces.csv", "traces.bin", "traces.json", "traces_clean.bin", "p_true.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    // without noise the twin is identical
    assert_eq!(fs::read(out.join("traces.bin")).unwrap(), fs::read(out.join("traces_clean.bin")).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn noisy_traces_differ_from_the_clean_twin() {
    let tmp = TempDir::new().unwrap();
    let cfg = coarse_config(tmp.path(), "");
    let out = tmp.path().join("out");
    assert!(qrm(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    assert_ne!(fs::read(out.join("traces.bin")).unwrap(), fs::read(out.join("traces_clean.bin")).unwrap());
}

#[test]
fn invert_reads_what_simulate_wrote() {
    let tmp = TempDir::new().unwrap();
    let cfg = coarse_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(qrm(&["simulate", "--config", &cfg, "--out", out_s]).status.success());
    let o = qrm(&["invert", "--config", &cfg, "--out", out_s]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("rel_l2"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert!(report["report"]["rel_l2"].as_f64().unwrap().is_finite());
    let history = fs::read_to_string(out.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 3);
    for f in ["p_comp.csv", "p_comp.pgm", "p_comp.pgm.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn zero_iterations_is_accepted() {
    let tmp = TempDir::new().unwrap();
    let cfg = coarse_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let o = qrm(&["run", "--config", &cfg, "--iterations", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let history = fs::read_to_string(out.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 1);
}

#[test]
fn bad_config_exits_with_code_2() {
    let tmp = TempDir::new().unwrap();
    let cases = ["lambda = -1.0\n", "x0 = [0.0, 0.0]\n", "delta = 1.5\n", "no_such_key = 1\n", "test = 9\n"];
    for extra in cases {
        let cfg = coarse_config(tmp.path(), extra);
        let o = qrm(&["simulate", "--config", &cfg, "--out", tmp.path().join("x").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{extra:?}");
    }
}

#[test]
fn missing_traces_exit_with_code_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = coarse_config(tmp.path(), "");
    let o = qrm(&["invert", "--config", &cfg, "--traces", tmp.path().join("nowhere").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let o = qrm(&["simulate", "--config", tmp.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn traces_on_another_grid_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = coarse_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();
    assert!(qrm(&["simulate", "--config", &cfg, "--out", out_s]).status.success());
    let other = tmp.path().join("other.toml");
    fs::write(&other, "grid = \"custom\"\ndx = 0.2\niterations = 1\n").unwrap();
    let o = qrm(&["invert", "--config", other.to_str().unwrap(), "--traces", out_s, "--out", out_s]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runs_are_bit_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = coarse_config(tmp.path(), "");
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        assert!(qrm(&["run", "--config", &cfg, "--seed", "7", "--out", d.to_str().unwrap()]).status.success());
    }
    for f in ["traces.bin", "p_comp.csv", "history.jsonl", "report.json"] {
        assert_eq!(fs::read(dirs[0].join(f)).unwrap(), fs::read(dirs[1].join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn reproduce_prints_the_published_figures() {
    let tmp = TempDir::new().unwrap();
    let cfg = coarse_config(tmp.path(), "");
    for (test, needles) in [("1", &["5.40%"][..]), ("2", &["7.07%"][..]), ("4", &["25.087", "36.00%"][..])] {
        let out = tmp.path().join(format!("t{test}"));
        let o = qrm(&["reproduce", test, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let s = stdout(&o);
        assert!(s.starts_with("test | quantity | published | obtained"), "{s}");
        for n in needles {
            assert!(s.contains(n), "{n} not in {s}");
        }
    }
}

#[test]
fn selftest_passes() {
    let o = qrm(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}
