//! End-to-end behavior of the `lab` binary: exit codes, tamper detection and
//! reproducibility of run directories.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lab")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Small logistic run on a separable arc; finishes in well under a second.
fn quick_run(dir: &Path, seed: u64) {
    let cfg = dir.with_extension("json");
    fs::write(&cfg, format!(r#"{{"experiment":"appG_labelflip","seed":{seed},"train":{{"steps":2000}}}}"#)).unwrap();
    let o = lab(&["run", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(o.status.code().is_some_and(|c| c == 0 || c == 1), "{}", String::from_utf8_lossy(&o.stderr));
}

fn rehash(dir: &Path, rel: &str) {
    let manifest = dir.join("manifest.json");
    let mut m: Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    m["files"][rel] = Value::String(lab::artifacts::sha256_file(&dir.join(rel)).unwrap());
    fs::write(&manifest, serde_json::to_string_pretty(&m).unwrap()).unwrap();
}

#[test]
fn gradcheck_passes_and_verifies() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gc");
    let cfg = tmp.path().join("gc.json");
    fs::write(&cfg, r#"{"experiment":"gradcheck"}"#).unwrap();
    let o = lab(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let v = lab(&["verify", out.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0), "{}", stdout(&v));
    assert!(out.join("verdict.json").exists());
}

#[test]
fn edited_loss_column_fails_integrity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    quick_run(&out, 0);
    let path = out.join("main/trajectory.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let mut cells: Vec<String> = lines[2].split(',').map(str::to_owned).collect();
    cells[2] = "0.5".into();
    lines[2] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let v = lab(&["verify", out.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(1));
    let s = stdout(&v);
    assert!(s.lines().any(|l| l.starts_with("FAIL integrity")), "{s}");
    assert!(s.contains("main/trajectory.csv"), "{s}");
}

#[test]
fn files_from_another_run_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    quick_run(&a, 0);
    quick_run(&b, 1);

    // Unlisted extra file.
    fs::copy(b.join("main/final.json"), a.join("main/final_b.json")).unwrap();
    let s = stdout(&lab(&["verify", a.to_str().unwrap()]));
    assert!(s.contains("not part of run"), "{s}");
    fs::remove_file(a.join("main/final_b.json")).unwrap();

    // Foreign sidecar whose hash was patched into the manifest: the run id gives it away.
    fs::copy(b.join("main/final.json"), a.join("main/final.json")).unwrap();
    rehash(&a, "main/final.json");
    let v = lab(&["verify", a.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(1));
    let s = stdout(&v);
    assert!(s.contains("PASS integrity"), "{s}");
    assert!(s.contains("belongs to run"), "{s}");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    quick_run(&a, 3);
    quick_run(&b, 3);
    let files = lab::artifacts::list_files(&a).unwrap();
    assert_eq!(files, lab::artifacts::list_files(&b).unwrap());
    for f in files {
        assert_eq!(fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"experiment":"no_such_experiment"}"#).unwrap();
    assert_eq!(lab(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
    fs::write(&cfg, r#"{"experiment":"gradcheck","train":{"eta":"fast"}}"#).unwrap();
    assert_eq!(lab(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(lab(&["verify", tmp.path().join("missing").to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn nonempty_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gc.json");
    fs::write(&cfg, r#"{"experiment":"gradcheck"}"#).unwrap();
    let out = tmp.path().join("busy");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("keep.txt"), "x").unwrap();
    let o = lab(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read_to_string(out.join("keep.txt")).unwrap(), "x");
}
