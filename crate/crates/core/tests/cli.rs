use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qp")).args(args).output().unwrap()
}

fn config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn equilibria_config(dir: &Path, out: &Path) -> String {
    config(
        dir,
        &format!(r#"{{"system": "doublewell1d", "command": "equilibria", "out": {:?}}}"#, out.to_string_lossy()),
    )
}

#[test]
fn writes_manifest_and_refuses_existing_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = equilibria_config(tmp.path(), &out);

    let first = qp(&["equilibria", "--config", &cfg]);
    assert_eq!(first.status.code(), Some(0));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert_eq!(files, ["assumptions.json", "equilibria.json"]);

    assert_eq!(qp(&["equilibria", "--config", &cfg]).status.code(), Some(2));
    assert_eq!(qp(&["equilibria", "--config", &cfg, "--overwrite"]).status.code(), Some(0));
}

#[test]
fn overwrite_never_clears_foreign_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("precious");
    fs::create_dir(&out).unwrap();
    fs::write(out.join("notes.txt"), "keep").unwrap();
    let cfg = equilibria_config(tmp.path(), &out);
    assert_eq!(qp(&["equilibria", "--config", &cfg, "--overwrite"]).status.code(), Some(2));
    assert_eq!(fs::read_to_string(out.join("notes.txt")).unwrap(), "keep");
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run").to_string_lossy().into_owned();
    let cases = [
        format!(r#"{{"system": "nosuch", "command": "equilibria", "out": {out:?}}}"#),
        format!(r#"{{"system": "ou1d", "command": "equilibria", "out": {out:?}, "colour": 1}}"#),
        format!(r#"{{"system": "ou1d", "command": "simulate", "out": {out:?}, "sim": {{"eps": -1}}}}"#),
    ];
    for body in &cases {
        let cfg = config(tmp.path(), body);
        let cmd = if body.contains("simulate") { "simulate" } else { "equilibria" };
        assert_eq!(qp(&[cmd, "--config", &cfg]).status.code(), Some(2), "{body}");
    }
    let cfg = config(tmp.path(), &format!(r#"{{"system": "ou1d", "command": "equilibria", "out": {out:?}}}"#));
    assert_eq!(qp(&["hjb", "--config", &cfg]).status.code(), Some(2));
    assert!(!Path::new(&out).exists());
}

#[test]
fn dotted_overrides_apply() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = config(
        tmp.path(),
        &format!(r#"{{"system": "ou1d", "command": "hjb", "out": {:?}}}"#, out.to_string_lossy()),
    );
    let run = qp(&["hjb", "--config", &cfg, "--hjb.h", "0.05"]);
    assert_eq!(run.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("hjb.csv")).unwrap();
    // [-2.5, 2.5] at h = 0.05 has 101 nodes.
    assert_eq!(csv.lines().count(), 102);
}
