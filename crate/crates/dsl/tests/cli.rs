use std::path::Path;
use std::process::{Command, Output};

fn dsl(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsl")).args(args).arg("--out").arg(out).env("DSL_THREADS", "2").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn metrics(dir: &Path, cmd: &str) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join(format!("{cmd}.metrics.json"))).unwrap()).unwrap()
}

#[test]
fn simulate_writes_full_stack() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dsl(tmp.path(), &["simulate", "--sigma", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("simulate.json")).unwrap()).unwrap();
    assert_eq!(manifest["frame_count"], 339);
    let pfms = std::fs::read_dir(tmp.path().join("captures"))
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name().into_string().unwrap();
            name.ends_with(".pfm") && !name.ends_with("_valid.pfm")
        })
        .count();
    assert_eq!(pfms, 339);
    let m = metrics(tmp.path(), "simulate");
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["values"]["binary_frames"], 19);

    let o = dsl(tmp.path(), &["reconstruct-depth"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("depth.pfm").exists());
}

#[test]
fn missing_inputs_are_dependency_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dsl(tmp.path(), &["reconstruct-depth"]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing input"));
}

#[test]
fn bad_configuration_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"tau": 3.0}"#).unwrap();
    let o = dsl(tmp.path(), &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("tau"));

    let o = dsl(tmp.path(), &["simulate", "--orders", "0,2"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = dsl(tmp.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_files_report_offsets() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, "{\n  \"tau\": 0.5,\n  \"bogus\": 1\n}\n").unwrap();
    let o = dsl(tmp.path(), &["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("parse error at byte"), "{}", stderr(&o));

    let o = dsl(tmp.path(), &["simulate", "--sigma", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let frame = tmp.path().join("captures").join("binary_0003.pfm");
    let mut bytes = std::fs::read(&frame).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&frame, bytes).unwrap();
    let o = dsl(tmp.path(), &["reconstruct-depth"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("binary_0003.pfm: parse error at byte"), "{}", stderr(&o));
}

#[test]
fn exported_demo_reproduces_builtin_captures() {
    let tmp = tempfile::tempdir().unwrap();
    let demo = tmp.path().join("demo");
    let o = dsl(&demo, &["export-demo"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["demo_rig.json", "prototype_rig.json", "colorchecker.json", "boxcar.json", "two_box.json", "efficiency.csv", "config.json"] {
        assert!(demo.join(f).exists(), "{f}");
    }
    let from_files = tmp.path().join("files");
    let cfg = demo.join("config.json");
    let o = dsl(&from_files, &["simulate", "--sigma", "0", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let builtin = tmp.path().join("builtin");
    let o = dsl(&builtin, &["simulate", "--sigma", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for frame in ["binary_0004.pfm", "references_0001.pfm", "scanlines_0150.pfm"] {
        let a = std::fs::read(from_files.join("captures").join(frame)).unwrap();
        let b = std::fs::read(builtin.join("captures").join(frame)).unwrap();
        assert!(a == b, "{frame} differs");
    }
}
