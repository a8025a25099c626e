use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use kslab::config::ExperimentConfig;

fn kslab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kslab"))
}

fn flat_preset() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets/flat-n3.conf")
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn simulate_into(dir: &Path) -> std::process::Output {
    kslab()
        .args(["rescale", "--config"])
        .arg(flat_preset())
        .env("KSLAB_OUT", dir)
        .output()
        .unwrap()
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = simulate_into(d.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let names = files(a.path());
    assert_eq!(names, files(b.path()));
    assert!(names.iter().any(|p| p.starts_with("frames")));
    assert!(names.iter().any(|p| p.starts_with("rescaled")));
    for name in names.iter().filter(|p| p.file_name().unwrap() != "run.log") {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name:?}");
    }
}

#[test]
fn every_artifact_carries_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate_into(dir.path());
    assert!(out.status.success());
    let expected = ExperimentConfig::from_file(&flat_preset()).unwrap().hash();
    // The canonical dump parses back to the same hash.
    let dumped = fs::read_to_string(dir.path().join("config.txt")).unwrap();
    assert_eq!(ExperimentConfig::from_text(&dumped).unwrap().hash(), expected);
    for name in files(dir.path()).iter().filter(|p| p.file_name().unwrap() != "run.log") {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        let found = text
            .lines()
            .find_map(|l| l.split("config_hash").nth(1))
            .map(|rest| rest.trim_matches(|c: char| !c.is_ascii_hexdigit()).to_string());
        assert_eq!(found.as_deref(), Some(expected.as_str()), "{name:?}");
    }
}

#[test]
fn overrides_change_the_hash() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run = |d: &Path, extra: &[&str]| {
        let out = kslab().args(["simulate", "--config"]).arg(flat_preset()).args(extra).env("KSLAB_OUT", d).output().unwrap();
        assert!(out.status.success());
        fs::read_to_string(d.join("config.txt")).unwrap()
    };
    let base = run(a.path(), &[]);
    let changed = run(b.path(), &["--c", "2"]);
    assert_ne!(base.lines().next(), changed.lines().next());
    assert!(changed.contains("c = 2e0"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| kslab().args(args).env("KSLAB_OUT", dir.path()).status().unwrap().code();
    assert_eq!(code(&["simulate", "--no_such_key", "1"]), Some(1));
    assert_eq!(code(&["simulate", "--n", "2"]), Some(1));
    assert_eq!(code(&["simulate", "--config", "/nonexistent.conf"]), Some(1));
    // Zero data never blows up, so there is nothing to rescale.
    assert_eq!(code(&["rescale", "--data", "constant", "--c", "0", "--mode", "homogeneous", "--t_max", "1"]), Some(2));
    // A flat run cannot match a profile list that lacks the constant branch.
    let flat = flat_preset();
    let flat = flat.to_str().unwrap();
    assert_eq!(code(&["rescale", "--config", flat, "--alpha_lo", "1", "--match_tol", "1e-3"]), Some(3));
}

#[test]
fn empty_sweep_is_an_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = kslab().args(["sweep", "--n", "3"]).env("KSLAB_OUT", dir.path()).output().unwrap();
    assert!(out.status.success());
    let table = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("exit_code,T_est"));
}
