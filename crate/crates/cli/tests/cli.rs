use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

fn navprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navprobe")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&navprobe(&["--help"])), 0);
    assert_eq!(code(&navprobe(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&navprobe(&["frobnicate"])), 1);
    assert_eq!(code(&navprobe(&["collect", "--sensor", "radar"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&navprobe(&["--out", out, "scene-gen"])), 1, "--config is required");
    assert_eq!(code(&navprobe(&["--out", out, "--jobs", "0", "demo"])), 1);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("out");
    let (cfg_s, out_s) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    assert_eq!(code(&navprobe(&["--config", cfg_s, "--out", out_s, "scene-gen"])), 1, "missing file");
    std::fs::write(&cfg, "seed = 1\n[world]\npatch = 6\n").unwrap();
    let o = navprobe(&["--config", cfg_s, "--out", out_s, "scene-gen"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("patch"));
    std::fs::write(&cfg, "seed = 1\nbogus = 2\n").unwrap();
    assert_eq!(code(&navprobe(&["--config", cfg_s, "--out", out_s, "scene-gen"])), 1);
    assert!(!out.exists(), "failed runs write nothing");
}

#[test]
fn config_round_trips_through_toml() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n[agent]\nhidden_dim = 16\n").unwrap();
    let o = navprobe(&["--config", cfg.to_str().unwrap(), "config"]);
    assert_eq!(code(&o), 0);
    let printed = String::from_utf8(o.stdout).unwrap();
    assert!(printed.contains("seed = 5"));
    assert!(printed.contains("hidden_dim = 16"));
    std::fs::write(&cfg, &printed).unwrap();
    let again = navprobe(&["--config", cfg.to_str().unwrap(), "config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), printed);
}

#[test]
fn verify_quick_passes() {
    let o = navprobe(&["verify", "--quick"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    for suite in ["shap-oracle", "grad-check", "metadata", "planted-concept"] {
        assert!(text.contains(suite), "missing {suite} in {text}");
    }
}

#[test]
fn demo_is_deterministic_and_matches_staged_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, staged) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("staged"));
    assert_eq!(code(&navprobe(&["--out", a.to_str().unwrap(), "demo"])), 0);
    assert_eq!(code(&navprobe(&["--out", b.to_str().unwrap(), "--jobs", "1", "demo"])), 0);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(fb[k] == *v, "{k} differs between runs");
    }
    for dir in ["scenes", "models", "episodes", "rollouts", "probe", "explain", "ablate", "sweep"] {
        assert!(fa.keys().any(|k| k.starts_with(dir)), "no artifacts under {dir}");
    }

    let cfg = a.join("config.toml");
    let base = ["--config", cfg.to_str().unwrap(), "--out", staged.to_str().unwrap()];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().copied().chain(extra.iter().copied()).collect();
        let o = navprobe(&args);
        assert_eq!(code(&o), 0, "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["scene-gen"]);
    run(&["train"]);
    run(&["explore"]);
    for sensor in ["full", "gps-noise", "image-zero"] {
        run(&["collect", "--sensor", sensor]);
    }
    run(&["probe"]);
    run(&["explain"]);
    run(&["ablate"]);
    run(&["sweep"]);
    let fs = files(&staged);
    for (k, v) in &fs {
        assert!(fa.get(k) == Some(v), "{k} differs between staged and demo runs");
    }
}

#[test]
fn stages_report_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 3\n").unwrap();
    let out = dir.path().join("out");
    let base = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let o = navprobe(&[&base[..], &["explore"]].concat());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("scene-gen"));
}

#[test]
fn corrupt_artifacts_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 3\n[scene]\ncount = 1\n").unwrap();
    let out = dir.path().join("out");
    let base = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(code(&navprobe(&[&base[..], &["scene-gen"]].concat())), 0);
    std::fs::write(out.join("scenes/scene00.json"), "{").unwrap();
    assert_eq!(code(&navprobe(&[&base[..], &["explore"]].concat())), 2);
}
