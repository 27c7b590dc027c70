//! Black-box checks of the `ipi` binary: flag plumbing, environment
//! overrides, artifact reproducibility, and the stable exit-code contract.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ipi"));
    // Strip ambient IPI_* overrides so runs depend only on what each test
    // passes explicitly.
    for (key, _) in std::env::vars() {
        if key.starts_with("IPI_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        files.insert(
            entry.file_name().to_string_lossy().into_owned(),
            std::fs::read(entry.path()).unwrap(),
        );
    }
    files
}

#[test]
fn offline_reruns_reproduce_every_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for dir in ["a", "b"] {
        let out = bin()
            .args(["offline", "--config"])
            .arg(config_path("linear_verify.conf"))
            .arg("--out")
            .arg(tmp.path().join(dir))
            .output()
            .unwrap();
        assert!(out.status.success(), "offline failed: {}", stderr(&out));
        assert!(stdout(&out).contains("converged"));
        outputs.push(read_dir_files(&tmp.path().join(dir)));
    }
    assert_eq!(
        outputs[0], outputs[1],
        "same configuration and seed must reproduce the bundle byte for byte"
    );
}

#[test]
fn seed_flag_changes_the_data_but_not_the_layout() {
    let tmp = tempfile::tempdir().unwrap();
    for (dir, seed) in [("s0", "0"), ("s1", "1")] {
        let out = bin()
            .args(["offline", "--config"])
            .arg(config_path("linear_verify.conf"))
            .args(["--seed", seed, "--out"])
            .arg(tmp.path().join(dir))
            .output()
            .unwrap();
        assert!(out.status.success(), "offline failed: {}", stderr(&out));
    }
    let a = read_dir_files(&tmp.path().join("s0"));
    let b = read_dir_files(&tmp.path().join("s1"));
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "both bundles carry the same files"
    );
    assert_ne!(
        a["history.csv"], b["history.csv"],
        "a different seed draws different episodes"
    );
    assert_ne!(a["config.conf"], b["config.conf"], "the seed is part of the config");
}

#[test]
fn environment_overrides_are_applied_and_validated() {
    // An invalid discount injected through the environment must be caught
    // by configuration validation: exit code 2, nothing written.
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("gamma");
    let out = bin()
        .args(["offline", "--config"])
        .arg(config_path("linear_verify.conf"))
        .arg("--out")
        .arg(&out_dir)
        .env("IPI_COST_GAMMA", "1.2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("configuration error"));
    assert!(!out_dir.exists());
}

#[test]
fn unconverged_training_writes_the_bundle_and_exits_distinctly() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("capped");
    let out = bin()
        .args(["offline", "--config"])
        .arg(config_path("model_a_offline.conf"))
        .arg("--out")
        .arg(&out_dir)
        .env("IPI_POLICY_MAX_ITERATIONS", "3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(9), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("UNCONVERGED"));
    // The partial run is still inspectable: full bundle on disk.
    for name in ["history.csv", "state.json", "manifest.json"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
}

#[test]
fn missing_baseline_exits_with_the_bundle_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["online", "--config"])
        .arg(config_path("model_b_online.conf"))
        .arg("--baseline")
        .arg(tmp.path().join("nowhere"))
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(10), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("baseline bundle error"));
}

#[test]
fn online_resumes_a_trained_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let baseline = tmp.path().join("baseline");
    let out = bin()
        .args(["offline", "--config"])
        .arg(config_path("model_a_offline.conf"))
        .arg("--out")
        .arg(&baseline)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let online_dir = tmp.path().join("online");
    let out = bin()
        .args(["online", "--config"])
        .arg(config_path("model_b_online.conf"))
        .arg("--baseline")
        .arg(&baseline)
        .arg("--out")
        .arg(&online_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("envelope"));
    assert!(text.contains("PASS"));
    assert!(online_dir.join("trajectory.csv").exists());
    assert!(online_dir.join("response.svg").exists());
}

#[test]
fn verify_passes_on_the_shipped_protocol() {
    let out = bin()
        .args(["verify", "--config"])
        .arg(config_path("linear_verify.conf"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let passes = text.matches("PASS").count();
    assert_eq!(passes, 5, "five report items expected:\n{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn plot_infers_the_curve_kind_and_rejects_unknown_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    let out = bin()
        .args(["offline", "--config"])
        .arg(config_path("linear_verify.conf"))
        .arg("--out")
        .arg(&bundle)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let out = bin()
        .arg("plot")
        .arg(bundle.join("history.csv"))
        .arg("--out")
        .arg(tmp.path().join("plots"))
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let svg = std::fs::read_to_string(tmp.path().join("plots/history.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    // The compact kernel-curve export has a different schema; without an
    // explicit kind the command refuses rather than guessing.
    let out = bin()
        .arg("plot")
        .arg(bundle.join("kernel_curve.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(12), "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("cannot infer"));
}

#[test]
fn sweep_runs_each_config_into_its_own_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for (name, gamma) in [("low_discount", "0.5"), ("high_discount", "0.8")] {
        let path = tmp.path().join(format!("{name}.conf"));
        std::fs::write(
            &path,
            format!("experiment.name = {name}\nplant.model = linear\ncost.gamma = {gamma}\n"),
        )
        .unwrap();
        paths.push(path);
    }
    let out_base = tmp.path().join("runs");
    let out = bin()
        .arg("sweep")
        .args(&paths)
        .args(["--jobs", "2", "--out"])
        .arg(&out_base)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("sweep[low_discount]"), "{text}");
    assert!(lines[1].starts_with("sweep[high_discount]"), "{text}");
    for name in ["low_discount", "high_discount"] {
        assert!(out_base.join(name).join("manifest.json").exists());
    }
}
