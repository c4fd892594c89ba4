use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anharm_lab::config::{Experiment, RunConfig};
use anharm_lab::manifest::RunManifest;

fn anharm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anharm"))
        .args(args)
        .env("ANHARM_JOBS", "1")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join(format!("{}.json", cfg.experiment.name()));
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn only_run_dir(base: &Path, experiment: &str) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(base.join(experiment))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    dirs.sort();
    dirs
}

#[test]
fn passing_run_writes_the_output_tree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::preset(Experiment::FlowNorm);
    let path = write_config(tmp.path(), &cfg);
    let out = tmp.path().join("runs");
    let o = anharm(&[
        "flow-norm",
        "--config",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--tmax",
        "6",
    ]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout.lines().any(|l| l.starts_with("PASS flow-bound-ratio")), "{stdout}");

    let dirs = only_run_dir(&out, "flow-norm");
    assert_eq!(dirs.len(), 1);
    let run = &dirs[0];
    assert!(run.join("results.csv").is_file());
    assert!(run.join("checkpoints").is_dir());
    let manifest = RunManifest::load(&run.join("manifest.json")).unwrap();
    assert!(manifest.all_passed());
    assert_eq!(manifest.experiment, "flow-norm");
    assert_eq!(manifest.config.t_max, 6.0);
    assert!(manifest.constants.contains_key("c_hat"));
    assert!(manifest.tables.iter().any(|t| t == "results.csv"));
    let header = std::fs::read_to_string(run.join("results.csv")).unwrap();
    assert!(header.starts_with("T,supF,bound_rhs,det_defect\n"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::preset(Experiment::ClassicalGrowth);
    cfg.t_max = 2e3;
    let path = write_config(tmp.path(), &cfg);
    let out = tmp.path().join("runs");
    for _ in 0..2 {
        let o = anharm(&["classical-growth", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    }
    let dirs = only_run_dir(&out, "classical-growth");
    assert_eq!(dirs.len(), 2);
    let manifest = RunManifest::load(&dirs[0].join("manifest.json")).unwrap();
    assert!(!manifest.tables.is_empty());
    for rel in &manifest.tables {
        let a = std::fs::read(dirs[0].join(rel)).unwrap();
        let b = std::fs::read(dirs[1].join(rel)).unwrap();
        assert!(a == b, "{rel} differs between reruns");
    }
}

#[test]
fn failed_check_exits_with_one() {
    // Starting the growth window at t = 0 puts the transient inside the
    // frozen log^2 band, which it does not fit.
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::preset(Experiment::ClassicalGrowth);
    cfg.t_max = 1e3;
    cfg.growth_window_start = 0.0;
    let path = write_config(tmp.path(), &cfg);
    let out = tmp.path().join("runs");
    let o = anharm(&["classical-growth", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(1), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("FAIL ")), "{stdout}");
    let dirs = only_run_dir(&out, "classical-growth");
    let manifest = RunManifest::load(&dirs[0].join("manifest.json")).unwrap();
    assert!(!manifest.all_passed());
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::preset(Experiment::FlowNorm);
    let path = write_config(tmp.path(), &cfg);
    let p = path.to_str().unwrap();

    // Config for a different experiment.
    let o = anharm(&["classical-growth", "--config", p]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiment"));

    // Invalid override.
    let o = anharm(&["flow-norm", "--config", p, "--tmax=-3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("t_max"));

    // Missing file, unknown subcommand, malformed JSON.
    assert_eq!(anharm(&["flow-norm", "--config", "/nonexistent/cfg.json"]).status.code(), Some(2));
    assert_eq!(anharm(&["warp-drive", "--config", p]).status.code(), Some(2));
    let broken = tmp.path().join("broken.json");
    std::fs::write(&broken, "{ not json").unwrap();
    assert_eq!(anharm(&["flow-norm", "--config", broken.to_str().unwrap()]).status.code(), Some(2));

    // Too short to fit the growth law.
    let cls = write_config(tmp.path(), &RunConfig::preset(Experiment::ClassicalGrowth));
    let o = anharm(&["classical-growth", "--config", cls.to_str().unwrap(), "--tmax", "1", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = Command::new(env!("CARGO_BIN_EXE_anharm"))
        .args(["flow-norm", "--config", p])
        .env("ANHARM_JOBS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ANHARM_JOBS"));
}
