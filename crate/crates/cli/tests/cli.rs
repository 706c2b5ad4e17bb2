use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ovanet_cli::experiment::RUN_FILES;
use ovanet_cli::sweep::{self, SweepResult};
use ovanet_cli::{execute, ExperimentConfig};

/// Small, quick task shared by every test here.
const SMALL: &str = r#"
[data]
shared = 3
source_private = 1
target_private = 2

[data.synthetic]
total_classes = 6
dim = 4
samples_per_class = 20
class_center_scale = 10.0
min_center_separation = 6.0

[model]
hidden_dims = [16]
feature_dim = 8

[train]
steps = 60

[sweep]
seeds = [0, 1, 2]
"#;

fn ovanet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovanet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    let body = format!("name = \"{name}\"\nout_dir = {:?}\n{extra}\n{SMALL}", dir.join("out"));
    fs::write(&path, body).unwrap();
    path
}

fn small_config(dir: &Path, name: &str) -> ExperimentConfig {
    ExperimentConfig::load(write_config(dir, name, "")).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn sweep_csv(path: &Path) -> SweepResult {
    SweepResult::read_csv(fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn run_writes_every_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "files", "");
    let out = ovanet(&["--quiet", "--config", cfg.to_str().unwrap(), "run"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run = dir.path().join("out/files");
    for f in RUN_FILES {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let resolved = ExperimentConfig::load(run.join("config.resolved")).unwrap();
    assert_eq!(resolved.train.steps, 60);
}

#[test]
fn untrained_model_accepts_everything() {
    // zero-initialised one-vs-all heads sit exactly on the 0.5 boundary
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), "untrained");
    cfg.train.steps = 0;
    let m = execute(&cfg).unwrap().metrics;
    assert_eq!(m.unk_accuracy, Some(0.0));
    assert_eq!(m.h_score, Some(0.0));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "same", "seed = 5");
    let mut seen = Vec::new();
    for out_dir in ["a", "b"] {
        let out_dir = dir.path().join(out_dir);
        let out = ovanet(&[
            "--quiet",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "run",
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        let run = out_dir.join("same");
        seen.push((
            fs::read(run.join("metrics.json")).unwrap(),
            fs::read(run.join("history.csv")).unwrap(),
            fs::read(run.join("checkpoint.bin")).unwrap(),
        ));
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.toml");
    fs::write(&cfg, "name = \"x\"\n\n[train]\nlamda = 0.2\n").unwrap();
    let out = ovanet(&["--config", cfg.to_str().unwrap(), "run"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("train") && msg.contains("line 4"), "{msg}");

    let cfg = dir.path().join("nofile.toml");
    fs::write(&cfg, "[data.files]\nsource = \"nowhere/s.csv\"\ntarget = \"nowhere/t.csv\"\n").unwrap();
    let out = ovanet(&["--config", cfg.to_str().unwrap(), "run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("s.csv"), "{}", stderr(&out));

    let cfg = dir.path().join("split.toml");
    fs::write(&cfg, "[data]\nshared = 30\n").unwrap();
    assert_eq!(ovanet(&["--config", cfg.to_str().unwrap(), "run"]).status.code(), Some(1));
}

#[test]
fn diverging_training_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "diverge", "");
    let body = fs::read_to_string(&cfg).unwrap().replace("steps = 60", "steps = 60\nlr0 = 1e12");
    fs::write(&cfg, body).unwrap();
    let out = ovanet(&["--quiet", "--config", cfg.to_str().unwrap(), "run"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"));
}

#[test]
fn generated_files_reproduce_the_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gen", "");
    let out = ovanet(&["--quiet", "--config", cfg.to_str().unwrap(), "gen-data"]);
    assert!(out.status.success(), "{}", stderr(&out));

    let synthetic = small_config(dir.path(), "gen");
    let mut from_files = synthetic.clone();
    from_files.data.synthetic = None;
    from_files.data.files = Some(ovanet_cli::config::FileSource {
        source: dir.path().join("out/gen/source.csv"),
        target: dir.path().join("out/gen/target.csv"),
    });
    let a = execute(&synthetic).unwrap().metrics;
    let b = execute(&from_files).unwrap().metrics;
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grad", "");
    let out = ovanet(&["--quiet", "--config", cfg.to_str().unwrap(), "gradcheck", "--models", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn sweep_row_counts_follow_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grid", "");
    let cfg = cfg.to_str().unwrap();

    let out = ovanet(&["--quiet", "--config", cfg, "--seed", "0", "sweep-openness", "--counts", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let res = sweep_csv(&dir.path().join("out/grid/sweep_openness.csv"));
    assert_eq!(res.rows.len(), 1);
    assert!(res.rows[0].outcome.as_ref().unwrap().baseline.is_some());

    let out = ovanet(&["--quiet", "--config", cfg, "sweep-openness", "--counts", "1,2,3,4,5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let res = sweep_csv(&dir.path().join("out/grid/sweep_openness.csv"));
    assert_eq!(res.rows.len(), 15);
    assert_eq!(res.values(), ["1", "2", "3", "4", "5"]);

    let out = ovanet(&["--quiet", "--config", cfg, "ablate"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let res = sweep_csv(&dir.path().join("out/grid/ablation.csv"));
    assert_eq!(res.rows.len(), 12);
    assert_eq!(res.values().len(), 4);
}

#[test]
fn zero_lambda_matches_the_entropy_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let base = small_config(dir.path(), "lambda0");
    let lambda = sweep::lambda_sweep(&base, &[0.0], &[1]).unwrap();
    let ablation = sweep::ablation_grid(&base, &[1]).unwrap();
    let off = sweep::ablation_label(true, false);
    let a = &lambda.rows[0].outcome.as_ref().unwrap().ovanet;
    let b = ablation
        .ok_rows()
        .find(|(r, _)| r.value == off)
        .map(|(_, m)| &m.ovanet)
        .unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn sweeps_are_independent_of_scheduling() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = small_config(dir.path(), "sched");
    base.sweep.parallel = false;
    let serial = sweep::openness_sweep(&base, &[1, 2], &[0, 3]).unwrap();
    base.sweep.parallel = true;
    let parallel = sweep::openness_sweep(&base, &[1, 2], &[0, 3]).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    serial.write_csv(&mut a).unwrap();
    parallel.write_csv(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn known_class_sweep_grows_the_class_budget() {
    let dir = tempfile::tempdir().unwrap();
    let base = small_config(dir.path(), "known");
    let res = sweep::known_class_sweep(&base, &[2, 8], &[0]).unwrap();
    assert_eq!(res.failures().count(), 0);
    let m = &res.rows[1].outcome.as_ref().unwrap().ovanet;
    // 8 shared classes plus the unknown row
    assert_eq!(m.per_class.len(), 9);
}
