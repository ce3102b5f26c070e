use std::fs;
use std::path::Path;
use std::process::Command;

use sketch_cli::output::{read_eval, read_metrics, read_provenance_line};
use sketch_cli::pipeline::{run, RunOptions, FINAL_CHECKPOINT, METRICS_FILE, PERIODIC_CHECKPOINT};
use sketch_cli::spec::ExperimentSpec;
use sketch_core::baselines::Condition;

fn spec(out: &Path, extra: &str) -> ExperimentSpec {
    let text = format!(
        r#"
name = "t"
mode = "multitask"
seed = 2
output_dir = "{}"
{extra}
[tasks]
env = "craft"
max_len = 2
[trainer]
batch_size = 400
hidden_dim = 16
max_episodes = 6000
[eval]
episodes = 20
"#,
        out.display()
    );
    ExperimentSpec::from_toml(&text).unwrap()
}

#[test]
fn multitask_writes_one_row_group_per_update() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), "");
    let report = run(&s, &RunOptions::default()).unwrap();
    let metrics = report.dir.join(METRICS_FILE);
    let records = read_metrics(&metrics).unwrap();
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r.rows.len() == 4));
    let prov = read_provenance_line(&metrics).unwrap().unwrap();
    assert!(prov.contains(&s.hash().unwrap()) && prov.contains("seed=2"));
    assert!(report.dir.join(FINAL_CHECKPOINT).exists());
    let summary = fs::read_to_string(report.dir.join("summary.toml")).unwrap();
    assert!(summary.contains("wall_clock_seconds") && summary.contains("make rope"));
    assert_eq!(report.eval_rows.len(), 4);
}

#[test]
fn same_spec_and_seed_give_identical_metrics_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(&spec(a.path(), ""), &RunOptions::default()).unwrap();
    let rb = run(&spec(b.path(), ""), &RunOptions::default()).unwrap();
    let ma = fs::read(ra.dir.join(METRICS_FILE)).unwrap();
    assert_eq!(ma, fs::read(rb.dir.join(METRICS_FILE)).unwrap());
}

#[test]
fn resume_from_periodic_checkpoint_reproduces_metrics() {
    let full = tempfile::tempdir().unwrap();
    let reference = run(&spec(full.path(), ""), &RunOptions::default()).unwrap();
    let expected = fs::read(reference.dir.join(METRICS_FILE)).unwrap();

    // Interrupted after the last periodic checkpoint: the log runs past it.
    let cut = tempfile::tempdir().unwrap();
    let dir = run(&spec(cut.path(), ""), &RunOptions::default()).unwrap().dir;
    fs::remove_file(dir.join(FINAL_CHECKPOINT)).unwrap();
    assert!(dir.join(PERIODIC_CHECKPOINT).exists());
    let logged = read_metrics(&dir.join(METRICS_FILE)).unwrap().len();
    assert!(logged % 50 != 0, "the tail after the checkpoint must be replayed");
    let resumed = run(&spec(cut.path(), ""), &RunOptions { resume: true, progress_every: 0 }).unwrap();
    assert_eq!(fs::read(resumed.dir.join(METRICS_FILE)).unwrap(), expected);
}

#[test]
fn zero_shot_from_checkpoint_reports_held_out_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut train = spec(dir.path(), "");
    train.tasks.max_len = None;
    train.trainer.max_episodes = Some(2000);
    let trained = run(&train, &RunOptions::default()).unwrap();

    let text = format!(
        "name = \"z\"\nmode = \"zero_shot\"\noutput_dir = \"{}\"\ncheckpoint = \"{}\"\n[tasks]\nenv = \"craft\"\n[eval]\nepisodes = 10\n",
        dir.path().display(),
        trained.dir.join(FINAL_CHECKPOINT).display()
    );
    let z = ExperimentSpec::from_toml(&text).unwrap();
    let report = run(&z, &RunOptions::default()).unwrap();
    let rows = read_eval(&report.dir.join("eval.csv")).unwrap();
    let tasks: Vec<&str> = rows.iter().map(|r| r.task.as_str()).collect();
    assert_eq!(tasks, ["make bed", "make axe"]);
    assert!(rows.iter().all(|r| r.condition == Condition::ZeroShot && r.model == "modular"));
}

#[test]
fn binary_reports_invalid_spec_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "name = \"x\"\nmode = \"multitask\"\n[trainer]\ngamma = 1.5\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sketch"))
        .args(["train", "--spec"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
}

#[test]
fn binary_train_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(dir.path(), "");
    let path = dir.path().join("s.toml");
    fs::write(&path, s.to_toml().unwrap()).unwrap();
    let bin = env!("CARGO_BIN_EXE_sketch");
    let train = Command::new(bin)
        .args(["train", "--deterministic", "--progress", "0", "--seed", "4", "--spec"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let metrics = dir.path().join("t").join(METRICS_FILE);
    assert!(read_provenance_line(&metrics).unwrap().unwrap().contains("seed=4"));
    let report = Command::new(bin).arg("report").arg(dir.path().join("t")).output().unwrap();
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("modular"));
}
