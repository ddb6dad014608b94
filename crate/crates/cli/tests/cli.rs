//! End-to-end checks of the `medformer` binary: artifact layout, exit codes,
//! determinism across invocations, and eval/train agreement.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn medformer(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medformer"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path, name: &str, seed: u64) {
    let out = medformer(
        &[
            "synth-gen",
            "--out",
            name,
            "--subjects",
            "5",
            "--samples-per-subject",
            "6",
            "--timesteps",
            "32",
            "--channels",
            "2",
            "--classes",
            "2",
            "--difficulty",
            "0.2",
            "--seed",
            &seed.to_string(),
        ],
        dir,
    );
    assert!(out.status.success(), "synth-gen failed: {}", String::from_utf8_lossy(&out.stderr));
}

const TINY_TRAIN: &[&str] = &[
    "train",
    "--dataset",
    "tiny.mtsd",
    "--outdir",
    "out",
    "--seeds",
    "41",
    "--patch-len",
    "4,8",
    "--model-dim",
    "16",
    "--layers",
    "1",
    "--ffn-dim",
    "32",
    "--heads",
    "2",
    "--max-epochs",
    "2",
    "--patience",
    "2",
    "--batch-size",
    "8",
    "--lr",
    "0.001",
];

fn run_dir(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("out");
    let mut entries: Vec<_> = fs::read_dir(&out)
        .expect("out dir exists")
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    assert_eq!(entries.len(), 1, "expected one run dir, found {:?}", entries);
    entries.remove(0)
}

#[test]
fn synth_same_seed_writes_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "a.mtsd", 9);
    synth(tmp.path(), "b.mtsd", 9);
    assert_eq!(
        fs::read(tmp.path().join("a.mtsd")).unwrap(),
        fs::read(tmp.path().join("b.mtsd")).unwrap()
    );
    synth(tmp.path(), "c.mtsd", 10);
    assert_ne!(
        fs::read(tmp.path().join("a.mtsd")).unwrap(),
        fs::read(tmp.path().join("c.mtsd")).unwrap()
    );
}

#[test]
fn train_writes_artifacts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "tiny.mtsd", 3);

    let out = medformer(TINY_TRAIN, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = run_dir(tmp.path());
    for artifact in ["resolved.config", "checkpoint_s41.bin", "runlog_s41.csv", "metrics.tsv"] {
        assert!(dir.join(artifact).exists(), "missing {}", artifact);
    }
    let checkpoint = fs::read(dir.join("checkpoint_s41.bin")).unwrap();
    let runlog = fs::read(dir.join("runlog_s41.csv")).unwrap();

    // identical invocation lands in the same run dir with identical bytes
    let out = medformer(TINY_TRAIN, tmp.path());
    assert!(out.status.success());
    assert_eq!(fs::read(dir.join("checkpoint_s41.bin")).unwrap(), checkpoint);
    assert_eq!(fs::read(dir.join("runlog_s41.csv")).unwrap(), runlog);
}

#[test]
fn eval_reproduces_logged_test_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "tiny.mtsd", 5);
    let out = medformer(TINY_TRAIN, tmp.path());
    assert!(out.status.success());
    let dir = run_dir(tmp.path());

    let metrics = fs::read_to_string(dir.join("metrics.tsv")).unwrap();
    let seed_row = metrics
        .lines()
        .find(|l| l.starts_with("41\t"))
        .expect("seed row")
        .trim_start_matches("41\t")
        .to_string();

    let out = medformer(
        &[
            "eval",
            "--checkpoint",
            dir.join("checkpoint_s41.bin").to_str().unwrap(),
            "--config",
            dir.join("resolved.config").to_str().unwrap(),
            "--use-split",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let eval_row = stdout.lines().last().expect("metrics line");
    assert_eq!(eval_row, seed_row, "eval must reproduce the logged test metrics exactly");
}

#[test]
fn missing_dataset_exits_2_without_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = medformer(
        &["train", "--dataset", "nope.mtsd", "--outdir", "out"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "single-line error: {:?}", stderr);
    assert!(stderr.starts_with("error: config:"));
    assert!(!tmp.path().join("out").exists(), "no partial outputs");
}

#[test]
fn bad_flag_value_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "tiny.mtsd", 7);
    let out = medformer(
        &["train", "--dataset", "tiny.mtsd", "--aug", "blur0.5"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_emits_one_row_per_t_and_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let out = medformer(
        &[
            "bench",
            "--t-values",
            "32,64",
            "--repeats",
            "1",
            "--warmups",
            "0",
            "--dim",
            "16",
            "--heads",
            "2",
            "--outdir",
            "out",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = run_dir(tmp.path());
    let csv = fs::read_to_string(dir.join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5, "header + 2 T values x 2 modes: {:?}", lines);
    assert!(lines[0].starts_with("T,mode,pair_count_formula,pair_count_measured,wall_time_ns_median"));
    assert!(lines[1].starts_with("32,naive,"));
    assert!(lines[2].starts_with("32,two_stage,"));
}

#[test]
fn ablate_emits_four_variant_rows() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "tiny.mtsd", 11);
    let out = medformer(
        &[
            "ablate",
            "--dataset",
            "tiny.mtsd",
            "--outdir",
            "out",
            "--seeds",
            "41",
            "--patch-len",
            "4,8",
            "--model-dim",
            "16",
            "--layers",
            "1",
            "--ffn-dim",
            "32",
            "--heads",
            "2",
            "--max-epochs",
            "1",
            "--patience",
            "1",
            "--batch-size",
            "8",
        ],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = run_dir(tmp.path());
    let csv = fs::read_to_string(dir.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    for (line, variant) in lines[1..].iter().zip([
        "full",
        "no_inter_attention",
        "no_augmentation",
        "single_channel_patching",
    ]) {
        assert!(line.starts_with(variant), "{}", line);
        assert_eq!(line.split(',').count(), 13);
    }
}

#[test]
fn parallel_seed_runs_match_sequential() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "tiny.mtsd", 17);
    let base: Vec<&str> = TINY_TRAIN
        .iter()
        .copied()
        .map(|a| if a == "41" { "41,42" } else { a })
        .collect();
    let out = medformer(&base, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sequential_dir = run_dir(tmp.path());
    let seq_41 = fs::read(sequential_dir.join("checkpoint_s41.bin")).unwrap();
    let seq_42 = fs::read(sequential_dir.join("checkpoint_s42.bin")).unwrap();
    let seq_metrics = fs::read(sequential_dir.join("metrics.tsv")).unwrap();
    fs::remove_dir_all(tmp.path().join("out")).unwrap();

    let mut parallel = base.clone();
    parallel.push("--parallel");
    let out = medformer(&parallel, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parallel_dir = run_dir(tmp.path());
    assert_eq!(fs::read(parallel_dir.join("checkpoint_s41.bin")).unwrap(), seq_41);
    assert_eq!(fs::read(parallel_dir.join("checkpoint_s42.bin")).unwrap(), seq_42);
    assert_eq!(fs::read(parallel_dir.join("metrics.tsv")).unwrap(), seq_metrics);
}

#[test]
fn rerun_from_resolved_config_reaches_same_run_dir() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "tiny.mtsd", 13);
    let out = medformer(TINY_TRAIN, tmp.path());
    assert!(out.status.success());
    let dir = run_dir(tmp.path());
    let resolved = dir.join("resolved.config");

    // re-running purely from the snapshot resolves to the same run id
    let out = medformer(
        &["train", "--config", resolved.to_str().unwrap()],
        tmp.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dirs: Vec<_> = fs::read_dir(tmp.path().join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(dirs.len(), 1, "snapshot rerun must not create a second run dir");
}
