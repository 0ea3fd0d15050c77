//! End-to-end tests of the `fsv` binary: exit codes, artifact layout,
//! manifest contents, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fsv() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fsv"));
    cmd.env_remove("FSV_SEED");
    cmd
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn fsv");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(cmd: &mut Command, code: i32) -> String {
    let out = cmd.output().expect("spawn fsv");
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Tiny bundle shared by the pipeline tests: 2 base + 4 novel classes,
/// 8 videos each, small dims, a 30-video tagged corpus.
fn synth_sets(out: &Path) -> Vec<String> {
    let pairs = [
        ("synth_base_classes", "2"),
        ("synth_val_classes", "0"),
        ("synth_novel_classes", "4"),
        ("synth_videos_per_class", "8"),
        ("synth_clips_per_video", "2"),
        ("synth_d_v", "6"),
        ("synth_d_t", "6"),
        ("synth_d_y", "4"),
        ("synth_sigma_sep", "4"),
        ("synth_sigma_noise", "1"),
        ("synth_corpus_size", "30"),
        ("synth_distractor_frac", "0.5"),
    ];
    let mut args = vec!["synth".to_string(), "--out".into(), out.display().to_string()];
    for (k, v) in pairs {
        args.push("--set".into());
        args.push(format!("{k}={v}"));
    }
    args
}

fn make_bundle(dir: &Path) {
    run_ok(fsv().args(synth_sets(dir)));
}

/// Fast evaluation settings for the shared bundle.
fn eval_args(data: &Path, out: &Path) -> Vec<String> {
    [
        "eval",
        "--data",
        &data.display().to_string(),
        "--out",
        &out.display().to_string(),
        "--episodes",
        "2",
        "--n-way",
        "2",
        "--set",
        "novel_queries=3",
        "--set",
        "clip_samples=2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn synth_writes_a_complete_reproducible_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    make_bundle(&a);
    make_bundle(&b);

    for name in [
        "features.tsv",
        "labels.tsv",
        "classes.tsv",
        "splits.json",
        "tags.tsv",
        "word_embeddings.tsv",
        "class_embeddings.tsv",
        "ground_truth.json",
    ] {
        assert!(a.join(name).exists(), "{name} missing from the bundle");
        let (ba, bb) = (std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
        assert_eq!(ba, bb, "{name} differs between identical runs");
    }

    let manifest = read_json(&a.join("manifest.json"));
    let other = read_json(&b.join("manifest.json"));
    assert_eq!(
        manifest["artifacts"], other["artifacts"],
        "artifact checksums differ between identical runs"
    );
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let artifacts = manifest["artifacts"].as_object().unwrap();
    assert_eq!(artifacts.len(), 8);
    for (_, hash) in artifacts {
        assert_eq!(hash.as_str().unwrap().len(), 64);
    }
}

#[test]
fn unknown_config_keys_exit_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 1\nbogus_key = 3\n").unwrap();
    let stderr = run_err(
        fsv().args(["synth", "--config", &cfg.display().to_string()]),
        2,
    );
    assert!(stderr.contains("bogus_key"), "stderr: {stderr}");
    assert!(stderr.contains(":2:"), "stderr should cite the line: {stderr}");

    let stderr = run_err(fsv().args(["synth", "--set", "nonsense=1"]), 2);
    assert!(stderr.contains("nonsense"), "stderr: {stderr}");
}

#[test]
fn eval_writes_report_csv_and_manifest_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_bundle(&data);

    let (out_a, out_b) = (dir.path().join("ra"), dir.path().join("rb"));
    run_ok(fsv().args(eval_args(&data, &out_a)));
    run_ok(fsv().args(eval_args(&data, &out_b)));

    let report = read_json(&out_a.join("report.json"));
    let novel = report["mean_novel_acc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&novel));
    assert!(report.get("mean_base_acc").is_none(), "plain run must not report base accuracy");
    assert_eq!(report["episodes"].as_array().unwrap().len(), 2);

    let csv = std::fs::read_to_string(out_a.join("episodes.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "episode,novel_acc");
    assert_eq!(lines.len(), 3);

    for name in ["report.json", "episodes.csv"] {
        let (ba, bb) = (
            std::fs::read(out_a.join(name)).unwrap(),
            std::fs::read(out_b.join(name)).unwrap(),
        );
        assert_eq!(ba, bb, "{name} differs between identical runs");
    }
    let (ma, mb) = (
        read_json(&out_a.join("manifest.json")),
        read_json(&out_b.join("manifest.json")),
    );
    assert_eq!(ma["artifacts"], mb["artifacts"]);
}

#[test]
fn gfsv_report_carries_base_and_harmonic_mean() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_bundle(&data);
    let out = dir.path().join("run");
    let mut args = eval_args(&data, &out);
    args.push("--gfsv".into());
    args.push("--set".into());
    args.push("base_queries=2".into());
    run_ok(fsv().args(args));

    let report = read_json(&out.join("report.json"));
    assert!(report["mean_novel_acc"].is_f64());
    assert!(report["mean_base_acc"].is_f64());
    assert!(report["mean_hm"].is_f64());
    let csv = std::fs::read_to_string(out.join("episodes.csv")).unwrap();
    assert!(csv.starts_with("episode,novel_acc,base_acc,hm\n"));
}

#[test]
fn ablation_flags_route_raw_retrieved_clips() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_bundle(&data);
    let out = dir.path().join("run");
    let mut args = eval_args(&data, &out);
    args.extend([
        "--use-retrieval".to_string(),
        "--use-best-clips".into(),
        "false".into(),
        "--set".into(),
        "retrieval_candidates=3".into(),
        "--set".into(),
        "retrieval_clips_per_candidate=2".into(),
    ]);
    run_ok(fsv().args(args));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["use_retrieval"], "true");
    assert_eq!(manifest["config"]["use_best_clips"], "false");
}

#[test]
fn missing_dataset_files_exit_3_naming_them() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty");
    std::fs::create_dir_all(&data).unwrap();
    let out = dir.path().join("run");
    let stderr = run_err(fsv().args(eval_args(&data, &out)), 3);
    assert!(stderr.contains("features.tsv"), "stderr: {stderr}");

    let stderr = run_err(
        fsv().args([
            "eval",
            "--data",
            &data.display().to_string(),
            "--use-gan",
        ]),
        3,
    );
    assert!(stderr.contains("class_embeddings.tsv"), "stderr: {stderr}");
}

#[test]
fn missing_generator_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_bundle(&data);
    let out = dir.path().join("run");
    let mut args = eval_args(&data, &out);
    let ckpt = dir.path().join("no_such.ckpt");
    args.extend(["--gan-checkpoint".to_string(), ckpt.display().to_string()]);
    let stderr = run_err(fsv().args(args), 3);
    assert!(stderr.contains("no_such.ckpt"), "stderr: {stderr}");
}

#[test]
fn train_base_and_retrieve_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_bundle(&data);

    let out = dir.path().join("head");
    run_ok(fsv().args([
        "train-base",
        "--data",
        &data.display().to_string(),
        "--out",
        &out.display().to_string(),
    ]));
    assert!(out.join("base_head.tsv").exists());
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "train-base");
    assert!(manifest["artifacts"]["base_head.tsv"].is_string());

    let out = dir.path().join("pseudo");
    run_ok(fsv().args([
        "retrieve",
        "--data",
        &data.display().to_string(),
        "--out",
        &out.display().to_string(),
        "--set",
        "retrieval_candidates=3",
        "--set",
        "retrieval_clips_per_candidate=2",
        "--set",
        "retrieval_best=2",
    ]));
    assert!(out.join("pseudo_set.tsv").exists());
}

#[test]
fn train_gan_then_eval_reuses_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_bundle(&data);

    let gan_out = dir.path().join("gan");
    run_ok(fsv().args([
        "train-gan",
        "--data",
        &data.display().to_string(),
        "--out",
        &gan_out.display().to_string(),
        "--set",
        "gan_epochs=1",
        "--set",
        "gan_batch_size=8",
    ]));
    assert!(gan_out.join("gan.ckpt").exists());
    let log = std::fs::read_to_string(gan_out.join("gan_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2, "header plus one epoch");

    let out = dir.path().join("run");
    let mut args = eval_args(&data, &out);
    args.extend([
        "--gan-checkpoint".to_string(),
        gan_out.join("gan.ckpt").display().to_string(),
        "--set".into(),
        "generated_per_class=5".into(),
    ]);
    run_ok(fsv().args(args));
    let report = read_json(&out.join("report.json"));
    assert!(report["mean_novel_acc"].is_f64());
}

#[test]
fn single_value_sweep_matches_the_plain_eval_metric() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_bundle(&data);

    let eval_out = dir.path().join("eval");
    run_ok(fsv().args(eval_args(&data, &eval_out)));
    let report = read_json(&eval_out.join("report.json"));
    let expect = report["mean_novel_acc"].as_f64().unwrap();

    let sweep_out = dir.path().join("sweep");
    let mut args = eval_args(&data, &sweep_out);
    args[0] = "sweep".into();
    args.extend(["--param".to_string(), "n_way".into(), "--values".into(), "2".into()]);
    run_ok(fsv().args(args));

    let csv = std::fs::read_to_string(sweep_out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n_way,mean_novel_acc");
    assert_eq!(lines.len(), 2);
    let (value, metric) = lines[1].split_once(',').unwrap();
    assert_eq!(value, "2");
    assert_eq!(metric.parse::<f64>().unwrap(), expect);
}

#[test]
fn multi_value_sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    make_bundle(&data);
    let out = dir.path().join("sweep");
    let mut args = eval_args(&data, &out);
    args[0] = "sweep".into();
    args.extend(["--param".to_string(), "n_way".into(), "--values".into(), "2,3,4".into()]);
    run_ok(fsv().args(args));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let stderr = run_err(
        fsv().args([
            "sweep",
            "--data",
            &data.display().to_string(),
            "--out",
            &out.display().to_string(),
            "--param",
            "n_way",
            "--values",
            "0",
        ]),
        2,
    );
    assert!(stderr.contains("0"), "stderr: {stderr}");
}

#[test]
fn seed_precedence_is_flag_file_env_default() {
    let dir = tempfile::tempdir().unwrap();

    let out: PathBuf = dir.path().join("env");
    let mut cmd = fsv();
    cmd.env("FSV_SEED", "7");
    run_ok(cmd.args(synth_sets(&out)));
    assert_eq!(read_json(&out.join("manifest.json"))["seed"], 7);

    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 8\n").unwrap();
    let out = dir.path().join("file");
    let mut cmd = fsv();
    cmd.env("FSV_SEED", "7");
    let mut args = synth_sets(&out);
    args.extend(["--config".to_string(), cfg.display().to_string()]);
    run_ok(cmd.args(args));
    assert_eq!(read_json(&out.join("manifest.json"))["seed"], 8);

    let out = dir.path().join("flag");
    let mut cmd = fsv();
    cmd.env("FSV_SEED", "7");
    let mut args = synth_sets(&out);
    args.extend([
        "--config".to_string(),
        cfg.display().to_string(),
        "--seed".into(),
        "9".into(),
    ]);
    run_ok(cmd.args(args));
    assert_eq!(read_json(&out.join("manifest.json"))["seed"], 9);

    let mut cmd = fsv();
    cmd.env("FSV_SEED", "not-a-number");
    let stderr = run_err(cmd.args(synth_sets(&dir.path().join("bad"))), 2);
    assert!(stderr.contains("FSV_SEED"), "stderr: {stderr}");
}
