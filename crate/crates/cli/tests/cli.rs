use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use taskspace::rng::sha256_hex;

const TINY: &str = r#"{
  "seed": 5,
  "corpus": {"synthetic": {
    "phenomena": ["subject_verb_agreement", "npi_licensing"],
    "paradigms_per": [2, 1],
    "pairs_per": 40
  }},
  "pretrain_corpus": {"n_sentences": 300},
  "model": {"n_layers": 1, "d_model": 16, "n_heads": 2, "d_ffn": 32},
  "pretrain": {"epochs": 2, "checkpoint_schedule": [0, 1, 2]},
  "probe": {"max_steps": 2, "permutations": 50}
}"#;

fn taskspace(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskspace"))
        .args(args)
        .env("TASKSPACE_LOG", "warn")
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = taskspace(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn with_config(json: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), json).unwrap();
    dir
}

fn tiny_config(edit: impl FnOnce(&mut serde_json::Value)) -> tempfile::TempDir {
    let mut v: serde_json::Value = serde_json::from_str(TINY).unwrap();
    edit(&mut v);
    with_config(&v.to_string())
}

fn hashes(dir: &Path, ext: &str) -> Vec<(PathBuf, String)> {
    taskspace_cli::manifest::files_under(dir)
        .unwrap()
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .map(|p| {
            let h = sha256_hex(&std::fs::read(&p).unwrap());
            (p.strip_prefix(dir).unwrap().to_path_buf(), h)
        })
        .collect()
}

fn full_pipeline(dir: &Path) {
    for verb in [
        &["generate", "--config", "run.json"][..],
        &["pretrain", "--config", "run.json"],
        &["probe", "--config", "run.json", "--checkpoint", "all", "--jobs", "2"],
        &["analyze", "--config", "run.json"],
        &["report", "--config", "run.json"],
    ] {
        ok(dir, verb);
    }
}

#[test]
fn invalid_config_exits_with_code_2() {
    let dir = with_config(r#"{"seed": 1, "no_such_field": 3}"#);
    assert_eq!(taskspace(dir.path(), &["generate", "--config", "run.json"]).status.code(), Some(2));
    let dir = with_config(r#"{"pretrain": {"lr": -1.0}}"#);
    assert_eq!(taskspace(dir.path(), &["generate", "--config", "run.json"]).status.code(), Some(2));
    assert_eq!(taskspace(dir.path(), &["no-such-verb"]).status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_code_4() {
    let dir = tiny_config(|_| {});
    for verb in ["pretrain", "probe", "analyze", "report"] {
        let out = taskspace(dir.path(), &[verb, "--config", "run.json"]);
        assert_eq!(out.status.code(), Some(4), "{verb}");
    }
}

#[test]
fn generate_is_deterministic_and_default_has_ten_paradigms() {
    let a = tiny_config(|_| {});
    let b = tiny_config(|_| {});
    ok(a.path(), &["generate", "--config", "run.json"]);
    ok(b.path(), &["generate", "--config", "run.json"]);
    let suite = |d: &Path| hashes(&d.join("taskspace-run/suite"), "jsonl");
    assert_eq!(suite(a.path()).len(), 3);
    assert_eq!(suite(a.path()), suite(b.path()));

    let d = with_config(r#"{"seed": 1}"#);
    ok(d.path(), &["generate", "--config", "run.json"]);
    assert_eq!(suite(d.path()).len(), 10);
}

#[test]
fn pretrain_resume_matches_a_straight_run() {
    let straight = tiny_config(|_| {});
    ok(straight.path(), &["generate", "--config", "run.json"]);
    ok(straight.path(), &["pretrain", "--config", "run.json"]);

    let resumed = tiny_config(|v| {
        v["pretrain"]["epochs"] = 1.into();
        v["pretrain"]["checkpoint_schedule"] = serde_json::json!([0, 1]);
    });
    ok(resumed.path(), &["generate", "--config", "run.json"]);
    ok(resumed.path(), &["pretrain", "--config", "run.json"]);
    std::fs::write(resumed.path().join("run.json"), TINY).unwrap();
    ok(resumed.path(), &["pretrain", "--config", "run.json"]);

    let ck = |d: &Path| std::fs::read(d.join("taskspace-run/pretrain/checkpoints/epoch_002.ckpt")).unwrap();
    assert_eq!(ck(straight.path()), ck(resumed.path()));
    let loss = |d: &Path| std::fs::read_to_string(d.join("taskspace-run/pretrain/loss.csv")).unwrap();
    assert_eq!(loss(straight.path()), loss(resumed.path()));
}

#[test]
fn zero_epochs_keeps_only_the_initialization() {
    let dir = tiny_config(|v| {
        v["pretrain"]["epochs"] = 0.into();
        v["pretrain"]["checkpoint_schedule"] = serde_json::json!([0]);
    });
    ok(dir.path(), &["generate", "--config", "run.json"]);
    ok(dir.path(), &["pretrain", "--config", "run.json"]);
    let ckpts = hashes(&dir.path().join("taskspace-run/pretrain/checkpoints"), "ckpt");
    assert_eq!(ckpts.len(), 1);
    assert!(ckpts[0].0.ends_with("epoch_000.ckpt"));
}

#[test]
fn gradient_only_probe_writes_no_transfer_space() {
    let dir = tiny_config(|_| {});
    ok(dir.path(), &["generate", "--config", "run.json"]);
    ok(dir.path(), &["pretrain", "--config", "run.json"]);
    ok(dir.path(), &["probe", "--config", "run.json", "--gradient-only"]);
    let probe = dir.path().join("taskspace-run/probe/epoch_002");
    assert!(probe.join("gradients.json").is_file());
    assert_eq!(hashes(&probe.join("gradients"), "tsgd").len(), 3);
    assert!(!probe.join("tts.csv").exists());
    ok(dir.path(), &["analyze", "--config", "run.json"]);
    let analysis = dir.path().join("taskspace-run/analysis/epoch_002");
    assert!(!analysis.join("tts.csv").exists());
    assert!(analysis.join("gts_cs.csv").is_file());
}

#[test]
fn full_pipeline_artifacts_and_reproducibility() {
    let a = tiny_config(|_| {});
    full_pipeline(a.path());
    let root = a.path().join("taskspace-run");

    let loss = std::fs::read_to_string(root.join("pretrain/loss.csv")).unwrap();
    let rows: Vec<&str> = loss.lines().skip(1).collect();
    let last_step: usize = rows.last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert_eq!(rows.len(), last_step, "one loss row per optimizer step");
    let ckpt = taskspace::Checkpoint::load(root.join("pretrain/checkpoints/epoch_002.ckpt")).unwrap();
    assert_eq!(ckpt.step as usize, last_step);

    for epoch in 0..=2 {
        let probe = root.join(format!("probe/epoch_{epoch:03}"));
        let tts = std::fs::read_to_string(probe.join("tts.csv")).unwrap();
        assert_eq!(tts.lines().count(), 4, "header plus one row per task");
    }

    let adir = root.join("analysis/epoch_002");
    let svg = std::fs::read_to_string(adir.join("heatmaps/tts.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="cell""#).count(), 9);
    let corr = std::fs::read_to_string(adir.join("correlations.csv")).unwrap();
    assert_eq!(corr.lines().count(), 1 + 9);
    let series = std::fs::read_to_string(root.join("analysis/series.csv")).unwrap();
    assert_eq!(series.lines().count(), 1 + 3);
    assert!(root.join("report.md").is_file());

    let b = tiny_config(|_| {});
    full_pipeline(b.path());
    let other = b.path().join("taskspace-run");
    for ext in ["csv", "svg"] {
        let (x, y) = (hashes(&root, ext), hashes(&other, ext));
        assert!(!x.is_empty());
        assert_eq!(x, y, "{ext} artifacts differ between runs");
    }
}
