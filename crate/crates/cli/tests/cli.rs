use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use annoconsist::synthgen::load_dataset;
use annoconsist::{tight_box, InstancePrediction};
use annoconsist_cli::predfile::{self, SceneEntry};

const SMALL: &str = "
seed = 3
[data]
scenes = 5
test_scenes = 3
[train]
outer_iters = 2
init_epochs = 2
cond_epochs = 1
pred_epochs = 2
k = 3
";

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_annoconsist"))
        .args(args)
        .env_remove("ANNOCONSIST_SEED")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL).unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    assert!(bin(&["gen", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(bin(&["gen", "--config", s(&cfg), "--out", s(&b), "--jobs", "1"]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let test = dir.path().join("t.jsonl");
    assert!(bin(&["gen", "--config", s(&cfg), "--out", s(&test), "--split", "test"]).status.success());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&test).unwrap());
}

#[test]
fn env_seed_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL).unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    assert!(bin(&["gen", "--config", s(&cfg), "--out", s(&a)]).status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_annoconsist"))
        .args(["gen", "--config", s(&cfg), "--out", s(&b)])
        .env("ANNOCONSIST_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let bad = Command::new(env!("CARGO_BIN_EXE_annoconsist"))
        .args(["gen", "--config", s(&cfg), "--out", s(&b)])
        .env("ANNOCONSIST_SEED", "eleven")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    assert!(bin(&["gen", "--out", s(&data)]).status.success());
    let entries: Vec<SceneEntry> = load_dataset(&data)
        .unwrap()
        .iter()
        .map(|sc| SceneEntry {
            scene: sc.id,
            width: sc.width(),
            height: sc.height(),
            predictions: sc
                .gt
                .iter()
                .map(|g| {
                    InstancePrediction {
                        class_id: g.class_id,
                        confidence: 1.0,
                        bbox: tight_box(&g.mask).unwrap(),
                        mask: g.mask.clone(),
                        proposal: 0,
                    }
                    .to_record()
                })
                .collect(),
            iterations: Vec::new(),
        })
        .collect();
    let pred = dir.path().join("p.jsonl");
    predfile::write(&entries, &pred).unwrap();
    let out = bin(&["eval", "--pred", s(&pred), "--data", s(&data)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        assert_eq!(row.split('\t').nth(1), Some("1.0000"), "{row}");
    }
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = bin(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(bin(&[]).status.code(), Some(2));
}

#[test]
fn config_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[train]\nk = 1\n").unwrap();
    let out = dir.path().join("x.jsonl");
    assert_eq!(bin(&["gen", "--config", s(&cfg), "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(bin(&["gen"]).status.code(), Some(2));
    let missing = dir.path().join("none.jsonl");
    let r = bin(&["eval", "--pred", s(&missing), "--data", s(&missing)]);
    assert_eq!(r.status.code(), Some(3));
    assert!(!r.stderr.is_empty());
}

#[test]
fn pipeline_runs_and_reproduces_on_one_worker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL).unwrap();
    let data = dir.path().join("d.jsonl");
    assert!(bin(&["gen", "--config", s(&cfg), "--out", s(&data)]).status.success());
    let mut preds = Vec::new();
    for run in ["m1", "m2"] {
        let model = dir.path().join(run);
        let t = bin(&["--jobs", "1", "train", "--config", s(&cfg), "--data", s(&data), "--out", s(&model)]);
        assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
        assert!(model.join("log.csv").exists());
        assert!(model.join("checkpoint_02.json").exists());
        let pred = dir.path().join(format!("{run}.jsonl"));
        let i = bin(&["--jobs", "1", "infer", "--model", s(&model), "--data", s(&data), "--out", s(&pred)]);
        assert!(i.status.success(), "{}", String::from_utf8_lossy(&i.stderr));
        preds.push(fs::read(&pred).unwrap());
    }
    assert_eq!(preds[0], preds[1]);
    let pred = dir.path().join("m1.jsonl");
    let entries = predfile::read(&pred).unwrap();
    assert_eq!(entries.len(), 5);
    for e in &entries {
        assert_eq!(e.iterations.len(), 3);
        assert!(e.iterations.iter().all(|it| it.samples.len() == 3));
    }
    assert!(bin(&["eval", "--pred", s(&pred), "--data", s(&data)]).status.success());
    let render = dir.path().join("render");
    assert!(bin(&["render", "--pred", s(&pred), "--data", s(&data), "--out", s(&render), "--limit", "2"])
        .status
        .success());
    let files: Vec<_> = fs::read_dir(&render).unwrap().collect();
    assert_eq!(files.len(), 2);
    let ppm = fs::read(files[0].as_ref().unwrap().path()).unwrap();
    assert!(ppm.starts_with(b"P6\n"));
}

#[test]
fn ablate_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, SMALL.replace("outer_iters = 2", "outer_iters = 1")).unwrap();
    let data = dir.path().join("d.jsonl");
    assert!(bin(&["gen", "--config", s(&cfg), "--out", s(&data)]).status.success());
    let table = dir.path().join("t.csv");
    let out = bin(&["ablate", "--config", s(&cfg), "--data", s(&data), "--out", s(&table)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("U,") && lines[2].starts_with("U+P,") && lines[3].starts_with("U+P+H,"));
}
