#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use planseq_core::dataset::synth_plan;
use planseq_core::geometry::plan_to_json;

pub fn planseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planseq"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn planseq")
}

pub fn ok(args: &[&str]) -> Output {
    let out = planseq(args);
    assert!(
        out.status.success(),
        "planseq {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Writes `n` synthetic plans, one building each, as separate files.
pub fn write_plans(dir: &Path, n: usize) -> Vec<PathBuf> {
    fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|b| {
            let mut plan = synth_plan(b as u64 + 11, 2 + b % 2, 2, 4.0, 0.9).unwrap();
            plan.building_id = format!("b{b}");
            let path = dir.join(format!("b{b}.json"));
            fs::write(&path, plan_to_json(&plan).unwrap()).unwrap();
            path
        })
        .collect()
}

pub const TINY_CONFIG: &str = r#"{
  "rng_seed": 7,
  "test_fraction": 0.25,
  "view": {"n_segs": 12},
  "sample": {"n_p": 200},
  "model": {
    "embed_dim": 16, "layers": 2, "heads": 2, "n_segs": 12, "dropout": 0.1,
    "context": "resnet",
    "grid": {"width_px": 32, "height_px": 32, "extent": 10.0},
    "encoder": {"resnet_channels": [4, 8]}
  },
  "train": {"steps": 100, "batch_size": 4, "log_every": 10, "checkpoint_every": 50},
  "distmap": {"k_completions": 2, "n_observed": 6}
}"#;

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

/// ingest, dataset, train, eval, sample, distmap, render under `root/out`.
pub fn pipeline(root: &Path) -> PathBuf {
    write_plans(&root.join("plans"), 4);
    let cfg = write_config(root, TINY_CONFIG);
    let cfg = s(&cfg);
    let out = root.join("out");
    let o = |name: &str| out.join(name).to_str().unwrap().to_owned();
    ok(&["ingest", s(&root.join("plans")), "--out", &o("archive")]);
    let archive = o("archive/plans.jsonl");
    ok(&["dataset", &archive, "--config", cfg, "--out", &o("data")]);
    let (train, test) = (o("data/train.jsonl"), o("data/test.jsonl"));
    ok(&["train", &train, "--config", cfg, "--out", &o("model")]);
    let ckpt = o("model/model.ckpt");
    ok(&["eval", &test, "--checkpoint", &ckpt, "--config", cfg, "--out", &o("eval")]);
    ok(&["eval", &test, "--baseline", "uniform", "--config", cfg, "--out", &o("uniform")]);
    ok(&["eval", &test, "--baseline", "nn", "--train", &train, "--config", cfg, "--out", &o("nn")]);
    ok(&[
        "sample", "--checkpoint", &ckpt, "--records", &test, "--prefix-segments", "3", "--count", "3", "--config", cfg,
        "--out", &o("sample"),
    ]);
    ok(&[
        "distmap", "--checkpoint", &ckpt, "--archive", &archive, "--records", &test, "--count", "2", "--config", cfg,
        "--out", &o("distmap"),
    ]);
    ok(&["render", &o("sample/samples.jsonl"), "--config", cfg, "--out", &o("render")]);
    out
}

/// Relative path to contents for every file below `dir`.
pub fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}
