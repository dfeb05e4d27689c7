//! Runs the `prefixlab` binary from integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

/// Small plan that exercises every stage in well under a second per command.
pub const TINY: &str = r#"replicates = 2
tau_values = [0.25, 0.75]

[world]
node_count = 40
out_degree = 3
budget = 6
seed = 7

[split]
pretrain_fraction = 0.05
eval_questions = 40

[grpo]
total_steps = 8
batch_size = 8

[eval]
every = 4
n = 8

[recovery]
n_reference = 16
n_continuations = 8

[refresh]
total_steps = 16
"#;

pub fn prefixlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefixlab"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let out = prefixlab(dir, args);
    assert!(
        out.status.success(),
        "prefixlab {} failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

/// Every subcommand in sequence under `root`, using relative paths so that
/// manifests from different roots are comparable.
pub fn pipeline(root: &Path, workers: usize) {
    std::fs::write(root.join("plan.toml"), TINY).unwrap();
    let w = workers.to_string();
    let run = |args: &[&str]| {
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--config", "plan.toml", "--workers", &w]);
        ok(root, &full)
    };
    run(&["make-world", "-o", "world"]);
    let world = "world/world.json";
    run(&["pretrain", "--world", world, "-o", "pre", "--seed", "1"]);
    run(&["scan", "--world", world, "--policy", "pre/base.policy", "--questions", "pre/pool_questions.jsonl", "-o", "scan", "--seed", "1"]);
    run(&["build-dataset", "--world", world, "--policy", "pre/base.policy", "--scans", "scan/scans.jsonl", "-o", "dataset", "--seed", "1"]);
    run(&[
        "train", "--world", world, "--policy", "pre/base.policy", "--dataset", "dataset/dataset.jsonl",
        "--eval-questions", "pre/eval_questions.jsonl", "-o", "train", "--seed", "1",
    ]);
    run(&[
        "evaluate", "--world", world, "--policy", "train/final.policy", "--questions", "pre/eval_questions.jsonl",
        "--budgets", "2,4,6", "-o", "evaluate", "--seed", "1",
    ]);
    run(&[
        "recovery", "--world", world, "--policy", "pre/base.policy", "--policy", "train/final.policy",
        "--questions", "pre/eval_questions.jsonl", "-o", "recovery", "--seed", "1",
    ]);
    run(&[
        "refresh", "--world", world, "--policy", "train/final.policy", "--questions", "pre/in_band.jsonl",
        "-o", "refresh", "--seed", "1",
    ]);
    for which in ["table1", "tau", "refresh"] {
        let dir = format!("experiment_{which}");
        run(&["experiment", which, "-o", &dir, "--seed", "1"]);
    }
}

/// Relative path → contents, for every file below `root`.
pub fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
