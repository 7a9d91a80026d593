//! Helpers that drive the `rmtune` binary on tiny workloads.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rmtune::corpus::{HeadSpec, SynthConfig};
use rmtune::eval::BenchmarkConfig;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_rmtune")
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin()).args(args).current_dir(dir).output().expect("binary runs")
}

pub fn run_ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "rmtune {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn tiny_synth() -> SynthConfig {
    SynthConfig {
        vocab_size: 60,
        train_turns: 150,
        test_turns: 200,
        embedding_dim: 8,
        heads: vec![
            HeadSpec::new("area", 30, 40),
            HeadSpec::new("near", 2, 50).with_family("area"),
            HeadSpec::new("area_x", 0, 15).with_family("area").skewed(),
        ],
        ..SynthConfig::default()
    }
}

pub fn tiny_benchmark() -> BenchmarkConfig {
    let mut c = BenchmarkConfig {
        synth: tiny_synth(),
        seeds: vec![0, 1],
        ..BenchmarkConfig::default()
    };
    c.model.encoder.maps = 4;
    c.model.encoder.hidden_dim = 8;
    c.model.encoder.context_dim = 4;
    c.train.epochs = 2;
    c.tune.max_iters = 2;
    c
}

/// Every regular file under `dir`, keyed by its path relative to `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub const STAGES: [&str; 4] = ["gen", "train", "tune", "benchmark"];

/// Runs gen, train, tune and benchmark on tiny inputs inside `dir`. Returns
/// the files added by each stage.
pub fn pipeline(dir: &Path) -> Vec<(&'static str, BTreeMap<PathBuf, Vec<u8>>)> {
    std::fs::write(dir.join("synth.toml"), tiny_synth().to_toml()).unwrap();
    std::fs::write(dir.join("bench.json"), tiny_benchmark().to_json()).unwrap();
    let steps: [(&str, Vec<&str>); 4] = [
        ("gen", vec!["gen", "--config", "synth.toml", "--out", "gen"]),
        (
            "train",
            vec![
                "train", "--corpus", "gen/train.jsonl", "--emb", "gen/embeddings.txt", "--epochs", "2",
                "--hidden-dim", "8", "--context-dim", "4", "--maps", "4", "--widths", "2", "--seed", "3",
                "--out", "model.ckpt",
            ],
        ),
        (
            "tune",
            vec![
                "tune", "--model", "model.ckpt", "--corpus", "gen/test.jsonl", "--iters", "3", "--out",
                "tuned.ckpt",
            ],
        ),
        ("benchmark", vec!["benchmark", "--config", "bench.json", "--out", "bench"]),
    ];
    let mut seen = snapshot(dir);
    let mut stages = Vec::new();
    for (name, args) in steps {
        run_ok(dir, &args);
        let now = snapshot(dir);
        let added = now
            .iter()
            .filter(|(k, v)| seen.get(*k) != Some(*v))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        stages.push((name, added));
        seen = now;
    }
    stages
}

/// Runs the pipeline twice in fresh directories and compares every output
/// byte for byte; then replays each manifest with `rerun --verify`.
pub fn determinism() -> Vec<(&'static str, Result<usize, String>)> {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    first
        .into_iter()
        .zip(second)
        .map(|((name, x), (_, y))| {
            let result = if x.is_empty() {
                Err("stage wrote nothing".to_string())
            } else if x.keys().ne(y.keys()) {
                Err(format!("different files: {:?} vs {:?}", x.keys(), y.keys()))
            } else if let Some(k) = x.keys().find(|k| x[*k] != y[*k]) {
                Err(format!("{} differs between runs", k.display()))
            } else {
                replay(a.path(), &x).map(|()| x.len())
            };
            (name, result)
        })
        .collect()
}

fn replay(dir: &Path, files: &BTreeMap<PathBuf, Vec<u8>>) -> Result<(), String> {
    let manifest = files
        .keys()
        .find(|k| k.to_string_lossy().ends_with("manifest.json"))
        .ok_or("no manifest written")?;
    let out = run(dir, &["rerun", "--manifest", &manifest.to_string_lossy(), "--verify"]);
    if !out.status.success() {
        return Err(format!("rerun failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    for (k, v) in files {
        if &std::fs::read(dir.join(k)).map_err(|e| e.to_string())? != v {
            return Err(format!("{} changed on rerun", k.display()));
        }
    }
    Ok(())
}
