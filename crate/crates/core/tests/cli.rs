mod common;

use common::cli::{determinism, run, run_ok, tiny_benchmark, tiny_synth};
use rmtune::eval::RunSummary;
use rmtune::heads::load_checkpoint;

#[test]
fn every_stage_is_bit_reproducible() {
    for (stage, result) in determinism() {
        assert!(result.is_ok(), "{stage}: {result:?}");
    }
}

fn generated() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("synth.toml"), tiny_synth().to_toml()).unwrap();
    run_ok(dir.path(), &["gen", "--config", "synth.toml", "--out", "gen"]);
    run_ok(
        dir.path(),
        &[
            "train", "--corpus", "gen/train.jsonl", "--emb", "gen/embeddings.txt", "--epochs", "1", "--hidden-dim",
            "6", "--context-dim", "3", "--maps", "3", "--widths", "2", "--out", "model.ckpt",
        ],
    );
    dir
}

#[test]
fn zero_tuning_sweeps_keep_the_weights() {
    let dir = generated();
    let d = dir.path();
    run_ok(d, &["tune", "--model", "model.ckpt", "--corpus", "gen/test.jsonl", "--iters", "0", "--out", "t.ckpt"]);
    let before = load_checkpoint(d.join("model.ckpt")).unwrap();
    let after = load_checkpoint(d.join("t.ckpt")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn tuning_writes_one_trace_per_head() {
    let dir = generated();
    let d = dir.path();
    run_ok(
        d,
        &[
            "tune", "--model", "model.ckpt", "--corpus", "gen/test.jsonl", "--head", "near", "--iters", "2",
            "--out", "t.ckpt",
        ],
    );
    let trace = std::fs::read_to_string(d.join("t.ckpt.near.trace")).unwrap();
    assert!(trace.starts_with("iteration coordinate risk_before risk_after delta_applied"));
    assert!(!d.join("t.ckpt.area.trace").exists());
}

fn error_record(stderr: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(stderr);
    let line = text.lines().last().expect("stderr has a line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{line:?} is not JSON: {e}"))
}

#[test]
fn bad_arguments_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["tune", "--model", "m", "--corpus", "c", "--priors", "0.7,0.7", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_record(&out.stderr);
    assert_eq!(err["error"]["module"], "cli");
    let out = run(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_code_one() {
    let dir = generated();
    let d = dir.path();
    let out = run(d, &["tune", "--model", "missing.ckpt", "--corpus", "gen/test.jsonl", "--out", "t.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_record(&out.stderr);
    assert!(err["error"]["message"].as_str().unwrap().contains("missing.ckpt"));
    let out = run(
        d,
        &["tune", "--model", "model.ckpt", "--corpus", "gen/test.jsonl", "--head", "nope", "--out", "t.ckpt"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(error_record(&out.stderr)["error"]["message"].as_str().unwrap().contains("nope"));
    assert!(!d.join("t.ckpt").exists());
}

#[test]
fn rerun_detects_tampered_outputs() {
    let dir = generated();
    let d = dir.path();
    std::fs::write(d.join("model.ckpt"), "garbage").unwrap();
    run_ok(d, &["rerun", "--manifest", "model.ckpt.manifest.json", "--verify"]);
    let manifest = d.join("model.ckpt.manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["outputs"]["model.ckpt"] = "0".repeat(64).into();
    std::fs::write(&manifest, json.to_string()).unwrap();
    let out = run(d, &["rerun", "--manifest", "model.ckpt.manifest.json", "--verify"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn benchmark_rows_cover_every_head_condition_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = tiny_benchmark();
    std::fs::write(d.join("bench.json"), config.to_json()).unwrap();
    run_ok(d, &["benchmark", "--config", "bench.json", "--out", "out"]);
    let csv = std::fs::read_to_string(d.join("out/benchmark.csv")).unwrap();
    let heads = config.report_heads();
    assert_eq!(heads, ["near", "area_x"]);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), heads.len() * 3 * (config.seeds.len() + 1));
    for h in &heads {
        for cond in ["independent", "joint", "joint+rm"] {
            for seed in ["0", "1", "mean"] {
                let prefix = format!("{h},{cond},{seed},");
                assert_eq!(rows.iter().filter(|r| r.starts_with(&prefix)).count(), 1, "{prefix}");
            }
        }
    }
    let runs: Vec<RunSummary> =
        serde_json::from_str(&std::fs::read_to_string(d.join("out/runs.json")).unwrap()).unwrap();
    assert_eq!(runs.len(), heads.len() * config.seeds.len());
    assert!(runs.iter().all(|r| r.trace_monotone));
}

#[test]
fn risk_check_reports_every_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), &["risk-check", "--samples", "0", "--out", "grid.txt"]);
    let text = std::fs::read_to_string(dir.path().join("grid.txt")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).filter(|l| !l.trim().is_empty()).collect();
    assert!(rows.len() >= 625, "{}", rows.len());
    assert!(!text.contains("FAIL"));
}
