//! End-to-end runs of the `pamem` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pamem::classify::PAResult;
use pamem::lm::{Corpus, NGramModel};
use pamem::targets::{sample_long_sequences, write_targets};

fn pamem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pamem"))
        .args(args)
        .env_remove("PAMEM_ENDPOINT")
        .env_remove("PAMEM_ENDPOINT_TOKEN")
        .env_remove("PAMEM_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = pamem(args);
    assert!(out.status.success(), "pamem {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn results(dir: &Path) -> Vec<PAResult> {
    std::fs::read_to_string(dir.join("results.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn train_is_deterministic_and_matches_the_bundled_model() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let corpus = asset("tiny_corpus.txt");
    for out in [&a, &b] {
        ok(&["train", "--corpus", s(&corpus), "--order", "2", "--alpha", "0.5", "--out", s(out)]);
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_eq!(bytes, std::fs::read(asset("tiny_bigram.json")).unwrap());
    assert!(dir.path().join("a.json.manifest.json").exists());
}

#[test]
fn trained_counts_match_the_golden_recount() {
    let model = NGramModel::load(asset("tiny_bigram.json")).unwrap();
    let golden: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny_bigram_counts.golden.json"),
        )
        .unwrap(),
    )
    .unwrap();
    assert_eq!(golden["order"], 2);
    let v = model.vocab();
    let mut expected = BTreeMap::new();
    for (ctx, nexts) in golden["counts"].as_object().unwrap() {
        let ctx_ids = v.encode(ctx).unwrap().into_inner();
        for (next, n) in nexts.as_object().unwrap() {
            expected.insert((ctx_ids.clone(), v.id(next).unwrap()), n.as_u64().unwrap());
        }
    }
    let got: BTreeMap<_, _> = model.entries().into_iter().map(|(c, t, n)| ((c, t), n)).collect();
    assert_eq!(got, expected);
}

#[test]
fn missing_corpus_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = pamem(&["train", "--corpus", "/nonexistent/corpus.txt", "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/corpus.txt"), "{err}");
}

/// Random text over `w0..w7`, plus (when `planted`) one document holding a
/// run of tokens seen nowhere else.
fn write_corpus(path: &Path, planted: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut lines: Vec<String> = (0..300)
        .map(|_| (0..20).map(|_| format!("w{}", rng.random_range(0..8))).collect::<Vec<_>>().join(" "))
        .collect();
    if planted {
        lines.push("w1 w2 z1 z2 z3 z4 z5 z6 z7 z8 w3".into());
    }
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn write_generic(path: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let lines: Vec<String> =
        (0..12).map(|_| (0..8).map(|_| format!("w{}", rng.random_range(0..8))).collect::<Vec<_>>().join(" ")).collect();
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn context_free_model_flags_nothing_after_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(&d.join("corpus.txt"), false);
    write_generic(&d.join("generic.txt"));
    ok(&["train", "--corpus", s(&d.join("corpus.txt")), "--order", "1", "--out", s(&d.join("m.json"))]);
    let model = NGramModel::load(d.join("m.json")).unwrap();
    let corpus = Corpus::from_path(d.join("corpus.txt"), model.vocab().clone()).unwrap();
    let targets = sample_long_sequences(&corpus.docs, 4, 4, 40, 1).unwrap();
    write_targets(d.join("targets.jsonl"), &targets).unwrap();

    ok(&[
        "--seed",
        "2",
        "calibrate",
        "--model",
        s(&d.join("m.json")),
        "--sampler-corpus",
        s(&d.join("corpus.txt")),
        "--generic",
        s(&d.join("generic.txt")),
        "-c",
        "500",
        "--trials",
        "2",
        "--out",
        s(&d.join("thresholds.json")),
    ]);
    let th: pamem::classify::Thresholds =
        serde_json::from_str(&std::fs::read_to_string(d.join("thresholds.json")).unwrap()).unwrap();
    assert!((th.n - 1.0).abs() < 1e-9, "order-1 ratios are exactly 1, got {}", th.n);
    assert!(d.join("thresholds.json.calibration.jsonl").exists());

    ok(&[
        "--seed",
        "2",
        "audit",
        "--model",
        s(&d.join("m.json")),
        "--sampler-corpus",
        s(&d.join("corpus.txt")),
        "--targets",
        s(&d.join("targets.jsonl")),
        "--thresholds",
        s(&d.join("thresholds.json")),
        "-c",
        "500",
        "--trials",
        "2",
        "--m",
        "4=0.5",
        "--out",
        s(&d.join("run")),
    ]);
    let r = results(&d.join("run"));
    assert_eq!(r.len(), 40);
    assert!(r.iter().all(|x| !x.pa_memorized));
    for f in ["priors.jsonl", "failures.jsonl", "summary.csv", "thresholds.json", "manifest.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
}

#[test]
fn planted_sequence_is_flagged_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_corpus(&d.join("corpus.txt"), true);
    write_generic(&d.join("generic.txt"));
    ok(&[
        "train",
        "--corpus",
        s(&d.join("corpus.txt")),
        "--order",
        "2",
        "--alpha",
        "0.01",
        "--out",
        s(&d.join("m.json")),
    ]);
    let model = NGramModel::load(d.join("m.json")).unwrap();
    let v = model.vocab();
    let planted = pamem::likelihood::Target::new(
        "planted",
        v.encode("z1 z2 z3 z4").unwrap(),
        v.encode("z5 z6 z7 z8").unwrap(),
        pamem::likelihood::TargetSource::Synthetic,
    )
    .unwrap();
    let common = pamem::likelihood::Target::new(
        "common",
        v.encode("w1 w2 w3 w4").unwrap(),
        v.encode("w5 w6 w7 w0").unwrap(),
        pamem::likelihood::TargetSource::Synthetic,
    )
    .unwrap();
    write_targets(d.join("targets.jsonl"), &[planted, common]).unwrap();

    ok(&[
        "--seed",
        "9",
        "audit",
        "--model",
        s(&d.join("m.json")),
        "--sampler-corpus",
        s(&d.join("corpus.txt")),
        "--targets",
        s(&d.join("targets.jsonl")),
        "--calibrate",
        "--generic",
        s(&d.join("generic.txt")),
        "-c",
        "500",
        "--trials",
        "2",
        "--out",
        s(&d.join("run")),
    ]);
    let r = results(&d.join("run"));
    let flagged: Vec<&str> = r.iter().filter(|x| x.pa_memorized).map(|x| x.target_id.as_str()).collect();
    assert_eq!(flagged, vec!["planted"]);
    assert!(r.iter().find(|x| x.target_id == "planted").unwrap().log_ratio > 10.0);

    let summary = std::fs::read_to_string(d.join("run/summary.csv")).unwrap();
    assert!(summary.lines().count() >= 2, "{summary}");

    ok(&["report", s(&d.join("run")), "--top", "2"]);
    let report = std::fs::read_to_string(d.join("run/report.md")).unwrap();
    assert!(report.contains("z5 z6 z7 z8"), "{report}");
}

#[test]
fn missing_threshold_class_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let model = NGramModel::load(asset("tiny_bigram.json")).unwrap();
    let corpus = Corpus::from_path(asset("tiny_corpus.txt"), model.vocab().clone()).unwrap();
    // Suffix length 3 has no m class in the default thresholds.
    write_targets(d.join("t.jsonl"), &sample_long_sequences(&corpus.docs, 2, 3, 3, 1).unwrap()).unwrap();
    let th = pamem::classify::Thresholds::with_default_m(1.2, "x").unwrap();
    std::fs::write(d.join("th.json"), serde_json::to_string(&th).unwrap()).unwrap();
    let out = pamem(&[
        "audit",
        "--model",
        s(&asset("tiny_bigram.json")),
        "--sampler-corpus",
        s(&asset("tiny_corpus.txt")),
        "--targets",
        s(&d.join("t.jsonl")),
        "--thresholds",
        s(&d.join("th.json")),
        "--out",
        s(&d.join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unreachable_endpoint_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let url = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", l.local_addr().unwrap())
    };
    let model = NGramModel::load(asset("tiny_bigram.json")).unwrap();
    let corpus = Corpus::from_path(asset("tiny_corpus.txt"), model.vocab().clone()).unwrap();
    write_targets(d.join("t.jsonl"), &sample_long_sequences(&corpus.docs, 2, 4, 2, 1).unwrap()).unwrap();
    let th = pamem::classify::Thresholds::with_default_m(1.2, "x").unwrap();
    std::fs::write(d.join("th.json"), serde_json::to_string(&th).unwrap()).unwrap();
    let out = pamem(&[
        "audit",
        "--endpoint",
        &url,
        "--vocab",
        s(&asset("tiny_bigram.json")),
        "--max-retries",
        "0",
        "--sampler-corpus",
        s(&asset("tiny_corpus.txt")),
        "--targets",
        s(&d.join("t.jsonl")),
        "--thresholds",
        s(&d.join("th.json")),
        "-c",
        "10",
        "--trials",
        "1",
        "--out",
        s(&d.join("run")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let failures = std::fs::read_to_string(d.join("run/failures.jsonl")).unwrap();
    assert_eq!(failures.lines().count(), 2);
}

#[test]
fn counterfactual_smoke_run_writes_every_artifact_and_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("exp.json"), serde_json::to_string(&pamem::harness::ExperimentConfig::smoke()).unwrap())
        .unwrap();
    ok(&["counterfactual", s(&d.join("exp.json")), "--out", s(&d.join("cf"))]);
    for f in [
        "config.resolved.json",
        "points.jsonl",
        "cells.jsonl",
        "correlation.json",
        "breakdown.csv",
        "scatter.csv",
        "manifest.json",
    ] {
        assert!(d.join("cf").join(f).exists(), "{f}");
    }
    let scatter = std::fs::read_to_string(d.join("cf/scatter.csv")).unwrap();
    assert_eq!(scatter.lines().next().unwrap(), "x_counterfactual,y_pa_log,composition");
    let breakdown = std::fs::read_to_string(d.join("cf/breakdown.csv")).unwrap();
    assert_eq!(breakdown.lines().next().unwrap(), "exact_copies,mean_p_s_given_p,mean_v_hat");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("cf/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    ok(&["report", s(&d.join("cf"))]);
    assert!(d.join("cf/report.md").exists());
}

#[test]
fn invalid_experiment_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("exp.json"), r#"{"compositions": [[0, 10]], "unknown_key": 1}"#).unwrap();
    let out = pamem(&["counterfactual", s(&d.join("exp.json")), "--out", s(&d.join("cf"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn targets_subcommands_write_loadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (vocab, corpus) = (asset("tiny_bigram.json"), asset("tiny_corpus.txt"));
    ok(&[
        "--seed",
        "1",
        "targets",
        "long",
        "--prefix-len",
        "2",
        "--suffix-len",
        "4",
        "-k",
        "5",
        "--vocab",
        s(&vocab),
        "--corpus",
        s(&corpus),
        "--out",
        s(&d.join("long.jsonl")),
    ]);
    assert_eq!(pamem::targets::read_targets(d.join("long.jsonl")).unwrap().len(), 5);

    std::fs::write(d.join("entities.txt"), "cat\ndog\nred rug\npark\n").unwrap();
    ok(&[
        "targets",
        "entities",
        "--entities",
        s(&d.join("entities.txt")),
        "--prefix-len",
        "2",
        "--buckets",
        "1,4,8",
        "--vocab",
        s(&vocab),
        "--corpus",
        s(&corpus),
        "--out",
        s(&d.join("ne.jsonl")),
    ]);
    let ne = pamem::targets::read_targets(d.join("ne.jsonl")).unwrap();
    assert!(!ne.is_empty() && ne.len() <= 3);

    std::fs::write(d.join("generic.txt"), "the cat sat on the mat and ran\n").unwrap();
    ok(&[
        "targets",
        "generic",
        "--file",
        s(&d.join("generic.txt")),
        "--vocab",
        s(&vocab),
        "--out",
        s(&d.join("g.jsonl")),
    ]);
    let g = pamem::targets::read_targets(d.join("g.jsonl")).unwrap();
    assert_eq!((g[0].prefix.len(), g[0].suffix.len()), (4, 4));
}
