//! Acceptance suite. Runs every criterion and prints one PASS/FAIL line for
//! each; exits nonzero if any fails.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pamem::classify::{audit_target, calibrate_n, Thresholds, DEFAULT_M_LONG, DEFAULT_M_SHORT};
use pamem::harness::{compose_dataset, run_experiment, ExperimentConfig, ExperimentResult, PreparedExperiment};
use pamem::likelihood::seq_logprob;
use pamem::lm::{train_ngram, Corpus, NGramModel, ScoringBackend, TokenId, TokenSequence, Vocabulary};
use pamem::prior::{
    brute_force_prior, estimate_prior, prior_oracle, PrefixSampler, PriorConfig, DEFAULT_ORACLE_BUDGET,
};
use pamem::remote::{EndpointConfig, LoopbackServer, RemoteBackend, RemoteClient, ScoreMode};
use pamem::seed::derive_seed;
use pamem::targets::{default_generic_lines, generic_targets, sample_long_sequences, write_targets};

type Check = Result<(bool, String), String>;

fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join(name)
}

fn tiny_model() -> NGramModel {
    NGramModel::load(asset("tiny_bigram.json")).expect("bundled model loads")
}

fn tiny_docs(vocab: &Vocabulary) -> Arc<Vec<TokenSequence>> {
    Corpus::from_path(asset("tiny_corpus.txt"), vocab.clone()).expect("tiny corpus").docs
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// `P(s | q)` straight from the model's counts, independent of the scoring
/// and estimation code paths.
fn count_prob(model: &NGramModel, prefix: &[TokenId], suffix: &[TokenId]) -> f64 {
    let v = model.vocab().len() as f64;
    let mut full = prefix.to_vec();
    let mut p = 1.0;
    for &t in suffix {
        let ctx = &full[full.len().saturating_sub(model.order() - 1)..];
        let (c, total) = (model.count(ctx, t) as f64, model.context_total(ctx) as f64);
        p *= (c + model.alpha()) / (total + model.alpha() * v);
        full.push(t);
    }
    p
}

struct PriorRuns {
    estimates: Vec<f64>,
    exact_v: f64,
    exact_var: f64,
    elapsed: Duration,
}

const K: usize = 200;
const C: usize = 200;

fn prior_runs() -> Result<PriorRuns, String> {
    let start = Instant::now();
    let model = tiny_model();
    let sampler = PrefixSampler::new(tiny_docs(model.vocab()), 3, 17).map_err(e)?;
    let suffix = model.vocab().encode("the dog").map_err(e)?;
    let estimates = (0..K)
        .map(|k| {
            let s = sampler.with_seed(derive_seed(1000, &format!("run-{k}")));
            estimate_prior(&model, &suffix, &s, C, 1).map(|p| p.v_hat)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(e)?;
    // Exact moments over every window, computed from raw counts.
    let probs: Vec<f64> = sampler.windows().map(|w| count_prob(&model, w, &suffix)).collect();
    let exact_v = mean(&probs);
    let exact_var = probs.iter().map(|p| (p - exact_v).powi(2)).sum::<f64>() / probs.len() as f64;
    // The library oracle must agree with the count-level enumeration.
    let oracle = prior_oracle(&model, &suffix, &sampler, DEFAULT_ORACLE_BUDGET).map_err(e)?;
    let brute = brute_force_prior(&model, &suffix, &sampler).map_err(e)?;
    if (brute - exact_v).abs() > 1e-12
        || (oracle.v_s - exact_v).abs() > 1e-12
        || (oracle.per_prefix_variance - exact_var).abs() > 1e-12
    {
        return Err(format!(
            "oracle disagreement: library ({}, {}) vs recount ({exact_v}, {exact_var})",
            oracle.v_s, oracle.per_prefix_variance
        ));
    }
    Ok(PriorRuns { estimates, exact_v, exact_var, elapsed: start.elapsed() })
}

fn criterion_1(runs: &PriorRuns) -> Check {
    let m = mean(&runs.estimates);
    let tol = 3.0 * (1.0 / (4.0 * C as f64 * K as f64)).sqrt();
    let diff = (m - runs.exact_v).abs();
    let fast = runs.elapsed < Duration::from_secs(60);
    Ok((
        diff <= tol && fast,
        format!(
            "mean of {K} estimates (c={C}) {m:.6} vs brute-force {:.6}: |diff| {diff:.2e} <= {tol:.2e}; {:.2?} < 60s",
            runs.exact_v, runs.elapsed
        ),
    ))
}

fn criterion_2(runs: &PriorRuns) -> Check {
    let var = variance(&runs.estimates);
    let bound = 1.2 / (4.0 * C as f64);
    let theory = runs.exact_var / C as f64;
    let rel = (var - theory).abs() / theory;
    let fast = runs.elapsed < Duration::from_secs(60);
    Ok((
        var <= bound && rel <= 0.30 && fast,
        format!(
            "empirical variance {var:.3e} <= {bound:.3e}; exact Var/c {theory:.3e}, relative gap {:.1}% <= 30%",
            rel * 100.0
        ),
    ))
}

fn random_tokens(rng: &mut ChaCha8Rng, v: usize, len: usize) -> Vec<TokenId> {
    (0..len).map(|_| rng.random_range(0..v as TokenId)).collect()
}

fn criterion_3() -> Check {
    let tiny = Arc::new(tiny_model());
    let cfg = pamem::harness::SyntheticCorpusConfig { vocab_size: 40, num_docs: 300, doc_len: 20, zipf_exponent: 1.1 };
    let (vocab, docs, _) = pamem::harness::synthetic_corpus(&cfg, 5).map_err(e)?;
    let trigram = train_ngram(&docs, vocab, 3, 0.05).map_err(e)?;
    let models: [&NGramModel; 2] = [&tiny, &trigram];

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_chain = 0.0f64;
    for i in 0..1000 {
        let m = models[i % 2];
        let v = m.vocab().len();
        let prefix = {
            let l = rng.random_range(0..=12);
            random_tokens(&mut rng, v, l)
        };
        let suffix = {
            let l = rng.random_range(2..=12);
            random_tokens(&mut rng, v, l)
        };
        let split = rng.random_range(1..suffix.len());
        let whole = seq_logprob(m, &prefix, &suffix).map_err(e)?.log_p_s_given_p;
        let first = seq_logprob(m, &prefix, &suffix[..split]).map_err(e)?.log_p_s_given_p;
        let ctx: Vec<TokenId> = prefix.iter().chain(&suffix[..split]).copied().collect();
        let second = seq_logprob(m, &ctx, &suffix[split..]).map_err(e)?.log_p_s_given_p;
        worst_chain = worst_chain.max((whole - (first + second)).abs());
    }

    let server = LoopbackServer::for_model(Arc::clone(&tiny)).map_err(e)?;
    let mut worst_remote = 0.0f64;
    for mode in [ScoreMode::TokenIds, ScoreMode::Text] {
        let client = RemoteClient::new(EndpointConfig::new(server.url(), mode)).map_err(e)?;
        let remote = RemoteBackend::new(client, Some(tiny.vocab().clone())).map_err(e)?;
        for _ in 0..100 {
            let prefix = {
                let l = rng.random_range(0..=8);
                random_tokens(&mut rng, 16, l)
            };
            let suffix = {
                let l = rng.random_range(1..=8);
                random_tokens(&mut rng, 16, l)
            };
            let direct = seq_logprob(&*tiny, &prefix, &suffix).map_err(e)?.log_p_s_given_p;
            let viahttp = seq_logprob(&remote, &prefix, &suffix).map_err(e)?.log_p_s_given_p;
            worst_remote = worst_remote.max((direct - viahttp).abs());
        }
    }
    Ok((
        worst_chain <= 1e-9 && worst_remote <= 1e-9,
        format!("1000 chain-rule triples max gap {worst_chain:.2e}; 200 loopback scores max gap {worst_remote:.2e} (<= 1e-9)"),
    ))
}

/// An order-1 model over 8 tokens trained on uniform random text.
fn context_free_model() -> Result<(NGramModel, Arc<Vec<TokenSequence>>), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let docs: Vec<TokenSequence> = (0..200).map(|_| random_tokens(&mut rng, 8, 30).into()).collect();
    let model = train_ngram(&docs, Vocabulary::synthetic(8).map_err(e)?, 1, 1.0).map_err(e)?;
    Ok((model, Arc::new(docs)))
}

fn criterion_4() -> Check {
    let (model, docs) = context_free_model()?;
    let targets = sample_long_sequences(&docs, 5, 1, 100, 21).map_err(e)?;
    let sampler = PrefixSampler::new(Arc::clone(&docs), 5, 99).map_err(e)?;
    let prior = PriorConfig::default();
    let thresholds = Thresholds::new(BTreeMap::from([(1, DEFAULT_M_SHORT)]), 1.5, model.model_id()).map_err(e)?;
    let mut pa = 0;
    let mut extractable = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    for t in &targets {
        let (_, est, r) = audit_target(&model, t, &sampler, &prior, &thresholds).map_err(e)?;
        let margin = 3.0 * (1.0 / (4.0 * prior.c as f64)).sqrt() / est.v_hat;
        if 1.0 + margin >= thresholds.n {
            return Err(format!("margin {margin} does not separate n = 1.5 from 1"));
        }
        worst_excess = worst_excess.max((r.ratio() - 1.0).abs() - margin);
        pa += r.pa_memorized as usize;
        extractable += r.extractable as usize;
    }
    Ok((
        pa == 0 && worst_excess <= 0.0,
        format!(
            "{} targets, {extractable} extractable, {pa} PA-memorized; every |ratio - 1| within its margin (worst slack {:.3})",
            targets.len(),
            -worst_excess
        ),
    ))
}

struct Sweep {
    exp: PreparedExperiment,
    result: ExperimentResult,
    elapsed: Duration,
}

fn sweep() -> Result<Sweep, String> {
    let start = Instant::now();
    let exp = ExperimentConfig::default().prepare(Path::new(".")).map_err(e)?;
    let result = run_experiment(&exp).map_err(e)?;
    Ok(Sweep { exp, result, elapsed: start.elapsed() })
}

fn criterion_5(s: &Sweep) -> Check {
    let pts = &s.result.points;
    let x_of = |c: (usize, usize)| pts.iter().find(|p| p.composition == c).map(|p| p.x_counterfactual);
    let (hi, lo) = (x_of((60, 0)).ok_or("no (60,0) point")?, x_of((0, 180)).ok_or("no (0,180) point")?);
    let rho = s.result.correlation.spearman;
    Ok((
        pts.len() == 7 && s.exp.spec.seeds.len() == 25 && rho >= 0.5 && hi > lo && s.elapsed < Duration::from_secs(600),
        format!(
            "7x25 sweep: spearman {rho:.3} >= 0.5 (pearson {:.3}); x(60,0) {hi:.3} > x(0,180) {lo:.3}; {:.1?} < 10min",
            s.result.correlation.pearson, s.elapsed
        ),
    ))
}

/// Nondecreasing, allowing at most one drop no larger than the pooled
/// standard error of the two compositions involved.
fn trend_ok(means: &[f64], ses: &[f64]) -> (bool, usize) {
    let mut inversions = 0;
    let mut within = true;
    for i in 1..means.len() {
        if means[i] < means[i - 1] {
            inversions += 1;
            within &= means[i - 1] - means[i] <= (ses[i].powi(2) + ses[i - 1].powi(2)).sqrt();
        }
    }
    (inversions == 0 || (inversions == 1 && within), inversions)
}

fn criterion_6(s: &Sweep) -> Check {
    let mut rows = s.result.breakdown.clone();
    rows.sort_by_key(|r| r.exact_copies);
    let p: Vec<f64> = rows.iter().map(|r| r.mean_p_s_given_p).collect();
    let v: Vec<f64> = rows.iter().map(|r| r.mean_v_hat).collect();
    let (p_ok, p_inv) = trend_ok(&p, &rows.iter().map(|r| r.se_p_s_given_p).collect::<Vec<_>>());
    let (v_ok, v_inv) = trend_ok(&v, &rows.iter().map(|r| r.se_v_hat).collect::<Vec<_>>());
    Ok((
        p_ok && v_ok,
        format!(
            "mean P(s|p) {:.2e} -> {:.2e} ({p_inv} inversions); mean v_hat {:.2e} -> {:.2e} ({v_inv} inversions)",
            p[0],
            p[p.len() - 1],
            v[0],
            v[v.len() - 1]
        ),
    ))
}

fn criterion_7() -> Check {
    let defaults = Thresholds::default_m();
    let exact = DEFAULT_M_SHORT == 0.01
        && DEFAULT_M_LONG == 0.0001
        && defaults.get(&4) == Some(&0.01)
        && defaults.get(&50) == Some(&0.0001)
        && defaults.len() == 2;

    // An order-1 model over the generic set's own vocabulary.
    let lines = default_generic_lines();
    let corpus = Corpus::build(&lines, &[]).map_err(e)?;
    let model = train_ngram(&corpus.docs, corpus.vocab.clone(), 1, 1.0).map_err(e)?;
    let generic = generic_targets(&lines, &corpus.vocab).map_err(e)?;
    let sampler = PrefixSampler::new(Arc::clone(&corpus.docs), 1, 5).map_err(e)?;
    let prior = PriorConfig::default();
    let report = calibrate_n(&model, &generic, &sampler, &prior).map_err(e)?;
    let margin = 3.0 * (1.0 / (4.0 * prior.c as f64)).sqrt();
    Ok((
        exact && (report.n - 1.0).abs() <= margin,
        format!(
            "m defaults {defaults:?}; calibrated n on {} generic sequences = {:.12} (|n-1| <= {margin:.4})",
            report.entries.len(),
            report.n
        ),
    ))
}

fn criterion_8(s: &Sweep) -> Check {
    let spec = &s.exp.spec;
    let target: Vec<TokenId> = spec.target_sequence().to_vec();
    let kept = (0.2 * target.len() as f64).round() as usize;
    let recount = |corpus: &[TokenSequence]| {
        let exact = corpus.iter().filter(|d| d[..] == target[..]).count();
        let near: Vec<&TokenSequence> = corpus
            .iter()
            .filter(|d| d.len() == target.len() && d.iter().zip(&target).filter(|(a, b)| a == b).count() == kept)
            .collect();
        let distinct = near.iter().collect::<HashSet<_>>().len();
        (corpus.len(), exact, near.len(), distinct)
    };
    let mut deviations = 0;
    let mut datasets = 0;
    for (pi, &(ex, nd)) in spec.pairs.iter().enumerate() {
        for &seed in &spec.seeds {
            let data = compose_dataset(spec, pi, seed).map_err(e)?;
            datasets += 2;
            if recount(&data.target_corpus) != (spec.total_size, ex, nd, nd) {
                deviations += 1;
            }
            if recount(&data.baseline_corpus) != (spec.total_size, 0, nd, nd) {
                deviations += 1;
            }
        }
    }
    let internal = s.result.audit_deviations();
    Ok((
        deviations == 0 && internal == 0,
        format!("{datasets} datasets recounted: {deviations} deviations (sweep audits: {internal})"),
    ))
}

fn pamem(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pamem")).args(args).output().map_err(e)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("pamem {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Result<Vec<String>, String> {
    let mut differing = Vec::new();
    for n in names {
        let x = std::fs::read(a.join(n)).map_err(|err| format!("{n}: {err}"))?;
        let y = std::fs::read(b.join(n)).map_err(|err| format!("{n}: {err}"))?;
        if x.is_empty() && *n != "failures.jsonl" {
            return Err(format!("{n} is empty"));
        }
        if x != y {
            differing.push(n.to_string());
        }
    }
    Ok(differing)
}

fn criterion_9() -> Check {
    let dir = tempfile::tempdir().map_err(e)?;
    let d = dir.path();
    let model = tiny_model();
    let docs = tiny_docs(model.vocab());
    let targets = sample_long_sequences(&docs, 3, 4, 20, 8).map_err(e)?;
    write_targets(d.join("targets.jsonl"), &targets).map_err(e)?;
    let th = Thresholds::new(BTreeMap::from([(4, DEFAULT_M_SHORT)]), 1.5, model.model_id()).map_err(e)?;
    std::fs::write(d.join("thresholds.json"), serde_json::to_string(&th).map_err(e)?).map_err(e)?;
    let (m, c) = (asset("tiny_bigram.json"), asset("tiny_corpus.txt"));
    let audit = |out: &str, jobs: &str| {
        pamem(&[
            "--seed",
            "7",
            "--jobs",
            jobs,
            "audit",
            "--model",
            m.to_str().unwrap(),
            "--sampler-corpus",
            c.to_str().unwrap(),
            "--targets",
            d.join("targets.jsonl").to_str().unwrap(),
            "--thresholds",
            d.join("thresholds.json").to_str().unwrap(),
            "-c",
            "400",
            "--trials",
            "3",
            "--out",
            d.join(out).to_str().unwrap(),
        ])
    };
    audit("audit-a", "1")?;
    audit("audit-b", "4")?;
    let audit_diff = same_files(
        &d.join("audit-a"),
        &d.join("audit-b"),
        &["results.jsonl", "priors.jsonl", "failures.jsonl", "summary.csv", "thresholds.json"],
    )?;

    let cfg = ExperimentConfig {
        compositions: vec![(0, 30), (5, 15), (10, 0)],
        seeds: vec![0, 1, 2],
        total_size: 200,
        synthetic: pamem::harness::SyntheticCorpusConfig {
            vocab_size: 60,
            num_docs: 300,
            doc_len: 14,
            zipf_exponent: 1.1,
        },
        target_prefix_len: 5,
        target_suffix_len: 5,
        c: 300,
        ..Default::default()
    };
    std::fs::write(d.join("cf.json"), serde_json::to_string_pretty(&cfg).map_err(e)?).map_err(e)?;
    let cf = |out: &str, jobs: &str| {
        pamem(&[
            "--seed",
            "3",
            "--jobs",
            jobs,
            "counterfactual",
            d.join("cf.json").to_str().unwrap(),
            "--out",
            d.join(out).to_str().unwrap(),
        ])
    };
    cf("cf-a", "1")?;
    cf("cf-b", "4")?;
    let cf_diff = same_files(
        &d.join("cf-a"),
        &d.join("cf-b"),
        &["points.jsonl", "cells.jsonl", "correlation.json", "breakdown.csv", "scatter.csv"],
    )?;
    Ok((
        audit_diff.is_empty() && cf_diff.is_empty(),
        format!(
            "audit re-run (1 vs 4 threads): {}; counterfactual re-run: {}",
            if audit_diff.is_empty() { "5 artifacts identical".to_string() } else { format!("differ {audit_diff:?}") },
            if cf_diff.is_empty() { "5 artifacts identical".to_string() } else { format!("differ {cf_diff:?}") },
        ),
    ))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, check: Check| {
        let (pass, detail) = match check {
            Ok(r) => r,
            Err(msg) => (false, format!("error: {msg}")),
        };
        failed += !pass as usize;
        println!("{} [{n}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    };

    match prior_runs() {
        Ok(runs) => {
            report(1, "prior estimator unbiasedness", criterion_1(&runs));
            report(2, "prior estimator variance bound", criterion_2(&runs));
        }
        Err(msg) => {
            report(1, "prior estimator unbiasedness", Err(msg.clone()));
            report(2, "prior estimator variance bound", Err(msg));
        }
    }
    report(3, "chain rule and loopback equivalence", criterion_3());
    report(4, "context-free model null", criterion_4());
    match sweep() {
        Ok(s) => {
            report(5, "counterfactual correlation", criterion_5(&s));
            report(6, "breakdown trend", criterion_6(&s));
            report(7, "threshold defaults and calibration", criterion_7());
            report(8, "composition audits", criterion_8(&s));
        }
        Err(msg) => {
            report(5, "counterfactual correlation", Err(msg.clone()));
            report(6, "breakdown trend", Err(msg.clone()));
            report(7, "threshold defaults and calibration", criterion_7());
            report(8, "composition audits", Err(msg));
        }
    }
    report(9, "byte-identical re-runs", criterion_9());

    if failed > 0 {
        println!("acceptance: {failed} of 9 criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all 9 criteria passed");
}
