use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{load_vocabulary, to_jsonl, Backend, BackendArgs, RunManifest};
use crate::classify::{audit_target, calibrate_n, CalibrationReport, PAResult, Thresholds};
use crate::error::{Error, Result};
use crate::float17;
use crate::harness::{run_experiment, ExperimentConfig};
use crate::likelihood::Target;
use crate::lm::{read_documents, train_ngram, Corpus, ScoringBackend, TokenSequence, Vocabulary};
use crate::prior::{PrefixSampler, PriorConfig, PriorEstimate};
use crate::seed::derive_seed;
use crate::targets::{
    capitalized_spans, count_entity_frequencies, default_generic_lines, generic_targets, read_targets,
    sample_long_sequences, sample_targets_by_bucket, targets_to_jsonl, FrequencyBuckets,
};

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize)]
pub struct TrainArgs {
    pub corpus: PathBuf,
    pub order: usize,
    pub alpha: f64,
    pub out: PathBuf,
}

/// Train an n-gram model on a text corpus and save it as model JSON. The
/// vocabulary is the corpus' surfaces in first-occurrence order.
pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    let mut manifest = RunManifest::start("train", args, 0);
    let docs = read_documents(&args.corpus)?;
    let corpus = Corpus::build(&docs, &[])?;
    let model = train_ngram(&corpus.docs, corpus.vocab.clone(), args.order, args.alpha)?;
    manifest.model_id = model.model_id().to_string();
    manifest.write_artifact(&args.out, model.to_json().as_bytes())?;
    manifest.finish(&sidecar(&args.out, ".manifest.json"), true)?;
    Ok(manifest)
}

// ---------------------------------------------------------------- shared

fn sampler_for(corpus_path: &Path, vocab: &Vocabulary, prior: &PriorConfig, seed: u64) -> Result<PrefixSampler> {
    let corpus = Corpus::from_path(corpus_path, vocab.clone())?;
    PrefixSampler::new(corpus.docs, prior.prefix_length.unwrap_or(1), derive_seed(seed, "prior"))
}

fn load_generic(path: Option<&Path>, vocab: &Vocabulary) -> Result<Vec<Target>> {
    match path {
        Some(p) if p.extension().is_some_and(|e| e == "jsonl") => read_targets(p),
        Some(p) => generic_targets(&read_documents(p)?, vocab),
        None => generic_targets(&default_generic_lines(), vocab),
    }
}

fn calibrate(
    backend: &Backend,
    vocab: &Vocabulary,
    generic: Option<&Path>,
    sampler: &PrefixSampler,
    prior: &PriorConfig,
) -> Result<(Thresholds, CalibrationReport)> {
    let targets = load_generic(generic, vocab)?;
    let report = calibrate_n(backend, &targets, sampler, prior)?;
    let mut thresholds = Thresholds::with_default_m(report.n, backend.model_id())?;
    thresholds.calibration_manifest = report.manifest();
    Ok((thresholds, report))
}

fn thresholds_json(t: &Thresholds) -> Result<String> {
    let mut s = serde_json::to_string_pretty(t)?;
    s.push('\n');
    Ok(s)
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug, Clone, Serialize)]
pub struct CalibrateArgs {
    pub backend: BackendArgs,
    /// Generic sequences: text (one per line) or target JSONL. Defaults to
    /// the bundled set.
    pub generic: Option<PathBuf>,
    pub sampler_corpus: PathBuf,
    pub prior: PriorConfig,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct CalibrationLine<'a> {
    target_id: &'a str,
    #[serde(with = "float17")]
    ratio: f64,
    #[serde(with = "float17")]
    log_ratio: f64,
    #[serde(with = "float17")]
    log_p_s_given_p: f64,
    #[serde(with = "float17")]
    v_hat: f64,
}

/// Calibrate `n` for one model and write the thresholds file, plus the
/// per-sequence ratios next to it.
pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<(Thresholds, RunManifest)> {
    let mut manifest = RunManifest::start("calibrate", args, args.seed);
    let (backend, vocab) = args.backend.open()?;
    let sampler = sampler_for(&args.sampler_corpus, &vocab, &args.prior, args.seed)?;
    let (thresholds, report) = calibrate(&backend, &vocab, args.generic.as_deref(), &sampler, &args.prior)?;
    manifest.model_id = backend.model_id().to_string();
    manifest.write_artifact(&args.out, thresholds_json(&thresholds)?.as_bytes())?;
    let lines: Vec<CalibrationLine> = report
        .entries
        .iter()
        .map(|e| CalibrationLine {
            target_id: &e.target_id,
            ratio: e.ratio,
            log_ratio: e.log_ratio,
            log_p_s_given_p: e.log_p_s_given_p,
            v_hat: e.v_hat,
        })
        .collect();
    manifest.write_artifact(&sidecar(&args.out, ".calibration.jsonl"), to_jsonl(&lines)?.as_bytes())?;
    for (id, why) in &report.excluded {
        manifest.notes.push(format!("excluded {id}: {why}"));
    }
    manifest.finish(&sidecar(&args.out, ".manifest.json"), true)?;
    Ok((thresholds, manifest))
}

// ---------------------------------------------------------------- audit

#[derive(Debug, Clone, Serialize)]
pub enum ThresholdSource {
    File(PathBuf),
    /// Calibrate on the given generic set (bundled set when `None`).
    Calibrate(Option<PathBuf>),
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditArgs {
    pub backend: BackendArgs,
    pub targets: PathBuf,
    pub sampler_corpus: PathBuf,
    pub prior: PriorConfig,
    pub thresholds: ThresholdSource,
    /// Extra or replacement `m` values by suffix length.
    pub m_overrides: Vec<(usize, f64)>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFailure {
    pub target_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub suffix_class: String,
    pub n_targets: usize,
    pub n_extractable: usize,
    pub n_pa: usize,
    /// `None` when nothing is extractable.
    pub pa_over_extractable: Option<f64>,
}

#[derive(Debug)]
pub struct AuditOutcome {
    pub results: Vec<PAResult>,
    pub failures: Vec<TargetFailure>,
    pub summary: Vec<SummaryRow>,
    pub thresholds: Thresholds,
    pub manifest: RunManifest,
}

fn summarize(results: &[PAResult], suffix_lens: &HashMap<&str, usize>) -> Vec<SummaryRow> {
    let mut by_class: BTreeMap<usize, Vec<&PAResult>> = BTreeMap::new();
    for r in results {
        by_class.entry(suffix_lens[r.target_id.as_str()]).or_default().push(r);
    }
    let row = |label: String, rs: &[&PAResult]| {
        let n_extractable = rs.iter().filter(|r| r.extractable).count();
        let n_pa = rs.iter().filter(|r| r.pa_memorized).count();
        SummaryRow {
            suffix_class: label,
            n_targets: rs.len(),
            n_extractable,
            n_pa,
            pa_over_extractable: (n_extractable > 0).then(|| n_pa as f64 / n_extractable as f64),
        }
    };
    let mut rows: Vec<SummaryRow> = by_class.iter().map(|(len, rs)| row(len.to_string(), rs)).collect();
    let all: Vec<&PAResult> = results.iter().collect();
    rows.push(row("all".into(), &all));
    rows
}

fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["suffix_class", "n_targets", "n_extractable", "n_pa", "pa_over_extractable"])?;
    for r in rows {
        w.write_record([
            r.suffix_class.clone(),
            r.n_targets.to_string(),
            r.n_extractable.to_string(),
            r.n_pa.to_string(),
            r.pa_over_extractable.map(float17::format).unwrap_or_default(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))
}

/// Score, estimate priors for, and classify every target.
///
/// Writes `results.jsonl`, `priors.jsonl`, `failures.jsonl`, `summary.csv`,
/// `thresholds.json`, `targets.jsonl`, `vocab.txt` and `manifest.json` to
/// the output directory. A target whose scoring fails is listed in
/// `failures.jsonl` and makes the command fail after everything is written.
pub fn cmd_audit(args: &AuditArgs) -> Result<AuditOutcome> {
    let mut manifest = RunManifest::start("audit", args, args.seed);
    let (backend, vocab) = args.backend.open()?;
    let targets = read_targets(&args.targets)?;
    let sampler = sampler_for(&args.sampler_corpus, &vocab, &args.prior, args.seed)?;
    let out = |name: &str| args.out_dir.join(name);

    let mut thresholds = match &args.thresholds {
        ThresholdSource::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(format!("reading thresholds {}", path.display()), e))?;
            let t: Thresholds = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("thresholds {}: {e}", path.display())))?;
            t.validate()?;
            if t.model_id != backend.model_id() {
                manifest.notes.push(format!(
                    "thresholds were calibrated for {}, auditing {}",
                    t.model_id,
                    backend.model_id()
                ));
            }
            t
        }
        ThresholdSource::Calibrate(generic) => {
            calibrate(&backend, &vocab, generic.as_deref(), &sampler, &args.prior)?.0
        }
    };
    for &(len, m) in &args.m_overrides {
        thresholds = thresholds.with_m(len, m)?;
    }
    // configuration problems surface before any scoring
    for t in &targets {
        thresholds.m_for(t.suffix.len())?;
    }

    let outcomes: Vec<Result<(PriorEstimate, PAResult)>> = targets
        .par_iter()
        .map(|t| audit_target(&backend, t, &sampler, &args.prior, &thresholds).map(|(_, e, r)| (e, r)))
        .collect();
    let mut results = Vec::new();
    let mut priors = Vec::new();
    let mut failures = Vec::new();
    for (t, o) in targets.iter().zip(outcomes) {
        match o {
            Ok((e, r)) => {
                priors.push(e);
                results.push(r);
            }
            Err(e) => {
                log::error!("target {}: {e}", t.id);
                failures.push(TargetFailure { target_id: t.id.clone(), error: e.to_string() });
            }
        }
    }
    let suffix_lens: HashMap<&str, usize> = targets.iter().map(|t| (t.id.as_str(), t.suffix.len())).collect();
    let summary = summarize(&results, &suffix_lens);

    manifest.model_id = backend.model_id().to_string();
    manifest.write_artifact(&out("results.jsonl"), to_jsonl(&results)?.as_bytes())?;
    manifest.write_artifact(&out("priors.jsonl"), to_jsonl(&priors)?.as_bytes())?;
    manifest.write_artifact(&out("failures.jsonl"), to_jsonl(&failures)?.as_bytes())?;
    manifest.write_artifact(&out("summary.csv"), &summary_csv(&summary)?)?;
    manifest.write_artifact(&out("thresholds.json"), thresholds_json(&thresholds)?.as_bytes())?;
    manifest.write_artifact(&out("targets.jsonl"), targets_to_jsonl(&targets).as_bytes())?;
    manifest.write_artifact(&out("vocab.txt"), (vocab.surfaces().join("\n") + "\n").as_bytes())?;
    let ok = failures.is_empty();
    manifest.finish(&out("manifest.json"), ok)?;
    if !ok {
        return Err(Error::Pipeline(format!(
            "{} of {} targets failed; see {}",
            failures.len(),
            targets.len(),
            out("failures.jsonl").display()
        )));
    }
    Ok(AuditOutcome { results, failures, summary, thresholds, manifest })
}

// ---------------------------------------------------------------- counterfactual

#[derive(Debug, Clone, Serialize)]
pub struct CounterfactualArgs {
    pub config: PathBuf,
    pub out_dir: PathBuf,
    /// Replaces the seed in the configuration file.
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct CorrelationFile<'a> {
    #[serde(flatten)]
    correlation: &'a crate::harness::CorrelationSummary,
    audit_deviations: usize,
    excluded_models: &'a [(String, String)],
    breakdown: &'a [crate::harness::BreakdownRow],
}

/// Run the sweep described by an experiment configuration file.
///
/// Writes `points.jsonl`, `correlation.json`, `breakdown.csv`,
/// `scatter.csv`, `cells.jsonl`, `config.resolved.json` and
/// `manifest.json`. A failed sweep still writes the completed cells and a
/// manifest with status `failed`.
pub fn cmd_counterfactual(args: &CounterfactualArgs) -> Result<RunManifest> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mut manifest = RunManifest::start("counterfactual", &cfg, cfg.seed);
    let out = |name: &str| args.out_dir.join(name);
    let base_dir = args.config.parent().unwrap_or(Path::new("."));
    let exp = cfg.prepare(base_dir)?;
    manifest.model_id = format!("ngram{}-alpha{}", exp.order, exp.alpha);
    manifest.write_artifact(&out("config.resolved.json"), (serde_json::to_string_pretty(&cfg)? + "\n").as_bytes())?;
    let result = match run_experiment(&exp) {
        Ok(r) => r,
        Err(failure) => {
            manifest.write_artifact(&out("cells.jsonl"), to_jsonl(&failure.completed)?.as_bytes())?;
            for ((e, d), seed, err) in &failure.failures {
                manifest.notes.push(format!("composition ({e}, {d}) seed {seed}: {err}"));
            }
            manifest.finish(&out("manifest.json"), false)?;
            return Err(failure.into());
        }
    };
    manifest.write_artifact(&out("points.jsonl"), to_jsonl(&result.points)?.as_bytes())?;
    manifest.write_artifact(&out("cells.jsonl"), to_jsonl(&result.cells)?.as_bytes())?;
    let corr = CorrelationFile {
        correlation: &result.correlation,
        audit_deviations: result.audit_deviations(),
        excluded_models: &result.excluded,
        breakdown: &result.breakdown,
    };
    manifest.write_artifact(&out("correlation.json"), (serde_json::to_string_pretty(&corr)? + "\n").as_bytes())?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["exact_copies", "mean_p_s_given_p", "mean_v_hat"])?;
    for b in &result.breakdown {
        w.write_record([
            b.exact_copies.to_string(),
            float17::format(b.mean_p_s_given_p),
            float17::format(b.mean_v_hat),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?;
    manifest.write_artifact(&out("breakdown.csv"), &bytes)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x_counterfactual", "y_pa_log", "composition"])?;
    for p in &result.points {
        w.write_record([
            float17::format(p.x_counterfactual),
            float17::format(p.y_pa_log),
            format!("{}:{}", p.composition.0, p.composition.1),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?;
    manifest.write_artifact(&out("scatter.csv"), &bytes)?;

    if result.audit_deviations() > 0 {
        manifest.notes.push(format!("{} composition audit deviations", result.audit_deviations()));
    }
    manifest.finish(&out("manifest.json"), true)?;
    Ok(manifest)
}

// ---------------------------------------------------------------- targets

#[derive(Debug, Clone, Serialize)]
pub enum TargetsKind {
    /// Uniform corpus windows.
    Long { prefix_len: usize, suffix_len: usize, k: usize },
    /// Bucket-uniform entity targets. Entities come from a file (one
    /// surface per line) or, when absent, the capitalized-span heuristic.
    Entities { entities: Option<PathBuf>, per_bucket: usize, prefix_len: usize, buckets: Option<Vec<u64>> },
    /// Generic calibration targets (bundled set when `file` is absent).
    Generic { file: Option<PathBuf> },
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetsArgs {
    pub kind: TargetsKind,
    /// Model JSON or vocabulary list used to tokenize.
    pub vocab: PathBuf,
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
}

/// Build a target JSONL file.
pub fn cmd_targets(args: &TargetsArgs) -> Result<(Vec<Target>, RunManifest)> {
    let mut manifest = RunManifest::start("targets", args, args.seed);
    let vocab = load_vocabulary(&args.vocab)?;
    let corpus_texts = || -> Result<Vec<String>> {
        let path = args.corpus.as_ref().ok_or_else(|| Error::Config("--corpus is required".into()))?;
        read_documents(path)
    };
    let targets = match &args.kind {
        TargetsKind::Long { prefix_len, suffix_len, k } => {
            let corpus = Corpus::with_vocab(&corpus_texts()?, vocab)?;
            sample_long_sequences(&corpus.docs, *prefix_len, *suffix_len, *k, args.seed)?
        }
        TargetsKind::Entities { entities, per_bucket, prefix_len, buckets } => {
            let texts = corpus_texts()?;
            let surfaces = match entities {
                Some(p) => read_documents(p)?,
                None => {
                    manifest.notes.push("entities from the capitalized-span heuristic (demo only)".into());
                    capitalized_spans(&texts)
                }
            };
            let inventory = count_entity_frequencies(&texts, &surfaces)?;
            let buckets = match buckets {
                Some(b) => FrequencyBuckets::new(b.clone())?,
                None => FrequencyBuckets::default(),
            };
            let corpus = Corpus::with_vocab(&texts, vocab)?;
            let sample = sample_targets_by_bucket(&inventory, &buckets, *per_bucket, &corpus, *prefix_len, args.seed)?;
            for s in &sample.skipped {
                manifest.notes.push(format!("skipped {:?} (bucket {}): {}", s.surface, s.bucket, s.reason));
            }
            for s in &sample.shortfalls {
                log::warn!("bucket {}: {} of {} targets", s.label, s.produced, s.requested);
                manifest.notes.push(format!("shortfall in bucket {}: {} of {}", s.label, s.produced, s.requested));
            }
            manifest.write_artifact(
                &sidecar(&args.out, ".inventory.json"),
                (serde_json::to_string_pretty(&inventory)? + "\n").as_bytes(),
            )?;
            sample.targets
        }
        TargetsKind::Generic { file } => load_generic(file.as_deref(), &vocab)?,
    };
    manifest.write_artifact(&args.out, targets_to_jsonl(&targets).as_bytes())?;
    manifest.finish(&sidecar(&args.out, ".manifest.json"), true)?;
    Ok((targets, manifest))
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, Serialize)]
pub struct ReportArgs {
    pub run_dir: PathBuf,
    pub k: usize,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn audit_report(dir: &Path, k: usize) -> Result<String> {
    let mut results: Vec<PAResult> = read_jsonl(&dir.join("results.jsonl"))?;
    let targets = read_targets(dir.join("targets.jsonl"))?;
    let vocab = load_vocabulary(&dir.join("vocab.txt"))?;
    let by_id: HashMap<&str, &Target> = targets.iter().map(|t| (t.id.as_str(), t)).collect();
    results.sort_by(|a, b| b.log_ratio.total_cmp(&a.log_ratio).then_with(|| a.target_id.cmp(&b.target_id)));
    let extractable = results.iter().filter(|r| r.extractable).count();
    let pa = results.iter().filter(|r| r.pa_memorized).count();

    let mut s = String::new();
    s.push_str(&format!("# Audit report: {}\n\n", dir.display()));
    if let Some(r) = results.first() {
        s.push_str(&format!("Model `{}`, n = {:.6}\n\n", r.model, r.n));
    }
    s.push_str(&format!("{} targets, {} extractable, {} prior-aware memorized\n", results.len(), extractable, pa));
    let decode = |seq: &TokenSequence| vocab.decode(seq).replace('|', "\\|");
    let mut table = |title: &str, rows: &[&PAResult]| {
        s.push_str(&format!("\n## {title}\n\n"));
        s.push_str("| target | log ratio | log P(s\\|p) | v_hat | PA | prefix | suffix |\n");
        s.push_str("|---|---:|---:|---:|:-:|---|---|\n");
        for r in rows {
            let (p, sfx) =
                by_id.get(r.target_id.as_str()).map(|t| (decode(&t.prefix), decode(&t.suffix))).unwrap_or_default();
            s.push_str(&format!(
                "| {} | {:.4} | {:.4} | {:.4e} | {} | {} | **{}** |\n",
                r.target_id,
                r.log_ratio,
                r.log_p_s_given_p,
                r.v_hat,
                if r.pa_memorized { "yes" } else { "no" },
                p,
                sfx
            ));
        }
    };
    let top: Vec<&PAResult> = results.iter().take(k).collect();
    let bottom: Vec<&PAResult> = results.iter().rev().take(k).collect();
    table(&format!("Highest {} by log ratio", top.len()), &top);
    table(&format!("Lowest {} by log ratio", bottom.len()), &bottom);
    Ok(s)
}

fn counterfactual_report(dir: &Path) -> Result<String> {
    let points: Vec<crate::harness::ExperimentPoint> = read_jsonl(&dir.join("points.jsonl"))?;
    let corr_path = dir.join("correlation.json");
    let corr: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&corr_path).map_err(|e| Error::io(format!("reading {}", corr_path.display()), e))?,
    )?;
    let mut s = format!("# Counterfactual sweep: {}\n\n", dir.display());
    s.push_str("| exact | near-dup | x (counterfactual) | y (PA log) | models |\n|---:|---:|---:|---:|---:|\n");
    for p in &points {
        s.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} | {} |\n",
            p.composition.0, p.composition.1, p.x_counterfactual, p.y_pa_log, p.n_models
        ));
    }
    s.push_str(&format!(
        "\nSpearman {:.4}, Pearson {:.4}, audit deviations {}\n",
        corr["spearman"].as_f64().unwrap_or(f64::NAN),
        corr["pearson"].as_f64().unwrap_or(f64::NAN),
        corr["audit_deviations"]
    ));
    Ok(s)
}

/// Render a markdown report for an audit or counterfactual run directory
/// and save it as `report.md` in that directory.
pub fn cmd_report(args: &ReportArgs) -> Result<(String, RunManifest)> {
    let mut manifest = RunManifest::start("report", args, 0);
    let dir = &args.run_dir;
    let text = if dir.join("results.jsonl").exists() {
        audit_report(dir, args.k)?
    } else if dir.join("points.jsonl").exists() {
        counterfactual_report(dir)?
    } else {
        return Err(Error::invalid(format!("{} has neither results.jsonl nor points.jsonl", dir.display())));
    };
    manifest.write_artifact(&dir.join("report.md"), text.as_bytes())?;
    manifest.finish(&dir.join("report.manifest.json"), true)?;
    Ok((text, manifest))
}
