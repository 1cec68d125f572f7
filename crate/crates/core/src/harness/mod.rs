//! Controlled counterfactual experiment.
//!
//! For each composition `(exact copies, near-duplicates)` and seed, two
//! n-gram models are trained: one on a corpus containing the exact copies of
//! the target `p ‖ s`, and a baseline on the same corpus with those copies
//! swapped for filler. Per composition the sweep reports
//!
//! * `x`: mean `log P(s|p)` under target models minus the same mean under
//!   baseline models (the counterfactual effect of the copies), and
//! * `y`: mean `log P(s|p)` minus mean `log v̂ₛ` under target models (the
//!   prior-aware score),
//!
//! and the rank and linear correlation of `x` and `y` across compositions.
//! Models are weighted uniformly in every mean.

mod compose;
mod config;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{seq_logprob, Target};
use crate::lm::{train_ngram, ScoringBackend};
use crate::prior::{estimate_prior, PrefixSampler};
use crate::stats::{mean, pearson, spearman, standard_error};

pub use compose::{
    audit_corpus, compose_dataset, compose_real_data, diff_audit, distinct_near_duplicates, make_near_duplicate,
    positional_overlap, ComposedDatasets, CompositionAudit, CompositionCounts, CompositionSpec, NearDupSpec,
    RealDataComposition, Removal, DEFAULT_OVERLAP, DEFAULT_PAIRS, DEFAULT_TOTAL_SIZE,
};
pub use config::{
    synthetic_corpus, ExperimentConfig, ModelConfig, PreparedExperiment, SamplerConfig, SyntheticCorpusConfig,
    TargetConfig, ZipfChain,
};

/// Mean of `log P(s|p)` under `target_models` minus the mean under
/// `baseline_models`.
pub fn measure_counterfactual<B: ScoringBackend>(
    target_models: &[B],
    baseline_models: &[B],
    target: &Target,
) -> Result<f64> {
    if target_models.is_empty() || baseline_models.is_empty() {
        return Err(Error::invalid("both model lists must be nonempty"));
    }
    let score = |models: &[B]| -> Result<Vec<f64>> {
        models.iter().map(|m| seq_logprob(m, &target.prefix, &target.suffix).map(|s| s.log_p_s_given_p)).collect()
    };
    Ok(mean(&score(target_models)?) - mean(&score(baseline_models)?))
}

/// Outcome of [`measure_pa_log`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaLog {
    pub y: f64,
    pub mean_log_p_s_given_p: f64,
    pub mean_log_v_hat: f64,
    pub n_models: usize,
    /// `(model_id, reason)` for models left out because of a degenerate prior.
    pub excluded: Vec<(String, String)>,
}

/// Mean `log P(s|p)` minus mean `log v̂ₛ` over `target_models`, every prior
/// estimated with the same sampler and seed. Models whose prior estimate is
/// zero are excluded from both means and reported.
pub fn measure_pa_log<B: ScoringBackend>(
    target_models: &[B],
    target: &Target,
    sampler: &PrefixSampler,
    c: usize,
    trials: usize,
) -> Result<PaLog> {
    if target_models.is_empty() {
        return Err(Error::invalid("target model list is empty"));
    }
    let mut log_p = Vec::new();
    let mut log_v = Vec::new();
    let mut excluded = Vec::new();
    for m in target_models {
        let lp = seq_logprob(m, &target.prefix, &target.suffix)?.log_p_s_given_p;
        let prior = estimate_prior(m, &target.suffix, sampler, c, trials)?;
        if prior.v_hat > 0.0 {
            log_p.push(lp);
            log_v.push(prior.log_v_hat());
        } else {
            excluded.push((m.model_id().to_string(), "prior estimate is zero".to_string()));
        }
    }
    pa_log_from(&log_p, &log_v, excluded)
}

fn pa_log_from(log_p: &[f64], log_v: &[f64], excluded: Vec<(String, String)>) -> Result<PaLog> {
    if log_p.is_empty() {
        return Err(Error::DegeneratePrior { suffix_id: "every model".into() });
    }
    let mean_log_p_s_given_p = mean(log_p);
    let mean_log_v_hat = mean(log_v);
    Ok(PaLog {
        y: mean_log_p_s_given_p - mean_log_v_hat,
        mean_log_p_s_given_p,
        mean_log_v_hat,
        n_models: log_p.len(),
        excluded,
    })
}

/// Scalars kept from one `(composition, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub composition: (usize, usize),
    pub seed: u64,
    #[serde(with = "crate::float17")]
    pub log_p_target: f64,
    #[serde(with = "crate::float17")]
    pub log_p_baseline: f64,
    #[serde(with = "crate::float17")]
    pub v_hat: f64,
    pub audit: CompositionAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPoint {
    pub composition: (usize, usize),
    #[serde(with = "crate::float17")]
    pub x_counterfactual: f64,
    #[serde(with = "crate::float17")]
    pub y_pa_log: f64,
    #[serde(with = "crate::float17")]
    pub mean_log_p_s_given_p_target: f64,
    #[serde(with = "crate::float17")]
    pub mean_log_p_s_given_p_baseline: f64,
    #[serde(with = "crate::float17")]
    pub mean_log_v_hat: f64,
    pub n_models: usize,
}

/// Probability-space means per composition, with standard errors across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub exact_copies: usize,
    #[serde(with = "crate::float17")]
    pub mean_p_s_given_p: f64,
    #[serde(with = "crate::float17")]
    pub mean_v_hat: f64,
    #[serde(with = "crate::float17")]
    pub se_p_s_given_p: f64,
    #[serde(with = "crate::float17")]
    pub se_v_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub n_compositions: usize,
    #[serde(with = "crate::float17")]
    pub spearman: f64,
    #[serde(with = "crate::float17")]
    pub pearson: f64,
    /// Least-squares slope of `y` on `x`; reported, not interpreted.
    #[serde(with = "crate::float17")]
    pub slope_y_on_x: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub points: Vec<ExperimentPoint>,
    pub correlation: CorrelationSummary,
    pub breakdown: Vec<BreakdownRow>,
    pub cells: Vec<CellResult>,
    /// `(cell, reason)` for target models dropped from `y` means.
    pub excluded: Vec<(String, String)>,
}

impl ExperimentResult {
    pub fn audits(&self) -> impl Iterator<Item = &CompositionAudit> {
        self.cells.iter().map(|c| &c.audit)
    }

    pub fn audit_deviations(&self) -> usize {
        self.audits().map(|a| a.deviations.len()).sum()
    }
}

/// A sweep that stopped early; `completed` holds every cell that finished.
#[derive(Debug)]
pub struct SweepFailure {
    pub completed: Vec<CellResult>,
    pub failures: Vec<((usize, usize), u64, Error)>,
}

impl std::fmt::Display for SweepFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} of {} cells failed", self.failures.len(), self.failures.len() + self.completed.len())?;
        if let Some(((e, d), seed, err)) = self.failures.first() {
            write!(f, "; first: composition ({e}, {d}) seed {seed}: {err}")?;
        }
        Ok(())
    }
}

impl std::error::Error for SweepFailure {}

impl From<SweepFailure> for Error {
    fn from(f: SweepFailure) -> Self {
        Error::Pipeline(f.to_string())
    }
}

fn run_cell(exp: &PreparedExperiment, pool: &[usize], pair_index: usize, seed: u64) -> Result<CellResult> {
    let spec = &exp.spec;
    let (e, d) = spec.pairs[pair_index];
    let data = compose::compose_with_pool(spec, pool, pair_index, seed)?;
    let audit = CompositionAudit::check(spec, pair_index, seed, &data);
    let target = &spec.target;
    let target_model = train_ngram(&data.target_corpus, exp.vocab.clone(), exp.order, exp.alpha)?
        .with_model_id(format!("target-{e}-{d}-seed{seed}"));
    let baseline_model = train_ngram(&data.baseline_corpus, exp.vocab.clone(), exp.order, exp.alpha)?
        .with_model_id(format!("baseline-{e}-{d}-seed{seed}"));
    let log_p_target = seq_logprob(&target_model, &target.prefix, &target.suffix)?.log_p_s_given_p;
    let log_p_baseline = seq_logprob(&baseline_model, &target.prefix, &target.suffix)?.log_p_s_given_p;
    let prior = estimate_prior(&target_model, &target.suffix, &exp.sampler, exp.c, exp.trials)?;
    Ok(CellResult { composition: (e, d), seed, log_p_target, log_p_baseline, v_hat: prior.v_hat, audit })
}

/// Run every `(composition, seed)` cell in parallel and reduce per
/// composition in a fixed order.
pub fn run_experiment(exp: &PreparedExperiment) -> std::result::Result<ExperimentResult, SweepFailure> {
    let spec = &exp.spec;
    let pool = spec.filler_pool();
    let cells: Vec<(usize, u64)> =
        (0..spec.pairs.len()).flat_map(|p| spec.seeds.iter().map(move |&s| (p, s))).collect();
    let outcomes: Vec<Result<CellResult>> = cells.par_iter().map(|&(p, s)| run_cell(exp, &pool, p, s)).collect();
    let mut completed = Vec::new();
    let mut failures = Vec::new();
    for (&(p, s), r) in cells.iter().zip(outcomes) {
        match r {
            Ok(c) => completed.push(c),
            Err(e) => failures.push((spec.pairs[p], s, e)),
        }
    }
    if !failures.is_empty() {
        return Err(SweepFailure { completed, failures });
    }
    match summarize(spec, completed) {
        Ok(r) => Ok(r),
        Err((completed, err)) => Err(SweepFailure { completed, failures: vec![((0, 0), 0, err)] }),
    }
}

fn summarize(
    spec: &CompositionSpec,
    cells: Vec<CellResult>,
) -> std::result::Result<ExperimentResult, (Vec<CellResult>, Error)> {
    let mut points = Vec::new();
    let mut breakdown = Vec::new();
    let mut excluded = Vec::new();
    for &pair in &spec.pairs {
        let group: Vec<&CellResult> = cells.iter().filter(|c| c.composition == pair).collect();
        let lt: Vec<f64> = group.iter().map(|c| c.log_p_target).collect();
        let lb: Vec<f64> = group.iter().map(|c| c.log_p_baseline).collect();
        let mut kept_lp = Vec::new();
        let mut kept_lv = Vec::new();
        let mut dropped = Vec::new();
        for c in &group {
            if c.v_hat > 0.0 {
                kept_lp.push(c.log_p_target);
                kept_lv.push(c.v_hat.ln());
            } else {
                dropped.push((format!("({}, {}) seed {}", pair.0, pair.1, c.seed), "prior estimate is zero".into()));
            }
        }
        let pa = match pa_log_from(&kept_lp, &kept_lv, dropped) {
            Ok(pa) => pa,
            Err(e) => return Err((cells, e)),
        };
        excluded.extend(pa.excluded.iter().cloned());
        let mean_t = mean(&lt);
        let mean_b = mean(&lb);
        points.push(ExperimentPoint {
            composition: pair,
            x_counterfactual: mean_t - mean_b,
            y_pa_log: pa.y,
            mean_log_p_s_given_p_target: mean_t,
            mean_log_p_s_given_p_baseline: mean_b,
            mean_log_v_hat: pa.mean_log_v_hat,
            n_models: pa.n_models,
        });
        let p: Vec<f64> = lt.iter().map(|l| l.exp()).collect();
        let v: Vec<f64> = group.iter().map(|c| c.v_hat).collect();
        breakdown.push(BreakdownRow {
            exact_copies: pair.0,
            mean_p_s_given_p: mean(&p),
            mean_v_hat: mean(&v),
            se_p_s_given_p: standard_error(&p),
            se_v_hat: standard_error(&v),
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.x_counterfactual).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y_pa_log).collect();
    let correlation = CorrelationSummary {
        n_compositions: points.len(),
        spearman: spearman(&xs, &ys),
        pearson: pearson(&xs, &ys),
        slope_y_on_x: slope(&xs, &ys),
    };
    Ok(ExperimentResult { points, correlation, breakdown, cells, excluded })
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}
