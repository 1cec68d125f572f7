//! Prior-aware classification.
//!
//! A target `p ‖ s` is PA-memorized when both
//!
//! * `P(s | p) > m` (it is extractable), and
//! * `P(s | p) / P(s) > n` (the suffix is tied to this prefix rather than
//!   being likely after arbitrary text).
//!
//! `m` is chosen per suffix length. `n` is calibrated per model as the mean
//! ratio over generic, easy-to-predict sequences. All comparisons are strict
//! and done on logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{score_target, SequenceScore, Target};
use crate::lm::ScoringBackend;
use crate::prior::{estimate_target_prior, PrefixSampler, PriorConfig, PriorEstimate};
use crate::stats::pairwise_sum;

/// Default `m` for 4-token suffixes.
pub const DEFAULT_M_SHORT: f64 = 0.01;
/// Default `m` for 50-token suffixes.
pub const DEFAULT_M_LONG: f64 = 0.0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// `m` keyed by suffix length in tokens.
    #[serde(rename = "m")]
    pub m_by_suffix_class: BTreeMap<usize, f64>,
    pub n: f64,
    #[serde(rename = "model")]
    pub model_id: String,
    #[serde(default)]
    pub calibration_manifest: Vec<String>,
}

impl Thresholds {
    pub fn default_m() -> BTreeMap<usize, f64> {
        BTreeMap::from([(4, DEFAULT_M_SHORT), (50, DEFAULT_M_LONG)])
    }

    pub fn new(m_by_suffix_class: BTreeMap<usize, f64>, n: f64, model_id: impl Into<String>) -> Result<Self> {
        let t = Thresholds { m_by_suffix_class, n, model_id: model_id.into(), calibration_manifest: Vec::new() };
        t.validate()?;
        Ok(t)
    }

    pub fn with_default_m(n: f64, model_id: impl Into<String>) -> Result<Self> {
        Self::new(Self::default_m(), n, model_id)
    }

    pub fn with_m(mut self, suffix_len: usize, m: f64) -> Result<Self> {
        self.m_by_suffix_class.insert(suffix_len, m);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (&len, &m) in &self.m_by_suffix_class {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::Config(format!("m for {len}-token suffixes must lie in (0, 1), got {m}")));
            }
        }
        if !(self.n > 0.0 && self.n.is_finite()) {
            return Err(Error::Config(format!("n must be positive and finite, got {}", self.n)));
        }
        Ok(())
    }

    pub fn m_for(&self, suffix_len: usize) -> Result<f64> {
        self.m_by_suffix_class.get(&suffix_len).copied().ok_or_else(|| {
            Error::Config(format!(
                "no m threshold configured for {suffix_len}-token suffixes (configured: {:?})",
                self.m_by_suffix_class.keys().collect::<Vec<_>>()
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PAResult {
    pub target_id: String,
    #[serde(with = "crate::float17")]
    pub log_p_s_given_p: f64,
    #[serde(with = "crate::float17")]
    pub v_hat: f64,
    #[serde(with = "crate::float17")]
    pub log_ratio: f64,
    pub extractable: bool,
    pub pa_memorized: bool,
    #[serde(with = "crate::float17")]
    pub m: f64,
    #[serde(with = "crate::float17")]
    pub n: f64,
    pub model: String,
}

impl PAResult {
    pub fn ratio(&self) -> f64 {
        self.log_ratio.exp()
    }
}

/// `log P(s | p) - log v_hat`.
pub fn relative_belief_ratio(score: &SequenceScore, prior: &PriorEstimate) -> Result<f64> {
    if prior.v_hat.is_nan() || prior.v_hat <= 0.0 {
        return Err(Error::DegeneratePrior { suffix_id: prior.suffix_id.clone() });
    }
    Ok(score.log_p_s_given_p - prior.v_hat.ln())
}

pub fn classify_pa(
    target_id: &str,
    score: &SequenceScore,
    prior: &PriorEstimate,
    thresholds: &Thresholds,
) -> Result<PAResult> {
    let m = thresholds.m_for(score.suffix_len())?;
    let log_ratio = relative_belief_ratio(score, prior)?;
    let extractable = score.log_p_s_given_p > m.ln();
    let pa_memorized = extractable && log_ratio > thresholds.n.ln();
    Ok(PAResult {
        target_id: target_id.to_string(),
        log_p_s_given_p: score.log_p_s_given_p,
        v_hat: prior.v_hat,
        log_ratio,
        extractable,
        pa_memorized,
        m,
        n: thresholds.n,
        model: score.model_id.clone(),
    })
}

/// Score, estimate the prior, and classify one target.
pub fn audit_target<B: ScoringBackend + ?Sized>(
    backend: &B,
    target: &Target,
    sampler: &PrefixSampler,
    prior: &PriorConfig,
    thresholds: &Thresholds,
) -> Result<(SequenceScore, PriorEstimate, PAResult)> {
    let score = score_target(backend, target)?;
    let estimate = estimate_target_prior(backend, target, sampler, prior)?;
    let result = classify_pa(&target.id, &score, &estimate, thresholds)?;
    Ok((score, estimate, result))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub target_id: String,
    pub ratio: f64,
    pub log_ratio: f64,
    pub log_p_s_given_p: f64,
    pub v_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub n: f64,
    pub entries: Vec<CalibrationEntry>,
    /// `(target_id, reason)` for targets left out of the mean.
    pub excluded: Vec<(String, String)>,
}

impl CalibrationReport {
    pub fn manifest(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.target_id.clone()).collect()
    }

    /// Mean of per-target ratios, averaged in probability space.
    pub fn from_entries(entries: Vec<CalibrationEntry>, excluded: Vec<(String, String)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::CalibrationFailed(format!(
                "every generic target was excluded ({} total)",
                excluded.len()
            )));
        }
        let ratios: Vec<f64> = entries.iter().map(|e| e.ratio).collect();
        let n = pairwise_sum(&ratios) / ratios.len() as f64;
        Ok(CalibrationReport { n, entries, excluded })
    }
}

/// Calibrate `n` as the mean of `P(s|p) / v_hat` over generic targets.
pub fn calibrate_n<B: ScoringBackend + ?Sized>(
    backend: &B,
    generic_targets: &[Target],
    sampler: &PrefixSampler,
    prior: &PriorConfig,
) -> Result<CalibrationReport> {
    if generic_targets.is_empty() {
        return Err(Error::invalid("calibration needs at least one generic target"));
    }
    let mut entries = Vec::new();
    let mut excluded = Vec::new();
    for target in generic_targets {
        let score = score_target(backend, target)?;
        let estimate = estimate_target_prior(backend, target, sampler, prior)?;
        match relative_belief_ratio(&score, &estimate) {
            Ok(log_ratio) => entries.push(CalibrationEntry {
                target_id: target.id.clone(),
                ratio: log_ratio.exp(),
                log_ratio,
                log_p_s_given_p: score.log_p_s_given_p,
                v_hat: estimate.v_hat,
            }),
            Err(e @ Error::DegeneratePrior { .. }) => {
                log::warn!("calibration: excluding {}: {e}", target.id);
                excluded.push((target.id.clone(), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    CalibrationReport::from_entries(entries, excluded)
}
