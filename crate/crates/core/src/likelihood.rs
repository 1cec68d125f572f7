//! Verbatim-leakage likelihood `log P(s | p)` and the extractable predicate.
//!
//! `P(s | p)` is the teacher-forced product of per-token conditionals, each
//! conditioned on the prefix and the true preceding suffix tokens. It is
//! kept in natural-log space throughout; a 50-token suffix underflows a
//! double otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{ScoringBackend, TokenSequence};
use crate::stats::pairwise_sum;

/// Default cap on prefix length for audit targets.
pub const DEFAULT_MAX_PREFIX: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSource {
    NamedEntity,
    LongSequence,
    Satml,
    #[default]
    Generic,
    Synthetic,
}

/// A prefix/suffix pair under audit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    pub id: String,
    pub prefix: TokenSequence,
    pub suffix: TokenSequence,
    pub source: TargetSource,
}

impl Target {
    pub fn new(
        id: impl Into<String>,
        prefix: impl Into<TokenSequence>,
        suffix: impl Into<TokenSequence>,
        source: TargetSource,
    ) -> Result<Self> {
        let t = Target { id: id.into(), prefix: prefix.into(), suffix: suffix.into(), source };
        t.validate(DEFAULT_MAX_PREFIX)?;
        Ok(t)
    }

    pub fn validate(&self, max_prefix: usize) -> Result<()> {
        if self.suffix.is_empty() {
            return Err(Error::invalid(format!("target {}: suffix is empty", self.id)));
        }
        if self.prefix.len() > max_prefix {
            return Err(Error::invalid(format!(
                "target {}: prefix has {} tokens, cap is {max_prefix}",
                self.id,
                self.prefix.len()
            )));
        }
        Ok(())
    }

    /// `p ‖ s`.
    pub fn full_sequence(&self) -> TokenSequence {
        self.prefix.concat(&self.suffix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub log_p_s_given_p: f64,
    pub per_token: Vec<f64>,
    pub model_id: String,
    /// False when the backend scored a different number of tokens than the
    /// suffix has (text-mode endpoints with their own tokenizer).
    pub aligned: bool,
}

impl SequenceScore {
    pub fn from_per_token(per_token: Vec<f64>, model_id: impl Into<String>, expected_len: usize) -> Result<Self> {
        if let Some((index, &value)) = per_token.iter().enumerate().find(|(_, v)| !v.is_finite() || **v > 0.0) {
            return Err(Error::InvalidLogprob { index, value });
        }
        Ok(SequenceScore {
            log_p_s_given_p: pairwise_sum(&per_token),
            aligned: per_token.len() == expected_len,
            per_token,
            model_id: model_id.into(),
        })
    }

    pub fn probability(&self) -> f64 {
        self.log_p_s_given_p.exp()
    }

    /// Token count of the suffix as the scoring backend saw it.
    pub fn suffix_len(&self) -> usize {
        self.per_token.len()
    }
}

/// `log P(suffix | prefix)` under teacher forcing.
pub fn seq_logprob<B: ScoringBackend + ?Sized>(backend: &B, prefix: &[u32], suffix: &[u32]) -> Result<SequenceScore> {
    if suffix.is_empty() {
        return Err(Error::invalid("cannot score an empty suffix"));
    }
    let per_token = backend.continuation_logprobs(prefix, suffix)?;
    SequenceScore::from_per_token(per_token, backend.model_id(), suffix.len())
}

pub fn score_target<B: ScoringBackend + ?Sized>(backend: &B, target: &Target) -> Result<SequenceScore> {
    seq_logprob(backend, &target.prefix, &target.suffix)
}

/// `P(s | p) > m`, compared in log space.
pub fn is_extractable(score: &SequenceScore, m: f64) -> Result<bool> {
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::Config(format!("threshold m must lie in (0, 1), got {m}")));
    }
    Ok(score.log_p_s_given_p > m.ln())
}
