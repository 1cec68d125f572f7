//! Counterfactual harness: dataset composition, the two measurements, and
//! the real-data baseline.

use std::path::Path;
use std::sync::Arc;

use pamem::harness::{
    audit_corpus, compose_dataset, compose_real_data, diff_audit, make_near_duplicate, measure_counterfactual,
    measure_pa_log, positional_overlap, ExperimentConfig, NearDupSpec,
};
use pamem::likelihood::{Target, TargetSource};
use pamem::lm::{train_ngram, ScoringBackend, TokenId, TokenSequence};
use pamem::prior::PrefixSampler;
use pamem::{Error, Result};

/// Scores every continuation token at a fixed logprob.
struct Fixed {
    id: String,
    per_token: f64,
}

impl Fixed {
    fn new(id: &str, per_token: f64) -> Self {
        Fixed { id: id.into(), per_token }
    }
}

impl ScoringBackend for Fixed {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn continuation_logprobs(&self, _context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        Ok(vec![self.per_token; continuation.len()])
    }
}

/// Scores `-1` per token after a context ending in token 0, `-3` otherwise.
struct ContextSensitive(String);

impl ScoringBackend for ContextSensitive {
    fn model_id(&self) -> &str {
        &self.0
    }

    fn continuation_logprobs(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        let mut last = context.last().copied();
        Ok(continuation
            .iter()
            .map(|&t| {
                let lp = if last == Some(0) { -1.0 } else { -3.0 };
                last = Some(t);
                lp
            })
            .collect())
    }
}

fn target() -> Target {
    Target::new("t", vec![0u32], vec![5u32, 6], TargetSource::Synthetic).unwrap()
}

#[test]
fn counterfactual_is_a_difference_of_mean_log_likelihoods() {
    let t = target();
    let targets = [Fixed::new("a", -1.0), Fixed::new("b", -2.0)];
    let baselines = [Fixed::new("c", -4.0), Fixed::new("d", -5.0), Fixed::new("e", -6.0)];
    // Target means: (-2 + -4)/2 = -3; baseline means: (-8 - 10 - 12)/3 = -10.
    let x = measure_counterfactual(&targets, &baselines, &t).unwrap();
    assert!((x - 7.0).abs() < 1e-12, "{x}");
    assert_eq!(measure_counterfactual(&targets, &targets, &t).unwrap(), 0.0);
    let none: [Fixed; 0] = [];
    assert!(matches!(measure_counterfactual(&none, &targets, &t), Err(Error::InvalidInput(_))));
}

#[test]
fn pa_log_subtracts_the_mean_log_prior() {
    let t = target();
    // Windows of length 1: token 0 in one of four windows.
    let corpus = Arc::new(vec![TokenSequence::new(vec![0, 1, 2, 3])]);
    let sampler = PrefixSampler::new(corpus, 1, 3).unwrap();
    let models = [ContextSensitive("m".into())];
    let got = measure_pa_log(&models, &t, &sampler, 4000, 2).unwrap();
    // log P(s|p): first token after 0 scores -1, second -3.
    assert!((got.mean_log_p_s_given_p + 4.0).abs() < 1e-12);
    // Exact prior: 1/4 · e^-4 + 3/4 · e^-6.
    let exact = 0.25 * (-4.0f64).exp() + 0.75 * (-6.0f64).exp();
    let tol = 3.0 * (1.0 / (4.0 * 8000.0f64)).sqrt();
    assert!((got.mean_log_v_hat.exp() - exact).abs() < tol);
    assert!((got.y - (got.mean_log_p_s_given_p - got.mean_log_v_hat)).abs() < 1e-12);

    // A context-free model has log ratio 0 whatever the sampler draws.
    let flat = [Fixed::new("f", -2.0), Fixed::new("g", -0.5)];
    let y = measure_pa_log(&flat, &t, &sampler, 100, 1).unwrap();
    assert!(y.y.abs() < 1e-12, "{}", y.y);
    assert_eq!(y.n_models, 2);
}

#[test]
fn composition_counts_match_the_requested_pair() {
    let exp = ExperimentConfig::default().prepare(Path::new(".")).unwrap();
    let spec = exp.spec;
    assert_eq!(spec.pairs[1], (10, 150));
    let kept = spec.kept_tokens();
    let seq = spec.target_sequence();
    assert_eq!(kept, (0.2 * seq.len() as f64).round() as usize);
    let data = compose_dataset(&spec, 1, 4).unwrap();
    let t = audit_corpus(&data.target_corpus, &seq, kept);
    let b = audit_corpus(&data.baseline_corpus, &seq, kept);
    assert_eq!((t.size, t.exact, t.near_dups, t.distinct_near_dups), (1000, 10, 150, 150));
    assert_eq!((b.size, b.exact, b.near_dups, b.distinct_near_dups), (1000, 0, 150, 150));
}

#[test]
fn no_exact_copies_means_no_counterfactual_effect() {
    let exp = ExperimentConfig::smoke().prepare(Path::new(".")).unwrap();
    let mut spec = exp.spec.clone();
    spec.pairs = vec![(0, 20), (5, 0)];
    for seed in 0..3 {
        let data = compose_dataset(&spec, 0, seed).unwrap();
        let a = train_ngram(&data.target_corpus, exp.vocab.clone(), exp.order, exp.alpha).unwrap();
        let b = train_ngram(&data.baseline_corpus, exp.vocab.clone(), exp.order, exp.alpha).unwrap();
        assert_eq!(measure_counterfactual(&[&a], &[&b], &spec.target).unwrap(), 0.0);
    }
    let data = compose_dataset(&spec, 1, 0).unwrap();
    let a = train_ngram(&data.target_corpus, exp.vocab.clone(), exp.order, exp.alpha).unwrap();
    let b = train_ngram(&data.baseline_corpus, exp.vocab.clone(), exp.order, exp.alpha).unwrap();
    assert!(measure_counterfactual(&[&a], &[&b], &spec.target).unwrap() > 0.0);
}

#[test]
fn near_duplicates_keep_exactly_the_requested_positions() {
    let seq: Vec<TokenId> = (0..20).collect();
    for draw in 0..50 {
        let spec = NearDupSpec::new(0.2, 11).unwrap();
        let nd = make_near_duplicate(&seq, &spec, draw, 30).unwrap();
        assert_eq!(nd.len(), seq.len());
        assert_eq!(positional_overlap(&nd, &seq), 4);
    }
    assert!(NearDupSpec::new(0.0, 1).is_err());
    assert!(NearDupSpec::new(1.5, 1).is_err());
}

#[test]
fn compositions_exceeding_the_total_are_rejected() {
    let exp = ExperimentConfig::smoke().prepare(Path::new(".")).unwrap();
    let mut spec = exp.spec.clone();
    spec.pairs = vec![(60, 50)];
    spec.total_size = 100;
    assert!(matches!(compose_dataset(&spec, 0, 0), Err(Error::InvalidInput(_))));
}

#[test]
fn real_data_baseline_removes_only_exact_occurrences() {
    let docs: Vec<TokenSequence> =
        vec![vec![1, 2, 3, 4, 5, 6].into(), vec![9, 3, 4, 9].into(), vec![3, 4, 3, 4].into(), vec![7, 7, 7].into()];
    let t = Target::new("x", vec![3u32], vec![4u32], TargetSource::NamedEntity).unwrap();
    let comp = compose_real_data(Arc::new(docs), std::slice::from_ref(&t)).unwrap();
    assert_eq!(comp.removals.len(), 4);
    let expected: Vec<TokenSequence> =
        vec![vec![1, 2].into(), vec![5, 6].into(), vec![9].into(), vec![9].into(), vec![7, 7, 7].into()];
    assert_eq!(comp.baseline_corpus, expected);
    diff_audit(&comp, std::slice::from_ref(&t)).unwrap();

    // Tampering with the baseline is caught.
    let mut bad = comp.clone();
    bad.baseline_corpus[4] = vec![7, 3, 4].into();
    assert!(diff_audit(&bad, &[t]).is_err());
}
