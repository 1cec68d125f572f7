//! Calibrate the ratio threshold `n` on the bundled generic sentences for
//! models of increasing order trained on those same sentences. Order 1
//! ignores context, so its ratios are exactly 1; higher orders memorize the
//! sentences and `n` rises accordingly.
//!
//! ```text
//! cargo run --release --example calibrate
//! ```

use std::sync::Arc;

use pamem::classify::{calibrate_n, Thresholds};
use pamem::lm::{train_ngram, Corpus, ScoringBackend};
use pamem::prior::{PrefixSampler, PriorConfig};
use pamem::targets::{default_generic_lines, generic_targets};

fn main() -> pamem::Result<()> {
    let lines = default_generic_lines();
    let corpus = Corpus::build(&lines, &[])?;
    let sampler = PrefixSampler::new(Arc::clone(&corpus.docs), 4, 1)?;
    let generic = generic_targets(&lines, &corpus.vocab)?;
    let prior = PriorConfig { c: 1000, trials: 3, prefix_length: None };

    for order in [1, 2, 3] {
        let model = train_ngram(&corpus.docs, corpus.vocab.clone(), order, 0.1)?;
        let report = calibrate_n(&model, &generic, &sampler, &prior)?;
        let thresholds = Thresholds::with_default_m(report.n, model.model_id())?;
        let (lo, hi) =
            report.entries.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), e| (lo.min(e.ratio), hi.max(e.ratio)));
        println!(
            "order {order}: n = {:.4} over {} sequences (ratios {lo:.3} .. {hi:.3}); m = {:?}",
            thresholds.n,
            report.entries.len(),
            thresholds.m_by_suffix_class
        );
    }
    Ok(())
}
