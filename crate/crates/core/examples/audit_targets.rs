//! Audit long-sequence targets drawn from a corpus that contains a planted
//! memorized run, and print the classification table.
//!
//! ```text
//! cargo run --release --example audit_targets
//! ```

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use pamem::classify::{audit_target, Thresholds};
use pamem::likelihood::{Target, TargetSource};
use pamem::lm::{train_ngram, ScoringBackend, TokenSequence, Vocabulary};
use pamem::prior::{PrefixSampler, PriorConfig};
use pamem::seed::labeled_rng;
use pamem::targets::sample_long_sequences;

fn main() -> pamem::Result<()> {
    // Random text over tokens 0..20; tokens 20..28 occur only in one run,
    // copied into the corpus four times.
    let mut rng = labeled_rng(7, "corpus");
    let mut docs: Vec<TokenSequence> =
        (0..400).map(|_| TokenSequence::new((0..40).map(|_| rng.random_range(0..20)).collect())).collect();
    let planted: Vec<u32> = (20..28).collect();
    docs.extend((0..4).map(|_| TokenSequence::new(planted.clone())));
    let docs = Arc::new(docs);

    let model = train_ngram(&docs, Vocabulary::synthetic(28)?, 2, 0.05)?;
    let sampler = PrefixSampler::new(Arc::clone(&docs), 4, 11)?;
    let thresholds = Thresholds::new(BTreeMap::from([(4, 0.01)]), 1.5, model.model_id())?;
    let prior = PriorConfig { c: 2000, trials: 3, prefix_length: None };

    let mut targets = sample_long_sequences(&docs[..400], 4, 4, 8, 3)?;
    targets.push(Target::new("planted", &planted[..4], &planted[4..], TargetSource::Synthetic)?);

    println!(
        "{:<12} {:>12} {:>12} {:>10} {:>12} {:>6}",
        "target", "log P(s|p)", "v_hat", "log ratio", "extractable", "PA"
    );
    for t in &targets {
        let (_, _, r) = audit_target(&model, t, &sampler, &prior, &thresholds)?;
        println!(
            "{:<12} {:>12.4} {:>12.3e} {:>10.3} {:>12} {:>6}",
            r.target_id, r.log_p_s_given_p, r.v_hat, r.log_ratio, r.extractable, r.pa_memorized
        );
    }
    Ok(())
}
