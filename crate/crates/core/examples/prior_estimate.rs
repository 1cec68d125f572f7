//! Estimate a suffix prior by Monte Carlo and compare it with the exact
//! value over every corpus window.
//!
//! ```text
//! cargo run --release --example prior_estimate -- "the dog" 2000 5
//! ```

use std::path::Path;

use pamem::lm::{Corpus, NGramModel};
use pamem::prior::{estimate_prior, prior_oracle, variance_bound, PrefixSampler, DEFAULT_ORACLE_BUDGET};

fn main() -> pamem::Result<()> {
    let mut args = std::env::args().skip(1);
    let suffix = args.next().unwrap_or_else(|| "the dog".into());
    let c: usize = args.next().map_or(Ok(2000), |s| s.parse()).map_err(|e| pamem::Error::invalid(format!("c: {e}")))?;
    let trials: usize =
        args.next().map_or(Ok(5), |s| s.parse()).map_err(|e| pamem::Error::invalid(format!("trials: {e}")))?;

    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    let model = NGramModel::load(root.join("tiny_bigram.json"))?;
    let corpus = Corpus::from_path(root.join("tiny_corpus.txt"), model.vocab().clone())?;
    let sampler = PrefixSampler::new(corpus.docs, 3, 42)?;
    let s = model.vocab().encode(&suffix)?;

    let est = estimate_prior(&model, &s, &sampler, c, trials)?;
    let oracle = prior_oracle(&model, &s, &sampler, DEFAULT_ORACLE_BUDGET)?;
    println!("suffix {suffix:?}, {} windows of 3 tokens", sampler.window_count());
    println!("per-trial means: {:?}", est.trials);
    println!("v_hat            {:.6}", est.v_hat);
    println!("exact v          {:.6}", oracle.v_s);
    println!(
        "std error        {:.2e} exact, {:.2e} worst case over [0, 1]",
        (oracle.per_prefix_variance / (c * trials) as f64).sqrt(),
        variance_bound(c * trials).sqrt()
    );
    Ok(())
}
