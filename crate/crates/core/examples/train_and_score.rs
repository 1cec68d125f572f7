//! Train a bigram model on the bundled corpus and score continuations.
//!
//! ```text
//! cargo run --example train_and_score
//! ```

use std::path::Path;

use pamem::likelihood::seq_logprob;
use pamem::lm::{read_documents, train_ngram, Corpus, ScoringBackend};

fn main() -> pamem::Result<()> {
    let docs = read_documents(Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/tiny_corpus.txt"))?;
    let corpus = Corpus::build(&docs, &[])?;
    let model = train_ngram(&corpus.docs, corpus.vocab.clone(), 2, 0.5)?;
    println!(
        "model {}: {} documents, {} tokens, vocabulary {}",
        model.model_id(),
        corpus.docs.len(),
        corpus.token_count(),
        corpus.vocab.len()
    );
    for (prefix, suffix) in [("the cat", "sat on the mat"), ("the cat", "mat the on sat"), ("", "a big dog ran")] {
        let p = corpus.vocab.encode(prefix)?;
        let s = corpus.vocab.encode(suffix)?;
        let score = seq_logprob(&model, &p, &s)?;
        let per_token: Vec<String> = score.per_token.iter().map(|x| format!("{x:.3}")).collect();
        println!("log P({suffix:?} | {prefix:?}) = {:.4}  [{}]", score.log_p_s_given_p, per_token.join(", "));
    }
    Ok(())
}
