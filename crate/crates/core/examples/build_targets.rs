//! Build the three target families from the bundled corpus: entity targets
//! sampled evenly across frequency buckets, long-sequence windows, and the
//! generic calibration set.
//!
//! ```text
//! cargo run --example build_targets
//! ```

use std::path::Path;

use pamem::lm::{read_documents, Corpus};
use pamem::targets::{
    count_entity_frequencies, generic_targets, sample_long_sequences, sample_targets_by_bucket, targets_to_jsonl,
    FrequencyBuckets,
};

fn main() -> pamem::Result<()> {
    let text = read_documents(Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/tiny_corpus.txt"))?;
    let corpus = Corpus::build(&text, &[])?;

    let entities = ["cat", "dog", "red rug", "park", "big dog", "small cat", "mat"];
    let inventory = count_entity_frequencies(&text, &entities)?;
    let buckets = FrequencyBuckets::new(vec![1, 4, 16])?;
    println!("entity frequencies ({}):", inventory.corpus_id);
    for e in &inventory.entries {
        let bucket = buckets.bucket_of(e.frequency).map_or("none".to_string(), |b| buckets.label(b));
        println!("  {:<10} {:>3}  bucket {bucket}", e.surface, e.frequency);
    }
    let sample = sample_targets_by_bucket(&inventory, &buckets, 1, &corpus, 2, 5)?;
    println!("one entity per bucket:");
    print!("{}", targets_to_jsonl(&sample.targets));
    for s in &sample.shortfalls {
        println!("  shortfall in bucket {}: {} of {}", s.label, s.produced, s.requested);
    }

    let long = sample_long_sequences(&corpus.docs, 3, 3, 3, 5)?;
    println!("long-sequence windows:");
    for t in &long {
        println!("  {:<8} {:?} -> {:?}", t.id, corpus.vocab.decode(&t.prefix), corpus.vocab.decode(&t.suffix));
    }

    let lines = pamem::targets::default_generic_lines();
    let generic_vocab = Corpus::build(&lines, &[])?.vocab;
    let generic = generic_targets(&lines, &generic_vocab)?;
    println!("generic calibration set: {} sequences", generic.len());
    Ok(())
}
