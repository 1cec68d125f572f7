//! Dataset construction for the counterfactual sweep: near-duplicates,
//! exact-copy/near-duplicate compositions, and the recount audits that check
//! them.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::Target;
use crate::lm::{TokenId, TokenSequence};
use crate::seed::{derive_seed, labeled_rng};

/// Default compositions as `(exact_copies, near_duplicates)`.
pub const DEFAULT_PAIRS: [(usize, usize); 7] = [(0, 180), (10, 150), (20, 120), (30, 90), (40, 60), (50, 30), (60, 0)];
pub const DEFAULT_TOTAL_SIZE: usize = 1000;
pub const DEFAULT_OVERLAP: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearDupSpec {
    pub overlap_fraction: f64,
    pub seed: u64,
}

impl NearDupSpec {
    pub fn new(overlap_fraction: f64, seed: u64) -> Result<Self> {
        if !(overlap_fraction > 0.0 && overlap_fraction <= 1.0) {
            return Err(Error::invalid(format!("overlap fraction must lie in (0, 1], got {overlap_fraction}")));
        }
        Ok(NearDupSpec { overlap_fraction, seed })
    }

    /// Number of positions kept for a sequence of `len` tokens (at least 1).
    pub fn kept(&self, len: usize) -> usize {
        ((self.overlap_fraction * len as f64).round() as usize).clamp(1, len)
    }
}

/// Keep `spec.kept(len)` uniformly chosen positions of `seq` and replace
/// every other token by a uniform draw from the vocabulary minus the token
/// it replaces, so the overlap is exact.
pub fn make_near_duplicate(seq: &[TokenId], spec: &NearDupSpec, draw: u64, vocab_size: usize) -> Result<TokenSequence> {
    if seq.len() < 2 {
        return Err(Error::invalid("near-duplicates need a sequence of at least 2 tokens"));
    }
    if vocab_size < 2 {
        return Err(Error::invalid("near-duplicates need a vocabulary of at least 2 tokens"));
    }
    if let Some(&t) = seq.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(Error::invalid(format!("token {t} is outside the vocabulary of {vocab_size}")));
    }
    let mut rng = labeled_rng(spec.seed, &format!("near-dup-{draw}"));
    let kept: HashSet<usize> = index::sample(&mut rng, seq.len(), spec.kept(seq.len())).into_iter().collect();
    let out = seq
        .iter()
        .enumerate()
        .map(|(i, &orig)| {
            if kept.contains(&i) {
                orig
            } else {
                let r = rng.random_range(0..vocab_size as TokenId - 1);
                if r >= orig {
                    r + 1
                } else {
                    r
                }
            }
        })
        .collect();
    Ok(out)
}

/// Number of positions where `a` and `b` hold the same token.
pub fn positional_overlap(a: &[TokenId], b: &[TokenId]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x == y).count()
}

#[derive(Debug, Clone)]
pub struct CompositionSpec {
    pub pairs: Vec<(usize, usize)>,
    pub total_size: usize,
    pub base_corpus: Arc<Vec<TokenSequence>>,
    pub target: Target,
    pub seeds: Vec<u64>,
    pub vocab_size: usize,
    pub overlap_fraction: f64,
    /// Seed of the one-time filler shuffle shared by every cell.
    pub filler_seed: u64,
}

impl CompositionSpec {
    /// Default pairs, total size and overlap; seeds `0..25`.
    pub fn new(base_corpus: Arc<Vec<TokenSequence>>, target: Target, vocab_size: usize) -> Self {
        CompositionSpec {
            pairs: DEFAULT_PAIRS.to_vec(),
            total_size: DEFAULT_TOTAL_SIZE,
            base_corpus,
            target,
            seeds: (0..25).collect(),
            vocab_size,
            overlap_fraction: DEFAULT_OVERLAP,
            filler_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_size == 0 {
            return Err(Error::invalid("total_size must be positive"));
        }
        for &(e, d) in &self.pairs {
            if e + d > self.total_size {
                return Err(Error::invalid(format!("composition ({e}, {d}) exceeds total size {}", self.total_size)));
            }
        }
        NearDupSpec::new(self.overlap_fraction, 0)?;
        if self.target.full_sequence().len() < 2 {
            return Err(Error::invalid("target sequence must have at least 2 tokens"));
        }
        Ok(())
    }

    pub fn target_sequence(&self) -> TokenSequence {
        self.target.full_sequence()
    }

    pub fn kept_tokens(&self) -> usize {
        NearDupSpec { overlap_fraction: self.overlap_fraction, seed: 0 }.kept(self.target_sequence().len())
    }

    /// Base documents usable as filler, in the fixed shuffled order. Documents
    /// that would be counted as an exact copy or a near-duplicate of the
    /// target are left out so that injected counts are the only ones.
    pub fn filler_pool(&self) -> Vec<usize> {
        let target = self.target_sequence();
        let kept = self.kept_tokens();
        let mut pool: Vec<usize> = self
            .base_corpus
            .iter()
            .enumerate()
            .filter(|(_, d)| {
                !(d.len() == target.len() && (d[..] == target[..] || positional_overlap(d, &target) == kept))
            })
            .map(|(i, _)| i)
            .collect();
        pool.shuffle(&mut labeled_rng(self.filler_seed, "filler"));
        pool
    }
}

/// Distinct near-duplicates of `seq`: draws `0, 1, 2, …` with collisions
/// skipped.
pub fn distinct_near_duplicates(
    seq: &[TokenId],
    spec: &NearDupSpec,
    count: usize,
    vocab_size: usize,
) -> Result<Vec<TokenSequence>> {
    let mut seen: HashSet<TokenSequence> = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let max_draws = 100 * count as u64 + 100;
    let mut draw = 0;
    while out.len() < count {
        if draw >= max_draws {
            return Err(Error::invalid(format!(
                "could not generate {count} distinct near-duplicates in {max_draws} draws"
            )));
        }
        let nd = make_near_duplicate(seq, spec, draw, vocab_size)?;
        draw += 1;
        if nd[..] != seq[..] && seen.insert(nd.clone()) {
            out.push(nd);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ComposedDatasets {
    pub target_corpus: Vec<TokenSequence>,
    pub baseline_corpus: Vec<TokenSequence>,
}

/// Build the target and baseline corpora for one composition and seed.
///
/// Both contain the same filler prefix of the shuffled pool and the same
/// near-duplicates; the target corpus adds the exact copies, the baseline
/// fills their slots with the next filler documents instead.
pub fn compose_dataset(spec: &CompositionSpec, pair_index: usize, seed: u64) -> Result<ComposedDatasets> {
    compose_with_pool(spec, &spec.filler_pool(), pair_index, seed)
}

pub(crate) fn compose_with_pool(
    spec: &CompositionSpec,
    pool: &[usize],
    pair_index: usize,
    seed: u64,
) -> Result<ComposedDatasets> {
    spec.validate()?;
    let &(exact, near) =
        spec.pairs.get(pair_index).ok_or_else(|| Error::invalid(format!("no composition at index {pair_index}")))?;
    let filler = spec.total_size - exact - near;
    if pool.len() < filler + exact {
        return Err(Error::invalid(format!(
            "base corpus supplies {} filler documents, composition ({exact}, {near}) needs {}",
            pool.len(),
            filler + exact
        )));
    }
    let target = spec.target_sequence();
    let nd_spec = NearDupSpec::new(spec.overlap_fraction, derive_seed(seed, "near-dups"))?;
    let near_dups = distinct_near_duplicates(&target, &nd_spec, near, spec.vocab_size)?;

    let docs = |ids: &[usize]| ids.iter().map(|&i| spec.base_corpus[i].clone()).collect::<Vec<_>>();
    let mut target_corpus = docs(&pool[..filler]);
    target_corpus.extend(std::iter::repeat_n(target.clone(), exact));
    target_corpus.extend(near_dups.iter().cloned());
    let mut baseline_corpus = docs(&pool[..filler + exact]);
    baseline_corpus.extend(near_dups);

    target_corpus.shuffle(&mut labeled_rng(seed, &format!("shuffle-target-{pair_index}")));
    baseline_corpus.shuffle(&mut labeled_rng(seed, &format!("shuffle-baseline-{pair_index}")));
    Ok(ComposedDatasets { target_corpus, baseline_corpus })
}

/// Recounted composition of a corpus relative to a target sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionCounts {
    pub size: usize,
    pub exact: usize,
    pub near_dups: usize,
    pub distinct_near_dups: usize,
}

/// Count exact copies of `target` and documents of the same length sharing
/// exactly `kept` position-matched tokens with it.
pub fn audit_corpus(corpus: &[TokenSequence], target: &[TokenId], kept: usize) -> CompositionCounts {
    let mut exact = 0;
    let mut near = Vec::new();
    for d in corpus {
        if d.len() != target.len() {
            continue;
        }
        let matches = d.iter().zip(target).filter(|(a, b)| a == b).count();
        if matches == target.len() {
            exact += 1;
        } else if matches == kept {
            near.push(d.as_slice());
        }
    }
    let distinct = near.iter().collect::<HashSet<_>>().len();
    CompositionCounts { size: corpus.len(), exact, near_dups: near.len(), distinct_near_dups: distinct }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionAudit {
    pub composition: (usize, usize),
    pub seed: u64,
    pub target: CompositionCounts,
    pub baseline: CompositionCounts,
    pub deviations: Vec<String>,
}

impl CompositionAudit {
    pub fn check(spec: &CompositionSpec, pair_index: usize, seed: u64, data: &ComposedDatasets) -> Self {
        let (exact, near) = spec.pairs[pair_index];
        let target_seq = spec.target_sequence();
        let kept = spec.kept_tokens();
        let t = audit_corpus(&data.target_corpus, &target_seq, kept);
        let b = audit_corpus(&data.baseline_corpus, &target_seq, kept);
        let mut deviations = Vec::new();
        let mut expect = |what: &str, got: usize, want: usize| {
            if got != want {
                deviations.push(format!("{what}: expected {want}, found {got}"));
            }
        };
        expect("target size", t.size, spec.total_size);
        expect("target exact copies", t.exact, exact);
        expect("target near-duplicates", t.near_dups, near);
        expect("target distinct near-duplicates", t.distinct_near_dups, near);
        expect("baseline size", b.size, spec.total_size);
        expect("baseline exact copies", b.exact, 0);
        expect("baseline near-duplicates", b.near_dups, near);
        expect("baseline distinct near-duplicates", b.distinct_near_dups, near);
        CompositionAudit { composition: (exact, near), seed, target: t, baseline: b, deviations }
    }

    pub fn is_clean(&self) -> bool {
        self.deviations.is_empty()
    }
}

/// A span cut out of a document when building a real-data baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub target_id: String,
    pub doc: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct RealDataComposition {
    /// The corpus as given.
    pub target_corpus: Arc<Vec<TokenSequence>>,
    /// The corpus with every exact `p ‖ s` occurrence cut out. A document
    /// containing an occurrence is split into the pieces around it so that
    /// no n-gram spans the cut.
    pub baseline_corpus: Vec<TokenSequence>,
    pub removals: Vec<Removal>,
}

fn find_all(doc: &[TokenId], needle: &[TokenId]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + needle.len() <= doc.len() {
        if doc[i..i + needle.len()] == *needle {
            out.push(i);
            i += needle.len();
        } else {
            i += 1;
        }
    }
    out
}

/// Real-data variant: remove each target's exact `p ‖ s` occurrences and
/// nothing else. Other occurrences of the suffix stay in place.
pub fn compose_real_data(corpus: Arc<Vec<TokenSequence>>, targets: &[Target]) -> Result<RealDataComposition> {
    let seqs: Vec<(String, TokenSequence)> = targets.iter().map(|t| (t.id.clone(), t.full_sequence())).collect();
    let mut removals = Vec::new();
    let mut baseline = Vec::new();
    for (d, doc) in corpus.iter().enumerate() {
        let mut spans: Vec<(usize, usize, &str)> = Vec::new();
        for (id, seq) in &seqs {
            for start in find_all(doc, seq) {
                spans.push((start, seq.len(), id));
            }
        }
        spans.sort();
        let mut cursor = 0;
        for (start, len, id) in spans {
            if start < cursor {
                continue;
            }
            if start > cursor {
                baseline.push(TokenSequence::from(&doc[cursor..start]));
            }
            removals.push(Removal { target_id: id.to_string(), doc: d, start, len });
            cursor = start + len;
        }
        if cursor == 0 {
            baseline.push(doc.clone());
        } else if cursor < doc.len() {
            baseline.push(TokenSequence::from(&doc[cursor..]));
        }
    }
    Ok(RealDataComposition { target_corpus: corpus, baseline_corpus: baseline, removals })
}

/// Check that the baseline is exactly the target corpus minus the recorded
/// removals: re-splitting every target document at its removals must yield
/// the baseline documents in order, each removed span must equal its
/// target sequence, and no target sequence may remain in the baseline.
pub fn diff_audit(composition: &RealDataComposition, targets: &[Target]) -> Result<()> {
    let full: std::collections::HashMap<&str, TokenSequence> =
        targets.iter().map(|t| (t.id.as_str(), t.full_sequence())).collect();
    let mut expected = Vec::new();
    for (d, doc) in composition.target_corpus.iter().enumerate() {
        let mut cursor = 0;
        for r in composition.removals.iter().filter(|r| r.doc == d) {
            let seq = full
                .get(r.target_id.as_str())
                .ok_or_else(|| Error::invalid(format!("removal refers to unknown target {}", r.target_id)))?;
            if doc.get(r.start..r.start + r.len) != Some(&seq[..]) {
                return Err(Error::invalid(format!(
                    "document {d}: removed span at {} is not target {}",
                    r.start, r.target_id
                )));
            }
            if r.start > cursor {
                expected.push(&doc[cursor..r.start]);
            }
            cursor = r.start + r.len;
        }
        if cursor < doc.len() {
            expected.push(&doc[cursor..]);
        }
    }
    if expected.len() != composition.baseline_corpus.len()
        || expected.iter().zip(&composition.baseline_corpus).any(|(a, b)| *a != &b[..])
    {
        return Err(Error::invalid("baseline corpus differs from the target corpus beyond the removals"));
    }
    for (id, seq) in &full {
        if composition.baseline_corpus.iter().any(|d| d.windows(seq.len()).any(|w| w == &seq[..])) {
            return Err(Error::invalid(format!("target {id} still occurs in the baseline corpus")));
        }
    }
    Ok(())
}
