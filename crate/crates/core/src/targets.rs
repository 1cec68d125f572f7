//! Building audit target sets.
//!
//! * Named-entity targets: count how often each entity surface occurs, bucket
//!   entities by frequency on a log scale, and draw the same number from
//!   every bucket, each paired with the tokens that precede one of its
//!   occurrences.
//! * Long-sequence targets: uniform corpus windows split into prefix and
//!   suffix.
//! * Fixed splits: precomputed targets read from token-id JSONL.
//! * Generic calibration targets: boilerplate sentences cut into halves.
//!
//! Entity matching works on whitespace tokens, so `"New York"` is found in
//! `"in New York today"` but not in `"New Yorker"`.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::likelihood::{Target, TargetSource, DEFAULT_MAX_PREFIX};
use crate::lm::{Corpus, TokenId, TokenSequence, Vocabulary};
use crate::prior::PrefixSampler;
use crate::seed::labeled_rng;

/// Default generic calibration sentences, one per line.
pub const GENERIC_SEQUENCES: &str = include_str!("../assets/generic_sequences.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityFrequency {
    pub surface: String,
    pub frequency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityInventory {
    pub entries: Vec<EntityFrequency>,
    /// Digest of the corpus the counts were taken from.
    pub corpus_id: String,
}

impl EntityInventory {
    pub fn frequency(&self, surface: &str) -> Option<u64> {
        self.entries.iter().find(|e| e.surface == surface).map(|e| e.frequency)
    }

    /// Frequency histogram: number of entities per bucket.
    pub fn histogram(&self, buckets: &FrequencyBuckets) -> Vec<usize> {
        let mut h = vec![0; buckets.len()];
        for e in &self.entries {
            if let Some(b) = buckets.bucket_of(e.frequency) {
                h[b] += 1;
            }
        }
        h
    }
}

fn corpus_digest<S: AsRef<str>>(docs: &[S]) -> String {
    let mut h = Sha256::new();
    for d in docs {
        h.update(d.as_ref().as_bytes());
        h.update(b"\n");
    }
    format!("corpus-{}", &hex::encode(h.finalize())[..12])
}

fn count_token_occurrences(haystack: &[&str], needle: &[&str]) -> u64 {
    if needle.is_empty() || needle.len() > haystack.len() {
        return 0;
    }
    haystack.windows(needle.len()).filter(|w| *w == needle).count() as u64
}

/// Count overlapping occurrences of every entity surface in `docs`.
///
/// Matches never span document boundaries. Duplicate surfaces are counted
/// once; the first occurrence in `entities` fixes the order.
pub fn count_entity_frequencies<S: AsRef<str>, E: AsRef<str>>(docs: &[S], entities: &[E]) -> Result<EntityInventory> {
    if entities.is_empty() {
        return Err(Error::invalid("entity list is empty"));
    }
    let tokenized: Vec<Vec<&str>> = docs.iter().map(|d| d.as_ref().split_whitespace().collect()).collect();
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for e in entities {
        let needle: Vec<&str> = e.as_ref().split_whitespace().collect();
        if needle.is_empty() {
            return Err(Error::invalid("entity surface is empty"));
        }
        let surface = needle.join(" ");
        if !seen.insert(surface.clone()) {
            continue;
        }
        let frequency = tokenized.iter().map(|doc| count_token_occurrences(doc, &needle)).sum();
        entries.push(EntityFrequency { surface, frequency });
    }
    Ok(EntityInventory { entries, corpus_id: corpus_digest(docs) })
}

/// Half-open frequency ranges `[b0, b1), [b1, b2), …, [b_last, ∞)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyBuckets {
    boundaries: Vec<u64>,
}

impl Default for FrequencyBuckets {
    /// Powers of two from 1 to 256.
    fn default() -> Self {
        FrequencyBuckets { boundaries: (0..=8).map(|k| 1u64 << k).collect() }
    }
}

impl FrequencyBuckets {
    pub fn new(boundaries: Vec<u64>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::invalid("bucket boundaries are empty"));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("bucket boundaries must be strictly ascending"));
        }
        Ok(FrequencyBuckets { boundaries })
    }

    pub fn boundaries(&self) -> &[u64] {
        &self.boundaries
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    /// Bucket index, or `None` below the first boundary.
    pub fn bucket_of(&self, frequency: u64) -> Option<usize> {
        self.boundaries.partition_point(|&b| b <= frequency).checked_sub(1)
    }

    pub fn label(&self, bucket: usize) -> String {
        match self.boundaries.get(bucket + 1) {
            Some(hi) => format!("[{},{})", self.boundaries[bucket], hi),
            None => format!("[{},inf)", self.boundaries[bucket]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedEntity {
    pub surface: String,
    pub bucket: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Shortfall {
    pub bucket: usize,
    pub label: String,
    pub requested: usize,
    pub produced: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BucketSample {
    pub targets: Vec<Target>,
    pub skipped: Vec<SkippedEntity>,
    pub shortfalls: Vec<Shortfall>,
}

fn find_occurrences(docs: &[TokenSequence], needle: &[TokenId]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (d, doc) in docs.iter().enumerate() {
        if doc.len() < needle.len() {
            continue;
        }
        for (pos, w) in doc.windows(needle.len()).enumerate() {
            if w == needle {
                out.push((d, pos));
            }
        }
    }
    out
}

/// Draw up to `per_bucket` entities from every bucket, without replacement,
/// and pair each with the `prefix_len` tokens before one of its occurrences.
///
/// Entities whose every occurrence lacks a full prefix, or whose surface is
/// not in the corpus vocabulary, are skipped with a reason. Buckets that
/// cannot supply `per_bucket` targets are listed as shortfalls.
pub fn sample_targets_by_bucket(
    inventory: &EntityInventory,
    buckets: &FrequencyBuckets,
    per_bucket: usize,
    corpus: &Corpus,
    prefix_len: usize,
    seed: u64,
) -> Result<BucketSample> {
    if prefix_len > DEFAULT_MAX_PREFIX {
        return Err(Error::invalid(format!("prefix length {prefix_len} exceeds the cap of {DEFAULT_MAX_PREFIX}")));
    }
    let mut members: Vec<Vec<&EntityFrequency>> = vec![Vec::new(); buckets.len()];
    for e in &inventory.entries {
        if let Some(b) = buckets.bucket_of(e.frequency) {
            members[b].push(e);
        }
    }
    let mut sample = BucketSample::default();
    for (b, entities) in members.iter_mut().enumerate() {
        let mut rng = labeled_rng(seed, &format!("bucket-{b}"));
        entities.shuffle(&mut rng);
        let mut produced = 0;
        for e in entities.iter() {
            if produced == per_bucket {
                break;
            }
            let skip = |reason: String| SkippedEntity { surface: e.surface.clone(), bucket: b, reason };
            let needle = match corpus.vocab.encode(&e.surface) {
                Ok(t) => t,
                Err(err) => {
                    sample.skipped.push(skip(err.to_string()));
                    continue;
                }
            };
            let eligible: Vec<_> =
                find_occurrences(&corpus.docs, &needle).into_iter().filter(|&(_, pos)| pos >= prefix_len).collect();
            if eligible.is_empty() {
                sample.skipped.push(skip(format!("no occurrence preceded by {prefix_len} tokens")));
                continue;
            }
            let (d, pos) = eligible[rng.random_range(0..eligible.len())];
            let doc = &corpus.docs[d];
            sample.targets.push(Target::new(
                format!("ne-{}", e.surface.replace(' ', "_")),
                &doc[pos - prefix_len..pos],
                needle,
                TargetSource::NamedEntity,
            )?);
            produced += 1;
        }
        if produced < per_bucket {
            sample.shortfalls.push(Shortfall { bucket: b, label: buckets.label(b), requested: per_bucket, produced });
        }
    }
    Ok(sample)
}

/// `k` distinct uniform windows of `prefix_len + suffix_len` tokens, split
/// into prefix and suffix. Windows never cross document boundaries.
pub fn sample_long_sequences(
    docs: &[TokenSequence],
    prefix_len: usize,
    suffix_len: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Target>> {
    if suffix_len == 0 {
        return Err(Error::invalid("suffix length must be positive"));
    }
    if prefix_len > DEFAULT_MAX_PREFIX {
        return Err(Error::invalid(format!("prefix length {prefix_len} exceeds the cap of {DEFAULT_MAX_PREFIX}")));
    }
    let windows = PrefixSampler::new(docs.to_vec().into(), prefix_len + suffix_len, seed)
        .map_err(|_| Error::invalid(format!("corpus has no window of {} tokens", prefix_len + suffix_len)))?;
    if windows.window_count() < k {
        return Err(Error::invalid(format!(
            "corpus has {} windows of {} tokens, {k} requested",
            windows.window_count(),
            prefix_len + suffix_len
        )));
    }
    let mut rng = labeled_rng(seed, "long-sequences");
    index::sample(&mut rng, windows.window_count(), k)
        .into_iter()
        .map(|i| {
            let w = windows.window(i);
            Target::new(format!("long-{i}"), &w[..prefix_len], &w[prefix_len..], TargetSource::LongSequence)
        })
        .collect()
}

/// One line of a target JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecord {
    pub id: String,
    pub prefix_tokens: Vec<TokenId>,
    pub suffix_tokens: Vec<TokenId>,
    /// Omitted for fixed-split records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<TargetSource>,
}

impl From<&Target> for TargetRecord {
    fn from(t: &Target) -> Self {
        TargetRecord {
            id: t.id.clone(),
            prefix_tokens: t.prefix.to_vec(),
            suffix_tokens: t.suffix.to_vec(),
            source: (t.source != TargetSource::Satml).then_some(t.source),
        }
    }
}

fn parse_targets(text: &str, path: &Path, force: Option<TargetSource>) -> Result<Vec<Target>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: i + 1, message };
        let rec: TargetRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let source = force.or(rec.source).unwrap_or(TargetSource::Satml);
        let t =
            Target::new(rec.id, rec.prefix_tokens, rec.suffix_tokens, source).map_err(|e| parse_err(e.to_string()))?;
        out.push(t);
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Read a fixed split of `{"id","prefix_tokens","suffix_tokens"}` records.
/// Every target gets source `satml`.
pub fn load_fixed_split(path: impl AsRef<Path>) -> Result<Vec<Target>> {
    let path = path.as_ref();
    parse_targets(&read_text(path)?, path, Some(TargetSource::Satml))
}

/// Read any target JSONL file, honoring an optional `source` field.
pub fn read_targets(path: impl AsRef<Path>) -> Result<Vec<Target>> {
    let path = path.as_ref();
    parse_targets(&read_text(path)?, path, None)
}

pub fn targets_to_jsonl(targets: &[Target]) -> String {
    let mut out = Vec::new();
    for t in targets {
        serde_json::to_writer(&mut out, &TargetRecord::from(t)).expect("record serializes");
        writeln!(out).expect("write to Vec");
    }
    String::from_utf8(out).expect("JSON is UTF-8")
}

pub fn write_targets(path: impl AsRef<Path>, targets: &[Target]) -> Result<()> {
    crate::report::write_atomic(path.as_ref(), targets_to_jsonl(targets).as_bytes())
}

/// Split each line into equal halves, prefix first. Lines with an odd
/// number of tokens are rejected so that prefix and suffix always match in
/// length.
pub fn generic_targets<S: AsRef<str>>(lines: &[S], vocab: &Vocabulary) -> Result<Vec<Target>> {
    lines
        .iter()
        .map(|l| l.as_ref().trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, line)| {
            let tokens = vocab.encode(line).map_err(|e| Error::invalid(format!("generic sequence {i}: {e}")))?;
            if tokens.len() < 2 || tokens.len() % 2 != 0 {
                return Err(Error::invalid(format!(
                    "generic sequence {i} has {} tokens; an even count of at least 2 is required",
                    tokens.len()
                )));
            }
            let half = tokens.len() / 2;
            Target::new(format!("generic-{i:03}"), &tokens[..half], &tokens[half..], TargetSource::Generic)
        })
        .collect()
}

/// The bundled generic calibration sentences.
pub fn default_generic_lines() -> Vec<&'static str> {
    GENERIC_SEQUENCES.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect()
}

/// Maximal runs of two or more capitalized tokens, in first-seen order.
///
/// A crude stand-in for a real entity recognizer, intended only for demo
/// corpora: it misses single-word names and picks up sentence-initial
/// phrases.
pub fn capitalized_spans<S: AsRef<str>>(docs: &[S]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let is_cap = |t: &str| t.chars().next().is_some_and(char::is_uppercase);
    for d in docs {
        let tokens: Vec<&str> = d.as_ref().split_whitespace().collect();
        let mut i = 0;
        while i < tokens.len() {
            if !is_cap(tokens[i]) {
                i += 1;
                continue;
            }
            let start = i;
            while i < tokens.len() && is_cap(tokens[i]) {
                i += 1;
            }
            if i - start >= 2 {
                let span = tokens[start..i].join(" ");
                if seen.insert(span.clone()) {
                    out.push(span);
                }
            }
        }
    }
    out
}
