//! Experiment configuration and the synthetic base-corpus generator.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::compose::{CompositionSpec, DEFAULT_OVERLAP, DEFAULT_PAIRS, DEFAULT_TOTAL_SIZE};
use crate::error::{Error, Result};
use crate::likelihood::{Target, TargetSource};
use crate::lm::{read_documents, Corpus, TokenId, TokenSequence, Vocabulary};
use crate::prior::PrefixSampler;
use crate::seed::{derive_seed, labeled_rng};

/// A random first-order chain whose transitions are Zipf-distributed over a
/// per-token random ranking of the vocabulary. Gives text-like skewed
/// statistics with a small, controllable vocabulary.
#[derive(Debug, Clone)]
pub struct ZipfChain {
    start: Vec<TokenId>,
    rows: Vec<Vec<TokenId>>,
    zipf: Zipf<f64>,
}

impl ZipfChain {
    pub fn new(vocab_size: usize, exponent: f64, seed: u64) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::invalid("generator vocabulary needs at least 2 tokens"));
        }
        let zipf = Zipf::new(vocab_size as f64, exponent)
            .map_err(|e| Error::invalid(format!("zipf exponent {exponent}: {e}")))?;
        let ranking = |label: &str| {
            let mut r: Vec<TokenId> = (0..vocab_size as TokenId).collect();
            r.shuffle(&mut labeled_rng(seed, label));
            r
        };
        Ok(ZipfChain {
            start: ranking("start"),
            rows: (0..vocab_size).map(|w| ranking(&format!("row-{w}"))).collect(),
            zipf,
        })
    }

    fn pick<R: Rng>(&self, ranking: &[TokenId], rng: &mut R) -> TokenId {
        let rank = self.zipf.sample(rng) as usize;
        ranking[rank.clamp(1, ranking.len()) - 1]
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, len: usize) -> TokenSequence {
        let mut out = Vec::with_capacity(len);
        for i in 0..len {
            let row = if i == 0 { &self.start } else { &self.rows[out[i - 1] as usize] };
            out.push(self.pick(row, rng));
        }
        out.into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusConfig {
    pub vocab_size: usize,
    pub num_docs: usize,
    pub doc_len: usize,
    pub zipf_exponent: f64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        SyntheticCorpusConfig { vocab_size: 500, num_docs: 1200, doc_len: 24, zipf_exponent: 1.1 }
    }
}

/// Generate `num_docs` documents from a [`ZipfChain`], together with the
/// chain so that targets can be drawn from the same process.
pub fn synthetic_corpus(cfg: &SyntheticCorpusConfig, seed: u64) -> Result<(Vocabulary, Vec<TokenSequence>, ZipfChain)> {
    let chain = ZipfChain::new(cfg.vocab_size, cfg.zipf_exponent, derive_seed(seed, "chain"))?;
    let mut rng = labeled_rng(seed, "documents");
    let docs = (0..cfg.num_docs).map(|_| chain.sample(&mut rng, cfg.doc_len)).collect();
    Ok((Vocabulary::synthetic(cfg.vocab_size)?, docs, chain))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetConfig {
    Tokens { prefix_tokens: Vec<TokenId>, suffix_tokens: Vec<TokenId> },
    Text { prefix: String, suffix: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub order: usize,
    pub alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { order: 2, alpha: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Prefix length of sampled windows; defaults to the target prefix length.
    pub prefix_length: Option<usize>,
    /// Sampler seed; defaults to one derived from the experiment seed.
    pub seed: Option<u64>,
}

/// The single JSON document describing a counterfactual sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub compositions: Vec<(usize, usize)>,
    pub seeds: Vec<u64>,
    pub total_size: usize,
    pub overlap_fraction: f64,
    /// Text corpus, one document per line. A synthetic corpus is generated
    /// when absent.
    pub base_corpus: Option<PathBuf>,
    pub synthetic: SyntheticCorpusConfig,
    /// Sampled from the generator when absent (synthetic corpora only).
    pub target: Option<TargetConfig>,
    pub target_prefix_len: usize,
    pub target_suffix_len: usize,
    pub model: ModelConfig,
    pub c: usize,
    pub trials: usize,
    pub sampler: SamplerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            compositions: DEFAULT_PAIRS.to_vec(),
            seeds: (0..25).collect(),
            total_size: DEFAULT_TOTAL_SIZE,
            overlap_fraction: DEFAULT_OVERLAP,
            base_corpus: None,
            synthetic: SyntheticCorpusConfig::default(),
            target: None,
            target_prefix_len: 10,
            target_suffix_len: 10,
            model: ModelConfig::default(),
            c: 1000,
            trials: 1,
            sampler: SamplerConfig::default(),
        }
    }
}

/// Everything a sweep needs, resolved from an [`ExperimentConfig`].
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub spec: CompositionSpec,
    pub vocab: Vocabulary,
    pub sampler: PrefixSampler,
    pub order: usize,
    pub alpha: f64,
    pub c: usize,
    pub trials: usize,
}

impl ExperimentConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading experiment config {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("experiment config {}: {e}", path.display())))
    }

    /// A small configuration that finishes in well under a second.
    pub fn smoke() -> Self {
        ExperimentConfig {
            compositions: vec![(0, 20), (10, 0)],
            seeds: vec![0, 1],
            total_size: 100,
            synthetic: SyntheticCorpusConfig { vocab_size: 50, num_docs: 150, doc_len: 12, zipf_exponent: 1.1 },
            target_prefix_len: 4,
            target_suffix_len: 4,
            c: 100,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.compositions.len() < 2 {
            return Err(Error::Config("a sweep needs at least 2 compositions".into()));
        }
        if self.seeds.len() < 2 {
            return Err(Error::Config("a sweep needs at least 2 seeds per composition".into()));
        }
        if self.c == 0 || self.trials == 0 {
            return Err(Error::Config("c and trials must be positive".into()));
        }
        Ok(())
    }

    /// Load or generate the base corpus, fix the target, and build the
    /// composition spec and prefix sampler. Relative corpus paths resolve
    /// against `base_dir`.
    pub fn prepare(&self, base_dir: &Path) -> Result<PreparedExperiment> {
        self.validate()?;
        let (vocab, docs, target) = match &self.base_corpus {
            Some(path) => {
                let path = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let texts = read_documents(&path)?;
                let extra: Vec<String> = match &self.target {
                    Some(TargetConfig::Text { prefix, suffix }) => vec![prefix.clone(), suffix.clone()],
                    _ => Vec::new(),
                };
                let corpus = Corpus::build(&texts, &extra)?;
                let target = match &self.target {
                    Some(t) => self.resolve_target(t, &corpus.vocab)?,
                    None => return Err(Error::Config("a target is required when base_corpus is a file".into())),
                };
                let docs = Arc::try_unwrap(corpus.docs).unwrap_or_else(|a| (*a).clone());
                (corpus.vocab, docs, target)
            }
            None => {
                let (vocab, docs, chain) = synthetic_corpus(&self.synthetic, derive_seed(self.seed, "base-corpus"))?;
                let target = match &self.target {
                    Some(t) => self.resolve_target(t, &vocab)?,
                    None => {
                        let mut rng = labeled_rng(self.seed, "target");
                        let seq = chain.sample(&mut rng, self.target_prefix_len + self.target_suffix_len);
                        Target::new(
                            "cf-target",
                            &seq[..self.target_prefix_len],
                            &seq[self.target_prefix_len..],
                            TargetSource::Synthetic,
                        )?
                    }
                };
                (vocab, docs, target)
            }
        };
        let docs = Arc::new(docs);
        let prefix_length = self.sampler.prefix_length.unwrap_or(target.prefix.len()).max(1);
        let sampler = PrefixSampler::new(
            Arc::clone(&docs),
            prefix_length,
            self.sampler.seed.unwrap_or_else(|| derive_seed(self.seed, "prior")),
        )?;
        let spec = CompositionSpec {
            pairs: self.compositions.clone(),
            total_size: self.total_size,
            base_corpus: docs,
            target,
            seeds: self.seeds.clone(),
            vocab_size: vocab.len(),
            overlap_fraction: self.overlap_fraction,
            filler_seed: derive_seed(self.seed, "filler"),
        };
        spec.validate()?;
        Ok(PreparedExperiment {
            spec,
            vocab,
            sampler,
            order: self.model.order,
            alpha: self.model.alpha,
            c: self.c,
            trials: self.trials,
        })
    }

    fn resolve_target(&self, t: &TargetConfig, vocab: &Vocabulary) -> Result<Target> {
        let (p, s) = match t {
            TargetConfig::Tokens { prefix_tokens, suffix_tokens } => {
                vocab.check(prefix_tokens)?;
                vocab.check(suffix_tokens)?;
                (prefix_tokens.clone().into(), suffix_tokens.clone().into())
            }
            TargetConfig::Text { prefix, suffix } => (vocab.encode(prefix)?, vocab.encode(suffix)?),
        };
        Target::new("cf-target", p, s, TargetSource::Synthetic)
    }
}
