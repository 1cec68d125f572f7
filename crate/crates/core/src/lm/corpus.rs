use std::fs;
use std::path::Path;
use std::sync::Arc;

use super::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};

/// Read a UTF-8 corpus file with one document per line. Blank lines are skipped.
pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading corpus {}", path.display()), e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

/// Tokenized documents together with the vocabulary that produced them.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub docs: Arc<Vec<TokenSequence>>,
}

impl Corpus {
    /// Tokenize `docs` with a vocabulary built from the documents themselves
    /// plus any `extra` texts.
    pub fn build<S: AsRef<str>>(docs: &[S], extra: &[S]) -> Result<Self> {
        let mut builder = super::vocab::VocabularyBuilder::default();
        for d in docs.iter().chain(extra) {
            builder.add_text(d.as_ref());
        }
        let vocab = builder.build()?;
        Self::with_vocab(docs, vocab)
    }

    /// Tokenize `docs` against an existing vocabulary.
    pub fn with_vocab<S: AsRef<str>>(docs: &[S], vocab: Vocabulary) -> Result<Self> {
        let docs = docs
            .iter()
            .enumerate()
            .map(|(i, d)| vocab.encode(d.as_ref()).map_err(|e| Error::invalid(format!("document {i}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus { vocab, docs: Arc::new(docs) })
    }

    pub fn from_path(path: impl AsRef<Path>, vocab: Vocabulary) -> Result<Self> {
        Self::with_vocab(&read_documents(path)?, vocab)
    }

    pub fn token_count(&self) -> usize {
        self.docs.iter().map(|d| d.len()).sum()
    }
}
