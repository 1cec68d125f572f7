use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{TokenId, TokenSequence};
use crate::error::{Error, Result};

/// Token surfaces indexed by id. Tokenization is whitespace splitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(surfaces: Vec<String>) -> Result<Self> {
        if surfaces.len() < 2 {
            return Err(Error::invalid(format!("vocabulary needs at least 2 tokens, got {}", surfaces.len())));
        }
        if surfaces.len() > TokenId::MAX as usize {
            return Err(Error::invalid("vocabulary too large for 32-bit token ids"));
        }
        let mut index = HashMap::with_capacity(surfaces.len());
        for (i, s) in surfaces.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("token surface {s:?} is empty or contains whitespace")));
            }
            if index.insert(s.clone(), i as TokenId).is_some() {
                return Err(Error::invalid(format!("duplicate token surface {s:?}")));
            }
        }
        Ok(Vocabulary { surfaces, index })
    }

    /// `w0 .. w{size-1}`, for synthetic corpora.
    pub fn synthetic(size: usize) -> Result<Self> {
        Self::new((0..size).map(|i| format!("w{i}")).collect())
    }

    /// Every distinct whitespace token, in first-occurrence order.
    pub fn from_documents<'a, I>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut builder = VocabularyBuilder::default();
        for doc in docs {
            builder.add_text(doc);
        }
        builder.build()
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.surfaces.len()
    }

    /// Reject the first id that falls outside the vocabulary.
    pub fn check(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().position(|&t| !self.contains(t)) {
            Some(position) => {
                Err(Error::TokenOutOfVocabulary { token: tokens[position], position, vocab_size: self.len() })
            }
            None => Ok(()),
        }
    }

    pub fn encode(&self, text: &str) -> Result<TokenSequence> {
        text.split_whitespace()
            .enumerate()
            .map(|(position, w)| self.id(w).ok_or_else(|| Error::UnknownSurface { surface: w.to_string(), position }))
            .collect::<Result<Vec<_>>>()
            .map(TokenSequence::new)
    }

    /// Space-joined surfaces. Out-of-range ids render as `<id>`.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        let words: Vec<String> = tokens
            .iter()
            .map(|&t| match self.surface(t) {
                Some(s) => s.to_string(),
                None => format!("<{t}>"),
            })
            .collect();
        words.join(" ")
    }
}

#[derive(Debug, Default)]
pub struct VocabularyBuilder {
    surfaces: Vec<String>,
    seen: HashMap<String, TokenId>,
}

impl VocabularyBuilder {
    pub fn add_text(&mut self, text: &str) {
        for w in text.split_whitespace() {
            if !self.seen.contains_key(w) {
                self.seen.insert(w.to_string(), self.surfaces.len() as TokenId);
                self.surfaces.push(w.to_string());
            }
        }
    }

    pub fn build(self) -> Result<Vocabulary> {
        Vocabulary::new(self.surfaces)
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.surfaces.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let surfaces = Vec::<String>::deserialize(d)?;
        Vocabulary::new(surfaces).map_err(serde::de::Error::custom)
    }
}
