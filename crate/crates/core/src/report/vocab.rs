use std::collections::{BTreeSet, HashMap};

use super::{Domains, Template};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Lowercases and splits on whitespace; punctuation marks and single digits
/// become tokens of their own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphabetic() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Builds the closed vocabulary: reserved ids, then every template token and
/// categorical value token in sorted order.
pub fn build_vocab(template: &Template, domains: &Domains) -> Vocabulary {
    let mut words: BTreeSet<String> = template.lexicon().into_iter().collect();
    for value in domains.values() {
        words.extend(tokenize(value));
    }
    let mut tokens = vec![PAD.to_string(), UNK.to_string()];
    tokens.extend(words);
    let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    Vocabulary { ids, tokens }
}

/// Token ids padded or truncated to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<u32>,
    /// Number of non-padding positions.
    pub len: usize,
}

impl Encoded {
    pub fn mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i < self.len).collect()
    }
}

pub fn encode_text(text: &str, vocab: &Vocabulary, max_len: usize) -> Encoded {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut ids: Vec<u32> = tokenize(text).iter().take(max_len).map(|t| vocab.id(t)).collect();
    let len = ids.len();
    ids.resize(max_len, PAD_ID);
    Encoded { ids, len }
}
