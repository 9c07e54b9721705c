use std::collections::HashMap;

use crate::caption::{normalize_word, vocabulary};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedCaption {
    /// `bos, words.., eos`, then `pad` up to the requested length.
    pub ids: Vec<u32>,
}

impl TokenizedCaption {
    pub fn valid_mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&t| t != PAD).collect()
    }
}

/// Word-level tokenizer over the closed caption vocabulary.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Tokenizer {
    pub fn new() -> Self {
        let words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(vocabulary()).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Self { words, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Tokenizes and pads to `max_len`. Long captions keep their first
    /// `max_len - 2` words.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenizedCaption {
        let body: Vec<u32> = text
            .split_whitespace()
            .map(normalize_word)
            .filter(|w| !w.is_empty())
            .map(|w| self.index.get(&w).copied().unwrap_or(UNK))
            .take(max_len.saturating_sub(2))
            .collect();
        let mut ids = Vec::with_capacity(max_len);
        ids.push(BOS);
        ids.extend(body);
        ids.push(EOS);
        ids.resize(max_len.max(ids.len()), PAD);
        TokenizedCaption { ids }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_with_specials_and_padding() {
        let t = Tokenizer::new();
        let c = t.encode("Forest, with zebras", 8);
        assert_eq!(c.ids.len(), 8);
        assert_eq!(c.ids[0], BOS);
        assert_eq!(t.word(c.ids[1]), Some("forest"));
        assert_eq!(c.ids[3], UNK);
        assert_eq!(c.ids[4], EOS);
        assert!(c.ids[5..].iter().all(|&i| i == PAD));
        assert!(c.ids.iter().all(|&i| (i as usize) < t.vocab_size()));
    }

    #[test]
    fn truncates_long_captions() {
        let t = Tokenizer::new();
        let c = t.encode(&"forest ".repeat(50), 6);
        assert_eq!(c.ids.len(), 6);
        assert_eq!(c.ids[5], EOS);
    }
}
