use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const BOS_TOKEN: &str = "<s>";
pub const UNK_TOKEN: &str = "<unk>";
pub const UNK: u32 = 1;

const PUNCT: &[char] = &['.', ',', '?', '!', ';', ':'];

/// Closed word-level vocabulary. Id 0 is the sentence-start token and id 1
/// the unknown-word token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.words.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let words = Vec::<String>::deserialize(d)?;
        if words.len() < 2 || words[0] != BOS_TOKEN || words[1] != UNK_TOKEN {
            return Err(serde::de::Error::custom("vocabulary must start with <s>, <unk>"));
        }
        let v = Self::from_words(words[2..].iter().map(String::as_str));
        if v.words.len() != words.len() {
            return Err(serde::de::Error::custom("duplicate vocabulary entry"));
        }
        Ok(v)
    }
}

impl Vocab {
    /// Builds a vocabulary from words in first-seen order; duplicates and
    /// the reserved tokens are skipped.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(BOS_TOKEN);
        v.insert(UNK_TOKEN);
        for w in words {
            v.insert(w);
        }
        v
    }

    fn insert(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.index.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(w.to_string());
        self.index.insert(w.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Token ids of `text`; out-of-vocabulary words map to [`UNK`].
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        split_words(text)
            .into_iter()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    /// Like [`tokenize`](Self::tokenize) but also counts unknown words.
    pub fn tokenize_counting(&self, text: &str, unknown: &mut usize) -> Vec<u32> {
        let ids = self.tokenize(text);
        *unknown += ids.iter().filter(|&&t| t == UNK).count();
        ids
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Whitespace split with trailing punctuation peeled off as separate words.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let core = raw.trim_end_matches(PUNCT);
        if !core.is_empty() {
            out.push(core);
        }
        let tail = &raw[core.len()..];
        for (i, _) in tail.char_indices() {
            out.push(&tail[i..i + 1]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let v = Vocab::from_words(["the", "cat", "sleeps"]);
        let ids = v.tokenize("the cat sleeps");
        assert_eq!(ids, vec![2, 3, 4]);
        assert_eq!(v.detokenize(&ids), "the cat sleeps");
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocab::from_words(["a"]);
        let mut n = 0;
        assert_eq!(v.tokenize_counting("a b a c", &mut n), vec![2, UNK, 2, UNK]);
        assert_eq!(n, 2);
    }

    #[test]
    fn punctuation_is_split() {
        assert_eq!(split_words("Craig explored this mall."), vec!["Craig", "explored", "this", "mall", "."]);
        assert_eq!(split_words("what?! ok"), vec!["what", "?", "!", "ok"]);
        assert_eq!(split_words(" . "), vec!["."]);
    }

    #[test]
    fn ids_are_stable_and_serde_round_trips() {
        let a = Vocab::from_words(["x", "y", "x", "<s>"]);
        let b = Vocab::from_words(["x", "y"]);
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, r#"["<s>","<unk>","x","y"]"#);
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), a);
        assert!(serde_json::from_str::<Vocab>(r#"["x"]"#).is_err());
    }
}
