//! Word-level vocabulary.
//!
//! File format: UTF-8, one token per line, line index = token id. Ids 0..3
//! are PAD, UNK, BOS, EOS; regular words start at id 4. A vocabulary built
//! for denoiser training additionally reserves its top 64 ids for the span
//! sentinels `<extra_0>`..`<extra_63>` (the final 64 lines of the file).
//! Text is tokenized by whitespace splitting; unknown words map to UNK.

use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
/// First id available for regular words.
pub const FIRST_WORD_ID: u32 = 4;
/// Size of the sentinel block when present.
pub const NUM_SENTINELS: u32 = 64;

/// Names of the four special tokens, in id order.
pub fn special_tokens() -> Vec<String> {
    ["<pad>", "<unk>", "<bos>", "<eos>"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn sentinel_name(k: u32) -> String {
    format!("<extra_{k}>")
}

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    /// First sentinel id; the block runs to the end of the vocabulary.
    sentinel_base: Option<u32>,
}

impl Vocab {
    /// Specials, then `words`, then the 64-sentinel block on top.
    pub fn with_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = special_tokens();
        tokens.extend(words.into_iter().map(Into::into));
        tokens.extend((0..NUM_SENTINELS).map(sentinel_name));
        Self::from_tokens(tokens)
    }

    /// Specials and `words` only; unusable for span corruption.
    pub fn with_words_plain<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = special_tokens();
        tokens.extend(words.into_iter().map(Into::into));
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let specials = special_tokens();
        if tokens.len() < specials.len() {
            return Err(Error::Data(format!(
                "vocabulary has {} entries; the {} special ids must be present",
                tokens.len(),
                specials.len()
            )));
        }
        for (i, want) in specials.iter().enumerate() {
            if tokens[i] != *want {
                return Err(Error::Data(format!(
                    "vocabulary line {i} is {:?}, expected special token {want:?}",
                    tokens[i]
                )));
            }
        }
        // A sentinel block is exactly <extra_0>..<extra_63> as the last 64
        // lines; sentinel names anywhere else are malformed.
        let n = tokens.len();
        let has_block = n >= specials.len() + NUM_SENTINELS as usize
            && (0..NUM_SENTINELS)
                .all(|k| tokens[n - NUM_SENTINELS as usize + k as usize] == sentinel_name(k));
        let sentinel_base = has_block.then(|| (n - NUM_SENTINELS as usize) as u32);
        let word_end = sentinel_base.map_or(n, |b| b as usize);
        for tok in &tokens[specials.len()..word_end] {
            if tok.starts_with("<extra_") && tok.ends_with('>') {
                return Err(Error::Data(format!(
                    "sentinel token {tok:?} outside the trailing sentinel block"
                )));
            }
        }
        let mut index = HashMap::with_capacity(n);
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Data(format!("vocabulary line {i} is empty")));
            }
            if t.chars().any(char::is_whitespace) {
                return Err(Error::Data(format!(
                    "vocabulary token {t:?} at line {i} contains whitespace"
                )));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!(
                    "duplicate vocabulary token {t:?} at line {i}"
                )));
            }
        }
        Ok(Self {
            tokens,
            index,
            sentinel_base,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        Self::from_tokens(tokens)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Total number of ids, including reserved ones.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Specials and sentinels; never emitted by `decode`.
    pub fn is_reserved(&self, id: u32) -> bool {
        id < FIRST_WORD_ID || self.sentinel_base.is_some_and(|b| id >= b)
    }

    pub fn is_sentinel(&self, id: u32) -> bool {
        self.sentinel_base.is_some_and(|b| id >= b)
    }

    /// Number of sentinel ids this vocabulary reserves (0 or 64).
    pub fn num_sentinels(&self) -> u32 {
        if self.sentinel_base.is_some() {
            NUM_SENTINELS
        } else {
            0
        }
    }

    /// Sentinel id k, erroring past the reserved budget.
    pub fn sentinel(&self, k: u32) -> Result<u32> {
        match self.sentinel_base {
            Some(base) if k < NUM_SENTINELS => Ok(base + k),
            _ => Err(Error::SentinelBudget {
                spans: k as usize + 1,
                budget: self.num_sentinels() as usize,
            }),
        }
    }

    /// Index of a sentinel id within the block.
    pub fn sentinel_index(&self, id: u32) -> Option<u32> {
        self.sentinel_base
            .and_then(|b| (id >= b).then(|| id - b))
    }

    /// Whitespace tokenization; unknown words become UNK. No BOS/EOS here.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    /// Join tokens with single spaces, skipping reserved ids.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for id in ids {
            if self.is_reserved(*id) {
                continue;
            }
            if let Some(t) = self.token(*id) {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(t);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vocab {
        Vocab::with_words(["hello", "world", "x"]).unwrap()
    }

    #[test]
    fn reserved_layout_is_fixed() {
        let v = toy();
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<unk>"), Some(UNK));
        assert_eq!(v.id("<bos>"), Some(BOS));
        assert_eq!(v.id("<eos>"), Some(EOS));
        assert_eq!(v.id("hello"), Some(FIRST_WORD_ID));
        // Sentinels occupy the top 64 ids.
        assert_eq!(v.len(), 4 + 3 + 64);
        assert_eq!(v.id("<extra_0>"), Some(7));
        assert_eq!(v.id("<extra_63>"), Some(70));
        assert_eq!(v.sentinel(0).unwrap(), 7);
        assert!(v.is_sentinel(7) && v.is_sentinel(70));
        assert!(!v.is_sentinel(6));
    }

    #[test]
    fn plain_vocab_has_no_sentinels() {
        let v = Vocab::with_words_plain(["hello"]).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.num_sentinels(), 0);
        assert!(matches!(
            v.sentinel(0),
            Err(Error::SentinelBudget { spans: 1, budget: 0 })
        ));
    }

    #[test]
    fn encode_maps_unknowns_to_unk() {
        let v = toy();
        assert_eq!(
            v.encode("hello unknown world"),
            vec![FIRST_WORD_ID, UNK, FIRST_WORD_ID + 1]
        );
    }

    #[test]
    fn decode_skips_reserved_ids() {
        let v = toy();
        let ids = vec![EOS, FIRST_WORD_ID, PAD, FIRST_WORD_ID + 1, v.sentinel(2).unwrap()];
        assert_eq!(v.decode(&ids), "hello world");
    }

    #[test]
    fn file_round_trip_preserves_ids() {
        let v = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let loaded = Vocab::load(&path).unwrap();
        assert_eq!(loaded.len(), v.len());
        assert_eq!(loaded.id("world"), v.id("world"));
        assert_eq!(loaded.sentinel(5).unwrap(), v.sentinel(5).unwrap());
        // Line index is the id.
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[FIRST_WORD_ID as usize], "hello");
        assert_eq!(lines[lines.len() - 1], "<extra_63>");
    }

    #[test]
    fn load_rejects_missing_specials() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "hello\nworld\n").unwrap();
        assert!(Vocab::load(&path).is_err());
    }

    #[test]
    fn stray_sentinel_names_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "<pad>\n<unk>\n<bos>\n<eos>\n<extra_3>\nword\n").unwrap();
        assert!(Vocab::load(&path).is_err());
    }

    #[test]
    fn sentinel_budget_is_enforced() {
        let v = toy();
        assert!(v.sentinel(NUM_SENTINELS - 1).is_ok());
        assert!(matches!(
            v.sentinel(NUM_SENTINELS),
            Err(Error::SentinelBudget { spans: 65, budget: 64 })
        ));
    }
}
