use std::collections::{BTreeMap, HashMap};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const UNK: u32 = 2;
pub const CLS: u32 = 3;
pub const SPECIALS: [&str; 4] = ["[PAD]", "[MASK]", "[UNK]", "[CLS]"];

/// Whole-token vocabulary with dense ids. Specials come first, then corpus
/// tokens in lexical order, then extension tokens in insertion order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pub min_freq: usize,
}

impl Tokenizer {
    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token `{t}`")));
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Data("vocabulary must start with the special tokens".into()));
            }
        }
        Ok(Tokenizer { tokens, index, min_freq })
    }

    /// Specials plus every corpus token seen at least `min_freq` times. Tokens
    /// in `reserved` are left out here so they can be appended as
    /// extension rows later.
    pub fn build<'a, I, S>(sentences: I, reserved: &[String], min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a S>,
        S: AsRef<[String]> + 'a + ?Sized,
    {
        let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
        let mut any = false;
        for s in sentences {
            for t in s.as_ref() {
                any = true;
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        if !any {
            return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let reserved: std::collections::HashSet<&str> = reserved.iter().map(String::as_str).collect();
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for (t, n) in freq {
            if n >= min_freq && !reserved.contains(t) && !SPECIALS.contains(&t) {
                tokens.push(t.to_string());
            }
        }
        Self::from_tokens(tokens, min_freq)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    pub(crate) fn push(&mut self, token: &str) -> Result<u32> {
        if self.contains(token) {
            return Err(Error::Contract(format!("token `{token}` is already in the vocabulary")));
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        Ok(id)
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(v: &[&[&str]]) -> Vec<Vec<String>> {
        v.iter().map(|s| s.iter().map(|t| t.to_string()).collect()).collect()
    }

    #[test]
    fn three_tokens_plus_specials() {
        let s = sents(&[&["a", "b"], &["c", "a"]]);
        let t = Tokenizer::build(&s, &[], 1).unwrap();
        assert_eq!(t.len(), 3 + SPECIALS.len());
        assert_eq!(t.encode(&s[0]), [4, 5]);
        assert_eq!(t.encode(&["zzz".to_string()]), [UNK]);
    }

    #[test]
    fn min_freq_cutoff() {
        let s = sents(&[&["a", "a", "b"]]);
        let t = Tokenizer::build(&s, &[], 2).unwrap();
        assert!(t.contains("a") && !t.contains("b"));
    }

    #[test]
    fn empty_corpus_errors() {
        let s: Vec<Vec<String>> = vec![vec![]];
        assert!(Tokenizer::build(&s, &[], 1).is_err());
    }

    #[test]
    fn duplicate_push_is_rejected() {
        let s = sents(&[&["a"]]);
        let mut t = Tokenizer::build(&s, &[], 1).unwrap();
        assert_eq!(t.push("x#v#loc").unwrap(), 5);
        assert!(t.push("x#v#loc").is_err());
    }
}
