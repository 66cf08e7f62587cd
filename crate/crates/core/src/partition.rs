//! Train/test splitting of instantiations and corpus rewriting with
//! partitioned tokens.
//!
//! Only annotated target spans are rewritten. Other occurrences of a test
//! lemma in the same sentence are left alone.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{UsageStore, WordKey};
use crate::error::{Error, Result};
use crate::mining::MetaAlternation;
use crate::wordnet::Pos;

pub const ALPHA_GRID: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];

/// Recorded in output metadata: non-target mentions are never rewritten.
pub const REWRITE_SCOPE: &str = "targets_only";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartitionConfig {
    pub alpha: f64,
    pub seed: u64,
    pub run_id: u64,
}

pub fn check_alpha(alpha: f64) -> Result<f64> {
    ALPHA_GRID
        .iter()
        .copied()
        .find(|g| (g - alpha).abs() < 1e-9)
        .ok_or_else(|| Error::config("alpha", format!("{alpha} is not one of {ALPHA_GRID:?}")))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AltSplit {
    pub code1: String,
    pub code2: String,
    pub train: Vec<WordKey>,
    pub test: Vec<WordKey>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSplit {
    pub alternations: Vec<AltSplit>,
}

impl PartitionSplit {
    pub fn train_words(&self) -> impl Iterator<Item = &WordKey> {
        self.alternations.iter().flat_map(|a| a.train.iter())
    }

    pub fn test_words(&self) -> impl Iterator<Item = &WordKey> {
        self.alternations.iter().flat_map(|a| a.test.iter())
    }

    pub fn has_train(&self) -> bool {
        self.alternations.iter().any(|a| !a.train.is_empty())
    }
}

/// The seeded permutation does not depend on alpha, so train sets are nested
/// across the grid for a fixed `(seed, run_id)`.
pub fn split(alts: &[MetaAlternation], cfg: &PartitionConfig) -> Result<PartitionSplit> {
    let alpha = check_alpha(cfg.alpha)?;
    let mut out = Vec::with_capacity(alts.len());
    for (i, a) in alts.iter().enumerate() {
        let mut words: Vec<WordKey> = a.instantiations.iter().map(|x| x.word.clone()).collect();
        words.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ cfg.run_id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(i as u64);
        words.shuffle(&mut rng);
        let n_train = (alpha * words.len() as f64).round() as usize;
        let test = words.split_off(n_train);
        let mut train = words;
        train.sort();
        let mut test = test;
        test.sort();
        out.push(AltSplit {
            code1: a.code1.clone(),
            code2: a.code2.clone(),
            train,
            test,
        });
    }
    Ok(PartitionSplit { alternations: out })
}

pub fn surface(word: &WordKey, code: &str) -> String {
    format!("{}#{}#{}", word.lemma, word.pos, code)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionedToken {
    pub word: WordKey,
    pub code: String,
    pub surface: String,
    /// Index into the split's alternation list.
    pub alternation: usize,
}

/// All partitioned tokens, two per test word, ordered by (alternation, word, code).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenRegistry {
    tokens: Vec<PartitionedToken>,
    by_surface: HashMap<String, usize>,
}

impl TokenRegistry {
    pub fn from_split(split: &PartitionSplit) -> Self {
        let mut tokens = Vec::new();
        for (ai, a) in split.alternations.iter().enumerate() {
            for w in &a.test {
                for code in [&a.code1, &a.code2] {
                    tokens.push(PartitionedToken {
                        word: w.clone(),
                        code: code.clone(),
                        surface: surface(w, code),
                        alternation: ai,
                    });
                }
            }
        }
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<PartitionedToken>) -> Self {
        let by_surface = tokens.iter().enumerate().map(|(i, t)| (t.surface.clone(), i)).collect();
        TokenRegistry { tokens, by_surface }
    }

    pub fn tokens(&self) -> &[PartitionedToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, surface: &str) -> Option<&PartitionedToken> {
        self.by_surface.get(surface).map(|&i| &self.tokens[i])
    }

    pub fn lookup(&self, word: &WordKey, code: &str) -> Option<&PartitionedToken> {
        self.get(&surface(word, code))
    }

    /// The other token of the same test word.
    pub fn sibling(&self, surface: &str) -> Option<&PartitionedToken> {
        let t = self.get(surface)?;
        self.tokens.iter().find(|o| o.word == t.word && o.surface != t.surface)
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.surface.clone()).collect()
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>, header: &str, split: &PartitionSplit) -> Result<()> {
        let p = path.as_ref();
        let mut w = BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?);
        let io = |e| Error::io(p, e);
        writeln!(w, "{header}").map_err(io)?;
        writeln!(w, "token\tlemma\tpos\tcode\tsibling\talternation").map_err(io)?;
        for t in &self.tokens {
            let a = &split.alternations[t.alternation];
            let other = if t.code == a.code1 { &a.code2 } else { &a.code1 };
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}-{}",
                t.surface,
                t.word.lemma,
                t.word.pos,
                t.code,
                surface(&t.word, other),
                a.code1,
                a.code2
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionedSentence {
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub word: WordKey,
    pub meta_sense: String,
    pub partitioned: bool,
    pub line: usize,
}

impl PartitionedSentence {
    pub fn target(&self) -> &str {
        &self.tokens[self.target_index]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PartitionedCorpus {
    pub sentences: Vec<PartitionedSentence>,
    pub skipped: usize,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    sentence: usize,
    target_index: usize,
    target: String,
    lemma: String,
    pos: Pos,
    meta_sense: String,
    partitioned: bool,
    line: usize,
}

impl PartitionedCorpus {
    /// Sentences whose target is a partitioned token, grouped by token.
    pub fn by_token(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut m: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.sentences.iter().enumerate() {
            if s.partitioned {
                m.entry(s.target()).or_default().push(i);
            }
        }
        m
    }

    /// Sentences of an unpartitioned word under one meta-sense.
    pub fn by_word_sense(&self) -> BTreeMap<(&WordKey, &str), Vec<usize>> {
        let mut m: BTreeMap<(&WordKey, &str), Vec<usize>> = BTreeMap::new();
        for (i, s) in self.sentences.iter().enumerate() {
            if !s.partitioned {
                m.entry((&s.word, s.meta_sense.as_str())).or_default().push(i);
            }
        }
        m
    }

    /// One token per line, a blank line after each sentence, plus a JSONL
    /// sidecar describing each sentence's target.
    pub fn write(&self, text: impl AsRef<Path>, sidecar: impl AsRef<Path>, header: &str) -> Result<()> {
        let (tp, sp) = (text.as_ref(), sidecar.as_ref());
        let mut t = BufWriter::new(File::create(tp).map_err(|e| Error::io(tp, e))?);
        let mut s = BufWriter::new(File::create(sp).map_err(|e| Error::io(sp, e))?);
        writeln!(t, "{header} rewrite_scope={REWRITE_SCOPE}").map_err(|e| Error::io(tp, e))?;
        for (i, sent) in self.sentences.iter().enumerate() {
            for tok in &sent.tokens {
                writeln!(t, "{tok}").map_err(|e| Error::io(tp, e))?;
            }
            writeln!(t).map_err(|e| Error::io(tp, e))?;
            let rec = Sidecar {
                sentence: i,
                target_index: sent.target_index,
                target: sent.target().to_string(),
                lemma: sent.word.lemma.clone(),
                pos: sent.word.pos,
                meta_sense: sent.meta_sense.clone(),
                partitioned: sent.partitioned,
                line: sent.line,
            };
            let line = serde_json::to_string(&rec).map_err(|e| Error::Data(e.to_string()))?;
            writeln!(s, "{line}").map_err(|e| Error::io(sp, e))?;
        }
        t.flush().map_err(|e| Error::io(tp, e))?;
        s.flush().map_err(|e| Error::io(sp, e))
    }

    pub fn read(text: impl AsRef<Path>, sidecar: impl AsRef<Path>) -> Result<Self> {
        let (tp, sp) = (text.as_ref(), sidecar.as_ref());
        let tf = File::open(tp).map_err(|e| Error::io(tp, e))?;
        let mut sentences_tokens: Vec<Vec<String>> = Vec::new();
        let mut cur = Vec::new();
        for line in BufReader::new(tf).lines() {
            let line = line.map_err(|e| Error::io(tp, e))?;
            if line.starts_with('#') {
                continue;
            }
            if line.is_empty() {
                sentences_tokens.push(std::mem::take(&mut cur));
            } else {
                cur.push(line);
            }
        }
        if !cur.is_empty() {
            sentences_tokens.push(cur);
        }
        let sf = File::open(sp).map_err(|e| Error::io(sp, e))?;
        let name = sp.display().to_string();
        let mut sentences = Vec::new();
        for (i, line) in BufReader::new(sf).lines().enumerate() {
            let line = line.map_err(|e| Error::io(sp, e))?;
            let rec: Sidecar =
                serde_json::from_str(&line).map_err(|e| Error::parse(&name, i + 1, e.to_string()))?;
            let tokens = sentences_tokens
                .get(rec.sentence)
                .cloned()
                .ok_or_else(|| Error::parse(&name, i + 1, "sentence index beyond text file"))?;
            if tokens.get(rec.target_index) != Some(&rec.target) {
                return Err(Error::parse(&name, i + 1, "target does not match text"));
            }
            sentences.push(PartitionedSentence {
                tokens,
                target_index: rec.target_index,
                word: WordKey::new(rec.lemma, rec.pos),
                meta_sense: rec.meta_sense,
                partitioned: rec.partitioned,
                line: rec.line,
            });
        }
        if sentences.len() != sentences_tokens.len() {
            return Err(Error::Data(format!(
                "{} sentences in text but {} sidecar records",
                sentences_tokens.len(),
                sentences.len()
            )));
        }
        Ok(PartitionedCorpus { sentences, skipped: 0 })
    }
}

/// Rewrites every usage of a test word, replacing its whole target span with
/// the partitioned token of the usage's meta-sense. Output follows source
/// line order.
pub fn partition_corpus(store: &UsageStore, split: &PartitionSplit) -> (PartitionedCorpus, TokenRegistry) {
    let registry = TokenRegistry::from_split(split);
    let test: BTreeSet<&WordKey> = split.test_words().collect();
    let mut sentences = Vec::with_capacity(store.usage_count());
    let mut skipped = 0;
    for u in store.iter() {
        let raw = &u.usage;
        let word = WordKey::new(raw.lemma.clone(), raw.pos);
        let mut tokens = raw.tokens.clone();
        let partitioned = test.contains(&word);
        if partitioned {
            let Some(tok) = registry.lookup(&word, &u.meta_sense) else {
                log::info!("line {}: {} has meta-sense {} outside its pair", raw.line, word, u.meta_sense);
                skipped += 1;
                continue;
            };
            tokens.splice(
                raw.target_index..raw.target_index + raw.span_len(),
                std::iter::once(tok.surface.clone()),
            );
        }
        sentences.push(PartitionedSentence {
            tokens,
            target_index: raw.target_index,
            word,
            meta_sense: u.meta_sense.clone(),
            partitioned,
            line: raw.line,
        });
    }
    sentences.sort_by_key(|s| s.line);
    (PartitionedCorpus { sentences, skipped }, registry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabeledUsage, RawUsage};
    use crate::mining::Instantiation;

    fn alt(n: usize) -> MetaAlternation {
        MetaAlternation {
            code1: "loc".into(),
            code2: "psy".into(),
            instantiations: (0..n)
                .map(|i| Instantiation {
                    word: WordKey::new(format!("w{i:03}"), Pos::Verb),
                    count1: 11,
                    count2: 11,
                })
                .collect(),
            systematic: true,
        }
    }

    fn cfg(alpha: f64) -> PartitionConfig {
        PartitionConfig { alpha, seed: 7, run_id: 0 }
    }

    #[test]
    fn alpha_zero_has_empty_train() {
        let s = split(&[alt(10), alt(5)], &cfg(0.0)).unwrap();
        assert!(s.alternations.iter().all(|a| a.train.is_empty()));
        assert!(!s.has_train());
    }

    #[test]
    fn alpha_point_eight_of_hundred() {
        let s = split(&[alt(100)], &cfg(0.8)).unwrap();
        assert_eq!(s.alternations[0].train.len(), 80);
        assert_eq!(s.alternations[0].test.len(), 20);
    }

    #[test]
    fn off_grid_alpha_rejected() {
        assert!(matches!(split(&[alt(3)], &cfg(0.5)), Err(Error::Config { .. })));
    }

    #[test]
    fn split_is_reproducible_and_nested() {
        let a = split(&[alt(30)], &cfg(0.4)).unwrap();
        assert_eq!(a, split(&[alt(30)], &cfg(0.4)).unwrap());
        let b = split(&[alt(30)], &cfg(0.6)).unwrap();
        assert!(a.alternations[0].train.iter().all(|w| b.alternations[0].train.contains(w)));
        let other = split(&[alt(30)], &PartitionConfig { run_id: 1, ..cfg(0.4) }).unwrap();
        assert_ne!(a, other);
    }

    fn usage(lemma: &str, tokens: &[&str], target: usize, code: &str, line: usize) -> LabeledUsage {
        LabeledUsage {
            usage: RawUsage {
                tokens: tokens.iter().map(|s| s.to_string()).collect(),
                target_index: target,
                lemma: lemma.into(),
                pos: Pos::Verb,
                synset: None,
                object_index: Some(tokens.len() - 1),
                object_synset: None,
                meta_sense: None,
                line,
            },
            meta_sense: code.into(),
        }
    }

    fn manual_split(test: &[&str], train: &[&str]) -> PartitionSplit {
        PartitionSplit {
            alternations: vec![AltSplit {
                code1: "loc".into(),
                code2: "psy".into(),
                train: train.iter().map(|w| WordKey::new(*w, Pos::Verb)).collect(),
                test: test.iter().map(|w| WordKey::new(*w, Pos::Verb)).collect(),
            }],
        }
    }

    #[test]
    fn multiword_span_collapses_to_one_token() {
        let mut s = UsageStore::new();
        s.insert(usage("arrive_at", &["they", "arrive", "at", "school"], 1, "loc", 1));
        s.insert(usage("get", &["they", "get", "school"], 1, "loc", 2));
        let (c, reg) = partition_corpus(&s, &manual_split(&["arrive_at"], &["get"]));
        assert_eq!(c.sentences[0].tokens, ["they", "arrive_at#v#loc", "school"]);
        assert_eq!(c.sentences[1].tokens, ["they", "get", "school"]);
        assert!(!c.sentences[1].partitioned);
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.sibling("arrive_at#v#loc").unwrap().surface, "arrive_at#v#psy");
    }

    #[test]
    fn counts_per_partitioned_token() {
        let mut s = UsageStore::new();
        let mut line = 0;
        for (code, n) in [("loc", 30), ("psy", 25)] {
            for _ in 0..n {
                line += 1;
                s.insert(usage("zork", &["a", "zork", "b"], 1, code, line));
            }
        }
        let (c, _) = partition_corpus(&s, &manual_split(&["zork"], &[]));
        let count = |t: &str| c.sentences.iter().filter(|s| s.tokens.iter().any(|x| x == t)).count();
        assert_eq!(count("zork#v#loc"), 30);
        assert_eq!(count("zork#v#psy"), 25);
        assert_eq!(count("zork"), 0);
    }

    #[test]
    fn outside_pair_is_skipped() {
        let mut s = UsageStore::new();
        s.insert(usage("zork", &["a", "zork", "b"], 1, "art", 1));
        let (c, _) = partition_corpus(&s, &manual_split(&["zork"], &[]));
        assert_eq!(c.skipped, 1);
        assert!(c.sentences.is_empty());
    }

    #[test]
    fn write_read_roundtrip() {
        let mut s = UsageStore::new();
        s.insert(usage("arrive_at", &["they", "arrive", "at", "school"], 1, "loc", 1));
        s.insert(usage("get", &["they", "get", "school"], 1, "psy", 2));
        let (c, _) = partition_corpus(&s, &manual_split(&["arrive_at"], &["get"]));
        let dir = tempfile::tempdir().unwrap();
        let (t, j) = (dir.path().join("c.txt"), dir.path().join("c.jsonl"));
        c.write(&t, &j, "# h").unwrap();
        assert_eq!(PartitionedCorpus::read(&t, &j).unwrap(), c);
    }
}
