//! Sense-annotated usage records: ingestion, labeling and the top-2 filter.

pub mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corelex::Labeler;
use crate::error::{Error, Result};
use crate::wordnet::Pos;

impl Serialize for Pos {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.tag().to_string())
    }
}

impl<'de> Deserialize<'de> for Pos {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Pos::from_tag(&s).ok_or_else(|| serde::de::Error::custom(format!("bad pos `{s}`")))
    }
}

/// One corpus record as it appears in the JSONL input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawUsage {
    pub tokens: Vec<String>,
    pub target_index: usize,
    /// Multiword lemmas use `_`; the target span covers one token per part.
    pub lemma: String,
    pub pos: Pos,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_synset: Option<String>,
    /// Pre-assigned label; present in generated corpora and labeled dumps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_sense: Option<String>,
    /// 1-based source line, the stable sort key for grouping.
    #[serde(skip)]
    pub line: usize,
}

impl RawUsage {
    pub fn span_len(&self) -> usize {
        self.lemma.split('_').filter(|p| !p.is_empty()).count().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Skip("empty token list".into()));
        }
        if self.pos == Pos::Adv {
            return Err(Error::Skip("pos must be n, v or a".into()));
        }
        if self.target_index + self.span_len() > self.tokens.len() {
            return Err(Error::Skip(format!(
                "target span {}+{} outside {} tokens",
                self.target_index,
                self.span_len(),
                self.tokens.len()
            )));
        }
        if let Some(o) = self.object_index {
            if o >= self.tokens.len() {
                return Err(Error::Skip(format!("object_index {o} outside sentence")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WordKey {
    pub lemma: String,
    pub pos: Pos,
}

impl WordKey {
    pub fn new(lemma: impl Into<String>, pos: Pos) -> Self {
        WordKey {
            lemma: lemma.into(),
            pos,
        }
    }
}

impl fmt::Display for WordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.lemma, self.pos)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledUsage {
    pub usage: RawUsage,
    pub meta_sense: String,
}

/// Usages grouped by word and meta-sense, each group in source-line order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UsageStore {
    groups: BTreeMap<WordKey, BTreeMap<String, Vec<LabeledUsage>>>,
}

impl UsageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, u: LabeledUsage) {
        let key = WordKey::new(u.usage.lemma.clone(), u.usage.pos);
        let group = self
            .groups
            .entry(key)
            .or_default()
            .entry(u.meta_sense.clone())
            .or_default();
        let at = group.partition_point(|x| x.usage.line <= u.usage.line);
        group.insert(at, u);
    }

    pub fn words(&self) -> impl Iterator<Item = &WordKey> {
        self.groups.keys()
    }

    pub fn word_count(&self) -> usize {
        self.groups.len()
    }

    pub fn usage_count(&self) -> usize {
        self.groups.values().flat_map(|g| g.values()).map(Vec::len).sum()
    }

    /// Meta-sense groups of one word, keyed by code.
    pub fn senses(&self, w: &WordKey) -> Option<&BTreeMap<String, Vec<LabeledUsage>>> {
        self.groups.get(w)
    }

    pub fn usages(&self, w: &WordKey, code: &str) -> &[LabeledUsage] {
        self.groups
            .get(w)
            .and_then(|g| g.get(code))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn count(&self, w: &WordKey, code: &str) -> usize {
        self.usages(w, code).len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledUsage> {
        self.groups.values().flat_map(|g| g.values()).flatten()
    }

    /// Writes every usage, with its label, as JSONL in store order.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref();
        let mut w = BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?);
        for u in self.iter() {
            let mut rec = u.usage.clone();
            rec.meta_sense = Some(u.meta_sense.clone());
            let line = serde_json::to_string(&rec).map_err(|e| Error::Data(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(p, e))?;
        }
        w.flush().map_err(|e| Error::io(p, e))
    }
}

#[derive(Debug)]
pub struct IngestReport {
    pub store: UsageStore,
    pub records: usize,
    pub skipped: Vec<(usize, String)>,
}

impl IngestReport {
    pub fn skip_rate(&self) -> f64 {
        if self.records == 0 {
            0.0
        } else {
            self.skipped.len() as f64 / self.records as f64
        }
    }
}

/// Reads a JSONL corpus, labels every record and groups the results.
/// Unusable records are skipped and logged with their line numbers.
pub fn ingest(path: impl AsRef<Path>, labeler: &dyn Labeler) -> Result<IngestReport> {
    let p = path.as_ref();
    let f = File::open(p).map_err(|e| Error::io(p, e))?;
    ingest_reader(BufReader::new(f), labeler)
}

pub fn ingest_reader(reader: impl BufRead, labeler: &dyn Labeler) -> Result<IngestReport> {
    let mut store = UsageStore::new();
    let mut records = 0;
    let mut skipped = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Data(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        records += 1;
        let lineno = i + 1;
        let parsed = serde_json::from_str::<RawUsage>(&line)
            .map_err(|e| Error::Skip(e.to_string()))
            .and_then(|mut u| {
                u.line = lineno;
                u.validate()?;
                let code = labeler.label(&u)?;
                Ok(LabeledUsage { usage: u, meta_sense: code })
            });
        match parsed {
            Ok(u) => store.insert(u),
            Err(e) => {
                log::debug!("line {lineno}: {e}");
                skipped.push((lineno, e.to_string()));
            }
        }
    }
    let report = IngestReport {
        store,
        records,
        skipped,
    };
    if report.skip_rate() > 0.10 {
        log::warn!(
            "skipped {} of {} records ({:.1}%)",
            report.skipped.len(),
            report.records,
            100.0 * report.skip_rate()
        );
    }
    Ok(report)
}

/// Keeps, per word, the two meta-senses with the most usages (ties by code).
/// Returns the filtered store and the number of usages dropped.
pub fn filter_top2(store: &UsageStore) -> (UsageStore, usize) {
    let mut out = UsageStore::new();
    let mut dropped = 0;
    for (w, senses) in &store.groups {
        let mut ranked: Vec<(&String, &Vec<LabeledUsage>)> = senses.iter().collect();
        ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(b.0)));
        for (rank, (code, usages)) in ranked.into_iter().enumerate() {
            if rank < 2 {
                out.groups
                    .entry(w.clone())
                    .or_default()
                    .insert(code.clone(), usages.clone());
            } else {
                dropped += usages.len();
            }
        }
    }
    (out, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corelex::Prelabeled;
    use std::io::Cursor;

    fn rec(lemma: &str, code: &str, line: usize) -> LabeledUsage {
        LabeledUsage {
            usage: RawUsage {
                tokens: vec!["a".into(), lemma.into(), "b".into()],
                target_index: 1,
                lemma: lemma.into(),
                pos: Pos::Verb,
                synset: None,
                object_index: Some(2),
                object_synset: None,
                meta_sense: None,
                line,
            },
            meta_sense: code.into(),
        }
    }

    fn store_with(counts: &[(&str, usize)]) -> UsageStore {
        let mut s = UsageStore::new();
        let mut line = 0;
        for (code, n) in counts {
            for _ in 0..*n {
                line += 1;
                s.insert(rec("get", code, line));
            }
        }
        s
    }

    #[test]
    fn top2_keeps_most_frequent() {
        let (f, dropped) = filter_top2(&store_with(&[("art", 10), ("atr", 7), ("sta", 2)]));
        let w = WordKey::new("get", Pos::Verb);
        let kept: Vec<&String> = f.senses(&w).unwrap().keys().collect();
        assert_eq!(kept, ["art", "atr"]);
        assert_eq!(dropped, 2);
    }

    #[test]
    fn top2_single_sense_unchanged() {
        let s = store_with(&[("art", 4)]);
        let (f, dropped) = filter_top2(&s);
        assert_eq!(f, s);
        assert_eq!(dropped, 0);
    }

    #[test]
    fn top2_ties_break_by_code() {
        let (f, dropped) = filter_top2(&store_with(&[("sta", 5), ("atr", 5), ("art", 5)]));
        let w = WordKey::new("get", Pos::Verb);
        let kept: Vec<&String> = f.senses(&w).unwrap().keys().collect();
        assert_eq!(kept, ["art", "atr"]);
        assert_eq!(dropped, 5);
    }

    const THREE: &str = r#"{"tokens":["the","cook","fried","chicken"],"target_index":3,"lemma":"chicken","pos":"n","synset":"chicken.n.01","meta_sense":"fod"}
{"tokens":["they","arrive","at","school"],"target_index":1,"lemma":"arrive_at","pos":"v","object_index":3,"object_synset":"school.n.01","meta_sense":"loc"}
{"tokens":["a","cold","attitude"],"target_index":1,"lemma":"cold","pos":"a","object_index":2,"object_synset":"attitude.n.01","meta_sense":"psy"}
"#;

    #[test]
    fn ingest_three_records() {
        let r = ingest_reader(Cursor::new(THREE), &Prelabeled::corelex()).unwrap();
        assert_eq!(r.records, 3);
        assert!(r.skipped.is_empty());
        assert_eq!(r.store.usage_count(), 3);
        assert_eq!(r.store.count(&WordKey::new("arrive_at", Pos::Verb), "loc"), 1);
    }

    #[test]
    fn verb_without_object_index_is_skipped() {
        let text = format!(
            "{THREE}{}\n",
            r#"{"tokens":["we","get","it"],"target_index":1,"lemma":"get","pos":"v","meta_sense":"art"}"#
        );
        let r = ingest_reader(Cursor::new(text), &Prelabeled::corelex()).unwrap();
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].0, 4);
        assert_eq!(r.store.usage_count(), 3);
    }

    #[test]
    fn malformed_json_and_bad_span_are_skipped() {
        let text = "not json\n{\"tokens\":[\"x\"],\"target_index\":3,\"lemma\":\"x\",\"pos\":\"n\",\"meta_sense\":\"art\"}\n";
        let r = ingest_reader(Cursor::new(text), &Prelabeled::corelex()).unwrap();
        assert_eq!(r.records, 2);
        assert_eq!(r.skipped.iter().map(|s| s.0).collect::<Vec<_>>(), [1, 2]);
    }

    #[test]
    fn ingest_is_idempotent() {
        let a = ingest_reader(Cursor::new(THREE), &Prelabeled::corelex()).unwrap();
        let b = ingest_reader(Cursor::new(THREE), &Prelabeled::corelex()).unwrap();
        assert_eq!(a.store, b.store);
    }

    #[test]
    fn labeled_dump_reingests_identically() {
        let a = ingest_reader(Cursor::new(THREE), &Prelabeled::corelex()).unwrap().store;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labeled.jsonl");
        a.write_jsonl(&p).unwrap();
        let b = ingest(&p, &Prelabeled::corelex()).unwrap().store;
        assert_eq!(a.usage_count(), b.usage_count());
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.meta_sense, y.meta_sense);
            assert_eq!(x.usage.tokens, y.usage.tokens);
        }
    }

    #[test]
    fn span_length_follows_lemma_parts() {
        let u = rec("arrive_at", "loc", 1).usage;
        assert_eq!(u.span_len(), 2);
    }
}
