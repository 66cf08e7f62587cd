//! Systematic meta-alternation mining and instantiation selection.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{UsageStore, WordKey};
use crate::error::{Error, Result};
use crate::wordnet::Pos;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub theta: usize,
    /// "More than 10 usages" is `>= 11`.
    pub min_usages_per_side: usize,
    pub top_k: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            theta: 50,
            min_usages_per_side: 11,
            top_k: 100,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        for (f, v) in [
            ("mining.theta", self.theta),
            ("mining.min_usages_per_side", self.min_usages_per_side),
            ("mining.top_k", self.top_k),
        ] {
            if v == 0 {
                return Err(Error::config(f, "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instantiation {
    pub word: WordKey,
    pub count1: usize,
    pub count2: usize,
}

impl Instantiation {
    pub fn total(&self) -> usize {
        self.count1 + self.count2
    }
}

/// An unordered meta-sense pair, stored with `code1 < code2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaAlternation {
    pub code1: String,
    pub code2: String,
    pub instantiations: Vec<Instantiation>,
    pub systematic: bool,
}

impl MetaAlternation {
    pub fn pair_code(&self) -> String {
        format!("{}-{}", self.code1, self.code2)
    }

    pub fn has(&self, code: &str) -> bool {
        self.code1 == code || self.code2 == code
    }

    pub fn other(&self, code: &str) -> Option<&str> {
        if self.code1 == code {
            Some(&self.code2)
        } else if self.code2 == code {
            Some(&self.code1)
        } else {
            None
        }
    }
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Every pair jointly expressed by at least one qualifying word, systematic
/// or not, ordered by instantiation count descending then pair codes.
pub fn mine_all(store: &UsageStore, cfg: &MiningConfig) -> Vec<MetaAlternation> {
    let mut pairs: BTreeMap<(String, String), Vec<Instantiation>> = BTreeMap::new();
    for w in store.words() {
        let senses = store.senses(w).expect("word listed by store");
        if senses.len() != 2 {
            continue;
        }
        let mut it = senses.iter();
        let (c1, u1) = it.next().unwrap();
        let (c2, u2) = it.next().unwrap();
        if u1.len() < cfg.min_usages_per_side || u2.len() < cfg.min_usages_per_side {
            continue;
        }
        // BTreeMap iteration already yields c1 < c2.
        pairs.entry(ordered(c1, c2)).or_default().push(Instantiation {
            word: w.clone(),
            count1: u1.len(),
            count2: u2.len(),
        });
    }
    let mut out: Vec<MetaAlternation> = pairs
        .into_iter()
        .map(|((code1, code2), instantiations)| MetaAlternation {
            systematic: instantiations.len() >= cfg.theta,
            code1,
            code2,
            instantiations,
        })
        .collect();
    out.sort_by(|a, b| {
        b.instantiations
            .len()
            .cmp(&a.instantiations.len())
            .then_with(|| (&a.code1, &a.code2).cmp(&(&b.code1, &b.code2)))
    });
    out
}

/// The systematic alternations of a top-2 filtered store.
pub fn mine(store: &UsageStore, cfg: &MiningConfig) -> Vec<MetaAlternation> {
    mine_all(store, cfg).into_iter().filter(|a| a.systematic).collect()
}

/// Keeps the `top_k` instantiations with the most usages, ties by word order.
pub fn select_instantiations(alt: &MetaAlternation, cfg: &MiningConfig) -> MetaAlternation {
    let mut inst = alt.instantiations.clone();
    inst.sort_by(|a, b| b.total().cmp(&a.total()).then_with(|| a.word.cmp(&b.word)));
    inst.truncate(cfg.top_k);
    MetaAlternation {
        instantiations: inst,
        ..alt.clone()
    }
}

/// Mines and truncates in one pass.
pub fn mine_selected(store: &UsageStore, cfg: &MiningConfig) -> Vec<MetaAlternation> {
    mine(store, cfg).iter().map(|a| select_instantiations(a, cfg)).collect()
}

/// Errors if any word instantiates two alternations.
pub fn check_disjoint(alts: &[MetaAlternation]) -> Result<()> {
    let mut seen = HashSet::new();
    for a in alts {
        for i in &a.instantiations {
            if !seen.insert(&i.word) {
                return Err(Error::Data(format!("{} instantiates two alternations", i.word)));
            }
        }
    }
    Ok(())
}

pub fn write_tsv(alts: &[MetaAlternation], path: impl AsRef<Path>, header: &str) -> Result<()> {
    let p = path.as_ref();
    let mut w = BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?);
    let io = |e| Error::io(p, e);
    writeln!(w, "{header}").map_err(io)?;
    writeln!(w, "code1\tcode2\tn_instantiations\tsystematic\tlemmas").map_err(io)?;
    for a in alts {
        let lemmas: Vec<String> = a.instantiations.iter().map(|i| i.word.to_string()).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            a.code1,
            a.code2,
            a.instantiations.len(),
            a.systematic,
            lemmas.join(",")
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads an alternation table, restoring usage counts from `store`.
pub fn read_tsv(path: impl AsRef<Path>, store: &UsageStore) -> Result<Vec<MetaAlternation>> {
    let p = path.as_ref();
    let name = p.display().to_string();
    let f = File::open(p).map_err(|e| Error::io(p, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(p, e))?;
        if line.starts_with('#') || line.starts_with("code1\t") || line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::parse(&name, i + 1, m);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad("expected 5 tab-separated fields"));
        }
        let systematic = f[3].parse::<bool>().map_err(|_| bad("bad systematic flag"))?;
        let mut instantiations = Vec::new();
        for item in f[4].split(',').filter(|s| !s.is_empty()) {
            let (lemma, pos) = item.rsplit_once('#').ok_or_else(|| bad("word needs lemma#pos"))?;
            let pos = Pos::from_tag(pos).ok_or_else(|| bad("bad pos"))?;
            let word = WordKey::new(lemma, pos);
            instantiations.push(Instantiation {
                count1: store.count(&word, f[0]),
                count2: store.count(&word, f[1]),
                word,
            });
        }
        out.push(MetaAlternation {
            code1: f[0].into(),
            code2: f[1].into(),
            instantiations,
            systematic,
        });
    }
    Ok(out)
}
