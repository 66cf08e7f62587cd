//! Brute-force reference implementations shared by the integration tests and
//! the acceptance harness. They walk the graph through the public API only.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use metasense::corelex::MetaSenseInventory;
use metasense::corpus::RawUsage;
use metasense::wordnet::{Pos, SynsetId, Taxonomy};

pub fn wordnet_dir() -> Option<PathBuf> {
    std::env::var_os("METASENSE_WORDNET_DIR")
        .map(PathBuf::from)
        .or_else(|| Some(PathBuf::from("/root/wordnet/dict")))
        .filter(|d| d.join("data.noun").exists())
}

/// Every ancestor of `s` (itself included) with its shortest upward distance,
/// by repeated relaxation until nothing changes.
pub fn up_distances(tax: &Taxonomy, s: SynsetId) -> HashMap<SynsetId, u32> {
    let mut d = HashMap::from([(s, 0u32)]);
    loop {
        let mut changed = false;
        let snapshot: Vec<(SynsetId, u32)> = d.iter().map(|(k, v)| (*k, *v)).collect();
        for (x, dx) in snapshot {
            for p in tax.hypernyms(x).unwrap() {
                let e = d.entry(p).or_insert(u32::MAX);
                if dx + 1 < *e {
                    *e = dx + 1;
                    changed = true;
                }
            }
        }
        if !changed {
            return d;
        }
    }
}

/// `1 + min edges to a root`, computed by recursion over hypernyms.
pub fn depth(tax: &Taxonomy, s: SynsetId, memo: &mut HashMap<SynsetId, u32>) -> u32 {
    if let Some(&d) = memo.get(&s) {
        return d;
    }
    let parents = tax.hypernyms(s).unwrap();
    let d = if parents.is_empty() {
        1
    } else {
        1 + parents.iter().map(|&p| depth(tax, p, memo)).min().unwrap()
    };
    memo.insert(s, d);
    d
}

/// Common subsumers that are not a strict ancestor of another common
/// subsumer; the deepest wins, then the smaller offset.
pub fn lcs(tax: &Taxonomy, a: SynsetId, b: SynsetId, memo: &mut HashMap<SynsetId, u32>) -> Option<SynsetId> {
    let ua: HashSet<SynsetId> = up_distances(tax, a).into_keys().collect();
    let ub: HashSet<SynsetId> = up_distances(tax, b).into_keys().collect();
    let common: Vec<SynsetId> = ua.intersection(&ub).copied().collect();
    let lowest: Vec<SynsetId> = common
        .iter()
        .copied()
        .filter(|&c| !common.iter().any(|&o| o != c && up_distances(tax, o).contains_key(&c)))
        .collect();
    let mut best: Option<(u32, SynsetId)> = None;
    for c in lowest {
        let dc = depth(tax, c, memo);
        best = match best {
            Some((bd, bs)) if bd > dc || (bd == dc && bs.offset < c.offset) => Some((bd, bs)),
            _ => Some((dc, c)),
        };
    }
    best.map(|(_, s)| s)
}

pub fn wup(tax: &Taxonomy, a: SynsetId, b: SynsetId, memo: &mut HashMap<SynsetId, u32>) -> f64 {
    let l = lcs(tax, a, b, memo).expect("common subsumer");
    2.0 * depth(tax, l, memo) as f64 / (depth(tax, a, memo) + depth(tax, b, memo)) as f64
}

/// Nearest anchor by shortest path through a common subsumer; ties go to the
/// higher Wu-Palmer similarity, then to the earlier code.
pub fn map_synset(tax: &Taxonomy, inv: &MetaSenseInventory, s: SynsetId, memo: &mut HashMap<SynsetId, u32>) -> String {
    let us = up_distances(tax, s);
    let mut scored: Vec<(u32, f64, &str)> = inv
        .entries()
        .iter()
        .map(|m| {
            let ua = up_distances(tax, m.anchor);
            let d = us.iter().filter_map(|(c, ds)| ua.get(c).map(|da| ds + da)).min().unwrap();
            (d, 0.0, m.code.as_str())
        })
        .collect();
    let best = scored.iter().map(|x| x.0).min().unwrap();
    scored.retain(|x| x.0 == best);
    for x in scored.iter_mut() {
        let a = inv.get(x.2).unwrap().anchor;
        x.1 = wup(tax, s, a, memo);
    }
    scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.2.cmp(y.2)));
    scored[0].2.to_string()
}

/// Data-file text for a noun DAG where node `i` has hypernyms `parents[i]`
/// (all smaller indices). Offsets are `100 * (i + 1)`.
pub fn fixture_text(parents: &[Vec<usize>]) -> String {
    let mut s = String::new();
    for (i, ps) in parents.iter().enumerate() {
        let mut ptrs = String::new();
        for &p in ps {
            ptrs.push_str(&format!(" @ {:08} n 0000", 100 * (p + 1)));
        }
        s.push_str(&format!("{:08} 03 n 01 w{i} 0 {:03}{ptrs} | node {i}\n", 100 * (i + 1), ps.len()));
    }
    s
}

pub fn fixture_id(i: usize) -> SynsetId {
    SynsetId::new(Pos::Noun, 100 * (i as u32 + 1))
}

/// Brute-force mining reference: per word keep the two most frequent codes
/// (ties by code), then count words with both sides at or above `min_side`.
pub fn mine(usages: &[(String, String)], min_side: usize, theta: usize) -> BTreeMap<(String, String), (usize, bool)> {
    let mut per_word: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (w, c) in usages {
        *per_word.entry(w).or_default().entry(c).or_default() += 1;
    }
    let mut pairs: BTreeMap<(String, String), usize> = BTreeMap::new();
    for counts in per_word.values() {
        let mut v: Vec<(&str, usize)> = counts.iter().map(|(c, n)| (*c, *n)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        if v.len() < 2 || v[0].1 < min_side || v[1].1 < min_side {
            continue;
        }
        let (a, b) = if v[0].0 < v[1].0 { (v[0].0, v[1].0) } else { (v[1].0, v[0].0) };
        *pairs.entry((a.to_string(), b.to_string())).or_default() += 1;
    }
    pairs.into_iter().map(|(k, n)| (k, (n, n >= theta))).collect()
}

pub fn usage(lemma: &str, code: &str, line: usize) -> RawUsage {
    RawUsage {
        tokens: vec!["they".into(), lemma.into(), "it".into()],
        target_index: 1,
        lemma: lemma.into(),
        pos: Pos::Verb,
        synset: None,
        object_index: Some(2),
        object_synset: None,
        meta_sense: Some(code.into()),
        line,
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}
