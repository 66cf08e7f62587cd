//! CoreLex meta-sense inventory and synset-to-meta-sense mapping.
//!
//! A synset maps to the meta-sense whose anchor is nearest along the hypernym
//! graph: the shortest path through any common subsumer. Equal distances go
//! to the higher Wu-Palmer similarity, then to the alphabetically first code.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use crate::corpus::RawUsage;
use crate::error::{Error, Result};
use crate::wordnet::{Pos, SynsetId, Taxonomy};

/// The inventory table shipped with the crate: code, name, anchor lemma, sense rank.
pub const DEFAULT_TABLE: &str = include_str!("../data/corelex.tsv");

pub const INVENTORY_SIZE: usize = 39;

/// Tie-break rule, written into mapping outputs.
pub const TIE_BREAK: &str = "min_path_distance>max_wu_palmer>code_order";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaSense {
    pub code: String,
    pub name: String,
    pub anchor: SynsetId,
}

/// One row of the inventory table, before anchor resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnchorRule {
    pub code: String,
    pub name: String,
    pub lemma: String,
    pub sense_rank: usize,
}

#[derive(Clone, Debug)]
pub struct MetaSenseInventory {
    entries: Vec<MetaSense>,
    rules: Vec<AnchorRule>,
    by_code: HashMap<String, usize>,
}

pub fn parse_table(text: &str) -> Result<Vec<AnchorRule>> {
    let mut rules = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::parse("inventory", i + 1, "expected 4 tab-separated fields"));
        }
        let sense_rank = f[3]
            .parse::<usize>()
            .ok()
            .filter(|&r| r >= 1)
            .ok_or_else(|| Error::parse("inventory", i + 1, "sense rank must be a positive integer"))?;
        rules.push(AnchorRule {
            code: f[0].to_string(),
            name: f[1].to_string(),
            lemma: f[2].to_string(),
            sense_rank,
        });
    }
    Ok(rules)
}

impl MetaSenseInventory {
    /// Resolves the shipped 39-entry table against `tax`.
    pub fn load(tax: &Taxonomy) -> Result<Self> {
        Self::from_table(tax, DEFAULT_TABLE)
    }

    pub fn load_file(tax: &Taxonomy, path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Self::from_table(tax, &text)
    }

    /// Full inventory: exactly 39 entries.
    pub fn from_table(tax: &Taxonomy, text: &str) -> Result<Self> {
        let rules = parse_table(text)?;
        if rules.len() != INVENTORY_SIZE {
            return Err(Error::config(
                "inventory",
                format!("expected {INVENTORY_SIZE} meta-senses, found {}", rules.len()),
            ));
        }
        Self::from_rules(tax, rules)
    }

    /// Any non-empty set of rules; codes and anchors must be unique.
    pub fn from_rules(tax: &Taxonomy, rules: Vec<AnchorRule>) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::config("inventory", "no meta-senses"));
        }
        let mut by_code = HashMap::new();
        let mut anchors = HashSet::new();
        let mut entries = Vec::with_capacity(rules.len());
        for (i, r) in rules.iter().enumerate() {
            if by_code.insert(r.code.clone(), i).is_some() {
                return Err(Error::config("inventory", format!("duplicate code `{}`", r.code)));
            }
            let anchor = tax
                .senses(&r.lemma, Pos::Noun)
                .and_then(|s| s.get(r.sense_rank - 1))
                .copied()
                .ok_or_else(|| {
                    Error::config(
                        "inventory",
                        format!("cannot resolve anchor {}.n.{:02} for `{}`", r.lemma, r.sense_rank, r.code),
                    )
                })?;
            if !anchors.insert(anchor) {
                return Err(Error::config("inventory", format!("anchor {anchor} used twice")));
            }
            entries.push(MetaSense {
                code: r.code.clone(),
                name: r.name.clone(),
                anchor,
            });
        }
        // Code order is the final tie-break, so keep entries sorted by code.
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by(|&a, &b| entries[a].code.cmp(&entries[b].code));
        let entries: Vec<MetaSense> = order.iter().map(|&i| entries[i].clone()).collect();
        let rules: Vec<AnchorRule> = order.iter().map(|&i| rules[i].clone()).collect();
        let by_code = entries
            .iter()
            .enumerate()
            .map(|(i, m)| (m.code.clone(), i))
            .collect();
        Ok(MetaSenseInventory {
            entries,
            rules,
            by_code,
        })
    }

    pub fn entries(&self) -> &[MetaSense] {
        &self.entries
    }

    pub fn rules(&self) -> &[AnchorRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, code: &str) -> Option<&MetaSense> {
        self.by_code.get(code).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, code: &str) -> bool {
        self.by_code.contains_key(code)
    }
}

/// Result of mapping one synset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mapping {
    /// Index into [`MetaSenseInventory::entries`].
    pub index: usize,
    pub distance: u32,
    /// Whether another anchor sat at the same distance.
    pub tied: bool,
}

/// Maps noun synsets to meta-senses, memoizing results.
///
/// The cache is a write-once slot per synset, so concurrent readers never
/// observe a partially written value.
pub struct MetaSenseMapper {
    tax: Arc<Taxonomy>,
    inv: MetaSenseInventory,
    anchor_up: Vec<HashMap<SynsetId, u32>>,
    cache: Vec<OnceLock<Mapping>>,
}

impl MetaSenseMapper {
    pub fn new(tax: Arc<Taxonomy>, inv: MetaSenseInventory) -> Result<Self> {
        let mut anchor_up = Vec::with_capacity(inv.len());
        for m in inv.entries() {
            anchor_up.push(tax.ancestors(m.anchor)?.into_iter().collect());
        }
        let cache = (0..tax.node_count()).map(|_| OnceLock::new()).collect();
        Ok(MetaSenseMapper {
            tax,
            inv,
            anchor_up,
            cache,
        })
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.tax
    }

    pub fn inventory(&self) -> &MetaSenseInventory {
        &self.inv
    }

    pub fn map_synset(&self, s: SynsetId) -> Result<&MetaSense> {
        self.mapping(s).map(|m| &self.inv.entries[m.index])
    }

    pub fn mapping(&self, s: SynsetId) -> Result<Mapping> {
        if s.pos != Pos::Noun {
            return Err(Error::Contract(format!("meta-senses are defined for nouns only, got {s}")));
        }
        let ix = self
            .tax
            .index_of(s)
            .ok_or_else(|| Error::UnknownSynset(s.to_string()))?;
        if let Some(m) = self.cache[ix].get() {
            return Ok(*m);
        }
        let m = self.compute(s)?;
        Ok(*self.cache[ix].get_or_init(|| m))
    }

    fn compute(&self, s: SynsetId) -> Result<Mapping> {
        let up = self.tax.ancestors(s)?;
        let mut dists = Vec::with_capacity(self.anchor_up.len());
        for a in &self.anchor_up {
            let d = up
                .iter()
                .filter_map(|(x, ds)| a.get(x).map(|da| da + ds))
                .min()
                .ok_or_else(|| Error::NoCommonSubsumer(s.to_string(), "anchor".into()))?;
            dists.push(d);
        }
        let best = *dists.iter().min().expect("inventory is non-empty");
        let tied: Vec<usize> = (0..dists.len()).filter(|&i| dists[i] == best).collect();
        if tied.len() == 1 {
            return Ok(Mapping {
                index: tied[0],
                distance: best,
                tied: false,
            });
        }
        let mut pick = tied[0];
        let mut pick_wup = self.tax.wu_palmer(s, self.inv.entries[pick].anchor)?;
        for &i in &tied[1..] {
            let w = self.tax.wu_palmer(s, self.inv.entries[i].anchor)?;
            // Entries are code-sorted, so strict `>` keeps the earlier code.
            if w > pick_wup {
                pick = i;
                pick_wup = w;
            }
        }
        Ok(Mapping {
            index: pick,
            distance: best,
            tied: true,
        })
    }
}

/// A usage labeled with a meta-sense code.
pub trait Labeler {
    fn label(&self, usage: &RawUsage) -> Result<String>;

    fn is_code(&self, code: &str) -> bool;
}

impl Labeler for MetaSenseMapper {
    fn label(&self, usage: &RawUsage) -> Result<String> {
        label_usage(self, usage).map(|m| m.code.clone())
    }

    fn is_code(&self, code: &str) -> bool {
        self.inv.contains(code)
    }
}

/// Assigns the meta-sense of a noun target's own synset, or of the object
/// noun governed by a verb or adjective target.
pub fn label_usage<'m>(mapper: &'m MetaSenseMapper, usage: &RawUsage) -> Result<&'m MetaSense> {
    let tax = mapper.taxonomy();
    let key = match usage.pos {
        Pos::Noun => usage
            .synset
            .as_deref()
            .ok_or_else(|| Error::Skip("noun usage without synset".into()))?,
        Pos::Verb | Pos::Adj => {
            if usage.object_index.is_none() {
                return Err(Error::Skip(format!("{} usage without object_index", usage.pos)));
            }
            usage
                .object_synset
                .as_deref()
                .ok_or_else(|| Error::Skip(format!("{} usage without object_synset", usage.pos)))?
        }
        Pos::Adv => return Err(Error::Skip("adverb targets are not labeled".into())),
    };
    let s = tax.resolve(key).map_err(|e| Error::Skip(e.to_string()))?;
    if s.pos != Pos::Noun {
        return Err(Error::Skip(format!("object synset {s} is not a noun")));
    }
    mapper.map_synset(s)
}

/// Labels taken verbatim from each record's `meta_sense` field, validated
/// against a fixed code set. Used for generated corpora.
pub struct Prelabeled {
    codes: HashSet<String>,
}

impl Prelabeled {
    pub fn new<I, S>(codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Prelabeled {
            codes: codes.into_iter().map(Into::into).collect(),
        }
    }

    /// Accepts the 39 codes of the shipped table.
    pub fn corelex() -> Self {
        let rules = parse_table(DEFAULT_TABLE).expect("shipped table parses");
        Prelabeled::new(rules.into_iter().map(|r| r.code))
    }
}

impl Labeler for Prelabeled {
    fn label(&self, usage: &RawUsage) -> Result<String> {
        if matches!(usage.pos, Pos::Verb | Pos::Adj) && usage.object_index.is_none() {
            return Err(Error::Skip(format!("{} usage without object_index", usage.pos)));
        }
        let code = usage
            .meta_sense
            .as_deref()
            .ok_or_else(|| Error::Skip("record has no meta_sense label".into()))?;
        if !self.codes.contains(code) {
            return Err(Error::Skip(format!("unknown meta-sense `{code}`")));
        }
        Ok(code.to_string())
    }

    fn is_code(&self, code: &str) -> bool {
        self.codes.contains(code)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wordnet::fixture;

    fn rules(spec: &[(&str, &str)]) -> Vec<AnchorRule> {
        spec.iter()
            .map(|(code, lemma)| AnchorRule {
                code: code.to_string(),
                name: code.to_uppercase(),
                lemma: lemma.to_string(),
                sense_rank: 1,
            })
            .collect()
    }

    fn mapper() -> MetaSenseMapper {
        let tax = Arc::new(fixture::taxonomy());
        let inv = MetaSenseInventory::from_rules(&tax, rules(&[("obj", "object"), ("ide", "idea")])).unwrap();
        MetaSenseMapper::new(tax, inv).unwrap()
    }

    #[test]
    fn duplicate_code_is_rejected() {
        let tax = fixture::taxonomy();
        let err = MetaSenseInventory::from_rules(&tax, rules(&[("obj", "object"), ("obj", "idea")])).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn unresolvable_anchor_is_fatal() {
        let tax = fixture::taxonomy();
        let err = MetaSenseInventory::from_rules(&tax, rules(&[("xyz", "nothing")])).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn shipped_table_needs_39_entries() {
        let tax = fixture::taxonomy();
        let short = "obj\tOBJECT\tobject\t1\n";
        assert!(matches!(
            MetaSenseInventory::from_table(&tax, short),
            Err(Error::Config { .. })
        ));
        assert_eq!(parse_table(DEFAULT_TABLE).unwrap().len(), INVENTORY_SIZE);
    }

    #[test]
    fn anchors_are_fixpoints_and_descendants_follow() {
        let m = mapper();
        assert_eq!(m.map_synset(fixture::id(200)).unwrap().code, "obj");
        assert_eq!(m.map_synset(fixture::id(300)).unwrap().code, "ide");
        assert_eq!(m.map_synset(fixture::id(500)).unwrap().code, "obj");
        assert_eq!(m.mapping(fixture::id(400)).unwrap().distance, 1);
    }

    #[test]
    fn equidistant_entity_resolves_deterministically() {
        let m = mapper();
        // entity is one edge from both anchors with equal Wu-Palmer; code order wins.
        let got = m.mapping(fixture::id(100)).unwrap();
        assert!(got.tied);
        assert_eq!(m.inventory().entries()[got.index].code, "ide");
        assert_eq!(m.mapping(fixture::id(100)).unwrap(), got);
    }

    #[test]
    fn non_noun_input_is_a_contract_error() {
        let m = mapper();
        let err = m.map_synset(SynsetId::new(Pos::Verb, 100)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    fn usage(pos: Pos, synset: Option<&str>, obj: Option<(usize, &str)>) -> RawUsage {
        RawUsage {
            tokens: vec!["they".into(), "grasp".into(), "the".into(), "stone".into()],
            target_index: 1,
            lemma: "grasp".into(),
            pos,
            synset: synset.map(String::from),
            object_index: obj.map(|o| o.0),
            object_synset: obj.map(|o| o.1.to_string()),
            meta_sense: None,
            line: 1,
        }
    }

    #[test]
    fn verb_takes_its_object_label() {
        let m = mapper();
        let u = usage(Pos::Verb, None, Some((3, "stone.n.01")));
        assert_eq!(label_usage(&m, &u).unwrap().code, "obj");
        let u = usage(Pos::Adj, None, Some((3, "00000300-n")));
        assert_eq!(label_usage(&m, &u).unwrap().code, "ide");
    }

    #[test]
    fn verb_without_object_is_skipped() {
        let m = mapper();
        let u = usage(Pos::Verb, Some("00000100-n"), None);
        assert!(matches!(label_usage(&m, &u), Err(Error::Skip(_))));
    }

    #[test]
    fn noun_anchor_usage_maps_to_anchor() {
        let m = mapper();
        let u = usage(Pos::Noun, Some("idea.n.01"), None);
        assert_eq!(label_usage(&m, &u).unwrap().code, "ide");
    }

    #[test]
    fn prelabeled_validates_codes() {
        let p = Prelabeled::new(["art", "atr"]);
        let mut u = usage(Pos::Verb, None, Some((3, "x")));
        u.meta_sense = Some("art".into());
        assert_eq!(p.label(&u).unwrap(), "art");
        u.meta_sense = Some("zzz".into());
        assert!(matches!(p.label(&u), Err(Error::Skip(_))));
    }
}
