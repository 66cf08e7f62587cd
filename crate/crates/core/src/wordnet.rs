//! Princeton WordNet 3.0 database reader and hypernym taxonomy.
//!
//! Only the hypernym (`@`) and instance-hypernym (`@i`) pointers are kept.
//! All noun roots hang below a synthetic root so every pair of nouns has a
//! common subsumer. Depth is `1 + shortest hypernym path to the root`, with
//! the root itself at depth 1.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pos {
    Noun,
    Verb,
    Adj,
    Adv,
}

impl Pos {
    pub fn tag(self) -> char {
        match self {
            Pos::Noun => 'n',
            Pos::Verb => 'v',
            Pos::Adj => 'a',
            Pos::Adv => 'r',
        }
    }

    /// Parses a single-letter tag. Satellite adjectives (`s`) fold into `a`.
    pub fn from_tag(tag: &str) -> Option<Pos> {
        match tag {
            "n" => Some(Pos::Noun),
            "v" => Some(Pos::Verb),
            "a" | "s" => Some(Pos::Adj),
            "r" => Some(Pos::Adv),
            _ => None,
        }
    }

    fn file_suffix(self) -> &'static str {
        match self {
            Pos::Noun => "noun",
            Pos::Verb => "verb",
            Pos::Adj => "adj",
            Pos::Adv => "adv",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

/// A synset, addressed by its byte offset in `data.<pos>`.
///
/// Offset 0 never holds a record (the license header starts every file), so
/// it is reserved for the synthetic noun root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SynsetId {
    pub pos: Pos,
    pub offset: u32,
}

impl SynsetId {
    pub const VIRTUAL_ROOT: SynsetId = SynsetId {
        pos: Pos::Noun,
        offset: 0,
    };

    pub fn new(pos: Pos, offset: u32) -> Self {
        SynsetId { pos, offset }
    }
}

impl fmt::Display for SynsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08}-{}", self.offset, self.pos)
    }
}

impl FromStr for SynsetId {
    type Err = Error;

    /// Accepts `00021265-n`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("malformed synset id `{s}`"));
        let (off, pos) = s.rsplit_once('-').ok_or_else(bad)?;
        let pos = Pos::from_tag(pos).ok_or_else(bad)?;
        let offset = off.parse::<u32>().map_err(|_| bad())?;
        Ok(SynsetId { pos, offset })
    }
}

#[derive(Clone, Debug)]
struct Node {
    id: SynsetId,
    lemmas: Vec<String>,
    parents: Vec<u32>,
}

/// Immutable hypernym graph over all loaded synsets.
#[derive(Debug)]
pub struct Taxonomy {
    nodes: Vec<Node>,
    by_id: HashMap<SynsetId, u32>,
    depth: Vec<u32>,
    lemma_index: HashMap<(Pos, String), Vec<SynsetId>>,
}

const ROOT: u32 = 0;
const REQUIRED: [&str; 6] = [
    "data.noun",
    "data.verb",
    "data.adj",
    "index.noun",
    "index.verb",
    "index.adj",
];

struct RawSynset {
    id: SynsetId,
    lemmas: Vec<String>,
    hypernyms: Vec<SynsetId>,
}

fn parse_data(pos: Pos, text: &str, file: &str) -> Result<Vec<RawSynset>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with("  ") || line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let err = |msg: &str| Error::parse(file, lineno, msg);
        let body = line.split(" | ").next().unwrap_or(line);
        let f: Vec<&str> = body.split_ascii_whitespace().collect();
        if f.len() < 6 {
            return Err(err("truncated synset record"));
        }
        let offset: u32 = f[0].parse().map_err(|_| err("bad synset offset"))?;
        let ss_pos = Pos::from_tag(f[2]).ok_or_else(|| err("bad ss_type"))?;
        if ss_pos != pos {
            return Err(err("ss_type does not match file part of speech"));
        }
        let w_cnt = usize::from_str_radix(f[3], 16).map_err(|_| err("bad w_cnt"))?;
        let mut k = 4;
        let mut lemmas = Vec::with_capacity(w_cnt);
        for _ in 0..w_cnt {
            let word = f.get(k).ok_or_else(|| err("truncated word list"))?;
            lemmas.push(normalize_lemma(word));
            k += 2;
        }
        let p_cnt: usize = f
            .get(k)
            .ok_or_else(|| err("missing p_cnt"))?
            .parse()
            .map_err(|_| err("bad p_cnt"))?;
        k += 1;
        let mut hypernyms = Vec::new();
        for _ in 0..p_cnt {
            if k + 3 >= f.len() {
                return Err(err("truncated pointer list"));
            }
            let sym = f[k];
            let target: u32 = f[k + 1].parse().map_err(|_| err("bad pointer offset"))?;
            let tpos = Pos::from_tag(f[k + 2]).ok_or_else(|| err("bad pointer pos"))?;
            if (sym == "@" || sym == "@i") && tpos == pos {
                hypernyms.push(SynsetId::new(tpos, target));
            }
            k += 4;
        }
        out.push(RawSynset {
            id: SynsetId::new(pos, offset),
            lemmas,
            hypernyms,
        });
    }
    Ok(out)
}

fn parse_index(
    pos: Pos,
    text: &str,
    file: &str,
    into: &mut HashMap<(Pos, String), Vec<SynsetId>>,
) -> Result<()> {
    for (i, line) in text.lines().enumerate() {
        if line.starts_with("  ") || line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let err = |msg: &str| Error::parse(file, lineno, msg);
        let f: Vec<&str> = line.split_ascii_whitespace().collect();
        if f.len() < 6 {
            return Err(err("truncated index record"));
        }
        let synset_cnt: usize = f[2].parse().map_err(|_| err("bad synset_cnt"))?;
        if synset_cnt == 0 || f.len() < synset_cnt + 4 {
            return Err(err("bad synset list"));
        }
        let offsets = &f[f.len() - synset_cnt..];
        let mut ids = Vec::with_capacity(synset_cnt);
        for o in offsets {
            let off: u32 = o.parse().map_err(|_| err("bad synset offset"))?;
            ids.push(SynsetId::new(pos, off));
        }
        into.insert((pos, normalize_lemma(f[0])), ids);
    }
    Ok(())
}

/// Lowercases and strips adjective markers such as `(a)` / `(p)`.
pub fn normalize_lemma(word: &str) -> String {
    let w = match word.find('(') {
        Some(i) => &word[..i],
        None => word,
    };
    w.to_lowercase()
}

impl Taxonomy {
    /// Loads `data.*` and `index.*` files from a WordNet `dict/` directory.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let missing: Vec<String> = REQUIRED
            .iter()
            .filter(|f| !dir.join(f).is_file())
            .map(|f| f.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles {
                dir: dir.to_path_buf(),
                files: missing,
            });
        }
        let mut data = Vec::new();
        let mut index = Vec::new();
        for pos in [Pos::Noun, Pos::Verb, Pos::Adj, Pos::Adv] {
            let d = dir.join(format!("data.{}", pos.file_suffix()));
            let x = dir.join(format!("index.{}", pos.file_suffix()));
            if pos == Pos::Adv && !(d.is_file() && x.is_file()) {
                continue;
            }
            let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
            data.push((pos, read(&d)?, d.display().to_string()));
            index.push((pos, read(&x)?, x.display().to_string()));
        }
        let data_refs: Vec<(Pos, &str, &str)> = data
            .iter()
            .map(|(p, t, n)| (*p, t.as_str(), n.as_str()))
            .collect();
        let index_refs: Vec<(Pos, &str, &str)> = index
            .iter()
            .map(|(p, t, n)| (*p, t.as_str(), n.as_str()))
            .collect();
        Self::from_sources(&data_refs, &index_refs)
    }

    /// Builds a taxonomy from in-memory file contents, given as
    /// `(pos, contents, file name for error messages)`.
    pub fn from_sources(data: &[(Pos, &str, &str)], index: &[(Pos, &str, &str)]) -> Result<Self> {
        let mut raw = Vec::new();
        for (pos, text, name) in data {
            raw.extend(parse_data(*pos, text, name)?);
        }
        let mut lemma_index = HashMap::new();
        for (pos, text, name) in index {
            parse_index(*pos, text, name, &mut lemma_index)?;
        }

        let mut nodes = Vec::with_capacity(raw.len() + 1);
        nodes.push(Node {
            id: SynsetId::VIRTUAL_ROOT,
            lemmas: vec!["<root>".to_string()],
            parents: Vec::new(),
        });
        let mut by_id = HashMap::with_capacity(raw.len() + 1);
        by_id.insert(SynsetId::VIRTUAL_ROOT, ROOT);
        for r in &raw {
            if r.id.offset == 0 {
                return Err(Error::Data(format!("synset {} uses reserved offset 0", r.id)));
            }
            let ix = nodes.len() as u32;
            if by_id.insert(r.id, ix).is_some() {
                return Err(Error::Data(format!("duplicate synset {}", r.id)));
            }
            nodes.push(Node {
                id: r.id,
                lemmas: r.lemmas.clone(),
                parents: Vec::new(),
            });
        }
        for (i, r) in raw.iter().enumerate() {
            let ix = i + 1;
            let mut parents = Vec::with_capacity(r.hypernyms.len());
            for h in &r.hypernyms {
                let p = *by_id
                    .get(h)
                    .ok_or_else(|| Error::Data(format!("{} points to missing synset {}", r.id, h)))?;
                if !parents.contains(&p) {
                    parents.push(p);
                }
            }
            if parents.is_empty() && r.id.pos == Pos::Noun {
                parents.push(ROOT);
            }
            nodes[ix].parents = parents;
        }
        for ids in lemma_index.values() {
            for id in ids {
                if !by_id.contains_key(id) {
                    return Err(Error::Data(format!("index refers to missing synset {id}")));
                }
            }
        }
        for (child, parent) in break_cycles(&mut nodes) {
            log::warn!("hypernym cycle broken: dropped {child} -> {parent}");
        }
        let depth = compute_depths(&nodes)?;
        Ok(Taxonomy {
            nodes,
            by_id,
            depth,
            lemma_index,
        })
    }

    /// Number of real synsets (the synthetic root excluded).
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, pos: Pos) -> usize {
        self.nodes[1..].iter().filter(|n| n.id.pos == pos).count()
    }

    /// Number of hypernym edges between real synsets; attachments to the
    /// synthetic root are not counted.
    pub fn edge_count(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.parents.iter().filter(|&&p| p != ROOT).count())
            .sum()
    }

    pub fn contains(&self, s: SynsetId) -> bool {
        self.by_id.contains_key(&s)
    }

    pub fn virtual_root(&self) -> SynsetId {
        SynsetId::VIRTUAL_ROOT
    }

    pub fn synsets(&self) -> impl Iterator<Item = SynsetId> + '_ {
        self.nodes[1..].iter().map(|n| n.id)
    }

    pub fn lemmas(&self, s: SynsetId) -> Result<&[String]> {
        Ok(&self.nodes[self.ix(s)? as usize].lemmas)
    }

    pub fn hypernyms(&self, s: SynsetId) -> Result<Vec<SynsetId>> {
        let n = &self.nodes[self.ix(s)? as usize];
        Ok(n.parents.iter().map(|&p| self.nodes[p as usize].id).collect())
    }

    /// Synsets of `lemma` in sense-rank order.
    pub fn senses(&self, lemma: &str, pos: Pos) -> Option<&[SynsetId]> {
        self.lemma_index
            .get(&(pos, normalize_lemma(lemma)))
            .map(|v| v.as_slice())
    }

    /// Resolves a `lemma.pos.NN` sense key (1-based rank) or a `00012345-n` id.
    pub fn resolve(&self, key: &str) -> Result<SynsetId> {
        if let Ok(id) = key.parse::<SynsetId>() {
            return if self.contains(id) {
                Ok(id)
            } else {
                Err(Error::UnknownSynset(key.to_string()))
            };
        }
        let mut parts = key.rsplitn(3, '.');
        let (rank, pos, lemma) = match (parts.next(), parts.next(), parts.next()) {
            (Some(r), Some(p), Some(l)) => (r, p, l),
            _ => return Err(Error::UnknownSynset(key.to_string())),
        };
        let pos = Pos::from_tag(pos).ok_or_else(|| Error::UnknownSynset(key.to_string()))?;
        let rank: usize = rank
            .parse()
            .map_err(|_| Error::UnknownSynset(key.to_string()))?;
        self.senses(lemma, pos)
            .and_then(|s| rank.checked_sub(1).and_then(|r| s.get(r)))
            .copied()
            .ok_or_else(|| Error::UnknownSynset(key.to_string()))
    }

    fn ix(&self, s: SynsetId) -> Result<u32> {
        self.by_id
            .get(&s)
            .copied()
            .ok_or_else(|| Error::UnknownSynset(s.to_string()))
    }

    pub fn depth(&self, s: SynsetId) -> Result<u32> {
        Ok(self.depth[self.ix(s)? as usize])
    }

    /// Every ancestor of `s` (itself included) with its shortest upward
    /// distance, in breadth-first order.
    pub fn ancestors(&self, s: SynsetId) -> Result<Vec<(SynsetId, u32)>> {
        Ok(self
            .ancestors_ix(self.ix(s)?)
            .into_iter()
            .map(|(i, d)| (self.nodes[i as usize].id, d))
            .collect())
    }

    fn ancestors_ix(&self, start: u32) -> Vec<(u32, u32)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut q = VecDeque::new();
        seen.insert(start);
        q.push_back((start, 0));
        while let Some((x, d)) = q.pop_front() {
            out.push((x, d));
            for &p in &self.nodes[x as usize].parents {
                if seen.insert(p) {
                    q.push_back((p, d + 1));
                }
            }
        }
        out
    }

    /// Deepest of the lowest common subsumers (those that are not a strict
    /// ancestor of another common subsumer); equal depths resolve to the
    /// smaller offset. Restricting to lowest subsumers keeps `lcs(s, s) == s`
    /// when an ancestor has a larger minimum depth than `s` itself.
    pub fn lcs(&self, a: SynsetId, b: SynsetId) -> Result<SynsetId> {
        if a.pos != b.pos {
            return Err(Error::NoCommonSubsumer(a.to_string(), b.to_string()));
        }
        let (ia, ib) = (self.ix(a)?, self.ix(b)?);
        let up_a: HashSet<u32> = self.ancestors_ix(ia).into_iter().map(|(i, _)| i).collect();
        let common: Vec<u32> = self
            .ancestors_ix(ib)
            .into_iter()
            .map(|(i, _)| i)
            .filter(|i| up_a.contains(i))
            .collect();
        let mut above = HashSet::new();
        for &c in &common {
            above.extend(self.ancestors_ix(c).into_iter().skip(1).map(|(i, _)| i));
        }
        common
            .into_iter()
            .filter(|i| !above.contains(i))
            .max_by(|&x, &y| {
                self.depth[x as usize]
                    .cmp(&self.depth[y as usize])
                    .then(self.nodes[y as usize].id.offset.cmp(&self.nodes[x as usize].id.offset))
            })
            .map(|i| self.nodes[i as usize].id)
            .ok_or_else(|| Error::NoCommonSubsumer(a.to_string(), b.to_string()))
    }

    /// `2 * depth(lcs) / (depth(a) + depth(b))`.
    pub fn wu_palmer(&self, a: SynsetId, b: SynsetId) -> Result<f64> {
        let l = self.lcs(a, b)?;
        let dl = self.depth(l)? as f64;
        Ok(2.0 * dl / (self.depth(a)? as f64 + self.depth(b)? as f64))
    }

    /// Shortest path length between `a` and `b` through any common subsumer.
    pub fn path_distance(&self, a: SynsetId, b: SynsetId) -> Result<u32> {
        let up_a: HashMap<u32, u32> = self.ancestors_ix(self.ix(a)?).into_iter().collect();
        self.ancestors_ix(self.ix(b)?)
            .into_iter()
            .filter_map(|(i, db)| up_a.get(&i).map(|da| da + db))
            .min()
            .ok_or_else(|| Error::NoCommonSubsumer(a.to_string(), b.to_string()))
    }

    pub(crate) fn index_of(&self, s: SynsetId) -> Option<usize> {
        self.by_id.get(&s).map(|&i| i as usize)
    }

    pub(crate) fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Nodes that Kahn's algorithm cannot order: members of a cycle and their
/// descendants.
fn unordered(nodes: &[Node]) -> Vec<bool> {
    let n = nodes.len();
    let mut children: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut pending: Vec<usize> = nodes.iter().map(|x| x.parents.len()).collect();
    for (i, node) in nodes.iter().enumerate() {
        for &p in &node.parents {
            children[p as usize].push(i as u32);
        }
    }
    let mut q: VecDeque<u32> = (0..n as u32).filter(|&i| pending[i as usize] == 0).collect();
    while let Some(x) = q.pop_front() {
        for &c in &children[x as usize] {
            pending[c as usize] -= 1;
            if pending[c as usize] == 0 {
                q.push_back(c);
            }
        }
    }
    pending.into_iter().map(|p| p > 0).collect()
}

/// Breaks verb and adjective hypernym cycles (WordNet 3.0 has one between
/// `restrain` and `inhibit`) by dropping, per cycle, the in-cycle edge out of
/// the member with the smallest id. Noun cycles are left for
/// [`compute_depths`] to reject.
fn break_cycles(nodes: &mut [Node]) -> Vec<(SynsetId, SynsetId)> {
    let mut cut = Vec::new();
    loop {
        let stuck = unordered(nodes);
        let Some(start) = (0..nodes.len()).filter(|&i| stuck[i]).min_by_key(|&i| nodes[i].id) else {
            return cut;
        };
        let mut walk = vec![start];
        let cycle = loop {
            let cur = *walk.last().expect("non-empty");
            let next = nodes[cur]
                .parents
                .iter()
                .map(|&p| p as usize)
                .find(|&p| stuck[p])
                .expect("an unordered node has an unordered parent");
            if let Some(at) = walk.iter().position(|&w| w == next) {
                break walk[at..].to_vec();
            }
            walk.push(next);
        };
        if cycle.iter().any(|&i| nodes[i].id.pos == Pos::Noun) {
            return cut;
        }
        let k = (0..cycle.len()).min_by_key(|&k| nodes[cycle[k]].id).expect("non-empty");
        let (c, succ) = (cycle[k], cycle[(k + 1) % cycle.len()]);
        nodes[c].parents.retain(|&p| p as usize != succ);
        cut.push((nodes[c].id, nodes[succ].id));
    }
}

/// Minimum-path depths via Kahn's algorithm; fails on a hypernym cycle.
fn compute_depths(nodes: &[Node]) -> Result<Vec<u32>> {
    let n = nodes.len();
    let mut children: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut pending: Vec<usize> = vec![0; n];
    for (i, node) in nodes.iter().enumerate() {
        pending[i] = node.parents.len();
        for &p in &node.parents {
            children[p as usize].push(i as u32);
        }
    }
    let mut depth = vec![u32::MAX; n];
    let mut q: VecDeque<u32> = (0..n as u32).filter(|&i| pending[i as usize] == 0).collect();
    for &r in &q {
        depth[r as usize] = 1;
    }
    let mut done = 0;
    while let Some(x) = q.pop_front() {
        done += 1;
        let dx = depth[x as usize];
        for &c in &children[x as usize] {
            let c = c as usize;
            depth[c] = depth[c].min(dx + 1);
            pending[c] -= 1;
            if pending[c] == 0 {
                q.push_back(c as u32);
            }
        }
    }
    if done != n {
        let stuck = nodes
            .iter()
            .zip(&pending)
            .find(|(_, &p)| p > 0)
            .map(|(n, _)| n.id.to_string())
            .unwrap_or_default();
        return Err(Error::Data(format!("hypernym cycle through {stuck}")));
    }
    Ok(depth)
}

#[cfg(test)]
pub(crate) mod fixture {
    use super::*;

    /// Five noun synsets: `entity` at the top, `object` and `idea` below it,
    /// `stone` and `pebble` below `object`.
    pub const DATA_NOUN: &str = concat!(
        "  1 This is a license header line\n",
        "  2 with two leading spaces\n",
        "00000100 03 n 01 entity 0 000 | top\n",
        "00000200 03 n 01 object 0 001 @ 00000100 n 0000 | thing\n",
        "00000300 03 n 01 idea 0 001 @ 00000100 n 0000 | thought\n",
        "00000400 03 n 02 stone 0 rock 0 001 @ 00000200 n 0000 | hard\n",
        "00000500 03 n 01 pebble 0 002 @i 00000200 n 0000 ~ 00000100 n 0000 | small stone\n",
    );

    pub const INDEX_NOUN: &str = concat!(
        "  1 license\n",
        "entity n 1 0 1 0 00000100  \n",
        "object n 1 1 @ 1 0 00000200  \n",
        "idea n 1 1 @ 1 0 00000300  \n",
        "stone n 1 1 @ 1 0 00000400  \n",
        "rock n 1 1 @ 1 0 00000400  \n",
        "pebble n 1 1 @ 1 0 00000500  \n",
    );

    pub fn taxonomy() -> Taxonomy {
        Taxonomy::from_sources(
            &[(Pos::Noun, DATA_NOUN, "data.noun")],
            &[(Pos::Noun, INDEX_NOUN, "index.noun")],
        )
        .unwrap()
    }

    pub fn id(off: u32) -> SynsetId {
        SynsetId::new(Pos::Noun, off)
    }
}
