//! Deterministic template corpora with planted meta-sense alternations.
//!
//! Every target is a verb whose object noun is drawn from the noun class of
//! the usage's meta-sense. Each lemma has a signature (preferred subjects and
//! adverbs) shared by all of its usages, so its two partitioned tokens can be
//! linked through context alone. The contiguity of an alternation is the
//! probability that a modifier slot is filled from a pool shared by both of
//! its sides rather than from the side's own class pool.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RawUsage;
use crate::error::{Error, Result};
use crate::mining::MiningConfig;
use crate::wordnet::Pos;

/// CoreLex codes used for generated meta-senses, in assignment order.
pub const SYNTH_CODES: [&str; 16] = [
    "art", "atr", "com", "evt", "loc", "psy", "sub", "tme", "act", "anm", "fod", "hum", "plt",
    "pro", "sta", "grs",
];

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "gl",
];
const NUCLEI: [&str; 6] = ["a", "e", "i", "o", "u", "oo"];
const CODAS: [&str; 8] = ["mph", "nk", "sh", "rt", "ll", "x", "ck", "nd"];
const PARTICLES: [&str; 3] = ["at", "up", "off"];
const PREPS: [&str; 4] = ["in", "with", "near", "for"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_meta_senses: usize,
    pub n_alternations: usize,
    pub instantiations: usize,
    pub usages_per_side: usize,
    /// One value in [0, 1] per alternation. Empty means alternating 1.0, 0.0.
    pub contiguity: Vec<f64>,
    /// Single-meta-sense lemmas, each with `2 * usages_per_side` usages.
    pub distractor_lemmas: usize,
    /// Two-sense lemmas on unplanted pairs, kept below the planted count.
    pub noise_lemmas: usize,
    /// Every n-th planted lemma also gets a minor third meta-sense (0 = never).
    pub third_sense_every: usize,
    pub third_sense_usages: usize,
    /// Every n-th lemma is a two-token phrasal verb (0 = never).
    pub phrasal_every: usize,
    /// Probability that a subject or adverb slot uses the lemma's signature.
    pub signature_strength: f64,
    pub n_subjects: usize,
    pub n_adverbs: usize,
    pub nouns_per_class: usize,
    pub modifiers_per_pool: usize,
    /// Maximum number of distinct target lemmas the generator may coin.
    pub lexicon_budget: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_meta_senses: 8,
            n_alternations: 6,
            instantiations: 50,
            usages_per_side: 12,
            contiguity: Vec::new(),
            distractor_lemmas: 40,
            noise_lemmas: 20,
            third_sense_every: 5,
            third_sense_usages: 3,
            phrasal_every: 7,
            signature_strength: 0.85,
            n_subjects: 40,
            n_adverbs: 40,
            nouns_per_class: 12,
            modifiers_per_pool: 10,
            lexicon_budget: 4096,
        }
    }
}

impl SynthConfig {
    pub fn contiguity_of(&self, alt: usize) -> f64 {
        if self.contiguity.is_empty() {
            if alt.is_multiple_of(2) {
                1.0
            } else {
                0.0
            }
        } else {
            self.contiguity[alt]
        }
    }

    /// Thresholds under which mining recovers exactly the planted set.
    pub fn scaled_mining(&self) -> MiningConfig {
        MiningConfig {
            theta: self.instantiations.max(1),
            min_usages_per_side: self.usages_per_side.max(1),
            top_k: self.instantiations.max(1),
        }
    }

    pub fn lemma_demand(&self) -> usize {
        self.n_alternations * self.instantiations + self.distractor_lemmas + self.noise_lemmas
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_meta_senses;
        if !(2..=SYNTH_CODES.len()).contains(&n) {
            return Err(Error::config(
                "synth.n_meta_senses",
                format!("must be in 2..={}", SYNTH_CODES.len()),
            ));
        }
        if self.n_alternations > n * (n - 1) / 2 {
            return Err(Error::config(
                "synth.n_alternations",
                format!("at most {} pairs exist over {n} meta-senses", n * (n - 1) / 2),
            ));
        }
        if self.n_alternations > 0 && self.instantiations == 0 {
            return Err(Error::config("synth.instantiations", "must be positive"));
        }
        if self.usages_per_side == 0 {
            return Err(Error::config("synth.usages_per_side", "must be positive"));
        }
        if !self.contiguity.is_empty() && self.contiguity.len() != self.n_alternations {
            return Err(Error::config(
                "synth.contiguity",
                "needs one value per alternation or none",
            ));
        }
        if self.contiguity.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::config("synth.contiguity", "values must lie in [0, 1]"));
        }
        if self.third_sense_every > 0 && self.third_sense_usages >= self.usages_per_side {
            return Err(Error::config(
                "synth.third_sense_usages",
                "must stay below usages_per_side",
            ));
        }
        if !(0.0..=1.0).contains(&self.signature_strength) {
            return Err(Error::config("synth.signature_strength", "must lie in [0, 1]"));
        }
        for (field, v) in [
            ("synth.n_subjects", self.n_subjects),
            ("synth.n_adverbs", self.n_adverbs),
            ("synth.nouns_per_class", self.nouns_per_class),
            ("synth.modifiers_per_pool", self.modifiers_per_pool),
        ] {
            if v < 2 {
                return Err(Error::config(field, "must be at least 2"));
            }
        }
        let capacity = (ONSETS.len() * NUCLEI.len()).pow(2) * CODAS.len();
        let budget = self.lexicon_budget.min(capacity);
        if self.lemma_demand() > budget {
            return Err(Error::config(
                "synth.instantiations",
                format!(
                    "{} target lemmas requested but the lexicon budget is {budget}",
                    self.lemma_demand()
                ),
            ));
        }
        Ok(())
    }
}

/// One planted alternation of the ground-truth table.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedAlternation {
    pub code1: String,
    pub code2: String,
    pub contiguity: f64,
    pub lemmas: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub usages: Vec<RawUsage>,
    pub truth: Vec<PlantedAlternation>,
}

/// All unordered pairs in a spread-out order: a perfect matching first, then
/// the pairs linking consecutive matched pairs, then the rest.
pub fn pair_order(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |a: usize, b: usize, out: &mut Vec<(usize, usize)>| {
        if a < b && b < n && seen.insert((a, b)) {
            out.push((a, b));
        }
    };
    for i in (0..n).step_by(2) {
        push(i, i + 1, &mut out);
    }
    for i in (1..n).step_by(2) {
        push(i, i + 1, &mut out);
    }
    for a in 0..n {
        for b in a + 1..n {
            push(a, b, &mut out);
        }
    }
    out
}

struct Lexicon {
    subjects: Vec<String>,
    adverbs: Vec<String>,
    nouns: Vec<Vec<String>>,
    class_mods: Vec<Vec<String>>,
    class_pps: Vec<Vec<String>>,
    shared_mods: Vec<Vec<String>>,
    shared_pps: Vec<Vec<String>>,
}

struct Signature {
    subjects: [usize; 2],
    adverbs: [usize; 2],
    particle: Option<&'static str>,
}

fn coin(i: usize) -> String {
    let syl = ONSETS.len() * NUCLEI.len();
    let a = i % syl;
    let b = (i / syl) % syl;
    let c = (i / (syl * syl)) % CODAS.len();
    format!(
        "{}{}{}{}{}",
        ONSETS[a % ONSETS.len()],
        NUCLEI[a / ONSETS.len()],
        ONSETS[b % ONSETS.len()],
        NUCLEI[b / ONSETS.len()],
        CODAS[c]
    )
}

fn pool(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

struct Gen<'a> {
    cfg: &'a SynthConfig,
    lex: Lexicon,
    codes: Vec<&'static str>,
    rng: ChaCha8Rng,
    out: Vec<RawUsage>,
}

impl Gen<'_> {
    fn signature(&mut self, phrasal: bool) -> Signature {
        let pick2 = |rng: &mut ChaCha8Rng, n: usize| {
            let v = rand::seq::index::sample(rng, n, 2);
            [v.index(0), v.index(1)]
        };
        Signature {
            subjects: pick2(&mut self.rng, self.cfg.n_subjects),
            adverbs: pick2(&mut self.rng, self.cfg.n_adverbs),
            particle: phrasal.then(|| *PARTICLES.choose(&mut self.rng).unwrap()),
        }
    }

    /// `shared` is the alternation whose pools are mixed in with probability
    /// `contiguity`.
    fn sentence(&mut self, verb: &str, sig: &Signature, class: usize, shared: Option<(usize, f64)>) {
        let cfg = self.cfg;
        let rng = &mut self.rng;
        let subj = if rng.random_bool(cfg.signature_strength) {
            &self.lex.subjects[sig.subjects[rng.random_range(0..2)]]
        } else {
            self.lex.subjects.choose(rng).unwrap()
        };
        let adv = if rng.random_bool(cfg.signature_strength) {
            &self.lex.adverbs[sig.adverbs[rng.random_range(0..2)]]
        } else {
            self.lex.adverbs.choose(rng).unwrap()
        };
        let slot = |own: &Vec<String>, sh: Option<&Vec<String>>, rng: &mut ChaCha8Rng| -> String {
            match (sh, shared) {
                (Some(p), Some((_, c))) if rng.random_bool(c) => p.choose(rng).unwrap().clone(),
                _ => own.choose(rng).unwrap().clone(),
            }
        };
        let shared_mods = shared.map(|(a, _)| &self.lex.shared_mods[a]);
        let shared_pps = shared.map(|(a, _)| &self.lex.shared_pps[a]);
        let adj = slot(&self.lex.class_mods[class], shared_mods, rng);
        let obj = self.lex.nouns[class].choose(rng).unwrap().clone();
        let prep = PREPS.choose(rng).unwrap().to_string();
        let ppn = slot(&self.lex.class_pps[class], shared_pps, rng);

        let mut tokens = vec!["the".to_string(), subj.clone(), adv.clone()];
        let mut lemma = verb.to_string();
        tokens.push(verb.to_string());
        if let Some(p) = sig.particle {
            tokens.push(p.to_string());
            lemma = format!("{verb}_{p}");
        }
        tokens.push("the".into());
        tokens.push(adj);
        let object_index = tokens.len();
        tokens.push(obj);
        tokens.push(prep);
        tokens.push(ppn);
        self.out.push(RawUsage {
            tokens,
            target_index: 3,
            lemma,
            pos: Pos::Verb,
            synset: None,
            object_index: Some(object_index),
            object_synset: None,
            meta_sense: Some(self.codes[class].to_string()),
            line: 0,
        });
    }
}

/// Generates the corpus and its ground-truth table. Output depends only on
/// `(cfg, seed)`.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    cfg.validate()?;
    let n = cfg.n_meta_senses;
    let codes: Vec<&'static str> = SYNTH_CODES[..n].to_vec();
    let pairs = pair_order(n);
    let planted = &pairs[..cfg.n_alternations];
    let lex = Lexicon {
        subjects: pool("subj", cfg.n_subjects),
        adverbs: pool("adv", cfg.n_adverbs),
        nouns: codes.iter().map(|c| pool(&format!("{c}_n"), cfg.nouns_per_class)).collect(),
        class_mods: codes.iter().map(|c| pool(&format!("{c}_mod"), cfg.modifiers_per_pool)).collect(),
        class_pps: codes.iter().map(|c| pool(&format!("{c}_pp"), cfg.modifiers_per_pool)).collect(),
        shared_mods: (0..cfg.n_alternations)
            .map(|a| pool(&format!("alt{a}_mod"), cfg.modifiers_per_pool))
            .collect(),
        shared_pps: (0..cfg.n_alternations)
            .map(|a| pool(&format!("alt{a}_pp"), cfg.modifiers_per_pool))
            .collect(),
    };
    let mut g = Gen {
        cfg,
        lex,
        codes: codes.clone(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        out: Vec::new(),
    };

    // Coin names from a seeded permutation of the name space.
    let capacity = (ONSETS.len() * NUCLEI.len()).pow(2) * CODAS.len();
    let mut name_ids: Vec<usize> = (0..capacity).collect();
    name_ids.shuffle(&mut g.rng);
    let mut names = name_ids.into_iter().map(coin);
    let mut lemma_no = 0usize;
    let mut next_lemma = |g: &mut Gen| {
        lemma_no += 1;
        let phrasal = cfg.phrasal_every > 0 && lemma_no.is_multiple_of(cfg.phrasal_every);
        let verb = names.next().expect("budget checked");
        let sig = g.signature(phrasal);
        (verb, sig)
    };

    let mut truth = Vec::new();
    for (a, &(i, j)) in planted.iter().enumerate() {
        let contiguity = cfg.contiguity_of(a);
        let mut lemmas = Vec::new();
        for k in 0..cfg.instantiations {
            let (verb, sig) = next_lemma(&mut g);
            for class in [i, j] {
                for _ in 0..cfg.usages_per_side {
                    g.sentence(&verb, &sig, class, Some((a, contiguity)));
                }
            }
            if cfg.third_sense_every > 0 && (k + 1) % cfg.third_sense_every == 0 {
                let third = (0..n).find(|&c| c != i && c != j).expect("n >= 3 when pairs exist");
                for _ in 0..cfg.third_sense_usages {
                    g.sentence(&verb, &sig, third, None);
                }
            }
            lemmas.push(match sig.particle {
                Some(p) => format!("{verb}_{p}"),
                None => verb,
            });
        }
        lemmas.sort();
        truth.push(PlantedAlternation {
            code1: codes[i].to_string(),
            code2: codes[j].to_string(),
            contiguity,
            lemmas,
        });
    }

    // Noise lemmas sit on unplanted pairs, below the planted count per pair.
    let unplanted = &pairs[cfg.n_alternations..];
    let cap = cfg.instantiations.saturating_sub(1);
    if cap > 0 && !unplanted.is_empty() {
        let mut per_pair = vec![0usize; unplanted.len()];
        for k in 0..cfg.noise_lemmas {
            let p = k % unplanted.len();
            if per_pair[p] >= cap {
                continue;
            }
            per_pair[p] += 1;
            let (i, j) = unplanted[p];
            let (verb, sig) = next_lemma(&mut g);
            for class in [i, j] {
                for _ in 0..cfg.usages_per_side {
                    g.sentence(&verb, &sig, class, None);
                }
            }
        }
    }

    for k in 0..cfg.distractor_lemmas {
        let (verb, sig) = next_lemma(&mut g);
        for _ in 0..2 * cfg.usages_per_side {
            g.sentence(&verb, &sig, k % n, None);
        }
    }

    let mut usages = g.out;
    usages.shuffle(&mut g.rng);
    for (i, u) in usages.iter_mut().enumerate() {
        u.line = i + 1;
    }
    Ok(SynthCorpus { usages, truth })
}

impl SynthCorpus {
    pub fn write_corpus(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref();
        let mut w = BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?);
        for u in &self.usages {
            let line = serde_json::to_string(u).map_err(|e| Error::Data(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(p, e))?;
        }
        w.flush().map_err(|e| Error::io(p, e))
    }

    pub fn write_truth(&self, path: impl AsRef<Path>, header: &str) -> Result<()> {
        let p = path.as_ref();
        let mut w = BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?);
        let io = |e| Error::io(p, e);
        writeln!(w, "{header}").map_err(io)?;
        writeln!(w, "code1\tcode2\tcontiguity\tlemmas").map_err(io)?;
        for t in &self.truth {
            writeln!(w, "{}\t{}\t{}\t{}", t.code1, t.code2, t.contiguity, t.lemmas.join(","))
                .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<PlantedAlternation>> {
    let p = path.as_ref();
    let f = File::open(p).map_err(|e| Error::io(p, e))?;
    let name = p.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(p, e))?;
        if line.starts_with('#') || line.starts_with("code1\t") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::parse(&name, i + 1, "expected 4 tab-separated fields"));
        }
        let contiguity = f[2]
            .parse()
            .map_err(|_| Error::parse(&name, i + 1, "bad contiguity"))?;
        out.push(PlantedAlternation {
            code1: f[0].into(),
            code2: f[1].into(),
            contiguity,
            lemmas: f[3].split(',').filter(|s| !s.is_empty()).map(String::from).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare(n_alt: usize, inst: usize, ups: usize) -> SynthConfig {
        SynthConfig {
            n_alternations: n_alt,
            instantiations: inst,
            usages_per_side: ups,
            distractor_lemmas: 0,
            noise_lemmas: 0,
            third_sense_every: 0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn usage_count_arithmetic() {
        let c = generate(&bare(6, 20, 50), 1).unwrap();
        assert_eq!(c.usages.len(), 12_000);
        assert_eq!(c.truth.len(), 6);
        assert!(c.truth.iter().all(|t| t.lemmas.len() == 20));
    }

    #[test]
    fn zero_alternations_still_has_distractors() {
        let cfg = SynthConfig {
            n_alternations: 0,
            ..SynthConfig::default()
        };
        let c = generate(&cfg, 3).unwrap();
        assert!(c.truth.is_empty());
        assert!(!c.usages.is_empty());
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = bare(2, 5, 11);
        for (i, seed) in [(0, 9u64), (1, 9)] {
            let c = generate(&cfg, seed).unwrap();
            c.write_corpus(dir.path().join(format!("c{i}.jsonl"))).unwrap();
        }
        let a = std::fs::read(dir.path().join("c0.jsonl")).unwrap();
        let b = std::fs::read(dir.path().join("c1.jsonl")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn over_budget_is_config_error() {
        let cfg = SynthConfig {
            lexicon_budget: 100,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn records_are_valid_targets() {
        let c = generate(&SynthConfig::default(), 5).unwrap();
        for u in &c.usages {
            u.validate().unwrap();
            let span = u.span_len();
            let surface = u.tokens[u.target_index..u.target_index + span].join("_");
            assert_eq!(surface, u.lemma);
            assert!(u.tokens[u.object_index.unwrap()].contains("_n"));
        }
    }

    #[test]
    fn pair_order_starts_with_matching() {
        let p = pair_order(8);
        assert_eq!(&p[..6], &[(0, 1), (2, 3), (4, 5), (6, 7), (1, 2), (3, 4)]);
        assert_eq!(p.len(), 28);
    }

    #[test]
    fn truth_roundtrip() {
        let c = generate(&bare(3, 4, 11), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tsv");
        c.write_truth(&p, "# seed=2").unwrap();
        assert_eq!(read_truth(&p).unwrap(), c.truth);
    }
}
