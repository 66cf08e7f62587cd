//! Token-substitution trials, precision strata and the similarity
//! correlation.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::partition::{PartitionSplit, PartitionedCorpus, TokenRegistry};

pub const N_CANDIDATES: usize = 100;

/// Anything that yields contextual embeddings for `(sentence, position)` pairs.
pub trait Embedder {
    fn token_id(&self, token: &str) -> Option<u32>;
    fn sentence_ids(&self, tokens: &[String]) -> Vec<u32>;
    fn embed(&self, items: &[(&[u32], usize)]) -> Result<Array2<f64>>;
}

impl Embedder for EncoderModel {
    fn token_id(&self, token: &str) -> Option<u32> {
        self.tokenizer.id(token)
    }

    fn sentence_ids(&self, tokens: &[String]) -> Vec<u32> {
        self.ids(tokens)
    }

    fn embed(&self, items: &[(&[u32], usize)]) -> Result<Array2<f64>> {
        self.encode_many(items)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Trials per partitioned token (its first usages in a seeded order);
    /// `0` means every usage.
    pub usages_per_token: usize,
    pub n_distractors: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            usages_per_token: 0,
            n_distractors: N_CANDIDATES - 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Trial {
    /// Index into the partitioned corpus; its target is the sibling token.
    pub sentence: usize,
    pub gold: String,
    /// Gold first, then distractors in draw order.
    pub candidates: Vec<String>,
    pub alternation: usize,
    /// Meta-sense of the token in the sentence.
    pub from: String,
    /// Meta-sense of the gold token.
    pub to: String,
    /// Distractors drawn from outside the gold's alternation and side.
    pub backfilled: usize,
}

impl Trial {
    pub fn direction(&self) -> String {
        format!("{}>{}", self.from, self.to)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TrialLog {
    pub skipped: usize,
    /// Trials that needed distractors from other alternations with the same code.
    pub backfilled_same_code: usize,
    /// Trials that needed distractors of a third code.
    pub backfilled_other_code: usize,
    /// Trials that needed distractors sharing the reference token's code.
    pub backfilled_source_code: usize,
    pub short_lists: usize,
}

/// One trial per evaluated usage and direction. Distractors come first from
/// the gold's own alternation and side, then from other alternations' tokens
/// of the same meta-sense, then from tokens of meta-senses on neither side, and
/// last from tokens sharing the reference token's meta-sense.
pub fn build_trials(
    split: &PartitionSplit,
    registry: &TokenRegistry,
    corpus: &PartitionedCorpus,
    cfg: &EvalConfig,
) -> (Vec<Trial>, TrialLog) {
    let by_token = corpus.by_token();
    let mut log = TrialLog::default();
    let mut trials = Vec::new();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7E57);
    let mut trial_no = 0u64;
    for (ai, alt) in split.alternations.iter().enumerate() {
        for w in &alt.test {
            for (from, to) in [(&alt.code2, &alt.code1), (&alt.code1, &alt.code2)] {
                let (Some(src), Some(gold)) = (registry.lookup(w, from), registry.lookup(w, to)) else {
                    continue;
                };
                let mut sents = by_token.get(src.surface.as_str()).cloned().unwrap_or_default();
                sents.shuffle(&mut order_rng);
                if cfg.usages_per_token > 0 {
                    sents.truncate(cfg.usages_per_token);
                }
                sents.sort_unstable();
                let tier1: Vec<&str> = registry
                    .tokens()
                    .iter()
                    .filter(|t| t.alternation == ai && &t.code == to && &t.word != w)
                    .map(|t| t.surface.as_str())
                    .collect();
                let tier2: Vec<&str> = registry
                    .tokens()
                    .iter()
                    .filter(|t| t.alternation != ai && &t.code == to && &t.word != w)
                    .map(|t| t.surface.as_str())
                    .collect();
                let tier3: Vec<&str> = registry
                    .tokens()
                    .iter()
                    .filter(|t| &t.code != to && &t.code != from && &t.word != w)
                    .map(|t| t.surface.as_str())
                    .collect();
                let tier4: Vec<&str> = registry
                    .tokens()
                    .iter()
                    .filter(|t| &t.code == from && &t.word != w)
                    .map(|t| t.surface.as_str())
                    .collect();
                for s in sents {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(trial_no);
                    trial_no += 1;
                    let mut cands = vec![gold.surface.clone()];
                    let mut need = cfg.n_distractors;
                    let mut backfilled = 0;
                    for (tier, pool) in [&tier1, &tier2, &tier3, &tier4].into_iter().enumerate() {
                        if need == 0 {
                            break;
                        }
                        let take: Vec<&&str> = pool.choose_multiple(&mut rng, need).collect();
                        if tier == 1 && !take.is_empty() {
                            log.backfilled_same_code += 1;
                        }
                        if tier == 2 && !take.is_empty() {
                            log.backfilled_other_code += 1;
                        }
                        if tier == 3 && !take.is_empty() {
                            log.backfilled_source_code += 1;
                        }
                        if tier > 0 {
                            backfilled += take.len();
                        }
                        need -= take.len();
                        cands.extend(take.into_iter().map(|t| t.to_string()));
                    }
                    if cands.len() == 1 {
                        log::info!("no distractors for {}", gold.surface);
                        log.skipped += 1;
                        continue;
                    }
                    if need > 0 {
                        log.short_lists += 1;
                    }
                    debug_assert_eq!(cands.iter().filter(|c| **c == gold.surface).count(), 1);
                    trials.push(Trial {
                        sentence: s,
                        gold: gold.surface.clone(),
                        candidates: cands,
                        alternation: ai,
                        from: from.clone(),
                        to: to.clone(),
                        backfilled,
                    });
                }
            }
        }
    }
    if log.backfilled_same_code + log.backfilled_other_code + log.backfilled_source_code > 0 {
        log::info!(
            "distractor backfill: {} trials from same-code alternations, {} from third codes, {} from the source code",
            log.backfilled_same_code,
            log.backfilled_other_code,
            log.backfilled_source_code
        );
    }
    (trials, log)
}

/// Candidates ranked by squared distance between their substituted
/// embedding and the reference embedding, ties by token id.
pub fn substitute_rank<E: Embedder + ?Sized>(
    emb: &E,
    tokens: &[String],
    target: usize,
    candidates: &[String],
) -> Result<Vec<(String, f64)>> {
    let base = emb.sentence_ids(tokens);
    let mut ids = Vec::with_capacity(candidates.len());
    for c in candidates {
        ids.push(emb.token_id(c).ok_or_else(|| Error::Data(format!("candidate `{c}` is not in the vocabulary")))?);
    }
    let seqs: Vec<Vec<u32>> = ids
        .iter()
        .map(|&id| {
            let mut s = base.clone();
            s[target] = id;
            s
        })
        .collect();
    let mut items: Vec<(&[u32], usize)> = vec![(&base, target)];
    items.extend(seqs.iter().map(|s| (s.as_slice(), target)));
    let h = emb.embed(&items)?;
    let reference = h.row(0);
    let mut ranked: Vec<(String, f64, u32)> = candidates
        .iter()
        .zip(&ids)
        .enumerate()
        .map(|(i, (c, &id))| {
            let d = &h.row(i + 1) - &reference;
            (c.clone(), d.dot(&d), id)
        })
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)));
    Ok(ranked.into_iter().map(|(c, d, _)| (c, d)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub correct: bool,
    pub gold_rank: usize,
}

pub fn run_trials<E: Embedder + ?Sized>(emb: &E, corpus: &PartitionedCorpus, trials: &[Trial]) -> Result<Vec<TrialResult>> {
    trials
        .iter()
        .map(|t| {
            let s = &corpus.sentences[t.sentence];
            let ranked = substitute_rank(emb, &s.tokens, s.target_index, &t.candidates)?;
            let gold_rank = ranked.iter().position(|(c, _)| *c == t.gold).expect("gold is a candidate") + 1;
            Ok(TrialResult {
                correct: gold_rank == 1,
                gold_rank,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stratum {
    pub alternation: String,
    pub direction: String,
    pub n_trials: usize,
    pub n_correct: usize,
    pub precision: f64,
}

/// Top-1 rate per (alternation, direction); empty strata are omitted.
pub fn precision(split: &PartitionSplit, trials: &[Trial], results: &[TrialResult]) -> Vec<Stratum> {
    let mut acc: BTreeMap<(usize, String), (usize, usize)> = BTreeMap::new();
    for (t, r) in trials.iter().zip(results) {
        let e = acc.entry((t.alternation, t.direction())).or_default();
        e.0 += 1;
        e.1 += usize::from(r.correct);
    }
    acc.into_iter()
        .map(|((ai, dir), (n, k))| {
            let a = &split.alternations[ai];
            Stratum {
                alternation: format!("{}-{}", a.code1, a.code2),
                direction: dir,
                n_trials: n,
                n_correct: k,
                precision: k as f64 / n as f64,
            }
        })
        .collect()
}

/// Per-alternation precision: the mean over its directions.
pub fn per_alternation(strata: &[Stratum]) -> BTreeMap<String, f64> {
    let mut m: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in strata {
        m.entry(s.alternation.clone()).or_default().push(s.precision);
    }
    m.into_iter().map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64)).collect()
}

pub fn overall(results: &[TrialResult]) -> f64 {
    if results.is_empty() {
        return f64::NAN;
    }
    results.iter().filter(|r| r.correct).count() as f64 / results.len() as f64
}

/// Pearson correlation with a two-sided p-value from Student's t with n - 2
/// degrees of freedom.
pub fn correlate(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::Contract("correlation inputs differ in length".into()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::UndefinedCorrelation(format!("{n} points, need at least 3")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok((r, p))
}

/// Alternations ranked by similarity, 1 for the most similar.
pub fn similarity_ranks(sims: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..sims.len()).collect();
    idx.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; sims.len()];
    for (r, i) in idx.into_iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

/// Wraps an embedder and multiplies every output by a constant.
pub struct Scaled<'a, E: ?Sized>(pub &'a E, pub f64);

impl<E: Embedder + ?Sized> Embedder for Scaled<'_, E> {
    fn token_id(&self, token: &str) -> Option<u32> {
        self.0.token_id(token)
    }
    fn sentence_ids(&self, tokens: &[String]) -> Vec<u32> {
        self.0.sentence_ids(tokens)
    }
    fn embed(&self, items: &[(&[u32], usize)]) -> Result<Array2<f64>> {
        Ok(self.0.embed(items)? * self.1)
    }
}

/// Wraps an embedder and applies a fixed linear map to every output row.
pub struct Transformed<'a, E: ?Sized>(pub &'a E, pub Array2<f64>);

impl<E: Embedder + ?Sized> Embedder for Transformed<'_, E> {
    fn token_id(&self, token: &str) -> Option<u32> {
        self.0.token_id(token)
    }
    fn sentence_ids(&self, tokens: &[String]) -> Vec<u32> {
        self.0.sentence_ids(tokens)
    }
    fn embed(&self, items: &[(&[u32], usize)]) -> Result<Array2<f64>> {
        Ok(self.0.embed(items)?.dot(&self.1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AltSummary {
    pub alternation: String,
    pub precision: f64,
    pub similarity: Option<f64>,
    pub similarity_rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub strata: Vec<Stratum>,
    pub alternations: Vec<AltSummary>,
    pub overall_precision: f64,
    pub n_trials: usize,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub config_hash: String,
    pub seed: u64,
}

impl EvalReport {
    /// `similarity` maps alternation pair codes to anchor similarities.
    pub fn assemble(
        split: &PartitionSplit,
        trials: &[Trial],
        results: &[TrialResult],
        similarity: &BTreeMap<String, f64>,
        config_hash: &str,
        seed: u64,
    ) -> Self {
        let strata = precision(split, trials, results);
        let per = per_alternation(&strata);
        let sims: Vec<Option<f64>> = per.keys().map(|a| similarity.get(a).copied()).collect();
        let known: Vec<f64> = sims.iter().flatten().copied().collect();
        let ranks = similarity_ranks(&known);
        let mut rank_iter = ranks.into_iter();
        let alternations: Vec<AltSummary> = per
            .iter()
            .zip(&sims)
            .map(|((a, &p), s)| AltSummary {
                alternation: a.clone(),
                precision: p,
                similarity: *s,
                similarity_rank: s.map(|_| rank_iter.next().expect("one rank per known similarity")),
            })
            .collect();
        let pairs: Vec<(f64, f64)> = alternations.iter().filter_map(|a| a.similarity.map(|s| (a.precision, s))).collect();
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let corr = correlate(&x, &y).ok();
        EvalReport {
            strata,
            alternations,
            overall_precision: overall(results),
            n_trials: results.len(),
            rho: corr.map(|c| c.0),
            p_value: corr.map(|c| c.1),
            config_hash: config_hash.to_string(),
            seed,
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = format!("# config_hash={} seed={}\nalternation,direction,n_trials,n_correct,precision\n", self.config_hash, self.seed);
        for r in &self.strata {
            s.push_str(&format!("{},{},{},{},{:.6}\n", r.alternation, r.direction, r.n_trials, r.n_correct, r.precision));
        }
        let p = path.as_ref();
        std::fs::write(p, s).map_err(|e| Error::io(p, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let summary = serde_json::json!({
            "config_hash": self.config_hash,
            "seed": self.seed,
            "n_trials": self.n_trials,
            "overall_precision": self.overall_precision,
            "rho": self.rho,
            "p_value": self.p_value,
            "alternations": self.alternations,
        });
        let p = path.as_ref();
        let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(p, text + "\n").map_err(|e| Error::io(p, e))
    }
}
