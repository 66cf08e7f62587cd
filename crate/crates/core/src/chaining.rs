//! Prototypes, offsets, and the analogical and associative chaining
//! objectives with their fine-tuning loop.
//!
//! Both objectives are minimized as written in prose: analogical training
//! pulls the offsets of two words sharing an alternation together, and
//! associative training pulls a word's two prototypes together while pushing
//! the anchor away from a negative word under a non-alternating meta-sense.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::WordKey;
use crate::encoder::adam::{Adam, AdamConfig};
use crate::encoder::checkpoint::write_tensors;
use crate::encoder::forward::{backward, forward, Batch};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::mining::MetaAlternation;
use crate::partition::{PartitionSplit, PartitionedCorpus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Analogical,
    Associative,
    Both,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Analogical => "analogical",
            Objective::Associative => "associative",
            Objective::Both => "both",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analogical" => Ok(Objective::Analogical),
            "associative" => Ok(Objective::Associative),
            "both" => Ok(Objective::Both),
            _ => Err(Error::config("chain.objective", format!("unknown objective `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainTrainConfig {
    pub objective: Objective,
    pub lr: f64,
    pub batch: usize,
    pub epochs_analogical: usize,
    pub epochs_associative: usize,
    /// Usages sampled per prototype.
    pub k: usize,
    pub validation: f64,
    pub patience: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ChainTrainConfig {
    fn default() -> Self {
        ChainTrainConfig {
            objective: Objective::Analogical,
            lr: 2e-5,
            batch: 32,
            epochs_analogical: 24,
            epochs_associative: 8,
            k: 8,
            validation: 0.10,
            patience: 3,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl ChainTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("chain.k", "must be at least 1"));
        }
        if self.batch == 0 {
            return Err(Error::config("chain.batch", "must be positive"));
        }
        if self.lr <= 0.0 {
            return Err(Error::config("chain.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation) {
            return Err(Error::config("chain.validation", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prototype {
    pub word: WordKey,
    pub meta_sense: String,
    pub vector: Array1<f64>,
    pub n_usages: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Offset {
    pub word: WordKey,
    pub from: String,
    pub to: String,
    pub vector: Array1<f64>,
}

/// `z(w, m, m') = h(w, m) - h(w, m')`.
pub fn offset(p: &Prototype, q: &Prototype) -> Result<Offset> {
    if p.word != q.word {
        return Err(Error::Contract("an offset needs two prototypes of one word".into()));
    }
    check_dims(&[&p.vector, &q.vector])?;
    Ok(Offset {
        word: p.word.clone(),
        from: p.meta_sense.clone(),
        to: q.meta_sense.clone(),
        vector: &p.vector - &q.vector,
    })
}

/// Mean embedding over `min(k, n)` usages sampled without replacement.
pub fn prototype(
    model: &EncoderModel,
    word: &WordKey,
    meta_sense: &str,
    usages: &[(&[u32], usize)],
    k: usize,
    seed: u64,
) -> Result<Prototype> {
    if usages.is_empty() {
        return Err(Error::Contract(format!("no usages of {word} under {meta_sense}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<(&[u32], usize)> = usages.choose_multiple(&mut rng, k.max(1)).copied().collect();
    let h = model.encode_many(&picked)?;
    Ok(Prototype {
        word: word.clone(),
        meta_sense: meta_sense.to_string(),
        vector: h.mean_axis(Axis(0)).expect("non-empty"),
        n_usages: picked.len(),
    })
}

fn check_dims(v: &[&Array1<f64>]) -> Result<()> {
    let d = v[0].len();
    if v.iter().any(|x| x.len() != d) {
        return Err(Error::Contract("embedding dimensions differ".into()));
    }
    Ok(())
}

fn sq(v: &Array1<f64>) -> f64 {
    v.dot(v)
}

/// `||z1 - z2||^2`.
pub fn analogical_loss(z1: &Array1<f64>, z2: &Array1<f64>) -> Result<f64> {
    check_dims(&[z1, z2])?;
    Ok(sq(&(z1 - z2)))
}

/// `||a - p||^2 - ||a - n||^2`.
pub fn associative_loss(a: &Array1<f64>, p: &Array1<f64>, n: &Array1<f64>) -> Result<f64> {
    check_dims(&[a, p, n])?;
    Ok(sq(&(a - p)) - sq(&(a - n)))
}

fn mean_rows(hf: &Array2<f64>, rows: &[usize]) -> Array1<f64> {
    hf.select(Axis(0), rows).mean_axis(Axis(0)).expect("non-empty group")
}

fn spread(d: &mut Array2<f64>, rows: &[usize], g: &Array1<f64>, scale: f64) {
    let s = scale / rows.len() as f64;
    for &r in rows {
        d.row_mut(r).scaled_add(s, g);
    }
}

fn analogical_acc(hf: &Array2<f64>, g: [&[usize]; 4], scale: f64, d: &mut Array2<f64>) -> f64 {
    let z1 = mean_rows(hf, g[0]) - mean_rows(hf, g[1]);
    let z2 = mean_rows(hf, g[2]) - mean_rows(hf, g[3]);
    let diff = z1 - z2;
    let two = &diff * 2.0;
    spread(d, g[0], &two, scale);
    spread(d, g[1], &two, -scale);
    spread(d, g[2], &two, -scale);
    spread(d, g[3], &two, scale);
    sq(&diff)
}

fn associative_acc(hf: &Array2<f64>, g: [&[usize]; 3], scale: f64, d: &mut Array2<f64>) -> f64 {
    let a = mean_rows(hf, g[0]);
    let p = mean_rows(hf, g[1]);
    let n = mean_rows(hf, g[2]);
    let ap = &a - &p;
    let an = &a - &n;
    spread(d, g[0], &((&n - &p) * 2.0), scale);
    spread(d, g[1], &(&ap * -2.0), scale);
    spread(d, g[2], &(&an * 2.0), scale);
    sq(&ap) - sq(&an)
}

/// Analogical loss over prototypes given as row groups of `hf`
/// (`w1 m`, `w1 m'`, `w2 m`, `w2 m'`), with its gradient on `hf`.
pub fn analogical_rows(hf: &Array2<f64>, groups: [&[usize]; 4]) -> (f64, Array2<f64>) {
    let mut d = Array2::zeros(hf.raw_dim());
    let l = analogical_acc(hf, groups, 1.0, &mut d);
    (l, d)
}

/// Associative loss over row groups (anchor, positive, negative).
pub fn associative_rows(hf: &Array2<f64>, groups: [&[usize]; 3]) -> (f64, Array2<f64>) {
    let mut d = Array2::zeros(hf.raw_dim());
    let l = associative_acc(hf, groups, 1.0, &mut d);
    (l, d)
}

/// Usage indices of one (word, meta-sense), split into train and validation.
#[derive(Clone, Debug, Default)]
struct Usages {
    train: Vec<usize>,
    val: Vec<usize>,
}

/// Everything the fine-tuning loop samples from.
pub struct ChainData {
    seqs: Vec<Vec<u32>>,
    pos: Vec<usize>,
    groups: BTreeMap<(WordKey, String), Usages>,
    /// Per systematic alternation: (code1, code2, train words with usages on both sides).
    alts: Vec<(String, String, Vec<WordKey>)>,
    systematic: HashSet<(String, String)>,
    /// Unpartitioned words bearing each meta-sense.
    bearers: BTreeMap<String, Vec<WordKey>>,
}

fn pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.into(), b.into())
    } else {
        (b.into(), a.into())
    }
}

impl ChainData {
    pub fn new(
        model: &EncoderModel,
        corpus: &PartitionedCorpus,
        split: &PartitionSplit,
        systematic: &[MetaAlternation],
        validation: f64,
        seed: u64,
    ) -> Self {
        let seqs: Vec<Vec<u32>> = corpus.sentences.iter().map(|s| model.ids(&s.tokens)).collect();
        let pos = corpus.sentences.iter().map(|s| s.target_index).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0FA1);
        let mut groups: BTreeMap<(WordKey, String), Usages> = BTreeMap::new();
        for ((w, code), idx) in corpus.by_word_sense() {
            let mut idx = idx.clone();
            idx.shuffle(&mut rng);
            let n_val = if idx.len() >= 2 {
                ((validation * idx.len() as f64).round() as usize).max(usize::from(validation > 0.0))
            } else {
                0
            };
            let val = idx.split_off(idx.len() - n_val);
            groups.insert((w.clone(), code.to_string()), Usages { train: idx, val });
        }
        let has = |w: &WordKey, c: &str| groups.get(&(w.clone(), c.to_string())).is_some_and(|u| !u.train.is_empty());
        let alts = split
            .alternations
            .iter()
            .map(|a| {
                let words = a.train.iter().filter(|w| has(w, &a.code1) && has(w, &a.code2)).cloned().collect();
                (a.code1.clone(), a.code2.clone(), words)
            })
            .collect();
        let mut bearers: BTreeMap<String, Vec<WordKey>> = BTreeMap::new();
        for (w, c) in groups.keys() {
            if has(w, c) {
                bearers.entry(c.clone()).or_default().push(w.clone());
            }
        }
        ChainData {
            seqs,
            pos,
            groups,
            alts,
            systematic: systematic.iter().map(|a| pair(&a.code1, &a.code2)).collect(),
            bearers,
        }
    }

    pub fn n_train_words(&self) -> usize {
        self.alts.iter().map(|a| a.2.len()).sum()
    }

    fn usages(&self, w: &WordKey, c: &str, val: bool) -> &[usize] {
        let u = &self.groups[&(w.clone(), c.to_string())];
        if val && !u.val.is_empty() {
            &u.val
        } else {
            &u.train
        }
    }

    fn negatives(&self, m: &str, exclude: &WordKey) -> Vec<(&str, Vec<&WordKey>)> {
        self.bearers
            .iter()
            .filter(|(c, _)| c.as_str() != m && !self.systematic.contains(&pair(m, c)))
            .map(|(c, ws)| (c.as_str(), ws.iter().filter(|w| *w != exclude).collect::<Vec<_>>()))
            .filter(|(_, ws)| !ws.is_empty())
            .collect()
    }
}

/// A sampled objective term: its prototypes as lists of usage indices.
enum Term {
    Analogical([Vec<usize>; 4]),
    Associative([Vec<usize>; 3]),
}

fn sample_k(rng: &mut ChaCha8Rng, pool: &[usize], k: usize) -> Vec<usize> {
    pool.choose_multiple(rng, k).copied().collect()
}

fn sample_analogical(d: &ChainData, rng: &mut ChaCha8Rng, k: usize, val: bool) -> Option<Term> {
    let eligible: Vec<&(String, String, Vec<WordKey>)> = d.alts.iter().filter(|a| a.2.len() >= 2).collect();
    let (m1, m2, words) = eligible.choose(rng)?;
    let two: Vec<&WordKey> = words.choose_multiple(rng, 2).collect();
    let g = |rng: &mut ChaCha8Rng, w: &WordKey, c: &str| sample_k(rng, d.usages(w, c, val), k);
    Some(Term::Analogical([
        g(rng, two[0], m1),
        g(rng, two[0], m2),
        g(rng, two[1], m1),
        g(rng, two[1], m2),
    ]))
}

fn sample_associative(d: &ChainData, rng: &mut ChaCha8Rng, k: usize, val: bool) -> Option<Term> {
    let eligible: Vec<&(String, String, Vec<WordKey>)> = d.alts.iter().filter(|a| !a.2.is_empty()).collect();
    let (c1, c2, words) = eligible.choose(rng)?;
    let (m, mp) = if rng.random_bool(0.5) { (c1, c2) } else { (c2, c1) };
    let w = words.choose(rng)?;
    let negs = d.negatives(m, w);
    let (mn, pool) = negs.choose(rng)?;
    let wn = pool.choose(rng)?;
    Some(Term::Associative([
        sample_k(rng, d.usages(w, m, val), k),
        sample_k(rng, d.usages(w, mp, val), k),
        sample_k(rng, d.usages(wn, mn, val), k),
    ]))
}

/// Mean loss of `terms` and, when `grad` is set, its parameter gradient.
fn terms_loss(model: &EncoderModel, d: &ChainData, terms: &[Term], rng: Option<&mut ChaCha8Rng>, grad: bool) -> (f64, Option<crate::encoder::Params>) {
    let mut batch = Batch::new();
    let rows_of = |idx: &[usize], batch: &mut Batch| -> Vec<usize> {
        idx.iter()
            .map(|&i| {
                let seq = &d.seqs[i];
                let seq = &seq[..seq.len().min(model.cfg.max_len)];
                let s = batch.push(seq);
                batch.row(s, d.pos[i].min(seq.len() - 1))
            })
            .collect()
    };
    let mut grouped: Vec<Vec<Vec<usize>>> = Vec::with_capacity(terms.len());
    for t in terms {
        let gs: &[Vec<usize>] = match t {
            Term::Analogical(g) => g,
            Term::Associative(g) => g,
        };
        grouped.push(gs.iter().map(|g| rows_of(g, &mut batch)).collect());
    }
    let (hf, cache) = forward(&model.cfg, &model.params, &batch, rng);
    let scale = 1.0 / terms.len() as f64;
    let mut dh = Array2::zeros(hf.raw_dim());
    let mut total = 0.0;
    for (t, g) in terms.iter().zip(&grouped) {
        total += match t {
            Term::Analogical(_) => analogical_acc(&hf, [&g[0], &g[1], &g[2], &g[3]], scale, &mut dh),
            Term::Associative(_) => associative_acc(&hf, [&g[0], &g[1], &g[2]], scale, &mut dh),
        };
    }
    let grads = grad.then(|| {
        let mut g = model.params.zeros_like();
        backward(&model.cfg, &model.params, &cache, &dh, &mut g);
        g
    });
    (total * scale, grads)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainEpoch {
    pub phase: Objective,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ChainReport {
    pub curve: Vec<ChainEpoch>,
    pub steps: u64,
}

impl ChainReport {
    pub fn write_csv(&self, path: impl AsRef<Path>, header: &str) -> Result<()> {
        let mut s = format!("{header}\nphase,epoch,train_loss,val_loss\n");
        for e in &self.curve {
            s.push_str(&format!("{},{},{:.6},{:.6}\n", e.phase, e.epoch, e.train_loss, e.val_loss));
        }
        let p = path.as_ref();
        std::fs::write(p, s).map_err(|e| Error::io(p, e))
    }
}

fn run_phase(
    model: &mut EncoderModel,
    data: &ChainData,
    cfg: &ChainTrainConfig,
    phase: Objective,
    report: &mut ChainReport,
) -> Result<()> {
    let epochs = match phase {
        Objective::Analogical => cfg.epochs_analogical,
        _ => cfg.epochs_associative,
    };
    let sampler: fn(&ChainData, &mut ChaCha8Rng, usize, bool) -> Option<Term> = match phase {
        Objective::Analogical => sample_analogical,
        _ => sample_associative,
    };
    let phase_seed = cfg.seed ^ if phase == Objective::Analogical { 0xA7A } else { 0xA55 };
    let mut rng = ChaCha8Rng::seed_from_u64(phase_seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(phase_seed ^ 0xD0);
    let mut val_rng = ChaCha8Rng::seed_from_u64(phase_seed ^ 0x7A1);
    let n_val = cfg.batch.max(32);
    let val_terms: Vec<Term> = (0..n_val).filter_map(|_| sampler(data, &mut val_rng, cfg.k, true)).collect();
    if val_terms.is_empty() {
        log::info!("{phase}: nothing to sample, phase skipped");
        return Ok(());
    }
    let steps_per_epoch = data.n_train_words().div_ceil(cfg.batch).max(1);
    let mut opt = Adam::new(&model.params, cfg.lr, cfg.adam);
    let mut best = (f64::INFINITY, model.params.clone(), model.steps);
    let mut stale = 0;
    for epoch in 1..=epochs {
        let mut total = 0.0;
        for _ in 0..steps_per_epoch {
            let terms: Vec<Term> = (0..cfg.batch).filter_map(|_| sampler(data, &mut rng, cfg.k, false)).collect();
            let (loss, g) = terms_loss(model, data, &terms, Some(&mut drop_rng), true);
            if !loss.is_finite() {
                return Err(Error::CheckFailed(format!("non-finite {phase} loss")));
            }
            opt.step(&mut model.params, &g.expect("requested"));
            model.steps += 1;
            report.steps += 1;
            total += loss;
        }
        let (val_loss, _) = terms_loss(model, data, &val_terms, None, false);
        let train_loss = total / steps_per_epoch as f64;
        log::info!("{phase} epoch {epoch}: train {train_loss:.4} val {val_loss:.4}");
        report.curve.push(ChainEpoch {
            phase,
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, model.params.clone(), model.steps);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    model.params = best.1;
    model.steps = best.2;
    Ok(())
}

/// Fine-tunes `model` in place. With no training words (alpha = 0) the model
/// is returned untouched. `Both` runs the associative phase first.
pub fn finetune(
    model: &mut EncoderModel,
    corpus: &PartitionedCorpus,
    split: &PartitionSplit,
    systematic: &[MetaAlternation],
    cfg: &ChainTrainConfig,
) -> Result<ChainReport> {
    cfg.validate()?;
    let mut report = ChainReport::default();
    if !split.has_train() {
        return Ok(report);
    }
    let data = ChainData::new(model, corpus, split, systematic, cfg.validation, cfg.seed);
    let phases: &[Objective] = match cfg.objective {
        Objective::Analogical => &[Objective::Analogical],
        Objective::Associative => &[Objective::Associative],
        Objective::Both => &[Objective::Associative, Objective::Analogical],
    };
    for &ph in phases {
        run_phase(model, &data, cfg, ph, &mut report)?;
    }
    Ok(report)
}

/// Full-corpus prototypes (frozen analysis mode) for every word and
/// meta-sense; partitioned tokens are keyed by their token surface.
pub fn prototype_table(model: &EncoderModel, corpus: &PartitionedCorpus) -> Result<Vec<Prototype>> {
    let mut groups: BTreeMap<(WordKey, String), Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.sentences.iter().enumerate() {
        groups.entry((s.word.clone(), s.meta_sense.clone())).or_default().push(i);
    }
    let seqs: Vec<Vec<u32>> = corpus.sentences.iter().map(|s| model.ids(&s.tokens)).collect();
    let mut out = Vec::with_capacity(groups.len());
    for ((w, c), idx) in groups {
        let items: Vec<(&[u32], usize)> = idx.iter().map(|&i| (seqs[i].as_slice(), corpus.sentences[i].target_index)).collect();
        let mut sum: Option<Array1<f64>> = None;
        for chunk in items.chunks(256) {
            let h = model.encode_many(chunk)?.sum_axis(Axis(0));
            sum = Some(match sum {
                Some(s) => s + h,
                None => h,
            });
        }
        out.push(Prototype {
            vector: sum.expect("non-empty") / items.len() as f64,
            word: w,
            meta_sense: c,
            n_usages: items.len(),
        });
    }
    Ok(out)
}

pub fn write_prototypes(protos: &[Prototype], dir: &Path, stem: &str, header: &[(String, String)]) -> Result<()> {
    let d = protos.first().map_or(0, |p| p.vector.len());
    let mut m = Array2::zeros((protos.len(), d));
    let mut meta = header.to_vec();
    for (i, p) in protos.iter().enumerate() {
        m.row_mut(i).assign(&p.vector);
        meta.push(("row".into(), format!("{i} {} {} {} {}", p.word.lemma, p.word.pos, p.meta_sense, p.n_usages)));
    }
    write_tensors(dir, stem, &meta, &[("prototypes".into(), &m)])
}

/// Mean squared distance between the offsets of every pair of words, each
/// offset computed from full-corpus prototypes of its two row groups.
pub fn offset_dispersion(model: &EncoderModel, words: &[(Vec<(&[u32], usize)>, Vec<(&[u32], usize)>)]) -> Result<f64> {
    let mut z = Vec::with_capacity(words.len());
    for (a, b) in words {
        let pa = model.encode_many(a)?.mean_axis(Axis(0)).expect("non-empty");
        let pb = model.encode_many(b)?.mean_axis(Axis(0)).expect("non-empty");
        z.push(pa - pb);
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            total += sq(&(&z[i] - &z[j]));
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Contract("offset dispersion needs two words".into()));
    }
    Ok(total / n as f64)
}

/// Distinct codes that appear in a split, for reporting.
pub fn split_codes(split: &PartitionSplit) -> BTreeSet<String> {
    split
        .alternations
        .iter()
        .flat_map(|a| [a.code1.clone(), a.code2.clone()])
        .collect()
}
