//! The pretrain, chain and evaluate sweep over alpha values and runs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::chaining::{finetune, ChainReport, ChainTrainConfig};
use crate::config::{PipelineConfig, Variant};
use crate::corelex::{MetaSenseInventory, MetaSenseMapper, Prelabeled};
use crate::corpus::synth::{self, PlantedAlternation};
use crate::corpus::{filter_top2, ingest, ingest_reader, UsageStore};
use crate::encoder::mlm::{mlm_evaluate, mlm_train, unigram_baseline, MlmReport, TrainConfig};
use crate::encoder::{checkpoint, EncoderModel, Tokenizer};
use crate::error::{Error, Result};
use crate::eval::{build_trials, overall, run_trials, EvalConfig, EvalReport, Trial, TrialLog, TrialResult};
use crate::mining::{check_disjoint, mine_selected, MetaAlternation};
use crate::partition::{partition_corpus, split, PartitionConfig, PartitionSplit, PartitionedCorpus, TokenRegistry};
use crate::wordnet::Taxonomy;

/// Derives an independent seed for one role of one sweep cell.
pub fn derive_seed(base: u64, tag: &str, alpha: f64, run: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(format!("{base}/{tag}/{alpha:.3}/{run}").as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub struct Prepared {
    pub store: UsageStore,
    /// Systematic alternations with selected instantiations.
    pub alternations: Vec<MetaAlternation>,
    /// Planted ground truth; empty for an external corpus.
    pub truth: Vec<PlantedAlternation>,
    /// Anchor Wu-Palmer similarity per pair code, when a taxonomy is available.
    pub similarity: BTreeMap<String, f64>,
    pub records: usize,
    pub skipped: usize,
    pub dropped: usize,
}

impl Prepared {
    /// Pair codes of planted alternations with disjoint contexts.
    pub fn disjoint_pairs(&self) -> BTreeSet<String> {
        self.truth
            .iter()
            .filter(|t| t.contiguity == 0.0)
            .map(|t| format!("{}-{}", t.code1, t.code2))
            .collect()
    }
}

fn load_taxonomy(cfg: &PipelineConfig) -> Result<Option<(Arc<Taxonomy>, MetaSenseInventory)>> {
    let Some(dir) = &cfg.paths.wordnet else {
        return Ok(None);
    };
    let tax = Taxonomy::load(dir)?;
    let inv = match &cfg.paths.corelex {
        Some(p) => MetaSenseInventory::load_file(&tax, p)?,
        None => MetaSenseInventory::load(&tax)?,
    };
    Ok(Some((Arc::new(tax), inv)))
}

/// Anchor similarity of every alternation whose codes are in the inventory.
pub fn anchor_similarity(tax: &Taxonomy, inv: &MetaSenseInventory, alts: &[MetaAlternation]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for a in alts {
        if let (Some(x), Some(y)) = (inv.get(&a.code1), inv.get(&a.code2)) {
            out.insert(a.pair_code(), tax.wu_palmer(x.anchor, y.anchor)?);
        }
    }
    Ok(out)
}

/// Loads or generates the corpus, labels it, keeps each word's top two
/// meta-senses and mines the systematic alternations.
pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.check_paths()?;
    let taxonomy = load_taxonomy(cfg)?;
    let (report, truth) = match &cfg.paths.corpus {
        None => {
            let sc = synth::generate(&cfg.synth, cfg.seed)?;
            let mut buf = Vec::new();
            for u in &sc.usages {
                serde_json::to_writer(&mut buf, u).map_err(|e| Error::Data(e.to_string()))?;
                buf.push(b'\n');
            }
            (ingest_reader(buf.as_slice(), &Prelabeled::corelex())?, sc.truth)
        }
        Some(path) => {
            let report = match &taxonomy {
                Some((tax, inv)) => {
                    let mapper = MetaSenseMapper::new(tax.clone(), inv.clone())?;
                    ingest(path, &mapper)?
                }
                None => ingest(path, &Prelabeled::corelex())?,
            };
            (report, Vec::new())
        }
    };
    let (store, dropped) = filter_top2(&report.store);
    let alternations = mine_selected(&store, &cfg.mining());
    check_disjoint(&alternations)?;
    if alternations.is_empty() {
        return Err(Error::Data("no systematic alternation found".into()));
    }
    let similarity = match &taxonomy {
        Some((tax, inv)) => anchor_similarity(tax, inv, &alternations)?,
        None => BTreeMap::new(),
    };
    log::info!(
        "prepared {} usages of {} words, {} systematic alternations",
        store.usage_count(),
        store.word_count(),
        alternations.len()
    );
    Ok(Prepared {
        records: report.records,
        skipped: report.skipped.len(),
        store,
        alternations,
        truth,
        similarity,
        dropped,
    })
}

pub struct Cell {
    pub alpha: f64,
    pub run: usize,
    pub split: PartitionSplit,
    pub corpus: PartitionedCorpus,
    pub registry: TokenRegistry,
}

pub fn make_cell(prep: &Prepared, cfg: &PipelineConfig, alpha: f64, run: usize) -> Result<Cell> {
    let s = split(
        &prep.alternations,
        &PartitionConfig {
            alpha,
            seed: cfg.seed,
            run_id: run as u64,
        },
    )?;
    let (corpus, registry) = partition_corpus(&prep.store, &s);
    Ok(Cell {
        alpha,
        run,
        split: s,
        corpus,
        registry,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PretrainSummary {
    pub vocab: usize,
    pub steps: u64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub unigram_acc: f64,
}

/// Builds the vocabulary (corpus tokens, then registry rows), initializes a
/// model and trains it with MLM on the partitioned corpus.
pub fn pretrain(cfg: &PipelineConfig, cell: &Cell) -> Result<(EncoderModel, MlmReport, PretrainSummary)> {
    let sentences: Vec<&[String]> = cell.corpus.sentences.iter().map(|s| s.tokens.as_slice()).collect();
    let surfaces = cell.registry.surfaces();
    let tok = Tokenizer::build(sentences.iter().copied(), &surfaces, cfg.train.min_freq)?;
    let init_seed = derive_seed(cfg.seed, "init", cell.alpha, cell.run);
    let mut model = EncoderModel::new(cfg.encoder.clone(), tok, init_seed)?;
    model.extend_vocab(&surfaces, init_seed ^ 1)?;
    let mut seqs: Vec<Vec<u32>> = sentences.iter().map(|s| model.ids(s)).collect();
    let data_seed = derive_seed(cfg.seed, "mlm", cell.alpha, cell.run);
    seqs.shuffle(&mut ChaCha8Rng::seed_from_u64(data_seed));
    let n_val = (cfg.train.holdout * seqs.len() as f64).round() as usize;
    let val = seqs.split_off(seqs.len() - n_val);
    let tc = TrainConfig {
        seed: data_seed,
        ..cfg.train.clone()
    };
    let report = mlm_train(&mut model, &seqs, &val, &tc)?;
    let (val_loss, val_acc, targets) = mlm_evaluate(&model, &val, tc.mask_rate, data_seed ^ 0x5EED);
    let summary = PretrainSummary {
        vocab: model.vocab_size(),
        steps: model.steps,
        val_loss,
        val_acc,
        unigram_acc: unigram_baseline(&seqs, &targets),
    };
    Ok((model, report, summary))
}

pub fn chain(cfg: &PipelineConfig, prep: &Prepared, cell: &Cell, base: &EncoderModel, variant: Variant) -> Result<(EncoderModel, ChainReport)> {
    let mut model = base.clone();
    let Some(objective) = variant.objective() else {
        return Ok((model, ChainReport::default()));
    };
    let cc = ChainTrainConfig {
        objective,
        seed: derive_seed(cfg.seed, variant.name(), cell.alpha, cell.run),
        ..cfg.chain.clone()
    };
    let report = finetune(&mut model, &cell.corpus, &cell.split, &prep.alternations, &cc)?;
    Ok((model, report))
}

pub struct Evaluation {
    pub trials: Vec<Trial>,
    pub results: Vec<TrialResult>,
    pub log: TrialLog,
    pub report: EvalReport,
}

pub fn eval_config(cfg: &PipelineConfig, cell: &Cell) -> EvalConfig {
    EvalConfig {
        seed: derive_seed(cfg.seed, "eval", cell.alpha, cell.run),
        ..cfg.eval.clone()
    }
}

pub fn evaluate(cfg: &PipelineConfig, prep: &Prepared, cell: &Cell, model: &EncoderModel) -> Result<Evaluation> {
    let ec = eval_config(cfg, cell);
    let (trials, log) = build_trials(&cell.split, &cell.registry, &cell.corpus, &ec);
    let results = run_trials(model, &cell.corpus, &trials)?;
    let report = EvalReport::assemble(&cell.split, &trials, &results, &prep.similarity, &cfg.hash(), ec.seed);
    Ok(Evaluation {
        trials,
        results,
        log,
        report,
    })
}

/// One row of the sweep summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub variant: Variant,
    pub alpha: f64,
    pub run: usize,
    pub n_trials: usize,
    pub precision: f64,
    /// Over trials of planted alternations with disjoint contexts.
    pub precision_disjoint: Option<f64>,
    pub precision_contiguous: Option<f64>,
    pub param_hash: String,
}

#[derive(Clone, Debug, Default)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// `(variant, alpha, run, report)` for every row.
    pub reports: Vec<(Variant, f64, usize, EvalReport)>,
    pub pretrain: Vec<(f64, usize, PretrainSummary)>,
}

fn subset_precision(cell: &Cell, ev: &Evaluation, pairs: &BTreeSet<String>, inside: bool) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let picked: Vec<TrialResult> = ev
        .trials
        .iter()
        .zip(&ev.results)
        .filter(|(t, _)| {
            let a = &cell.split.alternations[t.alternation];
            pairs.contains(&format!("{}-{}", a.code1, a.code2)) == inside
        })
        .map(|(_, r)| r.clone())
        .collect();
    (!picked.is_empty()).then(|| overall(&picked))
}

impl Sweep {
    pub fn summary_csv(&self, header: &str) -> String {
        let mut s = format!("{header}\nvariant,alpha,run,n_trials,precision,precision_disjoint,precision_contiguous,param_hash\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.1},{},{},{:.6},{},{},{}\n",
                r.variant.name(),
                r.alpha,
                r.run,
                r.n_trials,
                r.precision,
                opt(r.precision_disjoint),
                opt(r.precision_contiguous),
                r.param_hash
            ));
        }
        s
    }

    pub fn strata_csv(&self, header: &str) -> String {
        let mut s = format!("{header}\nvariant,alpha,run,alternation,direction,n_trials,n_correct,precision\n");
        for (v, a, run, rep) in &self.reports {
            for st in &rep.strata {
                s.push_str(&format!(
                    "{},{:.1},{},{},{},{},{},{:.6}\n",
                    v.name(),
                    a,
                    run,
                    st.alternation,
                    st.direction,
                    st.n_trials,
                    st.n_correct,
                    st.precision
                ));
            }
        }
        s
    }

    /// Mean precision over runs, keyed by `(variant, alpha in tenths)`.
    pub fn means(&self, pick: impl Fn(&SweepRow) -> Option<f64>) -> BTreeMap<(Variant, u32), f64> {
        let mut acc: BTreeMap<(Variant, u32), Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            if let Some(v) = pick(r) {
                acc.entry((r.variant, (r.alpha * 10.0).round() as u32)).or_default().push(v);
            }
        }
        acc.into_iter().map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64)).collect()
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs every (alpha, run) cell: partition, pretrain, chain each variant and
/// evaluate. With `out`, per-cell artifacts and the two report CSVs are
/// written there.
pub fn experiment(cfg: &PipelineConfig, out: Option<&Path>) -> Result<Sweep> {
    let header = cfg.header();
    let prep = prepare(cfg)?;
    let disjoint = prep.disjoint_pairs();
    let mut sweep = Sweep::default();
    for &alpha in &cfg.alphas {
        for run in 0..cfg.runs {
            let t0 = Instant::now();
            let cell = make_cell(&prep, cfg, alpha, run)?;
            let dir = out.map(|o| o.join(format!("alpha{alpha:.1}")).join(format!("run{run}")));
            let (base, mlm_report, summary) = pretrain(cfg, &cell)?;
            log::info!(
                "alpha {alpha} run {run}: pretrained {} steps, val acc {:.3} (unigram {:.3}) in {:.1}s",
                summary.steps,
                summary.val_acc,
                summary.unigram_acc,
                t0.elapsed().as_secs_f64()
            );
            if let Some(d) = &dir {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                cell.registry.write_tsv(d.join("registry.tsv"), &header, &cell.split)?;
                let mut c = format!("{header}\nepoch,train_loss,val_loss,val_acc\n");
                for e in &mlm_report.curve {
                    c.push_str(&format!("{},{:.6},{:.6},{:.6}\n", e.epoch, e.train_loss, e.val_loss, e.val_acc));
                }
                write(&d.join("mlm_curve.csv"), &c)?;
            }
            let mut cache: BTreeMap<String, Evaluation> = BTreeMap::new();
            for &variant in &cfg.variants {
                let (model, chain_report) = chain(cfg, &prep, &cell, &base, variant)?;
                let hash = model.param_hash();
                if !cache.contains_key(&hash) {
                    cache.insert(hash.clone(), evaluate(cfg, &prep, &cell, &model)?);
                }
                let ev = &cache[&hash];
                let row = SweepRow {
                    variant,
                    alpha,
                    run,
                    n_trials: ev.results.len(),
                    precision: ev.report.overall_precision,
                    precision_disjoint: subset_precision(&cell, ev, &disjoint, true),
                    precision_contiguous: subset_precision(&cell, ev, &disjoint, false),
                    param_hash: hash[..16].to_string(),
                };
                log::info!("alpha {alpha} run {run} {}: precision {:.4} over {} trials", variant.name(), row.precision, row.n_trials);
                if let Some(d) = &dir {
                    let vd = d.join(variant.name());
                    std::fs::create_dir_all(&vd).map_err(|e| Error::io(&vd, e))?;
                    ev.report.write_csv(vd.join("strata.csv"))?;
                    ev.report.write_json(vd.join("summary.json"))?;
                    if variant.objective().is_some() {
                        chain_report.write_csv(vd.join("chain_curve.csv"), &header)?;
                    }
                }
                sweep.rows.push(row);
                sweep.reports.push((variant, alpha, run, ev.report.clone()));
            }
            sweep.pretrain.push((alpha, run, summary));
            log::info!("alpha {alpha} run {run} done in {:.1}s", t0.elapsed().as_secs_f64());
        }
    }
    if let Some(o) = out {
        write(&o.join("report.csv"), &sweep.summary_csv(&header))?;
        write(&o.join("strata.csv"), &sweep.strata_csv(&header))?;
        write(&o.join("config.toml"), &cfg.to_toml())?;
    }
    Ok(sweep)
}

/// Saves a model checkpoint tagged with the config hash and seed.
pub fn save_model(cfg: &PipelineConfig, model: &EncoderModel, dir: &Path) -> Result<()> {
    checkpoint::save(
        model,
        dir,
        &[("config_hash".into(), cfg.hash()), ("seed".into(), cfg.seed.to_string())],
    )
}

pub fn out_dir(cfg: &PipelineConfig) -> PathBuf {
    cfg.paths.out.clone()
}
