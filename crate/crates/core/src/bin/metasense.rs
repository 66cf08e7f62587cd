use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use metasense::chaining::{finetune, ChainTrainConfig, Objective};
use metasense::config::PipelineConfig;
use metasense::corelex::{MetaSenseInventory, MetaSenseMapper, Prelabeled, TIE_BREAK};
use metasense::corpus::synth;
use metasense::corpus::{filter_top2, ingest};
use metasense::encoder::gradcheck::{gradient_check, LossKind, DEFAULT_TOL};
use metasense::encoder::{checkpoint, EncoderConfig};
use metasense::error::{Error, Result};
use metasense::eval::{correlate, per_alternation, similarity_ranks, Stratum};
use metasense::mining::{check_disjoint, mine_all, read_tsv, select_instantiations, write_tsv};
use metasense::partition::{PartitionSplit, PartitionedCorpus, TokenRegistry, REWRITE_SCOPE};
use metasense::pipeline::{self, Cell, Prepared};
use metasense::wordnet::{Pos, Taxonomy};

#[derive(Parser)]
#[command(name = "metasense", version, about = "Meta-sense extension experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML). Defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set encoder.d_model=32`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Start from the desk profile instead of the full defaults.
    #[arg(long, global = true)]
    desk: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Emit the synset to meta-sense table for every noun synset.
    CorelexMap {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus and its planted alternations.
    SynthGen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a JSONL corpus and keep each word's top two meta-senses.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mine meta-alternations from a labeled store.
    Mine {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split instantiations and rewrite test words as partitioned tokens.
    Partition {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        alternations: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        run: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// MLM pretraining on a partitioned corpus.
    Pretrain {
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Chaining fine-tuning of a pretrained model.
    Chain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        alternations: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_parser = parse_objective)]
        objective: Objective,
        #[arg(long)]
        out: PathBuf,
    },
    /// Token-substitution evaluation.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlate per-alternation precision with anchor similarity.
    Analyze {
        /// A strata CSV written by `evaluate` or `experiment`.
        #[arg(long)]
        strata: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every loss on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Full sweep over alpha values, runs and model variants.
    Experiment {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    match (&g.config, g.desk) {
        (Some(p), _) => PipelineConfig::load(p, &g.overrides),
        (None, true) => PipelineConfig::from_toml(metasense::config::DESK_PROFILE, &g.overrides),
        (None, false) => PipelineConfig::with_overrides(&g.overrides),
    }
}

fn wordnet_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    cfg.paths
        .wordnet
        .clone()
        .or_else(|| std::env::var_os("METASENSE_WORDNET_DIR").map(PathBuf::from))
        .ok_or_else(|| Error::config("paths.wordnet", "no WordNet directory configured"))
}

fn inventory(cfg: &PipelineConfig, tax: &Taxonomy) -> Result<MetaSenseInventory> {
    match &cfg.paths.corelex {
        Some(p) => MetaSenseInventory::load_file(tax, p),
        None => MetaSenseInventory::load(tax),
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, text: &str) -> Result<()> {
    if let Some(d) = p.parent() {
        mkdir(d)?;
    }
    std::fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn read_split(dir: &Path) -> Result<PartitionSplit> {
    let p = dir.join("split.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", p.display())))
}

fn read_cell(dir: &Path, alpha: f64, run: usize) -> Result<Cell> {
    let split = read_split(dir)?;
    let corpus = PartitionedCorpus::read(dir.join("corpus.txt"), dir.join("corpus.jsonl"))?;
    let registry = TokenRegistry::from_split(&split);
    Ok(Cell {
        alpha,
        run,
        split,
        corpus,
        registry,
    })
}

fn cell_meta(dir: &Path) -> (f64, usize) {
    let text = std::fs::read_to_string(dir.join("cell.txt")).unwrap_or_default();
    let mut alpha = 0.0;
    let mut run = 0;
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("alpha=") {
            alpha = v.parse().unwrap_or(0.0);
        }
        if let Some(v) = line.strip_prefix("run=") {
            run = v.parse().unwrap_or(0);
        }
    }
    (alpha, run)
}

fn prepared_from(cfg: &PipelineConfig, store: &Path, alternations: Option<&Path>) -> Result<Prepared> {
    let report = ingest(store, &Prelabeled::corelex())?;
    let alternations = match alternations {
        Some(a) => read_tsv(a, &report.store)?.into_iter().filter(|a| a.systematic).collect(),
        None => Vec::new(),
    };
    let similarity = match wordnet_dir(cfg) {
        Ok(dir) => {
            let tax = Taxonomy::load(dir)?;
            let inv = inventory(cfg, &tax)?;
            pipeline::anchor_similarity(&tax, &inv, &alternations)?
        }
        Err(_) => BTreeMap::new(),
    };
    Ok(Prepared {
        records: report.records,
        skipped: report.skipped.len(),
        store: report.store,
        alternations,
        truth: Vec::new(),
        similarity,
        dropped: 0,
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let header = cfg.header();
    match cli.cmd {
        Cmd::CorelexMap { out } => {
            let tax = Arc::new(Taxonomy::load(wordnet_dir(&cfg)?)?);
            let inv = inventory(&cfg, &tax)?;
            let mapper = MetaSenseMapper::new(tax.clone(), inv)?;
            let mut text = format!("{header} tie_break={TIE_BREAK}\nsynset\tlemma\tcode\tdistance\ttied\n");
            for s in tax.synsets().filter(|s| s.pos == Pos::Noun) {
                let m = mapper.mapping(s)?;
                let code = &mapper.inventory().entries()[m.index].code;
                let lemma = tax.lemmas(s)?.first().cloned().unwrap_or_default();
                text.push_str(&format!("{s}\t{lemma}\t{code}\t{}\t{}\n", m.distance, m.tied));
            }
            write(&out, &text)?;
        }
        Cmd::SynthGen { out } => {
            let sc = synth::generate(&cfg.synth, cfg.seed)?;
            mkdir(&out)?;
            sc.write_corpus(out.join("corpus.jsonl"))?;
            sc.write_truth(out.join("truth.tsv"), &header)?;
            println!("{} usages, {} planted alternations", sc.usages.len(), sc.truth.len());
        }
        Cmd::Ingest { corpus, out } => {
            let report = match wordnet_dir(&cfg) {
                Ok(dir) => {
                    let tax = Arc::new(Taxonomy::load(dir)?);
                    let inv = inventory(&cfg, &tax)?;
                    ingest(&corpus, &MetaSenseMapper::new(tax, inv)?)?
                }
                Err(_) => ingest(&corpus, &Prelabeled::corelex())?,
            };
            let (store, dropped) = filter_top2(&report.store);
            if let Some(d) = out.parent() {
                mkdir(d)?;
            }
            store.write_jsonl(&out)?;
            println!(
                "{} records, {} skipped, {} usages dropped by top-2 filtering, {} kept",
                report.records,
                report.skipped.len(),
                dropped,
                store.usage_count()
            );
        }
        Cmd::Mine { store, out } => {
            let report = ingest(&store, &Prelabeled::corelex())?;
            let mc = cfg.mining();
            mc.validate()?;
            let alts: Vec<_> = mine_all(&report.store, &mc)
                .into_iter()
                .map(|a| if a.systematic { select_instantiations(&a, &mc) } else { a })
                .collect();
            let systematic: Vec<_> = alts.iter().filter(|a| a.systematic).cloned().collect();
            check_disjoint(&systematic)?;
            write_tsv(&alts, &out, &header)?;
            println!("{} alternations, {} systematic", alts.len(), systematic.len());
        }
        Cmd::Partition {
            store,
            alternations,
            alpha,
            run,
            out,
        } => {
            let prep = prepared_from(&cfg, &store, Some(&alternations))?;
            let cell = pipeline::make_cell(&prep, &cfg, alpha, run)?;
            mkdir(&out)?;
            let h = format!("{header} alpha={alpha} run={run} rewrite_scope={REWRITE_SCOPE}");
            cell.corpus.write(out.join("corpus.txt"), out.join("corpus.jsonl"), &h)?;
            cell.registry.write_tsv(out.join("registry.tsv"), &h, &cell.split)?;
            let split = serde_json::to_string_pretty(&cell.split).map_err(|e| Error::Data(e.to_string()))?;
            write(&out.join("split.json"), &split)?;
            write(&out.join("cell.txt"), &format!("alpha={alpha}\nrun={run}\n"))?;
            println!("{} sentences, {} partitioned tokens", cell.corpus.sentences.len(), cell.registry.len());
        }
        Cmd::Pretrain { partition, out } => {
            let (alpha, run) = cell_meta(&partition);
            let cell = read_cell(&partition, alpha, run)?;
            let (model, report, summary) = pipeline::pretrain(&cfg, &cell)?;
            pipeline::save_model(&cfg, &model, &out)?;
            let mut c = format!("{header}\nepoch,train_loss,val_loss,val_acc\n");
            for e in &report.curve {
                c.push_str(&format!("{},{:.6},{:.6},{:.6}\n", e.epoch, e.train_loss, e.val_loss, e.val_acc));
            }
            write(&out.join("mlm_curve.csv"), &c)?;
            println!(
                "vocab {}, {} steps, held-out accuracy {:.3} (unigram {:.3})",
                summary.vocab, summary.steps, summary.val_acc, summary.unigram_acc
            );
        }
        Cmd::Chain {
            model,
            partition,
            alternations,
            store,
            objective,
            out,
        } => {
            let (alpha, run) = cell_meta(&partition);
            let cell = read_cell(&partition, alpha, run)?;
            let prep = prepared_from(&cfg, &store, Some(&alternations))?;
            let mut m = checkpoint::load(&model)?;
            let cc = ChainTrainConfig {
                objective,
                seed: pipeline::derive_seed(cfg.seed, &objective.to_string(), alpha, run),
                ..cfg.chain.clone()
            };
            let report = finetune(&mut m, &cell.corpus, &cell.split, &prep.alternations, &cc)?;
            pipeline::save_model(&cfg, &m, &out)?;
            report.write_csv(out.join("chain_curve.csv"), &header)?;
            println!("{} steps over {} epochs", report.steps, report.curve.len());
        }
        Cmd::Evaluate { model, partition, out } => {
            let (alpha, run) = cell_meta(&partition);
            let cell = read_cell(&partition, alpha, run)?;
            let m = checkpoint::load(&model)?;
            let prep = Prepared {
                store: Default::default(),
                alternations: Vec::new(),
                truth: Vec::new(),
                similarity: similarity_for(&cfg, &cell.split),
                records: 0,
                skipped: 0,
                dropped: 0,
            };
            let ev = pipeline::evaluate(&cfg, &prep, &cell, &m)?;
            mkdir(&out)?;
            ev.report.write_csv(out.join("strata.csv"))?;
            ev.report.write_json(out.join("summary.json"))?;
            println!("precision {:.4} over {} trials", ev.report.overall_precision, ev.report.n_trials);
        }
        Cmd::Analyze { strata, out } => analyze(&cfg, &strata, out.as_deref())?,
        Cmd::Gradcheck { tol, seed } => {
            let ec = EncoderConfig::tiny();
            let mut failed = Vec::new();
            for k in LossKind::ALL {
                let r = gradient_check(&ec, k, tol, seed)?;
                println!(
                    "{k}: loss {:.6} max relative error {:.3e} {}",
                    r.loss,
                    r.max_rel_err,
                    if r.passed { "pass" } else { "FAIL" }
                );
                if !r.passed {
                    failed.push(k.to_string());
                }
            }
            if !failed.is_empty() {
                return Err(Error::CheckFailed(format!("gradient check failed for {}", failed.join(", "))));
            }
        }
        Cmd::Experiment { out } => {
            let out = out.unwrap_or_else(|| cfg.paths.out.clone());
            let sweep = pipeline::experiment(&cfg, Some(&out))?;
            let means = sweep.means(|r| Some(r.precision));
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "variant\talpha\tmean_precision").ok();
            for ((v, a), p) in means {
                writeln!(stdout, "{}\t{:.1}\t{p:.4}", v.name(), f64::from(a) / 10.0).ok();
            }
            writeln!(stdout, "reports in {}", out.display()).ok();
        }
    }
    Ok(())
}

fn similarity_for(cfg: &PipelineConfig, split: &PartitionSplit) -> BTreeMap<String, f64> {
    let Ok(dir) = wordnet_dir(cfg) else {
        return BTreeMap::new();
    };
    let Ok(tax) = Taxonomy::load(dir) else {
        return BTreeMap::new();
    };
    let Ok(inv) = inventory(cfg, &tax) else {
        return BTreeMap::new();
    };
    let mut out = BTreeMap::new();
    for a in &split.alternations {
        if let (Some(x), Some(y)) = (inv.get(&a.code1), inv.get(&a.code2)) {
            if let Ok(s) = tax.wu_palmer(x.anchor, y.anchor) {
                out.insert(format!("{}-{}", a.code1, a.code2), s);
            }
        }
    }
    out
}

/// Reads strata rows (`evaluate` or `experiment` layout), averages each
/// alternation over its directions and correlates with anchor similarity.
fn analyze(cfg: &PipelineConfig, strata: &Path, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(strata).map_err(|e| Error::io(strata, e))?;
    let name = strata.display().to_string();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let head: Vec<&str> = lines.next().ok_or_else(|| Error::parse(&name, 1, "empty file"))?.split(',').collect();
    let col = |c: &str| head.iter().position(|h| *h == c).ok_or_else(|| Error::parse(&name, 1, format!("missing column {c}")));
    let (ca, cd, cn, ck) = (col("alternation")?, col("direction")?, col("n_trials")?, col("n_correct")?);
    let mut pooled: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for (i, l) in lines.enumerate() {
        let f: Vec<&str> = l.split(',').collect();
        let num = |c: usize| f.get(c).and_then(|v| v.parse::<usize>().ok()).ok_or_else(|| Error::parse(&name, i + 2, "bad count"));
        let e = pooled.entry((f[ca].to_string(), f[cd].to_string())).or_default();
        e.0 += num(cn)?;
        e.1 += num(ck)?;
    }
    let rows: Vec<Stratum> = pooled
        .into_iter()
        .map(|((a, d), (n, k))| Stratum {
            alternation: a,
            direction: d,
            n_trials: n,
            n_correct: k,
            precision: k as f64 / n.max(1) as f64,
        })
        .collect();
    let per = per_alternation(&rows);
    let tax = Taxonomy::load(wordnet_dir(cfg)?)?;
    let inv = inventory(cfg, &tax)?;
    let mut table = Vec::new();
    for (alt, p) in &per {
        let (c1, c2) = alt.split_once('-').ok_or_else(|| Error::Data(format!("bad alternation `{alt}`")))?;
        let (Some(a), Some(b)) = (inv.get(c1), inv.get(c2)) else {
            log::warn!("{alt}: code outside the inventory, left out");
            continue;
        };
        table.push((alt.clone(), *p, tax.wu_palmer(a.anchor, b.anchor)?));
    }
    let sims: Vec<f64> = table.iter().map(|t| t.2).collect();
    let ranks = similarity_ranks(&sims);
    let mut csv = format!("{}\nalternation,precision,similarity,similarity_rank\n", cfg.header());
    for ((alt, p, s), r) in table.iter().zip(&ranks) {
        csv.push_str(&format!("{alt},{p:.6},{s:.6},{r}\n"));
    }
    let x: Vec<f64> = table.iter().map(|t| t.1).collect();
    let corr = correlate(&x, &sims);
    match &corr {
        Ok((rho, p)) => csv.push_str(&format!("# rho={rho:.6} p={p:.6e} n={}\n", table.len())),
        Err(e) => csv.push_str(&format!("# correlation undefined: {e}\n")),
    }
    print!("{csv}");
    if let Some(o) = out {
        write(o, &csv)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
