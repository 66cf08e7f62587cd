mod common;

use std::collections::HashMap;

use metasense::config::PipelineConfig;
use metasense::encoder::{EncoderModel, Tokenizer};
use metasense::error::Error;
use metasense::eval::*;
use metasense::pipeline::{make_cell, prepare, Cell, Prepared};
use ndarray::Array2;
use proptest::prelude::*;

fn prepared() -> &'static Prepared {
    static P: std::sync::OnceLock<Prepared> = std::sync::OnceLock::new();
    P.get_or_init(|| prepare(&PipelineConfig::desk()).unwrap())
}

fn random_model(cell: &Cell, seed: u64) -> EncoderModel {
    let cfg = PipelineConfig::desk();
    let sentences: Vec<&[String]> = cell.corpus.sentences.iter().map(|s| s.tokens.as_slice()).collect();
    let surfaces = cell.registry.surfaces();
    let tok = Tokenizer::build(sentences.iter().copied(), &surfaces, 1).unwrap();
    let mut m = EncoderModel::new(cfg.encoder, tok, seed).unwrap();
    m.extend_vocab(&surfaces, seed ^ 1).unwrap();
    m
}

/// Embeds a position as a point determined by its token's word, so sibling
/// tokens coincide and every other candidate lies elsewhere.
struct SameWord {
    vocab: HashMap<String, u32>,
    word_of: Vec<usize>,
}

impl SameWord {
    fn new(cell: &Cell) -> Self {
        let mut vocab = HashMap::new();
        let mut word_of = Vec::new();
        let mut words: HashMap<String, usize> = HashMap::new();
        let mut add = |t: &str, key: String| {
            if !vocab.contains_key(t) {
                let n = words.len();
                let w = *words.entry(key).or_insert(n);
                vocab.insert(t.to_string(), word_of.len() as u32);
                word_of.push(w);
            }
        };
        for t in cell.registry.tokens() {
            add(&t.surface, t.word.to_string());
        }
        for s in &cell.corpus.sentences {
            for t in &s.tokens {
                add(t, t.clone());
            }
        }
        SameWord { vocab, word_of }
    }
}

impl Embedder for SameWord {
    fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }
    fn sentence_ids(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.vocab[t]).collect()
    }
    fn embed(&self, items: &[(&[u32], usize)]) -> metasense::Result<Array2<f64>> {
        let mut out = Array2::zeros((items.len(), 2));
        for (i, (seq, pos)) in items.iter().enumerate() {
            let theta = self.word_of[seq[*pos] as usize] as f64 * 0.001;
            out[[i, 0]] = theta.cos();
            out[[i, 1]] = theta.sin();
        }
        Ok(out)
    }
}

fn eval_cfg() -> EvalConfig {
    EvalConfig {
        usages_per_token: 1,
        n_distractors: 99,
        seed: 4,
    }
}

#[test]
fn trials_have_distinct_candidates_with_gold_first() {
    let cell = make_cell(prepared(), &PipelineConfig::desk(), 0.4, 0).unwrap();
    let (trials, log) = build_trials(&cell.split, &cell.registry, &cell.corpus, &eval_cfg());
    assert_eq!(log.skipped, 0);
    assert_eq!(trials.len(), cell.registry.len());
    for t in &trials {
        assert_eq!(t.candidates.len(), N_CANDIDATES);
        assert_eq!(t.candidates[0], t.gold);
        let mut c = t.candidates.clone();
        c.sort();
        c.dedup();
        assert_eq!(c.len(), N_CANDIDATES);
        let s = &cell.corpus.sentences[t.sentence];
        assert_eq!(cell.registry.sibling(s.target()).unwrap().surface, t.gold);
        assert!(!t.candidates.iter().any(|x| x == s.target()));
        assert_eq!(t.from, s.meta_sense);
    }
}

#[test]
fn sibling_oracle_scores_perfectly() {
    let cell = make_cell(prepared(), &PipelineConfig::desk(), 0.6, 1).unwrap();
    let (trials, _) = build_trials(&cell.split, &cell.registry, &cell.corpus, &eval_cfg());
    let results = run_trials(&SameWord::new(&cell), &cell.corpus, &trials).unwrap();
    assert_eq!(overall(&results), 1.0);
    let strata = precision(&cell.split, &trials, &results);
    assert!(strata.iter().all(|s| s.precision == 1.0));
}

#[test]
fn unknown_candidate_is_a_data_error() {
    let cell = make_cell(prepared(), &PipelineConfig::desk(), 0.0, 0).unwrap();
    let emb = SameWord::new(&cell);
    let s = &cell.corpus.sentences[0];
    let err = substitute_rank(&emb, &s.tokens, s.target_index, &["nope#v#xyz".to_string()]).unwrap_err();
    assert!(matches!(err, Error::Data(m) if m.contains("nope#v#xyz")));
}

fn rotation(d: usize, angles: &[(usize, usize, f64)]) -> Array2<f64> {
    let mut q = Array2::eye(d);
    for &(i, j, a) in angles {
        let (i, j) = (i % d, j % d);
        if i == j {
            continue;
        }
        let mut g = Array2::eye(d);
        g[[i, i]] = a.cos();
        g[[j, j]] = a.cos();
        g[[i, j]] = -a.sin();
        g[[j, i]] = a.sin();
        q = q.dot(&g);
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn ranking_is_invariant_under_scaling_and_rotation(
        scale in 0.01f64..100.0,
        angles in proptest::collection::vec((0usize..32, 0usize..32, -3.0f64..3.0), 1..12),
        pick in 0usize..1000,
    ) {
        let cell = make_cell(prepared(), &PipelineConfig::desk(), 0.8, 0).unwrap();
        let model = random_model(&cell, 17);
        let (trials, _) = build_trials(&cell.split, &cell.registry, &cell.corpus, &eval_cfg());
        let t = &trials[pick % trials.len()];
        let s = &cell.corpus.sentences[t.sentence];
        let base = substitute_rank(&model, &s.tokens, s.target_index, &t.candidates).unwrap();
        let scaled = substitute_rank(&Scaled(&model, scale), &s.tokens, s.target_index, &t.candidates).unwrap();
        let q = rotation(model.cfg.d_model, &angles);
        let rotated = substitute_rank(&Transformed(&model, q), &s.tokens, s.target_index, &t.candidates).unwrap();
        for other in [&scaled, &rotated] {
            let gold = |r: &Vec<(String, f64)>| r.iter().position(|c| c.0 == t.gold).unwrap();
            prop_assert_eq!(gold(&base), gold(other));
        }
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert!((a.1 * scale * scale - b.1).abs() <= 1e-9 * b.1.max(1e-12));
        }
        let mut d0: Vec<f64> = base.iter().map(|x| x.1).collect();
        let mut d1: Vec<f64> = rotated.iter().map(|x| x.1).collect();
        d0.sort_by(f64::total_cmp);
        d1.sort_by(f64::total_cmp);
        for (a, b) in d0.iter().zip(&d1) {
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
        }
    }

    #[test]
    fn correlation_matches_direct_formula(xs in proptest::collection::vec(-1e3f64..1e3, 3..40), noise in proptest::collection::vec(-1.0f64..1.0, 40)) {
        let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| 0.3 * x + 50.0 * e).collect();
        match correlate(&xs, &ys) {
            Ok((r, p)) => {
                prop_assert!((r - common::pearson(&xs, &ys)).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(&p));
                let (r2, _) = correlate(&ys, &xs).unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
            }
            Err(e) => prop_assert!(matches!(e, Error::UndefinedCorrelation(_))),
        }
    }
}

#[test]
fn correlation_rejects_mismatched_lengths() {
    assert!(matches!(correlate(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(Error::Contract(_))));
    assert!(matches!(correlate(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::UndefinedCorrelation(_))));
}

#[test]
fn random_model_is_near_chance() {
    let cell = make_cell(prepared(), &PipelineConfig::desk(), 0.0, 0).unwrap();
    let model = random_model(&cell, 23);
    let (trials, _) = build_trials(&cell.split, &cell.registry, &cell.corpus, &eval_cfg());
    let results = run_trials(&model, &cell.corpus, &trials).unwrap();
    let p = overall(&results);
    assert!(p < 0.05, "random precision {p}");
    let mean_rank = results.iter().map(|r| r.gold_rank as f64).sum::<f64>() / results.len() as f64;
    assert!((35.0..65.0).contains(&mean_rank), "mean gold rank {mean_rank}");
}

#[test]
fn report_round_trips_through_json_and_csv() {
    let prep = prepared();
    let cell = make_cell(prep, &PipelineConfig::desk(), 0.6, 0).unwrap();
    let (trials, _) = build_trials(&cell.split, &cell.registry, &cell.corpus, &eval_cfg());
    let results = run_trials(&SameWord::new(&cell), &cell.corpus, &trials).unwrap();
    let report = EvalReport::assemble(&cell.split, &trials, &results, &prep.similarity, "abc", 4);
    let dir = tempfile::tempdir().unwrap();
    report.write_csv(dir.path().join("s.csv")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert!(csv.starts_with("# config_hash=abc seed=4\n"));
    assert_eq!(csv.lines().count(), 2 + report.strata.len());
    report.write_json(dir.path().join("s.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(v["n_trials"], trials.len());
}
