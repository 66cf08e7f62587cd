mod common;

use std::collections::BTreeMap;

use metasense::corelex::Prelabeled;
use metasense::corpus::synth::{self, SynthConfig};
use metasense::corpus::{filter_top2, ingest_reader, RawUsage};
use metasense::mining::{check_disjoint, mine_all, mine_selected, MiningConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CODES: [&str; 5] = ["art", "atr", "loc", "psy", "tme"];

fn jsonl(usages: &[RawUsage]) -> Vec<u8> {
    let mut buf = Vec::new();
    for u in usages {
        serde_json::to_writer(&mut buf, u).unwrap();
        buf.push(b'\n');
    }
    buf
}

fn mined(pairs: &[(String, String)], cfg: &MiningConfig) -> BTreeMap<(String, String), (usize, bool)> {
    let raw: Vec<RawUsage> = pairs.iter().enumerate().map(|(i, (w, c))| common::usage(w, c, i + 1)).collect();
    let report = ingest_reader(jsonl(&raw).as_slice(), &Prelabeled::new(CODES)).unwrap();
    assert!(report.skipped.is_empty());
    let (store, _) = filter_top2(&report.store);
    mine_all(&store, cfg)
        .into_iter()
        .map(|a| ((a.code1, a.code2), (a.instantiations.len(), a.systematic)))
        .collect()
}

/// Words get a dominant pair of codes with skewed counts plus occasional
/// third-code noise, so the top-2 filter and side minimum both matter.
fn corpus(rng: &mut ChaCha8Rng, n: usize, words: usize) -> Vec<(String, String)> {
    let prefs: Vec<(usize, usize, f64)> = (0..words)
        .map(|_| {
            let a = rng.random_range(0..CODES.len());
            let b = (a + rng.random_range(1..CODES.len())) % CODES.len();
            (a, b, rng.random_range(0.2..0.8))
        })
        .collect();
    (0..n)
        .map(|_| {
            let w = rng.random_range(0..words);
            let (a, b, p) = prefs[w];
            let c = if rng.random_bool(0.1) {
                rng.random_range(0..CODES.len())
            } else if rng.random_bool(p) {
                a
            } else {
                b
            };
            (format!("w{w:02}"), CODES[c].to_string())
        })
        .collect()
}

#[test]
fn two_thousand_usages_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2000);
    let usages = corpus(&mut rng, 2000, 60);
    let cfg = MiningConfig {
        theta: 3,
        min_usages_per_side: 8,
        top_k: 100,
    };
    let got = mined(&usages, &cfg);
    let want = common::mine(&usages, cfg.min_usages_per_side, cfg.theta);
    assert_eq!(got, want);
    assert!(got.values().any(|v| v.1) && got.values().any(|v| !v.1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn miner_matches_brute_force(seed in any::<u64>(), n in 50usize..600, words in 3usize..30, min_side in 1usize..8, theta in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let usages = corpus(&mut rng, n, words);
        let cfg = MiningConfig { theta, min_usages_per_side: min_side, top_k: 100 };
        prop_assert_eq!(mined(&usages, &cfg), common::mine(&usages, min_side, theta));
    }

    #[test]
    fn top_k_keeps_the_largest(seed in any::<u64>(), k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let usages = corpus(&mut rng, 800, 25);
        let raw: Vec<RawUsage> = usages.iter().enumerate().map(|(i, (w, c))| common::usage(w, c, i + 1)).collect();
        let report = ingest_reader(jsonl(&raw).as_slice(), &Prelabeled::new(CODES)).unwrap();
        let (store, _) = filter_top2(&report.store);
        let cfg = MiningConfig { theta: 1, min_usages_per_side: 3, top_k: k };
        let all = mine_all(&store, &cfg);
        for sel in mine_selected(&store, &cfg) {
            let full = all.iter().find(|a| a.code1 == sel.code1 && a.code2 == sel.code2).unwrap();
            prop_assert_eq!(sel.instantiations.len(), k.min(full.instantiations.len()));
            let floor = sel.instantiations.iter().map(|i| i.total()).min().unwrap();
            let kept: Vec<_> = sel.instantiations.iter().map(|i| &i.word).collect();
            for i in &full.instantiations {
                if !kept.contains(&&i.word) {
                    prop_assert!(i.total() <= floor);
                }
            }
        }
    }
}

#[test]
fn synthetic_corpus_recovers_planted_alternations() {
    let cfg = SynthConfig::default();
    let sc = synth::generate(&cfg, 5).unwrap();
    let report = ingest_reader(jsonl(&sc.usages).as_slice(), &Prelabeled::corelex()).unwrap();
    assert!(report.skipped.is_empty());
    let (store, dropped) = filter_top2(&report.store);
    assert!(dropped > 0, "third-sense usages are filtered");
    let alts = mine_selected(&store, &cfg.scaled_mining());
    check_disjoint(&alts).unwrap();
    assert_eq!(alts.len(), sc.truth.len());
    for t in &sc.truth {
        let a = alts.iter().find(|a| a.code1 == t.code1 && a.code2 == t.code2).expect("planted pair mined");
        let mut got: Vec<&str> = a.instantiations.iter().map(|i| i.word.lemma.as_str()).collect();
        let mut want: Vec<&str> = t.lemmas.iter().map(String::as_str).collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = SynthConfig::default();
    let a = synth::generate(&cfg, 9).unwrap();
    let b = synth::generate(&cfg, 9).unwrap();
    assert_eq!(a.usages, b.usages);
    assert_eq!(a.truth, b.truth);
    assert_ne!(a.usages, synth::generate(&cfg, 10).unwrap().usages);
}
