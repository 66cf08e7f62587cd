use metasense::encoder::gradcheck::{gradient_check, LossKind, DEFAULT_TOL};
use metasense::encoder::mlm::{mask_batch, mlm_train, TrainConfig};
use metasense::encoder::tokenizer::MASK;
use metasense::encoder::{checkpoint, EncoderConfig, EncoderModel, Tokenizer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn toy_corpus() -> Vec<Vec<String>> {
    let subjects = ["she", "he", "they", "we"];
    let verbs = [("eats", "bread"), ("drinks", "tea"), ("reads", "books"), ("drives", "cars")];
    let mut out = Vec::new();
    for s in subjects {
        for (v, o) in verbs {
            out.push(vec![s.to_string(), v.to_string(), o.to_string(), "daily".to_string()]);
        }
    }
    out
}

fn toy_model(seed: u64) -> EncoderModel {
    let sents = toy_corpus();
    let tok = Tokenizer::build(&sents, &[], 1).unwrap();
    EncoderModel::new(EncoderConfig::tiny(), tok, seed).unwrap()
}

#[test]
fn every_loss_passes_the_gradient_check() {
    for kind in LossKind::ALL {
        let r = gradient_check(&EncoderConfig::tiny(), kind, DEFAULT_TOL, 3).unwrap();
        assert!(r.passed, "{kind}: {}", r.max_rel_err);
        assert!(r.max_rel_err <= DEFAULT_TOL);
        assert!(r.tensors.iter().all(|t| t.entries > 0));
    }
}

#[test]
fn mlm_training_lowers_validation_loss_deterministically() {
    let sents = toy_corpus();
    let run = || {
        let mut m = toy_model(1);
        let seqs: Vec<Vec<u32>> = sents.iter().map(|s| m.ids(s)).collect();
        let cfg = TrainConfig {
            lr_pretrain: 1e-2,
            batch_pretrain: 8,
            epochs_pretrain: 40,
            mask_rate: 0.3,
            seed: 9,
            ..TrainConfig::default()
        };
        let r = mlm_train(&mut m, &seqs, &seqs, &cfg).unwrap();
        (m.param_hash(), r)
    };
    let (h1, r1) = run();
    let (h2, r2) = run();
    assert_eq!(h1, h2);
    assert_eq!(r1.curve.len(), r2.curve.len());
    let first = r1.curve.first().unwrap().val_loss;
    let last = r1.curve.last().unwrap().val_loss;
    assert!(last < first, "val loss {first} -> {last}");
}

#[test]
fn extending_the_vocabulary_keeps_existing_rows() {
    let mut m = toy_model(2);
    let before: Vec<_> = m.params.tensors().into_iter().cloned().collect();
    let n = m.vocab_size();
    m.extend_vocab(&["eats#v#act".into(), "eats#v#fod".into()], 5).unwrap();
    assert_eq!(m.vocab_size(), n + 2);
    for (b, a) in before.iter().zip(m.params.tensors()) {
        assert_eq!(a.slice(ndarray::s![..b.nrows(), ..b.ncols()]), b.view());
    }
    assert!(m.extend_vocab(&["eats#v#act".into()], 5).is_err());
}

#[test]
fn encoding_is_deterministic_and_positional() {
    let m = toy_model(3);
    let ids = m.ids(&toy_corpus()[0]);
    let a = m.encode(&ids, 1).unwrap();
    assert_eq!(a, m.encode(&ids, 1).unwrap());
    assert_ne!(a, m.encode(&ids, 2).unwrap());
    let many = m.encode_many(&[(&ids, 1), (&ids, 2)]).unwrap();
    assert!((&many.row(0) - &a).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn checkpoint_round_trip_is_exact_after_quantizing() {
    let mut m = toy_model(4);
    checkpoint::quantize(&mut m.params);
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(&m, dir.path(), &[]).unwrap();
    let back = checkpoint::load(dir.path()).unwrap();
    assert_eq!(back.param_hash(), m.param_hash());
    let ids = m.ids(&toy_corpus()[3]);
    assert_eq!(back.encode(&ids, 2).unwrap(), m.encode(&ids, 2).unwrap());
}

proptest! {
    #[test]
    fn masking_hides_only_real_tokens(seed in any::<u64>(), rate in 0.05f64..0.9) {
        let m = toy_model(5);
        let seqs: Vec<Vec<u32>> = toy_corpus().iter().map(|s| m.ids(s)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Some(b) = mask_batch(&seqs, rate, 16, &mut rng) {
            prop_assert_eq!(b.rows.len(), b.targets.len());
            prop_assert!(!b.rows.is_empty());
            for &t in &b.targets {
                prop_assert!(!Tokenizer::is_special(t));
            }
            let mut rows = b.rows.clone();
            rows.dedup();
            prop_assert_eq!(rows.len(), b.rows.len());
            prop_assert!(MASK < m.vocab_size() as u32);
        }
    }
}
