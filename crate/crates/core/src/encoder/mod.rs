//! A small post-norm transformer encoder trained from scratch.
//!
//! The contextual embedding of a token is the final hidden state (after the
//! closing layer norm) at its position.

pub mod adam;
pub mod checkpoint;
pub mod forward;
pub mod gradcheck;
pub mod mlm;
pub mod params;
pub mod tokenizer;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use forward::Batch;
pub use params::Params;
pub use tokenizer::Tokenizer;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            d_ff: 512,
            max_len: 64,
            dropout: 0.1,
            init_std: 0.02,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config("encoder.d_model", "must be a positive multiple of n_heads"));
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.max_len == 0 {
            return Err(Error::config("encoder", "n_layers, d_ff and max_len must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("encoder.dropout", "must lie in [0, 1)"));
        }
        if self.init_std <= 0.0 {
            return Err(Error::config("encoder.init_std", "must be positive"));
        }
        Ok(())
    }

    /// The configuration used by gradient checks: one layer, d = 16, no dropout.
    pub fn tiny() -> Self {
        EncoderConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            d_ff: 32,
            max_len: 16,
            dropout: 0.0,
            init_std: 0.3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderModel {
    pub cfg: EncoderConfig,
    pub params: Params,
    pub tokenizer: Tokenizer,
    /// Optimizer steps taken so far, across all objectives.
    pub steps: u64,
}

impl EncoderModel {
    pub fn new(cfg: EncoderConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&cfg, tokenizer.len(), &mut rng);
        Ok(EncoderModel {
            cfg,
            params,
            tokenizer,
            steps: 0,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokenizer.len()
    }

    /// Adds one embedding row and one output row per new token, drawn from
    /// N(0, init_std^2). Existing rows are untouched.
    pub fn extend_vocab(&mut self, tokens: &[String], seed: u64) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for t in tokens {
            if self.tokenizer.contains(t) || !seen.insert(t) {
                return Err(Error::Contract(format!("token `{t}` is already in the vocabulary")));
            }
        }
        for t in tokens {
            self.tokenizer.push(t)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params.add_rows(tokens.len(), self.cfg.init_std, &mut rng);
        Ok(())
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<u32> {
        self.tokenizer.encode(tokens)
    }

    fn clip<'a>(&self, ids: &'a [u32], position: usize) -> Result<&'a [u32]> {
        let max = self.cfg.max_len;
        let ids = if ids.len() > max {
            log::warn!("sentence of {} tokens truncated to {max}", ids.len());
            &ids[..max]
        } else {
            ids
        };
        if position >= ids.len() {
            return Err(Error::Contract(format!(
                "position {position} outside a sentence of {} tokens",
                ids.len()
            )));
        }
        Ok(ids)
    }

    /// Inference-mode hidden state at `position`.
    pub fn encode(&self, ids: &[u32], position: usize) -> Result<Array1<f64>> {
        Ok(self.encode_many(&[(ids, position)])?.row(0).to_owned())
    }

    /// Hidden states for several `(sentence, position)` pairs in one packed
    /// forward pass, one output row per pair.
    pub fn encode_many(&self, items: &[(&[u32], usize)]) -> Result<Array2<f64>> {
        let mut batch = Batch::new();
        let mut rows = Vec::with_capacity(items.len());
        for &(ids, pos) in items {
            let ids = self.clip(ids, pos)?;
            let s = batch.push(ids);
            rows.push(batch.row(s, pos));
        }
        let (hf, _) = forward::forward(&self.cfg, &self.params, &batch, None);
        Ok(hf.select(ndarray::Axis(0), &rows))
    }

    /// SHA-256 over every parameter's bit pattern, in tensor order.
    pub fn param_hash(&self) -> String {
        params_hash(&self.params)
    }
}

pub fn params_hash(p: &Params) -> String {
    let mut h = Sha256::new();
    for t in p.tensors() {
        for &x in t.iter() {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Specials and corpus tokens with frequency at least `min_freq`, followed by
/// every registry token regardless of frequency.
pub fn build_tokenizer<S: AsRef<[String]>>(
    sentences: &[S],
    registry: &[String],
    min_freq: usize,
) -> Result<Tokenizer> {
    let mut t = Tokenizer::build(sentences.iter().map(|s| s.as_ref()), registry, min_freq)?;
    for r in registry {
        t.push(r)?;
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(d: usize) -> EncoderModel {
        let sents = vec![["a", "b", "c", "d"].map(String::from).to_vec()];
        let tok = Tokenizer::build(&sents, &[], 1).unwrap();
        let cfg = EncoderConfig {
            d_model: d,
            n_heads: 2,
            d_ff: 2 * d,
            n_layers: 1,
            max_len: 8,
            ..EncoderConfig::default()
        };
        EncoderModel::new(cfg, tok, 1).unwrap()
    }

    #[test]
    fn encode_shape_and_determinism() {
        let m = model(16);
        let ids = [4, 5, 6, 7];
        let a = m.encode(&ids, 1).unwrap();
        assert_eq!(a.len(), 16);
        assert_eq!(a, m.encode(&ids, 1).unwrap());
    }

    #[test]
    fn context_order_matters() {
        let m = model(16);
        let a = m.encode(&[4, 5, 6, 7], 0).unwrap();
        let b = m.encode(&[4, 6, 5, 7], 0).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn encode_many_matches_single() {
        let m = model(16);
        let x: [u32; 4] = [4, 5, 6, 7];
        let y: [u32; 3] = [7, 6, 5];
        let many = m.encode_many(&[(&x, 2), (&y, 0)]).unwrap();
        let a = m.encode(&x, 2).unwrap();
        let b = m.encode(&y, 0).unwrap();
        for (p, q) in many.row(0).iter().zip(a.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
        for (p, q) in many.row(1).iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn overlong_sentence_truncates_and_far_position_errors() {
        let m = model(16);
        let ids = vec![4u32; 12];
        assert!(m.encode(&ids, 7).is_ok());
        assert!(m.encode(&ids, 9).is_err());
    }

    #[test]
    fn extend_vocab_keeps_old_rows() {
        let mut m = model(16);
        let before = m.params.clone();
        m.extend_vocab(&["x#v#loc".into(), "x#v#psy".into()], 3).unwrap();
        assert_eq!(m.vocab_size(), before.vocab() + 2);
        let old = before.vocab();
        assert_eq!(m.params.tok_emb.slice(ndarray::s![..old, ..]), before.tok_emb);
        assert_eq!(m.params.head_w.slice(ndarray::s![..old, ..]), before.head_w);
        assert_eq!(m.params.head_b.slice(ndarray::s![.., ..old]), before.head_b);
        assert!(m.extend_vocab(&["x#v#loc".into()], 4).is_err());
    }

    #[test]
    fn extend_by_nothing_is_identity() {
        let mut m = model(16);
        let h = m.param_hash();
        m.extend_vocab(&[], 3).unwrap();
        assert_eq!(m.param_hash(), h);
    }

    #[test]
    fn registry_tokens_survive_min_freq() {
        let mut s: Vec<Vec<String>> = vec![vec!["a".into(); 20]];
        for _ in 0..5 {
            s.push(vec!["r#v#loc".into()]);
        }
        let t = build_tokenizer(&s, &["r#v#loc".into()], 10).unwrap();
        assert!(t.contains("r#v#loc"));
        assert_eq!(t.id("r#v#loc"), Some(t.len() as u32 - 1));
    }

    #[test]
    fn bad_head_split_is_config_error() {
        let cfg = EncoderConfig {
            d_model: 10,
            n_heads: 4,
            ..EncoderConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
