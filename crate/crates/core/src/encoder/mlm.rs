//! Masked language modeling: pure-MASK replacement, loss over masked
//! positions only.

use std::collections::HashMap;

use ndarray::{Array2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::forward::{backward, forward, Batch};
use super::params::Params;
use super::tokenizer::{Tokenizer, MASK};
use super::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mask_rate: f64,
    pub lr_pretrain: f64,
    pub batch_pretrain: usize,
    pub epochs_pretrain: usize,
    pub adam: AdamConfig,
    pub min_freq: usize,
    /// Fraction of sentences held out for masked-token accuracy.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mask_rate: 0.15,
            lr_pretrain: 5e-5,
            batch_pretrain: 128,
            epochs_pretrain: 50,
            adam: AdamConfig::default(),
            min_freq: 1,
            holdout: 0.10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::config("train.mask_rate", "must lie in (0, 1)"));
        }
        if self.lr_pretrain <= 0.0 {
            return Err(Error::config("train.lr_pretrain", "must be positive"));
        }
        if self.batch_pretrain == 0 {
            return Err(Error::config("train.batch_pretrain", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::config("train.holdout", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// A batch with its masked rows and their original ids.
pub struct MaskedBatch {
    pub batch: Batch,
    pub rows: Vec<usize>,
    pub targets: Vec<u32>,
}

/// Masks `round(mask_rate * maskable)` of the non-special positions, or
/// returns `None` when that number is zero.
pub fn mask_batch<S: AsRef<[u32]>>(seqs: &[S], mask_rate: f64, max_len: usize, rng: &mut ChaCha8Rng) -> Option<MaskedBatch> {
    let mut batch = Batch::new();
    for s in seqs {
        let s = s.as_ref();
        batch.push(&s[..s.len().min(max_len)]);
    }
    let maskable: Vec<usize> = (0..batch.n_tokens())
        .filter(|&r| !Tokenizer::is_special(batch.ids[r]))
        .collect();
    let n = (mask_rate * maskable.len() as f64).round() as usize;
    if n == 0 {
        return None;
    }
    let mut rows: Vec<usize> = maskable.choose_multiple(rng, n).copied().collect();
    rows.sort_unstable();
    let targets = rows.iter().map(|&r| batch.ids[r]).collect();
    for &r in &rows {
        batch.ids[r] = MASK;
    }
    Some(MaskedBatch { batch, rows, targets })
}

/// Mean cross-entropy of the output head on `h` (one row per target).
/// Returns the loss, its gradient with respect to `h`, and the number of
/// top-1 hits. Head gradients are accumulated into `grads` when given.
pub fn head_loss(p: &Params, h: &Array2<f64>, targets: &[u32], grads: Option<&mut Params>) -> (f64, Array2<f64>, usize) {
    let m = targets.len() as f64;
    let mut logits = h.dot(&p.head_w.t()) + &p.head_b;
    let mut loss = 0.0;
    let mut hits = 0;
    for (mut row, &t) in logits.rows_mut().into_iter().zip(targets) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let arg = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        if arg == t as usize {
            hits += 1;
        }
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        loss += z.ln() - (row[t as usize].ln());
        row /= z;
        row[t as usize] -= 1.0;
        row /= m;
    }
    let dh = logits.dot(&p.head_w);
    if let Some(g) = grads {
        g.head_w += &logits.t().dot(h);
        g.head_b += &logits.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    (loss / m, dh, hits)
}

/// Loss and gradient of one masked batch.
pub fn mlm_step_grads(
    cfg: &EncoderConfig,
    p: &Params,
    mb: &MaskedBatch,
    rng: Option<&mut ChaCha8Rng>,
) -> (f64, Params, usize) {
    let (hf, cache) = forward(cfg, p, &mb.batch, rng);
    let h = hf.select(Axis(0), &mb.rows);
    let mut g = p.zeros_like();
    let (loss, dh, hits) = head_loss(p, &h, &mb.targets, Some(&mut g));
    let mut d_hf = Array2::zeros(hf.raw_dim());
    for (i, &r) in mb.rows.iter().enumerate() {
        let mut row = d_hf.row_mut(r);
        row += &dh.row(i);
    }
    backward(cfg, p, &cache, &d_hf, &mut g);
    (loss, g, hits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlmEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MlmReport {
    pub curve: Vec<MlmEpoch>,
    pub steps: u64,
    pub skipped_batches: usize,
}

/// Masked-token loss and top-1 accuracy with a fixed seeded mask, dropout off.
pub fn mlm_evaluate<S: AsRef<[u32]>>(model: &EncoderModel, seqs: &[S], mask_rate: f64, seed: u64) -> (f64, f64, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut loss, mut hits, mut n) = (0.0, 0usize, 0usize);
    let mut targets = Vec::new();
    for chunk in seqs.chunks(256) {
        let Some(mb) = mask_batch(chunk, mask_rate, model.cfg.max_len, &mut rng) else {
            continue;
        };
        let (hf, _) = forward(&model.cfg, &model.params, &mb.batch, None);
        let h = hf.select(Axis(0), &mb.rows);
        let (l, _, k) = head_loss(&model.params, &h, &mb.targets, None);
        loss += l * mb.targets.len() as f64;
        hits += k;
        n += mb.targets.len();
        targets.extend(mb.targets);
    }
    if n == 0 {
        return (f64::NAN, f64::NAN, targets);
    }
    (loss / n as f64, hits as f64 / n as f64, targets)
}

/// Accuracy of always predicting the most frequent training token.
pub fn unigram_baseline<S: AsRef<[u32]>>(train: &[S], targets: &[u32]) -> f64 {
    let mut freq: HashMap<u32, usize> = HashMap::new();
    for s in train {
        for &t in s.as_ref() {
            if !Tokenizer::is_special(t) {
                *freq.entry(t).or_default() += 1;
            }
        }
    }
    let Some((&top, _)) = freq.iter().max_by_key(|(&t, &n)| (n, std::cmp::Reverse(t))) else {
        return 0.0;
    };
    if targets.is_empty() {
        return 0.0;
    }
    targets.iter().filter(|&&t| t == top).count() as f64 / targets.len() as f64
}

/// Trains the model in place. `train` is shuffled each epoch with a seeded
/// RNG; `val` is scored after every epoch with a fixed mask.
pub fn mlm_train<S: AsRef<[u32]>>(model: &mut EncoderModel, train: &[S], val: &[S], cfg: &TrainConfig) -> Result<MlmReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no training sentences".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD50F);
    let mut opt = Adam::new(&model.params, cfg.lr_pretrain, cfg.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = MlmReport::default();
    for epoch in 1..=cfg.epochs_pretrain {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_pretrain) {
            let seqs: Vec<&[u32]> = chunk.iter().map(|&i| train[i].as_ref()).collect();
            let Some(mb) = mask_batch(&seqs, cfg.mask_rate, model.cfg.max_len, &mut rng) else {
                report.skipped_batches += 1;
                continue;
            };
            let (loss, g, _) = mlm_step_grads(&model.cfg, &model.params, &mb, Some(&mut drop_rng));
            if !loss.is_finite() {
                return Err(Error::CheckFailed(format!("non-finite MLM loss at epoch {epoch}")));
            }
            opt.step(&mut model.params, &g);
            model.steps += 1;
            report.steps += 1;
            total += loss;
            count += 1;
        }
        let (val_loss, val_acc, _) = if val.is_empty() {
            (f64::NAN, f64::NAN, Vec::new())
        } else {
            mlm_evaluate(model, val, cfg.mask_rate, cfg.seed ^ 0x5EED)
        };
        let train_loss = if count > 0 { total / count as f64 } else { f64::NAN };
        log::info!("mlm epoch {epoch}: train {train_loss:.4} val {val_loss:.4} acc {val_acc:.3}");
        report.curve.push(MlmEpoch {
            epoch,
            train_loss,
            val_loss,
            val_acc,
        });
    }
    Ok(report)
}
