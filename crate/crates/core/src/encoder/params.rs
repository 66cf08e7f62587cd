use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::EncoderConfig;

/// Weights of one post-norm transformer block. Biases and norm parameters are
/// stored as `1 x n` rows so every tensor is an `Array2`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    /// `vocab x d`
    pub tok_emb: Array2<f64>,
    /// `max_len x d`
    pub pos_emb: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array2<f64>,
    pub lnf_b: Array2<f64>,
    /// `vocab x d`, untied from `tok_emb`.
    pub head_w: Array2<f64>,
    /// `1 x vocab`
    pub head_b: Array2<f64>,
}

const LAYER_NAMES: [&str; 16] = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b", "w1", "b1", "w2", "b2",
    "ln2_g", "ln2_b",
];

fn normal(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn((rows, cols), || n.sample(rng))
}

impl Params {
    pub fn init(cfg: &EncoderConfig, vocab: usize, rng: &mut impl Rng) -> Self {
        let d = cfg.d_model;
        let s = cfg.init_std;
        let zeros = |n| Array2::zeros((1, n));
        let ones = |n| Array2::ones((1, n));
        let tok_emb = normal(vocab, d, s, rng);
        let pos_emb = normal(cfg.max_len, d, s, rng);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                wq: normal(d, d, s, rng),
                bq: zeros(d),
                wk: normal(d, d, s, rng),
                bk: zeros(d),
                wv: normal(d, d, s, rng),
                bv: zeros(d),
                wo: normal(d, d, s, rng),
                bo: zeros(d),
                ln1_g: ones(d),
                ln1_b: zeros(d),
                w1: normal(d, cfg.d_ff, s, rng),
                b1: zeros(cfg.d_ff),
                w2: normal(cfg.d_ff, d, s, rng),
                b2: zeros(d),
                ln2_g: ones(d),
                ln2_b: zeros(d),
            })
            .collect();
        let head_w = normal(vocab, d, s, rng);
        Params {
            tok_emb,
            pos_emb,
            layers,
            lnf_g: ones(d),
            lnf_b: zeros(d),
            head_w,
            head_b: zeros(vocab),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn vocab(&self) -> usize {
        self.tok_emb.nrows()
    }

    /// Tensors in the fixed order used by the optimizer and checkpoints.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            v.extend([
                &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ln1_g, &l.ln1_b, &l.w1,
                &l.b1, &l.w2, &l.b2, &l.ln2_g, &l.ln2_b,
            ]);
        }
        v.extend([&self.lnf_g, &self.lnf_b, &self.head_w, &self.head_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            v.extend([
                &mut l.wq, &mut l.bq, &mut l.wk, &mut l.bk, &mut l.wv, &mut l.bv, &mut l.wo,
                &mut l.bo, &mut l.ln1_g, &mut l.ln1_b, &mut l.w1, &mut l.b1, &mut l.w2, &mut l.b2,
                &mut l.ln2_g, &mut l.ln2_b,
            ]);
        }
        v.extend([&mut self.lnf_g, &mut self.lnf_b, &mut self.head_w, &mut self.head_b]);
        v
    }

    pub fn names(&self) -> Vec<String> {
        let mut v = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for i in 0..self.layers.len() {
            v.extend(LAYER_NAMES.iter().map(|n| format!("layer{i}.{n}")));
        }
        v.extend(["lnf_g", "lnf_b", "head_w", "head_b"].map(String::from));
        v
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Appends `n` rows to the embedding and head matrices and `n` head-bias
    /// columns. Existing values are copied unchanged.
    pub fn add_rows(&mut self, n: usize, std: f64, rng: &mut impl Rng) {
        if n == 0 {
            return;
        }
        let d = self.tok_emb.ncols();
        let e = normal(n, d, std, rng);
        let h = normal(n, d, std, rng);
        self.tok_emb = concatenate![Axis(0), self.tok_emb, e];
        self.head_w = concatenate![Axis(0), self.head_w, h];
        let b = Array2::zeros((1, n));
        self.head_b = concatenate![Axis(1), self.head_b, b];
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, b);
        }
    }
}
