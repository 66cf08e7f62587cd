//! Packed-batch forward and reverse passes.
//!
//! Sequences are concatenated without padding; attention runs per sequence
//! and per head. Gradients are derived by hand and checked against finite
//! differences in `gradcheck`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{LayerParams, Params};
use super::EncoderConfig;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Token ids of several sequences laid end to end.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<u32>,
    /// `starts[i]..starts[i + 1]` is sequence `i`.
    pub starts: Vec<usize>,
}

impl Batch {
    pub fn new() -> Self {
        Batch { ids: Vec::new(), starts: vec![0] }
    }

    pub fn from_seqs<S: AsRef<[u32]>>(seqs: &[S]) -> Self {
        let mut b = Batch::new();
        for s in seqs {
            b.push(s.as_ref());
        }
        b
    }

    pub fn push(&mut self, seq: &[u32]) -> usize {
        self.ids.extend_from_slice(seq);
        self.starts.push(self.ids.len());
        self.starts.len() - 2
    }

    pub fn n_seqs(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn n_tokens(&self) -> usize {
        self.ids.len()
    }

    /// Flat row index of `pos` in sequence `seq`.
    pub fn row(&self, seq: usize, pos: usize) -> usize {
        debug_assert!(self.starts[seq] + pos < self.starts[seq + 1]);
        self.starts[seq] + pos
    }

    fn spans(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.starts.windows(2).map(|w| (w[0], w[1]))
    }
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

struct LayerCache {
    x_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// One `l x l` matrix per (sequence, head), sequence-major.
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    mask_a: Option<Array2<f64>>,
    ln1: LnCache,
    x1: Array2<f64>,
    hpre: Array2<f64>,
    hact: Array2<f64>,
    mask_f: Option<Array2<f64>>,
    ln2: LnCache,
}

pub struct Cache {
    batch: Batch,
    mask_e: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
}

fn layer_norm(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let n = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).unwrap();
    let cent = x - &mean.view().insert_axis(Axis(1));
    let var = cent.mapv(|c| c * c).sum_axis(Axis(1)) / n;
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = cent * rstd.view().insert_axis(Axis(1));
    let y = &xhat * g + b;
    (y, LnCache { xhat, rstd })
}

/// Returns `dx` and accumulates `dg`, `db`.
fn layer_norm_back(
    dy: &Array2<f64>,
    c: &LnCache,
    g: &Array2<f64>,
    dg: &mut Array2<f64>,
    db: &mut Array2<f64>,
) -> Array2<f64> {
    *dg += &(dy * &c.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * g;
    let m1 = dxhat.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
    let m2 = (&dxhat * &c.xhat).mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
    (dxhat - &m1 - &(&c.xhat * &m2)) * c.rstd.view().insert_axis(Axis(1))
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn dropout_mask<R: Rng + ?Sized>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random_bool(p) { 0.0 } else { keep })
}

fn linear(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    x.dot(w) + b
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

fn attention(
    batch: &Batch,
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    n_heads: usize,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let d = q.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Array2::zeros(q.raw_dim());
    let mut probs = Vec::with_capacity(batch.n_seqs() * n_heads);
    for (a, b) in batch.spans() {
        for h in 0..n_heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(s![a..b, cols.clone()]);
            let kh = k.slice(s![a..b, cols.clone()]);
            let vh = v.slice(s![a..b, cols.clone()]);
            let mut p = qh.dot(&kh.t()) * scale;
            softmax_rows(&mut p);
            ctx.slice_mut(s![a..b, cols]).assign(&p.dot(&vh));
            probs.push(p);
        }
    }
    (ctx, probs)
}

fn layer_forward(
    cfg: &EncoderConfig,
    lp: &LayerParams,
    batch: &Batch,
    x: Array2<f64>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, LayerCache) {
    let q = linear(&x, &lp.wq, &lp.bq);
    let k = linear(&x, &lp.wk, &lp.bk);
    let v = linear(&x, &lp.wv, &lp.bv);
    let (ctx, probs) = attention(batch, &q, &k, &v, cfg.n_heads);
    let mut a = linear(&ctx, &lp.wo, &lp.bo);
    let mask_a = rng.as_deref_mut().map(|r| dropout_mask(a.dim(), cfg.dropout, r));
    if let Some(m) = &mask_a {
        a *= m;
    }
    let (x1, ln1) = layer_norm(&(&x + &a), &lp.ln1_g, &lp.ln1_b);
    let hpre = linear(&x1, &lp.w1, &lp.b1);
    let hact = hpre.mapv(gelu);
    let mut f = linear(&hact, &lp.w2, &lp.b2);
    let mask_f = rng.map(|r| dropout_mask(f.dim(), cfg.dropout, r));
    if let Some(m) = &mask_f {
        f *= m;
    }
    let (x2, ln2) = layer_norm(&(&x1 + &f), &lp.ln2_g, &lp.ln2_b);
    let cache = LayerCache {
        x_in: x,
        q,
        k,
        v,
        probs,
        ctx,
        mask_a,
        ln1,
        x1,
        hpre,
        hact,
        mask_f,
        ln2,
    };
    (x2, cache)
}

/// Final hidden states (after the closing layer norm), one row per token.
/// Dropout is applied only when `rng` is given and `cfg.dropout > 0`.
pub fn forward(
    cfg: &EncoderConfig,
    p: &Params,
    batch: &Batch,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, Cache) {
    if cfg.dropout <= 0.0 {
        rng = None;
    }
    let d = cfg.d_model;
    let mut x = Array2::zeros((batch.n_tokens(), d));
    for (a, b) in batch.spans() {
        for (pos, r) in (a..b).enumerate() {
            let id = batch.ids[r] as usize;
            let mut row = x.row_mut(r);
            row += &p.tok_emb.row(id);
            row += &p.pos_emb.row(pos);
        }
    }
    let mask_e = rng.as_deref_mut().map(|r| dropout_mask(x.dim(), cfg.dropout, r));
    if let Some(m) = &mask_e {
        x *= m;
    }
    let mut layers = Vec::with_capacity(p.layers.len());
    for lp in &p.layers {
        let (y, c) = layer_forward(cfg, lp, batch, x, rng.as_deref_mut());
        layers.push(c);
        x = y;
    }
    let (hf, lnf) = layer_norm(&x, &p.lnf_g, &p.lnf_b);
    (
        hf,
        Cache {
            batch: batch.clone(),
            mask_e,
            layers,
            lnf,
        },
    )
}

fn layer_backward(
    cfg: &EncoderConfig,
    lp: &LayerParams,
    c: &LayerCache,
    batch: &Batch,
    dx2: Array2<f64>,
    g: &mut LayerParams,
) -> Array2<f64> {
    let dr2 = layer_norm_back(&dx2, &c.ln2, &lp.ln2_g, &mut g.ln2_g, &mut g.ln2_b);
    let mut df = dr2.clone();
    if let Some(m) = &c.mask_f {
        df *= m;
    }
    g.w2 += &c.hact.t().dot(&df);
    g.b2 += &df.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut dh = df.dot(&lp.w2.t());
    ndarray::Zip::from(&mut dh).and(&c.hpre).for_each(|d, &x| *d *= gelu_grad(x));
    g.w1 += &c.x1.t().dot(&dh);
    g.b1 += &dh.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dx1 = dr2 + dh.dot(&lp.w1.t());

    let dr1 = layer_norm_back(&dx1, &c.ln1, &lp.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
    let mut da = dr1.clone();
    if let Some(m) = &c.mask_a {
        da *= m;
    }
    g.wo += &c.ctx.t().dot(&da);
    g.bo += &da.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dctx = da.dot(&lp.wo.t());

    let d = cfg.d_model;
    let dh_ = d / cfg.n_heads;
    let scale = 1.0 / (dh_ as f64).sqrt();
    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    let mut pi = 0;
    for (a, b) in batch.spans() {
        for h in 0..cfg.n_heads {
            let cols = h * dh_..(h + 1) * dh_;
            let p = &c.probs[pi];
            pi += 1;
            let dc: ArrayView2<f64> = dctx.slice(s![a..b, cols.clone()]);
            let vh = c.v.slice(s![a..b, cols.clone()]);
            let qh = c.q.slice(s![a..b, cols.clone()]);
            let kh = c.k.slice(s![a..b, cols.clone()]);
            let dp = dc.dot(&vh.t());
            dv.slice_mut(s![a..b, cols.clone()]).assign(&p.t().dot(&dc));
            let rows = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = (dp - &rows) * p * scale;
            dq.slice_mut(s![a..b, cols.clone()]).assign(&ds.dot(&kh));
            dk.slice_mut(s![a..b, cols]).assign(&ds.t().dot(&qh));
        }
    }
    g.wq += &c.x_in.t().dot(&dq);
    g.bq += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
    g.wk += &c.x_in.t().dot(&dk);
    g.bk += &dk.sum_axis(Axis(0)).insert_axis(Axis(0));
    g.wv += &c.x_in.t().dot(&dv);
    g.bv += &dv.sum_axis(Axis(0)).insert_axis(Axis(0));
    dr1 + dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t())
}

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to the final hidden states is `d_hf`.
pub fn backward(cfg: &EncoderConfig, p: &Params, cache: &Cache, d_hf: &Array2<f64>, grads: &mut Params) {
    let mut dx = layer_norm_back(d_hf, &cache.lnf, &p.lnf_g, &mut grads.lnf_g, &mut grads.lnf_b);
    for (i, lc) in cache.layers.iter().enumerate().rev() {
        dx = layer_backward(cfg, &p.layers[i], lc, &cache.batch, dx, &mut grads.layers[i]);
    }
    if let Some(m) = &cache.mask_e {
        dx *= m;
    }
    let batch = &cache.batch;
    for (a, b) in batch.spans() {
        for (pos, r) in (a..b).enumerate() {
            let id = batch.ids[r] as usize;
            let row = dx.row(r);
            let mut t = grads.tok_emb.row_mut(id);
            t += &row;
            let mut q = grads.pos_emb.row_mut(pos);
            q += &row;
        }
    }
}
