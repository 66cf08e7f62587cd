//! Finite-difference validation of the hand-derived gradients.
//!
//! Each parameter is perturbed by `h = 1e-4 * max(1, |theta|)` and the
//! derivative estimated with the fourth-order central stencil
//! `(8(f(+h) - f(-h)) - (f(+2h) - f(-2h))) / 12h`. The relative error of an
//! entry is `|a - n| / max(|a|, |n|, floor)` with `floor = 1e-6 * max(1, |L|)`,
//! well above the rounding noise of the stencil. Without a floor, gradients
//! that are zero by symmetry (the key bias under softmax) score as noise.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::Serialize;

use super::forward::{backward, forward, Batch};
use super::mlm::head_loss;
use super::params::Params;
use super::tokenizer::{Tokenizer, MASK};
use super::{EncoderConfig, EncoderModel};
use crate::chaining::{analogical_rows, associative_rows};
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-4;
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mlm,
    Analogical,
    Associative,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Mlm, LossKind::Analogical, LossKind::Associative];
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mlm => "mlm",
            LossKind::Analogical => "analogical",
            LossKind::Associative => "associative",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlm" => Ok(LossKind::Mlm),
            "analogical" => Ok(LossKind::Analogical),
            "associative" => Ok(LossKind::Associative),
            _ => Err(Error::config("loss", format!("unknown loss kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorError {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub kind: LossKind,
    pub loss: f64,
    pub tol: f64,
    pub tensors: Vec<TensorError>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// A loss over the final hidden states of a fixed batch.
struct Problem {
    batch: Batch,
    kind: LossKind,
    /// Masked rows and targets for MLM; prototype row groups otherwise.
    rows: Vec<usize>,
    targets: Vec<u32>,
    groups: Vec<Vec<usize>>,
}

impl Problem {
    fn loss_and_grad(&self, cfg: &EncoderConfig, p: &Params, want_grad: bool) -> (f64, Option<Params>) {
        let (hf, cache) = forward(cfg, p, &self.batch, None);
        let mut g = want_grad.then(|| p.zeros_like());
        let (loss, d_hf) = match self.kind {
            LossKind::Mlm => {
                let h = hf.select(Axis(0), &self.rows);
                let (loss, dh, _) = head_loss(p, &h, &self.targets, g.as_mut());
                let mut d = Array2::zeros(hf.raw_dim());
                for (i, &r) in self.rows.iter().enumerate() {
                    let mut row = d.row_mut(r);
                    row += &dh.row(i);
                }
                (loss, d)
            }
            LossKind::Analogical => {
                let gr: [&[usize]; 4] = [&self.groups[0], &self.groups[1], &self.groups[2], &self.groups[3]];
                analogical_rows(&hf, gr)
            }
            LossKind::Associative => {
                let gr: [&[usize]; 3] = [&self.groups[0], &self.groups[1], &self.groups[2]];
                associative_rows(&hf, gr)
            }
        };
        if let Some(g) = g.as_mut() {
            backward(cfg, p, &cache, &d_hf, g);
        }
        (loss, g)
    }
}

fn fixture(kind: LossKind, cfg: &EncoderConfig, seed: u64) -> Result<(EncoderModel, Problem)> {
    let words: Vec<String> = (0..12).map(|i| format!("t{i}")).collect();
    let tok = Tokenizer::build(&[words], &[], 1)?;
    let model = EncoderModel::new(cfg.clone(), tok, seed)?;
    let seqs: [&[u32]; 4] = [&[4, 9, 5, 11, 6, 7], &[8, 4, 10, 5, 12], &[13, 6, 4, 15, 9, 7], &[14, 11, 8, 5, 4]];
    let problem = match kind {
        LossKind::Mlm => {
            let mut b = Batch::from_seqs(&seqs[..1]);
            let rows = vec![1, 4];
            let targets = rows.iter().map(|&r| b.ids[r]).collect();
            for &r in &rows {
                b.ids[r] = MASK;
            }
            Problem { batch: b, kind, rows, targets, groups: Vec::new() }
        }
        LossKind::Analogical => {
            // Four usages: w1 under m, w1 under m', w2 under m, w2 under m'.
            let b = Batch::from_seqs(&seqs);
            let groups = vec![vec![b.row(0, 2)], vec![b.row(1, 1)], vec![b.row(2, 3)], vec![b.row(3, 0)]];
            Problem { batch: b, kind, rows: Vec::new(), targets: Vec::new(), groups }
        }
        LossKind::Associative => {
            // Anchor prototype averaged over two usages.
            let b = Batch::from_seqs(&seqs);
            let groups = vec![vec![b.row(0, 2), b.row(1, 3)], vec![b.row(2, 1)], vec![b.row(3, 4)]];
            Problem { batch: b, kind, rows: Vec::new(), targets: Vec::new(), groups }
        }
    };
    Ok((model, problem))
}

/// Compares analytic and numeric gradients for every entry of every tensor.
pub fn gradient_check(cfg: &EncoderConfig, kind: LossKind, tol: f64, seed: u64) -> Result<GradReport> {
    if cfg.dropout != 0.0 {
        return Err(Error::config("encoder.dropout", "gradient checks need dropout 0"));
    }
    let (model, prob) = fixture(kind, cfg, seed)?;
    let (loss, analytic) = prob.loss_and_grad(cfg, &model.params, true);
    let analytic = analytic.expect("requested");
    let names = model.params.names();
    let mut p = model.params.clone();
    let mut tensors = Vec::new();
    let mut finite = loss.is_finite();
    let floor = REL_FLOOR * loss.abs().max(1.0);
    let n_tensors = p.tensors().len();
    for ti in 0..n_tensors {
        let len = p.tensors()[ti].len();
        let mut worst: f64 = 0.0;
        for e in 0..len {
            let theta = p.tensors()[ti].as_slice().expect("standard layout")[e];
            let h = 1e-4 * theta.abs().max(1.0);
            let eval = |delta: f64, p: &mut Params| {
                p.tensors_mut()[ti].as_slice_mut().expect("standard layout")[e] = theta + delta;
                prob.loss_and_grad(cfg, p, false).0
            };
            let f1 = eval(h, &mut p);
            let f_1 = eval(-h, &mut p);
            let f2 = eval(2.0 * h, &mut p);
            let f_2 = eval(-2.0 * h, &mut p);
            p.tensors_mut()[ti].as_slice_mut().unwrap()[e] = theta;
            let numeric = (8.0 * (f1 - f_1) - (f2 - f_2)) / (12.0 * h);
            let a = analytic.tensors()[ti].as_slice().unwrap()[e];
            if !numeric.is_finite() || !a.is_finite() {
                finite = false;
                worst = f64::INFINITY;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
        tensors.push(TensorError {
            name: names[ti].clone(),
            entries: len,
            max_rel_err: worst,
        });
    }
    let max_rel_err = tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max);
    Ok(GradReport {
        kind,
        loss,
        tol,
        max_rel_err,
        passed: finite && max_rel_err <= tol,
        tensors,
    })
}
