//! Bidirectional InfoNCE, kept per sample.
//!
//! For a batch with similarity logits `S[i][j] = <f_i, g_j> / temperature`,
//! the f->g loss of sample `i` is `logsumexp(S[i, :]) - S[i][i]` and the g->f
//! loss of sample `j` is `logsumexp(S[:, j]) - S[j][j]`. The batch objective is
//! `(mean(fg) + mean(gf)) / 2`.

use ndarray::{Array2, ArrayView2, Axis};

use crate::encoder::{normalize_rows, EncoderParams, Tower};
use crate::{Result, ScanError};

/// Per-sample losses of one batch, in both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTable {
    pub fg: Vec<f64>,
    pub gf: Vec<f64>,
    pub sample_ids: Vec<u32>,
}

impl LossTable {
    pub fn len(&self) -> usize {
        self.fg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fg.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.fg.iter().chain(self.gf.iter()).all(|v| v.is_finite())
    }
}

pub fn similarity_matrix(emb_f: ArrayView2<f64>, emb_g: ArrayView2<f64>, temp: f64) -> Result<Array2<f64>> {
    if emb_f.dim() != emb_g.dim() {
        return Err(ScanError::Shape(format!("emb_f is {:?} but emb_g is {:?}", emb_f.dim(), emb_g.dim())));
    }
    if temp.is_nan() || temp <= 0.0 {
        return Err(ScanError::NonPositiveTemperature(temp));
    }
    Ok(emb_f.dot(&emb_g.t()) / temp)
}

/// Max-shifted logsumexp split as `(max, ln(sum(exp(v - max))))`. The maximal
/// term contributes exactly 1, so the remainder goes through `ln_1p`, which
/// keeps near-zero losses accurate.
fn logsumexp_parts<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let (arg, max) =
        values.clone().enumerate().fold((usize::MAX, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    if max == f64::NEG_INFINITY {
        return (max, 0.0);
    }
    let rest: f64 = values.enumerate().filter(|&(i, _)| i != arg).map(|(_, &v)| (v - max).exp()).sum();
    (max, rest.ln_1p())
}

fn logsumexp<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let (max, tail) = logsumexp_parts(values);
    max + tail
}

/// `logsumexp(values) - target` without cancelling against the maximum.
fn lse_minus<'a>(values: impl Iterator<Item = &'a f64> + Clone, target: f64) -> f64 {
    let (max, tail) = logsumexp_parts(values);
    ((max - target) + tail).max(0.0)
}

/// Per-sample losses from a square logit matrix, using max-shifted logsumexp.
pub fn per_sample_losses(s: ArrayView2<f64>, ids: &[u32]) -> LossTable {
    assert_eq!(s.nrows(), s.ncols(), "similarity matrix must be square");
    let b = s.nrows();
    let fg = (0..b).map(|i| lse_minus(s.row(i).iter(), s[[i, i]])).collect();
    let gf = (0..b).map(|j| lse_minus(s.column(j).iter(), s[[j, j]])).collect();
    LossTable { fg, gf, sample_ids: ids.to_vec() }
}

pub fn batch_loss(table: &LossTable) -> Result<f64> {
    if table.fg.is_empty() || table.gf.is_empty() {
        return Err(ScanError::EmptyTable);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((mean(&table.fg) + mean(&table.gf)) / 2.0)
}

/// Gradient of one tower, shaped like its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerGrad {
    pub hidden: Option<Array2<f64>>,
    pub out: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tower_f: TowerGrad,
    pub tower_g: TowerGrad,
    pub log_temp: f64,
    pub table: LossTable,
    pub loss: f64,
}

impl Gradients {
    /// Same ordering as [`EncoderParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for t in [&self.tower_f, &self.tower_g] {
            for w in t.hidden.iter().chain(std::iter::once(&t.out)) {
                v.extend(w.iter().copied());
            }
        }
        v.push(self.log_temp);
        v
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl EncoderParams {
    /// Plain SGD step followed by the temperature clamp.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (tower, g) in [(&mut self.tower_f, &grads.tower_f), (&mut self.tower_g, &grads.tower_g)] {
            if let (Some(w), Some(gw)) = (tower.hidden.as_mut(), g.hidden.as_ref()) {
                w.scaled_add(-lr, gw);
            }
            tower.out.scaled_add(-lr, &g.out);
        }
        self.log_temp -= lr * grads.log_temp;
        self.clamp_temperature();
    }
}

struct TowerPass {
    hidden: Option<Array2<f64>>,
    emb: Array2<f64>,
    norms: Vec<f64>,
}

fn tower_pass(tower: &Tower, x: ArrayView2<f64>) -> TowerPass {
    let (hidden, raw) = tower.forward(x);
    let (emb, norms, _) = normalize_rows(&raw);
    TowerPass { hidden, emb, norms }
}

/// Backpropagates `d_emb` (gradient w.r.t. normalized embeddings) through
/// the normalization and the tower weights.
fn tower_backward(tower: &Tower, pass: &TowerPass, x: ArrayView2<f64>, d_emb: &Array2<f64>) -> TowerGrad {
    let mut d_raw = Array2::zeros(d_emb.dim());
    for (i, &norm) in pass.norms.iter().enumerate() {
        if norm == 0.0 {
            continue;
        }
        let e = pass.emb.row(i);
        let g = d_emb.row(i);
        let proj = e.dot(&g);
        let mut row = d_raw.row_mut(i);
        row.assign(&((&g - &(&e * proj)) / norm));
    }
    match (&tower.hidden, &pass.hidden) {
        (None, _) => TowerGrad { hidden: None, out: d_raw.t().dot(&x) },
        (Some(_), Some(act)) => {
            let out = d_raw.t().dot(act);
            let d_act = d_raw.dot(&tower.out);
            let d_pre = &d_act * &act.mapv(|a| 1.0 - a * a);
            TowerGrad { hidden: Some(d_pre.t().dot(&x)), out }
        }
        (Some(_), None) => unreachable!("MLP forward always records activations"),
    }
}

/// Analytic gradients of the batch loss, together with the per-sample loss
/// table produced by the same forward pass.
pub fn gradients(params: &EncoderParams, batch_a: ArrayView2<f64>, batch_b: ArrayView2<f64>, ids: &[u32]) -> Result<Gradients> {
    let b = batch_a.nrows();
    let dim = params.dim();
    if batch_a.ncols() != dim || batch_b.ncols() != params.tower_g.input_dim() || batch_b.nrows() != b {
        return Err(ScanError::Shape(format!("batches {:?} and {:?} do not fit encoder input dim {dim}", batch_a.dim(), batch_b.dim())));
    }
    if ids.len() != b {
        return Err(ScanError::Shape(format!("{} ids for a batch of {b}", ids.len())));
    }
    if b == 0 {
        return Err(ScanError::EmptyTable);
    }
    let temp = params.temperature();
    let pf = tower_pass(&params.tower_f, batch_a);
    let pg = tower_pass(&params.tower_g, batch_b);
    let s = similarity_matrix(pf.emb.view(), pg.emb.view(), temp)?;
    let table = per_sample_losses(s.view(), ids);
    let loss = batch_loss(&table)?;

    // dL/dS = (P - I + Q - I) / (2b) with P row-softmax and Q column-softmax.
    let row_lse: Vec<f64> = s.axis_iter(Axis(0)).map(|r| logsumexp(r.iter())).collect();
    let col_lse: Vec<f64> = s.axis_iter(Axis(1)).map(|c| logsumexp(c.iter())).collect();
    let scale = 1.0 / (2.0 * b as f64);
    let mut d_s = Array2::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            let p = (s[[i, j]] - row_lse[i]).exp();
            let q = (s[[i, j]] - col_lse[j]).exp();
            let diag = if i == j { 2.0 } else { 0.0 };
            d_s[[i, j]] = (p + q - diag) * scale;
        }
    }
    // S = dot / exp(log_temp), so dS/dlog_temp = -S.
    let d_log_temp = -(&d_s * &s).sum();
    let d_emb_f = d_s.dot(&pg.emb) / temp;
    let d_emb_g = d_s.t().dot(&pf.emb) / temp;

    Ok(Gradients {
        tower_f: tower_backward(&params.tower_f, &pf, batch_a, &d_emb_f),
        tower_g: tower_backward(&params.tower_g, &pg, batch_b, &d_emb_g),
        log_temp: d_log_temp,
        table,
        loss,
    })
}
