//! Reference implementations used as test oracles. They are written for
//! clarity, not speed, and share no code with the library's hot paths.

#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use scan_core::encoder::Tower;
use scan_core::{EncoderParams, GenSpec, TrainConfig};

/// Row-wise L2 normalization; zero rows stay zero.
pub fn normalize(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

pub fn tower_forward(t: &Tower, x: &Array2<f64>) -> Array2<f64> {
    let (b, d) = x.dim();
    let input = match &t.hidden {
        None => x.clone(),
        Some(h) => Array2::from_shape_fn((b, h.nrows()), |(i, j)| (0..d).map(|c| h[[j, c]] * x[[i, c]]).sum::<f64>().tanh()),
    };
    let w = &t.out;
    Array2::from_shape_fn((b, w.nrows()), |(i, j)| (0..w.ncols()).map(|c| w[[j, c]] * input[[i, c]]).sum())
}

/// Monolithic bidirectional InfoNCE, written as the mean of two softmax
/// cross-entropies over the similarity matrix.
pub fn monolithic_loss(ef: &Array2<f64>, eg: &Array2<f64>, temp: f64) -> f64 {
    let b = ef.nrows();
    let s = Array2::from_shape_fn((b, b), |(i, j)| ef.row(i).dot(&eg.row(j)) / temp);
    let mut total = 0.0;
    for i in 0..b {
        let row: f64 = (0..b).map(|j| s[[i, j]].exp()).sum();
        let col: f64 = (0..b).map(|j| s[[j, i]].exp()).sum();
        total -= (s[[i, i]].exp() / row).ln();
        total -= (s[[i, i]].exp() / col).ln();
    }
    total / (2.0 * b as f64)
}

/// The full batch loss computed from raw inputs, independent of the library's forward pass.
pub fn reference_loss(p: &EncoderParams, a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let ef = normalize(&tower_forward(&p.tower_f, a));
    let eg = normalize(&tower_forward(&p.tower_g, b));
    monolithic_loss(&ef, &eg, p.log_temp.exp())
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Brute-force selection: repeatedly extract the extreme (loss, id) pair.
pub fn selection_oracle(losses: &[f64], ids: &[u32], k: usize) -> (Vec<u32>, Vec<u32>) {
    let mut pool: Vec<(f64, u32)> = losses.iter().copied().zip(ids.iter().copied()).collect();
    let less = |x: &(f64, u32), y: &(f64, u32)| x.0 < y.0 || (x.0 == y.0 && x.1 < y.1);
    let mut red = Vec::new();
    let mut rest = pool.clone();
    for _ in 0..k {
        let mut best = 0;
        for i in 1..rest.len() {
            if less(&rest[i], &rest[best]) {
                best = i;
            }
        }
        red.push(rest.remove(best).1);
    }
    let mut ill = Vec::new();
    for _ in 0..k {
        let mut best = 0;
        for i in 1..pool.len() {
            if less(&pool[best], &pool[i]) {
                best = i;
            }
        }
        ill.push(pool.remove(best).1);
    }
    (red, ill)
}

/// The planted-corruption corpus used by the quality checks.
pub fn corpus(seed: u64) -> GenSpec {
    GenSpec { n: 2000, dim: 128, num_classes: 32, mismatch_frac: 0.1, duplicate_frac: 0.1, noise_sigma: 0.1, seed }
}

/// Training config paired with [`corpus`]: a 4-d embedding keeps the probe
/// away from saturation so representation quality differences show.
pub fn corpus_config(seed: u64) -> TrainConfig {
    TrainConfig { seed, lr: 0.1, out_dim: 4, ..TrainConfig::default() }
}

/// Small, fast setup for trainer behavior tests.
pub fn small_spec(seed: u64) -> GenSpec {
    GenSpec { n: 240, dim: 12, num_classes: 4, mismatch_frac: 0.1, duplicate_frac: 0.1, noise_sigma: 0.1, seed }
}

pub fn small_config(seed: u64) -> TrainConfig {
    TrainConfig { seed, batch_size: 32, out_dim: 6, tau_stop: 12, ..TrainConfig::default() }
}
