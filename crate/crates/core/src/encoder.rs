//! Two-tower encoder. Each tower is either a single linear map or a
//! one-hidden-layer tanh MLP, followed by L2 normalization of every row.
//! Neither layer has a bias, so a linear tower is positively homogeneous and
//! its normalized output is invariant to input scale.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};
use crate::{Result, ScanError};

/// Initial temperature, the usual CLIP starting point.
pub const INIT_TEMPERATURE: f64 = 0.07;
pub const MIN_TEMPERATURE: f64 = 0.01;
pub const MAX_TEMPERATURE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TowerKind {
    Linear,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    F,
    G,
}

/// Weights of one tower. `hidden` is `hidden_dim x dim` for MLP towers;
/// `out` maps the (hidden or raw) input to the embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Tower {
    pub hidden: Option<Array2<f64>>,
    pub out: Array2<f64>,
}

impl Tower {
    fn init<R: Rng>(rng: &mut R, kind: TowerKind, dim: usize, hidden_dim: usize, out_dim: usize) -> Self {
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
        };
        match kind {
            TowerKind::Linear => Tower { hidden: None, out: uniform(out_dim, dim) },
            TowerKind::Mlp => {
                let hidden = uniform(hidden_dim, dim);
                Tower { hidden: Some(hidden), out: uniform(out_dim, hidden_dim) }
            }
        }
    }

    pub fn kind(&self) -> TowerKind {
        if self.hidden.is_some() {
            TowerKind::Mlp
        } else {
            TowerKind::Linear
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.as_ref().map_or(self.out.ncols(), |h| h.ncols())
    }

    pub fn out_dim(&self) -> usize {
        self.out.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.as_ref().map_or(0, |h| h.nrows())
    }

    /// Pre-normalization forward pass. Returns `(hidden activations, output)`.
    pub(crate) fn forward(&self, x: ArrayView2<f64>) -> (Option<Array2<f64>>, Array2<f64>) {
        match &self.hidden {
            None => (None, x.dot(&self.out.t())),
            Some(h) => {
                let act = x.dot(&h.t()).mapv(f64::tanh);
                let out = act.dot(&self.out.t());
                (Some(act), out)
            }
        }
    }

    pub(crate) fn weights(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.hidden.iter().chain(std::iter::once(&self.out))
    }

    pub(crate) fn weights_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.hidden.iter_mut().chain(std::iter::once(&mut self.out))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub tower_f: Tower,
    pub tower_g: Tower,
    pub log_temp: f64,
}

impl EncoderParams {
    pub fn temperature(&self) -> f64 {
        self.log_temp.exp()
    }

    pub fn dim(&self) -> usize {
        self.tower_f.input_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.tower_f.out_dim()
    }

    pub fn kind(&self) -> TowerKind {
        self.tower_f.kind()
    }

    pub fn tower(&self, side: Side) -> &Tower {
        match side {
            Side::F => &self.tower_f,
            Side::G => &self.tower_g,
        }
    }

    /// Clamps the temperature into `[MIN_TEMPERATURE, MAX_TEMPERATURE]`.
    pub fn clamp_temperature(&mut self) {
        self.log_temp = self.log_temp.clamp(MIN_TEMPERATURE.ln(), MAX_TEMPERATURE.ln());
    }

    /// All parameters in a fixed order: tower f weights, tower g weights, log_temp.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.tower_f.weights().chain(self.tower_g.weights()).flat_map(|w| w.iter().copied()).collect();
        v.push(self.log_temp);
        v
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if values.len() != expected {
            return Err(ScanError::Shape(format!("expected {expected} parameters, got {}", values.len())));
        }
        let mut it = values.iter().copied();
        for w in self.tower_f.weights_mut().chain(self.tower_g.weights_mut()) {
            for x in w.iter_mut() {
                *x = it.next().expect("length checked");
            }
        }
        self.log_temp = it.next().expect("length checked");
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.tower_f.weights().chain(self.tower_g.weights()).map(|w| w.len()).sum::<usize>() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Linear two-tower parameters with weights uniform in `[-1/sqrt(dim), 1/sqrt(dim)]`.
pub fn init_params(dim: usize, out_dim: usize, seed: u64) -> EncoderParams {
    init_params_with(TowerKind::Linear, dim, dim, out_dim, seed)
}

pub fn init_params_with(kind: TowerKind, dim: usize, hidden_dim: usize, out_dim: usize, seed: u64) -> EncoderParams {
    assert!(dim >= 1 && out_dim >= 1 && hidden_dim >= 1, "encoder dimensions must be >= 1");
    let mut rng = stream_rng(seed, Stream::Init, 0);
    let tower_f = Tower::init(&mut rng, kind, dim, hidden_dim, out_dim);
    let tower_g = Tower::init(&mut rng, kind, dim, hidden_dim, out_dim);
    EncoderParams { tower_f, tower_g, log_temp: INIT_TEMPERATURE.ln() }
}

/// Normalized embeddings plus the rows whose pre-normalization output was exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub embeddings: Array2<f64>,
    pub zero_rows: Vec<usize>,
}

pub(crate) fn normalize_rows(raw: &Array2<f64>) -> (Array2<f64>, Vec<f64>, Vec<usize>) {
    let mut out = raw.clone();
    let mut norms = Vec::with_capacity(raw.nrows());
    let mut zero_rows = Vec::new();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            zero_rows.push(i);
        } else {
            row /= norm;
        }
        norms.push(norm);
    }
    (out, norms, zero_rows)
}

pub fn encode(params: &EncoderParams, side: Side, x: ArrayView2<f64>) -> Result<Encoded> {
    let tower = params.tower(side);
    if x.ncols() != tower.input_dim() {
        return Err(ScanError::Shape(format!("input has {} columns, tower expects {}", x.ncols(), tower.input_dim())));
    }
    let (_, raw) = tower.forward(x);
    let (embeddings, _, zero_rows) = normalize_rows(&raw);
    Ok(Encoded { embeddings, zero_rows })
}
