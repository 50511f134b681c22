//! Training configuration and its flat `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::TowerKind;
use crate::scheduler::{DEFAULT_EPSILON, DEFAULT_TAU_COS, DEFAULT_T_TD};
use crate::{Result, ScanError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Two distinct modalities, one per tower.
    Paired,
    /// Both towers see noisy copies of view A.
    ViewPair,
}

impl FromStr for Mode {
    type Err = ScanError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paired" => Ok(Mode::Paired),
            "view_pair" => Ok(Mode::ViewPair),
            _ => Err(ScanError::InvalidConfig(format!("unknown mode {s:?}"))),
        }
    }
}

impl FromStr for TowerKind {
    type Err = ScanError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(TowerKind::Linear),
            "mlp" => Ok(TowerKind::Mlp),
            _ => Err(ScanError::InvalidConfig(format!("unknown tower {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Target average pruning ratio.
    pub rho: f64,
    pub tau_cos: usize,
    pub tau_stop: usize,
    pub t_td: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub out_dim: usize,
    /// Hidden width of MLP towers; ignored for linear towers.
    pub hidden_dim: usize,
    pub seed: u64,
    pub mode: Mode,
    pub tower: TowerKind,
    /// Noise scale used to build the second view in `ViewPair` mode.
    pub view_noise: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rho: 0.3,
            tau_cos: DEFAULT_TAU_COS,
            tau_stop: 32,
            t_td: DEFAULT_T_TD,
            epsilon: DEFAULT_EPSILON,
            batch_size: 128,
            lr: 0.05,
            out_dim: 16,
            hidden_dim: 32,
            seed: 0,
            mode: Mode::Paired,
            tower: TowerKind::Linear,
            view_noise: 0.1,
        }
    }
}

pub const CONFIG_KEYS: &[&str] =
    &["rho", "tau_cos", "tau_stop", "t_td", "epsilon", "batch_size", "lr", "out_dim", "hidden_dim", "seed", "mode", "tower", "view_noise"];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| ScanError::InvalidConfig(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    /// Checks the invariants shared by every training loop.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ScanError::InvalidConfig(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.tau_cos < 1 {
            return bad("tau_cos must be >= 1".into());
        }
        if self.tau_stop <= self.tau_cos {
            return bad(format!("tau_stop ({}) must exceed tau_cos ({})", self.tau_stop, self.tau_cos));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive and finite, got {}", self.lr));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !self.t_td.is_finite() {
            return bad("t_td must be finite".into());
        }
        if self.out_dim == 0 || self.hidden_dim == 0 {
            return bad("out_dim and hidden_dim must be >= 1".into());
        }
        if !(self.view_noise >= 0.0 && self.view_noise.is_finite()) {
            return bad(format!("view_noise must be finite and >= 0, got {}", self.view_noise));
        }
        Ok(())
    }

    /// Adds the pruning-ratio bound of the bootstrapped schedule, `0 < rho < 0.5`.
    pub fn validate_for_scan(&self) -> Result<()> {
        self.validate()?;
        if !(self.rho > 0.0 && self.rho < 0.5) {
            return Err(ScanError::InvalidConfig(format!("rho must lie in (0, 0.5), got {}", self.rho)));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "rho" => self.rho = parse(key, value)?,
            "tau_cos" => self.tau_cos = parse(key, value)?,
            "tau_stop" | "epochs" => self.tau_stop = parse(key, value)?,
            "t_td" => self.t_td = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "out_dim" => self.out_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "tower" => self.tower = value.parse()?,
            "view_noise" => self.view_noise = parse(key, value)?,
            _ => return Err(ScanError::InvalidConfig(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values. String values
    /// may be quoted, so TOML-style files with only flat keys parse too.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ScanError::InvalidConfig(format!("line {}: expected key = value", no + 1)))?;
            let v = v.trim();
            let v = v.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(v);
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mode = match self.mode {
            Mode::Paired => "paired",
            Mode::ViewPair => "view_pair",
        };
        let tower = match self.tower {
            TowerKind::Linear => "linear",
            TowerKind::Mlp => "mlp",
        };
        let mut s = String::new();
        let _ = writeln!(s, "rho = {:?}", self.rho);
        let _ = writeln!(s, "tau_cos = {}", self.tau_cos);
        let _ = writeln!(s, "tau_stop = {}", self.tau_stop);
        let _ = writeln!(s, "t_td = {:?}", self.t_td);
        let _ = writeln!(s, "epsilon = {:?}", self.epsilon);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr = {:?}", self.lr);
        let _ = writeln!(s, "out_dim = {}", self.out_dim);
        let _ = writeln!(s, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "mode = {mode}");
        let _ = writeln!(s, "tower = {tower}");
        let _ = writeln!(s, "view_noise = {:?}", self.view_noise);
        s
    }
}
