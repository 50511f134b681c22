//! Round control: warm-up termination, phase sequencing and the
//! cosine-annealed mutation ratio.
//!
//! After warm-up every round is one `Prepare` epoch (full data, candidates
//! rebuilt) followed by `tau_cos` `Mutate` epochs. Round offsets count from the
//! first post-warm-up epoch, so that epoch is always a `Prepare` epoch.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const DEFAULT_TAU_COS: usize = 3;
pub const DEFAULT_T_TD: f64 = 0.3;
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// True once the relative epoch-to-epoch loss drop falls below `t_td`.
///
/// A drop at or above the threshold means training is still moving fast and
/// the full dataset keeps being used.
pub fn should_start_pruning(l_prev: f64, l_cur: f64, t_td: f64, epsilon: f64) -> bool {
    (l_prev - l_cur) / (l_prev + epsilon) < t_td
}

/// Fraction of the candidate set pruned at round offset `tau_cur`:
/// `0.5 * (1 + cos((tau_cos - tau_cur mod (tau_cos + 1)) * pi / tau_cos))`.
pub fn mutation_ratio(tau_cur: usize, tau_cos: usize) -> f64 {
    assert!(tau_cos >= 1, "tau_cos must be >= 1");
    let offset = tau_cur % (tau_cos + 1);
    let angle = (tau_cos - offset) as f64 * PI / tau_cos as f64;
    // Pin the endpoints; cos(pi) is not exactly -1 in floating point.
    if offset == 0 {
        0.0
    } else if offset == tau_cos {
        1.0
    } else {
        0.5 * (1.0 + angle.cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Phase {
    WarmUp,
    Prepare,
    Mutate(f64),
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::WarmUp => "warmup",
            Phase::Prepare => "prepare",
            Phase::Mutate(_) => "mutate",
        }
    }

    pub fn rho_cur(&self) -> f64 {
        match self {
            Phase::Mutate(r) => *r,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub tau_cur: usize,
    pub tau_cos: usize,
    pub tau_stop: usize,
    pub warmup_done: bool,
    /// First post-warm-up epoch, once known.
    pub warmup_end: Option<usize>,
    pub l_prev: f64,
    pub l_cur: f64,
    pub t_td: f64,
    pub epsilon: f64,
}

impl ScheduleState {
    pub fn new(tau_cos: usize, tau_stop: usize, t_td: f64, epsilon: f64) -> Self {
        assert!(tau_cos >= 1, "tau_cos must be >= 1");
        Self { tau_cur: 0, tau_cos, tau_stop, warmup_done: false, warmup_end: None, l_prev: 0.0, l_cur: 0.0, t_td, epsilon }
    }

    /// A schedule whose warm-up is already over after `warmup_epochs` epochs.
    pub fn with_fixed_warmup(tau_cos: usize, tau_stop: usize, warmup_epochs: usize) -> Self {
        let mut s = Self::new(tau_cos, tau_stop, DEFAULT_T_TD, DEFAULT_EPSILON);
        if warmup_epochs == 0 {
            s.warmup_done = true;
            s.warmup_end = Some(0);
        } else {
            s.warmup_end = Some(warmup_epochs);
        }
        s
    }

    /// Epoch at which warm-up is forced to end: `ceil(tau_stop / 4)`.
    pub fn warmup_cap(&self) -> usize {
        self.tau_stop.div_ceil(4).max(1)
    }

    /// Seeds the loss history with the loss observed before any update.
    pub fn set_initial_loss(&mut self, loss: f64) {
        self.l_cur = loss;
    }

    pub fn phase(&self) -> Phase {
        round_phase(self)
    }

    /// Closes the current epoch with its mean loss and advances `tau_cur`.
    pub fn finish_epoch(&mut self, mean_loss: f64) {
        if !self.warmup_done {
            self.l_prev = self.l_cur;
            self.l_cur = mean_loss;
            let next = self.tau_cur + 1;
            let done = match self.warmup_end {
                Some(fixed) => next >= fixed,
                None => should_start_pruning(self.l_prev, self.l_cur, self.t_td, self.epsilon) || next >= self.warmup_cap(),
            };
            if done {
                self.warmup_done = true;
                self.warmup_end = Some(next);
            }
        }
        self.tau_cur += 1;
    }

    /// Epoch offset within the post-warm-up round sequence.
    pub fn round_offset(&self) -> Option<usize> {
        if !self.warmup_done {
            return None;
        }
        self.warmup_end.map(|e| self.tau_cur - e)
    }
}

pub fn round_phase(state: &ScheduleState) -> Phase {
    match state.round_offset() {
        None => Phase::WarmUp,
        Some(offset) if offset % (state.tau_cos + 1) == 0 => Phase::Prepare,
        Some(offset) => Phase::Mutate(mutation_ratio(offset, state.tau_cos)),
    }
}

/// Phases for `epochs` epochs of a schedule whose warm-up lasts exactly `warmup_epochs`.
pub fn phase_table(tau_cos: usize, epochs: usize, warmup_epochs: usize) -> Vec<Phase> {
    let mut s = ScheduleState::with_fixed_warmup(tau_cos, epochs, warmup_epochs);
    let mut out = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        out.push(s.phase());
        s.finish_epoch(0.0);
    }
    out
}
