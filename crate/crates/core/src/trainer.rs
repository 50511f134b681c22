//! Training loops and the linear-probe evaluator.
//!
//! All loops share one implementation: the same parameter initialization, the
//! same per-epoch shuffle stream keyed by `(seed, epoch)` and plain SGD. They
//! differ only in which samples each epoch may use, so a pruned run and a full
//! run are identical up to the first epoch that excludes anything.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::io::{self, Write};
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::config::{Mode, TrainConfig};
use crate::dataset::{floor_count, PairedDataset};
use crate::encoder::{encode, init_params_with, EncoderParams, Side};
use crate::infonce::gradients;
use crate::pruner::{accumulate, active_indices, batch_candidates, sample_pruned, ActiveView, CandidateSet};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::scheduler::{Phase, ScheduleState};
use crate::{Result, ScanError};

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: String,
    pub active_size: usize,
    pub mean_loss_fg: f64,
    pub mean_loss_gf: f64,
    pub rho_cur: f64,
    pub wall_ms: f64,
    pub candidate_size: usize,
}

/// Instrumentation counters for one epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub batches: usize,
    pub forward_passes: usize,
    /// Forward, backward and update time.
    pub train_ns: u128,
    /// Candidate selection, accumulation and mutation sampling time.
    pub bookkeeping_ns: u128,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub params: EncoderParams,
    pub log: Vec<EpochRecord>,
    /// Candidate sets in the order they were built, one per `Prepare` epoch.
    pub candidates: Vec<CandidateSet>,
    /// Excluded ids of every epoch.
    pub excluded: Vec<ActiveView>,
    pub stats: Vec<EpochStats>,
    pub total_ms: f64,
}

impl RunOutput {
    pub fn final_candidates(&self) -> Option<&CandidateSet> {
        self.candidates.last()
    }

    /// Mean number of samples trained on per epoch.
    pub fn mean_epoch_samples(&self) -> f64 {
        self.log.iter().map(|r| r.active_size as f64).sum::<f64>() / self.log.len().max(1) as f64
    }

    /// Metrics as JSON lines. `wall_ms` is written as `null` so files from
    /// identical runs are byte-identical; timings go to [`write_timing`](Self::write_timing).
    pub fn write_metrics<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.log {
            let mut v = serde_json::to_value(r).map_err(io::Error::other)?;
            v["wall_ms"] = serde_json::Value::Null;
            serde_json::to_writer(&mut w, &v).map_err(io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_timing<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (r, s) in self.log.iter().zip(&self.stats) {
            let v = serde_json::json!({
                "epoch": r.epoch,
                "wall_ms": r.wall_ms,
                "train_ms": s.train_ns as f64 / 1e6,
                "bookkeeping_ms": s.bookkeeping_ns as f64 / 1e6,
            });
            serde_json::to_writer(&mut w, &v).map_err(io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

enum Strategy<'a> {
    Full,
    Scan,
    Random,
    Static(&'a [u32]),
}

/// The full pruned-training procedure: warm-up, then rounds of one `Prepare`
/// epoch (train on everything, rebuild candidates from the training losses)
/// and `tau_cos` `Mutate` epochs (train without a random `rho_cur` share of the
/// candidates).
pub fn train_scan(ds: &PairedDataset, cfg: &TrainConfig) -> Result<RunOutput> {
    cfg.validate_for_scan()?;
    run(ds, cfg, Strategy::Scan)
}

pub fn train_full(ds: &PairedDataset, cfg: &TrainConfig) -> Result<RunOutput> {
    cfg.validate()?;
    run(ds, cfg, Strategy::Full)
}

/// After warm-up, every epoch drops `floor(rho * n)` uniformly random samples.
pub fn train_random_baseline(ds: &PairedDataset, cfg: &TrainConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if !(cfg.rho >= 0.0 && cfg.rho < 1.0) {
        return Err(ScanError::InvalidConfig(format!("rho must lie in [0, 1), got {}", cfg.rho)));
    }
    run(ds, cfg, Strategy::Random)
}

/// Trains on `coreset` only, every epoch.
pub fn train_static_coreset(ds: &PairedDataset, coreset: &[u32], cfg: &TrainConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if coreset.is_empty() {
        return Err(ScanError::EmptyCoreset);
    }
    if let Some(&id) = coreset.iter().find(|&&id| id as usize >= ds.len()) {
        return Err(ScanError::IdOutOfRange { id, n: ds.len() });
    }
    run(ds, cfg, Strategy::Static(coreset))
}

fn run(ds: &PairedDataset, cfg: &TrainConfig, strategy: Strategy<'_>) -> Result<RunOutput> {
    if ds.is_empty() {
        return Err(ScanError::InvalidConfig("empty dataset".into()));
    }
    let started = Instant::now();
    let ds: Cow<'_, PairedDataset> = match cfg.mode {
        Mode::Paired => Cow::Borrowed(ds),
        Mode::ViewPair => Cow::Owned(ds.to_view_pair(cfg.view_noise, cfg.seed)),
    };
    let n = ds.len();
    let mut params = init_params_with(cfg.tower, ds.dim(), cfg.hidden_dim, cfg.out_dim, cfg.seed);
    let mut sched = ScheduleState::new(cfg.tau_cos, cfg.tau_stop, cfg.t_td, cfg.epsilon);
    let static_excluded: BTreeSet<u32> = match strategy {
        Strategy::Static(ids) => {
            let keep: BTreeSet<u32> = ids.iter().copied().collect();
            (0..n as u32).filter(|id| !keep.contains(id)).collect()
        }
        _ => BTreeSet::new(),
    };

    let mut out = RunOutput {
        params: params.clone(),
        log: Vec::with_capacity(cfg.tau_stop),
        candidates: Vec::new(),
        excluded: Vec::with_capacity(cfg.tau_stop),
        stats: Vec::with_capacity(cfg.tau_stop),
        total_ms: 0.0,
    };

    for epoch in 0..cfg.tau_stop {
        let epoch_start = Instant::now();
        let mut stats = EpochStats::default();
        let phase = sched.phase();

        let plan_start = Instant::now();
        let (label, view, rho_cur) = match (&strategy, phase) {
            (Strategy::Full, _) => ("full", ActiveView::full(epoch), 0.0),
            (Strategy::Static(_), _) => ("static", ActiveView { excluded: static_excluded.clone(), epoch }, 0.0),
            (_, Phase::WarmUp) => ("warmup", ActiveView::full(epoch), 0.0),
            (Strategy::Random, _) => {
                let k = floor_count(cfg.rho, n);
                let mut rng = stream_rng(cfg.seed, Stream::RandomBaseline, epoch as u64);
                let excluded = index::sample(&mut rng, n, k).into_iter().map(|i| i as u32).collect();
                ("random", ActiveView { excluded, epoch }, cfg.rho)
            }
            (Strategy::Scan, Phase::Prepare) => ("prepare", ActiveView::full(epoch), 0.0),
            (Strategy::Scan, Phase::Mutate(r)) => {
                let cands = out.candidates.last().expect("a prepare epoch precedes every mutate epoch");
                let mut view = sample_pruned(cands, r, derive_seed(cfg.seed, Stream::Mutation, epoch as u64))?;
                view.epoch = epoch;
                ("mutate", view, r)
            }
        };
        let mut active = active_indices(n, &view)?;
        stats.bookkeeping_ns += plan_start.elapsed().as_nanos();

        active.shuffle(&mut stream_rng(cfg.seed, Stream::Shuffle, epoch as u64));
        let collect = matches!(strategy, Strategy::Scan) && phase == Phase::Prepare;
        let mut batch_cands = Vec::new();
        let (mut sum_fg, mut sum_gf) = (0.0, 0.0);

        for batch in active.chunks(cfg.batch_size) {
            let train_start = Instant::now();
            let (a, b) = ds.gather(batch);
            let grads = gradients(&params, a.view(), b.view(), batch)?;
            stats.forward_passes += 1;
            stats.batches += 1;
            if !grads.loss.is_finite() || !grads.table.is_finite() {
                return Err(ScanError::NonFiniteLoss { epoch });
            }
            if epoch == 0 && stats.batches == 1 {
                sched.set_initial_loss(grads.loss);
            }
            params.sgd_step(&grads, cfg.lr);
            if !params.log_temp.is_finite() {
                return Err(ScanError::NonFiniteLoss { epoch });
            }
            sum_fg += grads.table.fg.iter().sum::<f64>();
            sum_gf += grads.table.gf.iter().sum::<f64>();
            stats.train_ns += train_start.elapsed().as_nanos();

            if collect {
                let t = Instant::now();
                batch_cands.push(batch_candidates(&grads.table, cfg.rho)?);
                stats.bookkeeping_ns += t.elapsed().as_nanos();
            }
        }
        if !params.is_finite() {
            return Err(ScanError::NonFiniteLoss { epoch });
        }
        if collect {
            let t = Instant::now();
            out.candidates.push(accumulate(batch_cands, epoch)?);
            stats.bookkeeping_ns += t.elapsed().as_nanos();
        }

        let count = active.len().max(1) as f64;
        let (mean_fg, mean_gf) = (sum_fg / count, sum_gf / count);
        sched.finish_epoch((mean_fg + mean_gf) / 2.0);
        let candidate_size = match strategy {
            Strategy::Scan => out.candidates.last().map_or(0, CandidateSet::len),
            _ => 0,
        };
        out.log.push(EpochRecord {
            epoch,
            phase: label.to_string(),
            active_size: active.len(),
            mean_loss_fg: mean_fg,
            mean_loss_gf: mean_gf,
            rho_cur,
            wall_ms: epoch_start.elapsed().as_secs_f64() * 1e3,
            candidate_size,
        });
        out.excluded.push(view);
        out.stats.push(stats);
    }
    out.params = params;
    out.total_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(out)
}

pub const PROBE_STEPS: usize = 200;
pub const PROBE_LR: f64 = 0.5;
pub const PROBE_TRAIN_FRAC: f64 = 0.8;

/// Test accuracy of a multinomial logistic regression fit on frozen tower-f
/// embeddings of view A. The 80/20 split is drawn from `probe_seed`; the
/// classifier starts at zero and takes `PROBE_STEPS` full-batch gradient steps.
pub fn linear_probe(params: &EncoderParams, ds: &PairedDataset, probe_seed: u64) -> Result<f64> {
    let labels = ds.labels();
    let distinct: BTreeSet<u32> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(ScanError::SingleClass);
    }
    let n = ds.len();
    let all: Vec<u32> = (0..n as u32).collect();
    let (a, _) = ds.gather(&all);
    let emb = encode(params, Side::F, a.view())?.embeddings;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(probe_seed, Stream::Probe, 0));
    let n_train = ((n as f64 * PROBE_TRAIN_FRAC).floor() as usize).clamp(1, n - 1);
    let (train, test) = order.split_at(n_train);

    let classes = ds.num_classes();
    let features = |rows: &[usize]| {
        let d = emb.ncols();
        Array2::from_shape_fn((rows.len(), d + 1), |(r, c)| if c == d { 1.0 } else { emb[[rows[r], c]] })
    };
    let x_train = features(train);
    let x_test = features(test);
    let mut y = Array2::<f64>::zeros((train.len(), classes));
    for (r, &i) in train.iter().enumerate() {
        y[[r, labels[i] as usize]] = 1.0;
    }

    let mut w = Array2::<f64>::zeros((classes, x_train.ncols()));
    for _ in 0..PROBE_STEPS {
        let mut p = x_train.dot(&w.t());
        for mut row in p.axis_iter_mut(Axis(0)) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let s = row.sum();
            row /= s;
        }
        let grad = (p - &y).t().dot(&x_train) / train.len() as f64;
        w.scaled_add(-PROBE_LR, &grad);
    }

    let logits = x_test.dot(&w.t());
    let correct = test
        .iter()
        .zip(logits.axis_iter(Axis(0)))
        .filter(|(&i, row)| {
            let pred = row.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best }).0;
            pred == labels[i] as usize
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}
