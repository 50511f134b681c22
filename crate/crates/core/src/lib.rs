//! Bootstrapping dataset pruning for two-tower contrastive training.
//!
//! The crate trains a two-tower encoder with a bidirectional InfoNCE objective
//! and, while training, tracks which samples look *redundant* (smallest
//! per-sample loss in a batch) or *ill-matched* (largest loss). Those samples
//! form a candidate set that is rebuilt once per round and pruned on a
//! cosine-annealed schedule, growing back to the full dataset at every round
//! boundary. Static coresets can be exported from the candidate sets of two runs.
//!
//! Module map:
//!
//! * [`dataset`]: synthetic paired corpora with planted corruptions and their binary format.
//! * [`encoder`]: linear or one-hidden-layer towers with L2-normalized outputs.
//! * [`infonce`]: per-sample InfoNCE losses and analytic gradients.
//! * [`scheduler`]: warm-up test, round phases and the mutation ratio.
//! * [`pruner`]: per-batch candidate selection, accumulation and random pruning.
//! * [`trainer`]: the training loops (pruned, full, random, static coreset) and the linear probe.
//! * [`coreset`]: coreset export and overlap diagnostics.
//! * [`checkpoint`]: binary persistence of encoder parameters.

pub mod checkpoint;
pub mod config;
pub mod coreset;
pub mod dataset;
pub mod encoder;
mod error;
pub mod infonce;
pub mod pruner;
pub mod rng;
pub mod scheduler;
pub mod trainer;

pub use config::{Mode, TrainConfig};
pub use coreset::{export_coreset, overlap_ratio, random_coreset, PrunedSummary};
pub use dataset::{generate_paired_dataset, load_dataset, save_dataset, Corruption, GenSpec, PairedDataset};
pub use encoder::{encode, init_params, EncoderParams, Side, TowerKind};
pub use error::{Result, ScanError};
pub use infonce::{batch_loss, gradients, per_sample_losses, similarity_matrix, Gradients, LossTable};
pub use pruner::{
    accumulate, active_indices, merge_directions, sample_pruned, select_batch_candidates, ActiveView, CandidateEntry, CandidateSet, Tag,
};
pub use scheduler::{mutation_ratio, round_phase, should_start_pruning, Phase, ScheduleState};
pub use trainer::{linear_probe, train_full, train_random_baseline, train_scan, train_static_coreset, EpochRecord, RunOutput};
