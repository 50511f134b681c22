//! Candidate selection and dataset mutation.
//!
//! In a `Prepare` epoch every batch nominates its `k = floor(rho * b)` lowest-loss
//! samples as redundant and its `k` highest-loss samples as ill-matched, once
//! per loss direction. The two directions are merged (intersection first, then
//! a rank-sum top-up so each category holds exactly `k` ids) and the per-batch
//! results are unioned into the epoch's candidate set. `Mutate` epochs then drop
//! a uniformly random `rho_cur` fraction of that set.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::floor_count;
use crate::infonce::LossTable;
use crate::rng::{stream_rng, Stream};
use crate::{Result, ScanError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tag {
    Redundant,
    IllMatched,
}

impl Tag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tag::Redundant => "redundant",
            Tag::IllMatched => "ill_matched",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "redundant" => Some(Tag::Redundant),
            "ill_matched" => Some(Tag::IllMatched),
            _ => None,
        }
    }
}

/// `rank_score` lies in `[0, 1]`; larger means more confidently in its category.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub id: u32,
    pub tag: Tag,
    pub rank_score: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub entries: Vec<CandidateEntry>,
    pub built_at_epoch: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<u32> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn ids_tagged(&self, tag: Tag) -> BTreeSet<u32> {
        self.entries.iter().filter(|e| e.tag == tag).map(|e| e.id).collect()
    }

    /// Tab-separated dump: a header `# epoch=<e> entries=<m>`, then `id\ttag\trank_score` lines.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# epoch={} entries={}", self.built_at_epoch, self.entries.len())?;
        for e in &self.entries {
            writeln!(w, "{}\t{}\t{:?}", e.id, e.tag.as_str(), e.rank_score)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut set = CandidateSet::default();
        for (no, line) in r.lines().enumerate() {
            let line = line.map_err(|e| ScanError::Parse(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                for kv in header.split_whitespace() {
                    if let Some(v) = kv.strip_prefix("epoch=") {
                        set.built_at_epoch = v.parse().map_err(|_| ScanError::Parse(format!("bad epoch {v:?}")))?;
                    }
                }
                continue;
            }
            let bad = || ScanError::Parse(format!("line {}: expected id, tag, score: {line:?}", no + 1));
            let mut parts = line.split('\t');
            let id = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let tag = parts.next().and_then(Tag::parse).ok_or_else(bad)?;
            let rank_score = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            set.entries.push(CandidateEntry { id, tag, rank_score });
        }
        Ok(set)
    }
}

/// One direction's picks for a batch, each list ordered from most to least confident.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct BatchSelection {
    pub red: Vec<u32>,
    pub ill: Vec<u32>,
}

/// Per-category count for a batch of `batch_len` samples.
pub fn per_category_count(rho: f64, batch_len: usize) -> usize {
    floor_count(rho, batch_len)
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < 0.5 {
        Ok(())
    } else {
        Err(ScanError::RatioOutOfRange(rho))
    }
}

/// Sorts positions by `(loss, id)` ascending.
/// Maps an f64 to a u64 whose unsigned order matches `f64::total_cmp`.
fn total_order_key(x: f64) -> u64 {
    let bits = x.to_bits() as i64;
    let flipped = bits ^ ((((bits >> 63) as u64) >> 1) as i64);
    (flipped as u64) ^ (1 << 63)
}

/// Batch positions by ascending (loss, id).
fn order_by_loss(losses: &[f64], ids: &[u32]) -> Vec<usize> {
    let mut keys: Vec<(u64, u32, u32)> =
        losses.iter().zip(ids).enumerate().map(|(p, (&l, &id))| (total_order_key(l), id, p as u32)).collect();
    keys.sort_unstable();
    keys.into_iter().map(|k| k.2 as usize).collect()
}

fn selection_from_order(order: &[usize], ids: &[u32], k: usize) -> BatchSelection {
    BatchSelection {
        red: order[..k].iter().map(|&p| ids[p]).collect(),
        ill: order[order.len() - k..].iter().rev().map(|&p| ids[p]).collect(),
    }
}

/// The `k` smallest-loss ids (redundant) and `k` largest-loss ids (ill-matched),
/// with `k = floor(rho * len)`. Ties fall back to ascending id.
pub fn select_batch_candidates(losses: &[f64], ids: &[u32], rho: f64) -> Result<BatchSelection> {
    check_rho(rho)?;
    if losses.len() != ids.len() {
        return Err(ScanError::Shape(format!("{} losses for {} ids", losses.len(), ids.len())));
    }
    let k = per_category_count(rho, losses.len());
    Ok(selection_from_order(&order_by_loss(losses, ids), ids, k))
}

/// Combined two-direction ranking used to top up the merged sets.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedFallback {
    /// Ids by ascending rank sum (most redundant first).
    pub red_order: Vec<u32>,
    /// Ids by descending rank sum (most ill-matched first).
    pub ill_order: Vec<u32>,
    /// `(id, rank sum)` sorted by id.
    rank_sum: Vec<(u32, usize)>,
    batch_len: usize,
}

impl RankedFallback {
    pub fn from_losses(fg: &[f64], gf: &[f64], ids: &[u32]) -> Self {
        Self::from_orders(&order_by_loss(fg, ids), &order_by_loss(gf, ids), ids)
    }

    fn from_orders(fg_order: &[usize], gf_order: &[usize], ids: &[u32]) -> Self {
        let b = ids.len();
        let mut rank_sum = vec![0usize; b];
        for order in [fg_order, gf_order] {
            for (rank, &p) in order.iter().enumerate() {
                rank_sum[p] += rank;
            }
        }
        // Rank sums are below 2^32 for any batch that fits in memory, so
        // (rank sum, id) packs into one u64 sort key.
        let mut red: Vec<u64> = rank_sum.iter().zip(ids).map(|(&r, &id)| ((r as u64) << 32) | id as u64).collect();
        red.sort_unstable();
        let mut ill: Vec<u64> = rank_sum.iter().zip(ids).map(|(&r, &id)| ((u32::MAX as u64 - r as u64) << 32) | id as u64).collect();
        ill.sort_unstable();
        let mut by_id: Vec<(u32, usize)> = ids.iter().copied().zip(rank_sum).collect();
        by_id.sort_unstable();
        Self {
            red_order: red.into_iter().map(|k| k as u32).collect(),
            ill_order: ill.into_iter().map(|k| k as u32).collect(),
            rank_sum: by_id,
            batch_len: b,
        }
    }

    fn score(&self, id: u32, tag: Tag) -> f64 {
        if self.batch_len < 2 {
            return 0.0;
        }
        let rs = match self.rank_sum.binary_search_by_key(&id, |e| e.0) {
            Ok(i) => self.rank_sum[i].1 as f64,
            Err(_) => 0.0,
        };
        let frac = rs / (2.0 * (self.batch_len - 1) as f64);
        match tag {
            Tag::Redundant => 1.0 - frac,
            Tag::IllMatched => frac,
        }
    }
}

/// Small sorted id set; batches hold at most a few hundred ids.
struct IdSet(Vec<u32>);

impl IdSet {
    fn from(ids: &[u32]) -> Self {
        let mut v = ids.to_vec();
        v.sort_unstable();
        Self(v)
    }

    fn contains(&self, id: u32) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    fn insert(&mut self, id: u32) -> bool {
        match self.0.binary_search(&id) {
            Ok(_) => false,
            Err(i) => {
                self.0.insert(i, id);
                true
            }
        }
    }
}

/// Merges the per-direction picks of one batch into tagged candidates.
///
/// Ids picked by both directions form the core of each category; the rest of
/// the `target / 2` slots per category come from `fallback`. Redundant slots are
/// filled first and an id never receives both tags.
pub fn merge_directions(fg: &BatchSelection, gf: &BatchSelection, target: usize, fallback: &RankedFallback) -> Vec<CandidateEntry> {
    let k = target / 2;
    let gf_red = IdSet::from(&gf.red);
    let gf_ill = IdSet::from(&gf.ill);
    let core_red: Vec<u32> = fg.red.iter().copied().filter(|&id| gf_red.contains(id)).collect();
    let core_ill: Vec<u32> = fg.ill.iter().copied().filter(|&id| gf_ill.contains(id)).collect();

    let mut taken = IdSet::from(&core_red);
    for &id in &core_ill {
        taken.insert(id);
    }
    let mut red = core_red;
    for &id in &fallback.red_order {
        if red.len() >= k {
            break;
        }
        if taken.insert(id) {
            red.push(id);
        }
    }
    let mut ill = core_ill;
    for &id in &fallback.ill_order {
        if ill.len() >= k {
            break;
        }
        if taken.insert(id) {
            ill.push(id);
        }
    }
    let mut out = Vec::with_capacity(red.len() + ill.len());
    out.extend(red.into_iter().map(|id| CandidateEntry { id, tag: Tag::Redundant, rank_score: fallback.score(id, Tag::Redundant) }));
    out.extend(ill.into_iter().map(|id| CandidateEntry { id, tag: Tag::IllMatched, rank_score: fallback.score(id, Tag::IllMatched) }));
    out
}

/// Candidates of one batch from its loss table: selection per direction, then merge.
pub fn batch_candidates(table: &LossTable, rho: f64) -> Result<Vec<CandidateEntry>> {
    check_rho(rho)?;
    let ids = &table.sample_ids;
    if table.fg.len() != ids.len() || table.gf.len() != ids.len() {
        return Err(ScanError::Shape(format!("loss table of {}/{} rows for {} ids", table.fg.len(), table.gf.len(), ids.len())));
    }
    let k = per_category_count(rho, ids.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    let fg_order = order_by_loss(&table.fg, ids);
    let gf_order = order_by_loss(&table.gf, ids);
    let fg = selection_from_order(&fg_order, ids, k);
    let gf = selection_from_order(&gf_order, ids, k);
    let fallback = RankedFallback::from_orders(&fg_order, &gf_order, ids);
    Ok(merge_directions(&fg, &gf, 2 * k, &fallback))
}

/// Ordered union of the per-batch candidates of one epoch.
pub fn accumulate<I>(batches: I, epoch: usize) -> Result<CandidateSet>
where
    I: IntoIterator<Item = Vec<CandidateEntry>>,
{
    let mut seen: Vec<bool> = Vec::new();
    let mut entries = Vec::new();
    for batch in batches {
        for e in batch {
            let slot = e.id as usize;
            if slot >= seen.len() {
                seen.resize(slot + 1, false);
            }
            if std::mem::replace(&mut seen[slot], true) {
                return Err(ScanError::DuplicateCandidate { id: e.id, epoch });
            }
            entries.push(e);
        }
    }
    Ok(CandidateSet { entries, built_at_epoch: epoch })
}

/// Ids excluded from training in one epoch.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ActiveView {
    pub excluded: BTreeSet<u32>,
    pub epoch: usize,
}

impl ActiveView {
    pub fn full(epoch: usize) -> Self {
        Self { excluded: BTreeSet::new(), epoch }
    }

    /// Newline-delimited id dump with a `# epoch=<e> rho_cur=<r>` header.
    pub fn write_dump<W: Write>(&self, mut w: W, rho_cur: f64) -> io::Result<()> {
        writeln!(w, "# epoch={} rho_cur={:?}", self.epoch, rho_cur)?;
        for id in &self.excluded {
            writeln!(w, "{id}")?;
        }
        Ok(())
    }
}

/// Uniformly samples `round(rho_cur * |candidates|)` candidate ids for exclusion.
pub fn sample_pruned(candidates: &CandidateSet, rho_cur: f64, seed: u64) -> Result<ActiveView> {
    if !(0.0..=1.0).contains(&rho_cur) {
        return Err(ScanError::RatioOutOfRange(rho_cur));
    }
    let m = candidates.len();
    let amount = ((rho_cur * m as f64).round() as usize).min(m);
    let mut rng = stream_rng(seed, Stream::Mutation, candidates.built_at_epoch as u64);
    let excluded = index::sample(&mut rng, m, amount).into_iter().map(|p| candidates.entries[p].id).collect();
    Ok(ActiveView { excluded, epoch: candidates.built_at_epoch })
}

/// Sorted ids of `0..n` that are not excluded.
pub fn active_indices(n: usize, view: &ActiveView) -> Result<Vec<u32>> {
    if let Some(&id) = view.excluded.iter().next_back() {
        if id as usize >= n {
            return Err(ScanError::IdOutOfRange { id, n });
        }
    }
    let mut keep = vec![true; n];
    for &id in &view.excluded {
        keep[id as usize] = false;
    }
    Ok((0..n as u32).filter(|&id| keep[id as usize]).collect())
}
