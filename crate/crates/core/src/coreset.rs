//! Static coresets from the candidate sets of two pruned runs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use crate::dataset::floor_count;
use crate::pruner::CandidateSet;
use crate::rng::{stream_rng, Stream};
use crate::{Result, ScanError};

/// The ids one run designated for pruning, with their rank scores.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunedSummary {
    pub run_id: String,
    pub pruned: BTreeMap<u32, f64>,
    pub n: usize,
}

impl PrunedSummary {
    pub fn from_candidates(run_id: impl Into<String>, candidates: &CandidateSet, n: usize) -> Result<Self> {
        let mut pruned = BTreeMap::new();
        for e in &candidates.entries {
            if e.id as usize >= n {
                return Err(ScanError::IdOutOfRange { id: e.id, n });
            }
            pruned.insert(e.id, e.rank_score);
        }
        Ok(Self { run_id: run_id.into(), pruned, n })
    }

    /// Uniform scores, for callers that only have id sets.
    pub fn from_ids(run_id: impl Into<String>, ids: impl IntoIterator<Item = u32>, n: usize) -> Result<Self> {
        let mut pruned = BTreeMap::new();
        for id in ids {
            if id as usize >= n {
                return Err(ScanError::IdOutOfRange { id, n });
            }
            pruned.insert(id, 1.0);
        }
        Ok(Self { run_id: run_id.into(), pruned, n })
    }

    pub fn ids(&self) -> BTreeSet<u32> {
        self.pruned.keys().copied().collect()
    }
}

/// Coreset ids (ascending) after removing `floor(rho * n)` samples.
///
/// Removal starts from the intersection of both pruned sets. It is trimmed,
/// or extended from the rest of the union, by descending summed rank score
/// (a missing score counts as zero; ties go to the smaller id). If the union
/// is still too small, the lowest remaining ids fill the quota.
pub fn export_coreset(a: &PrunedSummary, b: &PrunedSummary, rho: f64) -> Result<Vec<u32>> {
    if a.n != b.n {
        return Err(ScanError::SizeMismatch(a.n, b.n));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(ScanError::RatioOutOfRange(rho));
    }
    let n = a.n;
    let quota = floor_count(rho, n);
    let score = |id: &u32| a.pruned.get(id).unwrap_or(&0.0) + b.pruned.get(id).unwrap_or(&0.0);
    let by_confidence = |ids: &mut Vec<u32>| {
        ids.sort_by(|x, y| score(y).total_cmp(&score(x)).then(x.cmp(y)));
    };

    let mut removal: Vec<u32> = a.pruned.keys().filter(|id| b.pruned.contains_key(id)).copied().collect();
    by_confidence(&mut removal);
    if removal.len() > quota {
        removal.truncate(quota);
    } else {
        let core: BTreeSet<u32> = removal.iter().copied().collect();
        let mut rest: Vec<u32> = a.pruned.keys().chain(b.pruned.keys()).filter(|id| !core.contains(id)).copied().collect();
        rest.sort_unstable();
        rest.dedup();
        by_confidence(&mut rest);
        removal.extend(rest.into_iter().take(quota - core.len()));
        if removal.len() < quota {
            let taken: BTreeSet<u32> = removal.iter().copied().collect();
            let missing = quota - removal.len();
            removal.extend((0..n as u32).filter(|id| !taken.contains(id)).take(missing));
        }
    }
    let removed: BTreeSet<u32> = removal.into_iter().collect();
    Ok((0..n as u32).filter(|id| !removed.contains(id)).collect())
}

/// A uniformly random coreset of the same size `export_coreset` would
/// return. Used as the control when judging a coreset.
pub fn random_coreset(n: usize, rho: f64, seed: u64) -> Result<Vec<u32>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(ScanError::RatioOutOfRange(rho));
    }
    let keep = n - floor_count(rho, n);
    let mut rng = stream_rng(seed, Stream::Control, 0);
    let mut ids: Vec<u32> = rand::seq::index::sample(&mut rng, n, keep).into_iter().map(|i| i as u32).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Intersection over union of two or more id sets.
pub fn overlap_ratio(sets: &[BTreeSet<u32>]) -> Result<f64> {
    if sets.len() < 2 {
        return Err(ScanError::TooFewSets(sets.len()));
    }
    let union: BTreeSet<u32> = sets.iter().flatten().copied().collect();
    if union.is_empty() {
        return Err(ScanError::EmptyUnion);
    }
    let inter = sets[0].iter().filter(|id| sets[1..].iter().all(|s| s.contains(id))).count();
    Ok(inter as f64 / union.len() as f64)
}

/// Newline-delimited coreset ids under a `# n=<n> rho=<rho> runs=<a>,<b>` header.
pub fn write_coreset<W: Write>(mut w: W, ids: &[u32], n: usize, rho: f64, runs: (&str, &str)) -> io::Result<()> {
    writeln!(w, "# n={n} rho={rho:?} runs={},{}", runs.0, runs.1)?;
    for id in ids {
        writeln!(w, "{id}")?;
    }
    Ok(())
}

/// Reads ids from a newline-delimited file, skipping `#` lines.
pub fn read_ids(text: &str) -> Result<Vec<u32>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse().map_err(|_| ScanError::Parse(format!("bad id {l:?}"))))
        .collect()
}
