//! Paired corpora: the data model, a synthetic generator with planted
//! corruptions, and the `SCND` binary format.
//!
//! Layout of a dataset file (all integers and floats little-endian):
//!
//! ```text
//! "SCND"            4 bytes magic
//! version           u32 (= 1)
//! n, dim, classes   u32 each
//! view_a            n*dim f32, row-major
//! view_b            n*dim f32, row-major
//! labels            n u32
//! corruption        n u8 (0 clean, 1 mismatched, 2 duplicate)
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Stream};
use crate::{Result, ScanError};

pub const DATASET_MAGIC: [u8; 4] = *b"SCND";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;
/// Maximum pairwise dot product between class prototypes.
pub const MAX_PROTOTYPE_DOT: f64 = 0.5;
/// Duplicates are re-noised with this fraction of `noise_sigma`.
pub const DUPLICATE_NOISE_SCALE: f64 = 0.1;
const PROTOTYPE_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Corruption {
    Clean = 0,
    Mismatched = 1,
    Duplicate = 2,
}

impl Corruption {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Corruption::Clean),
            1 => Some(Corruption::Mismatched),
            2 => Some(Corruption::Duplicate),
            _ => None,
        }
    }
}

/// Immutable corpus of paired views. Sample ids are row indices.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedDataset {
    num_classes: usize,
    view_a: Array2<f32>,
    view_b: Array2<f32>,
    labels: Vec<u32>,
    corruption: Vec<Corruption>,
}

impl PairedDataset {
    pub fn new(
        num_classes: usize,
        view_a: Array2<f32>,
        view_b: Array2<f32>,
        labels: Vec<u32>,
        corruption: Vec<Corruption>,
    ) -> Result<Self> {
        let (n, dim) = view_a.dim();
        if view_b.dim() != (n, dim) {
            return Err(ScanError::Shape(format!("view_a is {:?} but view_b is {:?}", view_a.dim(), view_b.dim())));
        }
        if labels.len() != n || corruption.len() != n {
            return Err(ScanError::Shape(format!("{n} rows but {} labels and {} corruption flags", labels.len(), corruption.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(ScanError::Corrupt(format!("label {bad} >= num_classes {num_classes}")));
        }
        if view_a.iter().chain(view_b.iter()).any(|v| !v.is_finite()) {
            return Err(ScanError::Corrupt("non-finite view entry".into()));
        }
        Ok(Self { num_classes, view_a, view_b, labels, corruption })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.view_a.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn view_a(&self) -> &Array2<f32> {
        &self.view_a
    }

    pub fn view_b(&self) -> &Array2<f32> {
        &self.view_b
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn corruption(&self) -> &[Corruption] {
        &self.corruption
    }

    pub fn ids_with(&self, flag: Corruption) -> Vec<u32> {
        (0..self.len() as u32).filter(|&i| self.corruption[i as usize] == flag).collect()
    }

    /// Rows `ids` of both views, promoted to f64.
    pub fn gather(&self, ids: &[u32]) -> (Array2<f64>, Array2<f64>) {
        let dim = self.dim();
        let mut a = Array2::zeros((ids.len(), dim));
        let mut b = Array2::zeros((ids.len(), dim));
        for (r, &id) in ids.iter().enumerate() {
            let id = id as usize;
            for c in 0..dim {
                a[[r, c]] = self.view_a[[id, c]] as f64;
                b[[r, c]] = self.view_b[[id, c]] as f64;
            }
        }
        (a, b)
    }

    /// Copy with `view_b` replaced by `view_a` plus fresh Gaussian noise,
    /// emulating two augmented views of one input.
    pub fn to_view_pair(&self, sigma: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::ViewNoise, 0);
        let mut view_b = self.view_a.clone();
        for v in view_b.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *v = (*v as f64 + sigma * eps) as f32;
        }
        Self { view_b, ..self.clone() }
    }

    /// Cosine similarity between the two views of row `i`.
    pub fn pair_cosine(&self, i: usize) -> f64 {
        cosine(self.view_a.row(i), self.view_b.row(i))
    }
}

fn cosine(a: ArrayView1<f32>, b: ArrayView1<f32>) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b.iter()) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Parameters of the synthetic generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n: usize,
    pub dim: usize,
    pub num_classes: usize,
    pub mismatch_frac: f64,
    pub duplicate_frac: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ScanError::InvalidSpec(m));
        if self.dim < 2 {
            return bad(format!("dim must be >= 2, got {}", self.dim));
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.n < self.num_classes {
            return bad(format!("n ({}) must be >= num_classes ({})", self.n, self.num_classes));
        }
        if self.n > u32::MAX as usize {
            return bad(format!("n ({}) exceeds the u32 id space", self.n));
        }
        for (name, f) in [("mismatch_frac", self.mismatch_frac), ("duplicate_frac", self.duplicate_frac)] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1], got {f}"));
            }
        }
        if self.mismatch_frac + self.duplicate_frac > 1.0 {
            return bad(format!("mismatch_frac + duplicate_frac must be <= 1, got {}", self.mismatch_frac + self.duplicate_frac));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        let (m, d) = self.counts();
        if d > 0 && m + d >= self.n {
            return bad("duplicates need at least one clean row to copy".into());
        }
        Ok(())
    }

    /// Planted (mismatched, duplicate) counts.
    pub fn counts(&self) -> (usize, usize) {
        (floor_count(self.mismatch_frac, self.n), floor_count(self.duplicate_frac, self.n))
    }
}

/// `floor(frac * n)`, tolerant of products like `0.29 * 100 = 28.999999999999996`.
pub(crate) fn floor_count(frac: f64, n: usize) -> usize {
    (frac * n as f64 + 1e-9).floor().max(0.0) as usize
}

fn sample_prototypes<R: Rng>(rng: &mut R, classes: usize, dim: usize) -> Result<Vec<Array1<f64>>> {
    let mut protos: Vec<Array1<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut accepted = false;
        for _ in 0..PROTOTYPE_ATTEMPTS {
            let mut v = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
            let norm = v.dot(&v).sqrt();
            if norm == 0.0 {
                continue;
            }
            v /= norm;
            if protos.iter().all(|p| p.dot(&v) <= MAX_PROTOTYPE_DOT) {
                protos.push(v);
                accepted = true;
                break;
            }
        }
        if !accepted {
            return Err(ScanError::InvalidSpec(format!(
                "could not place {classes} prototypes with pairwise dot <= {MAX_PROTOTYPE_DOT} in {dim} dimensions"
            )));
        }
    }
    Ok(protos)
}

/// Generates a corpus with planted mismatched and duplicate rows.
///
/// Labels are balanced (`i mod num_classes`, then shuffled). Row 0 is always
/// clean; the corrupted rows are drawn from rows `1..n`. A duplicate takes
/// the label of a uniformly chosen earlier clean row and gets both views
/// from that class prototype with noise `DUPLICATE_NOISE_SCALE * noise_sigma`.
/// Copying the source's noisy views instead would leave the duplicate exactly
/// as hard as its source, so it would not show up as low-loss.
pub fn generate_paired_dataset(spec: &GenSpec) -> Result<PairedDataset> {
    spec.validate()?;
    let (n, dim, classes) = (spec.n, spec.dim, spec.num_classes);
    let mut rng = stream_rng(spec.seed, Stream::Generate, 0);
    let protos = sample_prototypes(&mut rng, classes, dim)?;

    let mut labels: Vec<u32> = (0..n).map(|i| (i % classes) as u32).collect();
    labels.shuffle(&mut rng);

    let (m_count, d_count) = spec.counts();
    let mut order: Vec<usize> = (1..n).collect();
    order.shuffle(&mut rng);
    let mut corruption = vec![Corruption::Clean; n];
    for &i in &order[..m_count] {
        corruption[i] = Corruption::Mismatched;
    }
    for &i in &order[m_count..m_count + d_count] {
        corruption[i] = Corruption::Duplicate;
    }

    let sigma = spec.noise_sigma;
    let mut view_a = Array2::<f32>::zeros((n, dim));
    let mut view_b = Array2::<f32>::zeros((n, dim));
    let mut clean_before: Vec<usize> = Vec::new();
    for i in 0..n {
        let label = labels[i] as usize;
        match corruption[i] {
            Corruption::Clean | Corruption::Mismatched => {
                let b_class = if corruption[i] == Corruption::Mismatched {
                    let offset = rng.random_range(1..classes);
                    (label + offset) % classes
                } else {
                    label
                };
                for c in 0..dim {
                    let ea: f64 = rng.sample(StandardNormal);
                    let eb: f64 = rng.sample(StandardNormal);
                    view_a[[i, c]] = (protos[label][c] + sigma * ea) as f32;
                    view_b[[i, c]] = (protos[b_class][c] + sigma * eb) as f32;
                }
                if corruption[i] == Corruption::Clean {
                    clean_before.push(i);
                }
            }
            Corruption::Duplicate => {
                let src = clean_before[rng.random_range(0..clean_before.len())];
                labels[i] = labels[src];
                let s = DUPLICATE_NOISE_SCALE * sigma;
                let proto = &protos[labels[i] as usize];
                for c in 0..dim {
                    let ea: f64 = rng.sample(StandardNormal);
                    let eb: f64 = rng.sample(StandardNormal);
                    view_a[[i, c]] = (proto[c] + s * ea) as f32;
                    view_b[[i, c]] = (proto[c] + s * eb) as f32;
                }
            }
        }
    }
    PairedDataset::new(classes, view_a, view_b, labels, corruption)
}

pub fn encode_dataset(ds: &PairedDataset) -> Vec<u8> {
    let (n, dim) = (ds.len(), ds.dim());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * dim + 5 * n);
    out.extend_from_slice(&DATASET_MAGIC);
    for v in [DATASET_VERSION, n as u32, dim as u32, ds.num_classes as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in ds.view_a.iter().chain(ds.view_b.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &ds.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out.extend(ds.corruption.iter().map(|&c| c as u8));
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

pub fn decode_dataset(bytes: &[u8]) -> Result<PairedDataset> {
    if bytes.len() < 4 {
        return Err(ScanError::Truncated { needed: 4, found: bytes.len() });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
    if found != DATASET_MAGIC {
        return Err(ScanError::BadMagic { expected: DATASET_MAGIC, found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(ScanError::Truncated { needed: HEADER_LEN, found: bytes.len() });
    }
    let version = read_u32(bytes, 4);
    if version != DATASET_VERSION {
        return Err(ScanError::UnsupportedVersion(version));
    }
    let n = read_u32(bytes, 8) as usize;
    let dim = read_u32(bytes, 12) as usize;
    let classes = read_u32(bytes, 16) as usize;
    let cells = n.checked_mul(dim).ok_or_else(|| ScanError::Corrupt("n*dim overflows".into()))?;
    let needed = HEADER_LEN + 8 * cells + 5 * n;
    if bytes.len() < needed {
        return Err(ScanError::Truncated { needed, found: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(ScanError::Corrupt(format!("{} trailing bytes", bytes.len() - needed)));
    }
    let mut at = HEADER_LEN;
    let read_matrix = |at: &mut usize| {
        let m = Array2::from_shape_fn((n, dim), |(r, c)| {
            let o = *at + 4 * (r * dim + c);
            f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4-byte slice"))
        });
        *at += 4 * cells;
        m
    };
    let view_a = read_matrix(&mut at);
    let view_b = read_matrix(&mut at);
    let labels: Vec<u32> = (0..n).map(|i| read_u32(bytes, at + 4 * i)).collect();
    at += 4 * n;
    let corruption = bytes[at..at + n]
        .iter()
        .map(|&b| Corruption::from_byte(b).ok_or_else(|| ScanError::Corrupt(format!("unknown corruption flag {b}"))))
        .collect::<Result<Vec<_>>>()?;
    PairedDataset::new(classes, view_a, view_b, labels, corruption)
}

pub fn save_dataset(ds: &PairedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dataset(ds)).map_err(|e| ScanError::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<PairedDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ScanError::io(path, e))?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_spec() -> GenSpec {
        GenSpec { n: 100, dim: 16, num_classes: 4, mismatch_frac: 0.1, duplicate_frac: 0.1, noise_sigma: 0.1, seed: 7 }
    }

    fn mean_cos(ds: &PairedDataset, flag: Corruption) -> f64 {
        let ids = ds.ids_with(flag);
        ids.iter().map(|&i| ds.pair_cosine(i as usize)).sum::<f64>() / ids.len() as f64
    }

    #[test]
    fn planted_counts_follow_floor_rule() {
        let ds = generate_paired_dataset(&small_spec()).unwrap();
        assert_eq!(ds.ids_with(Corruption::Mismatched).len(), 10);
        assert_eq!(ds.ids_with(Corruption::Duplicate).len(), 10);
        assert_eq!(ds.ids_with(Corruption::Clean).len(), 80);
    }

    #[test]
    fn zero_fractions_give_clean_corpus() {
        let spec = GenSpec { mismatch_frac: 0.0, duplicate_frac: 0.0, ..small_spec() };
        let ds = generate_paired_dataset(&spec).unwrap();
        assert!(ds.corruption().iter().all(|&c| c == Corruption::Clean));
    }

    #[test]
    fn mismatched_pairs_are_less_similar() {
        let spec = GenSpec { n: 1000, dim: 32, num_classes: 8, mismatch_frac: 0.1, duplicate_frac: 0.0, noise_sigma: 0.05, seed: 1 };
        let ds = generate_paired_dataset(&spec).unwrap();
        let gap = mean_cos(&ds, Corruption::Clean) - mean_cos(&ds, Corruption::Mismatched);
        assert!(gap > 0.2, "gap {gap}");
    }

    #[test]
    fn labels_are_balanced_and_in_range() {
        let ds = generate_paired_dataset(&GenSpec { duplicate_frac: 0.0, ..small_spec() }).unwrap();
        let mut counts = [0usize; 4];
        for &l in ds.labels() {
            counts[l as usize] += 1;
        }
        assert_eq!(counts, [25; 4]);
    }

    #[test]
    fn duplicates_follow_earlier_clean_rows() {
        let ds = generate_paired_dataset(&small_spec()).unwrap();
        for i in ds.ids_with(Corruption::Duplicate) {
            let i = i as usize;
            let found = (0..i).any(|j| {
                ds.corruption()[j] == Corruption::Clean
                    && ds.labels()[j] == ds.labels()[i]
                    && cosine(ds.view_a().row(i), ds.view_a().row(j)) > 0.9
            });
            assert!(found, "duplicate {i} has no earlier clean source");
            assert!(cosine(ds.view_a().row(i), ds.view_b().row(i)) > 0.99);
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let cases = [
            GenSpec { mismatch_frac: 0.6, duplicate_frac: 0.5, ..small_spec() },
            GenSpec { num_classes: 1, ..small_spec() },
            GenSpec { dim: 1, ..small_spec() },
            GenSpec { n: 3, ..small_spec() },
            GenSpec { mismatch_frac: -0.1, ..small_spec() },
            GenSpec { noise_sigma: f64::NAN, ..small_spec() },
        ];
        for spec in cases {
            assert!(matches!(generate_paired_dataset(&spec), Err(ScanError::InvalidSpec(_))), "{spec:?}");
        }
    }

    #[test]
    fn impossible_prototype_packing_is_reported() {
        // At most six unit vectors in the plane keep pairwise angles >= 60 degrees.
        let spec = GenSpec { dim: 2, num_classes: 12, n: 24, ..small_spec() };
        assert!(matches!(generate_paired_dataset(&spec), Err(ScanError::InvalidSpec(_))));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ds = generate_paired_dataset(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.scnd");
        save_dataset(&ds, &path).unwrap();
        let first = fs::read(&path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        save_dataset(&back, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
        assert_eq!(first.len(), 20 + 8 * 100 * 16 + 5 * 100);
    }

    #[test]
    fn decode_errors_are_distinct() {
        let ds = generate_paired_dataset(&small_spec()).unwrap();
        let bytes = encode_dataset(&ds);

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_dataset(&bad), Err(ScanError::BadMagic { .. })));

        assert!(matches!(decode_dataset(&bytes[..HEADER_LEN]), Err(ScanError::Truncated { .. })));
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 1]), Err(ScanError::Truncated { .. })));

        let mut v2 = bytes.clone();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_dataset(&v2), Err(ScanError::UnsupportedVersion(2))));
    }

    #[test]
    fn equal_seeds_reproduce_and_different_seeds_differ() {
        let a = generate_paired_dataset(&small_spec()).unwrap();
        let b = generate_paired_dataset(&small_spec()).unwrap();
        let c = generate_paired_dataset(&GenSpec { seed: 8, ..small_spec() }).unwrap();
        assert_eq!(encode_dataset(&a), encode_dataset(&b));
        assert_ne!(a.view_a(), c.view_a());
        assert_ne!(a.view_b(), c.view_b());
    }

    #[test]
    fn clean_pairs_beat_mismatched_across_seeds() {
        for seed in 0..20 {
            let spec = GenSpec { n: 400, dim: 16, num_classes: 4, mismatch_frac: 0.1, duplicate_frac: 0.1, noise_sigma: 0.2, seed };
            let ds = generate_paired_dataset(&spec).unwrap();
            assert!(mean_cos(&ds, Corruption::Clean) > mean_cos(&ds, Corruption::Mismatched), "seed {seed}");
        }
    }

    fn arb_spec() -> impl Strategy<Value = GenSpec> {
        (2usize..6, 2usize..12, 0usize..40, 0.0f64..0.5, 0.0f64..0.4, 0.0f64..0.3, any::<u64>()).prop_map(
            |(classes, dim, extra, mf, df, sigma, seed)| GenSpec {
                n: classes + 2 + extra,
                dim: dim.max(4),
                num_classes: classes,
                mismatch_frac: mf,
                duplicate_frac: df,
                noise_sigma: sigma,
                seed,
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn persistence_round_trip_is_identity(spec in arb_spec()) {
            let ds = generate_paired_dataset(&spec).unwrap();
            let bytes = encode_dataset(&ds);
            let back = decode_dataset(&bytes).unwrap();
            prop_assert_eq!(encode_dataset(&back), bytes);
            prop_assert_eq!(back, ds);
        }
    }
}
