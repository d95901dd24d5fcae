//! Ingestion and preprocessing of knockoff statistics, plus the elementary
//! sets and estimators built on the sorted sign sequence.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawEntry {
    pub id: String,
    pub w: f64,
}

/// Unprocessed statistics keyed by an opaque label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RawEntry>", into = "Vec<RawEntry>")]
pub struct RawStats {
    entries: Vec<RawEntry>,
}

impl RawStats {
    pub fn new(entries: Vec<RawEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !e.w.is_finite() {
                return Err(Error::NonFinite { id: e.id.clone() });
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId { id: e.id.clone() });
            }
        }
        Ok(Self { entries })
    }

    /// Labels the values `1, 2, ...` in input order.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &w)| RawEntry {
                    id: (i + 1).to_string(),
                    w,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[RawEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl TryFrom<Vec<RawEntry>> for RawStats {
    type Error = Error;

    fn try_from(entries: Vec<RawEntry>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<RawStats> for Vec<RawEntry> {
    fn from(raw: RawStats) -> Self {
        raw.entries
    }
}

/// How entries with equal `|W|` are ordered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    StableByInputOrder,
    SeededRandom,
}

/// Statistics sorted by strictly decreasing `|W|` with zeros removed.
#[derive(Clone, Debug)]
pub struct PreparedStats {
    magnitudes: Vec<f64>,
    positive: Vec<bool>,
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
    dropped: HashSet<String>,
    tie_break: TieBreak,
    /// `neg_positions[j]` is the 1-based position of the `(j+1)`-th negative.
    neg_positions: Vec<usize>,
}

impl PreparedStats {
    pub fn prepare(raw: &RawStats, policy: TieBreak, seed: Option<u64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut dropped = HashSet::new();
        let mut kept: Vec<(usize, &RawEntry)> = Vec::with_capacity(raw.len());
        for e in raw.entries() {
            if e.w == 0.0 {
                dropped.insert(e.id.clone());
            } else {
                kept.push((kept.len(), e));
            }
        }
        if kept.is_empty() {
            return Err(Error::EmptyAfterPreprocessing);
        }

        // Secondary key among equal magnitudes.
        let mut tie_key: Vec<usize> = (0..kept.len()).collect();
        if policy == TieBreak::SeededRandom {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
            tie_key.shuffle(&mut rng);
        }
        kept.sort_by(|(ia, a), (ib, b)| {
            b.w.abs()
                .total_cmp(&a.w.abs())
                .then(tie_key[*ia].cmp(&tie_key[*ib]))
        });

        let p = kept.len();
        let mut magnitudes = Vec::with_capacity(p);
        let mut positive = Vec::with_capacity(p);
        let mut ids = Vec::with_capacity(p);
        for (_, e) in &kept {
            magnitudes.push(e.w.abs());
            positive.push(e.w > 0.0);
            ids.push(e.id.clone());
        }
        // Equal magnitudes are nudged apart below their predecessor so the
        // strict ordering holds. Only the order matters downstream.
        for i in 1..p {
            if magnitudes[i] >= magnitudes[i - 1] {
                magnitudes[i] = next_down(magnitudes[i - 1]);
            }
        }
        let lookup = ids.iter().enumerate().map(|(i, id)| (id.clone(), i + 1)).collect();
        let neg_positions = positive
            .iter()
            .enumerate()
            .filter(|(_, &pos)| !pos)
            .map(|(i, _)| i + 1)
            .collect();
        Ok(Self {
            magnitudes,
            positive,
            ids,
            lookup,
            dropped,
            tie_break: policy,
            neg_positions,
        })
    }

    /// Builds statistics directly from a sign sequence with magnitudes
    /// `p, p-1, ..., 1`; ids are `"1".."p"`.
    pub fn from_signs(positive: &[bool]) -> Result<Self> {
        let p = positive.len();
        let values: Vec<f64> = positive
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let m = (p - i) as f64;
                if s {
                    m
                } else {
                    -m
                }
            })
            .collect();
        Self::prepare(&RawStats::from_values(&values)?, TieBreak::StableByInputOrder, None)
    }

    pub fn p(&self) -> usize {
        self.positive.len()
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    /// Signs as `+1` / `-1` in position order.
    pub fn signs(&self) -> Vec<i8> {
        self.positive.iter().map(|&s| if s { 1 } else { -1 }).collect()
    }

    pub fn positive_mask(&self) -> &[bool] {
        &self.positive
    }

    pub fn is_positive(&self, position: usize) -> bool {
        self.positive[position - 1]
    }

    /// Signed statistic at a 1-based position.
    pub fn w(&self, position: usize) -> f64 {
        let m = self.magnitudes[position - 1];
        if self.positive[position - 1] {
            m
        } else {
            -m
        }
    }

    pub fn id(&self, position: usize) -> &str {
        &self.ids[position - 1]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }

    pub fn dropped_zero_count(&self) -> usize {
        self.dropped.len()
    }

    pub fn positive_count(&self) -> usize {
        self.positive.iter().filter(|&&s| s).count()
    }

    pub fn negative_count(&self) -> usize {
        self.neg_positions.len()
    }

    /// Position for an original id.
    pub fn position_of(&self, id: &str) -> Result<usize> {
        if let Some(&pos) = self.lookup.get(id) {
            Ok(pos)
        } else if self.dropped.contains(id) {
            Err(Error::DroppedId { id: id.to_string() })
        } else {
            Err(Error::UnknownId { id: id.to_string() })
        }
    }

    /// Resolves a list of original ids into a position set.
    pub fn resolve_ids<S: AsRef<str>>(&self, ids: &[S]) -> Result<IndexSet> {
        let positions = ids
            .iter()
            .map(|id| self.position_of(id.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        IndexSet::new(positions, self.p())
    }

    /// The retained entries in position order.
    pub fn to_raw(&self) -> RawStats {
        let entries = (1..=self.p())
            .map(|i| RawEntry {
                id: self.id(i).to_string(),
                w: self.w(i),
            })
            .collect();
        RawStats { entries }
    }

    /// One past the last position admitted into the reference set for `v`:
    /// the position of the `v`-th negative, or `p + 1` when there are fewer.
    pub(crate) fn cut(&self, v: usize) -> usize {
        debug_assert!(v >= 1);
        self.neg_positions
            .get(v - 1)
            .copied()
            .unwrap_or(self.p() + 1)
    }

    /// Largest `|W_i|` with exactly `v` negatives at or above it; the smallest
    /// magnitude when fewer than `v` negatives exist.
    pub fn threshold(&self, v: usize) -> f64 {
        assert!(v >= 1, "v must be positive");
        match self.neg_positions.get(v - 1) {
            Some(&pos) => self.magnitudes[pos - 1],
            None => self.magnitudes[self.p() - 1],
        }
    }

    /// `{i : W_i >= T(v)}`.
    pub fn reference_set(&self, v: usize) -> IndexSet {
        assert!(v >= 1, "v must be positive");
        let cut = self.cut(v);
        IndexSet::from_sorted_unchecked((1..cut).filter(|&i| self.is_positive(i)).collect())
    }

    /// `R_i = {j <= i : W_j > 0}` for `i = 1..=p`.
    pub fn nested_sets(&self) -> Vec<IndexSet> {
        let mut acc = Vec::new();
        (1..=self.p())
            .map(|i| {
                if self.is_positive(i) {
                    acc.push(i);
                }
                IndexSet::from_sorted_unchecked(acc.clone())
            })
            .collect()
    }

    /// `|R_i|` for `i = 1..=p` without materialising the sets.
    pub fn nested_sizes(&self) -> Vec<usize> {
        self.positive
            .iter()
            .scan(0usize, |acc, &s| {
                *acc += s as usize;
                Some(*acc)
            })
            .collect()
    }

    /// `(1 + #{j <= i : W_j < 0}) / max(|R_i|, 1)`.
    pub fn fdp_hat(&self, i: usize) -> f64 {
        assert!((1..=self.p()).contains(&i), "position out of range");
        let pos = self.positive[..i].iter().filter(|&&s| s).count();
        let neg = i - pos;
        (1 + neg) as f64 / pos.max(1) as f64
    }

    /// Knockoff filter selection: the largest `R_i` with `fdp_hat(i) <= q`.
    pub fn knockoff_filter_select(&self, q: f64) -> IndexSet {
        let mut pos = 0usize;
        let mut best = None;
        for i in 1..=self.p() {
            if self.is_positive(i) {
                pos += 1;
            }
            let fdp = (1 + i - pos) as f64 / pos.max(1) as f64;
            if fdp <= q {
                best = Some(i);
            }
        }
        match best {
            Some(i) => IndexSet::from_sorted_unchecked((1..=i).filter(|&j| self.is_positive(j)).collect()),
            None => IndexSet::empty(),
        }
    }
}

fn next_down(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let y = f64::from_bits(x.to_bits() - 1);
    if y > 0.0 {
        y
    } else {
        x / 2.0
    }
}

/// Sorted set of 1-based positions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IndexSet {
    members: Vec<usize>,
}

impl IndexSet {
    pub fn new(mut positions: Vec<usize>, p: usize) -> Result<Self> {
        positions.sort_unstable();
        positions.dedup();
        if let Some(&bad) = positions.iter().find(|&&x| x == 0 || x > p) {
            return Err(Error::PositionOutOfRange { position: bad, p });
        }
        Ok(Self { members: positions })
    }

    pub(crate) fn from_sorted_unchecked(members: Vec<usize>) -> Self {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
        Self { members }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// `{1, ..., n}`.
    pub fn full(n: usize) -> Self {
        Self::from_sorted_unchecked((1..=n).collect())
    }

    /// Positions whose bit is set in `mask` (bit `i-1` for position `i`).
    pub fn from_mask(mask: u64) -> Self {
        Self::from_sorted_unchecked((0..64).filter(|b| mask >> b & 1 == 1).map(|b| b + 1).collect())
    }

    pub fn to_mask(&self) -> u64 {
        self.members.iter().fold(0u64, |m, &i| {
            assert!(i <= 64, "mask form needs positions <= 64");
            m | 1 << (i - 1)
        })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, position: usize) -> bool {
        self.members.binary_search(&position).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    pub fn is_subset(&self, other: &IndexSet) -> bool {
        self.members.iter().all(|&i| other.contains(i))
    }

    /// Original ids of the members, in position order.
    pub fn ids<'a>(&self, stats: &'a PreparedStats) -> Vec<&'a str> {
        self.members.iter().map(|&i| stats.id(i)).collect()
    }
}

impl FromIterator<usize> for IndexSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut members: Vec<usize> = iter.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        Self { members }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prep(values: &[f64]) -> PreparedStats {
        PreparedStats::prepare(&RawStats::from_values(values).unwrap(), TieBreak::StableByInputOrder, None).unwrap()
    }

    fn set(xs: &[usize]) -> IndexSet {
        xs.iter().copied().collect()
    }

    #[test]
    fn prepare_sorted_input() {
        let s = prep(&[5.0, -4.0, 3.0, 2.0, -1.0]);
        assert_eq!(s.p(), 5);
        assert_eq!(s.signs(), vec![1, -1, 1, 1, -1]);
        assert_eq!(s.magnitudes(), &[5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(s.dropped_zero_count(), 0);
    }

    #[test]
    fn prepare_drops_zeros() {
        let s = prep(&[0.0, 7.0]);
        assert_eq!(s.p(), 1);
        assert_eq!(s.dropped_zero_count(), 1);
        assert_eq!(s.signs(), vec![1]);
        assert!(matches!(s.position_of("1"), Err(Error::DroppedId { .. })));
        assert!(matches!(s.position_of("9"), Err(Error::UnknownId { .. })));
    }

    #[test]
    fn prepare_stable_ties() {
        let s = prep(&[3.0, -3.0, 2.0]);
        assert_eq!(s.ids(), &["1", "2", "3"]);
        assert_eq!(s.signs(), vec![1, -1, 1]);
        assert!(s.magnitudes()[0] > s.magnitudes()[1]);
        assert!(s.magnitudes()[1] > s.magnitudes()[2]);
    }

    #[test]
    fn prepare_seeded_ties_deterministic() {
        let raw = RawStats::from_values(&[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 2.0]).unwrap();
        let a = PreparedStats::prepare(&raw, TieBreak::SeededRandom, Some(3)).unwrap();
        let b = PreparedStats::prepare(&raw, TieBreak::SeededRandom, Some(3)).unwrap();
        assert_eq!(a.ids(), b.ids());
        assert_eq!(a.id(1), "7");
    }

    #[test]
    fn prepare_errors() {
        let zeros = RawStats::from_values(&[0.0, 0.0]).unwrap();
        assert!(matches!(
            PreparedStats::prepare(&zeros, TieBreak::default(), None),
            Err(Error::EmptyAfterPreprocessing)
        ));
        let empty = RawStats::new(vec![]).unwrap();
        assert!(matches!(PreparedStats::prepare(&empty, TieBreak::default(), None), Err(Error::EmptyInput)));
        assert!(matches!(RawStats::from_values(&[f64::NAN]), Err(Error::NonFinite { .. })));
        let dup = vec![
            RawEntry { id: "a".into(), w: 1.0 },
            RawEntry { id: "a".into(), w: 2.0 },
        ];
        assert!(matches!(RawStats::new(dup), Err(Error::DuplicateId { .. })));
    }

    #[test]
    fn thresholds() {
        let s = prep(&[5.0, -4.0, 3.0, 2.0, -1.0]);
        assert_eq!(s.threshold(1), 4.0);
        assert_eq!(s.threshold(2), 1.0);
        assert_eq!(s.threshold(3), 1.0);
    }

    #[test]
    fn reference_sets() {
        let s = prep(&[5.0, -4.0, 3.0, 2.0, -1.0]);
        assert_eq!(s.reference_set(1), set(&[1]));
        assert_eq!(s.reference_set(2), set(&[1, 3, 4]));
        let neg = prep(&[-3.0, -2.0, -1.0]);
        for v in 1..5 {
            assert!(neg.reference_set(v).is_empty());
        }
    }

    #[test]
    fn nested() {
        let s = prep(&[5.0, -4.0, 3.0]);
        assert_eq!(s.nested_sets(), vec![set(&[1]), set(&[1]), set(&[1, 3])]);
        assert_eq!(prep(&[2.0, 1.0]).nested_sets(), vec![set(&[1]), set(&[1, 2])]);
        assert_eq!(prep(&[-2.0, -1.0]).nested_sets(), vec![set(&[]), set(&[])]);
        assert_eq!(s.nested_sizes(), vec![1, 1, 2]);
    }

    #[test]
    fn fdp_hat_values() {
        assert_eq!(prep(&[5.0, -4.0, 3.0]).fdp_hat(3), 1.0);
        assert_eq!(prep(&[5.0, 4.0]).fdp_hat(2), 0.5);
        assert_eq!(prep(&[-5.0, -4.0]).fdp_hat(2), 3.0);
    }

    #[test]
    fn filter_select() {
        assert_eq!(prep(&[5.0, 4.0, 3.0, -2.0]).knockoff_filter_select(0.5), set(&[1, 2, 3]));
        assert!(prep(&[-5.0, -4.0]).knockoff_filter_select(0.2).is_empty());
        assert_eq!(prep(&[5.0, 4.0]).knockoff_filter_select(0.6), set(&[1, 2]));
    }

    #[test]
    fn index_set_validation() {
        assert!(matches!(IndexSet::new(vec![0], 3), Err(Error::PositionOutOfRange { .. })));
        assert!(matches!(IndexSet::new(vec![4], 3), Err(Error::PositionOutOfRange { .. })));
        assert_eq!(IndexSet::new(vec![3, 1, 3], 3).unwrap(), set(&[1, 3]));
        assert_eq!(IndexSet::from_mask(0b101), set(&[1, 3]));
        assert_eq!(set(&[1, 3]).to_mask(), 0b101);
    }
}
