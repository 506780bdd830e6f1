//! Prediction sets: finite unions of disjoint closed intervals on the real
//! line, or finite sets of integer labels.
//!
//! Every constructor normalizes its input, so two unions with the same
//! membership function compare equal. Infinite endpoints are allowed; a
//! calibrated threshold of `+inf` turns a score's sublevel set into the
//! whole line, which is how a zero miscoverage share is represented.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// A closed interval `[lo, hi]`. Endpoints may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }
}

/// Sorted, pairwise disjoint closed intervals separated by strictly
/// positive gaps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalUnion {
    intervals: Vec<Interval>,
}

impl IntervalUnion {
    pub fn empty() -> Self {
        IntervalUnion { intervals: Vec::new() }
    }

    pub fn real_line() -> Self {
        IntervalUnion {
            intervals: vec![Interval::new(f64::NEG_INFINITY, f64::INFINITY)],
        }
    }

    /// A single closed interval; empty when `lo > hi`.
    pub fn single(lo: f64, hi: f64) -> Result<Self> {
        Self::normalize(&[(lo, hi)])
    }

    /// Builds a normalized union from raw `(lo, hi)` pairs. Pairs with
    /// `lo > hi` are empty and dropped; overlapping or touching intervals
    /// are merged.
    pub fn normalize(raw: &[(f64, f64)]) -> Result<Self> {
        let mut items = Vec::with_capacity(raw.len());
        for &(lo, hi) in raw {
            if lo.is_nan() || hi.is_nan() {
                return Err(Error::InvalidInput("NaN interval endpoint".into()));
            }
            if lo <= hi {
                items.push(Interval::new(lo, hi));
            }
        }
        Ok(Self::from_valid(items))
    }

    fn from_valid(mut items: Vec<Interval>) -> Self {
        items.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mut merged: Vec<Interval> = Vec::with_capacity(items.len());
        for iv in items {
            match merged.last_mut() {
                Some(last) if iv.lo <= last.hi => {
                    if iv.hi > last.hi {
                        last.hi = iv.hi;
                    }
                }
                _ => merged.push(iv),
            }
        }
        IntervalUnion { intervals: merged }
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, y: f64) -> bool {
        // first interval whose upper end reaches y
        let idx = self.intervals.partition_point(|iv| iv.hi < y);
        self.intervals.get(idx).is_some_and(|iv| iv.lo <= y)
    }

    /// Lebesgue measure; `+inf` when any endpoint is infinite.
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(Interval::len).sum()
    }

    pub fn intersect(&self, other: &IntervalUnion) -> IntervalUnion {
        let (a, b) = (&self.intervals, &other.intervals);
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            let lo = a[i].lo.max(b[j].lo);
            let hi = a[i].hi.min(b[j].hi);
            if lo <= hi {
                out.push(Interval::new(lo, hi));
            }
            if a[i].hi < b[j].hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        // inputs are normalized, so the sweep output already is
        IntervalUnion { intervals: out }
    }

    pub fn union(&self, other: &IntervalUnion) -> IntervalUnion {
        let mut items = self.intervals.clone();
        items.extend_from_slice(&other.intervals);
        Self::from_valid(items)
    }

    /// Points covered by at least `min_count` of the given unions, found by
    /// a sweep over all endpoints.
    pub fn covered_at_least(sets: &[IntervalUnion], min_count: usize) -> IntervalUnion {
        if min_count == 0 {
            return IntervalUnion::real_line();
        }
        // (position, is_end); starts sort before ends at equal positions so
        // closed intervals that touch keep their shared point
        let mut events: Vec<(f64, bool)> = sets
            .iter()
            .flat_map(|s| s.intervals.iter())
            .flat_map(|iv| [(iv.lo, false), (iv.hi, true)])
            .collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut out = Vec::new();
        let mut count = 0usize;
        let mut open_at = f64::NAN;
        for (x, is_end) in events {
            if is_end {
                if count == min_count {
                    out.push(Interval::new(open_at, x));
                }
                count -= 1;
            } else {
                count += 1;
                if count == min_count {
                    open_at = x;
                }
            }
        }
        Self::from_valid(out)
    }
}

/// A finite set of integer labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DiscreteSet {
    labels: BTreeSet<i64>,
}

impl DiscreteSet {
    pub fn new(labels: impl IntoIterator<Item = i64>) -> Self {
        DiscreteSet {
            labels: labels.into_iter().collect(),
        }
    }

    pub fn labels(&self) -> impl Iterator<Item = i64> + '_ {
        self.labels.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: i64) -> bool {
        self.labels.contains(&label)
    }

    pub fn intersect(&self, other: &DiscreteSet) -> DiscreteSet {
        DiscreteSet {
            labels: self.labels.intersection(&other.labels).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictionSet {
    Intervals(IntervalUnion),
    Discrete(DiscreteSet),
}

impl From<IntervalUnion> for PredictionSet {
    fn from(u: IntervalUnion) -> Self {
        PredictionSet::Intervals(u)
    }
}

impl From<DiscreteSet> for PredictionSet {
    fn from(d: DiscreteSet) -> Self {
        PredictionSet::Discrete(d)
    }
}

impl PredictionSet {
    pub fn real_line() -> Self {
        PredictionSet::Intervals(IntervalUnion::real_line())
    }

    pub fn intersect(&self, other: &PredictionSet) -> Result<PredictionSet> {
        match (self, other) {
            (PredictionSet::Intervals(a), PredictionSet::Intervals(b)) => Ok(PredictionSet::Intervals(a.intersect(b))),
            (PredictionSet::Discrete(a), PredictionSet::Discrete(b)) => Ok(PredictionSet::Discrete(a.intersect(b))),
            _ => Err(Error::TagMismatch),
        }
    }

    /// Lebesgue measure for interval unions, cardinality for label sets.
    pub fn measure(&self) -> f64 {
        match self {
            PredictionSet::Intervals(u) => u.measure(),
            PredictionSet::Discrete(d) => d.len() as f64,
        }
    }

    /// Membership of a real value; a label set contains `y` only when `y`
    /// is an integer in the set.
    pub fn contains(&self, y: f64) -> bool {
        match self {
            PredictionSet::Intervals(u) => u.contains(y),
            PredictionSet::Discrete(d) => y.fract() == 0.0 && d.contains(y as i64),
        }
    }

    /// `|a \ b| + |b \ a|`, defined for finite sets only.
    pub fn sym_diff_measure(&self, other: &PredictionSet) -> Result<f64> {
        let both = self.intersect(other)?;
        let (ma, mb) = (self.measure(), other.measure());
        if !ma.is_finite() || !mb.is_finite() {
            return Err(Error::Unsupported(
                "symmetric difference of sets with infinite measure".into(),
            ));
        }
        Ok((ma + mb - 2.0 * both.measure()).max(0.0))
    }

    pub fn as_intervals(&self) -> Option<&IntervalUnion> {
        match self {
            PredictionSet::Intervals(u) => Some(u),
            PredictionSet::Discrete(_) => None,
        }
    }
}
