//! Confidence-budget allocation.
//!
//! A total miscoverage budget is split into integer units on the grid
//! `{0, 1/n, ..., 1}`; score `k` receives `u_k` units and is calibrated at
//! level `u_k / n`. The empirical loss of an allocation is the mean measure
//! of the intersected sublevel sets over a list of evaluation points.
//! [`LossOracle`] precomputes every threshold the search can ask for, so a
//! loss evaluation is a pass over flat arrays.

mod search;
mod smooth;

pub use search::{
    enumerate_compositions, exhaustive_search, singleton_search, stepwise_optimize, Compositions, OptimizerOptions,
};
pub use smooth::{
    largest_remainder_round, project_to_simplex, projected_gradient_optimize, smooth_loss_and_gradient, smoothed_cdf,
    smoothed_quantile, soft_max, soft_min, SmoothingParams,
};

use crate::error::{Error, Result};
use crate::quantiles::{grid_rank, order_stat_or_inf, sorted};
use crate::scores::IntervalForm;

/// Number of grid units in a nominal miscoverage level: `floor(alpha * n)`,
/// so the allocated total never exceeds `alpha`.
pub fn budget_units(alpha: f64, resolution: usize) -> usize {
    (alpha * resolution as f64 + 1e-9).floor() as usize
}

/// Integer budget units per score on the grid of the given resolution.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Allocation {
    units: Vec<usize>,
    resolution: usize,
}

impl Allocation {
    pub fn new(units: Vec<usize>, resolution: usize) -> Self {
        assert!(resolution > 0, "grid resolution must be positive");
        Allocation { units, resolution }
    }

    pub fn zeros(n_scores: usize, resolution: usize) -> Self {
        Self::new(vec![0; n_scores], resolution)
    }

    /// Whole budget on a single score.
    pub fn one_hot(n_scores: usize, index: usize, budget: usize, resolution: usize) -> Self {
        let mut units = vec![0; n_scores];
        units[index] = budget;
        Self::new(units, resolution)
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn budget(&self) -> usize {
        self.units.iter().sum()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.units.iter().map(|&u| u as f64 / self.resolution as f64).collect()
    }

    pub fn support(&self) -> Vec<usize> {
        self.units
            .iter()
            .enumerate()
            .filter(|(_, &u)| u > 0)
            .map(|(k, _)| k)
            .collect()
    }

    /// `/`-joined unit counts, e.g. `3/0/27`.
    pub fn to_slash_string(&self) -> String {
        self.units.iter().map(usize::to_string).collect::<Vec<_>>().join("/")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub iteration: usize,
    /// Score added by a forward step; `None` for gradient iterations.
    pub selected: Option<usize>,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub allocation: Allocation,
    /// Exact empirical loss of `allocation`.
    pub loss: f64,
    pub support: Vec<usize>,
    pub trace: Vec<TraceStep>,
}

impl AllocationResult {
    pub(crate) fn new(allocation: Allocation, loss: f64, trace: Vec<TraceStep>) -> Self {
        let support = allocation.support();
        AllocationResult {
            allocation,
            loss,
            support,
            trace,
        }
    }
}

/// Precomputed thresholds and sublevel-set bounds for empirical-loss
/// evaluation.
#[derive(Debug, Clone)]
pub struct LossOracle {
    n_scores: usize,
    n_points: usize,
    resolution: usize,
    budget: usize,
    /// `thresholds[k][u]`, `u = 0..=budget`
    thresholds: Vec<Vec<f64>>,
    /// `lower[k][u][i]` / `upper[k][u][i]`: endpoints of score k's set at
    /// evaluation point i when k holds u units
    lower: Vec<Vec<Vec<f64>>>,
    upper: Vec<Vec<Vec<f64>>>,
    /// sorted calibration scores per score, used by the smoothed objective
    columns: Vec<Vec<f64>>,
    /// `forms[k][i]`
    forms: Vec<Vec<IntervalForm>>,
}

impl LossOracle {
    /// Builds an oracle from an explicit threshold table.
    ///
    /// `columns[k]` are the calibration scores of score k, `point_forms[i][k]`
    /// the interval form of score k at evaluation point i, and
    /// `thresholds[k][u]` the threshold of score k at `u` units (all rows of
    /// equal length `budget + 1`).
    pub fn new(
        columns: Vec<Vec<f64>>,
        point_forms: &[Vec<IntervalForm>],
        thresholds: Vec<Vec<f64>>,
        resolution: usize,
    ) -> Result<Self> {
        let n_scores = columns.len();
        if n_scores == 0 || thresholds.len() != n_scores {
            return Err(Error::InvalidInput(format!(
                "{} score columns but {} threshold rows",
                n_scores,
                thresholds.len()
            )));
        }
        if point_forms.is_empty() {
            return Err(Error::InvalidInput("loss needs at least one evaluation point".into()));
        }
        if let Some(bad) = point_forms.iter().position(|f| f.len() != n_scores) {
            return Err(Error::InvalidInput(format!(
                "evaluation point {bad} has {} forms, expected {n_scores}",
                point_forms[bad].len()
            )));
        }
        let width = thresholds[0].len();
        if width == 0 || thresholds.iter().any(|t| t.len() != width) {
            return Err(Error::InvalidInput("ragged threshold table".into()));
        }
        let budget = width - 1;
        if budget > resolution {
            return Err(Error::InvalidInput(format!(
                "budget {budget} exceeds grid resolution {resolution}"
            )));
        }

        let forms: Vec<Vec<IntervalForm>> = (0..n_scores)
            .map(|k| point_forms.iter().map(|f| f[k]).collect())
            .collect();
        let mut lower = Vec::with_capacity(n_scores);
        let mut upper = Vec::with_capacity(n_scores);
        for (k, row) in thresholds.iter().enumerate() {
            let (mut lo_k, mut hi_k) = (Vec::with_capacity(width), Vec::with_capacity(width));
            for &t in row {
                let (lo, hi): (Vec<f64>, Vec<f64>) = forms[k].iter().map(|f| f.bounds(t)).unzip();
                lo_k.push(lo);
                hi_k.push(hi);
            }
            lower.push(lo_k);
            upper.push(hi_k);
        }
        Ok(LossOracle {
            n_scores,
            n_points: point_forms.len(),
            resolution,
            budget,
            thresholds,
            lower,
            upper,
            columns: columns.iter().map(|c| sorted(c)).collect(),
            forms,
        })
    }

    /// Oracle for split-conformal calibration: score k at `u` units uses
    /// the `+inf`-augmented quantile of `columns[k]` at level `u / n`, with
    /// `n` the calibration size and budget `floor(alpha * n)`.
    pub fn augmented(columns: Vec<Vec<f64>>, point_forms: &[Vec<IntervalForm>], alpha: f64) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if n == 0 || columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput(
                "calibration columns must be nonempty and equally long".into(),
            ));
        }
        let budget = budget_units(alpha, n);
        let thresholds = columns
            .iter()
            .map(|c| {
                let s = sorted(c);
                (0..=budget)
                    .map(|u| order_stat_or_inf(&s, grid_rank(u, n, n + 1)))
                    .collect()
            })
            .collect();
        Self::new(columns, point_forms, thresholds, n)
    }

    pub fn n_scores(&self) -> usize {
        self.n_scores
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// `budget / resolution`
    pub fn budget_alpha(&self) -> f64 {
        self.budget as f64 / self.resolution as f64
    }

    pub fn threshold(&self, score: usize, units: usize) -> f64 {
        self.thresholds[score][units]
    }

    pub fn thresholds_for(&self, alloc: &Allocation) -> Vec<f64> {
        alloc
            .units()
            .iter()
            .enumerate()
            .map(|(k, &u)| self.thresholds[k][u])
            .collect()
    }

    pub(crate) fn bounds(&self, score: usize, units: usize) -> (&[f64], &[f64]) {
        (&self.lower[score][units], &self.upper[score][units])
    }

    pub(crate) fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub(crate) fn forms(&self, score: usize) -> &[IntervalForm] {
        &self.forms[score]
    }

    pub(crate) fn check(&self, alloc: &Allocation) -> Result<()> {
        if alloc.units().len() != self.n_scores {
            return Err(Error::InvalidInput(format!(
                "allocation has {} entries, oracle has {} scores",
                alloc.units().len(),
                self.n_scores
            )));
        }
        if alloc.resolution() != self.resolution {
            return Err(Error::InvalidInput(format!(
                "allocation grid {} differs from oracle grid {}",
                alloc.resolution(),
                self.resolution
            )));
        }
        if let Some(k) = alloc.units().iter().position(|&u| u > self.budget) {
            return Err(Error::InvalidInput(format!("score {k} exceeds the precomputed budget")));
        }
        Ok(())
    }
}

/// Sum over points of `max(0, min(hi) - max(lo))`, shared by every loss
/// path so that equal allocations give bit-identical losses.
#[inline]
pub(crate) fn interval_total(lo: &[f64], hi: &[f64]) -> f64 {
    lo.iter().zip(hi).map(|(&l, &h)| if h >= l { h - l } else { 0.0 }).sum()
}

/// Mean measure of the intersected sets over the oracle's evaluation
/// points. A score holding zero units contributes no constraint, so the
/// loss is `+inf` when no score is constrained.
pub fn empirical_loss(oracle: &LossOracle, alloc: &Allocation) -> Result<f64> {
    oracle.check(alloc)?;
    let m = oracle.n_points();
    let mut lo = vec![f64::NEG_INFINITY; m];
    let mut hi = vec![f64::INFINITY; m];
    for (k, &u) in alloc.units().iter().enumerate() {
        let (l, h) = oracle.bounds(k, u);
        for i in 0..m {
            lo[i] = lo[i].max(l[i]);
            hi[i] = hi[i].min(h[i]);
        }
    }
    Ok(interval_total(&lo, &hi) / m as f64)
}
