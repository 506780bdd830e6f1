//! End-to-end predictors: the four allocation variants and the baselines.
//!
//! Every fitted predictor works on per-point [`IntervalForm`]s, so the same
//! code serves models evaluated in-process and score matrices computed
//! elsewhere.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::allocation::{
    budget_units, exhaustive_search, projected_gradient_optimize, singleton_search, stepwise_optimize, Allocation,
    AllocationResult, LossOracle, OptimizerOptions, SmoothingParams,
};
use crate::error::{Error, Result};
use crate::localized::{kernel_weights, KernelSpec};
use crate::quantiles::{augmented_quantile, grid_rank, order_stat_or_inf, sorted, QuantileLevel, WeightedCdf};
use crate::scores::{build_forms, build_score_matrix, IntervalForm, ScoreMatrix, ScoreSpec};
use crate::sets::{IntervalUnion, PredictionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    ColaE,
    ColaS,
    ColaF,
    ColaL,
    Efcp,
    Vfcp,
    Majority,
    Sat,
    Random,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::ColaE,
        Method::ColaS,
        Method::ColaF,
        Method::ColaL,
        Method::Efcp,
        Method::Vfcp,
        Method::Majority,
        Method::Sat,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ColaE => "cola-e",
            Method::ColaS => "cola-s",
            Method::ColaF => "cola-f",
            Method::ColaL => "cola-l",
            Method::Efcp => "efcp",
            Method::Vfcp => "vfcp",
            Method::Majority => "majority",
            Method::Sat => "sat",
            Method::Random => "random",
        }
    }

    /// Methods that must evaluate scores at hypothesized labels or at new
    /// feature vectors.
    pub fn needs_models(self) -> bool {
        matches!(self, Method::ColaF | Method::ColaL | Method::Sat)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Which allocation search to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Stepwise,
    Exhaustive,
    Smooth,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stepwise" => Ok(Optimizer::Stepwise),
            "exhaustive" => Ok(Optimizer::Exhaustive),
            "smooth" => Ok(Optimizer::Smooth),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Stepwise => "stepwise",
            Optimizer::Exhaustive => "exhaustive",
            Optimizer::Smooth => "smooth",
        })
    }
}

pub fn optimize(oracle: &LossOracle, optimizer: Optimizer, opts: &OptimizerOptions) -> Result<AllocationResult> {
    match optimizer {
        Optimizer::Stepwise => stepwise_optimize(oracle, opts),
        Optimizer::Exhaustive => exhaustive_search(oracle, &(0..oracle.n_scores()).collect::<Vec<_>>()),
        Optimizer::Smooth => projected_gradient_optimize(oracle, &SmoothingParams::for_oracle(oracle)),
    }
}

/// Uniformly spaced hypothesized labels for the label-search methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YGrid {
    lo: f64,
    hi: f64,
    count: usize,
}

impl YGrid {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidInput(format!(
                "label grid needs lo < hi and count >= 2, got [{lo}, {hi}] x {count}"
            )));
        }
        Ok(YGrid { lo, hi, count })
    }

    /// `[min - range, max + range]` around the observed labels.
    pub fn around(y: &[f64], count: usize) -> Result<Self> {
        let min = y.iter().copied().fold(f64::INFINITY, f64::min);
        let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if max > min { max - min } else { 1.0 };
        Self::new(min - range, max + range, count)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        if j == self.count - 1 {
            self.hi
        } else {
            self.lo + j as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.count).map(|j| self.point(j)).collect()
    }

    /// Union of the cells of the included grid points. Each point owns the
    /// cell centered on it; the two end points own half cells.
    pub fn cells(&self, included: &[bool]) -> IntervalUnion {
        // neighbouring cells share the same computed edge, so they merge
        let edge = |j: usize| {
            if j + 1 >= self.count {
                self.hi
            } else {
                self.lo + (j as f64 + 0.5) * self.step()
            }
        };
        let raw: Vec<(f64, f64)> = included
            .iter()
            .enumerate()
            .filter(|(_, &inc)| inc)
            .map(|(j, _)| (if j == 0 { self.lo } else { edge(j - 1) }, edge(j)))
            .collect();
        IntervalUnion::normalize(&raw).expect("grid cells are finite")
    }
}

/// Calibration rows: scores, per-score interval forms, and the features
/// and labels when they are known.
#[derive(Debug, Clone)]
pub struct Holdout {
    specs: Vec<ScoreSpec>,
    scores: ScoreMatrix,
    /// `forms[i][k]`
    forms: Vec<Vec<IntervalForm>>,
    x: Option<Vec<Vec<f64>>>,
    y: Option<Vec<f64>>,
}

impl Holdout {
    pub fn from_specs(specs: Vec<ScoreSpec>, x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidInput("no scores".into()));
        }
        let scores = build_score_matrix(&specs, &x, &y)?;
        let forms = build_forms(&specs, &x)?;
        Ok(Holdout {
            specs,
            scores,
            forms,
            x: Some(x),
            y: Some(y),
        })
    }

    /// Precomputed scores. `forms[i][k]` describes the sublevel sets of
    /// score `k` at row `i`; the specs are opaque external scores.
    pub fn from_scores(scores: ScoreMatrix, forms: Vec<Vec<IntervalForm>>, y: Option<Vec<f64>>) -> Result<Self> {
        let k = scores.n_scores();
        if forms.len() != scores.n_rows() || forms.iter().any(|f| f.len() != k) {
            return Err(Error::InvalidInput(
                "interval forms do not match the score matrix".into(),
            ));
        }
        if y.as_ref().is_some_and(|y| y.len() != scores.n_rows()) {
            return Err(Error::InvalidInput(
                "label count does not match the score matrix".into(),
            ));
        }
        let specs = (1..=k).map(|j| ScoreSpec::External { name: format!("s{j}") }).collect();
        Ok(Holdout {
            specs,
            scores,
            forms,
            x: None,
            y,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_scores(&self) -> usize {
        self.scores.n_scores()
    }

    pub fn specs(&self) -> &[ScoreSpec] {
        &self.specs
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    pub fn forms(&self) -> &[Vec<IntervalForm>] {
        &self.forms
    }

    pub fn x(&self) -> Option<&[Vec<f64>]> {
        self.x.as_deref()
    }

    pub fn y(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    /// Interval forms of every score at `x_new`.
    pub fn forms_at(&self, x_new: &[f64]) -> Result<Vec<IntervalForm>> {
        self.specs.iter().map(|s| s.interval_form(x_new)).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Holdout {
        Holdout {
            specs: self.specs.clone(),
            scores: self.scores.select_rows(idx),
            forms: idx.iter().map(|&i| self.forms[i].clone()).collect(),
            x: self.x.as_ref().map(|x| idx.iter().map(|&i| x[i].clone()).collect()),
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i]).collect()),
        }
    }

    /// Loss oracle calibrated and evaluated on these rows.
    pub fn oracle(&self, alpha: f64) -> Result<LossOracle> {
        LossOracle::augmented(self.scores.columns(), &self.forms, alpha)
    }
}

/// Seeded random halves `(tuning, calibration)` with `floor(n / 2)` tuning
/// rows.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cal = idx.split_off(n / 2);
    (idx, cal)
}

/// A fitted intersection of per-score sublevel sets.
#[derive(Debug, Clone)]
pub struct ConformalPredictor {
    method: Method,
    alpha: f64,
    specs: Vec<ScoreSpec>,
    allocation: Allocation,
    thresholds: Vec<f64>,
    fit_loss: f64,
}

impl ConformalPredictor {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn allocation(&self) -> &Allocation {
        &self.allocation
    }

    /// Calibrated threshold per score; `+inf` where the score holds no
    /// budget.
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Empirical loss of the allocation on the rows used to choose it.
    pub fn fit_loss(&self) -> f64 {
        self.fit_loss
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictionSet> {
        let mut set = PredictionSet::real_line();
        for (spec, &t) in self.specs.iter().zip(&self.thresholds) {
            if t < f64::INFINITY {
                set = set.intersect(&spec.sublevel(x, t)?)?;
            }
        }
        Ok(set)
    }

    pub fn predict_forms(&self, forms: &[IntervalForm]) -> IntervalUnion {
        intersect_forms(forms, &self.thresholds)
    }

    /// Whether a point with these scores lies in the set.
    pub fn covers_scores(&self, scores: &[f64]) -> bool {
        scores.iter().zip(&self.thresholds).all(|(s, t)| s <= t)
    }
}

fn intersect_forms(forms: &[IntervalForm], thresholds: &[f64]) -> IntervalUnion {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (f, &t) in forms.iter().zip(thresholds) {
        let (l, h) = f.bounds(t);
        lo = lo.max(l);
        hi = hi.min(h);
    }
    if lo > hi {
        IntervalUnion::empty()
    } else if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
        IntervalUnion::real_line()
    } else {
        IntervalUnion::normalize(&[(lo, hi)]).expect("non-NaN bounds")
    }
}

fn predictor(
    method: Method,
    alpha: f64,
    holdout: &Holdout,
    result: AllocationResult,
    thresholds: Vec<f64>,
) -> ConformalPredictor {
    ConformalPredictor {
        method,
        alpha,
        specs: holdout.specs.clone(),
        allocation: result.allocation,
        thresholds,
        fit_loss: result.loss,
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha = {alpha} must lie in (0, 1)")))
    }
}

/// Allocation chosen and calibrated on the full holdout.
pub fn fit_cola_e(holdout: &Holdout, alpha: f64, opts: &OptimizerOptions) -> Result<ConformalPredictor> {
    fit_full(Method::ColaE, holdout, alpha, |o| stepwise_optimize(o, opts))
}

/// Best single score on the full holdout.
pub fn fit_efcp(holdout: &Holdout, alpha: f64) -> Result<ConformalPredictor> {
    fit_full(Method::Efcp, holdout, alpha, |o| {
        singleton_search(o, &(0..o.n_scores()).collect::<Vec<_>>())
    })
}

/// One score picked uniformly at random, calibrated on the full holdout.
pub fn fit_random_select(holdout: &Holdout, alpha: f64, seed: u64) -> Result<ConformalPredictor> {
    let pick = ChaCha8Rng::seed_from_u64(seed).random_range(0..holdout.n_scores());
    fit_full(Method::Random, holdout, alpha, |o| {
        let alloc = Allocation::one_hot(o.n_scores(), pick, o.budget(), o.resolution());
        let loss = crate::allocation::empirical_loss(o, &alloc)?;
        Ok(AllocationResult::new(alloc, loss, Vec::new()))
    })
}

fn fit_full(
    method: Method,
    holdout: &Holdout,
    alpha: f64,
    search: impl FnOnce(&LossOracle) -> Result<AllocationResult>,
) -> Result<ConformalPredictor> {
    check_alpha(alpha)?;
    let oracle = holdout.oracle(alpha)?;
    let result = search(&oracle)?;
    let thresholds = oracle.thresholds_for(&result.allocation);
    Ok(predictor(method, alpha, holdout, result, thresholds))
}

/// Allocation chosen on a random half, thresholds recalibrated on the
/// other half.
pub fn fit_cola_s(
    holdout: &Holdout,
    alpha: f64,
    split_seed: u64,
    opts: &OptimizerOptions,
) -> Result<ConformalPredictor> {
    fit_split(Method::ColaS, holdout, alpha, split_seed, |o| {
        stepwise_optimize(o, opts)
    })
}

/// Best single score on a random half, recalibrated on the other half.
pub fn fit_vfcp(holdout: &Holdout, alpha: f64, split_seed: u64) -> Result<ConformalPredictor> {
    fit_split(Method::Vfcp, holdout, alpha, split_seed, |o| {
        singleton_search(o, &(0..o.n_scores()).collect::<Vec<_>>())
    })
}

fn fit_split(
    method: Method,
    holdout: &Holdout,
    alpha: f64,
    split_seed: u64,
    search: impl FnOnce(&LossOracle) -> Result<AllocationResult>,
) -> Result<ConformalPredictor> {
    check_alpha(alpha)?;
    if holdout.len() < 2 {
        return Err(Error::InvalidInput(
            "sample splitting needs at least two holdout rows".into(),
        ));
    }
    let (tu, cal) = split_indices(holdout.len(), split_seed);
    let tuning = holdout.subset(&tu);
    let oracle = tuning.oracle(alpha)?;
    let result = search(&oracle)?;
    let calibration = holdout.scores.select_rows(&cal);
    let n_tu = tu.len();
    let thresholds = result
        .allocation
        .units()
        .iter()
        .enumerate()
        .map(|(k, &u)| order_stat_or_inf(&sorted(&calibration.column(k)), grid_rank(u, n_tu, cal.len() + 1)))
        .collect();
    Ok(predictor(method, alpha, holdout, result, thresholds))
}

/// Sets at level `1 - alpha/2` per score, combined by strict majority.
#[derive(Debug, Clone)]
pub struct MajorityVote {
    specs: Vec<ScoreSpec>,
    thresholds: Vec<f64>,
}

pub fn fit_majority_vote(holdout: &Holdout, alpha: f64) -> Result<MajorityVote> {
    check_alpha(alpha)?;
    let level = QuantileLevel::new(alpha / 2.0)?;
    let thresholds = holdout
        .scores
        .columns()
        .iter()
        .map(|c| augmented_quantile(c, level))
        .collect::<Result<_>>()?;
    Ok(MajorityVote {
        specs: holdout.specs.clone(),
        thresholds,
    })
}

impl MajorityVote {
    pub fn from_thresholds(specs: Vec<ScoreSpec>, thresholds: Vec<f64>) -> Self {
        MajorityVote { specs, thresholds }
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    fn quorum(&self) -> usize {
        self.thresholds.len() / 2 + 1
    }

    pub fn predict(&self, x: &[f64]) -> Result<PredictionSet> {
        Ok(self
            .predict_forms(
                &self
                    .specs
                    .iter()
                    .map(|s| s.interval_form(x))
                    .collect::<Result<Vec<_>>>()?,
            )
            .into())
    }

    pub fn predict_forms(&self, forms: &[IntervalForm]) -> IntervalUnion {
        let sets: Vec<IntervalUnion> = forms
            .iter()
            .zip(&self.thresholds)
            .map(|(f, &t)| f.sublevel(t))
            .collect();
        IntervalUnion::covered_at_least(&sets, self.quorum())
    }

    pub fn covers_scores(&self, scores: &[f64]) -> bool {
        scores.iter().zip(&self.thresholds).filter(|(s, t)| s <= t).count() >= self.quorum()
    }
}

pub fn predict_majority_vote(holdout: &Holdout, alpha: f64, x_new: &[f64]) -> Result<PredictionSet> {
    fit_majority_vote(holdout, alpha)?.predict(x_new)
}

/// Conformal p-values merged with the Cauchy combination test.
#[derive(Debug, Clone)]
pub struct Sat {
    alpha: f64,
    specs: Vec<ScoreSpec>,
    columns: Vec<Vec<f64>>,
}

const P_CEILING: f64 = 1.0 - 1e-12;

/// `0.5 - arctan(mean tan(pi (0.5 - p_k))) / pi`, each `p_k` clamped to
/// `[1/(n+1), 1 - 1e-12]` first.
pub fn cauchy_combine(p_values: &[f64], n: usize) -> f64 {
    let floor = 1.0 / (n + 1) as f64;
    let t = p_values
        .iter()
        .map(|&p| (std::f64::consts::PI * (0.5 - p.clamp(floor, P_CEILING))).tan())
        .sum::<f64>()
        / p_values.len() as f64;
    0.5 - t.atan() / std::f64::consts::PI
}

pub fn fit_sat(holdout: &Holdout, alpha: f64) -> Result<Sat> {
    check_alpha(alpha)?;
    Ok(Sat {
        alpha,
        specs: holdout.specs.clone(),
        columns: holdout.scores.columns().iter().map(|c| sorted(c)).collect(),
    })
}

impl Sat {
    pub fn combined_p_value(&self, scores: &[f64]) -> f64 {
        let n = self.columns[0].len();
        let p: Vec<f64> = self
            .columns
            .iter()
            .zip(scores)
            .map(|(col, &s)| (1 + n - col.partition_point(|&v| v < s)) as f64 / (n + 1) as f64)
            .collect();
        cauchy_combine(&p, n)
    }

    pub fn covers_scores(&self, scores: &[f64]) -> bool {
        self.combined_p_value(scores) > self.alpha
    }

    pub fn predict_forms(&self, forms: &[IntervalForm], grid: &YGrid) -> IntervalUnion {
        let included: Vec<bool> = grid
            .points()
            .into_par_iter()
            .map(|y| self.covers_scores(&forms.iter().map(|f| f.score(y)).collect::<Vec<_>>()))
            .collect();
        grid.cells(&included)
    }

    pub fn predict(&self, x: &[f64], grid: &YGrid) -> Result<PredictionSet> {
        let forms = self
            .specs
            .iter()
            .map(|s| s.interval_form(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.predict_forms(&forms, grid).into())
    }
}

pub fn predict_sat(holdout: &Holdout, alpha: f64, x_new: &[f64], grid: &YGrid) -> Result<PredictionSet> {
    fit_sat(holdout, alpha)?.predict(x_new, grid)
}

/// Label-augmented allocation: for each grid label the test point joins
/// the calibration sample, the allocation is refit over all `n + 1` rows,
/// and the label is kept if it lies in the resulting set at `x_new`.
pub fn predict_cola_f(
    holdout: &Holdout,
    alpha: f64,
    x_new: &[f64],
    grid: &YGrid,
    opts: &OptimizerOptions,
) -> Result<PredictionSet> {
    let forms = holdout.forms_at(x_new)?;
    Ok(predict_cola_f_forms(holdout, alpha, &forms, grid, opts)?.into())
}

pub fn predict_cola_f_forms(
    holdout: &Holdout,
    alpha: f64,
    forms_new: &[IntervalForm],
    grid: &YGrid,
    opts: &OptimizerOptions,
) -> Result<IntervalUnion> {
    check_alpha(alpha)?;
    let columns: Vec<Vec<f64>> = holdout.scores.columns().iter().map(|c| sorted(c)).collect();
    let mut point_forms = holdout.forms.clone();
    point_forms.push(forms_new.to_vec());
    let included = grid
        .points()
        .into_par_iter()
        .map(|y| cola_f_includes(&columns, &point_forms, alpha, y, opts))
        .collect::<Result<Vec<bool>>>()?;
    Ok(grid.cells(&included))
}

/// `point_forms` holds the calibration rows followed by the test point.
fn cola_f_includes(
    sorted_columns: &[Vec<f64>],
    point_forms: &[Vec<IntervalForm>],
    alpha: f64,
    y: f64,
    opts: &OptimizerOptions,
) -> Result<bool> {
    let forms_new = point_forms.last().expect("test point present");
    let m = sorted_columns[0].len() + 1;
    let budget = budget_units(alpha, m);
    let mut augmented = Vec::with_capacity(sorted_columns.len());
    let mut thresholds = Vec::with_capacity(sorted_columns.len());
    for (col, form) in sorted_columns.iter().zip(forms_new) {
        let s = form.score(y);
        let mut aug = col.clone();
        aug.insert(col.partition_point(|&v| v < s), s);
        thresholds.push((0..=budget).map(|u| aug[grid_rank(u, m, m) - 1]).collect());
        augmented.push(aug);
    }
    let oracle = LossOracle::new(augmented, point_forms, thresholds, m)?;
    let result = stepwise_optimize(&oracle, opts)?;
    let t = oracle.thresholds_for(&result.allocation);
    Ok(forms_new.iter().zip(&t).all(|(f, &tk)| f.score(y) <= tk))
}

/// Per-score thresholds from kernel-weighted quantiles at `x_new`, with
/// `+inf` at zero units.
fn localized_thresholds(
    holdout: &Holdout,
    alpha: f64,
    x_new: &[f64],
    kernel: &KernelSpec,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let x = holdout
        .x()
        .ok_or_else(|| Error::Unsupported("localized calibration needs holdout features".into()))?;
    let w = kernel_weights(x, x_new, kernel)?.weights;
    let n = holdout.len();
    let budget = budget_units(alpha, n);
    let thresholds = holdout
        .scores
        .columns()
        .iter()
        .map(|c| {
            let cdf = WeightedCdf::new(c, &w)?;
            Ok((0..=budget)
                .map(|u| {
                    if u == 0 {
                        f64::INFINITY
                    } else {
                        cdf.quantile(u as f64 / n as f64)
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((thresholds, n))
}

/// Allocation tuned for the single test point `x_new`, with thresholds
/// from kernel-weighted quantiles.
pub fn predict_cola_l(
    holdout: &Holdout,
    alpha: f64,
    x_new: &[f64],
    kernel: &KernelSpec,
    opts: &OptimizerOptions,
) -> Result<(PredictionSet, Allocation)> {
    check_alpha(alpha)?;
    let forms = holdout.forms_at(x_new)?;
    let (thresholds, n) = localized_thresholds(holdout, alpha, x_new, kernel)?;
    let oracle = LossOracle::new(holdout.scores.columns(), std::slice::from_ref(&forms), thresholds, n)?;
    let result = stepwise_optimize(&oracle, opts)?;
    let t = oracle.thresholds_for(&result.allocation);
    Ok((intersect_forms(&forms, &t).into(), result.allocation))
}

/// Kernel-weighted thresholds at `x_new` for a fixed allocation.
pub fn predict_localized_with_allocation(
    holdout: &Holdout,
    alloc: &Allocation,
    x_new: &[f64],
    kernel: &KernelSpec,
) -> Result<PredictionSet> {
    let alpha = alloc.budget() as f64 / alloc.resolution() as f64;
    let (thresholds, n) = localized_thresholds(holdout, alpha, x_new, kernel)?;
    if alloc.resolution() != n || alloc.units().len() != holdout.n_scores() {
        return Err(Error::InvalidInput("allocation does not match the holdout".into()));
    }
    let t: Vec<f64> = alloc
        .units()
        .iter()
        .enumerate()
        .map(|(k, &u)| thresholds[k][u])
        .collect();
    Ok(intersect_forms(&holdout.forms_at(x_new)?, &t).into())
}
