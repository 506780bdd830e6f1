//! Nonconformity scores and their sublevel sets.
//!
//! All built-in scores share one shape: at a fixed `x` the score is
//! `max(lo - y, y - hi) / scale` for some `lo`, `hi` and `scale > 0`, so the
//! sublevel set `{y : S(x, y) <= t}` is the single interval
//! `[lo - scale * t, hi + scale * t]`. [`IntervalForm`] carries that triple
//! and lets the allocation search work with plain arrays. Residual-type
//! scores never produce an empty sublevel set for `t >= 0`; a CQR score can
//! when `t` is negative enough.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sets::{IntervalUnion, PredictionSet};

/// Lower bound applied to every scale estimate.
pub const SIGMA_MIN: f64 = 1e-8;

/// A prediction function of a feature vector.
pub type Handle = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// The sublevel-set shape of an interval-type score at one feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalForm {
    pub lo: f64,
    pub hi: f64,
    pub scale: f64,
}

impl IntervalForm {
    /// Form of a residual score centered at `center`.
    pub fn centered(center: f64) -> Self {
        IntervalForm {
            lo: center,
            hi: center,
            scale: 1.0,
        }
    }

    pub fn score(&self, y: f64) -> f64 {
        (self.lo - y).max(y - self.hi) / self.scale
    }

    /// Endpoints of `{y : score(y) <= t}`; `lo > hi` means empty.
    #[inline]
    pub fn bounds(&self, t: f64) -> (f64, f64) {
        if t == f64::INFINITY {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            (self.lo - self.scale * t, self.hi + self.scale * t)
        }
    }

    pub fn sublevel(&self, t: f64) -> IntervalUnion {
        let (lo, hi) = self.bounds(t);
        if lo > hi {
            IntervalUnion::empty()
        } else {
            IntervalUnion::single(lo, hi).expect("finite form with non-NaN threshold")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Residual,
    RescaledResidual,
    Cqr,
    External,
}

/// A nonconformity score together with the fitted models it needs.
#[derive(Clone)]
pub enum ScoreSpec {
    /// `|y - mean(x)|`
    Residual { mean: Handle },
    /// `|y - mean(x)| / max(scale(x), SIGMA_MIN)`
    Rescaled { mean: Handle, scale: Handle },
    /// `max(lower(x) - y, y - upper(x))`; the quantile levels of the two
    /// models are fixed when they are trained.
    Cqr { lower: Handle, upper: Handle },
    /// Scores computed elsewhere and supplied as a matrix. They take part in
    /// allocation fitting but cannot be evaluated at new points.
    External { name: String },
}

impl fmt::Debug for ScoreSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreSpec::External { name } => write!(f, "External({name})"),
            other => write!(f, "{:?}", other.kind()),
        }
    }
}

impl ScoreSpec {
    pub fn residual(mean: Handle) -> Self {
        ScoreSpec::Residual { mean }
    }

    pub fn rescaled(mean: Handle, scale: Handle) -> Self {
        ScoreSpec::Rescaled { mean, scale }
    }

    pub fn cqr(lower: Handle, upper: Handle) -> Self {
        ScoreSpec::Cqr { lower, upper }
    }

    pub fn kind(&self) -> ScoreKind {
        match self {
            ScoreSpec::Residual { .. } => ScoreKind::Residual,
            ScoreSpec::Rescaled { .. } => ScoreKind::RescaledResidual,
            ScoreSpec::Cqr { .. } => ScoreKind::Cqr,
            ScoreSpec::External { .. } => ScoreKind::External,
        }
    }

    pub fn is_evaluable(&self) -> bool {
        self.kind() != ScoreKind::External
    }

    pub fn interval_form(&self, x: &[f64]) -> Result<IntervalForm> {
        match self {
            ScoreSpec::Residual { mean } => Ok(IntervalForm::centered(mean(x))),
            ScoreSpec::Rescaled { mean, scale } => {
                let m = mean(x);
                Ok(IntervalForm {
                    lo: m,
                    hi: m,
                    scale: scale(x).max(SIGMA_MIN),
                })
            }
            ScoreSpec::Cqr { lower, upper } => Ok(IntervalForm {
                lo: lower(x),
                hi: upper(x),
                scale: 1.0,
            }),
            ScoreSpec::External { name } => Err(Error::Unsupported(format!(
                "external score `{name}` cannot be evaluated at new points"
            ))),
        }
    }

    pub fn evaluate(&self, x: &[f64], y: f64) -> Result<f64> {
        Ok(self.interval_form(x)?.score(y))
    }

    /// `{y : S(x, y) <= t}`; `t = +inf` gives the whole line.
    pub fn sublevel(&self, x: &[f64], t: f64) -> Result<PredictionSet> {
        if t.is_nan() {
            return Err(Error::InvalidInput("NaN threshold".into()));
        }
        Ok(self.interval_form(x)?.sublevel(t).into())
    }
}

/// Holdout scores, `values[i][k] = S_k(X_i, Y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    values: Vec<Vec<f64>>,
    n_scores: usize,
}

impl ScoreMatrix {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let n_scores = values.first().map_or(0, Vec::len);
        if values.is_empty() || n_scores == 0 {
            return Err(Error::InvalidInput(
                "score matrix needs at least one row and one column".into(),
            ));
        }
        for (row, r) in values.iter().enumerate() {
            if r.len() != n_scores {
                return Err(Error::InvalidInput(format!(
                    "row {row} has {} scores, expected {n_scores}",
                    r.len()
                )));
            }
            if let Some(score) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteScore { row, score });
            }
        }
        Ok(ScoreMatrix { values, n_scores })
    }

    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn n_scores(&self) -> usize {
        self.n_scores
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[k]).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_scores).map(|k| self.column(k)).collect()
    }

    /// Rows selected by `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> ScoreMatrix {
        ScoreMatrix {
            values: idx.iter().map(|&i| self.values[i].clone()).collect(),
            n_scores: self.n_scores,
        }
    }
}

pub fn build_score_matrix(specs: &[ScoreSpec], x: &[Vec<f64>], y: &[f64]) -> Result<ScoreMatrix> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "need matching nonempty data, got {} feature rows and {} labels",
            x.len(),
            y.len()
        )));
    }
    let mut values = Vec::with_capacity(x.len());
    for (row, (xi, &yi)) in x.iter().zip(y).enumerate() {
        let mut r = Vec::with_capacity(specs.len());
        for (score, spec) in specs.iter().enumerate() {
            let s = spec.evaluate(xi, yi)?;
            if !s.is_finite() {
                return Err(Error::NonFiniteScore { row, score });
            }
            r.push(s);
        }
        values.push(r);
    }
    ScoreMatrix::new(values)
}

/// Interval forms of every score at every row, `forms[i][k]`.
pub fn build_forms(specs: &[ScoreSpec], x: &[Vec<f64>]) -> Result<Vec<Vec<IntervalForm>>> {
    x.iter()
        .map(|xi| specs.iter().map(|s| s.interval_form(xi)).collect())
        .collect()
}
