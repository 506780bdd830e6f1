//! Order statistics used for calibration.
//!
//! Ranks are computed as `ceil((1 - alpha) * count)`. Grid levels
//! `alpha = units / resolution` go through exact integer arithmetic
//! ([`grid_rank`]); arbitrary real levels subtract `1e-9` before the ceiling
//! so that both routes agree on every grid level.

use crate::error::{Error, Result};
use crate::localized::WeightVector;

const RANK_SLACK: f64 = 1e-9;
/// Cumulative weights within this of the target count as reaching it.
pub const WEIGHT_SLACK: f64 = 1e-12;

/// A miscoverage level in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidInput(format!("miscoverage level {alpha} outside [0, 1]")));
        }
        Ok(QuantileLevel(alpha))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `ceil((1 - alpha) * count)` for a real level, at least 1.
pub fn real_rank(alpha: f64, count: usize) -> usize {
    (((1.0 - alpha) * count as f64 - RANK_SLACK).ceil() as usize).max(1)
}

/// `ceil((1 - units / resolution) * count)` in exact integer arithmetic, at
/// least 1.
pub fn grid_rank(units: usize, resolution: usize, count: usize) -> usize {
    assert!(units <= resolution && resolution > 0);
    ((resolution - units) * count).div_ceil(resolution).max(1)
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// The r-th smallest element of `sorted` (1-based), or `+inf` past the end.
/// This is the quantile of `sorted` with one extra `+inf` appended.
pub fn order_stat_or_inf(sorted: &[f64], rank: usize) -> f64 {
    if rank > sorted.len() {
        f64::INFINITY
    } else {
        sorted[rank - 1]
    }
}

/// The `(1 - alpha)` empirical quantile of `values` together with `+inf`:
/// the `ceil((1 - alpha)(n + 1))`-th smallest value, or `+inf` when that
/// rank exceeds `n`.
pub fn augmented_quantile(values: &[f64], alpha: QuantileLevel) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("quantile of an empty sample".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in quantile sample".into()));
    }
    let rank = real_rank(alpha.value(), values.len() + 1);
    Ok(order_stat_or_inf(&sorted(values), rank))
}

/// Cumulative weighted distribution of a sample, for repeated quantile
/// queries.
#[derive(Debug, Clone)]
pub struct WeightedCdf {
    sorted: Vec<f64>,
    cumulative: Vec<f64>,
}

impl WeightedCdf {
    pub fn new(values: &[f64], weights: &WeightVector) -> Result<Self> {
        let w = weights.as_slice();
        if w.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} values but {} weights",
                values.len(),
                w.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::InvalidInput("quantile of an empty sample".into()));
        }
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(order.len());
        for &i in &order {
            acc += w[i];
            cumulative.push(acc);
        }
        Ok(WeightedCdf {
            sorted: order.iter().map(|&i| values[i]).collect(),
            cumulative,
        })
    }

    /// Smallest sample value whose cumulative weight reaches `1 - alpha`;
    /// the sample maximum if rounding keeps the total below the target.
    pub fn quantile(&self, alpha: f64) -> f64 {
        let target = 1.0 - alpha - WEIGHT_SLACK;
        let idx = self.cumulative.partition_point(|&c| c < target);
        self.sorted[idx.min(self.sorted.len() - 1)]
    }
}

/// The `(1 - alpha)` quantile of `sum_i w_i * delta(values_i)`.
pub fn weighted_quantile(values: &[f64], weights: &WeightVector, alpha: QuantileLevel) -> Result<f64> {
    Ok(WeightedCdf::new(values, weights)?.quantile(alpha.value()))
}

/// `(1 + #{i : calibration_i >= s_new}) / (n + 1)`.
pub fn conformal_p_value(calibration: &[f64], s_new: f64) -> f64 {
    let at_least = calibration.iter().filter(|&&s| s >= s_new).count();
    (1 + at_least) as f64 / (calibration.len() + 1) as f64
}
