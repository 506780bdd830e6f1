//! Smooth relaxation of the empirical loss and a projected-gradient solver.
//!
//! Quantiles are replaced by inverses of Gaussian-kernel-smoothed CDFs and
//! the `min`/`max` over scores by log-sum-exp. The quantile convention is
//! the same `(1 - alpha)` level used everywhere else, so
//! `q_k = F_k^{-1}(1 - alpha_k)` and `dq_k / dalpha_k` is negative.

use statrs::function::erf::erfc;

use super::{empirical_loss, Allocation, AllocationResult, LossOracle, TraceStep};
use crate::error::{Error, Result};

const ALPHA_FLOOR: f64 = 1e-6;
const QUANTILE_TOL: f64 = 1e-12;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingParams {
    /// Log-sum-exp temperature.
    pub tau1: f64,
    /// Per-score kernel bandwidths of the smoothed CDFs.
    pub tau2: Vec<f64>,
    /// Initial step; non-positive picks one from the first gradient.
    pub step_size: f64,
    pub max_iter: usize,
    /// Stop once no coordinate moves by more than this.
    pub tol: f64,
}

impl SmoothingParams {
    /// `tau1 = 20` and Silverman bandwidths `sd_k * n^(-1/5)`.
    pub fn silverman(columns: &[Vec<f64>]) -> Self {
        let tau2 = columns
            .iter()
            .map(|c| {
                let n = c.len() as f64;
                let mean = c.iter().sum::<f64>() / n;
                let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
                (var.sqrt() * n.powf(-0.2)).max(1e-8)
            })
            .collect();
        SmoothingParams {
            tau1: 20.0,
            tau2,
            step_size: 0.0,
            max_iter: 200,
            tol: 1e-9,
        }
    }

    pub fn for_oracle(oracle: &LossOracle) -> Self {
        Self::silverman(oracle.columns())
    }
}

/// `(1/n) sum_i Phi((s - S_i) / tau)`
pub fn smoothed_cdf(scores: &[f64], tau: f64, s: f64) -> f64 {
    scores.iter().map(|&v| norm_cdf((s - v) / tau)).sum::<f64>() / scores.len() as f64
}

fn smoothed_sf(scores: &[f64], tau: f64, s: f64) -> f64 {
    scores.iter().map(|&v| norm_cdf((v - s) / tau)).sum::<f64>() / scores.len() as f64
}

fn smoothed_density_sum(scores: &[f64], tau: f64, s: f64) -> f64 {
    scores.iter().map(|&v| norm_pdf((s - v) / tau)).sum()
}

/// The `s` with `smoothed_cdf(s) = 1 - alpha`, bracketed in
/// `[min - 10 tau, max + 10 tau]`. Bisection safeguards Newton steps on
/// the log survival function, which keeps small `alpha` accurate.
pub fn smoothed_quantile(scores: &[f64], tau: f64, alpha: f64) -> Result<f64> {
    if scores.is_empty() || !(tau > 0.0) || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "smoothed quantile needs scores, tau > 0 and alpha in (0, 1); got n = {}, tau = {tau}, alpha = {alpha}",
            scores.len()
        )));
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (min - 10.0 * tau, max + 10.0 * tau);
    // g(s) = sf(s) - alpha is decreasing in s
    let g = |s: f64| smoothed_sf(scores, tau, s) - alpha;
    if g(lo) < 0.0 || g(hi) > 0.0 {
        return Err(Error::Numerical(format!(
            "smoothed quantile bracket failed for alpha = {alpha}"
        )));
    }
    let n = scores.len() as f64;
    // start at the plain order statistic, which is close for small tau
    let mut copy = scores.to_vec();
    let rank = ((1.0 - alpha) * n).ceil().clamp(1.0, n) as usize - 1;
    let (_, &mut start, _) = copy.select_nth_unstable_by(rank, f64::total_cmp);
    let mut s = if start > lo && start < hi {
        start
    } else {
        0.5 * (lo + hi)
    };
    for _ in 0..200 {
        let (sf, dens) = scores.iter().fold((0.0, 0.0), |(a, d), &v| {
            let z = (v - s) / tau;
            (a + norm_cdf(z), d + norm_pdf(z))
        });
        let (sf, dens) = (sf / n, dens / (n * tau));
        if sf == alpha {
            return Ok(s);
        }
        if sf > alpha {
            lo = s;
        } else {
            hi = s;
        }
        if hi - lo <= QUANTILE_TOL.max(1e-15 * s.abs()) {
            break;
        }
        // Newton on log sf, which is close to quadratic in the tails
        let newton = if sf > 0.0 && dens > 0.0 {
            s + (sf / alpha).ln() * sf / dens
        } else {
            f64::NAN
        };
        if (newton - s).abs() <= QUANTILE_TOL.max(1e-15 * s.abs()) {
            return Ok(newton.clamp(lo, hi));
        }
        s = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(s)
}

/// `tau^-1 log sum exp(tau v_k)` and its gradient (softmax weights).
pub fn soft_max(values: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|&v| (tau * (v - m)).exp()).collect();
    let z: f64 = e.iter().sum();
    (m + z.ln() / tau, e.iter().map(|v| v / z).collect())
}

/// `-tau^-1 log sum exp(-tau v_k)` and its gradient.
pub fn soft_min(values: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let neg: Vec<f64> = values.iter().map(|v| -v).collect();
    let (v, w) = soft_max(&neg, tau);
    (-v, w)
}

/// Smoothed loss and its gradient with respect to the allocation, given as
/// real miscoverage shares. Shares are clipped to `[1e-6, budget_alpha]`
/// before evaluation; the returned gradient is that of the unclipped
/// expression at the clipped point.
pub fn smooth_loss_and_gradient(
    oracle: &LossOracle,
    alloc: &[f64],
    params: &SmoothingParams,
) -> Result<(f64, Vec<f64>)> {
    let k_total = oracle.n_scores();
    if alloc.len() != k_total || params.tau2.len() != k_total {
        return Err(Error::InvalidInput(format!(
            "allocation of length {} and {} bandwidths for {k_total} scores",
            alloc.len(),
            params.tau2.len()
        )));
    }
    let cap = oracle.budget_alpha().max(ALPHA_FLOOR);
    let columns = oracle.columns();

    let mut q = Vec::with_capacity(k_total);
    let mut dq = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let a = alloc[k].clamp(ALPHA_FLOOR, cap);
        let tau = params.tau2[k];
        let qk = smoothed_quantile(&columns[k], tau, a)?;
        let n = columns[k].len() as f64;
        q.push(qk);
        dq.push(-n * tau / smoothed_density_sum(&columns[k], tau, qk));
    }

    let m = oracle.n_points();
    let mut loss = 0.0;
    let mut dloss_dq = vec![0.0; k_total];
    let mut upper = vec![0.0; k_total];
    let mut lower = vec![0.0; k_total];
    for i in 0..m {
        for k in 0..k_total {
            let f = oracle.forms(k)[i];
            upper[k] = f.hi + f.scale * q[k];
            lower[k] = f.lo - f.scale * q[k];
        }
        let (smin, wmin) = soft_min(&upper, params.tau1);
        let (smax, wmax) = soft_max(&lower, params.tau1);
        loss += smin - smax;
        for k in 0..k_total {
            dloss_dq[k] += oracle.forms(k)[i].scale * (wmin[k] + wmax[k]);
        }
    }
    let grad = dloss_dq.iter().zip(&dq).map(|(a, b)| a * b / m as f64).collect();
    Ok((loss / m as f64, grad))
}

/// Euclidean projection onto `{x >= 0, sum x = total}`.
pub fn project_to_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - total) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Integer units proportional to `shares`, summing to `budget`: floors
/// first, then the leftover units by largest remainder (lowest index on
/// ties).
pub fn largest_remainder_round(shares: &[f64], budget: usize) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    if !(total > 0.0) {
        let mut units = vec![0; shares.len()];
        if let Some(first) = units.first_mut() {
            *first = budget;
        }
        return units;
    }
    let targets: Vec<f64> = shares.iter().map(|s| s / total * budget as f64).collect();
    let mut units: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let assigned: usize = units.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (targets[a] - targets[a].floor(), targets[b] - targets[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(budget.saturating_sub(assigned)) {
        units[k] += 1;
    }
    units
}

/// Projected gradient descent with backtracking on the smoothed loss over
/// the scaled simplex `sum alpha_k = budget / n`, started from the uniform
/// split. The solution is rounded to the grid and scored with the exact
/// empirical loss.
pub fn projected_gradient_optimize(oracle: &LossOracle, params: &SmoothingParams) -> Result<AllocationResult> {
    let k_total = oracle.n_scores();
    let budget = oracle.budget();
    let total = oracle.budget_alpha();
    if k_total == 1 || budget == 0 {
        let alloc = Allocation::one_hot(k_total, 0, budget, oracle.resolution());
        let loss = empirical_loss(oracle, &alloc)?;
        return Ok(AllocationResult::new(alloc, loss, Vec::new()));
    }

    let mut a = vec![total / k_total as f64; k_total];
    let (mut f, mut g) = smooth_loss_and_gradient(oracle, &a, params)?;
    let mut step = if params.step_size > 0.0 {
        params.step_size
    } else {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        0.1 * total / gmax.max(1e-12)
    };
    let mut trace = vec![TraceStep {
        iteration: 0,
        selected: None,
        loss: f,
    }];
    for it in 1..=params.max_iter {
        let mut accepted = None;
        for _ in 0..40 {
            let cand = project_to_simplex(&a.iter().zip(&g).map(|(x, d)| x - step * d).collect::<Vec<_>>(), total);
            let decrease: f64 = a.iter().zip(&cand).zip(&g).map(|((x, c), d)| (x - c) * d).sum();
            let (fc, gc) = smooth_loss_and_gradient(oracle, &cand, params)?;
            if fc <= f - 1e-4 * decrease {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc, gc)) = accepted else { break };
        let moved = a.iter().zip(&cand).fold(0.0f64, |m, (x, c)| m.max((x - c).abs()));
        a = cand;
        f = fc;
        g = gc;
        step *= 1.5;
        trace.push(TraceStep {
            iteration: it,
            selected: None,
            loss: f,
        });
        if moved < params.tol {
            break;
        }
    }

    let alloc = Allocation::new(largest_remainder_round(&a, budget), oracle.resolution());
    let loss = empirical_loss(oracle, &alloc)?;
    Ok(AllocationResult::new(alloc, loss, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::{stepwise_optimize, OptimizerOptions};
    use crate::quantiles::{real_rank, sorted};
    use crate::scores::IntervalForm;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_examples() {
        assert_eq!(smoothed_cdf(&[0.0], 1.0, 0.0), 0.5);
        assert!((smoothed_cdf(&[-1.0, 1.0], 1.0, 0.0) - 0.5).abs() < 1e-15);
        assert!(smoothed_cdf(&[0.0, 1.0], 0.5, -1e3) < 1e-300);
        assert_eq!(smoothed_cdf(&[0.0, 1.0], 0.5, 1e3), 1.0);
    }

    #[test]
    fn quantile_examples() {
        assert!((smoothed_quantile(&[3.0], 0.7, 0.5).unwrap() - 3.0).abs() < 1e-10);
        assert!(smoothed_quantile(&[-1.0, 1.0], 1.0, 0.5).unwrap().abs() < 1e-10);
        let vals = [0.3, 2.0, -1.0, 0.9, 1.4, 0.0, 2.5, -0.4, 1.1, 0.6];
        for a in [0.15, 0.35, 0.55, 0.85] {
            let plain = sorted(&vals)[real_rank(a, vals.len()) - 1];
            assert!(
                (smoothed_quantile(&vals, 1e-6, a).unwrap() - plain).abs() < 1e-4,
                "alpha {a}"
            );
        }
        assert!(smoothed_quantile(&vals, 1.0, 0.0).is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let vals = [0.3, 2.0, -1.0, 0.9, 1.4];
        for a in [1e-6, 1e-3, 0.1, 0.5, 0.9] {
            let s = smoothed_quantile(&vals, 0.4, a).unwrap();
            assert!((smoothed_sf(&vals, 0.4, s) - a).abs() < 1e-9 * a.max(1e-3), "alpha {a}");
        }
    }

    #[test]
    fn log_sum_exp_examples() {
        let (v, _) = soft_max(&[1.0, 2.0], 20.0);
        assert!((v - (2.0 + (1.0 + (-20f64).exp()).ln() / 20.0)).abs() < 1e-15);
        assert!((v - 2.0).abs() < 1e-9);
        let (v, w) = soft_max(&[0.7, 0.7], 20.0);
        assert!((v - (0.7 + 2f64.ln() / 20.0)).abs() < 1e-15);
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn simplex_projection() {
        let p = project_to_simplex(&[0.1, 0.1], 0.1);
        assert!((p[0] - 0.05).abs() < 1e-15 && (p[1] - 0.05).abs() < 1e-15);
        let inside = [0.02, 0.05, 0.03];
        assert_eq!(project_to_simplex(&inside, 0.1), inside.to_vec());
        let p = project_to_simplex(&[1.0, -1.0, 0.0], 0.1);
        assert!((p.iter().sum::<f64>() - 0.1).abs() < 1e-15 && p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rounding_preserves_budget() {
        assert_eq!(largest_remainder_round(&[0.05, 0.05], 5), vec![3, 2]);
        assert_eq!(largest_remainder_round(&[0.0, 0.1, 0.0], 30), vec![0, 30, 0]);
        assert_eq!(
            largest_remainder_round(&[0.033, 0.033, 0.034], 10)
                .iter()
                .sum::<usize>(),
            10
        );
    }

    fn instance(seed: u64, n: usize, k: usize) -> LossOracle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut forms = vec![Vec::new(); n];
        let mut cols = vec![Vec::new(); k];
        for j in 0..k {
            let noise = rng.random_range(0.2..1.0);
            for i in 0..n {
                let c = y[i] + noise * rng.random_range(-1.0..1.0);
                let f = IntervalForm {
                    lo: c - 0.1,
                    hi: c + 0.1,
                    scale: rng.random_range(0.5..1.5),
                };
                cols[j].push(f.score(y[i]));
                forms[i].push(f);
            }
        }
        LossOracle::augmented(cols, &forms, 0.1).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for t in 0..20 {
            let oracle = instance(100 + t, 60, 3);
            let params = SmoothingParams::for_oracle(&oracle);
            let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let a: Vec<f64> = raw.iter().map(|v| v / s * 0.1).collect();
            let (_, g) = smooth_loss_and_gradient(&oracle, &a, &params).unwrap();
            let h = 1e-5;
            let fd: Vec<f64> = (0..3)
                .map(|k| {
                    let (mut p, mut m) = (a.clone(), a.clone());
                    p[k] += h;
                    m[k] -= h;
                    let fp = smooth_loss_and_gradient(&oracle, &p, &params).unwrap().0;
                    let fm = smooth_loss_and_gradient(&oracle, &m, &params).unwrap().0;
                    (fp - fm) / (2.0 * h)
                })
                .collect();
            let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for k in 0..3 {
                assert!((g[k] - fd[k]).abs() <= 1e-4 * scale, "trial {t}: {g:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn smoothing_reports_exact_loss_and_trails_stepwise() {
        for seed in 0..5 {
            let oracle = instance(seed, 80, 2);
            let smooth = projected_gradient_optimize(&oracle, &SmoothingParams::for_oracle(&oracle)).unwrap();
            assert_eq!(smooth.loss, empirical_loss(&oracle, &smooth.allocation).unwrap());
            assert_eq!(smooth.allocation.budget(), oracle.budget());
            let step = stepwise_optimize(&oracle, &OptimizerOptions::default()).unwrap();
            assert!(smooth.loss >= step.loss - 1e-12);
        }
    }

    proptest! {
        #[test]
        fn log_sum_exp_sandwich(v in prop::collection::vec(-5.0f64..5.0, 1..8), tau in 0.5f64..50.0) {
            let k = v.len() as f64;
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = v.iter().copied().fold(f64::INFINITY, f64::min);
            let (smax, _) = soft_max(&v, tau);
            let (smin, _) = soft_min(&v, tau);
            prop_assert!(smax >= max - 1e-12 && smax <= max + k.ln() / tau + 1e-12);
            prop_assert!(smin <= min + 1e-12 && smin >= min - k.ln() / tau - 1e-12);
        }

        #[test]
        fn projection_is_feasible(v in prop::collection::vec(-1.0f64..1.0, 1..10), total in 0.01f64..1.0) {
            let p = project_to_simplex(&v, total);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - total).abs() < 1e-12);
        }
    }
}
