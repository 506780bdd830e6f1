use rayon::prelude::*;

use super::{empirical_loss, interval_total, Allocation, AllocationResult, LossOracle, TraceStep};
use crate::error::Result;

/// Strict-improvement margin for the forward step.
const IMPROVEMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptimizerOptions {
    /// Support size at which the stepwise search stops.
    pub k_max: usize,
    /// Maximum number of forward/backward iterations.
    pub max_iter: usize,
    /// Evaluate forward-step candidates on the rayon pool.
    pub parallel: bool,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            k_max: 4,
            max_iter: 10,
            parallel: true,
        }
    }
}

/// All nonnegative integer vectors of length `parts` summing to `total`,
/// in lexicographic order.
#[derive(Debug, Clone)]
pub struct Compositions {
    current: Option<Vec<usize>>,
}

pub fn enumerate_compositions(parts: usize, total: usize) -> Compositions {
    assert!(parts >= 1, "need at least one part");
    let mut first = vec![0; parts];
    first[parts - 1] = total;
    Compositions { current: Some(first) }
}

impl Iterator for Compositions {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        let s = out.len();
        // rightmost position that can grow by borrowing from its tail
        let mut tail = out[s - 1];
        let mut j = s - 1;
        while j > 0 {
            j -= 1;
            if tail > 0 {
                let mut next = out.clone();
                next[j] += 1;
                for v in &mut next[j + 1..] {
                    *v = 0;
                }
                next[s - 1] = tail - 1;
                self.current = Some(next);
                break;
            }
            tail += out[j];
        }
        Some(out)
    }
}

struct Best {
    total: f64,
    units: Vec<usize>,
}

/// Depth-first walk over compositions of the budget on `support`, in the
/// same lexicographic order as [`enumerate_compositions`]. Partial
/// intersections are kept per depth so each leaf costs one pass over the
/// evaluation points.
fn walk(
    oracle: &LossOracle,
    support: &[usize],
    depth: usize,
    remaining: usize,
    partial: &mut [(Vec<f64>, Vec<f64>)],
    units: &mut Vec<usize>,
    best: &mut Best,
) {
    let k = support[depth];
    let last = depth + 1 == support.len();
    let range = if last { remaining..=remaining } else { 0..=remaining };
    for u in range {
        let (l, h) = oracle.bounds(k, u);
        units.push(u);
        if last {
            let total = if depth == 0 {
                interval_total(l, h)
            } else {
                let (plo, phi) = &partial[depth - 1];
                plo.iter()
                    .zip(phi)
                    .zip(l.iter().zip(h))
                    .map(|((&a, &b), (&c, &d))| {
                        let (lo, hi) = (a.max(c), b.min(d));
                        if hi >= lo {
                            hi - lo
                        } else {
                            0.0
                        }
                    })
                    .sum()
            };
            // `<=`: among exact ties the last one wins, i.e. the budget
            // sits on the lowest-indexed scores
            if total <= best.total {
                best.total = total;
                best.units.clone_from(units);
            }
        } else {
            let (head, rest) = partial.split_at_mut(depth);
            let (lo, hi) = &mut rest[0];
            if depth == 0 {
                lo.copy_from_slice(l);
                hi.copy_from_slice(h);
            } else {
                let (plo, phi) = &head[depth - 1];
                for i in 0..lo.len() {
                    lo[i] = plo[i].max(l[i]);
                    hi[i] = phi[i].min(h[i]);
                }
            }
            walk(oracle, support, depth + 1, remaining - u, partial, units, best);
        }
        units.pop();
    }
}

/// Global minimum of the empirical loss over all grid allocations whose
/// support lies in `candidates`. Among tied minimizers the lexicographically
/// greatest unit vector is returned (budget on the lowest index first).
pub fn exhaustive_search(oracle: &LossOracle, candidates: &[usize]) -> Result<AllocationResult> {
    let mut support = candidates.to_vec();
    support.sort_unstable();
    support.dedup();
    assert!(!support.is_empty(), "exhaustive search needs at least one candidate");

    let m = oracle.n_points();
    let mut partial = vec![(vec![0.0; m], vec![0.0; m]); support.len().saturating_sub(1)];
    let mut best = Best {
        total: f64::INFINITY,
        units: Vec::new(),
    };
    let mut units = Vec::with_capacity(support.len());
    walk(
        oracle,
        &support,
        0,
        oracle.budget(),
        &mut partial,
        &mut units,
        &mut best,
    );

    let mut full = vec![0; oracle.n_scores()];
    for (&k, &u) in support.iter().zip(&best.units) {
        full[k] = u;
    }
    let allocation = Allocation::new(full, oracle.resolution());
    let loss = empirical_loss(oracle, &allocation)?;
    Ok(AllocationResult::new(allocation, loss, Vec::new()))
}

/// Best single score with the whole budget; ties go to the lowest index.
pub fn singleton_search(oracle: &LossOracle, candidates: &[usize]) -> Result<AllocationResult> {
    let mut best: Option<AllocationResult> = None;
    for &k in candidates {
        let alloc = Allocation::one_hot(oracle.n_scores(), k, oracle.budget(), oracle.resolution());
        let loss = empirical_loss(oracle, &alloc)?;
        if best.as_ref().is_none_or(|b| loss < b.loss) {
            best = Some(AllocationResult::new(alloc, loss, Vec::new()));
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Forward/backward stepwise search over supports.
///
/// With at most `k_max` scores this is [`exhaustive_search`]. Otherwise each
/// iteration adds the score whose inclusion gives the smallest
/// support-constrained optimum (stopping if that is not a strict
/// improvement), re-optimizes, and drops scores left with zero units. The
/// search ends once the support reaches `k_max` or after `max_iter`
/// iterations.
pub fn stepwise_optimize(oracle: &LossOracle, opts: &OptimizerOptions) -> Result<AllocationResult> {
    assert!(opts.k_max >= 1 && opts.max_iter >= 1);
    let n_scores = oracle.n_scores();
    let all: Vec<usize> = (0..n_scores).collect();
    if n_scores <= opts.k_max {
        return exhaustive_search(oracle, &all);
    }
    if oracle.budget() == 0 {
        let alloc = Allocation::zeros(n_scores, oracle.resolution());
        let loss = empirical_loss(oracle, &alloc)?;
        return Ok(AllocationResult::new(alloc, loss, Vec::new()));
    }

    let mut selected: Vec<usize> = Vec::new();
    let mut current: Option<AllocationResult> = None;
    let mut trace = Vec::new();
    for t in 1..=opts.max_iter {
        let candidates: Vec<usize> = all.iter().copied().filter(|k| !selected.contains(k)).collect();
        let evaluate = |&k: &usize| -> Result<(usize, AllocationResult)> {
            let mut support = selected.clone();
            support.push(k);
            Ok((k, exhaustive_search(oracle, &support)?))
        };
        let results: Vec<(usize, AllocationResult)> = if opts.parallel {
            candidates.par_iter().map(evaluate).collect::<Result<_>>()?
        } else {
            candidates.iter().map(evaluate).collect::<Result<_>>()?
        };
        // candidates are in increasing index order, so strict `<` keeps the
        // lowest index among ties
        let (added, step) = results
            .into_iter()
            .reduce(|a, b| if b.1.loss < a.1.loss { b } else { a })
            .expect("at least one candidate outside the support");

        let previous = current.as_ref().map_or(f64::INFINITY, |c| c.loss);
        trace.push(TraceStep {
            iteration: t,
            selected: Some(added),
            loss: step.loss,
        });
        if !(step.loss < previous - IMPROVEMENT_EPS) {
            break;
        }
        selected = step.allocation.support();
        let done = selected.len() >= opts.k_max;
        current = Some(step);
        if done {
            break;
        }
    }

    let mut result = match current {
        Some(r) => r,
        None => {
            let alloc = Allocation::zeros(n_scores, oracle.resolution());
            let loss = empirical_loss(oracle, &alloc)?;
            AllocationResult::new(alloc, loss, Vec::new())
        }
    };
    result.trace = trace;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scores::IntervalForm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn composition_examples() {
        let v: Vec<Vec<usize>> = enumerate_compositions(2, 2).collect();
        assert_eq!(v, vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
        let v: Vec<Vec<usize>> = enumerate_compositions(1, 5).collect();
        assert_eq!(v, vec![vec![5]]);
        assert_eq!(enumerate_compositions(4, 30).count(), 5456);
        assert_eq!(enumerate_compositions(3, 0).collect::<Vec<_>>(), vec![vec![0, 0, 0]]);
    }

    #[test]
    fn compositions_are_distinct_sorted_and_complete() {
        for parts in 1..5 {
            for total in 0..7 {
                let v: Vec<Vec<usize>> = enumerate_compositions(parts, total).collect();
                assert!(v.windows(2).all(|w| w[0] < w[1]));
                assert!(v.iter().all(|c| c.iter().sum::<usize>() == total));
                let expected = binomial(total + parts - 1, parts - 1);
                assert_eq!(v.len(), expected);
            }
        }
    }

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    /// `n` points, `k` residual scores with center noise of varying size.
    fn random_oracle(rng: &mut ChaCha8Rng, n: usize, k: usize, alpha: f64) -> LossOracle {
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut forms = vec![Vec::new(); n];
        let mut cols = vec![Vec::new(); k];
        for j in 0..k {
            let noise = rng.random_range(0.1..1.0);
            let scale_slope = rng.random_range(0.0..1.0);
            for i in 0..n {
                let c = y[i] + noise * rng.random_range(-1.0..1.0);
                let f = IntervalForm {
                    lo: c,
                    hi: c,
                    scale: 1.0 + scale_slope * y[i].abs(),
                };
                cols[j].push(f.score(y[i]));
                forms[i].push(f);
            }
        }
        LossOracle::augmented(cols, &forms, alpha).unwrap()
    }

    fn naive_exhaustive(oracle: &LossOracle, support: &[usize]) -> (f64, Vec<usize>) {
        let mut best = (f64::INFINITY, Vec::new());
        for comp in enumerate_compositions(support.len(), oracle.budget()) {
            let mut units = vec![0; oracle.n_scores()];
            for (&k, &u) in support.iter().zip(&comp) {
                units[k] = u;
            }
            let loss = empirical_loss(oracle, &Allocation::new(units.clone(), oracle.resolution())).unwrap();
            if loss <= best.0 {
                best = (loss, units);
            }
        }
        best
    }

    #[test]
    fn exhaustive_matches_naive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let oracle = random_oracle(&mut rng, 50, 3, 0.1);
            let got = exhaustive_search(&oracle, &[0, 1, 2]).unwrap();
            let (loss, units) = naive_exhaustive(&oracle, &[0, 1, 2]);
            assert_eq!(got.loss, loss);
            assert_eq!(got.allocation.units(), &units[..]);
        }
    }

    #[test]
    fn exhaustive_single_and_tied() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let oracle = random_oracle(&mut rng, 30, 1, 0.2);
        let r = exhaustive_search(&oracle, &[0]).unwrap();
        assert_eq!(r.allocation.units(), &[6]);

        let col = vec![0.4, 0.2, 0.9, 0.1, 0.6, 0.3, 0.8, 0.5, 0.7, 1.0];
        let forms: Vec<Vec<IntervalForm>> = (0..10).map(|i| vec![IntervalForm::centered(i as f64); 2]).collect();
        let oracle = LossOracle::augmented(vec![col.clone(), col], &forms, 0.3).unwrap();
        let r = exhaustive_search(&oracle, &[0, 1]).unwrap();
        assert_eq!(r.allocation.units(), &[3, 0]);
    }

    #[test]
    fn stepwise_delegates_when_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let oracle = random_oracle(&mut rng, 50, 3, 0.1);
            let opts = OptimizerOptions {
                k_max: 3,
                ..Default::default()
            };
            assert_eq!(
                stepwise_optimize(&oracle, &opts).unwrap(),
                exhaustive_search(&oracle, &[0, 1, 2]).unwrap()
            );
        }
    }

    #[test]
    fn stepwise_stops_on_identical_columns() {
        let col: Vec<f64> = (0..40).map(|i| ((i * 37) % 40) as f64 / 10.0).collect();
        let forms: Vec<Vec<IntervalForm>> = (0..40).map(|i| vec![IntervalForm::centered(i as f64); 6]).collect();
        let oracle = LossOracle::augmented(vec![col; 6], &forms, 0.1).unwrap();
        let opts = OptimizerOptions {
            k_max: 2,
            ..Default::default()
        };
        let r = stepwise_optimize(&oracle, &opts).unwrap();
        assert_eq!(r.support, vec![0]);
        assert_eq!(r.trace.len(), 2);
        assert_eq!(r.trace[0].selected, Some(0));
    }

    #[test]
    fn stepwise_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let oracle = random_oracle(&mut rng, 60, 6, 0.1);
            let all: Vec<usize> = (0..6).collect();
            for parallel in [true, false] {
                let opts = OptimizerOptions {
                    k_max: 3,
                    max_iter: 10,
                    parallel,
                };
                let step = stepwise_optimize(&oracle, &opts).unwrap();
                let ex = exhaustive_search(&oracle, &all).unwrap();
                let single = singleton_search(&oracle, &all).unwrap();
                assert!(step.loss >= ex.loss);
                assert!(step.loss <= single.loss);
                assert_eq!(step.loss, empirical_loss(&oracle, &step.allocation).unwrap());
                assert_eq!(step.allocation.budget(), oracle.budget());
            }
        }
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let oracle = random_oracle(&mut rng, 80, 8, 0.1);
        let a = stepwise_optimize(
            &oracle,
            &OptimizerOptions {
                parallel: true,
                ..Default::default()
            },
        )
        .unwrap();
        let b = stepwise_optimize(
            &oracle,
            &OptimizerOptions {
                parallel: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn more_units_shrink_sets_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let oracle = random_oracle(&mut rng, 40, 3, 0.2);
        for k in 0..3 {
            for u in 0..oracle.budget() {
                let (l0, h0) = oracle.bounds(k, u);
                let (l1, h1) = oracle.bounds(k, u + 1);
                for i in 0..oracle.n_points() {
                    assert!(l1[i] >= l0[i] && h1[i] <= h0[i]);
                }
            }
        }
    }
}
