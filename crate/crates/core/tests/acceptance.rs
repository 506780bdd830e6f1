//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 3 7`.

mod common;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use cola::allocation::{
    empirical_loss, exhaustive_search, singleton_search, smooth_loss_and_gradient, stepwise_optimize, Allocation,
    OptimizerOptions, SmoothingParams,
};
use cola::cola::{
    fit_cola_e, optimize, predict_cola_l, predict_localized_with_allocation, Holdout, MajorityVote, Method, Optimizer,
};
use cola::datagen::{generate, sample_label, score_menu, CaseId, Sizes};
use cola::harness::{run_experiment, summarize, ExperimentConfig, TrialRecord};
use cola::localized::{calibrate_bandwidth, KernelSpec, WeightVector};
use cola::quantiles::{weighted_quantile, QuantileLevel};
use cola::scores::{IntervalForm, ScoreSpec};

use common::{brute_weighted_quantile, mean, random_oracle};

const ALPHA: f64 = 0.1;

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed.as_secs() < limit_s
}

fn coverage_of(records: &[TrialRecord], method: Method) -> f64 {
    let cov: Vec<f64> = records
        .iter()
        .filter(|r| r.method == method)
        .map(|r| r.coverage)
        .collect();
    mean(&cov)
}

fn dominance() -> Outcome {
    let start = Instant::now();
    let opts = OptimizerOptions::default();
    let mut failures = 0;
    for inst in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let k = rng.random_range(2..=8);
        let n = rng.random_range(50..=300);
        let oracle = random_oracle(&mut rng, n, k, ALPHA);
        let all: Vec<usize> = (0..k).collect();
        let step = stepwise_optimize(&oracle, &opts).unwrap().loss;
        let efcp = singleton_search(&oracle, &all).unwrap().loss;
        let singles: Vec<f64> = (0..k)
            .map(|j| empirical_loss(&oracle, &Allocation::one_hot(k, j, oracle.budget(), n)).unwrap())
            .collect();
        let ok = step <= efcp + 1e-12 && singles.iter().all(|&s| efcp <= s + 1e-12);
        failures += !ok as usize;
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && within(elapsed, 60),
        format!(
            "{} of 100 instances violate the ordering, {:.1}s",
            failures,
            elapsed.as_secs_f64()
        ),
    )
}

fn stepwise_vs_exhaustive() -> Outcome {
    let start = Instant::now();
    let opts = OptimizerOptions {
        k_max: 3,
        ..OptimizerOptions::default()
    };
    let small_mismatch: usize = (0..100u64)
        .into_par_iter()
        .map(|inst| {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + inst);
            let oracle = random_oracle(&mut rng, 50, 3, ALPHA);
            let step = stepwise_optimize(&oracle, &opts).unwrap().loss;
            let exact = exhaustive_search(&oracle, &[0, 1, 2]).unwrap().loss;
            (step != exact) as usize
        })
        .sum();
    let gaps: Vec<Option<f64>> = (0..100u64)
        .into_par_iter()
        .map(|inst| {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + inst);
            let oracle = random_oracle(&mut rng, 50, 6, ALPHA);
            let step = stepwise_optimize(&oracle, &opts).unwrap().loss;
            let exact = exhaustive_search(&oracle, &[0, 1, 2, 3, 4, 5]).unwrap().loss;
            (step >= exact).then(|| (step - exact) / exact)
        })
        .collect();
    let below = gaps.iter().filter(|g| g.is_none()).count();
    let gaps: Vec<f64> = gaps.into_iter().flatten().collect();
    let mean_gap = mean(&gaps);
    let elapsed = start.elapsed();
    outcome(
        small_mismatch == 0 && below == 0 && mean_gap <= 0.05 && within(elapsed, 120),
        format!(
            "K=3: {small_mismatch} mismatches; K=6: {below} below optimum, mean gap {:.4}%; {:.1}s",
            100.0 * mean_gap,
            elapsed.as_secs_f64()
        ),
    )
}

fn case3(n_holdout: usize, trials: usize, methods: Vec<Method>, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        sizes: Sizes {
            n_train: 150,
            n_holdout,
            n_test: 40,
        },
        trials,
        seed,
        ..ExperimentConfig::new(CaseId::Case3, methods)
    }
}

fn cola_s_coverage() -> Outcome {
    let start = Instant::now();
    let recs = run_experiment(&case3(300, 500, vec![Method::ColaS], 30_000)).unwrap();
    let cov = coverage_of(&recs, Method::ColaS);
    let bound = 0.9 - 3.0 * (0.09f64 / 20_000.0).sqrt();
    let elapsed = start.elapsed();
    outcome(
        cov >= bound && within(elapsed, 600),
        format!("coverage {cov:.4} vs bound {bound:.4}, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn cola_e_coverage() -> Outcome {
    let start = Instant::now();
    let small = coverage_of(
        &run_experiment(&case3(100, 300, vec![Method::ColaE], 40_000)).unwrap(),
        Method::ColaE,
    );
    let large = coverage_of(
        &run_experiment(&case3(600, 300, vec![Method::ColaE], 50_000)).unwrap(),
        Method::ColaE,
    );
    let elapsed = start.elapsed();
    outcome(
        large >= 0.885 && large >= small - 0.01 && within(elapsed, 900),
        format!(
            "coverage n=100 {small:.4}, n=600 {large:.4}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn complementary_scores() -> Outcome {
    let config = ExperimentConfig {
        sizes: Sizes {
            n_train: 150,
            n_holdout: 300,
            n_test: 40,
        },
        trials: 300,
        seed: 60_000,
        ..ExperimentConfig::new(CaseId::Case2, vec![Method::ColaE, Method::Efcp, Method::Majority])
    };
    let summary = summarize(&run_experiment(&config).unwrap(), Method::ColaE).unwrap();
    let ratio = |m: Method| summary.iter().find(|s| s.method == m).unwrap().size_ratio;
    let (efcp, majority) = (ratio(Method::Efcp), ratio(Method::Majority));
    outcome(
        efcp >= 1.0 && majority >= 1.05,
        format!("size ratios EFCP/COLA-e {efcp:.4}, Majority/COLA-e {majority:.4}"),
    )
}

fn cola_f_coverage() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig {
        sizes: Sizes {
            n_train: 200,
            n_holdout: 50,
            n_test: 20,
        },
        trials: 500,
        seed: 70_000,
        ygrid_count: 200,
        ..ExperimentConfig::new(CaseId::Individual, vec![Method::ColaF])
    };
    let cov = coverage_of(&run_experiment(&config).unwrap(), Method::ColaF);
    let bound = 0.9 - 3.0 * (0.09f64 / 10_000.0).sqrt();
    let elapsed = start.elapsed();
    outcome(
        cov >= bound && within(elapsed, 1200),
        format!("coverage {cov:.4} vs bound {bound:.4}, {:.1}s", elapsed.as_secs_f64()),
    )
}

const LOCALIZED_REPLICATIONS: u64 = 10;

struct LocalizedRep {
    hits_l: Vec<usize>,
    hits_e: Vec<usize>,
    size_l: Vec<f64>,
    size_e: Vec<f64>,
}

fn localized_replication(rep: u64, locations: &[f64], draws: usize) -> LocalizedRep {
    let sizes = Sizes {
        n_train: 1000,
        n_holdout: 2000,
        n_test: 1,
    };
    let seed = 80_000 + rep;
    let (train, hold, _) = generate(CaseId::Individual, sizes, seed).unwrap();
    let specs = score_menu(CaseId::Individual, &train, ALPHA, 2, seed).unwrap();
    let holdout = Holdout::from_specs(specs, hold.x, hold.y).unwrap();
    let x = holdout.x().unwrap();
    let kernel = KernelSpec::laplace(calibrate_bandwidth(x, 200.0, x).unwrap().bandwidth).unwrap();
    let opts = OptimizerOptions::default();
    let global = fit_cola_e(&holdout, ALPHA, &opts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = LocalizedRep {
        hits_l: vec![],
        hits_e: vec![],
        size_l: vec![],
        size_e: vec![],
    };
    for &x0 in locations {
        let (set_l, _) = predict_cola_l(&holdout, ALPHA, &[x0], &kernel, &opts).unwrap();
        let set_e = predict_localized_with_allocation(&holdout, global.allocation(), &[x0], &kernel).unwrap();
        out.size_l.push(set_l.measure());
        out.size_e.push(set_e.measure());
        let (mut hl, mut he) = (0, 0);
        for _ in 0..draws {
            let y = sample_label(CaseId::Individual, &[x0], &mut rng);
            hl += set_l.contains(y) as usize;
            he += set_e.contains(y) as usize;
        }
        out.hits_l.push(hl);
        out.hits_e.push(he);
    }
    out
}

fn localized() -> Outcome {
    let start = Instant::now();
    let draws = 2000;
    let locations: Vec<f64> = (0..21).map(|j| -1.0 + 0.1 * j as f64).collect();
    let reps: Vec<LocalizedRep> = (0..LOCALIZED_REPLICATIONS)
        .into_par_iter()
        .map(|r| localized_replication(r, &locations, draws))
        .collect();
    let total = (draws as f64) * reps.len() as f64;
    let cond =
        |j: usize, f: fn(&LocalizedRep) -> &Vec<usize>| reps.iter().map(|r| f(r)[j]).sum::<usize>() as f64 / total;
    let probe = [0usize, 10, 20];
    let cov_l: Vec<f64> = probe.iter().map(|&j| cond(j, |r| &r.hits_l)).collect();
    let cov_e: Vec<f64> = probe.iter().map(|&j| cond(j, |r| &r.hits_e)).collect();
    let smaller = (0..locations.len())
        .filter(|&j| {
            let l = mean(&reps.iter().map(|r| r.size_l[j]).collect::<Vec<_>>());
            let e = mean(&reps.iter().map(|r| r.size_e[j]).collect::<Vec<_>>());
            l <= e
        })
        .count();
    let elapsed = start.elapsed();
    outcome(
        cov_l.iter().all(|&c| c >= 0.87) && smaller >= 11 && within(elapsed, 1200),
        format!(
            "COLA-l coverage at x=-1,0,1 {:.4}/{:.4}/{:.4} (COLA-e {:.4}/{:.4}/{:.4}); smaller at {smaller} of 21; {:.1}s",
            cov_l[0],
            cov_l[1],
            cov_l[2],
            cov_e[0],
            cov_e[1],
            cov_e[2],
            elapsed.as_secs_f64()
        ),
    )
}

fn oracle_equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(90_000);

    let mut quantile_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=60);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w = WeightVector::new(raw.iter().map(|v| v / total).collect()).unwrap();
        let alpha = rng.random_range(0.0..1.0);
        let got = weighted_quantile(&values, &w, QuantileLevel::new(alpha).unwrap()).unwrap();
        quantile_mismatch += (got != brute_weighted_quantile(&values, w.as_slice(), alpha)) as usize;
    }

    let mut majority_mismatch = 0;
    let step = 1e-3;
    for _ in 0..100 {
        let k = rng.random_range(2..=5);
        let forms: Vec<IntervalForm> = (0..k)
            .map(|_| {
                let c = rng.random_range(-2.0..2.0);
                let half = rng.random_range(0.0..0.5);
                IntervalForm {
                    lo: c - half,
                    hi: c + half,
                    scale: rng.random_range(0.5..2.0),
                }
            })
            .collect();
        let thresholds: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
        let specs = (0..k).map(|j| ScoreSpec::External { name: format!("s{j}") }).collect();
        let mv = MajorityVote::from_thresholds(specs, thresholds.clone());
        let set = mv.predict_forms(&forms);
        let boundaries: Vec<f64> = set.intervals().iter().flat_map(|i| [i.lo, i.hi]).collect();
        let quorum = k / 2 + 1;
        let cells = (20.0 / step) as usize;
        let mut dense = 0.0;
        let mut membership_ok = true;
        for c in 0..cells {
            let y = -10.0 + (c as f64 + 0.5) * step;
            let voted = forms.iter().zip(&thresholds).filter(|(f, &t)| f.score(y) <= t).count() >= quorum;
            dense += voted as u8 as f64 * step;
            if boundaries.iter().all(|b| (b - y).abs() > step) {
                membership_ok &= voted == set.contains(y);
            }
        }
        // each boundary is resolved to within half a cell
        let tolerance = step * set.intervals().len().max(1) as f64;
        majority_mismatch += (!membership_ok || (set.measure() - dense).abs() > tolerance) as usize;
    }

    let mut gradient_mismatch = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..=5);
        let n = rng.random_range(40..=150);
        let oracle = random_oracle(&mut rng, n, k, ALPHA);
        let params = SmoothingParams::for_oracle(&oracle);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let a: Vec<f64> = raw.iter().map(|v| v / total * oracle.budget_alpha()).collect();
        let (_, g) = smooth_loss_and_gradient(&oracle, &a, &params).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..k)
            .map(|j| {
                let (mut p, mut m) = (a.clone(), a.clone());
                p[j] += h;
                m[j] -= h;
                let fp = smooth_loss_and_gradient(&oracle, &p, &params).unwrap().0;
                let fm = smooth_loss_and_gradient(&oracle, &m, &params).unwrap().0;
                (fp - fm) / (2.0 * h)
            })
            .collect();
        let norm = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / norm;
        worst = worst.max(err);
        gradient_mismatch += (err > 1e-4) as usize;
    }

    outcome(
        quantile_mismatch == 0 && majority_mismatch == 0 && gradient_mismatch == 0,
        format!(
            "weighted quantile {quantile_mismatch}/1000 mismatches; majority {majority_mismatch}/100 beyond one cell per component; \
             gradient {gradient_mismatch}/100 beyond 1e-4 (worst {worst:.2e})"
        ),
    )
}

fn smoothing_comparison() -> Outcome {
    let start = Instant::now();
    let opts = OptimizerOptions::default();
    let results: Vec<(f64, f64)> = (0..50u64)
        .into_par_iter()
        .map(|t| {
            let seed = 100_000 + t;
            let sizes = Sizes {
                n_train: 150,
                n_holdout: 300,
                n_test: 1,
            };
            let (train, hold, _) = generate(CaseId::Case3, sizes, seed).unwrap();
            let specs = score_menu(CaseId::Case3, &train, ALPHA, 100, seed).unwrap();
            let oracle = Holdout::from_specs(specs, hold.x, hold.y)
                .unwrap()
                .oracle(ALPHA)
                .unwrap();
            let step = optimize(&oracle, Optimizer::Stepwise, &opts).unwrap().loss;
            let smooth = optimize(&oracle, Optimizer::Smooth, &opts).unwrap().loss;
            (step, smooth)
        })
        .collect();
    let wins = results.iter().filter(|(s, m)| s <= m).count();
    let elapsed = start.elapsed();
    outcome(
        wins >= 45,
        format!(
            "stepwise <= smoothing in {wins} of 50 trials, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: Option<&str>| -> Vec<u8> {
        let out = dir.path().join(name);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_cola"));
        cmd.args([
            "simulate",
            "--case",
            "2",
            "--alpha",
            "0.1",
            "--n-train",
            "150",
            "--n-holdout",
            "80",
            "--n-test",
            "10",
            "--trials",
            "4",
            "--seed",
            "7",
            "--k-max",
            "4",
            "--ygrid-count",
            "50",
            "--target-ess",
            "40",
            "--methods",
            "cola-e,cola-s,cola-f,cola-l,efcp,vfcp,majority,sat,random",
        ])
        .arg("--out")
        .arg(&out);
        if let Some(t) = threads {
            cmd.env("RAYON_NUM_THREADS", t);
        }
        let status = cmd.output().unwrap().status;
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv", None);
    let b = run("b.csv", None);
    let c = run("c.csv", Some("1"));
    outcome(
        a == b && a == c && !a.is_empty(),
        format!(
            "{} bytes; repeat identical: {}; single-thread identical: {}",
            a.len(),
            a == b,
            a == c
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Check); 10] = [
        (1, "dominance", dominance),
        (2, "stepwise vs exhaustive", stepwise_vs_exhaustive),
        (3, "COLA-s coverage", cola_s_coverage),
        (4, "COLA-e coverage", cola_e_coverage),
        (5, "aggregation vs selection", complementary_scores),
        (6, "COLA-f coverage", cola_f_coverage),
        (7, "COLA-l conditional", localized),
        (8, "oracle equivalences", oracle_equivalences),
        (9, "smoothing comparison", smoothing_comparison),
        (10, "determinism", determinism),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let result = check();
        println!(
            "criterion {id:>2} {name}: {} ({})",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
        failed += !result.pass as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
