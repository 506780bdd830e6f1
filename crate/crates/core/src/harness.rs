//! Monte Carlo trials, score-matrix ingestion and result files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::allocation::{AllocationResult, OptimizerOptions};
use crate::cola::{
    fit_cola_e, fit_cola_s, fit_efcp, fit_majority_vote, fit_random_select, fit_sat, fit_vfcp, optimize,
    predict_cola_f_forms, predict_cola_l, split_indices, ConformalPredictor, Holdout, Method, Optimizer, YGrid,
};
use crate::datagen::{generate, score_menu, CaseId, Sizes};
use crate::error::{Error, Result};
use crate::localized::{calibrate_bandwidth, KernelSpec};
use crate::scores::{IntervalForm, ScoreMatrix};
use crate::sets::IntervalUnion;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub case: CaseId,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub sizes: Sizes,
    pub trials: usize,
    pub seed: u64,
    pub optimizer: OptimizerOptions,
    /// Number of scores in the Case 3 menu.
    pub n_scores: usize,
    pub ygrid_count: usize,
    pub target_ess: f64,
    /// Measure wall time per method; otherwise `wall_ms` is written as 0 so
    /// that output files are reproducible byte for byte.
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn new(case: CaseId, methods: Vec<Method>) -> Self {
        ExperimentConfig {
            case,
            methods,
            alpha: 0.1,
            sizes: Sizes {
                n_train: 150,
                n_holdout: 300,
                n_test: 40,
            },
            trials: 200,
            seed: 0,
            optimizer: OptimizerOptions::default(),
            n_scores: 4,
            ygrid_count: 200,
            target_ess: 200.0,
            record_timing: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.alpha, &self.methods, &self.optimizer)?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        let Sizes {
            n_train,
            n_holdout,
            n_test,
        } = self.sizes;
        if n_train == 0 || n_holdout == 0 || n_test == 0 {
            return Err(Error::Config("sizes must be positive".into()));
        }
        if n_holdout < 2 && self.methods.iter().any(|m| matches!(m, Method::ColaS | Method::Vfcp)) {
            return Err(Error::Config(
                "sample-splitting methods need at least two holdout rows".into(),
            ));
        }
        if self.ygrid_count < 2 {
            return Err(Error::Config("the label grid needs at least two points".into()));
        }
        if self.n_scores == 0 {
            return Err(Error::Config("n-scores must be at least 1".into()));
        }
        if self.methods.contains(&Method::ColaL) && !(self.target_ess > 1.0 && self.target_ess <= n_holdout as f64) {
            return Err(Error::Config(format!(
                "target ESS {} must lie in (1, n_holdout = {n_holdout}]",
                self.target_ess
            )));
        }
        Ok(())
    }
}

fn validate_common(alpha: f64, methods: &[Method], opts: &OptimizerOptions) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    if opts.k_max == 0 || opts.max_iter == 0 {
        return Err(Error::Config("k-max and max-iter must be at least 1".into()));
    }
    Ok(())
}

/// Comma-separated method names.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let mut methods: Vec<Method> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    methods.sort();
    methods.dedup();
    Ok(methods)
}

/// Outcome of one method in one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub method: Method,
    pub trial: usize,
    /// Fraction of test rows whose label lies in the predicted set.
    pub coverage: f64,
    /// Mean measure of the predicted sets, possibly `+inf`.
    pub avg_size: f64,
    pub wall_ms: f64,
    /// Unit vector of the fitted allocation, for methods that have one.
    pub alloc: Option<String>,
    /// Empirical loss of the allocation on the rows used to choose it.
    pub fit_loss: Option<f64>,
}

/// Independent seed for one purpose within a trial.
fn derived_seed(trial_seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_SUBSETS: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_RANDOM: u64 = 3;
const STREAM_FOLDS: u64 = 4;

struct Evaluation {
    coverage: f64,
    avg_size: f64,
}

fn evaluate_sets(sets: impl Iterator<Item = (IntervalUnion, f64)>) -> Evaluation {
    let (mut hits, mut size, mut n) = (0usize, 0.0, 0usize);
    for (set, y) in sets {
        hits += set.contains(y) as usize;
        size += set.measure();
        n += 1;
    }
    Evaluation {
        coverage: hits as f64 / n as f64,
        avg_size: size / n as f64,
    }
}

/// Runs every trial and returns the records sorted by method name, then
/// trial. The result depends only on `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let per_trial = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, t))
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
    sort_records(&mut records);
    Ok(records)
}

fn sort_records(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| a.method.name().cmp(b.method.name()).then(a.trial.cmp(&b.trial)));
}

fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<Vec<TrialRecord>> {
    let trial_seed = config.seed.wrapping_add(trial as u64);
    let (train, hold, test) = generate(config.case, config.sizes, trial_seed)?;
    let specs = score_menu(
        config.case,
        &train,
        config.alpha,
        config.n_scores,
        derived_seed(trial_seed, STREAM_SUBSETS),
    )?;
    let grid_y = hold.y.clone();
    let holdout = Holdout::from_specs(specs, hold.x, hold.y)?;
    let test_forms: Vec<Vec<IntervalForm>> = test.x.iter().map(|x| holdout.forms_at(x)).collect::<Result<_>>()?;
    let split_seed = derived_seed(trial_seed, STREAM_SPLIT);
    let alpha = config.alpha;
    let opts = &config.optimizer;

    let mut out = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let start = Instant::now();
        let labelled = || test_forms.iter().zip(test.y.iter().copied());
        let (eval, fitted) = match method {
            Method::ColaE | Method::ColaS | Method::Efcp | Method::Vfcp | Method::Random => {
                let p = fit_fixed(
                    method,
                    &holdout,
                    alpha,
                    split_seed,
                    derived_seed(trial_seed, STREAM_RANDOM),
                    opts,
                )?;
                (evaluate_sets(labelled().map(|(f, y)| (p.predict_forms(f), y))), Some(p))
            }
            Method::Majority => {
                let mv = fit_majority_vote(&holdout, alpha)?;
                (evaluate_sets(labelled().map(|(f, y)| (mv.predict_forms(f), y))), None)
            }
            Method::Sat => {
                let grid = YGrid::around(&grid_y, config.ygrid_count)?;
                let sat = fit_sat(&holdout, alpha)?;
                (
                    evaluate_sets(labelled().map(|(f, y)| (sat.predict_forms(f, &grid), y))),
                    None,
                )
            }
            Method::ColaF => {
                let grid = YGrid::around(&grid_y, config.ygrid_count)?;
                let sets = test_forms
                    .iter()
                    .map(|f| predict_cola_f_forms(&holdout, alpha, f, &grid, opts))
                    .collect::<Result<Vec<_>>>()?;
                (evaluate_sets(sets.into_iter().zip(test.y.iter().copied())), None)
            }
            Method::ColaL => {
                let x = holdout.x().expect("simulated holdout has features");
                let kernel = KernelSpec::laplace(calibrate_bandwidth(x, config.target_ess, x)?.bandwidth)?;
                let sets = test
                    .x
                    .iter()
                    .map(|xt| {
                        let (set, _) = predict_cola_l(&holdout, alpha, xt, &kernel, opts)?;
                        Ok(set.as_intervals().expect("interval scores").clone())
                    })
                    .collect::<Result<Vec<_>>>()?;
                (evaluate_sets(sets.into_iter().zip(test.y.iter().copied())), None)
            }
        };
        let wall_ms = if config.record_timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        out.push(TrialRecord {
            method,
            trial,
            coverage: eval.coverage,
            avg_size: eval.avg_size,
            wall_ms,
            alloc: fitted.as_ref().map(|p| p.allocation().to_slash_string()),
            fit_loss: fitted.as_ref().map(ConformalPredictor::fit_loss),
        });
    }
    Ok(out)
}

fn fit_fixed(
    method: Method,
    holdout: &Holdout,
    alpha: f64,
    split_seed: u64,
    random_seed: u64,
    opts: &OptimizerOptions,
) -> Result<ConformalPredictor> {
    match method {
        Method::ColaE => fit_cola_e(holdout, alpha, opts),
        Method::ColaS => fit_cola_s(holdout, alpha, split_seed, opts),
        Method::Efcp => fit_efcp(holdout, alpha),
        Method::Vfcp => fit_vfcp(holdout, alpha, split_seed),
        Method::Random => fit_random_select(holdout, alpha, random_seed),
        other => unreachable!("{other} has no single allocation"),
    }
}

/// A score matrix read from disk.
#[derive(Debug, Clone)]
pub struct ScoreData {
    pub scores: ScoreMatrix,
    pub labels: Option<Vec<f64>>,
    /// Optional per-row centers `c1..cK`; sets of score k at row i are
    /// `[c_ik - t, c_ik + t]`. Without them every score is centered at 0,
    /// which gives widths but not positions.
    pub centers: Option<Vec<Vec<f64>>>,
}

impl ScoreData {
    pub fn forms(&self) -> Vec<Vec<IntervalForm>> {
        let k = self.scores.n_scores();
        match &self.centers {
            Some(c) => c
                .iter()
                .map(|row| row.iter().map(|&v| IntervalForm::centered(v)).collect())
                .collect(),
            None => vec![vec![IntervalForm::centered(0.0); k]; self.scores.n_rows()],
        }
    }

    pub fn holdout(&self) -> Result<Holdout> {
        Holdout::from_scores(self.scores.clone(), self.forms(), self.labels.clone())
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a CSV with header `s1,...,sK`, optionally followed by `y` and by
/// center columns `c1,...,cK`, one row per holdout point.
pub fn ingest_scores_csv(path: &Path) -> Result<ScoreData> {
    let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
    parse_scores_csv(file)
}

pub fn parse_scores_csv<R: std::io::Read>(input: R) -> Result<ScoreData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header_err = |msg: String| Error::Parse { line: 1, msg };
    let headers = reader.headers().map_err(|e| header_err(e.to_string()))?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(header_err("missing header".into()));
    }

    let mut score_cols = BTreeMap::new();
    let mut center_cols = BTreeMap::new();
    let mut label_col = None;
    for (pos, name) in headers.iter().enumerate() {
        let index = |rest: &str| rest.parse::<usize>().ok().filter(|&j| j >= 1);
        let slot = match name.split_at(name.len().min(1)) {
            ("s", rest) => index(rest).map(|j| score_cols.insert(j, pos)),
            ("c", rest) => index(rest).map(|j| center_cols.insert(j, pos)),
            ("y", "") => Some(label_col.replace(pos)),
            _ => None,
        };
        match slot {
            Some(None) => {}
            Some(Some(_)) => return Err(header_err(format!("duplicate column `{name}`"))),
            None => {
                return Err(header_err(format!(
                    "unexpected column `{name}`; expected s1..sK, y, c1..cK"
                )))
            }
        }
    }
    let k = score_cols.len();
    if k == 0 || score_cols.keys().copied().ne(1..=k) {
        return Err(header_err("score columns must be s1..sK".into()));
    }
    if !center_cols.is_empty() && center_cols.keys().copied().ne(1..=k) {
        return Err(header_err("center columns must be c1..cK, one per score".into()));
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut centers = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |pos: usize, name: String| -> Result<f64> {
            let raw = &record[pos];
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    line,
                    msg: format!("column `{name}`: `{raw}` is not a finite number"),
                }),
            }
        };
        rows.push(
            score_cols
                .iter()
                .map(|(j, &pos)| cell(pos, format!("s{j}")))
                .collect::<Result<Vec<_>>>()?,
        );
        if let Some(pos) = label_col {
            labels.push(cell(pos, "y".into())?);
        }
        if !center_cols.is_empty() {
            centers.push(
                center_cols
                    .iter()
                    .map(|(j, &pos)| cell(pos, format!("c{j}")))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "no data rows".into(),
        });
    }
    Ok(ScoreData {
        scores: ScoreMatrix::new(rows)?,
        labels: label_col.map(|_| labels),
        centers: (!center_cols.is_empty()).then_some(centers),
    })
}

/// `%.6g`-style formatting, with `inf` for infinities.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if !(-4..6).contains(&exp) {
        format!(
            "{}e{}{:02}",
            trim(mantissa.to_string()),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    } else {
        trim(format!("{:.*}", (5 - exp) as usize, v))
    }
}

pub const RESULTS_HEADER: &str = "method,trial,coverage,avg_size,wall_ms,alloc";

/// Results in CSV form, rows sorted by method then trial.
pub fn results_csv(records: &[TrialRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in &sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            r.trial,
            format_float(r.coverage),
            format_float(r.avg_size),
            format_float(r.wall_ms),
            r.alloc.as_deref().unwrap_or("NA")
        ));
    }
    out
}

pub fn write_results_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to write".into()));
    }
    let mut file = fs::File::create(path).map_err(|e| io_error(path, e))?;
    file.write_all(results_csv(records).as_bytes())
        .map_err(|e| io_error(path, e))
}

/// Reads a file written by [`write_results_csv`].
pub fn read_results_csv(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |what: &str| Error::Parse {
            line,
            msg: format!("bad {what}"),
        };
        let num = |i: usize, what: &str| row[i].parse::<f64>().map_err(|_| bad(what));
        records.push(TrialRecord {
            method: row[0].parse().map_err(|_| bad("method"))?,
            trial: row[1].parse().map_err(|_| bad("trial"))?,
            coverage: num(2, "coverage")?,
            avg_size: num(3, "avg_size")?,
            wall_ms: num(4, "wall_ms")?,
            alloc: (&row[5] != "NA").then(|| row[5].to_string()),
            fit_loss: None,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub mean_coverage: f64,
    pub se_coverage: f64,
    pub mean_size: f64,
    pub se_size: f64,
    /// Mean size relative to the reference method.
    pub size_ratio: f64,
    /// Some trial produced an unbounded set, so sizes and the ratio are
    /// infinite.
    pub infinite: bool,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 || !mean.is_finite() {
        return (mean, if mean.is_finite() { 0.0 } else { f64::INFINITY });
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-method means and standard errors, with sizes relative to
/// `reference`.
pub fn summarize(records: &[TrialRecord], reference: Method) -> Result<Vec<MethodSummary>> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to summarize".into()));
    }
    let mut groups: BTreeMap<&str, (Method, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let g = groups
            .entry(r.method.name())
            .or_insert_with(|| (r.method, Vec::new(), Vec::new()));
        g.1.push(r.coverage);
        g.2.push(r.avg_size);
    }
    let reference_size = groups
        .get(reference.name())
        .map(|g| mean_se(&g.2).0)
        .ok_or_else(|| Error::Config(format!("reference method {reference} has no records")))?;
    Ok(groups
        .into_values()
        .map(|(method, cov, size)| {
            let (mean_coverage, se_coverage) = mean_se(&cov);
            let (mean_size, se_size) = mean_se(&size);
            let size_ratio = if method == reference {
                1.0
            } else {
                mean_size / reference_size
            };
            MethodSummary {
                method,
                trials: cov.len(),
                mean_coverage,
                se_coverage,
                mean_size,
                se_size,
                size_ratio,
                infinite: mean_size.is_infinite() || size_ratio.is_infinite(),
            }
        })
        .collect())
}

pub fn summary_csv(summaries: &[MethodSummary]) -> String {
    let mut out = String::from("method,trials,coverage,coverage_se,avg_size,size_se,size_ratio,infinite\n");
    for s in summaries {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.method,
            s.trials,
            format_float(s.mean_coverage),
            format_float(s.se_coverage),
            format_float(s.mean_size),
            format_float(s.se_size),
            format_float(s.size_ratio),
            s.infinite
        ));
    }
    out
}

/// Experiments on a precomputed score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalConfig {
    pub scores: PathBuf,
    pub methods: Vec<Method>,
    pub alpha: f64,
    pub split_seed: u64,
    pub trials: usize,
    pub optimizer: OptimizerOptions,
    pub record_timing: bool,
}

impl ExternalConfig {
    pub fn validate(&self) -> Result<()> {
        validate_common(self.alpha, &self.methods, &self.optimizer)?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if let Some(m) = self.methods.iter().find(|m| m.needs_models()) {
            return Err(Error::Config(format!(
                "{m} must evaluate scores at new labels or features, which a score matrix cannot provide"
            )));
        }
        Ok(())
    }
}

/// Each trial splits the rows at random into a fitting fold and an
/// evaluation fold. Methods are fitted on the first and scored on the
/// second: a row is covered when every score is within its threshold, and
/// set sizes come from the center columns (or a common center). Models are
/// not refit, so only the aggregation step is exercised.
pub fn run_external(config: &ExternalConfig) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let data = ingest_scores_csv(&config.scores)?;
    run_external_data(config, &data)
}

pub fn run_external_data(config: &ExternalConfig, data: &ScoreData) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    let all = data.holdout()?;
    if all.len() < 4 {
        return Err(Error::InvalidInput(
            "need at least four rows for nested splitting".into(),
        ));
    }
    let per_trial = (0..config.trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<TrialRecord>> {
            let trial_seed = config.split_seed.wrapping_add(t as u64);
            let (fit_rows, eval_rows) = split_indices(all.len(), derived_seed(trial_seed, STREAM_FOLDS));
            let fit_set = all.subset(&fit_rows);
            let eval_set = all.subset(&eval_rows);
            let split_seed = derived_seed(trial_seed, STREAM_SPLIT);
            let random_seed = derived_seed(trial_seed, STREAM_RANDOM);
            config
                .methods
                .iter()
                .map(|&method| {
                    let start = Instant::now();
                    let rows = eval_set.scores().rows().iter().zip(eval_set.forms());
                    let m = eval_rows.len() as f64;
                    let (hits, size, fitted) = if method == Method::Majority {
                        let mv = fit_majority_vote(&fit_set, config.alpha)?;
                        let (h, s) = rows.fold((0usize, 0.0), |(h, s), (sc, f)| {
                            (h + mv.covers_scores(sc) as usize, s + mv.predict_forms(f).measure())
                        });
                        (h, s, None)
                    } else {
                        let p = fit_fixed(
                            method,
                            &fit_set,
                            config.alpha,
                            split_seed,
                            random_seed,
                            &config.optimizer,
                        )?;
                        let (h, s) = rows.fold((0usize, 0.0), |(h, s), (sc, f)| {
                            (h + p.covers_scores(sc) as usize, s + p.predict_forms(f).measure())
                        });
                        (h, s, Some(p))
                    };
                    let wall_ms = if config.record_timing {
                        start.elapsed().as_secs_f64() * 1e3
                    } else {
                        0.0
                    };
                    Ok(TrialRecord {
                        method,
                        trial: t,
                        coverage: hits as f64 / m,
                        avg_size: size / m,
                        wall_ms,
                        alloc: fitted.as_ref().map(|p| p.allocation().to_slash_string()),
                        fit_loss: fitted.as_ref().map(ConformalPredictor::fit_loss),
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
    sort_records(&mut records);
    Ok(records)
}

/// Allocation fitted on every row of a score matrix.
pub fn allocate_scores(
    data: &ScoreData,
    alpha: f64,
    optimizer: Optimizer,
    opts: &OptimizerOptions,
) -> Result<AllocationResult> {
    validate_common(alpha, &[Method::ColaE], opts)?;
    let oracle = data.holdout()?.oracle(alpha)?;
    optimize(&oracle, optimizer, opts)
}

/// Parsed `key = value` lines; `#` starts a comment. Keys are normalized
/// to dashed lowercase, so `n_holdout` and `n-holdout` are the same key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, allowed: &[&str]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            let key = key.trim().to_ascii_lowercase().replace('_', "-");
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Config(format!("config line {}: unknown key `{key}`", i + 1)));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path, allowed: &[&str]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::parse(&text, allowed)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("config key `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    /// `flag` if given, else the file value, else `default`.
    pub fn resolve<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}
