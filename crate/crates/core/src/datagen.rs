//! Synthetic data-generating processes and small regressors that supply
//! the score menus.
//!
//! Gaussian draws use `rand_distr::StandardNormal` (ziggurat) over a
//! `ChaCha8Rng` seeded from the trial seed.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scores::{Handle, ScoreSpec, SIGMA_MIN};

/// Case 1 noise is `N(0, 0.01)`, read as a variance.
pub const CASE1_NOISE_VARIANCE: f64 = 0.01;
const CASE12_DIM: usize = 5;
const CASE3_DIM: usize = 100;
/// Ridge penalty of the Case 3 submodels (and of the Case 1 ridge model).
pub const RIDGE_LAMBDA: f64 = 0.1;
const CASE3_SUBSET: usize = 20;
const KNN_K: usize = 10;
const KNN_QUANTILE_K: usize = 30;
const TREE_DEPTH: usize = 3;
const TREE_MIN_LEAF: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CaseId {
    Case1,
    Case2,
    Case3,
    Individual,
}

impl CaseId {
    pub fn name(self) -> &'static str {
        match self {
            CaseId::Case1 => "1",
            CaseId::Case2 => "2",
            CaseId::Case3 => "3",
            CaseId::Individual => "individual",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            CaseId::Case1 | CaseId::Case2 => CASE12_DIM,
            CaseId::Case3 => CASE3_DIM,
            CaseId::Individual => 1,
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "case1" => Ok(CaseId::Case1),
            "2" | "case2" => Ok(CaseId::Case2),
            "3" | "case3" => Ok(CaseId::Case3),
            "individual" => Ok(CaseId::Individual),
            _ => Err(Error::Config(format!("unknown case `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Holdout,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub role: Role,
    pub case: CaseId,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sizes {
    pub n_train: usize,
    pub n_holdout: usize,
    pub n_test: usize,
}

/// `Sigma_ij = 0.5^|i - j|`
pub fn case1_covariance() -> DMatrix<f64> {
    DMatrix::from_fn(CASE12_DIM, CASE12_DIM, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()))
}

/// Case 3 coefficients: `beta_j = 1{j mod 20 = 0}` for `j = 1..=100`.
pub fn case3_beta() -> Vec<f64> {
    (1..=CASE3_DIM).map(|j| if j % 20 == 0 { 1.0 } else { 0.0 }).collect()
}

/// Noise-free regression function.
pub fn signal(case: CaseId, x: &[f64]) -> f64 {
    match case {
        CaseId::Case1 | CaseId::Case2 => (x[0] + x[1] + x[2] > 0.0) as u8 as f64,
        CaseId::Case3 => x.iter().skip(CASE3_SUBSET - 1).step_by(CASE3_SUBSET).sum(),
        CaseId::Individual => x[0].clamp(-1.0, 1.0),
    }
}

/// Standard deviation of the additive Gaussian noise at `x`.
pub fn noise_sd(case: CaseId, x: &[f64]) -> f64 {
    match case {
        CaseId::Case1 => CASE1_NOISE_VARIANCE.sqrt(),
        CaseId::Case2 => (0.03 * x[0]).abs(),
        CaseId::Case3 => 1.0,
        CaseId::Individual => 0.25 + 0.25 * x[0].abs(),
    }
}

/// A label drawn from the conditional distribution at `x`.
pub fn sample_label<R: Rng>(case: CaseId, x: &[f64], rng: &mut R) -> f64 {
    signal(case, x) + noise_sd(case, x) * rng.sample::<f64, _>(StandardNormal)
}

fn sample_features<R: Rng>(case: CaseId, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    match case {
        CaseId::Case1 | CaseId::Case2 => {
            let l = case1_covariance()
                .cholesky()
                .expect("covariance is positive definite")
                .l();
            (0..n)
                .map(|_| {
                    let z = DVector::from_fn(CASE12_DIM, |_, _| rng.sample::<f64, _>(StandardNormal));
                    (&l * z).iter().copied().collect()
                })
                .collect()
        }
        CaseId::Case3 => (0..n)
            .map(|_| (0..CASE3_DIM).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect(),
        CaseId::Individual => (0..n).map(|_| vec![rng.random_range(-2.0..=2.0)]).collect(),
    }
}

fn draw<R: Rng>(case: CaseId, n: usize, role: Role, seed: u64, rng: &mut R) -> Dataset {
    let x = sample_features(case, n, rng);
    let y = x.iter().map(|xi| sample_label(case, xi, rng)).collect();
    Dataset { x, y, role, case, seed }
}

/// Independent training, holdout and test draws, a deterministic function
/// of `(case, sizes, seed)`.
pub fn generate(case: CaseId, sizes: Sizes, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if sizes.n_train == 0 || sizes.n_holdout == 0 || sizes.n_test == 0 {
        return Err(Error::Config(format!("sizes must be positive, got {sizes:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = draw(case, sizes.n_train, Role::Train, seed, &mut rng);
    let holdout = draw(case, sizes.n_holdout, Role::Holdout, seed, &mut rng);
    let test = draw(case, sizes.n_test, Role::Test, seed, &mut rng);
    Ok((train, holdout, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ols,
    RidgeSubset,
    Knn,
    KnnScale,
    KnnQuantile,
    Tree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub lambda: f64,
    /// Features used by a ridge submodel; all features when `None`.
    pub subset: Option<Vec<usize>>,
    pub k: usize,
    /// Quantile levels of a neighbour-quantile model.
    pub levels: (f64, f64),
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            lambda: RIDGE_LAMBDA,
            subset: None,
            k: KNN_K,
            levels: (0.05, 0.95),
            max_depth: TREE_DEPTH,
            min_leaf: TREE_MIN_LEAF,
        }
    }
}

/// A regression tree; splits send `x[feature] <= threshold` left.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn predict(&self, x: &[f64]) -> f64 {
        match self {
            TreeNode::Leaf(v) => *v,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Linear {
        kind: ModelKind,
        intercept: f64,
        coef: Vec<f64>,
        subset: Vec<usize>,
        lambda: f64,
        /// Normal equations were singular and a tiny ridge was used.
        singular: bool,
    },
    Knn {
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        k: usize,
    },
    KnnScale {
        x: Vec<Vec<f64>>,
        abs_resid: Vec<f64>,
        k: usize,
    },
    KnnQuantile {
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        k: usize,
        levels: (f64, f64),
    },
    Tree {
        root: TreeNode,
    },
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Linear { kind, .. } => *kind,
            FittedModel::Knn { .. } => ModelKind::Knn,
            FittedModel::KnnScale { .. } => ModelKind::KnnScale,
            FittedModel::KnnQuantile { .. } => ModelKind::KnnQuantile,
            FittedModel::Tree { .. } => ModelKind::Tree,
        }
    }

    /// Whether the normal equations needed the fallback ridge.
    pub fn singular_warning(&self) -> bool {
        matches!(self, FittedModel::Linear { singular: true, .. })
    }

    fn mean(&self, x: &[f64]) -> Option<f64> {
        match self {
            FittedModel::Linear {
                intercept,
                coef,
                subset,
                ..
            } => Some(intercept + subset.iter().zip(coef).map(|(&j, b)| x[j] * b).sum::<f64>()),
            FittedModel::Knn { x: xs, y, k } => {
                let nn = neighbours(xs, x, *k, None);
                Some(nn.iter().map(|&i| y[i]).sum::<f64>() / nn.len() as f64)
            }
            FittedModel::Tree { root } => Some(root.predict(x)),
            _ => None,
        }
    }

    fn scale(&self, x: &[f64]) -> Option<f64> {
        match self {
            FittedModel::KnnScale { x: xs, abs_resid, k } => {
                let nn = neighbours(xs, x, *k, None);
                Some((nn.iter().map(|&i| abs_resid[i]).sum::<f64>() / nn.len() as f64).max(SIGMA_MIN))
            }
            _ => None,
        }
    }

    fn quantile(&self, x: &[f64], upper: bool) -> Option<f64> {
        match self {
            FittedModel::KnnQuantile { x: xs, y, k, levels } => {
                let mut v: Vec<f64> = neighbours(xs, x, *k, None).iter().map(|&i| y[i]).collect();
                v.sort_by(f64::total_cmp);
                let level = if upper { levels.1 } else { levels.0 };
                let r = ((level * v.len() as f64 - 1e-9).ceil() as usize).clamp(1, v.len());
                Some(v[r - 1])
            }
            _ => None,
        }
    }
}

/// Indices of the `k` nearest rows of `xs` to `x` (ties by index),
/// skipping `exclude`.
fn neighbours(xs: &[Vec<f64>], x: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = xs
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let k = k.min(d.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.into_iter().map(|(_, i)| i).collect()
}

/// Ridge with an unpenalized intercept on the columns `subset`; the
/// penalty is scaled by `n`, `(Xc'Xc + n lambda I) b = Xc'yc`.
fn ridge(x: &[Vec<f64>], y: &[f64], subset: &[usize], lambda: f64) -> Option<(f64, Vec<f64>)> {
    let n = y.len();
    let p = subset.len();
    let mean_x: Vec<f64> = subset
        .iter()
        .map(|&j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mean_y = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, p, |i, c| x[i][subset[c]] - mean_x[c]);
    let yc = DVector::from_fn(n, |i, _| y[i] - mean_y);
    let mut gram = xc.transpose() * &xc;
    for c in 0..p {
        gram[(c, c)] += n as f64 * lambda;
    }
    let beta = gram.cholesky()?.solve(&(xc.transpose() * yc));
    let intercept = mean_y - beta.iter().zip(&mean_x).map(|(b, m)| b * m).sum::<f64>();
    Some((intercept, beta.iter().copied().collect()))
}

fn grow(x: &[Vec<f64>], y: &[f64], rows: &mut [usize], depth: usize, min_leaf: usize) -> TreeNode {
    let n = rows.len();
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    if depth == 0 || n < 2 * min_leaf {
        return TreeNode::Leaf(mean);
    }
    let total: f64 = rows.iter().map(|&i| y[i]).sum();
    let parent_sse = rows.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>();
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x[rows[0]].len() {
        rows.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        let total_sq: f64 = rows.iter().map(|&i| y[i] * y[i]).sum();
        for s in 1..n {
            let v = y[rows[s - 1]];
            left_sum += v;
            left_sq += v * v;
            if s < min_leaf || n - s < min_leaf {
                continue;
            }
            let (a, b) = (x[rows[s - 1]][f], x[rows[s]][f]);
            if a == b {
                continue;
            }
            let right_sum = total - left_sum;
            let sse = (left_sq - left_sum * left_sum / s as f64)
                + (total_sq - left_sq - right_sum * right_sum / (n - s) as f64);
            if best.is_none_or(|(bs, _, _)| sse < bs) {
                best = Some((sse, f, 0.5 * (a + b)));
            }
        }
    }
    match best {
        Some((sse, feature, threshold)) if sse < parent_sse => {
            let (mut left, mut right): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| x[i][feature] <= threshold);
            TreeNode::Split {
                feature,
                threshold,
                left: Box::new(grow(x, y, &mut left, depth - 1, min_leaf)),
                right: Box::new(grow(x, y, &mut right, depth - 1, min_leaf)),
            }
        }
        _ => TreeNode::Leaf(mean),
    }
}

pub fn fit(kind: ModelKind, params: &ModelParams, train: &Dataset) -> Result<FittedModel> {
    if train.is_empty() || train.x.len() != train.y.len() {
        return Err(Error::InvalidInput(
            "training data must be nonempty with one label per row".into(),
        ));
    }
    let d = train.dim();
    let (x, y) = (&train.x, &train.y);
    match kind {
        ModelKind::Ols | ModelKind::RidgeSubset => {
            let subset: Vec<usize> = match (&params.subset, kind) {
                (Some(s), ModelKind::RidgeSubset) => s.clone(),
                _ => (0..d).collect(),
            };
            if subset.iter().any(|&j| j >= d) {
                return Err(Error::InvalidInput(format!("feature subset exceeds dimension {d}")));
            }
            let lambda = if kind == ModelKind::Ols { 0.0 } else { params.lambda };
            let (fit, singular) = match ridge(x, y, &subset, lambda) {
                Some(f) => (f, false),
                None => (
                    ridge(x, y, &subset, lambda.max(1e-8))
                        .ok_or_else(|| Error::Numerical("normal equations are singular even with a ridge".into()))?,
                    true,
                ),
            };
            Ok(FittedModel::Linear {
                kind,
                intercept: fit.0,
                coef: fit.1,
                subset,
                lambda,
                singular,
            })
        }
        ModelKind::Knn => Ok(FittedModel::Knn {
            x: x.clone(),
            y: y.clone(),
            k: params.k,
        }),
        ModelKind::KnnScale => {
            // leave-one-out residuals of the neighbour mean
            let abs_resid = (0..x.len())
                .map(|i| {
                    let nn = neighbours(x, &x[i], params.k, Some(i));
                    if nn.is_empty() {
                        return 0.0;
                    }
                    (y[i] - nn.iter().map(|&j| y[j]).sum::<f64>() / nn.len() as f64).abs()
                })
                .collect();
            Ok(FittedModel::KnnScale {
                x: x.clone(),
                abs_resid,
                k: params.k,
            })
        }
        ModelKind::KnnQuantile => {
            let (lo, hi) = params.levels;
            if !(0.0 < lo && lo < hi && hi < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "quantile levels ({lo}, {hi}) must satisfy 0 < lo < hi < 1"
                )));
            }
            Ok(FittedModel::KnnQuantile {
                x: x.clone(),
                y: y.clone(),
                k: params.k,
                levels: params.levels,
            })
        }
        ModelKind::Tree => {
            let mut rows: Vec<usize> = (0..x.len()).collect();
            Ok(FittedModel::Tree {
                root: grow(x, y, &mut rows, params.max_depth, params.min_leaf.max(1)),
            })
        }
    }
}

/// Prediction closures a fitted model exposes.
#[derive(Clone)]
pub struct ModelHandles {
    mean: Option<Handle>,
    scale: Option<Handle>,
    lower: Option<Handle>,
    upper: Option<Handle>,
}

impl ModelHandles {
    pub fn mean(&self) -> Result<Handle> {
        self.mean.clone().ok_or(Error::Capability("mean"))
    }

    pub fn scale(&self) -> Result<Handle> {
        self.scale.clone().ok_or(Error::Capability("scale"))
    }

    pub fn lower(&self) -> Result<Handle> {
        self.lower.clone().ok_or(Error::Capability("lower quantile"))
    }

    pub fn upper(&self) -> Result<Handle> {
        self.upper.clone().ok_or(Error::Capability("upper quantile"))
    }
}

pub fn model_handles(model: FittedModel) -> ModelHandles {
    let m = Arc::new(model);
    let handle = |f: fn(&FittedModel, &[f64]) -> Option<f64>| -> Handle {
        let m = Arc::clone(&m);
        Arc::new(move |x: &[f64]| f(&m, x).expect("capability checked"))
    };
    let kind = m.kind();
    let has_mean = matches!(
        kind,
        ModelKind::Ols | ModelKind::RidgeSubset | ModelKind::Knn | ModelKind::Tree
    );
    ModelHandles {
        mean: has_mean.then(|| handle(|m, x| m.mean(x))),
        scale: (kind == ModelKind::KnnScale).then(|| handle(|m, x| m.scale(x))),
        lower: (kind == ModelKind::KnnQuantile).then(|| handle(|m, x| m.quantile(x, false))),
        upper: (kind == ModelKind::KnnQuantile).then(|| handle(|m, x| m.quantile(x, true))),
    }
}

fn fitted(kind: ModelKind, params: &ModelParams, train: &Dataset) -> Result<ModelHandles> {
    Ok(model_handles(fit(kind, params, train)?))
}

/// The score menu of each case, fitted on `train`.
///
/// * Case 1: residual scores of OLS, ridge on all features, k-NN and a
///   regression tree.
/// * Case 2: a tree residual, a k-NN residual rescaled by k-NN absolute
///   residuals, and a CQR score from k-NN quantiles at `alpha/2` and
///   `1 - alpha/2`.
/// * Case 3: `n_scores` ridge residual scores on random 20-feature
///   subsets, drawn with `subset_seed`.
/// * Individual: OLS and tree residual scores.
pub fn score_menu(
    case: CaseId,
    train: &Dataset,
    alpha: f64,
    n_scores: usize,
    subset_seed: u64,
) -> Result<Vec<ScoreSpec>> {
    let p = ModelParams::default();
    match case {
        CaseId::Case1 => Ok(vec![
            ScoreSpec::residual(fitted(ModelKind::Ols, &p, train)?.mean()?),
            ScoreSpec::residual(fitted(ModelKind::RidgeSubset, &p, train)?.mean()?),
            ScoreSpec::residual(fitted(ModelKind::Knn, &p, train)?.mean()?),
            ScoreSpec::residual(fitted(ModelKind::Tree, &p, train)?.mean()?),
        ]),
        CaseId::Case2 => {
            let q = fitted(
                ModelKind::KnnQuantile,
                &ModelParams {
                    k: KNN_QUANTILE_K,
                    levels: (alpha / 2.0, 1.0 - alpha / 2.0),
                    ..p.clone()
                },
                train,
            )?;
            Ok(vec![
                ScoreSpec::residual(fitted(ModelKind::Tree, &p, train)?.mean()?),
                ScoreSpec::rescaled(
                    fitted(ModelKind::Knn, &p, train)?.mean()?,
                    fitted(ModelKind::KnnScale, &p, train)?.scale()?,
                ),
                ScoreSpec::cqr(q.lower()?, q.upper()?),
            ])
        }
        CaseId::Case3 => {
            if n_scores == 0 {
                return Err(Error::Config("Case 3 needs at least one score".into()));
            }
            let d = train.dim();
            let mut rng = ChaCha8Rng::seed_from_u64(subset_seed);
            (0..n_scores)
                .map(|_| {
                    let mut subset = sample(&mut rng, d, CASE3_SUBSET.min(d)).into_vec();
                    subset.sort_unstable();
                    let params = ModelParams {
                        subset: Some(subset),
                        ..p.clone()
                    };
                    Ok(ScoreSpec::residual(
                        fitted(ModelKind::RidgeSubset, &params, train)?.mean()?,
                    ))
                })
                .collect()
        }
        CaseId::Individual => Ok(vec![
            ScoreSpec::residual(fitted(ModelKind::Ols, &p, train)?.mean()?),
            ScoreSpec::residual(fitted(ModelKind::Tree, &p, train)?.mean()?),
        ]),
    }
}
