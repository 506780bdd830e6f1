//! Kernel similarity weights for localized calibration, and bandwidth
//! selection by effective sample size.

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const DEGENERATE_SUM: f64 = 1e-300;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        Ok(WeightVector(w))
    }

    pub fn uniform(n: usize) -> Self {
        WeightVector(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `exp(-||a - b|| / h)`
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn laplace(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidInput(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec {
            kind: KernelKind::Laplace,
            bandwidth,
        })
    }

    pub fn similarity(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Laplace => (-euclidean(a, b) / self.bandwidth).exp(),
        }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Normalized weights together with the raw similarity total.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    pub weights: WeightVector,
    pub raw_sum: f64,
}

fn similarities(x_holdout: &[Vec<f64>], x_new: &[f64], kernel: &KernelSpec) -> Result<Vec<f64>> {
    if x_holdout.is_empty() {
        return Err(Error::InvalidInput("no holdout points".into()));
    }
    if let Some(bad) = x_holdout.iter().position(|x| x.len() != x_new.len()) {
        return Err(Error::InvalidInput(format!(
            "holdout row {bad} has dimension {}, test point has {}",
            x_holdout[bad].len(),
            x_new.len()
        )));
    }
    let h: Vec<f64> = x_holdout.iter().map(|x| kernel.similarity(x, x_new)).collect();
    let sum: f64 = h.iter().sum();
    if sum < DEGENERATE_SUM {
        return Err(Error::DegenerateWeights { sum });
    }
    Ok(h)
}

pub fn kernel_weights(x_holdout: &[Vec<f64>], x_new: &[f64], kernel: &KernelSpec) -> Result<KernelWeights> {
    let h = similarities(x_holdout, x_new, kernel)?;
    let raw_sum: f64 = h.iter().sum();
    let w: Vec<f64> = h.iter().map(|v| v / raw_sum).collect();
    Ok(KernelWeights {
        weights: WeightVector(w),
        raw_sum,
    })
}

/// `(sum H)^2 / sum H^2` over the unnormalized similarities.
pub fn effective_sample_size(x_holdout: &[Vec<f64>], x_new: &[f64], kernel: &KernelSpec) -> Result<f64> {
    Ok(ess_of(&similarities(x_holdout, x_new, kernel)?))
}

fn ess_of(h: &[f64]) -> f64 {
    let s: f64 = h.iter().sum();
    let s2: f64 = h.iter().map(|v| v * v).sum();
    s * s / s2
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthCalibration {
    /// `h = constant * n^(-1/(d+2))`
    pub bandwidth: f64,
    pub constant: f64,
    /// Mean effective sample size over the probe points at `bandwidth`.
    pub mean_ess: f64,
    /// The target could only be approached at the edge of the search
    /// bracket (e.g. a target equal to `n` needs near-uniform weights).
    pub saturated: bool,
}

const BISECTION_STEPS: usize = 60;
const ESS_REL_TOL: f64 = 0.01;

/// Finds `h = c * n^(-1/(d+2))` whose mean effective sample size over
/// `probes` matches `target_ess`. The constant is bisected on a log scale
/// over `[1e-6, 1e6]` times the root-mean-square spread of the data.
pub fn calibrate_bandwidth(
    x_holdout: &[Vec<f64>],
    target_ess: f64,
    probes: &[Vec<f64>],
) -> Result<BandwidthCalibration> {
    let n = x_holdout.len();
    if n < 2 || probes.is_empty() {
        return Err(Error::InvalidInput(
            "bandwidth calibration needs n >= 2 and at least one probe".into(),
        ));
    }
    if !(target_ess > 1.0 && target_ess <= n as f64) {
        return Err(Error::InvalidInput(format!(
            "target ESS {target_ess} must lie in (1, {n}]"
        )));
    }
    let d = x_holdout[0].len();
    let spread = rms_spread(x_holdout);
    if !(spread > 0.0) {
        return Err(Error::InvalidInput("holdout features have zero spread".into()));
    }
    let rate = (n as f64).powf(-1.0 / (d as f64 + 2.0));

    // distances shifted by each probe's nearest neighbour, so the
    // similarities never underflow to an all-zero vector
    let shifted: Vec<Vec<f64>> = probes
        .iter()
        .map(|p| {
            let dist: Vec<f64> = x_holdout.iter().map(|x| euclidean(x, p)).collect();
            let nearest = dist.iter().copied().fold(f64::INFINITY, f64::min);
            dist.into_iter().map(|v| v - nearest).collect()
        })
        .collect();
    let mean_ess = |h: f64| -> f64 {
        let mut buf = vec![0.0; n];
        shifted
            .iter()
            .map(|dist| {
                for (b, &v) in buf.iter_mut().zip(dist) {
                    *b = (-v / h).exp();
                }
                ess_of(&buf)
            })
            .sum::<f64>()
            / shifted.len() as f64
    };

    let (mut lo, mut hi) = ((1e-6 * spread).ln(), (1e6 * spread).ln());
    let ess_lo = mean_ess(lo.exp() * rate);
    let ess_hi = mean_ess(hi.exp() * rate);
    let done = |c: f64, ess: f64, saturated| BandwidthCalibration {
        bandwidth: c * rate,
        constant: c,
        mean_ess: ess,
        saturated,
    };
    if target_ess >= ess_hi {
        if ess_hi >= (1.0 - ESS_REL_TOL) * target_ess {
            return Ok(done(hi.exp(), ess_hi, true));
        }
        return Err(Error::Calibration {
            target: target_ess,
            min: ess_lo,
            max: ess_hi,
        });
    }
    if target_ess <= ess_lo {
        if ess_lo <= (1.0 + ESS_REL_TOL) * target_ess {
            return Ok(done(lo.exp(), ess_lo, true));
        }
        return Err(Error::Calibration {
            target: target_ess,
            min: ess_lo,
            max: ess_hi,
        });
    }

    let mut best = (hi.exp(), ess_hi);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let ess = mean_ess(mid.exp() * rate);
        best = (mid.exp(), ess);
        if (ess - target_ess).abs() <= 1e-3 * target_ess {
            break;
        }
        if ess < target_ess {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (c, ess) = best;
    if (ess - target_ess).abs() > ESS_REL_TOL * target_ess {
        return Err(Error::Calibration {
            target: target_ess,
            min: ess_lo,
            max: ess_hi,
        });
    }
    Ok(done(c, ess, false))
}

fn rms_spread(x: &[Vec<f64>]) -> f64 {
    let n = x.len() as f64;
    let d = x[0].len();
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    (x.iter()
        .map(|r| r.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
        .sum::<f64>()
        / n)
        .sqrt()
}
