#![allow(dead_code)]

use cola::allocation::LossOracle;
use cola::scores::IntervalForm;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Holdout of `n` labels and `k` residual-type scores with heterogeneous
/// noise and locally varying scale, evaluated on its own rows.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize) -> (Vec<Vec<f64>>, Vec<Vec<IntervalForm>>) {
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut forms = vec![Vec::with_capacity(k); n];
    let mut cols = vec![Vec::with_capacity(n); k];
    for col in cols.iter_mut() {
        let noise = rng.random_range(0.1..1.0);
        let slope = rng.random_range(0.0..1.0);
        let half_width = rng.random_range(0.0..0.3);
        for (i, &yi) in y.iter().enumerate() {
            let c = yi + noise * rng.random_range(-1.0..1.0);
            let f = IntervalForm {
                lo: c - half_width,
                hi: c + half_width,
                scale: 1.0 + slope * yi.abs(),
            };
            col.push(f.score(yi));
            forms[i].push(f);
        }
    }
    (cols, forms)
}

pub fn random_oracle(rng: &mut ChaCha8Rng, n: usize, k: usize, alpha: f64) -> LossOracle {
    let (cols, forms) = random_instance(rng, n, k);
    LossOracle::augmented(cols, &forms, alpha).unwrap()
}

/// Weighted `1 - alpha` quantile by direct summation in sorted order.
pub fn brute_weighted_quantile(values: &[f64], weights: &[f64], alpha: f64) -> f64 {
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut mass = 0.0;
    for (v, w) in pairs {
        mass += w;
        if mass >= 1.0 - alpha - cola::quantiles::WEIGHT_SLACK {
            return v;
        }
    }
    f64::INFINITY
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
