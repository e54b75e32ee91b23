//! Approximate entropy of a single series.

use serde::{Deserialize, Serialize};

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Template length and tolerance factor (`r = r_factor × std`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApEnParams {
    pub m: usize,
    pub r_factor: f64,
}

impl Default for ApEnParams {
    fn default() -> Self {
        ApEnParams { m: 2, r_factor: 0.2 }
    }
}

/// `Φ_m − Φ_{m+1}` where `Φ_k` averages `ln C_i^k` and `C_i^k` is the share
/// of length-`k` templates within Chebyshev distance `r` of template `i`,
/// self-matches included.
pub fn approximate_entropy<T: Scalar>(signal: &[T], m: usize, r: f64) -> Result<f64> {
    let n = signal.len();
    if m == 0 || n <= m + 1 {
        return Err(Error::InvalidArgument(format!("need m >= 1 and more than m + 1 = {} samples, got {n}", m + 1)));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("tolerance r must be positive, got {r}")));
    }
    let x: Vec<f64> = signal.iter().map(|v| v.as_f64()).collect();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("approximate entropy input".into()));
    }
    let n_m = n - m + 1;
    let n_m1 = n - m;
    let mut count_m = vec![0usize; n_m];
    let mut count_m1 = vec![0usize; n_m1];
    for i in 0..n_m {
        // self-match
        count_m[i] += 1;
        if i < n_m1 {
            count_m1[i] += 1;
        }
        for j in i + 1..n_m {
            if (0..m).all(|k| (x[i + k] - x[j + k]).abs() <= r) {
                count_m[i] += 1;
                count_m[j] += 1;
                if j < n_m1 && (x[i + m] - x[j + m]).abs() <= r {
                    count_m1[i] += 1;
                    count_m1[j] += 1;
                }
            }
        }
    }
    let phi = |counts: &[usize]| {
        let total = counts.len() as f64;
        counts.iter().map(|&c| (c as f64 / total).ln()).sum::<f64>() / total
    };
    Ok(phi(&count_m) - phi(&count_m1))
}

/// Approximate entropy with `r` relative to the series' standard deviation.
/// A constant series has entropy 0.
pub fn approximate_entropy_rel<T: Scalar>(signal: &[T], p: ApEnParams) -> Result<f64> {
    let n = signal.len() as f64;
    let mean = signal.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = signal.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
    let r = p.r_factor * var.sqrt();
    if r == 0.0 {
        // every template matches every other at any positive tolerance
        return approximate_entropy(signal, p.m, 1.0);
    }
    approximate_entropy(signal, p.m, r)
}

/// Per-trial, per-channel entropy table `[N][C]`.
pub fn apen_table<T: Scalar>(trials: &TrialSet<T>, p: ApEnParams) -> Result<Vec<Vec<f64>>> {
    let (c, t) = (trials.n_channels(), trials.n_samples());
    (0..trials.n_trials())
        .map(|i| {
            let x = trials.trial(i);
            (0..c).map(|ch| approximate_entropy_rel(&x[ch * t..(ch + 1) * t], p)).collect()
        })
        .collect()
}

/// Mean entropy of every channel over all trials.
pub fn channel_mean_apen<T: Scalar>(trials: &TrialSet<T>, p: ApEnParams) -> Result<Vec<f64>> {
    let table = apen_table(trials, p)?;
    if table.is_empty() {
        return Err(Error::Empty("trial set".into()));
    }
    let n = table.len() as f64;
    let mut mean = vec![0.0; trials.n_channels()];
    for row in &table {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_has_zero_entropy() {
        let x = vec![3.0f64; 40];
        assert_eq!(approximate_entropy(&x, 2, 0.2).unwrap(), 0.0);
        assert_eq!(approximate_entropy_rel(&x, ApEnParams::default()).unwrap(), 0.0);
        assert!(approximate_entropy(&x, 2, 0.0).is_err());
        assert!(approximate_entropy(&x[..3], 2, 0.2).is_err());
    }
}
