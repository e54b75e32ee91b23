//! Polyphase rational resampling with a Kaiser-windowed sinc filter.

use std::f64::consts::PI;

use super::TrialSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Kaiser window shape parameter.
pub const KAISER_BETA: f64 = 5.0;
/// Half filter length, in multiples of `max(up, down)`.
pub const HALF_LEN_FACTOR: usize = 10;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduced `(up, down)` factors for a rate change. Rates are rounded to
/// millihertz before reduction.
pub fn rational_factors(from_hz: f64, to_hz: f64) -> Result<(usize, usize)> {
    if !(from_hz > 0.0) || !(to_hz > 0.0) || !from_hz.is_finite() || !to_hz.is_finite() {
        return Err(Error::InvalidArgument(format!("sampling rates must be positive, got {from_hz} -> {to_hz}")));
    }
    let a = (from_hz * 1000.0).round() as u64;
    let b = (to_hz * 1000.0).round() as u64;
    let g = gcd(a, b);
    Ok(((b / g) as usize, (a / g) as usize))
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let y = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= y / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Low-pass FIR for an `up/down` resampler, DC gain equal to `up`.
pub fn design_filter(up: usize, down: usize) -> Vec<f64> {
    let m = up.max(down);
    let half = HALF_LEN_FACTOR * m;
    let len = 2 * half + 1;
    let cutoff = 1.0 / m as f64;
    let denom = bessel_i0(KAISER_BETA);
    let mut h: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 - half as f64;
            let arg = PI * cutoff * t;
            let sinc = if t == 0.0 { 1.0 } else { arg.sin() / arg };
            let r = t / half as f64;
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / denom;
            cutoff * sinc * w
        })
        .collect();
    let s: f64 = h.iter().sum();
    for v in &mut h {
        *v *= up as f64 / s;
    }
    h
}

/// Output length for `n` input samples.
pub fn output_len(n: usize, up: usize, down: usize) -> usize {
    (n * up).div_ceil(down)
}

/// Resamples one signal by `up/down`. Edges are extended by odd reflection
/// so a smooth signal keeps its level near the boundaries.
pub fn resample_signal<T: Scalar>(x: &[T], up: usize, down: usize, h: &[f64]) -> Vec<T> {
    let n = x.len();
    if n == 0 {
        return vec![];
    }
    let half = (h.len() - 1) / 2;
    let pad = half / up + 1;
    let at = |i: isize| -> f64 {
        let last = n as isize - 1;
        if i < 0 {
            let r = (-i).min(last);
            2.0 * x[0].as_f64() - x[r as usize].as_f64()
        } else if i > last {
            let r = (last - (i - last)).max(0);
            2.0 * x[n - 1].as_f64() - x[r as usize].as_f64()
        } else {
            x[i as usize].as_f64()
        }
    };
    let padded: Vec<f64> = (-(pad as isize)..(n + pad) as isize).map(at).collect();
    let out_n = output_len(n, up, down);
    let mut y = Vec::with_capacity(out_n);
    for k in 0..out_n {
        // position in the zero-stuffed padded stream
        let c = k * down + half + pad * up;
        let mut acc = 0.0;
        let mut j = c % up;
        while j < h.len() && j <= c {
            let idx = (c - j) / up;
            if idx < padded.len() {
                acc += h[j] * padded[idx];
            }
            j += up;
        }
        y.push(T::lit(acc));
    }
    y
}

/// Resamples every channel of every trial to `target_rate_hz`.
///
/// Identity when the rates match (data returned unchanged).
pub fn resample<T: Scalar>(trials: &TrialSet<T>, target_rate_hz: f64) -> Result<TrialSet<T>> {
    let (up, down) = rational_factors(trials.sampling_rate_hz, target_rate_hz)?;
    if up == down {
        return Ok(trials.clone());
    }
    let h = design_filter(up, down);
    let (n, c, t) = (trials.n_trials(), trials.n_channels(), trials.n_samples());
    let t_out = output_len(t, up, down);
    let mut out = Vec::with_capacity(n * c * t_out);
    for row in trials.data.data().chunks(t) {
        out.extend(resample_signal(row, up, down, &h));
    }
    let mut res = trials.clone();
    res.data = Tensor::from_vec(&[n, c, t_out], out)?;
    res.sampling_rate_hz = target_rate_hz;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_reduce() {
        assert_eq!(rational_factors(5000.0, 400.0).unwrap(), (2, 25));
        assert_eq!(rational_factors(256.0, 128.0).unwrap(), (1, 2));
        assert!(rational_factors(256.0, 0.0).is_err());
        assert!(rational_factors(-1.0, 10.0).is_err());
    }

    #[test]
    fn filter_has_unit_passband() {
        let h = design_filter(2, 25);
        let s: f64 = h.iter().sum();
        assert!((s - 2.0).abs() < 1e-12);
        assert_eq!(h.len(), 2 * HALF_LEN_FACTOR * 25 + 1);
    }

    #[test]
    fn constant_is_preserved() {
        let (up, down) = (3, 7);
        let h = design_filter(up, down);
        let y = resample_signal(&vec![1.5f64; 100], up, down, &h);
        assert_eq!(y.len(), output_len(100, up, down));
        for v in y {
            assert!((v - 1.5).abs() < 5e-3, "{v}");
        }
    }
}
