//! Independent reference computations shared by the integration tests.
//!
//! Everything here is written as plainly as possible (nested loops, no
//! shared code with the library) so that agreement means something.

#![allow(dead_code)]

pub mod gradcheck;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use xsa_core::data::{Modality, Species, TrialSet};
use xsa_core::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn randn(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| normal(rng))
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &Tensor<f64>, h: f64, f: impl Fn(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut out = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Largest elementwise relative error `|a − n| / max(|a|, |n|, floor)`.
/// The floor keeps entries that are zero up to rounding from dominating.
pub fn max_rel_err(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Squared MMD by explicit loops over bandwidths, sample pairs and features.
pub fn mmd2_triple_loop(a: &[Vec<f64>], b: &[Vec<f64>], bandwidths: &[f64]) -> f64 {
    let k = |x: &[f64], y: &[f64], h: f64| {
        let mut d = 0.0;
        for f in 0..x.len() {
            d += (x[f] - y[f]) * (x[f] - y[f]);
        }
        (-d / h).exp()
    };
    let mut total = 0.0;
    for &h in bandwidths {
        let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
        for x in a {
            for y in a {
                saa += k(x, y, h);
            }
        }
        for x in b {
            for y in b {
                sbb += k(x, y, h);
            }
        }
        for x in a {
            for y in b {
                sab += k(x, y, h);
            }
        }
        let (na, nb) = (a.len() as f64, b.len() as f64);
        total += saa / (na * na) + sbb / (nb * nb) - 2.0 * sab / (na * nb);
    }
    total
}

pub fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let f = t.shape()[1];
    t.data().chunks(f).map(|r| r.to_vec()).collect()
}

/// Fraction of positive/negative pairs ordered correctly, ties half.
pub fn auc_all_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

fn softmax_row(z: &[f64], tau: f64) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| (v / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `(1/N) Σ τ² Σ_k p_r log(p_r / p_s)`, straight from the definition.
pub fn kd_formula(z_r: &[Vec<f64>], z_s: &[Vec<f64>], tau: f64) -> f64 {
    let mut total = 0.0;
    for (a, b) in z_r.iter().zip(z_s) {
        let pr = softmax_row(a, tau);
        let ps = softmax_row(b, tau);
        for k in 0..pr.len() {
            total += pr[k] * (pr[k] / ps[k]).ln();
        }
    }
    tau * tau * total / z_r.len() as f64
}

/// Mean of `−log softmax(z)_y` row by row.
pub fn ce_formula(z: &[Vec<f64>], labels: &[u8]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in z.iter().zip(labels) {
        total -= softmax_row(row, 1.0)[y as usize].ln();
    }
    total / z.len() as f64
}

/// Approximate entropy by testing every template pair independently.
pub fn apen_exhaustive(x: &[f64], m: usize, r: f64) -> f64 {
    let phi = |len: usize| {
        let count = x.len() - len + 1;
        let mut acc = 0.0;
        for i in 0..count {
            let mut matches = 0usize;
            for j in 0..count {
                let mut close = true;
                for k in 0..len {
                    if (x[i + k] - x[j + k]).abs() > r {
                        close = false;
                    }
                }
                if close {
                    matches += 1;
                }
            }
            acc += (matches as f64 / count as f64).ln();
        }
        acc / count as f64
    };
    phi(m) - phi(m + 1)
}

/// `(1/N) Σ_n Σ_t X[n][i][t] X[n][j][t]` with explicit indexing.
pub fn covariance_loops(x: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (n, c, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let d = x.data();
    let mut out = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in 0..c {
            let mut s = 0.0;
            for k in 0..n {
                for s_ in 0..t {
                    s += d[k * c * t + i * t + s_] * d[k * c * t + j * t + s_];
                }
            }
            out[i][j] = s / n as f64;
        }
    }
    out
}

pub fn matmul_loops(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

pub fn mat(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    let c = t.shape()[1];
    t.data().chunks(c).map(|r| r.to_vec()).collect()
}

pub fn frob_dist_to_identity(m: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (i, row) in m.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let e = if i == j { 1.0 } else { 0.0 };
            s += (v - e) * (v - e);
        }
    }
    s.sqrt()
}

/// Weights of a one-layer encoder read back from the library's parameter
/// names, used by [`encoder_reference`].
pub struct EncoderWeights {
    pub ln1: (Vec<f64>, Vec<f64>),
    pub wq: Vec<Vec<f64>>,
    pub bq: Vec<f64>,
    pub wk: Vec<Vec<f64>>,
    pub bk: Vec<f64>,
    pub wv: Vec<Vec<f64>>,
    pub bv: Vec<f64>,
    pub wo: Vec<Vec<f64>>,
    pub bo: Vec<f64>,
    pub ln2: (Vec<f64>, Vec<f64>),
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
    pub projection: Vec<Vec<f64>>,
}

fn layer_norm_row(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let d = x.len() as f64;
    let mu = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
    x.iter().enumerate().map(|(j, v)| (v - mu) / (var + 1e-5).sqrt() * g[j] + b[j]).collect()
}

fn affine(x: &[f64], w: &[Vec<f64>], b: Option<&[f64]>) -> Vec<f64> {
    let out_dim = w[0].len();
    (0..out_dim)
        .map(|o| {
            let mut s = b.map_or(0.0, |b| b[o]);
            for (i, xi) in x.iter().enumerate() {
                s += xi * w[i][o];
            }
            s
        })
        .collect()
}

/// Single-head pre-norm encoder layer plus projection, one trial `[C][T]`
/// at a time, returning `[C_out][T]`.
pub fn encoder_reference(trial: &[Vec<f64>], w: &EncoderWeights) -> Vec<Vec<f64>> {
    let (c, t) = (trial.len(), trial[0].len());
    let tokens: Vec<Vec<f64>> = (0..t).map(|s| (0..c).map(|ch| trial[ch][s]).collect()).collect();
    let n1: Vec<Vec<f64>> = tokens.iter().map(|x| layer_norm_row(x, &w.ln1.0, &w.ln1.1)).collect();
    let q: Vec<Vec<f64>> = n1.iter().map(|x| affine(x, &w.wq, Some(&w.bq))).collect();
    let k: Vec<Vec<f64>> = n1.iter().map(|x| affine(x, &w.wk, Some(&w.bk))).collect();
    let v: Vec<Vec<f64>> = n1.iter().map(|x| affine(x, &w.wv, Some(&w.bv))).collect();
    let scale = 1.0 / (c as f64).sqrt();
    let mut h = tokens.clone();
    for i in 0..t {
        let scores: Vec<f64> = (0..t).map(|j| (0..c).map(|d| q[i][d] * k[j][d]).sum::<f64>() * scale).collect();
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        let ctx: Vec<f64> = (0..c).map(|d| (0..t).map(|j| e[j] / z * v[j][d]).sum()).collect();
        let a = affine(&ctx, &w.wo, Some(&w.bo));
        for d in 0..c {
            h[i][d] += a[d];
        }
    }
    for row in h.iter_mut() {
        let n2 = layer_norm_row(row, &w.ln2.0, &w.ln2.1);
        let hidden: Vec<f64> = affine(&n2, &w.w1, Some(&w.b1)).into_iter().map(|v| v.max(0.0)).collect();
        let f = affine(&hidden, &w.w2, Some(&w.b2));
        for d in 0..c {
            row[d] += f[d];
        }
    }
    let projected: Vec<Vec<f64>> = h.iter().map(|x| affine(x, &w.projection, None)).collect();
    let c_out = w.projection[0].len();
    (0..c_out).map(|o| (0..t).map(|s| projected[s][o]).collect()).collect()
}

/// Mean power of the `[C][T]` trial at DFT bin frequencies `freqs`, summed
/// over channels.
pub fn band_power(trial: &[f64], c: usize, t: usize, fs: f64, freqs: &[f64]) -> f64 {
    let mut p = 0.0;
    for ch in 0..c {
        let x = &trial[ch * t..(ch + 1) * t];
        for &f in freqs {
            let w = 2.0 * std::f64::consts::PI * f / fs;
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in x.iter().enumerate() {
                re += v * (w * j as f64).cos();
                im -= v * (w * j as f64).sin();
            }
            p += (re * re + im * im) / (t * t) as f64;
        }
    }
    p
}

/// Trial set whose label only changes the variability of channel
/// `informative`; every other channel is white noise.
pub fn single_informative_channel(n: usize, c: usize, t: usize, informative: usize, seed: u64) -> TrialSet<f64> {
    let mut r = rng(seed);
    let mut data = Vec::with_capacity(n * c * t);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = (i % 2) as u8;
        for ch in 0..c {
            if ch == informative && y == 1 {
                // a smooth sinusoid with little noise has low entropy
                let phase: f64 = r.random::<f64>() * std::f64::consts::TAU;
                for j in 0..t {
                    data.push((0.3 * j as f64 + phase).sin() + 0.05 * normal(&mut r));
                }
            } else {
                for _ in 0..t {
                    data.push(normal(&mut r));
                }
            }
        }
        labels.push(y);
    }
    TrialSet {
        data: Tensor::from_vec(&[n, c, t], data).unwrap(),
        labels,
        subject_ids: vec!["s0".into(); n],
        chronological_index: (0..n as u64).collect(),
        boundary: vec![false; n],
        sampling_rate_hz: 64.0,
        species: Species::Human,
        modality: Modality::Scalp,
        channel_names: (0..c).map(|k| format!("ch{k}")).collect(),
    }
}

/// Plain trial set around `data` with one subject per distinct id.
pub fn trial_set(data: Tensor<f64>, labels: Vec<u8>, subjects: Vec<String>) -> TrialSet<f64> {
    let n = data.shape()[0];
    let c = data.shape()[1];
    let mut chron = vec![0u64; n];
    let mut counters = std::collections::HashMap::new();
    for (i, s) in subjects.iter().enumerate() {
        let k = counters.entry(s.clone()).or_insert(0u64);
        chron[i] = *k;
        *k += 1;
    }
    TrialSet {
        data,
        labels,
        subject_ids: subjects,
        chronological_index: chron,
        boundary: vec![false; n],
        sampling_rate_hz: 100.0,
        species: Species::Human,
        modality: Modality::Scalp,
        channel_names: (0..c).map(|k| format!("ch{k}")).collect(),
    }
}

/// Bandwidths `m × median` where the median runs over every nonzero squared
/// distance in the within-A, within-B and cross blocks.
pub fn median_bandwidths(a: &[Vec<f64>], b: &[Vec<f64>], multipliers: &[f64]) -> Vec<f64> {
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let mut all = Vec::new();
    for (p, q) in [(a, a), (b, b), (a, b)] {
        for x in p {
            for y in q {
                let d = sq(x, y);
                if d > 0.0 {
                    all.push(d);
                }
            }
        }
    }
    all.sort_by(f64::total_cmp);
    let med = if all.is_empty() { 1.0 } else { all[all.len() / 2] };
    multipliers.iter().map(|m| m * med).collect()
}
