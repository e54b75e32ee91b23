//! EEGNet-style feature extractor with a fully connected classifier head.
//!
//! Layout for an input `[N, C, T]`:
//! temporal conv (F1 × K) → BN → depthwise spatial (D per filter) → BN → ELU
//! → avg pool p1 → dropout → depthwise temporal (K2) → pointwise (F2) → BN
//! → ELU → avg pool p2 → dropout → flatten (`F2 · ⌊⌊T/p1⌋/p2⌋` features).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::BatchStats;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rows per chunk when running inference on large trial sets.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EEGNetConfig {
    pub n_channels: usize,
    pub n_samples: usize,
    pub temporal_kernel_len: usize,
    #[serde(default = "d_f1")]
    pub n_temporal_filters: usize,
    #[serde(default = "d_depth")]
    pub depth_multiplier: usize,
    #[serde(default = "d_f2")]
    pub n_separable_filters: usize,
    #[serde(default = "d_sep")]
    pub separable_kernel_len: usize,
    #[serde(default = "d_pool1")]
    pub pool1: usize,
    #[serde(default = "d_pool2")]
    pub pool2: usize,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    #[serde(default = "d_classes")]
    pub n_classes: usize,
    #[serde(default = "d_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "d_eps")]
    pub bn_eps: f64,
}

fn d_f1() -> usize {
    8
}
fn d_depth() -> usize {
    2
}
fn d_f2() -> usize {
    16
}
fn d_sep() -> usize {
    16
}
fn d_pool1() -> usize {
    4
}
fn d_pool2() -> usize {
    8
}
fn d_dropout() -> f64 {
    0.25
}
fn d_classes() -> usize {
    2
}
fn d_momentum() -> f64 {
    0.1
}
fn d_eps() -> f64 {
    1e-3
}

impl EEGNetConfig {
    /// EEGNet-8,2 with a temporal kernel of half a second.
    pub fn new(n_channels: usize, n_samples: usize, sampling_rate_hz: f64) -> Self {
        EEGNetConfig {
            n_channels,
            n_samples,
            temporal_kernel_len: ((sampling_rate_hz / 2.0).round() as usize).max(1),
            n_temporal_filters: d_f1(),
            depth_multiplier: d_depth(),
            n_separable_filters: d_f2(),
            separable_kernel_len: d_sep(),
            pool1: d_pool1(),
            pool2: d_pool2(),
            dropout: d_dropout(),
            n_classes: d_classes(),
            bn_momentum: d_momentum(),
            bn_eps: d_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_channels,
            self.n_samples,
            self.temporal_kernel_len,
            self.n_temporal_filters,
            self.depth_multiplier,
            self.n_separable_filters,
            self.separable_kernel_len,
            self.pool1,
            self.pool2,
            self.n_classes,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("EEGNet sizes must all be at least 1".into()));
        }
        if self.temporal_kernel_len > self.n_samples || self.separable_kernel_len > self.n_samples / self.pool1 {
            return Err(Error::Config(format!(
                "kernels ({}, {}) too long for {} samples",
                self.temporal_kernel_len, self.separable_kernel_len, self.n_samples
            )));
        }
        if self.feature_dim() == 0 {
            return Err(Error::Config(format!(
                "{} samples vanish under pooling {} × {}",
                self.n_samples, self.pool1, self.pool2
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn n_depthwise(&self) -> usize {
        self.n_temporal_filters * self.depth_multiplier
    }

    /// Flattened feature length `F2 · ⌊⌊T/p1⌋/p2⌋`.
    pub fn feature_dim(&self) -> usize {
        self.n_separable_filters * (self.n_samples / self.pool1 / self.pool2)
    }
}

#[derive(Debug, Clone)]
struct Ids {
    temporal: ParamId,
    bn1: (ParamId, ParamId),
    spatial: ParamId,
    bn2: (ParamId, ParamId),
    separable: ParamId,
    pointwise: ParamId,
    bn3: (ParamId, ParamId),
    dense_w: ParamId,
    dense_b: ParamId,
}

/// Trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct EEGNet<T> {
    pub cfg: EEGNetConfig,
    pub params: ParamSet<T>,
    /// Running mean and variance of the three batch-norm layers.
    pub buffers: ParamSet<T>,
    ids: Ids,
}

/// Batch statistics of one training forward, in layer order.
pub type ForwardStats<T> = Vec<BatchStats<T>>;

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..bound)))
}

impl<T: Scalar> EEGNet<T> {
    /// He-uniform convolution weights, Glorot-style dense layer, BN at identity.
    pub fn init(cfg: EEGNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f1, fd, f2) = (cfg.n_temporal_filters, cfg.n_depthwise(), cfg.n_separable_filters);
        let mut ps = ParamSet::new();
        let mut bufs = ParamSet::new();
        let mut bn = |ps: &mut ParamSet<T>, name: &str, f: usize| {
            bufs.add(format!("{name}.running_mean"), Tensor::zeros(&[f]));
            bufs.add(format!("{name}.running_var"), Tensor::ones(&[f]));
            (ps.add(format!("{name}.gamma"), Tensor::ones(&[f])), ps.add(format!("{name}.beta"), Tensor::zeros(&[f])))
        };
        let temporal = ps.add("temporal", uniform(&mut rng, &[f1, cfg.temporal_kernel_len], cfg.temporal_kernel_len));
        let bn1 = bn(&mut ps, "bn1", f1);
        let spatial = ps.add("spatial", uniform(&mut rng, &[fd, cfg.n_channels], cfg.n_channels));
        let bn2 = bn(&mut ps, "bn2", fd);
        let separable =
            ps.add("separable", uniform(&mut rng, &[fd, cfg.separable_kernel_len], cfg.separable_kernel_len));
        let pointwise = ps.add("pointwise", uniform(&mut rng, &[f2, fd], fd));
        let bn3 = bn(&mut ps, "bn3", f2);
        let fdim = cfg.feature_dim();
        let glorot = (6.0 / (fdim + cfg.n_classes) as f64).sqrt();
        let dense_w =
            ps.add("dense.weight", Tensor::from_fn(&[fdim, cfg.n_classes], |_| T::lit(rng.random_range(-glorot..glorot))));
        let dense_b = ps.add("dense.bias", Tensor::zeros(&[cfg.n_classes]));
        Ok(EEGNet {
            cfg,
            params: ps,
            buffers: bufs,
            ids: Ids { temporal, bn1, spatial, bn2, separable, pointwise, bn3, dense_w, dense_b },
        })
    }

    /// Rebuilds a network from stored parameters and buffers.
    pub fn from_parts(cfg: EEGNetConfig, params: &ParamSet<T>, buffers: &ParamSet<T>) -> Result<Self> {
        let mut net = Self::init(cfg, 0)?;
        net.params.copy_from(params)?;
        net.buffers.copy_from(buffers)?;
        Ok(net)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let (c, t) = (self.cfg.n_channels, self.cfg.n_samples);
        if shape.len() != 3 || shape[1] != c || shape[2] != t {
            return Err(Error::shape(format!("[N, {c}, {t}]"), format!("{shape:?}")));
        }
        Ok(())
    }

    fn running(&self, layer: usize) -> (&[T], &[T]) {
        let m = self.buffers.get(ParamId(2 * layer)).data();
        let v = self.buffers.get(ParamId(2 * layer + 1)).data();
        (m, v)
    }

    fn dropout(&self, g: &mut Graph<T>, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
        let p = self.cfg.dropout;
        match rng {
            Some(rng) if g.training() && p > 0.0 => {
                let keep = T::lit(1.0 / (1.0 - p));
                let mask = Tensor::from_fn(g.shape(x), |_| if rng.random::<f64>() < p { T::zero() } else { keep });
                g.mul_const(x, mask)
            }
            _ => x,
        }
    }

    /// Feature extractor on the tape: `[N, C, T]` → `[N, F]`. On a training
    /// tape the batch-norm statistics are returned for [`Self::update_running`].
    pub fn features(
        &self,
        g: &mut Graph<T>,
        b: &Bound,
        x: Var,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, ForwardStats<T>)> {
        self.check_input(g.shape(x))?;
        let eps = T::lit(self.cfg.bn_eps);
        let n = g.shape(x)[0];
        let id = &self.ids;
        let mut stats = Vec::new();

        let h = g.temporal_conv(x, b.var(id.temporal));
        let (h, s) = g.batch_norm(h, b.var(id.bn1.0), b.var(id.bn1.1), self.running(0), eps);
        stats.extend(s);
        let h = g.depthwise_spatial(h, b.var(id.spatial));
        let (h, s) = g.batch_norm(h, b.var(id.bn2.0), b.var(id.bn2.1), self.running(1), eps);
        stats.extend(s);
        let h = g.elu(h);
        let h = g.avg_pool_last(h, self.cfg.pool1);
        let h = self.dropout(g, h, &mut rng);

        let h = g.depthwise_temporal_conv(h, b.var(id.separable));
        let h = g.pointwise(h, b.var(id.pointwise));
        let (h, s) = g.batch_norm(h, b.var(id.bn3.0), b.var(id.bn3.1), self.running(2), eps);
        stats.extend(s);
        let h = g.elu(h);
        let h = g.avg_pool_last(h, self.cfg.pool2);
        let h = self.dropout(g, h, &mut rng);
        Ok((g.reshape(h, &[n, self.cfg.feature_dim()]), stats))
    }

    /// Fully connected head on the tape: `[N, F]` → `[N, n_classes]`.
    pub fn logits(&self, g: &mut Graph<T>, b: &Bound, features: Var) -> Result<Var> {
        let s = g.shape(features);
        if s.len() != 2 || s[1] != self.cfg.feature_dim() {
            return Err(Error::shape(format!("[N, {}]", self.cfg.feature_dim()), format!("{s:?}")));
        }
        let z = g.linear(features, b.var(self.ids.dense_w));
        Ok(g.add_bias(z, b.var(self.ids.dense_b)))
    }

    /// Exponential moving average of the batch-norm statistics.
    pub fn update_running(&mut self, stats: &[BatchStats<T>]) {
        let m = T::lit(self.cfg.bn_momentum);
        let one = T::one();
        for (layer, st) in stats.iter().enumerate() {
            for (k, src) in [(0, &st.mean), (1, &st.var)] {
                let buf = self.buffers.get_mut(ParamId(2 * layer + k)).data_mut();
                for (r, &v) in buf.iter_mut().zip(src) {
                    *r = (one - m) * *r + m * v;
                }
            }
        }
    }

    /// Inference-mode features for `[N, C, T]` trials, computed in chunks.
    pub fn extract_features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let n = x.shape()[0];
        let mut parts = Vec::new();
        let b_eval = |chunk: Tensor<T>| -> Result<Tensor<T>> {
            let mut g = Graph::new(false);
            let b = self.params.bind(&mut g, false);
            let xv = g.constant(chunk);
            let (f, _) = self.features(&mut g, &b, xv, None)?;
            Ok(g.value(f).clone())
        };
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            parts.push(b_eval(x.slice_rows(start, end))?);
            start = end;
        }
        if parts.is_empty() {
            return Ok(Tensor::zeros(&[0, self.cfg.feature_dim()]));
        }
        Tensor::cat_rows(&parts.iter().collect::<Vec<_>>())
    }

    /// Dense head on plain tensors.
    pub fn classify_logits(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let f = self.cfg.feature_dim();
        if features.ndim() != 2 || features.shape()[1] != f {
            return Err(Error::shape(format!("[N, {f}]"), format!("{:?}", features.shape())));
        }
        let mut z = features.matmul(self.params.get(self.ids.dense_w))?;
        let bias = self.params.get(self.ids.dense_b).data().to_vec();
        for row in z.data_mut().chunks_mut(bias.len()) {
            for (v, &b) in row.iter_mut().zip(&bias) {
                *v += b;
            }
        }
        Ok(z)
    }

    /// Inference-mode logits for `[N, C, T]` trials.
    pub fn predict_logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.classify_logits(&self.extract_features(x)?)
    }

    pub fn dense_weight(&self) -> &Tensor<T> {
        self.params.get(self.ids.dense_w)
    }

    pub fn dense_weight_mut(&mut self) -> &mut Tensor<T> {
        self.params.get_mut(self.ids.dense_w)
    }

    pub fn dense_bias_mut(&mut self) -> &mut Tensor<T> {
        self.params.get_mut(self.ids.dense_b)
    }
}

/// Row-wise temperature softmax of `[N, K]` logits.
pub fn predict_proba<T: Scalar>(logits: &Tensor<T>, tau: f64) -> Result<Tensor<T>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if logits.ndim() != 2 {
        return Err(Error::shape("[N, K]", format!("{:?}", logits.shape())));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("logits".into()));
    }
    let k = logits.shape()[1];
    let inv = T::lit(1.0 / tau);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = ((*v - m) * inv).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_dim_formula() {
        let cfg = EEGNetConfig::new(16, 64, 64.0);
        assert_eq!(cfg.temporal_kernel_len, 32);
        assert_eq!(cfg.feature_dim(), 16 * 2);
        let cfg = EEGNetConfig::new(18, 400, 400.0);
        assert_eq!(cfg.feature_dim(), 16 * 12);
    }

    #[test]
    fn too_short_input_rejected() {
        let cfg = EEGNetConfig::new(4, 16, 16.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut cfg = EEGNetConfig::new(3, 32, 16.0);
        cfg.separable_kernel_len = 4;
        cfg.pool2 = 4;
        let mut net = EEGNet::<f64>::init(cfg, 1).unwrap();
        let mut g = Graph::new(true);
        let b = net.params.bind(&mut g, true);
        let x = g.constant(Tensor::from_fn(&[4, 3, 32], |i| 3.0 + (i as f64 * 0.37).sin()));
        let (_, stats) = net.features(&mut g, &b, x, None).unwrap();
        assert_eq!(stats.len(), 3);
        net.update_running(&stats);
        let m = net.buffers.by_name("bn1.running_mean").unwrap();
        for (r, s) in m.data().iter().zip(&stats[0].mean) {
            assert!((r - 0.1 * s).abs() < 1e-12);
        }
    }
}
