//! Training objective: cross-entropy, temperature-scaled distillation and
//! multi-bandwidth RBF MMD, each on the tape and on plain tensors.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weights of the three loss terms. A zero weight disables its term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(default = "one", alias = "lambda")]
    pub lambda_kd: f64,
    #[serde(default = "one", alias = "beta")]
    pub beta_da: f64,
    #[serde(default = "two")]
    pub tau: f64,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_kd: 1.0, beta_da: 1.0, tau: 2.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_kd >= 0.0 && self.beta_da >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Bandwidth choice for the RBF kernel `k(x, y) = exp(−‖x − y‖² / h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Bandwidths {
    Fixed { values: Vec<f64> },
    /// `h = median(pairwise ‖x − y‖²) × multiplier` over the pooled sample.
    MedianHeuristic { multipliers: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Rbf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(default)]
    pub family: KernelFamily,
    pub bandwidths: Bandwidths,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            family: KernelFamily::Rbf,
            bandwidths: Bandwidths::MedianHeuristic { multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0] },
        }
    }
}

impl KernelSpec {
    pub fn fixed(values: Vec<f64>) -> Self {
        KernelSpec { family: KernelFamily::Rbf, bandwidths: Bandwidths::Fixed { values } }
    }

    pub fn validate(&self) -> Result<()> {
        let v = match &self.bandwidths {
            Bandwidths::Fixed { values } => values,
            Bandwidths::MedianHeuristic { multipliers } => multipliers,
        };
        if v.is_empty() || v.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::Config("kernel needs at least one positive bandwidth".into()));
        }
        Ok(())
    }

    /// Concrete bandwidths for the given pooled squared distances.
    fn resolve<T: Scalar>(&self, dists: &[&[T]]) -> Vec<T> {
        match &self.bandwidths {
            Bandwidths::Fixed { values } => values.iter().map(|&h| T::lit(h)).collect(),
            Bandwidths::MedianHeuristic { multipliers } => {
                let med = median_sq_distance(dists);
                multipliers.iter().map(|&m| T::lit(m) * med).collect()
            }
        }
    }
}

/// Median of all squared distances; falls back to 1 when every distance is 0.
fn median_sq_distance<T: Scalar>(dists: &[&[T]]) -> T {
    let mut all: Vec<f64> = dists.iter().flat_map(|d| d.iter().map(|v| v.as_f64())).filter(|&v| v > 0.0).collect();
    if all.is_empty() {
        return T::one();
    }
    let mid = all.len() / 2;
    let (_, m, _) = all.select_nth_unstable_by(mid, f64::total_cmp);
    T::lit(*m)
}

fn check_labels(labels: &[u8], n: usize, k: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty("cross-entropy batch".into()));
    }
    if labels.len() != n {
        return Err(Error::shape(n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 0..{k}")));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("[N, K]", format!("{s:?}")));
        }
        check_labels(labels, s[0], s[1])?;
        let lp = self.log_softmax(logits);
        let idx: Vec<usize> = labels.iter().map(|&y| y as usize).collect();
        let picked = self.pick(lp, &idx);
        let m = self.mean(picked);
        Ok(self.scale(m, -T::one()))
    }

    /// `(1/N) Σ τ² KL(p_r ‖ p_s)` with `p = softmax(z / τ)`. When
    /// `stop_gradient_teacher` is set no gradient reaches `z_s`.
    pub fn kd_loss(&mut self, z_r: Var, z_s: Var, tau: f64, stop_gradient_teacher: bool) -> Result<Var> {
        if self.shape(z_r) != self.shape(z_s) || self.shape(z_r).len() != 2 {
            return Err(Error::shape(format!("{:?}", self.shape(z_r)), format!("{:?}", self.shape(z_s))));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
        }
        if !self.value(z_r).all_finite() || !self.value(z_s).all_finite() {
            return Err(Error::NonFinite("distillation logits".into()));
        }
        let n = self.shape(z_r)[0];
        let z_s = if stop_gradient_teacher { self.detach(z_s) } else { z_s };
        let inv = T::lit(1.0 / tau);
        let sr = self.scale(z_r, inv);
        let ss = self.scale(z_s, inv);
        let lr = self.log_softmax(sr);
        let ls = self.log_softmax(ss);
        let pr = self.exp(lr);
        let diff = self.sub(lr, ls);
        let kl = self.mul(pr, diff);
        let total = self.sum(kl);
        Ok(self.scale(total, T::lit(tau * tau) / T::from_usize_lossy(n)))
    }

    /// Biased (V-statistic) squared MMD between `[N_s, F]` and `[N_t, F]`,
    /// summed over the kernel's bandwidths. Median-heuristic bandwidths are
    /// computed from the current values and treated as constants.
    pub fn mmd2(&mut self, a: Var, b: Var, kernel: &KernelSpec) -> Result<Var> {
        kernel.validate()?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape(format!("{sa:?}"), format!("{sb:?}")));
        }
        if sa[0] == 0 || sb[0] == 0 {
            return Err(Error::Empty("MMD sample".into()));
        }
        let daa = self.pairwise_sqdist(a, a);
        let dbb = self.pairwise_sqdist(b, b);
        let dab = self.pairwise_sqdist(a, b);
        let hs = kernel.resolve(&[self.value(daa).data(), self.value(dbb).data(), self.value(dab).data()]);
        let mut terms = Vec::with_capacity(3 * hs.len());
        for h in hs {
            let c = -T::one() / h;
            for (d, w) in [(daa, T::one()), (dbb, T::one()), (dab, T::lit(-2.0))] {
                let k = self.scale(d, c);
                let k = self.exp(k);
                let m = self.mean(k);
                terms.push(self.scale(m, w));
            }
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        Ok(acc)
    }
}

fn eval_scalar<T: Scalar>(f: impl FnOnce(&mut Graph<T>) -> Result<Var>) -> Result<T> {
    let mut g = Graph::new(false);
    let v = f(&mut g)?;
    Ok(g.value(v).item())
}

/// Plain-tensor cross-entropy.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<T> {
    eval_scalar(|g| {
        let z = g.constant(logits.clone());
        g.cross_entropy(z, labels)
    })
}

/// Plain-tensor distillation loss.
pub fn kd_loss<T: Scalar>(z_r: &Tensor<T>, z_s: &Tensor<T>, tau: f64) -> Result<T> {
    eval_scalar(|g| {
        let a = g.constant(z_r.clone());
        let b = g.constant(z_s.clone());
        g.kd_loss(a, b, tau, false)
    })
}

/// Plain-tensor squared MMD.
pub fn mmd2<T: Scalar>(source: &Tensor<T>, target: &Tensor<T>, kernel: &KernelSpec) -> Result<T> {
    eval_scalar(|g| {
        let a = g.constant(source.clone());
        let b = g.constant(target.clone());
        g.mmd2(a, b, kernel)
    })
}

/// `ce + λ·kd + β·da`.
pub fn total_loss<T: Scalar>(ce: T, kd: T, da: T, w: &LossWeights) -> T {
    ce + T::lit(w.lambda_kd) * kd + T::lit(w.beta_da) * da
}
