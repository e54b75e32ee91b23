//! Per-subject Euclidean Alignment.
//!
//! Each subject's trials `Xⁿ` (C × T_s) are whitened by the inverse square
//! root of their mean spatial covariance `R̄ = (1/N) Σ Xⁿ Xⁿᵀ`, so the aligned
//! trials have identity mean covariance.

use serde::{Deserialize, Serialize};

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::linalg::{max_asymmetry, symmetric_eigen};
use crate::scalar::Scalar;
use crate::tensor::{gemm, gemm_nt, Tensor};

/// Relative eigenvalue floor: `eps_floor = REL_FLOOR · trace(R̄) / C`.
pub const REL_FLOOR: f64 = 1e-8;
/// Symmetry tolerance accepted by [`inverse_sqrt`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Whitening state of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningState<T> {
    pub mean_cov: Tensor<T>,
    pub inv_sqrt: Tensor<T>,
    pub eps_floor: T,
    /// Number of trials the covariance was estimated from.
    pub n_trials: usize,
}

/// Which of a subject's trials feed its covariance estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "n")]
pub enum ReferenceTrials {
    /// Every trial of the subject (labels are never read).
    #[default]
    All,
    /// Only the chronologically first `n` trials.
    CausalPrefix(usize),
}

/// Mean spatial covariance of `[N, C, T]` trials.
pub fn mean_covariance<T: Scalar>(trials: &Tensor<T>) -> Result<Tensor<T>> {
    if trials.ndim() != 3 {
        return Err(Error::shape("[N, C, T_s]", format!("{:?}", trials.shape())));
    }
    let (n, c, t) = (trials.shape()[0], trials.shape()[1], trials.shape()[2]);
    if n == 0 {
        return Err(Error::Empty("no trials for covariance".into()));
    }
    if !trials.all_finite() {
        return Err(Error::NonFinite("trial data".into()));
    }
    let mut acc = vec![T::zero(); c * c];
    for x in trials.data().chunks(c * t) {
        gemm_nt(x, x, &mut acc, c, t, c);
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    // exact symmetry regardless of summation order
    for i in 0..c {
        for j in i..c {
            let v = (acc[i * c + j] + acc[j * c + i]) * T::lit(0.5) * inv_n;
            acc[i * c + j] = v;
            acc[j * c + i] = v;
        }
    }
    Tensor::from_vec(&[c, c], acc)
}

/// `cov^{-1/2}` via eigendecomposition with eigenvalues floored at `eps_floor`.
pub fn inverse_sqrt<T: Scalar>(cov: &Tensor<T>, eps_floor: T) -> Result<Tensor<T>> {
    if cov.ndim() != 2 || cov.shape()[0] != cov.shape()[1] {
        return Err(Error::shape("square matrix", format!("{:?}", cov.shape())));
    }
    let asym = max_asymmetry(cov);
    if asym.as_f64() > SYMMETRY_TOL {
        return Err(Error::Asymmetric(asym.as_f64()));
    }
    let eig = symmetric_eigen(cov)?;
    let c = cov.shape()[0];
    let scaled: Vec<T> = eig.values.iter().map(|&l| T::one() / l.max(eps_floor).sqrt()).collect();
    // V diag(λ^{-1/2}) Vᵀ
    let v = eig.vectors.data();
    let mut vs = vec![T::zero(); c * c];
    for i in 0..c {
        for j in 0..c {
            vs[i * c + j] = v[i * c + j] * scaled[j];
        }
    }
    let mut out = vec![T::zero(); c * c];
    gemm_nt(&vs, v, &mut out, c, c, c);
    for i in 0..c {
        for j in (i + 1)..c {
            let m = (out[i * c + j] + out[j * c + i]) * T::lit(0.5);
            out[i * c + j] = m;
            out[j * c + i] = m;
        }
    }
    Tensor::from_vec(&[c, c], out)
}

/// Scale-relative eigenvalue floor for a covariance.
pub fn default_eps_floor<T: Scalar>(cov: &Tensor<T>) -> T {
    let c = cov.shape()[0];
    let trace: T = (0..c).map(|i| cov.at2(i, i)).sum();
    let floor = T::lit(REL_FLOOR) * trace / T::from_usize_lossy(c);
    if floor > T::zero() {
        floor
    } else {
        T::min_positive_value()
    }
}

impl<T: Scalar> WhiteningState<T> {
    pub fn fit(trials: &Tensor<T>) -> Result<Self> {
        let mean_cov = mean_covariance(trials)?;
        let eps_floor = default_eps_floor(&mean_cov);
        let inv_sqrt = inverse_sqrt(&mean_cov, eps_floor)?;
        Ok(WhiteningState { mean_cov, inv_sqrt, eps_floor, n_trials: trials.shape()[0] })
    }

    /// Applies `R̄^{-1/2} X` to every trial of `[N, C, T]`.
    pub fn apply(&self, trials: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, t) = (trials.shape()[0], trials.shape()[1], trials.shape()[2]);
        if c != self.inv_sqrt.shape()[0] {
            return Err(Error::shape(format!("{} channels", self.inv_sqrt.shape()[0]), c));
        }
        let mut out = vec![T::zero(); n * c * t];
        for (x, o) in trials.data().chunks(c * t).zip(out.chunks_mut(c * t)) {
            gemm(self.inv_sqrt.data(), x, o, c, c, t);
        }
        Tensor::from_vec(trials.shape(), out)
    }
}

/// Aligns the trials of a single subject.
pub fn euclidean_align<T: Scalar>(trials: &TrialSet<T>) -> Result<(TrialSet<T>, WhiteningState<T>)> {
    let subjects = trials.subjects();
    if subjects.len() > 1 {
        return Err(Error::MixedSubjects(subjects));
    }
    let state = WhiteningState::fit(&trials.data)?;
    let aligned = trials.with_data(state.apply(&trials.data)?)?;
    Ok((aligned, state))
}

/// Aligns every subject separately; output keeps the input trial order.
pub fn align_per_subject<T: Scalar>(
    trials: &TrialSet<T>,
    reference: ReferenceTrials,
) -> Result<(TrialSet<T>, Vec<(String, WhiteningState<T>)>)> {
    let mut out = trials.data.clone();
    let stride = trials.n_channels() * trials.n_samples();
    let mut states = Vec::new();
    for sid in trials.subjects() {
        let mut idx = trials.indices_of(&sid);
        idx.sort_by_key(|&i| trials.chronological_index[i]);
        let ref_idx: &[usize] = match reference {
            ReferenceTrials::All => &idx,
            ReferenceTrials::CausalPrefix(n) => &idx[..n.clamp(1, idx.len())],
        };
        let state = WhiteningState::fit(&trials.data.select_rows(ref_idx))?;
        let aligned = state.apply(&trials.data.select_rows(&idx))?;
        for (k, &i) in idx.iter().enumerate() {
            out.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(&aligned.data()[k * stride..(k + 1) * stride]);
        }
        states.push((sid, state));
    }
    Ok((trials.with_data(out)?, states))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_trial_gives_identity_covariance() {
        let x = Tensor::<f64>::eye(4).reshape(&[1, 4, 4]).unwrap();
        let r = mean_covariance(&x).unwrap();
        assert_eq!(r, Tensor::eye(4));
    }

    #[test]
    fn analytic_inverse_sqrt() {
        let cov = Tensor::<f64>::from_vec(&[2, 2], vec![4.0, 0.0, 0.0, 9.0]).unwrap();
        let m = inverse_sqrt(&cov, 1e-12).unwrap();
        assert!((m.at2(0, 0) - 0.5).abs() < 1e-14);
        assert!((m.at2(1, 1) - 1.0 / 3.0).abs() < 1e-14);
        assert!(m.at2(0, 1).abs() < 1e-14);
        let eye = inverse_sqrt(&Tensor::<f64>::eye(3), 1e-12).unwrap();
        assert!(eye.max_abs_diff(&Tensor::eye(3)) < 1e-15);
    }

    #[test]
    fn asymmetric_rejected() {
        let cov = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(inverse_sqrt(&cov, 1e-12), Err(Error::Asymmetric(_))));
    }

    #[test]
    fn empty_rejected() {
        let x = Tensor::<f64>::zeros(&[0, 3, 5]);
        assert!(matches!(mean_covariance(&x), Err(Error::Empty(_))));
    }

    #[test]
    fn rank_deficient_stays_finite() {
        // all channels identical: rank one
        let x = Tensor::<f64>::from_fn(&[3, 3, 10], |i| ((i % 10) as f64).sin());
        let st = WhiteningState::fit(&x).unwrap();
        assert!(st.inv_sqrt.all_finite());
    }
}
