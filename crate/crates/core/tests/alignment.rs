mod common;

use common::{covariance_loops, frob_dist_to_identity, mat, matmul_loops, randn, rng, trial_set};
use proptest::prelude::*;
use xsa_core::alignment::{align_per_subject, euclidean_align, inverse_sqrt, mean_covariance, ReferenceTrials};
use xsa_core::data::TrialSet;
use xsa_core::Tensor;

/// Random orthogonal matrix by Gram–Schmidt on a Gaussian matrix.
fn orthogonal(c: usize, seed: u64) -> Vec<Vec<f64>> {
    let g = mat(&randn(&mut rng(seed), &[c, c]));
    let mut q: Vec<Vec<f64>> = Vec::new();
    for row in g {
        let mut v = row.clone();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|a| a / n).collect());
    }
    q
}

fn one_subject(x: Tensor<f64>) -> TrialSet<f64> {
    let n = x.shape()[0];
    trial_set(x, vec![0; n], vec!["s".into(); n])
}

fn stack(trials: &[Vec<Vec<f64>>]) -> Tensor<f64> {
    let (c, t) = (trials[0].len(), trials[0][0].len());
    Tensor::from_vec(&[trials.len(), c, t], trials.iter().flatten().flatten().copied().collect()).unwrap()
}

fn unstack(x: &Tensor<f64>) -> Vec<Vec<Vec<f64>>> {
    let (c, t) = (x.shape()[1], x.shape()[2]);
    x.data().chunks(c * t).map(|tr| tr.chunks(t).map(|r| r.to_vec()).collect()).collect()
}

#[test]
fn covariance_matches_double_loop() {
    let x = randn(&mut rng(1), &[5, 3, 10]);
    let r = mean_covariance(&x).unwrap();
    let oracle = covariance_loops(&x);
    for i in 0..3 {
        for j in 0..3 {
            assert!((r.at2(i, j) - oracle[i][j]).abs() < 1e-10);
        }
    }
    let scaled = mean_covariance(&x.scale(3.0)).unwrap();
    assert!(scaled.max_abs_diff(&r.scale(9.0)) < 1e-10);
    assert!(mean_covariance(&Tensor::<f64>::zeros(&[0, 3, 4])).is_err());
}

#[test]
fn inverse_sqrt_whitens_random_spd() {
    let a = mat(&randn(&mut rng(2), &[6, 6]));
    let at: Vec<Vec<f64>> = (0..6).map(|i| (0..6).map(|j| a[j][i]).collect()).collect();
    let mut cov = matmul_loops(&a, &at);
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] += 0.5;
    }
    let cov_t = Tensor::from_vec(&[6, 6], cov.iter().flatten().copied().collect()).unwrap();
    let m = mat(&inverse_sqrt(&cov_t, 1e-12).unwrap());
    let prod = matmul_loops(&matmul_loops(&m, &cov), &m);
    assert!(frob_dist_to_identity(&prod) < 1e-8);

    let mut asym = cov_t.clone();
    asym.set2(0, 1, asym.at2(0, 1) + 1e-3);
    assert!(inverse_sqrt(&asym, 1e-12).is_err());
}

#[test]
fn already_white_trials_are_a_fixed_point() {
    // orthogonal trials have QQᵀ = I, so their mean covariance is identity
    let trials: Vec<Vec<Vec<f64>>> = (0..4).map(|s| orthogonal(5, 10 + s)).collect();
    let x = stack(&trials);
    let (aligned, state) = euclidean_align(&one_subject(x.clone())).unwrap();
    assert!(aligned.data.max_abs_diff(&x) < 1e-9);
    assert!(state.inv_sqrt.max_abs_diff(&Tensor::eye(5)) < 1e-9);
}

#[test]
fn global_scale_is_absorbed() {
    let x = randn(&mut rng(3), &[20, 4, 30]);
    let (a, _) = euclidean_align(&one_subject(x.clone())).unwrap();
    for c in [1e-3, 0.5, 7.0, 1e3] {
        let (b, _) = euclidean_align(&one_subject(x.scale(c))).unwrap();
        assert!(a.data.max_abs_diff(&b.data) < 1e-7, "c = {c}");
    }
}

#[test]
fn twenty_trials_align_to_identity() {
    let x = randn(&mut rng(4), &[20, 6, 50]).map(|v| v * 3.0 + 1.0);
    let (a, _) = euclidean_align(&one_subject(x)).unwrap();
    assert!(frob_dist_to_identity(&covariance_loops(&a.data)) < 1e-6);
}

#[test]
fn rotated_channels_still_align_to_identity() {
    let x = randn(&mut rng(5), &[15, 5, 40]);
    let q = orthogonal(5, 77);
    let rotated: Vec<Vec<Vec<f64>>> = unstack(&x).iter().map(|tr| matmul_loops(&q, tr)).collect();
    let (a, _) = euclidean_align(&one_subject(stack(&rotated))).unwrap();
    assert!(frob_dist_to_identity(&covariance_loops(&a.data)) < 1e-6);
}

#[test]
fn whitening_state_is_deterministic() {
    let x = randn(&mut rng(6), &[12, 4, 20]);
    let (a, sa) = euclidean_align(&one_subject(x.clone())).unwrap();
    let (b, sb) = euclidean_align(&one_subject(x)).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(a.data.data(), b.data.data());
}

#[test]
fn mixed_subjects_are_rejected() {
    let x = randn(&mut rng(7), &[4, 3, 10]);
    let set = trial_set(x, vec![0; 4], vec!["a".into(), "a".into(), "b".into(), "b".into()]);
    assert!(euclidean_align(&set).is_err());
    // the per-subject entry point handles the same set
    let (aligned, states) = align_per_subject(&set, ReferenceTrials::All).unwrap();
    assert_eq!(states.len(), 2);
    for s in ["a", "b"] {
        let part = aligned.select(&aligned.indices_of(s));
        assert!(frob_dist_to_identity(&covariance_loops(&part.data)) < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_subject_ends_at_identity(seed in 0u64..10_000, c in 2usize..9, extra in 0usize..20, t in 20usize..40) {
        let n = c + extra;
        let mut r = rng(seed);
        let mix = randn(&mut r, &[c, c]);
        let raw = randn(&mut r, &[n, c, t]);
        let mixed: Vec<Vec<Vec<f64>>> = unstack(&raw).iter().map(|tr| matmul_loops(&mat(&mix), tr)).collect();
        let (a, _) = euclidean_align(&one_subject(stack(&mixed))).unwrap();
        prop_assert!(frob_dist_to_identity(&covariance_loops(&a.data)) < 1e-6);
    }
}
