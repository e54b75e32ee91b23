mod common;

use common::{ce_formula, kd_formula, median_bandwidths, mmd2_triple_loop, normal, randn, rng, rows};
use proptest::prelude::*;
use xsa_core::losses::{cross_entropy, kd_loss, mmd2, total_loss, Bandwidths, KernelSpec, LossWeights};
use xsa_core::Tensor;

fn t2(rows: &[[f64; 2]]) -> Tensor<f64> {
    Tensor::from_vec(&[rows.len(), 2], rows.iter().flatten().copied().collect()).unwrap()
}

#[test]
fn confident_correct_logits_cost_nothing() {
    let z = t2(&[[20.0, -20.0], [-20.0, 20.0]]);
    assert!(cross_entropy(&z, &[0, 1]).unwrap() < 1e-6);
    let eq = t2(&[[0.3, 0.3]]);
    assert!((cross_entropy(&eq, &[1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn cross_entropy_matches_row_formula() {
    let mut r = rng(3);
    let z = randn(&mut r, &[40, 2]).scale(3.0);
    let labels: Vec<u8> = (0..40).map(|i| (i * 7 % 3 == 0) as u8).collect();
    let got = cross_entropy(&z, &labels).unwrap();
    assert!((got - ce_formula(&rows(&z), &labels)).abs() < 1e-7);
    assert!(cross_entropy(&Tensor::<f64>::zeros(&[0, 2]), &[]).is_err());
}

#[test]
fn kd_hand_case() {
    let zr = t2(&[[0.0, 0.0]]);
    let zs = t2(&[[0.0, 3f64.ln()]]);
    let got = kd_loss(&zr, &zs, 1.0).unwrap();
    let hand = 0.5 * 2f64.ln() - 0.5 * 1.5f64.ln();
    assert!((got - hand).abs() < 1e-12);
    assert!((got - 0.1438).abs() < 1e-4);
}

#[test]
fn kd_matches_formula_at_each_temperature() {
    let mut r = rng(4);
    let zr = randn(&mut r, &[16, 2]).scale(2.0);
    let zs = randn(&mut r, &[16, 2]).scale(2.0);
    for tau in [1.0, 2.0, 4.0] {
        let got = kd_loss(&zr, &zs, tau).unwrap();
        let oracle = kd_formula(&rows(&zr), &rows(&zs), tau);
        assert!((got - oracle).abs() < 1e-12, "tau {tau}: {got} vs {oracle}");
    }
    assert_eq!(kd_loss(&zr, &zr, 2.0).unwrap(), 0.0);
}

#[test]
fn kd_rejects_bad_input() {
    let z = t2(&[[0.0, 1.0]]);
    assert!(kd_loss(&z, &t2(&[[0.0, f64::NAN]]), 1.0).is_err());
    assert!(kd_loss(&z, &z, 0.0).is_err());
    assert!(kd_loss(&z, &Tensor::zeros(&[2, 2]), 1.0).is_err());
}

fn gaussian_sample(seed: u64, n: usize, f: usize, mean: f64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(&[n, f], |_| mean + normal(&mut r))
}

#[test]
fn mmd_separates_shifted_gaussians() {
    let kernel = KernelSpec::fixed(vec![1.0]);
    let a = gaussian_sample(1, 200, 1, 0.0);
    let b = gaussian_sample(2, 200, 1, 3.0);
    let same = gaussian_sample(3, 200, 1, 0.0);
    let far = mmd2(&a, &b, &kernel).unwrap();
    assert!((far - mmd2_triple_loop(&rows(&a), &rows(&b), &[1.0])).abs() < 1e-10);
    let near = mmd2(&a, &same, &kernel).unwrap();
    assert!(far >= 10.0 * near, "{far} vs {near}");
}

#[test]
fn mmd_default_kernel_matches_oracle() {
    let mut r = rng(9);
    let a = randn(&mut r, &[30, 4]);
    let b = randn(&mut r, &[25, 4]).map(|v| 0.5 * v + 1.0);
    let kernel = KernelSpec::default();
    let Bandwidths::MedianHeuristic { multipliers } = &kernel.bandwidths else { unreachable!() };
    let hs = median_bandwidths(&rows(&a), &rows(&b), multipliers);
    let oracle = mmd2_triple_loop(&rows(&a), &rows(&b), &hs);
    assert!((mmd2(&a, &b, &kernel).unwrap() - oracle).abs() < 1e-10);
}

#[test]
fn mmd_orders_mean_gaps() {
    let kernel = KernelSpec::default();
    for seed in 0..3 {
        let base = gaussian_sample(100 + seed, 100, 2, 0.0);
        let vals: Vec<f64> = [3.0, 1.0, 0.0]
            .iter()
            .map(|&gap| mmd2(&base, &gaussian_sample(200 + seed, 100, 2, gap), &kernel).unwrap())
            .collect();
        assert!(vals[0] > vals[1] && vals[1] > vals[2], "seed {seed}: {vals:?}");
    }
}

#[test]
fn mmd_rejects_dimension_mismatch() {
    let k = KernelSpec::default();
    assert!(mmd2(&Tensor::<f64>::zeros(&[3, 2]), &Tensor::zeros(&[3, 3]), &k).is_err());
    assert!(mmd2(&Tensor::<f64>::zeros(&[3, 2]), &Tensor::zeros(&[3, 2]), &KernelSpec::fixed(vec![])).is_err());
}

#[test]
fn total_loss_arithmetic() {
    let w = LossWeights { lambda_kd: 1.0, beta_da: 1.0, tau: 2.0 };
    assert!((total_loss(0.7, 0.1, 0.2, &w) - 1.0f64).abs() < 1e-15);
    let off = LossWeights { lambda_kd: 0.0, beta_da: 0.0, tau: 2.0 };
    assert_eq!(total_loss(0.42, 5.0, 9.0, &off), 0.42f64);
    assert_eq!(LossWeights::default(), w);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kd_is_nonnegative_and_shift_blind(seed in 0u64..10_000, shift in -50.0f64..50.0, tau in 0.1f64..8.0) {
        let mut r = rng(seed);
        let zr = randn(&mut r, &[6, 2]).scale(3.0);
        let zs = randn(&mut r, &[6, 2]).scale(3.0);
        prop_assert!(kd_loss(&zr, &zs, tau).unwrap() >= -1e-12);
        let shifted = zr.map(|v| v + shift);
        prop_assert!(kd_loss(&zr, &shifted, tau).unwrap().abs() < 1e-9);
    }

    #[test]
    fn mmd_is_symmetric_and_nonnegative(seed in 0u64..10_000, na in 2usize..20, nb in 2usize..20, f in 1usize..5) {
        let mut r = rng(seed);
        let a = randn(&mut r, &[na, f]);
        let b = randn(&mut r, &[nb, f]).map(|v| v + 0.5);
        let k = KernelSpec::default();
        let ab = mmd2(&a, &b, &k).unwrap();
        let ba = mmd2(&b, &a, &k).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab >= -1e-12);
        prop_assert!(mmd2(&a, &a, &k).unwrap().abs() < 1e-9);
    }

    #[test]
    fn total_loss_is_linear_in_each_weight(ce in 0.0f64..5.0, kd in 0.0f64..5.0, da in 0.0f64..5.0, l in 0.0f64..3.0, b in 0.0f64..3.0) {
        let w = LossWeights { lambda_kd: l, beta_da: b, tau: 2.0 };
        let wl = LossWeights { lambda_kd: l + 1.0, ..w };
        let wb = LossWeights { beta_da: b + 1.0, ..w };
        prop_assert!((total_loss(ce, kd, da, &wl) - total_loss(ce, kd, da, &w) - kd).abs() < 1e-12);
        prop_assert!((total_loss(ce, kd, da, &wb) - total_loss(ce, kd, da, &w) - da).abs() < 1e-12);
    }
}
