mod common;

use common::{auc_all_pairs, rng, trial_set};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use xsa_core::data::synth::{synth_generate, SynthConfig};
use xsa_core::data::TrialSet;
use xsa_core::harness::metrics::{auc, format_cell, mean_std, per_subject_auc};
use xsa_core::harness::scenario::{run_experiment, run_scenario, ExperimentConfig, Scenario};
use xsa_core::harness::split::{split_semi_supervised, LabeledSubjects, TrackedLabels};
use xsa_core::harness::train::{train, Method, OptimizerConfig, TrainConfig, TrainData, TrainedModel};
use xsa_core::losses::{KernelSpec, LossWeights};
use xsa_core::Tensor;

fn labels_only(labels: Vec<u8>, subjects: Vec<String>) -> TrialSet<f64> {
    let n = labels.len();
    trial_set(Tensor::zeros(&[n, 1, 2]), labels, subjects)
}

fn small_synth(gap: f64) -> (TrialSet<f64>, TrialSet<f64>) {
    let cfg = SynthConfig { n_subjects: 2, trials_per_subject: 40, class_gap: gap, ..Default::default() };
    synth_generate(&cfg).unwrap()
}

fn quick(cfg: ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig { optimizer: OptimizerConfig { lr: 3e-3, batch: 16, epochs: 2 }, seeds: vec![0], ..cfg }
}

#[test]
fn twenty_percent_of_each_class() {
    // 100 seizure trials then 400 non-seizure trials, one subject
    let labels: Vec<u8> = (0..500).map(|i| u8::from(i < 100)).collect();
    let ts = labels_only(labels, vec!["s".into(); 500]);
    let split = split_semi_supervised(&ts, 20.0, LabeledSubjects::All, false).unwrap();
    let lab = split.labeled();
    assert_eq!(lab.iter().filter(|&&i| ts.labels[i] == 1).count(), 20);
    assert_eq!(lab.iter().filter(|&&i| ts.labels[i] == 0).count(), 80);
    assert_eq!(split.test().len(), 400);

    let none = split_semi_supervised(&ts, 0.0, LabeledSubjects::All, false).unwrap();
    assert!(none.labeled().is_empty());
    assert_eq!(none.test().len(), 500);
    assert!(split_semi_supervised(&ts, 101.0, LabeledSubjects::All, false).is_err());
}

#[test]
fn missing_class_contributes_nothing() {
    let ts = labels_only(vec![0; 10], vec!["s".into(); 10]);
    let split = split_semi_supervised(&ts, 50.0, LabeledSubjects::All, false).unwrap();
    assert_eq!(split.labeled().len(), 5);
    assert_eq!(split.test().len(), 5);
}

#[test]
fn one_labeled_subject_leaves_the_rest_for_test() {
    let subjects: Vec<String> = (0..40).map(|i| format!("s{}", i / 20)).collect();
    let ts = labels_only((0..40).map(|i| (i % 2) as u8).collect(), subjects);
    let split = split_semi_supervised(&ts, 20.0, LabeledSubjects::One, false).unwrap();
    assert_eq!(split.subjects[0].labeled.len(), 4);
    assert!(split.subjects[1].labeled.is_empty());
    assert_eq!(split.subjects[1].test.len(), 20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Compares every labeled trial against every test trial of the same
    /// subject and class on shuffled input.
    #[test]
    fn labeled_trials_precede_test_trials(seed in 0u64..10_000, pct in 0.0f64..=100.0, n in 4usize..60) {
        let mut r = rng(seed);
        let mut rows: Vec<(String, u64, u8)> = Vec::new();
        for s in 0..3 {
            for k in 0..n as u64 {
                rows.push((format!("s{s}"), k, u8::from(r.random_bool(0.3))));
            }
        }
        rows.shuffle(&mut r);
        let mut ts = labels_only(rows.iter().map(|r| r.2).collect(), rows.iter().map(|r| r.0.clone()).collect());
        ts.chronological_index = rows.iter().map(|r| r.1).collect();

        let split = split_semi_supervised(&ts, pct, LabeledSubjects::All, false).unwrap();
        for sub in &split.subjects {
            let mut all: Vec<usize> = sub.labeled.iter().chain(&sub.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, ts.indices_of(&sub.subject_id));
            for &a in &sub.labeled {
                for &b in &sub.test {
                    if ts.labels[a] == ts.labels[b] {
                        prop_assert!(ts.chronological_index[a] < ts.chronological_index[b]);
                    }
                }
            }
            for class in [0u8, 1] {
                let n_class = sub.labeled.iter().chain(&sub.test).filter(|&&i| ts.labels[i] == class).count();
                let n_lab = sub.labeled.iter().filter(|&&i| ts.labels[i] == class).count();
                prop_assert_eq!(n_lab, ((pct / 100.0) * n_class as f64 + 1e-9).floor() as usize);
            }
        }
    }
}

#[test]
fn boundary_trials_are_left_out_of_test() {
    let mut ts = labels_only((0..20).map(|i| u8::from(i >= 10)).collect(), vec!["s".into(); 20]);
    ts.boundary[10] = true;
    let split = split_semi_supervised(&ts, 0.0, LabeledSubjects::All, true).unwrap();
    assert_eq!(split.subjects[0].excluded, vec![10]);
    assert!(!split.test().contains(&10));
    assert!(split.unlabeled().contains(&10));
}

#[test]
fn auc_hand_cases() {
    assert_eq!(auc(&[0.0, 1.0, 0.0, 1.0], &[0, 1, 0, 1]).unwrap(), 1.0);
    assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    assert_eq!(auc(&[1.0, 0.0], &[0, 1]).unwrap(), 0.0);
    assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
}

#[test]
fn auc_matches_all_pairs_with_ties() {
    let mut r = rng(7);
    for _ in 0..100 {
        let labels: Vec<u8> = (0..30).map(|i| if i < 2 { i as u8 } else { u8::from(r.random_bool(0.4)) }).collect();
        // coarse grid so ties are common
        let scores: Vec<f64> = (0..30).map(|_| r.random_range(0..8) as f64 / 8.0).collect();
        let got = auc(&scores, &labels).unwrap();
        assert!((got - auc_all_pairs(&scores, &labels)).abs() < 1e-12);
    }
}

#[test]
fn per_subject_auc_skips_single_class_subjects() {
    let subjects: Vec<String> = ["a", "a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
    let out = per_subject_auc(&[0.1, 0.9, 0.2, 0.5, 0.6], &[0, 1, 0, 1, 1], &subjects).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].subject_id, "a");
    assert_eq!(out[0].auc, 1.0);
}

#[test]
fn cells_and_spread() {
    assert_eq!(mean_std(&[0.7, 0.7, 0.7]), (0.7, 0.0));
    assert_eq!(format_cell(0.6843, 0.01), "68.43$_{\\pm1.0}$");
    let (m, s) = mean_std(&[0.6, 0.8]);
    assert!((m - 0.7).abs() < 1e-12 && (s - 0.02f64.sqrt()).abs() < 1e-12);
}

#[test]
fn identical_seeds_have_no_spread() {
    let (s, t) = small_synth(3.0);
    let cfg = ExperimentConfig { seeds: vec![4, 4, 4], ..quick(ExperimentConfig::new(Scenario::SemiSupervised, 10.0, Method::Comb)) };
    let (report, _) = run_experiment(&cfg, Some(("s", &s)), ("t", &t)).unwrap();
    assert_eq!(report.seeds.len(), 3);
    assert_eq!(report.std, 0.0);
    assert_eq!(report.cell, format_cell(report.mean, 0.0));
}

#[test]
fn unsupervised_never_reads_target_labels_and_reports_every_subject() {
    let (s, t) = small_synth(3.0);
    let cfg = quick(ExperimentConfig::new(Scenario::Unsupervised, 0.0, Method::Msa));
    let (report, _) = run_experiment(&cfg, Some(("s", &s)), ("t", &t)).unwrap();
    let r = &report.seeds[0];
    assert_eq!(r.label_access.test_reads, 0);
    assert_eq!(r.label_access.labeled_reads, 0);
    assert_eq!(r.per_subject.len(), 2);
    assert!(r.per_subject.iter().all(|a| (0.0..=1.0).contains(&a.auc)));
    assert_eq!(report.manifest.n_labeled, 0);
}

#[test]
fn semi_supervised_reads_only_labeled_trials() {
    let (s, t) = small_synth(3.0);
    for method in [Method::Within, Method::Comb, Method::Msa] {
        let scenario = if method == Method::Within { Scenario::Within } else { Scenario::SemiSupervised };
        let cfg = quick(ExperimentConfig::new(scenario, 20.0, method));
        let (report, _) = run_experiment(&cfg, Some(("s", &s)), ("t", &t)).unwrap();
        let log = report.seeds[0].label_access;
        assert_eq!(log.test_reads, 0, "{}", method.name());
        assert!(log.labeled_reads > 0);
    }
}

#[test]
fn tracker_counts_reads_by_split() {
    let ts = labels_only((0..10).map(|i| (i % 2) as u8).collect(), vec!["s".into(); 10]);
    let split = split_semi_supervised(&ts, 40.0, LabeledSubjects::All, false).unwrap();
    let tracker = TrackedLabels::new(&ts, &split);
    for &i in &split.labeled() {
        tracker.get(i);
    }
    assert_eq!(tracker.log().test_reads, 0);
    tracker.get(split.test()[0]);
    assert_eq!(tracker.log().test_reads, 1);
    assert_eq!(tracker.log().labeled_reads, split.labeled().len());
}

fn train_msa(weights: LossWeights, kernel: KernelSpec, epochs: usize, gap: f64) -> (TrainedModel<f64>, Vec<f64>, bool) {
    let (s, t) = small_synth(gap);
    let split = split_semi_supervised(&t, 20.0, LabeledSubjects::All, false).unwrap();
    let tracker = TrackedLabels::new(&t, &split);
    let labeled = split.labeled();
    let data = TrainData {
        source: Some((&s.data, s.labels.as_slice())),
        target_x: &t.data,
        target_labels: &tracker,
        labeled: &labeled,
        sampling_rate_hz: t.sampling_rate_hz,
    };
    let spec = Method::Msa.spec(weights, kernel);
    let out = train(&spec, &data, &TrainConfig::new(OptimizerConfig { lr: 3e-3, batch: 16, epochs }, 0)).unwrap();
    let plain = out.history.iter().all(|h| h.kd.is_none() && h.da.is_none() && h.total == h.ce);
    (out.model, out.history.iter().map(|h| h.ce).collect(), plain)
}

#[test]
fn zero_weights_reduce_to_cross_entropy() {
    let off = |tau| LossWeights { lambda_kd: 0.0, beta_da: 0.0, tau };
    let (a, _, plain) = train_msa(off(2.0), KernelSpec::default(), 2, 3.0);
    assert!(plain);
    // temperature and kernel only enter through the switched-off terms
    let (b, _, _) = train_msa(off(7.0), KernelSpec::fixed(vec![3.0]), 2, 3.0);
    assert_eq!(a.eegnet.params.checksum(), b.eegnet.params.checksum());
    assert_eq!(a.resize.as_ref().unwrap().params.checksum(), b.resize.as_ref().unwrap().params.checksum());

    let (_, _, plain) = train_msa(LossWeights::default(), KernelSpec::default(), 1, 3.0);
    assert!(!plain);
}

#[test]
fn training_lowers_cross_entropy() {
    let (_, ce, _) = train_msa(LossWeights::default(), KernelSpec::default(), 20, 4.0);
    assert!(ce.iter().all(|v| v.is_finite()));
    assert!(ce.last().unwrap() < ce.first().unwrap(), "{ce:?}");
}

#[test]
fn separate_teacher_only_without_sharing() {
    let (s, t) = small_synth(3.0);
    let shared = quick(ExperimentConfig::new(Scenario::SemiSupervised, 10.0, Method::Msa));
    let (_, runs) = run_experiment(&shared, Some(("s", &s)), ("t", &t)).unwrap();
    assert!(runs[0].model.teacher.is_none());
    let split = ExperimentConfig { share_weights: false, ..shared };
    let (_, runs) = run_experiment(&split, Some(("s", &s)), ("t", &t)).unwrap();
    assert!(runs[0].model.teacher.is_some());
}

#[test]
fn checkpoint_round_trip_keeps_scores() {
    let (s, t) = small_synth(3.0);
    let cfg = quick(ExperimentConfig::new(Scenario::SemiSupervised, 10.0, Method::Msa));
    let (_, runs) = run_experiment(&cfg, Some(("s", &s)), ("t", &t)).unwrap();
    let model = &runs[0].model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.xsackpt");
    model.save(&path).unwrap();
    let back = TrainedModel::<f64>::load(&path).unwrap();
    assert_eq!(model.predict_scores(&t.data).unwrap(), back.predict_scores(&t.data).unwrap());
}

#[test]
fn missing_dataset_is_named() {
    let mut cfg = ExperimentConfig::new(Scenario::Within, 10.0, Method::Within);
    cfg.target = "/nonexistent/target_ds".into();
    let err = run_scenario(&cfg, None).unwrap_err().to_string();
    assert!(err.contains("/nonexistent/target_ds"), "{err}");
}

#[test]
fn source_methods_need_a_source() {
    let (_, t) = small_synth(3.0);
    let cfg = quick(ExperimentConfig::new(Scenario::SemiSupervised, 10.0, Method::Comb));
    assert!(run_experiment::<f64>(&cfg, None, ("t", &t)).is_err());
}
