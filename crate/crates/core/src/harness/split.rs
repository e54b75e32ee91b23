//! Chronological labeled/test splits and label-access accounting.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which target subjects contribute labeled trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabeledSubjects {
    /// The first l% of every subject.
    #[default]
    All,
    /// The first l% of the first subject only; every other subject is test.
    One,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub subject_id: String,
    /// Indices into the target trial set.
    pub labeled: Vec<usize>,
    pub test: Vec<usize>,
    /// Trials left out of both sets (boundary trials).
    pub excluded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub label_fraction_pct: f64,
    pub subjects: Vec<SubjectSplit>,
}

impl SplitSpec {
    pub fn labeled(&self) -> Vec<usize> {
        self.subjects.iter().flat_map(|s| s.labeled.iter().copied()).collect()
    }

    pub fn test(&self) -> Vec<usize> {
        self.subjects.iter().flat_map(|s| s.test.iter().copied()).collect()
    }

    /// Every trial that is not labeled, test trials included. Their data
    /// (never their labels) may be used for unsupervised terms.
    pub fn unlabeled(&self) -> Vec<usize> {
        self.subjects.iter().flat_map(|s| s.test.iter().chain(&s.excluded).copied()).collect()
    }
}

/// Per subject and per class, the chronologically first `⌊l% · n_class⌋`
/// trials are labeled; the rest are test.
pub fn split_semi_supervised<T: Scalar>(
    target: &TrialSet<T>,
    label_fraction_pct: f64,
    labeled_subjects: LabeledSubjects,
    exclude_boundary: bool,
) -> Result<SplitSpec> {
    if !(0.0..=100.0).contains(&label_fraction_pct) {
        return Err(Error::InvalidArgument(format!("label fraction {label_fraction_pct}% outside [0, 100]")));
    }
    let mut subjects = Vec::new();
    for (k, sid) in target.subjects().into_iter().enumerate() {
        let frac = match labeled_subjects {
            LabeledSubjects::One if k > 0 => 0.0,
            _ => label_fraction_pct,
        };
        let mut labeled = Vec::new();
        let mut test = Vec::new();
        let mut excluded = Vec::new();
        let mut idx = target.indices_of(&sid);
        idx.sort_by_key(|&i| target.chronological_index[i]);
        for class in [0u8, 1] {
            let members: Vec<usize> = idx.iter().copied().filter(|&i| target.labels[i] == class).collect();
            if members.is_empty() {
                log::warn!("subject {sid} has no trials of class {class}; it contributes no labeled trials of that class");
                continue;
            }
            // the small epsilon keeps e.g. 20% of 100 at exactly 20
            let n_lab = ((frac / 100.0) * members.len() as f64 + 1e-9).floor() as usize;
            labeled.extend_from_slice(&members[..n_lab]);
            for &i in &members[n_lab..] {
                if exclude_boundary && target.boundary[i] {
                    excluded.push(i);
                } else {
                    test.push(i);
                }
            }
        }
        labeled.sort_unstable();
        test.sort_unstable();
        subjects.push(SubjectSplit { subject_id: sid, labeled, test, excluded });
    }
    Ok(SplitSpec { label_fraction_pct, subjects })
}

/// Counts of label reads made through a [`TrackedLabels`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AccessLog {
    pub labeled_reads: usize,
    pub test_reads: usize,
}

/// Target labels seen by training. Every read is recorded, and reads of
/// trials outside the labeled set are counted as protocol violations.
#[derive(Debug)]
pub struct TrackedLabels {
    labels: Vec<u8>,
    labeled: Vec<bool>,
    labeled_reads: Cell<usize>,
    test_reads: Cell<usize>,
}

impl TrackedLabels {
    pub fn new<T: Scalar>(target: &TrialSet<T>, split: &SplitSpec) -> Self {
        let mut labeled = vec![false; target.n_trials()];
        for i in split.labeled() {
            labeled[i] = true;
        }
        TrackedLabels {
            labels: target.labels.clone(),
            labeled,
            labeled_reads: Cell::new(0),
            test_reads: Cell::new(0),
        }
    }

    pub fn get(&self, i: usize) -> u8 {
        let c = if self.labeled[i] { &self.labeled_reads } else { &self.test_reads };
        c.set(c.get() + 1);
        self.labels[i]
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.labeled[i]
    }

    pub fn log(&self) -> AccessLog {
        AccessLog { labeled_reads: self.labeled_reads.get(), test_reads: self.test_reads.get() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Modality, Species};
    use crate::tensor::Tensor;

    fn subject(n_pos: usize, n_neg: usize) -> TrialSet<f32> {
        let n = n_pos + n_neg;
        TrialSet {
            data: Tensor::zeros(&[n, 1, 2]),
            labels: (0..n).map(|i| u8::from(i % 5 == 0 && i / 5 < n_pos)).collect(),
            subject_ids: vec!["s".into(); n],
            chronological_index: (0..n as u64).collect(),
            boundary: vec![false; n],
            sampling_rate_hz: 1.0,
            species: Species::Human,
            modality: Modality::Scalp,
            channel_names: vec![],
        }
    }

    #[test]
    fn twenty_percent_per_class() {
        let t = subject(100, 400);
        assert_eq!(t.labels.iter().filter(|&&y| y == 1).count(), 100);
        let s = split_semi_supervised(&t, 20.0, LabeledSubjects::All, true).unwrap();
        let lab = s.labeled();
        assert_eq!(lab.iter().filter(|&&i| t.labels[i] == 1).count(), 20);
        assert_eq!(lab.iter().filter(|&&i| t.labels[i] == 0).count(), 80);
        assert_eq!(s.test().len(), 400);
        let z = split_semi_supervised(&t, 0.0, LabeledSubjects::All, true).unwrap();
        assert!(z.labeled().is_empty());
    }

    #[test]
    fn tracker_counts_test_reads() {
        let t = subject(10, 40);
        let s = split_semi_supervised(&t, 10.0, LabeledSubjects::All, true).unwrap();
        let tr = TrackedLabels::new(&t, &s);
        for i in s.labeled() {
            tr.get(i);
        }
        assert_eq!(tr.log(), AccessLog { labeled_reads: 5, test_reads: 0 });
        tr.get(s.test()[0]);
        assert_eq!(tr.log().test_reads, 1);
    }
}
