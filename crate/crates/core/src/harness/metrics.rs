//! Rank-based AUC and per-subject averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Area under the ROC curve via the Mann–Whitney statistic with midranks,
/// so tied scores count one half. `labels` are 0/1.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(labels.len(), scores.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(format!("{n_pos} positive, {n_neg} negative")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC of one subject's test trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectAuc {
    pub subject_id: String,
    pub auc: f64,
    pub n_trials: usize,
}

/// Per-subject AUCs; subjects whose test trials hold one class only are
/// skipped with a warning.
pub fn per_subject_auc(scores: &[f64], labels: &[u8], subjects: &[String]) -> Result<Vec<SubjectAuc>> {
    if scores.len() != subjects.len() {
        return Err(Error::shape(subjects.len(), scores.len()));
    }
    let mut order: Vec<&String> = Vec::new();
    for s in subjects {
        if !order.contains(&s) {
            order.push(s);
        }
    }
    let mut out = Vec::new();
    for sid in order {
        let idx: Vec<usize> = (0..subjects.len()).filter(|&i| &subjects[i] == sid).collect();
        let sc: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let lb: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        match auc(&sc, &lb) {
            Ok(a) => out.push(SubjectAuc { subject_id: sid.clone(), auc: a, n_trials: idx.len() }),
            Err(Error::SingleClass(msg)) => log::warn!("subject {sid} skipped for AUC: {msg}"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Unweighted mean over subjects.
pub fn mean_auc(per_subject: &[SubjectAuc]) -> Result<f64> {
    if per_subject.is_empty() {
        return Err(Error::Empty("no subject with both classes in the test set".into()));
    }
    Ok(per_subject.iter().map(|s| s.auc).sum::<f64>() / per_subject.len() as f64)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    // offsets from the first value keep identical inputs exact
    let base = values.first().copied().unwrap_or(0.0);
    let mean = base + values.iter().map(|v| v - base).sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Percent-scaled `mean$_{\pm std}$` cell, e.g. `68.43$_{\pm1.0}$`.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{:.2}$_{{\\pm{:.1}}}$", 100.0 * mean, 100.0 * std)
}
