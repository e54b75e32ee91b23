//! Tab-separated feature tables for external embedding tools.
//!
//! Header: `domain  subject  label  f0 .. f{F-1}`; one row per trial.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::harness::train::{Domain, TrainedModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub domain: String,
    pub subject: String,
    pub label: u8,
    pub features: Vec<f64>,
}

fn domain_tag(d: Domain) -> &'static str {
    match d {
        Domain::Source => "source",
        Domain::Target => "target",
    }
}

/// Extracts features for every trial of each `(domain, trials)` part.
pub fn feature_rows<T: Scalar>(model: &TrainedModel<T>, parts: &[(Domain, &TrialSet<T>)]) -> Result<Vec<FeatureRow>> {
    let mut rows = Vec::new();
    for (domain, trials) in parts {
        let feats = model.extract_features_for(*domain, &trials.data)?;
        let f = feats.shape()[1];
        for (i, chunk) in feats.data().chunks(f).enumerate() {
            rows.push(FeatureRow {
                domain: domain_tag(*domain).into(),
                subject: trials.subject_ids[i].clone(),
                label: trials.labels[i],
                features: chunk.iter().map(|v| v.as_f64()).collect(),
            });
        }
    }
    Ok(rows)
}

/// Renders rows with values printed at `T` precision, so reading them back
/// as `T` is exact.
pub fn render_feature_table<T: Scalar>(rows: &[FeatureRow]) -> String {
    let f = rows.first().map_or(0, |r| r.features.len());
    let mut out = String::from("domain\tsubject\tlabel");
    for j in 0..f {
        write!(out, "\tf{j}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{}\t{}\t{}", r.domain, r.subject, r.label).unwrap();
        for &v in &r.features {
            if T::dtype_tag() == 0 {
                write!(out, "\t{}", v as f32).unwrap();
            } else {
                write!(out, "\t{v}").unwrap();
            }
        }
        out.push('\n');
    }
    out
}

pub fn export_features<T: Scalar>(
    model: &TrainedModel<T>,
    parts: &[(Domain, &TrialSet<T>)],
    path: &Path,
) -> Result<usize> {
    let rows = feature_rows(model, parts)?;
    fs::write(path, render_feature_table::<T>(&rows)).map_err(|e| Error::io(path, e))?;
    Ok(rows.len())
}

pub fn parse_feature_table(text: &str) -> Result<Vec<FeatureRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty feature table".into()))?;
    let n_cols = header.split('\t').count();
    if n_cols < 3 {
        return Err(Error::Format("feature table header too short".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != n_cols {
                return Err(Error::Format(format!("row {} has {} columns, expected {n_cols}", i + 1, cols.len())));
            }
            let bad = |what: &str| Error::Format(format!("row {}: bad {what}", i + 1));
            Ok(FeatureRow {
                domain: cols[0].into(),
                subject: cols[1].into(),
                label: cols[2].parse().map_err(|_| bad("label"))?,
                features: cols[3..].iter().map(|c| c.parse().map_err(|_| bad("value"))).collect::<Result<_>>()?,
            })
        })
        .collect()
}

pub fn read_feature_table(path: &Path) -> Result<Vec<FeatureRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_table(&text)
}
