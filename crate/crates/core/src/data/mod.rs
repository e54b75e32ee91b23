//! Trial containers, ingestion and preprocessing.

pub mod filter;
pub mod io;
pub mod montage;
pub mod preprocess;
pub mod resample;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Species {
    Canine,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Intracranial,
    Scalp,
}

/// What label 1 means for a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    /// 1 = ictal (seizure), 0 = interictal.
    #[default]
    IctalInterictal,
    /// 1 = preictal, 0 = interictal.
    PreictalInterictal,
}

/// A batch of fixed-length multichannel trials, `data` shaped `[N, C, T_s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSet<T> {
    pub data: Tensor<T>,
    /// 0 = non-seizure class, 1 = seizure (or preictal) class.
    pub labels: Vec<u8>,
    pub subject_ids: Vec<String>,
    /// Acquisition order within each subject.
    pub chronological_index: Vec<u64>,
    /// Trial straddles an annotated interval boundary (labelled 0).
    pub boundary: Vec<bool>,
    pub sampling_rate_hz: f64,
    pub species: Species,
    pub modality: Modality,
    pub channel_names: Vec<String>,
}

impl<T: Scalar> TrialSet<T> {
    pub fn n_trials(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_samples(&self) -> usize {
        self.data.shape()[2]
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        if self.data.ndim() != 3 {
            return Err(Error::shape("[N, C, T_s]", format!("{:?}", self.data.shape())));
        }
        let n = self.n_trials();
        for (name, len) in [
            ("labels", self.labels.len()),
            ("subject_ids", self.subject_ids.len()),
            ("chronological_index", self.chronological_index.len()),
            ("boundary", self.boundary.len()),
        ] {
            if len != n {
                return Err(Error::shape(format!("{n} {name}"), len));
            }
        }
        if !self.channel_names.is_empty() && self.channel_names.len() != self.n_channels() {
            return Err(Error::shape(format!("{} channel names", self.n_channels()), self.channel_names.len()));
        }
        if !(self.sampling_rate_hz > 0.0) {
            return Err(Error::Config(format!("sampling rate {} must be positive", self.sampling_rate_hz)));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {{0, 1}}")));
        }
        if !self.data.all_finite() {
            return Err(Error::NonFinite("trial data".into()));
        }
        for sid in self.subjects() {
            let idx = self.indices_of(&sid);
            for w in idx.windows(2) {
                if self.chronological_index[w[1]] <= self.chronological_index[w[0]] {
                    return Err(Error::InvalidArgument(format!(
                        "chronological_index not strictly increasing for subject {sid}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for s in &self.subject_ids {
            if !seen.iter().any(|x| x == s) {
                seen.push(s.clone());
            }
        }
        seen
    }

    pub fn indices_of(&self, subject: &str) -> Vec<usize> {
        self.subject_ids.iter().enumerate().filter(|(_, s)| *s == subject).map(|(i, _)| i).collect()
    }

    /// Samples of trial `i`, channel-major.
    pub fn trial(&self, i: usize) -> &[T] {
        let stride = self.n_channels() * self.n_samples();
        &self.data.data()[i * stride..(i + 1) * stride]
    }

    /// Subset of trials, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        TrialSet {
            data: self.data.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            subject_ids: idx.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            chronological_index: idx.iter().map(|&i| self.chronological_index[i]).collect(),
            boundary: idx.iter().map(|&i| self.boundary[i]).collect(),
            sampling_rate_hz: self.sampling_rate_hz,
            species: self.species,
            modality: self.modality,
            channel_names: self.channel_names.clone(),
        }
    }

    /// Same metadata, new data tensor (trial count must match).
    pub fn with_data(&self, data: Tensor<T>) -> Result<Self> {
        if data.ndim() != 3 || data.shape()[0] != self.n_trials() {
            return Err(Error::shape(format!("[{}, _, _]", self.n_trials()), format!("{:?}", data.shape())));
        }
        let mut out = self.clone();
        if data.shape()[1] != self.n_channels() {
            out.channel_names.clear();
        }
        out.data = data;
        Ok(out)
    }

    /// Concatenates trial sets that share channel count and trial length.
    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Empty("no trial sets to concatenate".into()))?;
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|p| &p.data).collect();
        let data = Tensor::cat_rows(&tensors)?;
        let mut out = TrialSet {
            data,
            labels: vec![],
            subject_ids: vec![],
            chronological_index: vec![],
            boundary: vec![],
            sampling_rate_hz: first.sampling_rate_hz,
            species: first.species,
            modality: first.modality,
            channel_names: first.channel_names.clone(),
        };
        for p in parts {
            out.labels.extend_from_slice(&p.labels);
            out.subject_ids.extend(p.subject_ids.iter().cloned());
            out.chronological_index.extend_from_slice(&p.chronological_index);
            out.boundary.extend_from_slice(&p.boundary);
        }
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> TrialSet<U> {
        TrialSet {
            data: self.data.cast(),
            labels: self.labels.clone(),
            subject_ids: self.subject_ids.clone(),
            chronological_index: self.chronological_index.clone(),
            boundary: self.boundary.clone(),
            sampling_rate_hz: self.sampling_rate_hz,
            species: self.species,
            modality: self.modality,
            channel_names: self.channel_names.clone(),
        }
    }
}

/// One continuous multichannel recording, `data` shaped `[C, samples]`.
#[derive(Debug, Clone)]
pub struct ContinuousRecording<T> {
    pub subject_id: String,
    pub data: Tensor<T>,
    pub sampling_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub species: Species,
    pub modality: Modality,
}

impl<T: Scalar> ContinuousRecording<T> {
    pub fn n_channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_samples(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sampling_rate_hz
    }
}

/// Annotated interval `[start_s, end_s]` in seconds from recording start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
}

/// Preprocessing parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Notch centre; `None` disables the notch.
    pub notch_hz: Option<f64>,
    pub bandpass_lo_hz: f64,
    pub bandpass_hi_hz: f64,
    pub window_s: f64,
    pub target_rate_hz: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            notch_hz: Some(50.0),
            bandpass_lo_hz: 0.5,
            bandpass_hi_hz: 50.0,
            window_s: 1.0,
            target_rate_hz: 400.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_rate_hz > 0.0) {
            return Err(Error::Config(format!("target rate {} must be positive", self.target_rate_hz)));
        }
        if !(self.bandpass_lo_hz > 0.0 && self.bandpass_lo_hz < self.bandpass_hi_hz) {
            return Err(Error::Config(format!(
                "bandpass edges must satisfy 0 < lo < hi, got {} / {}",
                self.bandpass_lo_hz, self.bandpass_hi_hz
            )));
        }
        if self.bandpass_hi_hz > self.target_rate_hz / 2.0 {
            return Err(Error::Config(format!(
                "bandpass high edge {} Hz exceeds Nyquist of target rate {} Hz",
                self.bandpass_hi_hz, self.target_rate_hz
            )));
        }
        if !(self.window_s > 0.0) {
            return Err(Error::Config("window_s must be positive".into()));
        }
        let samples = self.window_s * self.target_rate_hz;
        if (samples - samples.round()).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "window {} s at {} Hz is not a whole number of samples",
                self.window_s, self.target_rate_hz
            )));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_s * self.target_rate_hz).round() as usize
    }
}
