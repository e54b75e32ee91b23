//! On-disk layouts.
//!
//! A dataset directory holds:
//!
//! * `manifest.json`, a [`DatasetManifest`] with dataset-level metadata and
//!   one entry per subject;
//! * `<subject>.f32` with the subject's trials: three little-endian `u32`
//!   (N, C, T_s) followed by N·C·T_s little-endian `f32` samples;
//! * `<subject>.labels.tsv` with one row per trial with columns `label`,
//!   `chronological_index`, `boundary`.
//!
//! Raw continuous recordings (inputs to preprocessing) use a separate
//! container starting with [`RAW_MAGIC`]; see [`write_raw_recording`].

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ContinuousRecording, Interval, LabelScheme, Modality, Species, TrialSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FORMAT: &str = "xsa-trials";
pub const DATASET_VERSION: u32 = 1;
pub const RAW_MAGIC: &[u8; 8] = b"XSARAW01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub n_trials: usize,
    pub data_file: String,
    pub labels_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub dataset_id: String,
    pub species: Species,
    pub modality: Modality,
    pub label_scheme: LabelScheme,
    pub sampling_rate_hz: f64,
    pub n_channels: usize,
    pub n_samples: usize,
    pub channel_names: Vec<String>,
    pub subjects: Vec<SubjectEntry>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Encodes an `[N, C, T_s]` array with its shape header.
pub fn encode_trial_array<T: Scalar>(data: &Tensor<T>) -> Vec<u8> {
    let s = data.shape();
    let mut out = Vec::with_capacity(12 + 4 * data.len());
    for &d in s {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out
}

pub fn decode_trial_array<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    if bytes.len() < 12 {
        return Err(Error::Format("trial array shorter than its header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let shape = [dim(0), dim(1), dim(2)];
    let n: usize = shape.iter().product();
    if bytes.len() != 12 + 4 * n {
        return Err(Error::Format(format!("trial array header {shape:?} does not match {} bytes", bytes.len())));
    }
    let vals = bytes[12..].chunks_exact(4).map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
    Tensor::from_vec(&shape, vals)
}

/// Writes a trial set into `dir` (created if needed), one file pair per
/// subject, then the manifest.
pub fn write_dataset<T: Scalar>(
    dir: &Path,
    dataset_id: &str,
    label_scheme: LabelScheme,
    trials: &TrialSet<T>,
) -> Result<DatasetManifest> {
    trials.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut subjects = Vec::new();
    let mut used = HashSet::new();
    for sid in trials.subjects() {
        let idx = trials.indices_of(&sid);
        let part = trials.select(&idx);
        let mut stem = sanitize(&sid);
        while !used.insert(stem.clone()) {
            stem.push('_');
        }
        let data_file = format!("{stem}.f32");
        let labels_file = format!("{stem}.labels.tsv");
        write_atomic(&dir.join(&data_file), &encode_trial_array(&part.data))?;
        let mut tsv = String::from("label\tchronological_index\tboundary\n");
        for i in 0..part.n_trials() {
            tsv.push_str(&format!("{}\t{}\t{}\n", part.labels[i], part.chronological_index[i], u8::from(part.boundary[i])));
        }
        write_atomic(&dir.join(&labels_file), tsv.as_bytes())?;
        subjects.push(SubjectEntry { subject_id: sid, n_trials: part.n_trials(), data_file, labels_file });
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        dataset_id: dataset_id.into(),
        species: trials.species,
        modality: trials.modality,
        label_scheme,
        sampling_rate_hz: trials.sampling_rate_hz,
        n_channels: trials.n_channels(),
        n_samples: trials.n_samples(),
        channel_names: trials.channel_names.clone(),
        subjects,
    };
    write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingDataset(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.format != DATASET_FORMAT {
        return Err(Error::Format(format!("{} is not an {DATASET_FORMAT} manifest", path.display())));
    }
    Ok(m)
}

fn parse_labels(path: &Path, text: &str, n: usize) -> Result<(Vec<u8>, Vec<u64>, Vec<bool>)> {
    let mut labels = Vec::with_capacity(n);
    let mut chron = Vec::with_capacity(n);
    let mut boundary = Vec::with_capacity(n);
    let bad = |line: usize| Error::Format(format!("{}: malformed row {line}", path.display()));
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad(ln + 1));
        }
        labels.push(cols[0].trim().parse().map_err(|_| bad(ln + 1))?);
        chron.push(cols[1].trim().parse().map_err(|_| bad(ln + 1))?);
        boundary.push(cols[2].trim() == "1");
    }
    if labels.len() != n {
        return Err(Error::Format(format!("{}: {} rows for {n} trials", path.display(), labels.len())));
    }
    Ok((labels, chron, boundary))
}

/// Reads a dataset directory back into one trial set (subjects in manifest order).
pub fn read_dataset<T: Scalar>(dir: &Path) -> Result<(DatasetManifest, TrialSet<T>)> {
    let manifest = read_manifest(dir)?;
    let mut parts = Vec::new();
    for s in &manifest.subjects {
        let dpath = dir.join(&s.data_file);
        let bytes = fs::read(&dpath).map_err(|e| Error::io(&dpath, e))?;
        let data: Tensor<T> = decode_trial_array(&bytes)?;
        let expect = [s.n_trials, manifest.n_channels, manifest.n_samples];
        if data.shape() != expect {
            return Err(Error::shape(format!("{expect:?} in {}", dpath.display()), format!("{:?}", data.shape())));
        }
        let lpath = dir.join(&s.labels_file);
        let text = fs::read_to_string(&lpath).map_err(|e| Error::io(&lpath, e))?;
        let (labels, chronological_index, boundary) = parse_labels(&lpath, &text, s.n_trials)?;
        parts.push(TrialSet {
            data,
            labels,
            subject_ids: vec![s.subject_id.clone(); s.n_trials],
            chronological_index,
            boundary,
            sampling_rate_hz: manifest.sampling_rate_hz,
            species: manifest.species,
            modality: manifest.modality,
            channel_names: manifest.channel_names.clone(),
        });
    }
    let refs: Vec<&TrialSet<T>> = parts.iter().collect();
    let trials = TrialSet::concat(&refs)?;
    trials.validate()?;
    Ok((manifest, trials))
}

/// Writes a continuous recording: magic, `u32` channels, `u64` samples,
/// `f64` sampling rate (all little-endian), then channel-major `f32` data.
pub fn write_raw_recording<T: Scalar>(path: &Path, data: &Tensor<T>, sampling_rate_hz: f64) -> Result<()> {
    let (c, s) = (data.shape()[0], data.shape()[1]);
    let mut out = Vec::with_capacity(28 + 4 * c * s);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&(s as u64).to_le_bytes());
    out.extend_from_slice(&sampling_rate_hz.to_le_bytes());
    for &v in data.data() {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    write_atomic(path, &out)
}

/// Reads a raw recording; returns `[C, samples]` data and its sampling rate.
///
/// A file holding already-segmented trials is rejected.
pub fn read_raw_recording<T: Scalar>(path: &Path) -> Result<(Tensor<T>, f64)> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 28 || &bytes[..8] != RAW_MAGIC {
        if decode_trial_array::<f32>(&bytes).is_ok() {
            return Err(Error::AlreadySegmented(path.display().to_string()));
        }
        return Err(Error::Format(format!("{} is not a raw recording", path.display())));
    }
    let c = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let s = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let fs = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    if bytes.len() != 28 + 4 * c * s {
        return Err(Error::Format(format!("{}: header {c}x{s} does not match size", path.display())));
    }
    let vals = bytes[28..].chunks_exact(4).map(|b| T::lit(f32::from_le_bytes(b.try_into().unwrap()) as f64)).collect();
    Ok((Tensor::from_vec(&[c, s], vals)?, fs))
}

/// Montage applied to raw channels before filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Montage {
    #[default]
    AsRecorded,
    /// 19 unipolar 10–20 electrodes to 18 bipolar channels.
    Bipolar1020,
}

/// One recording file, optionally with annotated intervals (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FileRef {
    Path(PathBuf),
    Annotated {
        path: PathBuf,
        #[serde(default)]
        intervals: Vec<[f64; 2]>,
    },
}

impl FileRef {
    pub fn path(&self) -> &Path {
        match self {
            FileRef::Path(p) | FileRef::Annotated { path: p, .. } => p,
        }
    }

    pub fn intervals(&self) -> Vec<Interval> {
        match self {
            FileRef::Path(_) => vec![],
            FileRef::Annotated { intervals, .. } => {
                intervals.iter().map(|&[s, e]| Interval { start_s: s, end_s: e }).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingSubject {
    pub subject_id: String,
    pub species: Species,
    pub modality: Modality,
    pub n_channels: usize,
    pub sampling_rate_hz: f64,
    #[serde(default)]
    pub channel_names: Vec<String>,
    pub file_refs: Vec<FileRef>,
}

/// Description of a raw dataset to preprocess.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingManifest {
    pub dataset_id: String,
    pub subjects: Vec<RecordingSubject>,
    #[serde(default)]
    pub label_scheme: LabelScheme,
    #[serde(default)]
    pub montage: Montage,
}

impl RecordingManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.subjects {
            if !seen.insert(&s.subject_id) {
                return Err(Error::Config(format!("duplicate subject id `{}`", s.subject_id)));
            }
            if s.n_channels == 0 {
                return Err(Error::Config(format!("subject `{}` has no channels", s.subject_id)));
            }
            if !(s.sampling_rate_hz > 0.0) {
                return Err(Error::Config(format!("subject `{}` has non-positive sampling rate", s.subject_id)));
            }
        }
        if self.subjects.is_empty() {
            return Err(Error::Config("manifest lists no subjects".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RecordingManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    /// Loads one file of a subject as a continuous recording. Relative paths
    /// resolve against `base`.
    pub fn load_recording<T: Scalar>(
        &self,
        subject: &RecordingSubject,
        file: &FileRef,
        base: &Path,
    ) -> Result<ContinuousRecording<T>> {
        let path = if file.path().is_absolute() { file.path().to_path_buf() } else { base.join(file.path()) };
        let (data, fs_hz) = read_raw_recording::<T>(&path)?;
        if data.shape()[0] != subject.n_channels {
            return Err(Error::shape(
                format!("{} channels for subject {}", subject.n_channels, subject.subject_id),
                data.shape()[0],
            ));
        }
        if (fs_hz - subject.sampling_rate_hz).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "{}: file rate {fs_hz} Hz differs from manifest {} Hz",
                path.display(),
                subject.sampling_rate_hz
            )));
        }
        let names = if subject.channel_names.is_empty() {
            (0..subject.n_channels).map(|i| format!("ch{i}")).collect()
        } else {
            subject.channel_names.clone()
        };
        let (data, channel_names) = match self.montage {
            Montage::AsRecorded => (data, names),
            Montage::Bipolar1020 => {
                (super::montage::bipolar_continuous(&data, &names)?, super::montage::bipolar_names())
            }
        };
        Ok(ContinuousRecording {
            subject_id: subject.subject_id.clone(),
            data,
            sampling_rate_hz: fs_hz,
            channel_names,
            species: subject.species,
            modality: subject.modality,
        })
    }
}

/// Preprocesses every recording of a manifest into one trial set.
pub fn preprocess_manifest<T: Scalar>(
    manifest: &RecordingManifest,
    base: &Path,
    cfg: &super::PreprocessConfig,
) -> Result<TrialSet<T>> {
    let mut parts = Vec::new();
    for subject in &manifest.subjects {
        let mut offset = 0u64;
        for file in &subject.file_refs {
            let rec = manifest.load_recording::<T>(subject, file, base)?;
            let ts = super::preprocess::preprocess(&rec, cfg, &file.intervals(), offset)?;
            offset += ts.n_trials() as u64;
            parts.push(ts);
        }
    }
    let refs: Vec<&TrialSet<T>> = parts.iter().collect();
    TrialSet::concat(&refs)
}
