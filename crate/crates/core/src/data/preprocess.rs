//! Filtering, resampling and windowing of continuous recordings.

use super::filter::ZeroPhaseFilter;
use super::resample::{design_filter, rational_factors, resample_signal};
use super::{ContinuousRecording, Interval, PreprocessConfig, TrialSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const TIME_EPS: f64 = 1e-9;

/// Checks that each annotation lies inside `[0, duration_s]`.
pub fn check_annotations(annotations: &[Interval], duration_s: f64) -> Result<()> {
    for iv in annotations {
        let ok = iv.start_s >= -TIME_EPS && iv.end_s <= duration_s + TIME_EPS && iv.start_s <= iv.end_s;
        if !ok {
            return Err(Error::AnnotationOutOfBounds { start_s: iv.start_s, end_s: iv.end_s, duration_s });
        }
    }
    Ok(())
}

/// Label and boundary flag for the window `[start_s, end_s)`.
///
/// A window is positive only when it lies entirely inside one annotated
/// interval; partial overlap marks it as a boundary trial with label 0.
pub fn window_label(start_s: f64, end_s: f64, annotations: &[Interval]) -> (u8, bool) {
    let mut boundary = false;
    for iv in annotations {
        if start_s >= iv.start_s - TIME_EPS && end_s <= iv.end_s + TIME_EPS {
            return (1, false);
        }
        if start_s < iv.end_s && end_s > iv.start_s {
            boundary = true;
        }
    }
    (0, boundary)
}

/// Filters each channel, resamples to the target rate and cuts
/// non-overlapping windows. `chron_offset` is added to the window index so
/// several recordings of one subject keep a single increasing order.
pub fn preprocess<T: Scalar>(
    rec: &ContinuousRecording<T>,
    cfg: &PreprocessConfig,
    annotations: &[Interval],
    chron_offset: u64,
) -> Result<TrialSet<T>> {
    cfg.validate()?;
    let duration_s = rec.duration_s();
    if cfg.window_s > duration_s + TIME_EPS {
        return Err(Error::WindowTooLong { window_s: cfg.window_s, duration_s });
    }
    check_annotations(annotations, duration_s)?;

    let fs = rec.sampling_rate_hz;
    let filt = ZeroPhaseFilter::eeg_default(fs, cfg.notch_hz, cfg.bandpass_lo_hz, cfg.bandpass_hi_hz)?;
    let (up, down) = rational_factors(fs, cfg.target_rate_hz)?;
    let h = (up != down).then(|| design_filter(up, down));

    let (c, s) = (rec.n_channels(), rec.n_samples());
    let mut channels: Vec<Vec<T>> = Vec::with_capacity(c);
    for ch in 0..c {
        let row = &rec.data.data()[ch * s..(ch + 1) * s];
        let filtered = filt.apply(row);
        channels.push(match &h {
            Some(h) => resample_signal(&filtered, up, down, h),
            None => filtered,
        });
    }

    let w = cfg.window_samples();
    let available = channels.first().map_or(0, |v| v.len());
    let n_windows = ((duration_s / cfg.window_s + TIME_EPS).floor() as usize).min(available / w);

    let mut data = Vec::with_capacity(n_windows * c * w);
    let mut labels = Vec::with_capacity(n_windows);
    let mut boundary = Vec::with_capacity(n_windows);
    for k in 0..n_windows {
        for ch in &channels {
            data.extend_from_slice(&ch[k * w..(k + 1) * w]);
        }
        let start = k as f64 * cfg.window_s;
        let (label, b) = window_label(start, start + cfg.window_s, annotations);
        labels.push(label);
        boundary.push(b);
    }
    Ok(TrialSet {
        data: Tensor::from_vec(&[n_windows, c, w], data)?,
        labels,
        subject_ids: vec![rec.subject_id.clone(); n_windows],
        chronological_index: (0..n_windows as u64).map(|k| chron_offset + k).collect(),
        boundary,
        sampling_rate_hz: cfg.target_rate_hz,
        species: rec.species,
        modality: rec.modality,
        channel_names: rec.channel_names.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Modality, Species};

    fn rec(c: usize, fs: f64, secs: f64) -> ContinuousRecording<f64> {
        let s = (fs * secs) as usize;
        ContinuousRecording {
            subject_id: "s1".into(),
            data: Tensor::from_fn(&[c, s], |i| ((i % s) as f64 * 0.05).sin()),
            sampling_rate_hz: fs,
            channel_names: (0..c).map(|i| format!("ch{i}")).collect(),
            species: Species::Human,
            modality: Modality::Scalp,
        }
    }

    fn cfg(window_s: f64, rate: f64) -> PreprocessConfig {
        PreprocessConfig { window_s, target_rate_hz: rate, ..Default::default() }
    }

    #[test]
    fn sixty_seconds_make_sixty_trials() {
        let ts = preprocess(&rec(3, 256.0, 60.0), &cfg(1.0, 256.0), &[], 0).unwrap();
        assert_eq!(ts.data.shape(), &[60, 3, 256]);
        ts.validate().unwrap();
    }

    #[test]
    fn labels_require_full_containment() {
        let iv = [Interval { start_s: 10.0, end_s: 13.5 }];
        let ts = preprocess(&rec(2, 256.0, 20.0), &cfg(1.0, 256.0), &iv, 0).unwrap();
        let pos: Vec<usize> = (0..ts.n_trials()).filter(|&i| ts.labels[i] == 1).collect();
        assert_eq!(pos, vec![10, 11, 12]);
        assert!(ts.boundary[13]);
        assert!(!ts.boundary[9]);
        assert_eq!(ts.labels[13], 0);
    }

    #[test]
    fn rejects_long_window_and_bad_annotation() {
        let r = rec(2, 256.0, 2.0);
        assert!(matches!(preprocess(&r, &cfg(4.0, 256.0), &[], 0), Err(Error::WindowTooLong { .. })));
        let bad = [Interval { start_s: 1.0, end_s: 5.0 }];
        let err = preprocess(&r, &cfg(1.0, 256.0), &bad, 0).unwrap_err();
        assert!(err.to_string().contains("[1, 5]"), "{err}");
    }

    #[test]
    fn trial_count_is_floor_of_duration() {
        let ts = preprocess(&rec(1, 400.0, 10.7), &cfg(4.0, 400.0), &[], 5).unwrap();
        assert_eq!(ts.n_trials(), 2);
        assert_eq!(ts.chronological_index, vec![5, 6]);
    }
}
