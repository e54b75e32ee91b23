//! Synthetic two-domain seizure data with a known generative process.
//!
//! Both domains mix the same latent oscillators into their electrodes. The
//! seizure class raises the amplitude of the first half of the oscillators by
//! a factor `1 + class_gap`. The target domain sees a perturbed copy of the
//! source mixing restricted to `c_target` channels, and every subject in both
//! domains gets its own per-channel gain profile plus strong artifact sources
//! at the class frequencies with a subject-specific spatial pattern. No single
//! spatial filter removes the artifacts for all subjects, while per-subject
//! whitening suppresses them.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Modality, Species, TrialSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Subjects per domain.
    pub n_subjects: usize,
    pub trials_per_subject: usize,
    pub c_source: usize,
    pub c_target: usize,
    /// Samples per trial (T_s).
    pub n_samples: usize,
    pub sampling_rate_hz: f64,
    /// Relative amplitude increase of the seizure oscillators; 0 = no signal.
    pub class_gap: f64,
    pub seizure_fraction: f64,
    pub n_latent: usize,
    /// Per-trial log-amplitude jitter of the oscillators.
    pub amplitude_jitter: f64,
    /// Standard deviation of the latent background noise.
    pub background_std: f64,
    /// Standard deviation of the per-electrode sensor noise.
    pub sensor_noise_std: f64,
    /// Strength of the target-domain channel mixing perturbation.
    pub domain_shift: f64,
    /// Log-scale spread of per-subject channel gains.
    pub subject_spread: f64,
    /// Amplitude of subject-specific artifact sources that oscillate at the
    /// class-dependent frequencies with a random spatial pattern per subject.
    pub artifact_std: f64,
    pub channel_mix_seed: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 4,
            trials_per_subject: 120,
            c_source: 18,
            c_target: 16,
            n_samples: 64,
            sampling_rate_hz: 32.0,
            class_gap: 2.0,
            seizure_fraction: 0.3,
            n_latent: 4,
            amplitude_jitter: 0.3,
            background_std: 1.0,
            sensor_noise_std: 0.5,
            domain_shift: 0.5,
            subject_spread: 0.8,
            artifact_std: 6.0,
            channel_mix_seed: 7,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_target < 2 || self.c_source < self.c_target {
            return Err(Error::Config(format!(
                "need c_source >= c_target >= 2, got {} / {}",
                self.c_source, self.c_target
            )));
        }
        if self.n_subjects == 0 || self.trials_per_subject < 4 || self.n_samples < 8 || self.n_latent == 0 {
            return Err(Error::Config("degenerate synthetic sizes".into()));
        }
        if !(self.sampling_rate_hz > 0.0) || !(0.0..1.0).contains(&self.seizure_fraction) || self.class_gap < 0.0 {
            return Err(Error::Config("invalid rate, seizure fraction or class gap".into()));
        }
        Ok(())
    }

    /// Oscillator frequencies, spread between 2 Hz and 0.4 × the sampling rate.
    pub fn latent_frequencies(&self) -> Vec<f64> {
        let lo = 2.0;
        let hi = 0.4 * self.sampling_rate_hz;
        (0..self.n_latent)
            .map(|k| lo + (hi - lo) * (k as f64 + 0.5) / self.n_latent as f64)
            .collect()
    }

    /// Number of oscillators whose amplitude depends on the class.
    pub fn n_class_latent(&self) -> usize {
        self.n_latent.div_ceil(2)
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Source mixing `[c_source, n_latent]` and target mixing `[c_target, n_latent]`.
pub fn mixing_matrices(cfg: &SynthConfig) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.channel_mix_seed);
    let d = cfg.n_latent;
    let a0 = Tensor::from_fn(&[cfg.c_source, d], |_| gaussian(&mut rng));
    let ct = cfg.c_target;
    let scale = cfg.domain_shift / (ct as f64).sqrt();
    let mut m = Tensor::from_fn(&[ct, ct], |_| scale * gaussian(&mut rng));
    for i in 0..ct {
        m.set2(i, i, m.at2(i, i) + 1.0);
    }
    let head = a0.slice_rows(0, ct);
    let at = m.matmul(&head).expect("mixing shapes");
    (a0, at)
}

fn generate_domain<T: Scalar>(
    cfg: &SynthConfig,
    mixing: &Tensor<f64>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    species: Species,
    modality: Modality,
) -> TrialSet<T> {
    let c = mixing.shape()[0];
    let d = cfg.n_latent;
    let t = cfg.n_samples;
    let freqs = cfg.latent_frequencies();
    let n_class = cfg.n_class_latent();
    let fs = cfg.sampling_rate_hz;

    let total = cfg.n_subjects * cfg.trials_per_subject;
    let mut data = Vec::with_capacity(total * c * t);
    let mut labels = Vec::with_capacity(total);
    let mut subject_ids = Vec::with_capacity(total);
    let mut chron = Vec::with_capacity(total);

    let mut latent = vec![0.0; d * t];
    let mut trial = vec![0.0; c * t];
    for s in 0..cfg.n_subjects {
        let sid = format!("{prefix}-{s:02}");
        let overall = (cfg.subject_spread * gaussian(rng)).exp();
        let gains: Vec<f64> = (0..c).map(|_| overall * (cfg.subject_spread * gaussian(rng)).exp()).collect();

        let artifact_pattern: Vec<f64> = (0..c * n_class).map(|_| gaussian(rng)).collect();

        let mut subj_labels: Vec<u8> =
            (0..cfg.trials_per_subject).map(|_| u8::from(rng.random::<f64>() < cfg.seizure_fraction)).collect();
        // both classes present in every subject
        subj_labels[0] = 1;
        subj_labels[1] = 0;
        let last = cfg.trials_per_subject - 1;
        subj_labels[last] = 1;
        subj_labels[last - 1] = 0;

        for (i, &y) in subj_labels.iter().enumerate() {
            for k in 0..d {
                let boost = if k < n_class { 1.0 + cfg.class_gap * y as f64 } else { 1.0 };
                let amp = 2.0 * boost * (cfg.amplitude_jitter * gaussian(rng)).exp();
                let phase = 2.0 * PI * rng.random::<f64>();
                let w = 2.0 * PI * freqs[k] / fs;
                for (j, v) in latent[k * t..(k + 1) * t].iter_mut().enumerate() {
                    *v = amp * (w * j as f64 + phase).sin() + cfg.background_std * gaussian(rng);
                }
            }
            trial.iter_mut().for_each(|v| *v = 0.0);
            if cfg.artifact_std > 0.0 {
                for k in 0..n_class {
                    let amp = cfg.artifact_std * (cfg.amplitude_jitter * gaussian(rng)).exp();
                    let phase = 2.0 * PI * rng.random::<f64>();
                    let w = 2.0 * PI * freqs[k] / fs;
                    for ch in 0..c {
                        let a = amp * artifact_pattern[ch * n_class + k];
                        for (j, o) in trial[ch * t..(ch + 1) * t].iter_mut().enumerate() {
                            *o += a * (w * j as f64 + phase).sin();
                        }
                    }
                }
            }
            for ch in 0..c {
                let row = &mut trial[ch * t..(ch + 1) * t];
                for k in 0..d {
                    let a = mixing.at2(ch, k);
                    for (o, &l) in row.iter_mut().zip(&latent[k * t..(k + 1) * t]) {
                        *o += a * l;
                    }
                }
                for o in row.iter_mut() {
                    *o = gains[ch] * (*o + cfg.sensor_noise_std * gaussian(rng));
                }
            }
            data.extend(trial.iter().map(|&v| T::lit(v)));
            labels.push(y);
            subject_ids.push(sid.clone());
            chron.push(i as u64);
        }
    }
    TrialSet {
        data: Tensor::from_vec(&[total, c, t], data).expect("synthetic shape"),
        labels,
        subject_ids,
        chronological_index: chron,
        boundary: vec![false; total],
        sampling_rate_hz: fs,
        species,
        modality,
        channel_names: (0..c).map(|i| format!("{prefix}{i}")).collect(),
    }
}

/// Generates `(source, target)` trial sets. Deterministic in the config.
pub fn synth_generate<T: Scalar>(cfg: &SynthConfig) -> Result<(TrialSet<T>, TrialSet<T>)> {
    cfg.validate()?;
    let (a_src, a_tgt) = mixing_matrices(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let src = generate_domain(cfg, &a_src, &mut rng, "src", Species::Canine, Modality::Intracranial);
    let tgt = generate_domain(cfg, &a_tgt, &mut rng, "tgt", Species::Human, Modality::Scalp);
    Ok((src, tgt))
}
