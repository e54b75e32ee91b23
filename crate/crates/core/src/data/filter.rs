//! Zero-phase IIR filtering built from second-order sections.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Quality factor of the notch section.
pub const NOTCH_Q: f64 = 30.0;

/// One second-order section, normalized so that `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn from_raw(b: [f64; 3], a0: f64, a1: f64, a2: f64) -> Self {
        Biquad { b: [b[0] / a0, b[1] / a0, b[2] / a0], a: [a1 / a0, a2 / a0] }
    }

    fn omega(freq_hz: f64, fs: f64) -> Result<f64> {
        if !(freq_hz > 0.0 && freq_hz < fs / 2.0) {
            return Err(Error::Config(format!("corner {freq_hz} Hz must lie in (0, {}) Hz", fs / 2.0)));
        }
        Ok(2.0 * PI * freq_hz / fs)
    }

    /// Second-order Butterworth low-pass.
    pub fn lowpass(freq_hz: f64, fs: f64) -> Result<Self> {
        let w = Self::omega(freq_hz, fs)?;
        let (cw, alpha) = (w.cos(), w.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2));
        let b = [(1.0 - cw) / 2.0, 1.0 - cw, (1.0 - cw) / 2.0];
        Ok(Self::from_raw(b, 1.0 + alpha, -2.0 * cw, 1.0 - alpha))
    }

    /// Second-order Butterworth high-pass.
    pub fn highpass(freq_hz: f64, fs: f64) -> Result<Self> {
        let w = Self::omega(freq_hz, fs)?;
        let (cw, alpha) = (w.cos(), w.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2));
        let b = [(1.0 + cw) / 2.0, -(1.0 + cw), (1.0 + cw) / 2.0];
        Ok(Self::from_raw(b, 1.0 + alpha, -2.0 * cw, 1.0 - alpha))
    }

    /// Second-order notch with quality factor `q`.
    pub fn notch(freq_hz: f64, fs: f64, q: f64) -> Result<Self> {
        let w = Self::omega(freq_hz, fs)?;
        let (cw, alpha) = (w.cos(), w.sin() / (2.0 * q));
        Ok(Self::from_raw([1.0, -2.0 * cw, 1.0], 1.0 + alpha, -2.0 * cw, 1.0 - alpha))
    }

    /// Largest pole magnitude, the roots of `z² + a1 z + a2`.
    fn pole_radius(&self) -> f64 {
        let [a1, a2] = self.a;
        let disc = a1 * a1 - 4.0 * a2;
        if disc < 0.0 {
            a2.abs().sqrt()
        } else {
            let r = disc.sqrt();
            ((-a1 + r) / 2.0).abs().max(((-a1 - r) / 2.0).abs())
        }
    }

    /// Gain at DC.
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form-II state that is at rest for a constant input `x0`.
    fn steady_state(&self, x0: f64) -> [f64; 2] {
        let y = self.dc_gain() * x0;
        [y - self.b[0] * x0, self.b[2] * x0 - self.a[1] * y]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z[0];
            z[0] = b1 * xin - a1 * y + z[1];
            z[1] = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// A cascade of second-order sections applied forward and backward.
#[derive(Debug, Clone, Default)]
pub struct ZeroPhaseFilter {
    pub sections: Vec<Biquad>,
}

impl ZeroPhaseFilter {
    /// 50 Hz-style notch (optional) followed by a 4th-order band-pass made of
    /// a 2nd-order high-pass and a 2nd-order low-pass. A low-pass corner at
    /// or above Nyquist is skipped, as is a notch at or above Nyquist.
    pub fn eeg_default(fs: f64, notch_hz: Option<f64>, lo_hz: f64, hi_hz: f64) -> Result<Self> {
        let mut sections = Vec::new();
        if let Some(f0) = notch_hz {
            if f0 < fs / 2.0 {
                sections.push(Biquad::notch(f0, fs, NOTCH_Q)?);
            }
        }
        sections.push(Biquad::highpass(lo_hz, fs)?);
        if hi_hz < fs / 2.0 {
            sections.push(Biquad::lowpass(hi_hz, fs)?);
        }
        Ok(ZeroPhaseFilter { sections })
    }

    /// Edge padding length, in samples, used by [`Self::apply`]: long enough
    /// for the slowest section's transient to decay by 1e-4, and never
    /// shorter than three samples per filter coefficient.
    pub fn pad_len(&self) -> usize {
        let settle = self
            .sections
            .iter()
            .map(|s| {
                let r = s.pole_radius();
                if r < 1.0 && r > 0.0 {
                    (1e4f64.ln() / -r.ln()).ceil() as usize
                } else {
                    0
                }
            })
            .max()
            .unwrap_or(0);
        settle.max(3 * (2 * self.sections.len() + 1))
    }

    /// Zero-phase forward-backward filtering with mirror padding and
    /// steady-state initial conditions. Mirroring keeps the local level at the
    /// edges, so the slow high-pass section does not see a step there.
    pub fn apply<T: Scalar>(&self, signal: &[T]) -> Vec<T> {
        let n = signal.len();
        if n == 0 || self.sections.is_empty() {
            return signal.to_vec();
        }
        let pad = self.pad_len().min(n - 1);
        let x: Vec<f64> = signal.iter().map(|v| v.as_f64()).collect();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(x[i]);
        }
        ext.extend_from_slice(&x);
        for i in 1..=pad {
            ext.push(x[n - 1 - i]);
        }

        self.pass(&mut ext);
        ext.reverse();
        self.pass(&mut ext);
        ext.reverse();
        ext[pad..pad + n].iter().map(|&v| T::lit(v)).collect()
    }

    fn pass(&self, x: &mut [f64]) {
        for s in &self.sections {
            let z = s.steady_state(x[0]);
            s.run(x, z);
        }
    }

    /// Magnitude response of one forward pass at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / fs;
        self.sections
            .iter()
            .map(|s| {
                let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
                let nr = s.b[0] + s.b[1] * c1 + s.b[2] * c2;
                let ni = -(s.b[1] * s1 + s.b[2] * s2);
                let dr = 1.0 + s.a[0] * c1 + s.a[1] * c2;
                let di = -(s.a[0] * s1 + s.a[1] * s2);
                ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
            })
            .product()
    }
}
