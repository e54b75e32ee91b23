//! Bipolar montage derivation for 19-electrode 10–20 scalp recordings.

use super::TrialSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The 18 bipolar pairs `(a, b)`, output channel = a − b, in output order.
pub const BIPOLAR_PAIRS: [(&str, &str); 18] = [
    ("Fp2", "F4"),
    ("F4", "C4"),
    ("C4", "P4"),
    ("P4", "O2"),
    ("Fp1", "F3"),
    ("F3", "C3"),
    ("C3", "P3"),
    ("P3", "O1"),
    ("Fp2", "F8"),
    ("F8", "T4"),
    ("T4", "T6"),
    ("T6", "O2"),
    ("Fp1", "F7"),
    ("F7", "T3"),
    ("T3", "T5"),
    ("T5", "O1"),
    ("Fz", "Cz"),
    ("Cz", "Pz"),
];

/// The 19 unipolar electrodes the pairs draw on.
pub const ELECTRODES_10_20: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1",
    "O2",
];

fn find(names: &[String], electrode: &str) -> Result<usize> {
    names
        .iter()
        .position(|n| n.trim().eq_ignore_ascii_case(electrode))
        .ok_or_else(|| Error::MissingElectrode(electrode.to_string()))
}

/// Output channel names, e.g. `Fp2-F4`.
pub fn bipolar_names() -> Vec<String> {
    BIPOLAR_PAIRS.iter().map(|(a, b)| format!("{a}-{b}")).collect()
}

/// Replaces unipolar channels with the 18 bipolar differences.
pub fn derive_bipolar_montage<T: Scalar>(unipolar: &TrialSet<T>) -> Result<TrialSet<T>> {
    let names = &unipolar.channel_names;
    let pairs: Vec<(usize, usize)> =
        BIPOLAR_PAIRS.iter().map(|(a, b)| Ok((find(names, a)?, find(names, b)?))).collect::<Result<_>>()?;
    let (n, c, t) = (unipolar.n_trials(), unipolar.n_channels(), unipolar.n_samples());
    let src = unipolar.data.data();
    let mut out = Vec::with_capacity(n * pairs.len() * t);
    for trial in 0..n {
        let base = trial * c * t;
        for &(a, b) in &pairs {
            let ra = &src[base + a * t..base + (a + 1) * t];
            let rb = &src[base + b * t..base + (b + 1) * t];
            out.extend(ra.iter().zip(rb).map(|(&x, &y)| x - y));
        }
    }
    let mut res = unipolar.clone();
    res.data = Tensor::from_vec(&[n, pairs.len(), t], out)?;
    res.channel_names = bipolar_names();
    Ok(res)
}

/// Same derivation for a continuous `[C, samples]` recording.
pub fn bipolar_continuous<T: Scalar>(data: &Tensor<T>, names: &[String]) -> Result<Tensor<T>> {
    let t = data.shape()[1];
    let mut out = Vec::with_capacity(BIPOLAR_PAIRS.len() * t);
    for (a, b) in BIPOLAR_PAIRS {
        let (ia, ib) = (find(names, a)?, find(names, b)?);
        let ra = &data.data()[ia * t..(ia + 1) * t];
        let rb = &data.data()[ib * t..(ib + 1) * t];
        out.extend(ra.iter().zip(rb).map(|(&x, &y)| x - y));
    }
    Tensor::from_vec(&[BIPOLAR_PAIRS.len(), t], out)
}
