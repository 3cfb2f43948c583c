use serde::Serialize;
use thiserror::Error;

use crate::numerics::{fft, ComplexSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PsdError {
    #[error("segment length {0} is not a power of two")]
    BadLength(usize),
    #[error("input of {len} samples is shorter than one segment of {segment}")]
    TooShort { len: usize, segment: usize },
    #[error("overlap {0} outside [0, 1)")]
    Overlap(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsdPoint {
    /// Normalized frequency in cycles per sample, `[−0.5, 0.5)`.
    pub frequency: f64,
    pub power_db: f64,
}

/// Welch estimate with a Hann window.
///
/// Bins are scaled so that white noise of variance σ² reads σ² per bin and
/// the mean over bins equals the signal power.
pub fn welch_psd(x: &[ComplexSample], segment: usize, overlap: f64) -> Result<Vec<PsdPoint>, PsdError> {
    if segment < 2 || !segment.is_power_of_two() {
        return Err(PsdError::BadLength(segment));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(PsdError::Overlap(overlap));
    }
    if x.len() < segment {
        return Err(PsdError::TooShort { len: x.len(), segment });
    }
    let window: Vec<f64> = (0..segment)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / segment as f64).cos())
        .collect();
    let energy: f64 = window.iter().map(|w| w * w).sum();
    let hop = ((segment as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let mut acc = vec![0.0; segment];
    let mut count = 0usize;
    let mut start = 0;
    while start + segment <= x.len() {
        let seg: Vec<ComplexSample> = x[start..start + segment].iter().zip(&window).map(|(v, w)| v * w).collect();
        // the unitary transform carries a 1/N in |X|² that the scaling undoes
        let spec = fft(&seg).expect("power-of-two segment");
        for (a, s) in acc.iter_mut().zip(&spec) {
            *a += s.norm_sqr() * segment as f64 / energy;
        }
        count += 1;
        start += hop;
    }
    let half = segment / 2;
    Ok((0..segment)
        .map(|k| {
            let bin = (k + half) % segment;
            PsdPoint {
                frequency: (k as f64 - half as f64) / segment as f64,
                power_db: 10.0 * (acc[bin] / count as f64).log10(),
            }
        })
        .collect())
}
