//! Ground-truth self-interference path: Saleh PA with memory, FIR coupling
//! channel and additive complex Gaussian noise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{rng_complex_gaussian, ComplexSample, RngState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel parameter: {0}")]
    Parameter(String),
    #[error("calibration run produced zero SI power")]
    ZeroSiPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalehPaConfig {
    pub gamma: f64,
    pub beta: f64,
    pub taps: Vec<ComplexSample>,
}

impl SalehPaConfig {
    pub fn new(gamma: f64, beta: f64, taps: Vec<ComplexSample>) -> Result<Self, ChannelError> {
        let cfg = Self { gamma, beta, taps };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Memoryless stage with a single unit tap.
    pub fn memoryless(gamma: f64, beta: f64) -> Self {
        Self { gamma, beta, taps: vec![ComplexSample::new(1.0, 0.0)] }
    }

    /// Complex Gaussian memory taps normalized to unit energy.
    pub fn random(gamma: f64, beta: f64, memory: usize, rng: &mut RngState) -> Result<Self, ChannelError> {
        if memory == 0 {
            return Err(ChannelError::Parameter("PA memory must be at least 1".into()));
        }
        Self::new(gamma, beta, unit_energy_taps(memory, rng))
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(ChannelError::Parameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(ChannelError::Parameter(format!("beta must be non-negative, got {}", self.beta)));
        }
        check_taps("PA", &self.taps)
    }

    /// Memoryless AM/AM gain applied to one sample.
    pub fn compress(&self, x: ComplexSample) -> ComplexSample {
        x * (self.gamma / (1.0 + self.beta * x.norm_sqr()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiChannelConfig {
    pub taps: Vec<ComplexSample>,
}

impl SiChannelConfig {
    pub fn new(taps: Vec<ComplexSample>) -> Result<Self, ChannelError> {
        check_taps("SI", &taps)?;
        Ok(Self { taps })
    }

    pub fn identity() -> Self {
        Self { taps: vec![ComplexSample::new(1.0, 0.0)] }
    }
}

fn check_taps(name: &str, taps: &[ComplexSample]) -> Result<(), ChannelError> {
    if taps.is_empty() {
        return Err(ChannelError::Parameter(format!("{name} channel needs at least one tap")));
    }
    if taps.iter().any(|t| !(t.re.is_finite() && t.im.is_finite())) {
        return Err(ChannelError::Parameter(format!("{name} taps must be finite")));
    }
    if taps.iter().all(|t| t.norm_sqr() == 0.0) {
        return Err(ChannelError::Parameter(format!("{name} taps are all zero")));
    }
    Ok(())
}

fn unit_energy_taps(n: usize, rng: &mut RngState) -> Vec<ComplexSample> {
    let taps = rng_complex_gaussian(rng, n, 1.0);
    let energy = taps.iter().map(|t| t.norm_sqr()).sum::<f64>().sqrt();
    taps.into_iter().map(|t| t / energy).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearSystem {
    pub pa: SalehPaConfig,
    pub si: SiChannelConfig,
    pub noise_variance: f64,
}

impl NonlinearSystem {
    pub fn new(pa: SalehPaConfig, si: SiChannelConfig, noise_variance: f64) -> Result<Self, ChannelError> {
        pa.validate()?;
        check_taps("SI", &si.taps)?;
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(ChannelError::Parameter(format!("noise variance {noise_variance}")));
        }
        Ok(Self { pa, si, noise_variance })
    }

    /// Total memory `L = M + Q − 1`.
    pub fn memory(&self) -> usize {
        self.pa.taps.len() + self.si.taps.len() - 1
    }

    pub fn with_noise(mut self, noise_variance: f64) -> Self {
        self.noise_variance = noise_variance;
        self
    }
}

fn fir(x: &[ComplexSample], taps: &[ComplexSample]) -> Vec<ComplexSample> {
    (0..x.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .take(n + 1)
                .map(|(m, h)| h * x[n - m])
                .sum()
        })
        .collect()
}

/// `x_PA[n] = Σ_m h[m]·γx[n−m]/(1+β|x[n−m]|²)`, zero before the stream start.
pub fn saleh_pa(x: &[ComplexSample], cfg: &SalehPaConfig) -> Vec<ComplexSample> {
    let compressed: Vec<ComplexSample> = x.iter().map(|&v| cfg.compress(v)).collect();
    fir(&compressed, &cfg.taps)
}

/// Received SI without noise.
pub fn noiseless_rx(x: &[ComplexSample], sys: &NonlinearSystem) -> Vec<ComplexSample> {
    fir(&saleh_pa(x, &sys.pa), &sys.si.taps)
}

/// `y = h_SI * saleh_pa(x) + z`, with `z ~ CN(0, σ²)`.
pub fn simulate_rx(x: &[ComplexSample], sys: &NonlinearSystem, rng: &mut RngState) -> Vec<ComplexSample> {
    let mut y = noiseless_rx(x, sys);
    add_noise(&mut y, sys.noise_variance, rng);
    y
}

pub fn add_noise(y: &mut [ComplexSample], variance: f64, rng: &mut RngState) {
    if variance > 0.0 && !y.is_empty() {
        let noise = rng_complex_gaussian(rng, y.len(), variance);
        for (v, z) in y.iter_mut().zip(noise) {
            *v += z;
        }
    }
}

/// Noiseless received SI when the system changes at given sample indices.
///
/// `systems[i] = (start, system)` with strictly increasing starts, the first
/// being 0. Each output sample comes from the system active at that index;
/// filter memory reaches back across a change into earlier inputs.
pub fn piecewise_noiseless_rx(
    x: &[ComplexSample],
    systems: &[(usize, NonlinearSystem)],
) -> Result<Vec<ComplexSample>, ChannelError> {
    if systems.first().map(|s| s.0) != Some(0) {
        return Err(ChannelError::Parameter("first system must start at sample 0".into()));
    }
    if systems.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(ChannelError::Parameter("system starts must increase".into()));
    }
    let mut out = Vec::with_capacity(x.len());
    for (i, (start, sys)) in systems.iter().enumerate() {
        let end = systems.get(i + 1).map_or(x.len(), |s| s.0).min(x.len());
        if *start >= end {
            break;
        }
        let lead = start.saturating_sub(sys.memory() - 1);
        let part = noiseless_rx(&x[lead..end], sys);
        out.extend_from_slice(&part[start - lead..]);
    }
    Ok(out)
}

/// Noise level derived from a noiseless calibration run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    /// Mean received SI power `P_SI`.
    pub si_power: f64,
    /// `σ² = P_SI·10^(−SI/N/10)`.
    pub noise_variance: f64,
}

impl NoiseCalibration {
    pub fn from_noiseless(y: &[ComplexSample], si_to_noise_db: f64) -> Result<Self, ChannelError> {
        if !si_to_noise_db.is_finite() {
            return Err(ChannelError::Parameter(format!("SI-to-noise ratio {si_to_noise_db}")));
        }
        if y.is_empty() {
            return Err(ChannelError::ZeroSiPower);
        }
        let si_power = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len() as f64;
        if !(si_power > 0.0) {
            return Err(ChannelError::ZeroSiPower);
        }
        Ok(Self { si_power, noise_variance: si_power * 10f64.powf(-si_to_noise_db / 10.0) })
    }

    /// Noise floor in dB relative to the SI power.
    pub fn floor_db(&self) -> f64 {
        10.0 * (self.noise_variance / self.si_power).log10()
    }
}

/// Runs `sys` without noise over the calibration input and sets σ² for the
/// requested SI-to-noise ratio.
pub fn calibrate_noise(
    sys: &NonlinearSystem,
    calibration_input: &[ComplexSample],
    si_to_noise_db: f64,
) -> Result<NoiseCalibration, ChannelError> {
    NoiseCalibration::from_noiseless(&noiseless_rx(calibration_input, sys), si_to_noise_db)
}

fn default_gamma() -> f64 {
    3.0
}

fn default_beta() -> f64 {
    0.09
}

fn default_memory() -> usize {
    9
}

fn default_si_length() -> usize {
    1
}

/// PA section of a scenario: fixed taps or a random draw of `memory` taps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaSpec {
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_memory")]
    pub memory: usize,
    #[serde(default)]
    pub taps: Option<Vec<ComplexSample>>,
}

impl Default for PaSpec {
    fn default() -> Self {
        Self { gamma: default_gamma(), beta: default_beta(), memory: default_memory(), taps: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiSpec {
    #[serde(default = "default_si_length")]
    pub length: usize,
    #[serde(default)]
    pub taps: Option<Vec<ComplexSample>>,
}

impl Default for SiSpec {
    fn default() -> Self {
        Self { length: default_si_length(), taps: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default)]
    pub pa: PaSpec,
    #[serde(default)]
    pub si: SiSpec,
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let pa_taps = self.pa.taps.clone().unwrap_or_else(|| vec![ComplexSample::new(1.0, 0.0); self.pa.memory.max(1)]);
        SalehPaConfig { gamma: self.pa.gamma, beta: self.pa.beta, taps: pa_taps }.validate()?;
        if self.pa.taps.is_none() && self.pa.memory == 0 {
            return Err(ChannelError::Parameter("PA memory must be at least 1".into()));
        }
        match &self.si.taps {
            Some(t) => check_taps("SI", t),
            None if self.si.length == 0 => Err(ChannelError::Parameter("SI length must be at least 1".into())),
            None => Ok(()),
        }
    }

    /// Draws a noiseless system. A single-tap random SI channel is a pure
    /// delay, so all memory then sits in the PA.
    pub fn realize(&self, rng: &mut RngState) -> Result<NonlinearSystem, ChannelError> {
        let pa_taps = match &self.pa.taps {
            Some(t) => t.clone(),
            None => unit_energy_taps(self.pa.memory, rng),
        };
        let si_taps = match (&self.si.taps, self.si.length) {
            (Some(t), _) => t.clone(),
            (None, 1) => vec![ComplexSample::new(1.0, 0.0)],
            (None, q) => unit_energy_taps(q, rng),
        };
        NonlinearSystem::new(
            SalehPaConfig::new(self.pa.gamma, self.pa.beta, pa_taps)?,
            SiChannelConfig::new(si_taps)?,
            0.0,
        )
    }
}
