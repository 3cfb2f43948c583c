//! Transmit-stream generators: stationary distributions, mixtures, QAM with
//! OFDM or single-carrier framing, and piecewise schedules.

use rand_distr::Exp;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moments::{self, exponential_moments, gaussian_moments, uniform_moments, MomentKind, MomentVector};
use crate::numerics::{ifft, rng_complex_gaussian, ComplexSample, NumericsError, RngState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("unsupported QAM order {0} (expected 4, 16, 64 or 256)")]
    QamOrder(usize),
    #[error("mixture has no components")]
    EmptyMixture,
    #[error("{len} symbols cannot be split into blocks of {block}")]
    BadLength { len: usize, block: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Square QAM constellation in Gray order, scaled to unit average power.
pub fn qam_constellation(order: usize) -> Result<Vec<ComplexSample>, SignalError> {
    let side = match order {
        4 => 2usize,
        16 => 4,
        64 => 8,
        256 => 16,
        _ => return Err(SignalError::QamOrder(order)),
    };
    let bits = side.trailing_zeros();
    // PAM level for Gray-coded index g: invert the Gray code, then map to ±1, ±3, …
    let level = |g: usize| {
        let mut b = g;
        let mut shift = 1;
        while shift < bits as usize {
            b ^= b >> shift;
            shift <<= 1;
        }
        (2 * b) as f64 - (side - 1) as f64
    };
    let power = 2.0 * (order as f64 - 1.0) / 3.0;
    let scale = 1.0 / power.sqrt();
    let mut points = Vec::with_capacity(order);
    for idx in 0..order {
        let i = idx >> bits;
        let q = idx & (side - 1);
        points.push(ComplexSample::new(level(i) * scale, level(q) * scale));
    }
    Ok(points)
}

/// Sample distribution of a transmit stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Distribution {
    ComplexGaussian { variance: f64 },
    UniformReal { half_width: f64 },
    Exponential { rate: f64 },
    Qam { order: usize },
    Mixture { components: Vec<DistributionSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    #[serde(flatten)]
    pub kind: Distribution,
    /// Rescale to unit average power.
    #[serde(default)]
    pub unit_power: bool,
}

impl DistributionSpec {
    pub fn new(kind: Distribution) -> Self {
        Self { kind, unit_power: false }
    }

    pub fn complex_gaussian(variance: f64) -> Self {
        Self::new(Distribution::ComplexGaussian { variance })
    }

    pub fn uniform_real(half_width: f64) -> Self {
        Self::new(Distribution::UniformReal { half_width })
    }

    pub fn exponential(rate: f64) -> Self {
        Self::new(Distribution::Exponential { rate })
    }

    pub fn qam(order: usize) -> Self {
        Self::new(Distribution::Qam { order })
    }

    pub fn mixture(components: Vec<DistributionSpec>) -> Self {
        Self::new(Distribution::Mixture { components })
    }

    pub fn with_unit_power(mut self) -> Self {
        self.unit_power = true;
        self
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SignalError::Parameter(format!("{name} must be positive, got {v}")))
            }
        };
        match &self.kind {
            Distribution::ComplexGaussian { variance } => positive("variance", *variance),
            Distribution::UniformReal { half_width } => positive("half_width", *half_width),
            Distribution::Exponential { rate } => positive("rate", *rate),
            Distribution::Qam { order } => qam_constellation(*order).map(|_| ()),
            Distribution::Mixture { components } => {
                if components.is_empty() {
                    return Err(SignalError::EmptyMixture);
                }
                components.iter().try_for_each(DistributionSpec::validate)
            }
        }
    }

    /// Average power of the unscaled distribution.
    fn raw_power(&self) -> f64 {
        match &self.kind {
            Distribution::ComplexGaussian { variance } => *variance,
            Distribution::UniformReal { half_width } => half_width * half_width / 3.0,
            Distribution::Exponential { rate } => 2.0 / (rate * rate),
            Distribution::Qam { .. } => 1.0,
            Distribution::Mixture { components } => components.iter().map(DistributionSpec::power).sum(),
        }
    }

    /// Average power `E|x|²` of generated samples.
    pub fn power(&self) -> f64 {
        if self.unit_power {
            1.0
        } else {
            self.raw_power()
        }
    }

    fn amplitude_scale(&self) -> f64 {
        if self.unit_power {
            1.0 / self.raw_power().sqrt()
        } else {
            1.0
        }
    }

    /// Closed-form even moments when the distribution has them; mixtures
    /// return `None` and must be estimated.
    pub fn closed_form_moments(&self, k: usize) -> Option<MomentVector> {
        let base = match &self.kind {
            Distribution::ComplexGaussian { variance } => gaussian_moments(*variance, k),
            Distribution::UniformReal { half_width } => uniform_moments(*half_width, k),
            Distribution::Exponential { rate } => exponential_moments(*rate, k, MomentKind::EvenOnly),
            Distribution::Qam { order } => moments::qam_moments(&qam_constellation(*order).ok()?, k).ok()?,
            Distribution::Mixture { .. } => return None,
        };
        let s = self.amplitude_scale();
        Some(if s == 1.0 { base } else { moments::scale_moments(&base, s) })
    }

    /// Short human label, also used as the default MCS id for QAM.
    pub fn label(&self) -> String {
        match &self.kind {
            Distribution::ComplexGaussian { .. } => "gaussian".into(),
            Distribution::UniformReal { .. } => "uniform".into(),
            Distribution::Exponential { .. } => "exponential".into(),
            Distribution::Qam { order } => format!("{order}qam"),
            Distribution::Mixture { components } => {
                components.iter().map(DistributionSpec::label).collect::<Vec<_>>().join("+")
            }
        }
    }
}

/// IID samples from `spec`; mixtures are the sample-wise sum of independent
/// component streams.
pub fn generate(spec: &DistributionSpec, n: usize, rng: &mut RngState) -> Vec<ComplexSample> {
    let scale = spec.amplitude_scale();
    let mut out = match &spec.kind {
        Distribution::ComplexGaussian { variance } => {
            if n == 0 {
                Vec::new()
            } else {
                rng_complex_gaussian(rng, n, *variance)
            }
        }
        Distribution::UniformReal { half_width } => (0..n)
            .map(|_| ComplexSample::new(half_width * (2.0 * rng.uniform() - 1.0), 0.0))
            .collect(),
        Distribution::Exponential { rate } => {
            let exp = Exp::new(*rate).expect("validated rate");
            (0..n).map(|_| ComplexSample::new(rng.sample(exp), 0.0)).collect()
        }
        Distribution::Qam { order } => {
            let points = qam_constellation(*order).expect("validated QAM order");
            (0..n).map(|_| points[rng.index(points.len())]).collect()
        }
        Distribution::Mixture { components } => {
            let mut acc = vec![ComplexSample::new(0.0, 0.0); n];
            for c in components {
                for (a, v) in acc.iter_mut().zip(generate(c, n, rng)) {
                    *a += v;
                }
            }
            acc
        }
    };
    if scale != 1.0 {
        out.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// Maps frequency-domain symbols to time-domain samples block by block with
/// a unitary inverse FFT (no cyclic prefix).
pub fn frame_ofdm(symbols: &[ComplexSample], n_sub: usize) -> Result<Vec<ComplexSample>, SignalError> {
    if n_sub == 0 || !n_sub.is_power_of_two() {
        return Err(NumericsError::BadLength(n_sub).into());
    }
    if symbols.len() % n_sub != 0 {
        return Err(SignalError::BadLength { len: symbols.len(), block: n_sub });
    }
    let mut out = Vec::with_capacity(symbols.len());
    for block in symbols.chunks(n_sub) {
        out.extend(ifft(block)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Waveform {
    Direct,
    Ofdm { n_subcarriers: usize },
    Scfde,
}

impl Default for Waveform {
    fn default() -> Self {
        Waveform::Direct
    }
}

impl Waveform {
    pub fn validate(&self) -> Result<(), SignalError> {
        match self {
            Waveform::Ofdm { n_subcarriers } if *n_subcarriers == 0 || !n_subcarriers.is_power_of_two() => {
                Err(SignalError::Parameter(format!("OFDM size {n_subcarriers} is not a power of two")))
            }
            _ => Ok(()),
        }
    }

    /// Draws `n` transmit samples of `spec` under this waveform.
    pub fn synthesize(&self, spec: &DistributionSpec, n: usize, rng: &mut RngState) -> Vec<ComplexSample> {
        match *self {
            Waveform::Direct | Waveform::Scfde => generate(spec, n, rng),
            Waveform::Ofdm { n_subcarriers } => {
                let blocks = n.div_ceil(n_subcarriers);
                let symbols = generate(spec, blocks * n_subcarriers, rng);
                let mut time = frame_ofdm(&symbols, n_subcarriers).expect("whole blocks");
                time.truncate(n);
                time
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub distribution: DistributionSpec,
    #[serde(default)]
    pub waveform: Waveform,
    pub duration: usize,
    /// Draw a fresh channel realization at the start of this segment.
    #[serde(default)]
    pub redraw_channel: bool,
    /// MCS identifier for LUT lookup; defaults to the distribution label.
    #[serde(default)]
    pub mcs: Option<String>,
}

impl Segment {
    pub fn new(distribution: DistributionSpec, waveform: Waveform, duration: usize) -> Self {
        Self { distribution, waveform, duration, redraw_channel: false, mcs: None }
    }

    pub fn mcs_id(&self) -> String {
        self.mcs.clone().unwrap_or_else(|| self.distribution.label())
    }
}

/// Piecewise transmit schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct SegmentSchedule {
    segments: Vec<Segment>,
    channel_redraw_at: Vec<usize>,
}

#[derive(Deserialize)]
struct RawSchedule {
    segments: Vec<Segment>,
    #[serde(default)]
    channel_redraw_at: Vec<usize>,
}

impl TryFrom<RawSchedule> for SegmentSchedule {
    type Error = SignalError;
    fn try_from(raw: RawSchedule) -> Result<Self, SignalError> {
        Self::with_redraws(raw.segments, raw.channel_redraw_at)
    }
}

impl SegmentSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self, SignalError> {
        Self::with_redraws(segments, Vec::new())
    }

    /// Schedule with extra channel redraws at absolute sample indices.
    pub fn with_redraws(segments: Vec<Segment>, mut channel_redraw_at: Vec<usize>) -> Result<Self, SignalError> {
        if segments.is_empty() {
            return Err(SignalError::Schedule("schedule has no segments".into()));
        }
        for (i, s) in segments.iter().enumerate() {
            if s.duration == 0 {
                return Err(SignalError::Schedule(format!("segment {i} has zero duration")));
            }
            s.distribution.validate()?;
            s.waveform.validate()?;
        }
        let total: usize = segments.iter().map(|s| s.duration).sum();
        if let Some(bad) = channel_redraw_at.iter().find(|&&n| n == 0 || n >= total) {
            return Err(SignalError::Schedule(format!("channel redraw at {bad} is outside (0, {total})")));
        }
        channel_redraw_at.sort_unstable();
        channel_redraw_at.dedup();
        Ok(Self { segments, channel_redraw_at })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Start index of every segment after the first.
    pub fn boundaries(&self) -> Vec<usize> {
        self.segments
            .iter()
            .scan(0, |start, s| {
                *start += s.duration;
                Some(*start)
            })
            .take(self.segments.len() - 1)
            .collect()
    }

    /// Sample indices at which the channel is redrawn.
    pub fn redraws(&self) -> Vec<usize> {
        let mut out = self.channel_redraw_at.clone();
        let mut start = 0;
        for s in &self.segments {
            if s.redraw_channel && start > 0 {
                out.push(start);
            }
            start += s.duration;
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Concatenated stream plus the side channel the harness and LUT canceller need.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleStream {
    pub samples: Vec<ComplexSample>,
    /// Start index of each segment after the first.
    pub boundaries: Vec<usize>,
    pub redraws: Vec<usize>,
    /// `(start index, MCS id)` for every segment, including the first.
    pub mcs_markers: Vec<(usize, String)>,
}

pub fn build_schedule_stream(schedule: &SegmentSchedule, rng: &mut RngState) -> ScheduleStream {
    let mut samples = Vec::with_capacity(schedule.len());
    let mut mcs_markers = Vec::with_capacity(schedule.segments.len());
    for seg in &schedule.segments {
        mcs_markers.push((samples.len(), seg.mcs_id()));
        samples.extend(seg.waveform.synthesize(&seg.distribution, seg.duration, rng));
    }
    ScheduleStream {
        samples,
        boundaries: schedule.boundaries(),
        redraws: schedule.redraws(),
        mcs_markers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::estimate_moments;

    fn power(x: &[ComplexSample]) -> f64 {
        x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
    }

    #[test]
    fn qpsk_points() {
        let pts = qam_constellation(4).unwrap();
        let h = 0.5f64.sqrt();
        for p in &pts {
            assert!((p.re.abs() - h).abs() < 1e-15 && (p.im.abs() - h).abs() < 1e-15);
        }
        let mut rng = RngState::new(1, 0);
        let x = generate(&DistributionSpec::qam(4), 400, &mut rng);
        for p in &pts {
            assert!(x.contains(p));
        }
        assert!(x.iter().all(|v| pts.contains(v)));
        assert!(qam_constellation(32).is_err());
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        let pts = qam_constellation(16).unwrap();
        for (i, a) in pts.iter().enumerate() {
            for (j, b) in pts.iter().enumerate() {
                let d = (a - b).norm();
                if d > 1e-9 && d < 0.64 {
                    assert_eq!((i ^ j).count_ones(), 1, "{i} {j}");
                }
            }
        }
    }

    #[test]
    fn generator_powers() {
        let n = 1_000_000;
        let mut rng = RngState::new(42, 0);
        let u = generate(&DistributionSpec::uniform_real(1.0), n, &mut rng);
        assert!((power(&u) - 1.0 / 3.0).abs() < 0.003);
        let mix = DistributionSpec::mixture(vec![DistributionSpec::complex_gaussian(1.0), DistributionSpec::qam(4)]);
        let m = generate(&mix, n, &mut rng);
        assert!((power(&m) - 2.0).abs() < 0.02);
        for spec in [
            DistributionSpec::complex_gaussian(3.0).with_unit_power(),
            DistributionSpec::uniform_real(2.0).with_unit_power(),
            DistributionSpec::exponential(0.5).with_unit_power(),
            DistributionSpec::qam(64).with_unit_power(),
            DistributionSpec::qam(256),
        ] {
            let x = generate(&spec, n, &mut rng);
            let p = power(&x);
            assert!((0.98..=1.02).contains(&p), "{spec:?} power {p}");
        }
    }

    #[test]
    fn exponential_is_positive_real() {
        let x = generate(&DistributionSpec::exponential(2.0), 1000, &mut RngState::new(3, 0));
        assert!(x.iter().all(|v| v.re > 0.0 && v.im == 0.0));
    }

    #[test]
    fn ofdm_flat_spectrum_gives_impulse() {
        let sym = vec![ComplexSample::new(1.0, 0.0); 64];
        let t = frame_ofdm(&sym, 64).unwrap();
        assert!((t[0].re - 8.0).abs() < 1e-12);
        assert!(t[1..].iter().all(|v| v.norm() < 1e-12));
        assert!(matches!(frame_ofdm(&sym[..60], 64), Err(SignalError::BadLength { .. })));
    }

    #[test]
    fn ofdm_preserves_power_and_gaussianizes() {
        let mut rng = RngState::new(9, 0);
        let sym = generate(&DistributionSpec::qam(16), 1 << 20, &mut rng);
        let t = frame_ofdm(&sym, 64).unwrap();
        assert!((power(&t) - power(&sym)).abs() < 1e-12);
        // E|x|⁴/(E|x|²)² is 2 for a circular complex Gaussian, 1.32 for raw 16QAM
        let m = estimate_moments(&t, 2, crate::moments::MomentKind::EvenOnly).unwrap();
        let kurt = m.values()[1] / m.values()[0].powi(2);
        assert!((kurt / 2.0 - 1.0).abs() < 0.05, "kurtosis {kurt}");
    }

    #[test]
    fn schedules() {
        let mixed_schedule = SegmentSchedule::new(vec![
            Segment::new(DistributionSpec::uniform_real(1.0), Waveform::Direct, 6000),
            Segment::new(
                DistributionSpec::mixture(vec![DistributionSpec::complex_gaussian(1.0), DistributionSpec::qam(4)]),
                Waveform::Direct,
                9000,
            ),
        ])
        .unwrap();
        let s = build_schedule_stream(&mixed_schedule, &mut RngState::new(1, 0));
        assert_eq!(s.samples.len(), 15000);
        assert_eq!(s.boundaries, vec![6000]);

        let durations = [2200, 5500, 3300, 4400, 2200];
        let orders = [16, 64, 4, 256, 64];
        let segs = durations
            .iter()
            .zip(orders)
            .map(|(&d, o)| Segment::new(DistributionSpec::qam(o), Waveform::Scfde, d))
            .collect();
        let mcs_schedule = SegmentSchedule::with_redraws(segs, vec![5000]).unwrap();
        let s = build_schedule_stream(&mcs_schedule, &mut RngState::new(1, 0));
        assert_eq!(s.samples.len(), 17600);
        assert_eq!(s.boundaries, vec![2200, 7700, 11000, 15400]);
        assert_eq!(s.redraws, vec![5000]);
        assert_eq!(s.mcs_markers[2], (7700, "4qam".to_string()));

        let bad = SegmentSchedule::new(vec![
            Segment::new(DistributionSpec::qam(4), Waveform::Direct, 10),
            Segment::new(DistributionSpec::qam(4), Waveform::Direct, 0),
        ]);
        assert!(matches!(bad, Err(SignalError::Schedule(_))));
    }

    #[test]
    fn schedule_stream_is_deterministic() {
        let sched = SegmentSchedule::new(vec![
            Segment::new(DistributionSpec::qam(16), Waveform::Ofdm { n_subcarriers: 64 }, 1000),
            Segment::new(DistributionSpec::complex_gaussian(1.0), Waveform::Direct, 500),
        ])
        .unwrap();
        let a = build_schedule_stream(&sched, &mut RngState::new(5, 0));
        let b = build_schedule_stream(&sched, &mut RngState::new(5, 0));
        assert_eq!(a, b);
    }

    #[test]
    fn spec_json_shape() {
        let s = DistributionSpec::mixture(vec![DistributionSpec::complex_gaussian(1.0), DistributionSpec::qam(4)]);
        let json = serde_json::to_string(&s).unwrap();
        let back: DistributionSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        let parsed: DistributionSpec = serde_json::from_str(r#"{"kind":"uniform-real","half_width":1.0}"#).unwrap();
        assert_eq!(parsed, DistributionSpec::uniform_real(1.0));
    }
}
