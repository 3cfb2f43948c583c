//! Experiment runner: scenario files in, per-seed traces and CSV out.

mod psd;
mod scenario;
mod table;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use psd::{welch_psd, PsdError, PsdPoint};
pub use scenario::{load_scenario, parse_scenario, ConfigError, ScenarioConfig, SeedSpec, SCHEMA_VERSION};
pub use table::{table_command, ReferenceRow, TableFunction, TableReport, TableRow};

use crate::canceller::{run_canceller, Algorithm, CancellerError, McsLut, RunContext};
use crate::channel::{piecewise_noiseless_rx, add_noise, ChannelError, NoiseCalibration, NonlinearSystem};
use crate::moments::{estimate_moments, MomentKind};
use crate::numerics::{ComplexSample, RngState};
use crate::orthopoly::build_basis;
use crate::signals::{build_schedule_stream, Segment, ScheduleStream, Waveform};

/// Version tag written at the top of every CSV.
pub const CSV_VERSION_LINE: &str = concat!("# aop-sic v", env!("CARGO_PKG_VERSION"));

/// Per-seed RNG streams.
const STREAM_SIGNAL: u64 = 0;
const STREAM_CHANNEL: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_REDRAW: u64 = 3;

/// Length and seed of the synthetic stream used to tabulate OFDM moments.
const LUT_TRAINING_LEN: usize = 1 << 20;
const LUT_TRAINING_SEED: u64 = 0x5eed_0fd1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("{label}: {source}")]
    Canceller { label: String, source: CancellerError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no results to write")]
    Empty,
}

impl HarnessError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

/// One seed's received stream and the outcome of every canceller on it.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub stream: ScheduleStream,
    pub received: Vec<ComplexSample>,
    pub calibration: NoiseCalibration,
    /// Indexed like the scenario's cancellers.
    pub outcomes: Vec<Result<Vec<ComplexSample>, CancellerError>>,
}

impl SeedRun {
    /// `|e[n]|²/P_SI` for canceller `i`, if it did not diverge.
    pub fn normalized_error_power(&self, i: usize) -> Option<Vec<f64>> {
        let p = self.calibration.si_power;
        self.outcomes[i].as_ref().ok().map(|e| e.iter().map(|v| v.norm_sqr() / p).collect())
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub name: String,
    pub labels: Vec<String>,
    pub algorithms: Vec<Algorithm>,
    pub mse_window: usize,
    pub noise_floor_db: f64,
    pub boundaries: Vec<usize>,
    pub seeds: Vec<SeedRun>,
}

impl ScenarioResult {
    pub fn len(&self) -> usize {
        self.seeds.first().map_or(0, |s| s.received.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Seeds on which canceller `i` diverged.
    pub fn diverged_seeds(&self, i: usize) -> Vec<u64> {
        self.seeds.iter().filter(|s| s.outcomes[i].is_err()).map(|s| s.seed).collect()
    }

    /// Seed-mean of normalized `|e[n]|²`, over the seeds that did not diverge.
    pub fn mean_error_power(&self, i: usize) -> Option<Vec<f64>> {
        let runs: Vec<Vec<f64>> = self.seeds.iter().filter_map(|s| s.normalized_error_power(i)).collect();
        let first = runs.first()?;
        let mut acc = vec![0.0; first.len()];
        for r in &runs {
            acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        }
        let k = runs.len() as f64;
        Some(acc.into_iter().map(|a| a / k).collect())
    }

    /// Windowed seed-mean MSE in dB, one value per sample from `W` on.
    pub fn mean_mse_db(&self, i: usize) -> Option<Vec<f64>> {
        let p = self.mean_error_power(i)?;
        Some(crate::canceller::windowed_mean(&p, self.mse_window).into_iter().map(to_db).collect())
    }
}

pub fn to_db(v: f64) -> f64 {
    10.0 * v.log10()
}

/// Mean of `v[range]`.
pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Bases for every MCS of the schedule, built at order `order`.
///
/// Direct and SC-FDE segments use the constellation's exact moments; OFDM
/// segments use moments of a long synthetic framed stream, since the
/// time-domain distribution after the inverse FFT has no closed form.
pub fn build_schedule_lut(segments: &[Segment], order: usize) -> Result<McsLut, HarnessError> {
    let mut lut = McsLut::new();
    let mut seen: BTreeMap<String, (Waveform, String)> = BTreeMap::new();
    for seg in segments {
        let id = seg.mcs_id();
        let key = (seg.waveform, format!("{:?}", seg.distribution));
        if let Some(prev) = seen.get(&id) {
            if *prev != key {
                return Err(ConfigError::new("schedule", format!("MCS '{id}' is used for two different signals")).into());
            }
            continue;
        }
        seen.insert(id.clone(), key);
        let closed = match seg.waveform {
            Waveform::Ofdm { .. } => None,
            _ => seg.distribution.closed_form_moments(order),
        };
        let mu = match closed {
            Some(mu) => mu,
            None => {
                let mut rng = RngState::new(LUT_TRAINING_SEED, 0);
                let x = seg.waveform.synthesize(&seg.distribution, LUT_TRAINING_LEN, &mut rng);
                estimate_moments(&x, order, MomentKind::EvenOnly).expect("non-empty training stream")
            }
        };
        let basis = build_basis(&mu, order)
            .map_err(|e| ConfigError::new("schedule", format!("MCS '{id}': {e}")))?;
        lut.insert(id, basis);
    }
    Ok(lut)
}

/// Tables for every LUT canceller, in scenario order (`None` for others).
fn prepare_luts(cfg: &ScenarioConfig) -> Result<Vec<Option<McsLut>>, HarnessError> {
    cfg.cancellers
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.algorithm != Algorithm::Lut {
                return Ok(None);
            }
            let lut = match &c.lut_path {
                Some(p) => {
                    let path = cfg.resolve(p);
                    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
                    McsLut::from_json(&text)
                        .map_err(|e| ConfigError::new(format!("cancellers[{i}].lut_path"), e.to_string()))?
                }
                None => build_schedule_lut(cfg.schedule.segments(), c.order)?,
            };
            for seg in cfg.schedule.segments() {
                if !lut.contains(&seg.mcs_id()) {
                    return Err(ConfigError::new(
                        format!("cancellers[{i}].lut_path"),
                        format!("MCS '{}' is missing from the table", seg.mcs_id()),
                    )
                    .into());
                }
            }
            Ok(Some(lut))
        })
        .collect()
}

/// Transmit stream, channel realizations and received signal for one seed.
pub fn synthesize_seed(cfg: &ScenarioConfig, seed: u64) -> Result<(ScheduleStream, Vec<ComplexSample>, NoiseCalibration), HarnessError> {
    let stream = build_schedule_stream(&cfg.schedule, &mut RngState::new(seed, STREAM_SIGNAL));
    let mut systems: Vec<(usize, NonlinearSystem)> = vec![(0, cfg.channel.realize(&mut RngState::new(seed, STREAM_CHANNEL))?)];
    let mut redraw_rng = RngState::new(seed, STREAM_REDRAW);
    for &at in &stream.redraws {
        systems.push((at, cfg.channel.realize(&mut redraw_rng)?));
    }
    let mut y = piecewise_noiseless_rx(&stream.samples, &systems)?;
    let calibration = NoiseCalibration::from_noiseless(&y, cfg.si_to_noise_db)?;
    add_noise(&mut y, calibration.noise_variance, &mut RngState::new(seed, STREAM_NOISE));
    Ok((stream, y, calibration))
}

fn run_seed(cfg: &ScenarioConfig, luts: &[Option<McsLut>], seed: u64) -> Result<SeedRun, HarnessError> {
    let (stream, received, calibration) = synthesize_seed(cfg, seed)?;
    let outcomes = cfg
        .cancellers
        .iter()
        .zip(luts)
        .map(|(c, lut)| {
            let ctx = RunContext { lut: lut.as_ref(), mcs_markers: &stream.mcs_markers };
            match run_canceller(&stream.samples, &received, c, ctx) {
                Ok(run) => Ok(Ok(run.errors)),
                Err(e @ CancellerError::Diverged { .. }) => Ok(Err(e)),
                Err(e) => Err(HarnessError::Canceller { label: c.label(), source: e }),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SeedRun { seed, stream, received, calibration, outcomes })
}

/// Runs every canceller on every seed. Seeds run in parallel when the
/// `parallel` feature is on; results are ordered as the seed list either way.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    cfg.validate()?;
    let luts = prepare_luts(cfg)?;
    let seeds = cfg.seed_list();

    #[cfg(feature = "parallel")]
    let runs: Result<Vec<SeedRun>, HarnessError> = {
        use rayon::prelude::*;
        seeds.par_iter().map(|&s| run_seed(cfg, &luts, s)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let runs: Result<Vec<SeedRun>, HarnessError> = seeds.iter().map(|&s| run_seed(cfg, &luts, s)).collect();

    Ok(ScenarioResult {
        name: cfg.name.clone(),
        labels: cfg.labels(),
        algorithms: cfg.cancellers.iter().map(|c| c.algorithm).collect(),
        mse_window: cfg.mse_window,
        noise_floor_db: -cfg.si_to_noise_db,
        boundaries: cfg.schedule.boundaries(),
        seeds: runs?,
    })
}

/// CSV text: version comment, header, then one row per sample from `W` on
/// with each canceller's windowed MSE (dB) and raw seed-mean `|e|²/P_SI`.
/// A canceller that diverged on every seed gets empty cells.
pub fn render_csv(result: &ScenarioResult) -> Result<String, HarnessError> {
    if result.labels.is_empty() || result.is_empty() {
        return Err(HarnessError::Empty);
    }
    let w = result.mse_window;
    let raw: Vec<Option<Vec<f64>>> = (0..result.labels.len()).map(|i| result.mean_error_power(i)).collect();
    let mse: Vec<Option<Vec<f64>>> = (0..result.labels.len()).map(|i| result.mean_mse_db(i)).collect();
    let mut out = String::new();
    out.push_str(CSV_VERSION_LINE);
    out.push('\n');
    out.push_str("sample");
    for l in &result.labels {
        write!(out, ",{l}_mse_db").unwrap();
    }
    for l in &result.labels {
        write!(out, ",{l}_err_sq").unwrap();
    }
    out.push('\n');
    for n in w..result.len() {
        write!(out, "{n}").unwrap();
        for m in &mse {
            match m {
                Some(v) => write!(out, ",{}", v[n - w]).unwrap(),
                None => out.push(','),
            }
        }
        for r in &raw {
            match r {
                Some(v) => write!(out, ",{}", v[n]).unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn emit_csv(result: &ScenarioResult, path: &Path) -> Result<(), HarnessError> {
    let text = render_csv(result)?;
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Complex residuals of the first seed: `sample,<label>_re,<label>_im,…`.
pub fn render_residuals_csv(result: &ScenarioResult) -> Result<String, HarnessError> {
    let seed = result.seeds.first().ok_or(HarnessError::Empty)?;
    let mut out = String::new();
    out.push_str(CSV_VERSION_LINE);
    out.push('\n');
    out.push_str("sample");
    for l in &result.labels {
        write!(out, ",{l}_re,{l}_im").unwrap();
    }
    out.push('\n');
    for n in 0..result.len() {
        write!(out, "{n}").unwrap();
        for o in &seed.outcomes {
            match o {
                Ok(e) => write!(out, ",{},{}", e[n].re, e[n].im).unwrap(),
                Err(_) => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads one complex column pair (`<label>_re`, `<label>_im`) from a
/// residuals CSV; the first pair when `label` is `None`.
pub fn read_residuals_csv(text: &str, label: Option<&str>) -> Result<(String, Vec<ComplexSample>), String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or("empty CSV")?.split(',').collect();
    let re_col = match label {
        Some(l) => header.iter().position(|h| *h == format!("{l}_re")),
        None => header.iter().position(|h| h.ends_with("_re")),
    }
    .ok_or("no matching _re column")?;
    let name = header[re_col].trim_end_matches("_re").to_string();
    let im_col = header
        .iter()
        .position(|h| *h == format!("{name}_im"))
        .ok_or_else(|| format!("no {name}_im column"))?;
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let get = |c: usize| -> Result<f64, String> {
            cells
                .get(c)
                .ok_or_else(|| format!("row {}: missing column", i + 1))?
                .parse::<f64>()
                .map_err(|e| format!("row {}: {e}", i + 1))
        };
        out.push(ComplexSample::new(get(re_col)?, get(im_col)?));
    }
    Ok((name, out))
}

/// `frequency,power_db` rows.
pub fn render_psd_csv(points: &[PsdPoint]) -> String {
    let mut out = String::new();
    out.push_str(CSV_VERSION_LINE);
    out.push_str("\nfrequency,power_db\n");
    for p in points {
        writeln!(out, "{},{}", p.frequency, p.power_db).unwrap();
    }
    out
}
