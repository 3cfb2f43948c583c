//! Adaptive digital cancellers: LMS over polynomial regressors with
//! learned (AOP), fixed (HP, IH), whitened (HP-W) or table-driven bases.
//!
//! Every canceller is an LMS filter over `φ = T·v`, where `v` holds the raw
//! odd monomials `[x, |x|²x, |x|⁴x, …]` and `T` is lower triangular. The
//! algorithms differ only in how `T` and the per-order step sizes are chosen.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moments::{estimate_moments, gaussian_moments, MomentError, MomentKind, MomentVector};
use crate::numerics::{cholesky, invert_lower_triangular, self_convolve, ComplexSample, NumericsError, RealMatrix};
use crate::orthopoly::{build_basis, BasisDocument, BasisError, OrthonormalBasis};

/// `‖h‖` above this is treated as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Cap on the update gain `Σ μᵢ|φᵢ|²`. Polynomial regressors are heavy
/// tailed, so a rare large sample would otherwise overshoot by orders of
/// magnitude; capped updates land exactly on the a-posteriori zero.
pub const MAX_UPDATE_GAIN: f64 = 1.0;

/// Ridge escalations tried when a whitening covariance is not positive definite.
const RIDGE_ESCALATIONS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CancellerError {
    #[error("weights diverged at sample {sample} (norm {norm})")]
    Diverged { sample: usize, norm: f64 },
    #[error("invalid canceller configuration: {0}")]
    Config(String),
    #[error("streams differ in length: x has {x}, y has {y}")]
    Length { x: usize, y: usize },
    #[error("MCS '{0}' is not in the lookup table")]
    UnknownMcs(String),
    #[error("lookup table: {0}")]
    Lut(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Moments(#[from] MomentError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "aop")]
    Aop,
    #[serde(rename = "hp")]
    Hp,
    #[serde(rename = "ih")]
    Ih,
    #[serde(rename = "hp-w", alias = "hp-whitened")]
    HpWhitened,
    #[serde(rename = "aop-lut", alias = "lut")]
    Lut,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Aop => "aop",
            Algorithm::Hp => "hp",
            Algorithm::Ih => "ih",
            Algorithm::HpWhitened => "hp-w",
            Algorithm::Lut => "aop-lut",
        }
    }
}

/// What happens to the weights when the basis is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightHandling {
    /// Re-express the current filter in the new basis.
    #[default]
    Remap,
    /// Restart from zero.
    Reset,
}

fn default_order() -> usize {
    7
}
fn default_taps() -> usize {
    9
}
fn default_step() -> f64 {
    0.02
}
fn default_n_max() -> usize {
    55
}
fn default_n_int() -> usize {
    3000
}
fn default_ridge() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CancellerConfig {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub label: Option<String>,
    /// Highest polynomial order `P` (odd).
    #[serde(default = "default_order")]
    pub order: usize,
    /// Filter length `L`.
    #[serde(default = "default_taps")]
    pub taps: usize,
    /// Taps ahead of the current sample (non-causal part of `L`).
    #[serde(default)]
    pub pre_cursor: usize,
    #[serde(default = "default_step")]
    pub step_size: f64,
    /// Samples collected for moment estimation at the start of each interval.
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Interval between basis re-estimations.
    #[serde(default = "default_n_int")]
    pub n_int: usize,
    /// Covariance window of the whitened baseline; defaults to `n_max`.
    #[serde(default)]
    pub n_cov: Option<usize>,
    /// Diagonal loading of the whitening covariance, relative to its mean diagonal.
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub weight_handling: WeightHandling,
    #[serde(default)]
    pub lut_path: Option<String>,
}

impl CancellerConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            label: None,
            order: default_order(),
            taps: default_taps(),
            pre_cursor: 0,
            step_size: default_step(),
            n_max: default_n_max(),
            n_int: default_n_int(),
            n_cov: None,
            ridge: default_ridge(),
            weight_handling: WeightHandling::Remap,
            lut_path: None,
        }
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn with_taps(mut self, taps: usize) -> Self {
        self.taps = taps;
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step_size = step;
        self
    }

    pub fn with_schedule(mut self, n_max: usize, n_int: usize) -> Self {
        self.n_max = n_max;
        self.n_int = n_int;
        self
    }

    pub fn with_weight_handling(mut self, w: WeightHandling) -> Self {
        self.weight_handling = w;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.algorithm.name().to_string())
    }

    pub fn n_cov(&self) -> usize {
        self.n_cov.unwrap_or(self.n_max)
    }

    /// `(P+1)/2`, the number of odd basis functions.
    pub fn nominal_rank(&self) -> usize {
        (self.order + 1) / 2
    }

    fn collection_len(&self) -> usize {
        match self.algorithm {
            Algorithm::HpWhitened => self.n_cov(),
            _ => self.n_max,
        }
    }

    pub fn validate(&self) -> Result<(), CancellerError> {
        let bad = |m: String| Err(CancellerError::Config(m));
        if self.order == 0 || self.order % 2 == 0 {
            return bad(format!("order P must be odd and positive, got {}", self.order));
        }
        if self.taps == 0 {
            return bad("taps L must be at least 1".into());
        }
        if self.pre_cursor >= self.taps {
            return bad(format!("pre_cursor {} must be below taps {}", self.pre_cursor, self.taps));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size must be positive, got {}", self.step_size));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad(format!("ridge must be non-negative, got {}", self.ridge));
        }
        if self.algorithm != Algorithm::Lut {
            let n = self.collection_len();
            if n == 0 || n >= self.n_int {
                return bad(format!("collection length {n} must be in 1..n_int ({})", self.n_int));
            }
        }
        Ok(())
    }
}

/// Regressor for one window: `window[ℓ] = x[n−ℓ]`, output index `p·L + ℓ`.
pub fn make_regressor(window: &[ComplexSample], basis: &OrthonormalBasis) -> Vec<ComplexSample> {
    let taps = window.len();
    let r = basis.effective_rank();
    let mut out = vec![ComplexSample::new(0.0, 0.0); taps * r];
    let mut vals = vec![ComplexSample::new(0.0, 0.0); r];
    for (l, &x) in window.iter().enumerate() {
        basis.evaluate_into(x, &mut vals);
        for (p, v) in vals.iter().enumerate() {
            out[p * taps + l] = *v;
        }
    }
    out
}

/// LMS filter with per-entry step sizes: `ŷ = hᴴφ`, `e = y − ŷ`, `h ← h + μ·φ·e*`.
///
/// When `Σ μᵢ|φᵢ|²` exceeds [`MAX_UPDATE_GAIN`] the whole update is scaled
/// down to that gain; ordinary samples are unaffected.
#[derive(Debug, Clone, PartialEq)]
pub struct LmsFilter {
    weights: Vec<ComplexSample>,
    steps: Vec<f64>,
}

impl LmsFilter {
    pub fn new(len: usize, step: f64) -> Self {
        Self { weights: vec![ComplexSample::new(0.0, 0.0); len], steps: vec![step; len] }
    }

    pub fn with_weights(weights: Vec<ComplexSample>, step: f64) -> Self {
        let steps = vec![step; weights.len()];
        Self { weights, steps }
    }

    pub fn weights(&self) -> &[ComplexSample] {
        &self.weights
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn predict(&self, phi: &[ComplexSample]) -> ComplexSample {
        self.weights.iter().zip(phi).map(|(h, p)| h.conj() * p).sum()
    }

    /// One update; returns the a-priori error.
    pub fn step(&mut self, phi: &[ComplexSample], y: ComplexSample) -> Result<ComplexSample, CancellerError> {
        self.step_at(phi, y, 0)
    }

    fn step_at(&mut self, phi: &[ComplexSample], y: ComplexSample, sample: usize) -> Result<ComplexSample, CancellerError> {
        debug_assert_eq!(phi.len(), self.weights.len());
        let e = y - self.predict(phi);
        let gain: f64 = phi.iter().zip(&self.steps).map(|(p, mu)| mu * p.norm_sqr()).sum();
        let scale = if gain > MAX_UPDATE_GAIN { MAX_UPDATE_GAIN / gain } else { 1.0 };
        let ec = e.conj() * scale;
        for ((h, p), mu) in self.weights.iter_mut().zip(phi).zip(&self.steps) {
            *h += p * ec * mu;
        }
        let norm = self.norm();
        if !(norm <= DIVERGENCE_BOUND) {
            return Err(CancellerError::Diverged { sample, norm });
        }
        Ok(e)
    }
}

/// One-off update helper: applies a single LMS step with a shared step size.
pub fn lms_step(
    weights: &mut [ComplexSample],
    phi: &[ComplexSample],
    y: ComplexSample,
    step: f64,
) -> Result<ComplexSample, CancellerError> {
    if weights.len() != phi.len() {
        return Err(CancellerError::Config(format!("{} weights for a regressor of {}", weights.len(), phi.len())));
    }
    let mut f = LmsFilter::with_weights(weights.to_vec(), step);
    let e = f.step(phi, y)?;
    weights.copy_from_slice(f.weights());
    Ok(e)
}

/// Pre-computed odd monomials `|x|^{2k}x` for every sample.
struct Monomials {
    rank: usize,
    values: Vec<ComplexSample>,
}

impl Monomials {
    fn new(x: &[ComplexSample], rank: usize) -> Self {
        let mut values = Vec::with_capacity(x.len() * rank);
        for &v in x {
            let a2 = v.norm_sqr();
            let mut m = v;
            for _ in 0..rank {
                values.push(m);
                m *= a2;
            }
        }
        Self { rank, values }
    }

    fn at(&self, n: usize) -> &[ComplexSample] {
        &self.values[n * self.rank..(n + 1) * self.rank]
    }
}

/// Basis-transform state shared by all algorithms.
struct Engine {
    taps: usize,
    pre: usize,
    transform: RealMatrix,
    order_steps: Vec<f64>,
    filter: LmsFilter,
    phi: Vec<ComplexSample>,
}

impl Engine {
    fn new(cfg: &CancellerConfig, transform: RealMatrix, order_steps: Vec<f64>) -> Self {
        let r = transform.rows();
        let mut e = Self {
            taps: cfg.taps,
            pre: cfg.pre_cursor,
            transform,
            order_steps: Vec::new(),
            filter: LmsFilter::new(r * cfg.taps, 0.0),
            phi: vec![ComplexSample::new(0.0, 0.0); r * cfg.taps],
        };
        e.set_steps(order_steps);
        e
    }

    fn rank(&self) -> usize {
        self.transform.rows()
    }

    fn set_steps(&mut self, order_steps: Vec<f64>) {
        self.filter.steps = order_steps.iter().flat_map(|&s| std::iter::repeat_n(s, self.taps)).collect();
        self.order_steps = order_steps;
    }

    fn set_transform(&mut self, transform: RealMatrix, weights: Vec<ComplexSample>, order_steps: Vec<f64>) {
        self.phi = vec![ComplexSample::new(0.0, 0.0); transform.rows() * self.taps];
        self.transform = transform;
        self.filter.weights = weights;
        self.set_steps(order_steps);
    }

    fn fill_regressor(&mut self, mono: &Monomials, n: usize, len: usize) {
        let r = self.rank();
        for l in 0..self.taps {
            let idx = (n + self.pre).checked_sub(l).filter(|&i| i < len);
            match idx {
                Some(i) => {
                    let v = mono.at(i);
                    for p in 0..r {
                        let row = self.transform.row(p);
                        let mut acc = ComplexSample::new(0.0, 0.0);
                        for k in 0..=p {
                            acc += v[k] * row[k];
                        }
                        self.phi[p * self.taps + l] = acc;
                    }
                }
                None => {
                    for p in 0..r {
                        self.phi[p * self.taps + l] = ComplexSample::new(0.0, 0.0);
                    }
                }
            }
        }
    }

    fn process(&mut self, mono: &Monomials, n: usize, len: usize, y: ComplexSample, adapt: bool) -> Result<ComplexSample, CancellerError> {
        self.fill_regressor(mono, n, len);
        if adapt {
            self.filter.step_at(&self.phi, y, n)
        } else {
            Ok(y - self.filter.predict(&self.phi))
        }
    }

    /// Raw-monomial weights `g = Tᵀh`, per tap.
    fn monomial_weights(&self) -> Vec<Vec<ComplexSample>> {
        let r = self.rank();
        (0..self.taps)
            .map(|l| {
                (0..r)
                    .map(|k| (k..r).map(|p| self.filter.weights[p * self.taps + l] * self.transform[(p, k)]).sum())
                    .collect()
            })
            .collect()
    }
}

/// Re-expresses a filter in a new basis.
///
/// When the new basis spans the old one the output is preserved exactly and
/// the added orders start at zero. When it is smaller, the old filter is
/// projected onto it under the new basis's moments (for 4QAM this folds every
/// order into the linear term, which is exact because `|x| = 1`).
pub fn remap_weights(
    g_per_tap: &[Vec<ComplexSample>],
    new_transform: &RealMatrix,
    new_moments: Option<&MomentVector>,
) -> Vec<ComplexSample> {
    let taps = g_per_tap.len();
    let r_new = new_transform.rows();
    let mut h = vec![ComplexSample::new(0.0, 0.0); r_new * taps];
    for (l, g) in g_per_tap.iter().enumerate() {
        let r_old = g.len();
        let projected = if r_new < r_old {
            new_moments.and_then(|mu| {
                let mut out = vec![ComplexSample::new(0.0, 0.0); r_new];
                for (p, o) in out.iter_mut().enumerate() {
                    for j in 0..=p {
                        let mut inner = ComplexSample::new(0.0, 0.0);
                        for (k, gk) in g.iter().enumerate() {
                            inner += gk * mu.absolute(2 * (j + k + 1))?;
                        }
                        *o += inner * new_transform[(p, j)];
                    }
                }
                Some(out)
            })
        } else {
            None
        };
        let hl = projected.unwrap_or_else(|| {
            // solve Tᵀh = g (upper triangular) with g padded or truncated
            let mut out = vec![ComplexSample::new(0.0, 0.0); r_new];
            for p in (0..r_new).rev() {
                let mut acc = g.get(p).copied().unwrap_or_default();
                for (q, oq) in out.iter().enumerate().skip(p + 1) {
                    acc -= oq * new_transform[(q, p)];
                }
                out[p] = acc / new_transform[(p, p)];
            }
            out
        });
        for (p, v) in hl.into_iter().enumerate() {
            h[p * taps + l] = v;
        }
    }
    h
}

/// Lookup table from MCS identifier to a pre-computed basis.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct McsLut {
    entries: BTreeMap<String, OrthonormalBasis>,
}

impl McsLut {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, mcs: impl Into<String>, basis: OrthonormalBasis) {
        self.entries.insert(mcs.into(), basis);
    }

    pub fn get(&self, mcs: &str) -> Result<&OrthonormalBasis, CancellerError> {
        self.entries.get(mcs).ok_or_else(|| CancellerError::UnknownMcs(mcs.to_string()))
    }

    pub fn contains(&self, mcs: &str) -> bool {
        self.entries.contains_key(mcs)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        let docs: BTreeMap<&str, BasisDocument> = self.entries.iter().map(|(k, b)| (k.as_str(), b.to_document())).collect();
        serde_json::to_string_pretty(&docs).expect("LUT serializes")
    }

    /// Parses `{mcs_id: basis document}`; every entry is validated.
    pub fn from_json(s: &str) -> Result<Self, CancellerError> {
        let docs: BTreeMap<String, BasisDocument> =
            serde_json::from_str(s).map_err(|e| CancellerError::Lut(e.to_string()))?;
        let mut lut = Self::new();
        for (id, doc) in docs {
            let basis = OrthonormalBasis::from_document(doc).map_err(|e| CancellerError::Lut(format!("{id}: {e}")))?;
            lut.insert(id, basis);
        }
        Ok(lut)
    }
}

/// A basis (re)construction during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RebuildEvent {
    pub sample: usize,
    pub rank: usize,
    /// Ridge actually applied (whitened baseline only).
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CancellerRun {
    pub errors: Vec<ComplexSample>,
    pub rebuilds: Vec<RebuildEvent>,
    /// Final weights, index `p·L + ℓ`.
    pub weights: Vec<ComplexSample>,
    /// Final `T` mapping raw monomials to the regressor.
    pub transform: RealMatrix,
    /// Final basis for algorithms that hold one (AOP, IH, LUT).
    pub basis: Option<OrthonormalBasis>,
}

impl CancellerRun {
    /// Final weights expressed on raw monomials, per tap: `g[ℓ][k]`.
    pub fn monomial_weights(&self, taps: usize) -> Vec<Vec<ComplexSample>> {
        let r = self.transform.rows();
        (0..taps)
            .map(|l| {
                (0..r)
                    .map(|k| (k..r).map(|p| self.weights[p * taps + l] * self.transform[(p, k)]).sum())
                    .collect()
            })
            .collect()
    }

    pub fn error_power(&self) -> Vec<f64> {
        self.errors.iter().map(|e| e.norm_sqr()).collect()
    }
}

/// Side information a run may need.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunContext<'a> {
    pub lut: Option<&'a McsLut>,
    /// `(start sample, MCS id)` per segment.
    pub mcs_markers: &'a [(usize, String)],
}

fn power_normalized(step: f64, powers: impl Iterator<Item = f64>) -> Vec<f64> {
    powers.map(|p| if p > 0.0 { step / p } else { step }).collect()
}

/// Whitening transform `L⁻¹` of the second-moment matrix of `v`, with
/// escalating diagonal loading.
fn whitening_transform(
    mono: &Monomials,
    range: std::ops::Range<usize>,
    ridge: f64,
) -> Option<(RealMatrix, f64)> {
    let r = mono.rank;
    let n = range.len() as f64;
    let mut cov = RealMatrix::zeros(r, r);
    for i in range {
        let v = mono.at(i);
        for a in 0..r {
            for b in 0..=a {
                cov[(a, b)] += (v[a] * v[b].conj()).re;
            }
        }
    }
    for a in 0..r {
        for b in 0..=a {
            cov[(a, b)] /= n;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    let mean_diag = (0..r).map(|i| cov[(i, i)]).sum::<f64>() / r as f64;
    let mut load = ridge;
    for attempt in 0..=RIDGE_ESCALATIONS {
        if attempt > 0 {
            load = if load > 0.0 { load * 10.0 } else { 1e-12 };
        }
        let mut c = cov.clone();
        for i in 0..r {
            c[(i, i)] += load * mean_diag;
        }
        if let Ok(l) = cholesky(&c) {
            if let Ok(t) = invert_lower_triangular(&l) {
                return Some((t, load));
            }
        }
    }
    None
}

pub fn run_canceller(
    x: &[ComplexSample],
    y: &[ComplexSample],
    cfg: &CancellerConfig,
    ctx: RunContext<'_>,
) -> Result<CancellerRun, CancellerError> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(CancellerError::Length { x: x.len(), y: y.len() });
    }
    match cfg.algorithm {
        Algorithm::Lut => run_lut_inner(x, y, cfg, ctx),
        _ => run_tracked(x, y, cfg),
    }
}

/// AOP, HP, IH and HP-W: the basis or step normalization is re-derived from
/// the first `n_max` (or `n_cov`) samples of every `n_int` interval. Weights
/// are held while those samples are collected.
fn run_tracked(x: &[ComplexSample], y: &[ComplexSample], cfg: &CancellerConfig) -> Result<CancellerRun, CancellerError> {
    let r_max = cfg.nominal_rank();
    let mono = Monomials::new(x, r_max);
    let n_collect = cfg.collection_len();
    let ih_basis = match cfg.algorithm {
        Algorithm::Ih => Some(build_basis(&gaussian_moments(1.0, cfg.order), cfg.order)?),
        _ => None,
    };
    let initial = match &ih_basis {
        Some(b) => b.change_of_basis(),
        None => RealMatrix::identity(r_max),
    };
    let initial_rank = initial.rows();
    let mut engine = Engine::new(cfg, initial, vec![cfg.step_size; initial_rank]);
    let mut basis: Option<OrthonormalBasis> = ih_basis.clone();
    let mut rebuilds = Vec::new();
    let mut errors = Vec::with_capacity(x.len());
    for n in 0..x.len() {
        let offset = n % cfg.n_int;
        if offset == n_collect {
            let window = n - n_collect..n;
            let mu = estimate_moments(&x[window.clone()], cfg.order, MomentKind::EvenOnly)?;
            match cfg.algorithm {
                Algorithm::Aop => {
                    if let Ok(b) = build_basis(&mu, cfg.order) {
                        let t = b.change_of_basis();
                        let weights = match cfg.weight_handling {
                            WeightHandling::Remap => remap_weights(&engine.monomial_weights(), &t, Some(&mu)),
                            WeightHandling::Reset => vec![ComplexSample::new(0.0, 0.0); t.rows() * cfg.taps],
                        };
                        rebuilds.push(RebuildEvent { sample: n, rank: b.effective_rank(), ridge: None });
                        engine.set_transform(t, weights, vec![cfg.step_size; b.effective_rank()]);
                        basis = Some(b);
                    }
                }
                Algorithm::Hp => {
                    let steps = power_normalized(
                        cfg.step_size,
                        (0..r_max).map(|k| mu.absolute(2 * (2 * k + 1)).unwrap_or(0.0)),
                    );
                    engine.set_steps(steps);
                    rebuilds.push(RebuildEvent { sample: n, rank: r_max, ridge: None });
                }
                Algorithm::Ih => {
                    let b = ih_basis.as_ref().expect("IH basis");
                    let powers = b.coeffs().iter().map(|c| {
                        self_convolve(c)
                            .iter()
                            .enumerate()
                            .map(|(k, v)| v * mu.absolute(2 * (k + 1)).unwrap_or(0.0))
                            .sum::<f64>()
                    });
                    engine.set_steps(power_normalized(cfg.step_size, powers));
                    rebuilds.push(RebuildEvent { sample: n, rank: b.effective_rank(), ridge: None });
                }
                Algorithm::HpWhitened => {
                    if let Some((t, load)) = whitening_transform(&mono, window, cfg.ridge) {
                        // whitened-domain weights carry over unchanged
                        let weights = match cfg.weight_handling {
                            WeightHandling::Remap => engine.filter.weights.clone(),
                            WeightHandling::Reset => vec![ComplexSample::new(0.0, 0.0); r_max * cfg.taps],
                        };
                        engine.set_transform(t, weights, vec![cfg.step_size; r_max]);
                        rebuilds.push(RebuildEvent { sample: n, rank: r_max, ridge: Some(load) });
                    }
                }
                Algorithm::Lut => unreachable!("LUT runs are not tracked"),
            }
        }
        let adapt = offset >= n_collect;
        errors.push(engine.process(&mono, n, x.len(), y[n], adapt)?);
    }
    Ok(CancellerRun {
        errors,
        rebuilds,
        weights: engine.filter.weights.clone(),
        transform: engine.transform.clone(),
        basis,
    })
}

fn run_lut_inner(
    x: &[ComplexSample],
    y: &[ComplexSample],
    cfg: &CancellerConfig,
    ctx: RunContext<'_>,
) -> Result<CancellerRun, CancellerError> {
    let lut = ctx.lut.ok_or_else(|| CancellerError::Lut("no lookup table supplied".into()))?;
    let markers = ctx.mcs_markers;
    if markers.first().map(|m| m.0) != Some(0) {
        return Err(CancellerError::Config("MCS markers must start at sample 0".into()));
    }
    if markers.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(CancellerError::Config("MCS markers must increase".into()));
    }
    for (_, id) in markers {
        let b = lut.get(id)?;
        if b.max_order() < cfg.order.min(b.max_order()) {
            return Err(CancellerError::Lut(format!("{id}: basis order below P")));
        }
    }
    let r_max = markers.iter().map(|(_, id)| lut.get(id).map(|b| b.effective_rank())).try_fold(0, |a, r| r.map(|r| a.max(r)))?;
    let mono = Monomials::new(x, r_max.max(cfg.nominal_rank()));
    let first = lut.get(&markers[0].1)?;
    let mut engine = Engine::new(cfg, first.change_of_basis(), vec![cfg.step_size; first.effective_rank()]);
    let mut basis = first.clone();
    let mut rebuilds = vec![RebuildEvent { sample: 0, rank: first.effective_rank(), ridge: None }];
    let mut next = 1;
    let mut errors = Vec::with_capacity(x.len());
    for n in 0..x.len() {
        while next < markers.len() && markers[next].0 == n {
            let b = lut.get(&markers[next].1)?;
            if *b != basis {
                let t = b.change_of_basis();
                let weights = match cfg.weight_handling {
                    WeightHandling::Remap => remap_weights(&engine.monomial_weights(), &t, Some(b.source_moments())),
                    WeightHandling::Reset => vec![ComplexSample::new(0.0, 0.0); t.rows() * cfg.taps],
                };
                engine.set_transform(t, weights, vec![cfg.step_size; b.effective_rank()]);
                basis = b.clone();
            }
            rebuilds.push(RebuildEvent { sample: n, rank: b.effective_rank(), ridge: None });
            next += 1;
        }
        errors.push(engine.process(&mono, n, x.len(), y[n], true)?);
    }
    Ok(CancellerRun {
        errors,
        rebuilds,
        weights: engine.filter.weights.clone(),
        transform: engine.transform.clone(),
        basis: Some(basis),
    })
}

/// AOP-LMS with interval moment learning.
pub fn run_aop(x: &[ComplexSample], y: &[ComplexSample], cfg: &CancellerConfig) -> Result<CancellerRun, CancellerError> {
    let cfg = CancellerConfig { algorithm: Algorithm::Aop, ..cfg.clone() };
    run_canceller(x, y, &cfg, RunContext::default())
}

/// Fixed-basis LMS: `Hp` or `Ih`.
pub fn run_fixed(
    x: &[ComplexSample],
    y: &[ComplexSample],
    kind: Algorithm,
    cfg: &CancellerConfig,
) -> Result<CancellerRun, CancellerError> {
    if !matches!(kind, Algorithm::Hp | Algorithm::Ih) {
        return Err(CancellerError::Config(format!("{} is not a fixed basis", kind.name())));
    }
    let cfg = CancellerConfig { algorithm: kind, ..cfg.clone() };
    run_canceller(x, y, &cfg, RunContext::default())
}

/// HP-LMS after whitening the per-sample monomial vector.
pub fn run_whitened(x: &[ComplexSample], y: &[ComplexSample], cfg: &CancellerConfig) -> Result<CancellerRun, CancellerError> {
    let cfg = CancellerConfig { algorithm: Algorithm::HpWhitened, ..cfg.clone() };
    run_canceller(x, y, &cfg, RunContext::default())
}

/// LMS whose basis is switched from a lookup table at each MCS marker.
pub fn run_lut(
    x: &[ComplexSample],
    y: &[ComplexSample],
    lut: &McsLut,
    mcs_markers: &[(usize, String)],
    cfg: &CancellerConfig,
) -> Result<CancellerRun, CancellerError> {
    let cfg = CancellerConfig { algorithm: Algorithm::Lut, ..cfg.clone() };
    run_canceller(x, y, &cfg, RunContext { lut: Some(lut), mcs_markers })
}

/// Sliding mean of `power` over `window` samples; entry `i` covers samples
/// `i+1 ..= i+window`, so the first value belongs to sample `window`.
pub fn windowed_mean(power: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || power.len() <= window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(power.len() - window);
    let mut acc: f64 = power[1..=window].iter().sum();
    out.push(acc / window as f64);
    for n in window + 1..power.len() {
        acc += power[n] - power[n - window];
        out.push(acc / window as f64);
    }
    // re-sum periodically would cost more than the drift it removes at these lengths
    out
}

/// Windowed MSE in dB relative to `si_power`, one value per sample from `window` on.
pub fn mse_trace(errors: &[ComplexSample], window: usize, si_power: f64) -> Vec<f64> {
    let p: Vec<f64> = errors.iter().map(|e| e.norm_sqr()).collect();
    windowed_mean(&p, window).into_iter().map(|v| 10.0 * (v / si_power).log10()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::qam_moments;
    use crate::numerics::{rng_complex_gaussian, RngState};
    use crate::signals::{generate, qam_constellation, DistributionSpec};
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> ComplexSample {
        ComplexSample::new(re, im)
    }

    fn gauss(n: usize, seed: u64) -> Vec<ComplexSample> {
        rng_complex_gaussian(&mut RngState::new(seed, 0), n, 1.0)
    }

    #[test]
    fn regressor_layout() {
        let b = build_basis(&gaussian_moments(1.0, 5), 5).unwrap();
        let w = gauss(4, 1);
        let r = make_regressor(&w, &b);
        assert_eq!(r.len(), 12);
        for (l, &x) in w.iter().enumerate() {
            let v = b.evaluate_regressor(x);
            for p in 0..3 {
                assert_eq!(r[p * 4 + l], v[p]);
            }
        }
        assert_eq!(make_regressor(&w[..1], &b), b.evaluate_regressor(w[0]));
        assert!(make_regressor(&[c(0.0, 0.0); 3], &b).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn lms_examples() {
        let mut h = vec![c(0.3, -0.1), c(0.2, 0.5)];
        let before = h.clone();
        let e = lms_step(&mut h, &[c(0.0, 0.0); 2], c(1.0, 2.0), 0.1).unwrap();
        assert_eq!(e, c(1.0, 2.0));
        assert_eq!(h, before);

        let mut h = vec![c(0.0, 0.0); 2];
        let phi = [c(1.0, 1.0), c(-0.5, 2.0)];
        let y = c(0.7, -0.2);
        lms_step(&mut h, &phi, y, 0.05).unwrap();
        for (hi, p) in h.iter().zip(&phi) {
            assert!((hi - p * y.conj() * 0.05).norm() < 1e-15);
        }
    }

    #[test]
    fn lms_converges_on_noiseless_linear_system() {
        let x = gauss(2001, 2);
        let truth = [c(0.8, -0.3), c(-0.25, 0.4)];
        let mut f = LmsFilter::new(2, 0.05);
        let mut last = f64::INFINITY;
        for n in 1..x.len() {
            let phi = [x[n], x[n - 1]];
            let y: ComplexSample = truth.iter().zip(&phi).map(|(h, p)| h.conj() * p).sum();
            last = f.step(&phi, y).unwrap().norm();
        }
        assert!(last < 1e-6, "{last}");
        for (h, t) in f.weights().iter().zip(&truth) {
            assert!((h - t).norm() < 1e-6);
        }
    }

    #[test]
    fn divergence_is_flagged() {
        let mut f = LmsFilter::with_weights(vec![c(DIVERGENCE_BOUND, 0.0)], 0.1);
        let result = f.step(&[c(1.0, 0.0)], c(1e7, 0.0));
        assert!(matches!(result, Err(CancellerError::Diverged { sample: 0, .. })));
        let mut f = LmsFilter::new(1, 0.1);
        assert!(matches!(f.step(&[c(f64::NAN, 0.0)], c(1.0, 0.0)), Err(CancellerError::Diverged { .. })));
    }

    #[test]
    fn large_regressor_update_is_capped() {
        let mut f = LmsFilter::new(2, 0.1);
        let phi = [c(30.0, 0.0), c(0.0, 40.0)];
        let y = c(2.0, -1.0);
        f.step(&phi, y).unwrap();
        // gain 0.1·2500 = 250 is capped to 1: the a-posteriori error vanishes
        assert!((y - f.predict(&phi)).norm() < 1e-12);
        let mut g = LmsFilter::new(1, 0.1);
        g.step(&[c(2.0, 0.0)], c(1.0, 0.0)).unwrap();
        assert!((g.weights()[0] - c(0.2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn remap_preserves_output() {
        let mu_a = qam_moments(&qam_constellation(16).unwrap(), 7).unwrap();
        let mu_b = gaussian_moments(1.3, 7);
        let a = build_basis(&mu_a, 7).unwrap();
        let b = build_basis(&mu_b, 7).unwrap();
        let taps = 3;
        let h: Vec<ComplexSample> = gauss(a.effective_rank() * taps, 3);
        let run = CancellerRun {
            errors: vec![],
            rebuilds: vec![],
            weights: h.clone(),
            transform: a.change_of_basis(),
            basis: None,
        };
        let h2 = remap_weights(&run.monomial_weights(taps), &b.change_of_basis(), Some(&mu_b));
        let window = gauss(taps, 4);
        let out = |basis: &OrthonormalBasis, w: &[ComplexSample]| -> ComplexSample {
            w.iter().zip(make_regressor(&window, basis)).map(|(h, p)| h.conj() * p).sum()
        };
        assert!((out(&a, &h) - out(&b, &h2)).norm() < 1e-10);
    }

    #[test]
    fn remap_onto_qpsk_folds_orders() {
        let mu = qam_moments(&qam_constellation(4).unwrap(), 7).unwrap();
        let q = build_basis(&mu, 7).unwrap();
        assert_eq!(q.effective_rank(), 1);
        let g = vec![vec![c(0.5, 0.1), c(-0.2, 0.0), c(0.05, 0.3), c(0.0, -0.1)]];
        let h = remap_weights(&g, &q.change_of_basis(), Some(&mu));
        let x = qam_constellation(4).unwrap()[2];
        let before: ComplexSample = g[0].iter().enumerate().map(|(k, gk)| gk.conj() * x * x.norm_sqr().powi(k as i32)).sum();
        let after = h[0].conj() * q.evaluate_regressor(x)[0];
        assert!((before - after).norm() < 1e-12);
    }

    fn planted_hp_system(x: &[ComplexSample], g: &[Vec<ComplexSample>]) -> Vec<ComplexSample> {
        (0..x.len())
            .map(|n| {
                let mut acc = c(0.0, 0.0);
                for (l, gl) in g.iter().enumerate() {
                    if n >= l {
                        let v = x[n - l];
                        for (k, gk) in gl.iter().enumerate() {
                            acc += gk.conj() * v * v.norm_sqr().powi(k as i32);
                        }
                    }
                }
                acc
            })
            .collect()
    }

    #[test]
    fn p1_algorithms_coincide() {
        let x = gauss(3000, 5);
        let y: Vec<ComplexSample> = x.iter().map(|v| v * c(0.9, 0.2)).collect();
        let cfg = CancellerConfig::new(Algorithm::Aop).with_order(1).with_taps(2).with_schedule(100, 1000);
        let a = run_aop(&x, &y, &cfg).unwrap().errors;
        let h = run_fixed(&x, &y, Algorithm::Hp, &cfg).unwrap().errors;
        let i = run_fixed(&x, &y, Algorithm::Ih, &cfg).unwrap().errors;
        for n in 0..x.len() {
            assert!((a[n] - h[n]).norm() < 1e-9 && (a[n] - i[n]).norm() < 1e-9, "sample {n}");
        }
    }

    #[test]
    fn aop_basis_is_built_from_collected_moments() {
        let x = gauss(3000, 6);
        let cfg = CancellerConfig::new(Algorithm::Aop).with_order(7).with_schedule(1000, 15_000);
        let run = run_aop(&x, &x, &cfg).unwrap();
        let want = build_basis(&estimate_moments(&x[..1000], 7, MomentKind::EvenOnly).unwrap(), 7).unwrap();
        assert_eq!(run.basis.unwrap(), want);
        assert_eq!(run.rebuilds.len(), 1);
        assert_eq!(run.rebuilds[0].sample, 1000);
    }

    #[test]
    fn aop_basis_tracks_gaussian() {
        // estimator spread grows factorially with order; at P=3 a 10⁶-sample
        // window puts the 2% band beyond three standard errors
        let x = gauss(1_000_001, 6);
        let cfg = CancellerConfig::new(Algorithm::Aop).with_order(3).with_taps(1).with_schedule(1_000_000, 2_000_000);
        let run = run_aop(&x, &x, &cfg).unwrap();
        let b = run.basis.unwrap();
        let ih = build_basis(&gaussian_moments(1.0, 3), 3).unwrap();
        for (p, q) in b.coeffs().iter().zip(ih.coeffs()) {
            for (u, v) in p.iter().zip(q) {
                assert!((u - v).abs() <= 0.02 * v.abs(), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn weights_held_during_collection() {
        let x = gauss(500, 7);
        let y: Vec<ComplexSample> = x.iter().map(|v| v * 0.5).collect();
        let cfg = CancellerConfig::new(Algorithm::Aop).with_order(3).with_taps(1).with_schedule(50, 200);
        let run = run_aop(&x, &y, &cfg).unwrap();
        assert_eq!(&run.errors[..50], &y[..50]);
        assert_eq!(run.rebuilds.iter().map(|r| r.sample).collect::<Vec<_>>(), vec![50, 250, 450]);
    }

    #[test]
    fn whitened_gram_is_identity_for_large_window() {
        let x = gauss(1_000_000, 8);
        let mono = Monomials::new(&x, 2);
        let (t, _) = whitening_transform(&mono, 0..x.len(), 0.0).unwrap();
        // population second-moment matrix of [x, |x|²x]: E|x|^{2(i+j+1)} = (i+j+1)!
        let fact = [1.0, 2.0, 6.0];
        let cov = RealMatrix::from_fn(2, 2, |i, j| fact[i + j]);
        let gram = t.matmul(&cov).matmul(&t.transpose());
        assert!(gram.max_abs_diff(&RealMatrix::identity(2)) < 0.05, "{gram:?}");
    }

    #[test]
    fn whitened_on_white_input_matches_plain_lms() {
        // constant-modulus input makes the monomial covariance the all-ones
        // matrix at P=1, i.e. identity: whitening is a no-op
        let x: Vec<ComplexSample> = (0..2000).map(|k| ComplexSample::from_polar(1.0, 0.7 * k as f64)).collect();
        let y: Vec<ComplexSample> = x.iter().map(|v| v * c(0.4, -0.9)).collect();
        let mut cfg = CancellerConfig::new(Algorithm::HpWhitened).with_order(1).with_taps(1).with_schedule(10, 5000);
        cfg.ridge = 0.0;
        let run = run_whitened(&x, &y, &cfg).unwrap();
        let mut f = LmsFilter::new(1, cfg.step_size);
        for n in 0..x.len() {
            let e = if n < 10 { y[n] } else { f.step(&[x[n]], y[n]).unwrap() };
            assert!((e - run.errors[n]).norm() < 1e-12);
        }
    }

    #[test]
    fn lut_single_entry_matches_fixed_ih() {
        let x = gauss(3000, 9);
        let y: Vec<ComplexSample> = x.iter().map(|v| v * (1.0 + 0.1 * v.norm_sqr())).collect();
        let ih = build_basis(&gaussian_moments(1.0, 5), 5).unwrap();
        let mut lut = McsLut::new();
        lut.insert("gauss", ih.clone());
        let markers = vec![(0, "gauss".to_string())];
        let cfg = CancellerConfig::new(Algorithm::Lut).with_order(5).with_taps(2);
        let run = run_lut(&x, &y, &lut, &markers, &cfg).unwrap();
        let mut f = LmsFilter::new(6, cfg.step_size);
        for n in 0..x.len() {
            let window = [x[n], if n > 0 { x[n - 1] } else { c(0.0, 0.0) }];
            let e = f.step(&make_regressor(&window, &ih), y[n]).unwrap();
            assert!((e - run.errors[n]).norm() < 1e-9, "{n}: {}", (e - run.errors[n]).norm());
        }
        let missing = vec![(0, "256qam".to_string())];
        assert!(matches!(run_lut(&x, &y, &lut, &missing, &cfg), Err(CancellerError::UnknownMcs(_))));
    }

    #[test]
    fn lut_json_round_trip_and_rank_one() {
        let mut lut = McsLut::new();
        for order in [4, 16] {
            let mu = qam_moments(&qam_constellation(order).unwrap(), 7).unwrap();
            lut.insert(format!("{order}qam"), build_basis(&mu, 7).unwrap());
        }
        let back = McsLut::from_json(&lut.to_json()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.get("4qam").unwrap().effective_rank(), 1);
        let x = generate(&DistributionSpec::qam(4), 500, &mut RngState::new(1, 0));
        let y = x.clone();
        let run = run_lut(&x, &y, &back, &[(0, "4qam".into())], &CancellerConfig::new(Algorithm::Lut)).unwrap();
        assert_eq!(run.weights.len(), 9);
        assert!(McsLut::from_json("{\"x\": {\"family\": \"odd-only\"}}").is_err());
    }

    #[test]
    fn theorem2_exact_reproduction() {
        let b = build_basis(&gaussian_moments(1.0, 7), 7).unwrap();
        let g = vec![
            vec![c(1.0, 0.2), c(-0.1, 0.05), c(0.01, 0.0), c(-0.002, 0.001)],
            vec![c(0.3, -0.4), c(0.02, -0.03), c(0.0, 0.004), c(0.0005, 0.0)],
        ];
        let h = remap_weights(&g, &b.change_of_basis(), None);
        let x = gauss(500, 10);
        let y = planted_hp_system(&x, &g);
        for n in 1..x.len() {
            let reg = make_regressor(&[x[n], x[n - 1]], &b);
            let yhat: ComplexSample = h.iter().zip(&reg).map(|(w, p)| w.conj() * p).sum();
            assert!((yhat - y[n]).norm() < 1e-10 * (1.0 + y[n].norm()));
        }
    }

    #[test]
    fn mse_examples() {
        let e = vec![c(0.1, 0.0); 20];
        let t = mse_trace(&e, 5, 1.0);
        assert_eq!(t.len(), 15);
        assert!(t.iter().all(|v| (v + 20.0).abs() < 1e-9));
        let e: Vec<ComplexSample> = (0..6).map(|k| c(k as f64, 0.0)).collect();
        let t = mse_trace(&e, 1, 1.0);
        for (n, v) in t.iter().enumerate() {
            assert_abs_diff_eq!(*v, 10.0 * ((n + 1) as f64).powi(2).log10(), epsilon = 1e-12);
        }
        let noise = rng_complex_gaussian(&mut RngState::new(11, 0), 20_000, 1e-5);
        let t = mse_trace(&noise, 1000, 1.0);
        assert!(t.iter().all(|v| (v + 50.0).abs() < 0.5));
    }

    #[test]
    fn config_validation_and_json() {
        assert!(CancellerConfig::new(Algorithm::Aop).with_order(4).validate().is_err());
        assert!(CancellerConfig::new(Algorithm::Aop).with_schedule(100, 100).validate().is_err());
        assert!(CancellerConfig::new(Algorithm::Aop).with_step(0.0).validate().is_err());
        let cfg: CancellerConfig = serde_json::from_str(r#"{"algorithm":"hp-w","n_cov":200,"n_int":1000}"#).unwrap();
        assert_eq!(cfg.algorithm, Algorithm::HpWhitened);
        assert_eq!(cfg.n_cov(), 200);
        assert_eq!(cfg.label(), "hp-w");
        assert!(serde_json::from_str::<CancellerConfig>(r#"{"algorithm":"aop","tap":3}"#).is_err());
    }
}
