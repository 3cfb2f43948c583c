//! Orthonormal polynomial bases built from signal moments.
//!
//! For the odd-only family, basis function `p` (1-based) is
//! `φ_p(x) = Σ_{k<p} ĉ_{p,k}·|x|^{2k}·x`. The monic coefficients come from a
//! Hankel system in the even moments and the Hankel inverses are grown one
//! order at a time through the Schur complement of the newly bordered matrix,
//! so each new order costs O(p²) instead of a fresh O(p³) solve.
//!
//! The extended family holds ordinary polynomials `Φ_d(a) = Σ_{k≤d} ĉ_{d,k}·a^k`
//! in the amplitude `a = |x|`, orthonormalised against moments of every order.
//! For positive real signals this reproduces the classical Laguerre forms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moments::{MomentKind, MomentVector};
use crate::numerics::{self, invert_lower_triangular, self_convolve, ComplexSample, NumericsError, RealMatrix};

/// Relative threshold on the Schur pivot below which the next order is
/// treated as nonexistent.
pub const RANK_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("moment vector holds orders up to {available}, order {needed} is required")]
    InsufficientMoments { needed: usize, available: usize },
    #[error("no orthogonal polynomial of order {0} exists for these moments")]
    RankDeficient(usize),
    #[error("normalization power {0:e} is not positive")]
    NonPositiveNorm(f64),
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error("invalid basis document: {0}")]
    Document(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    OddOnly,
    Extended,
}

impl BasisFamily {
    /// Gram entry `E[b_i·b_j]` of the raw monomials depends only on `i + j`;
    /// this maps that index sum to the absolute moment order.
    fn gram_order(self, k: usize) -> usize {
        match self {
            BasisFamily::OddOnly => 2 * (k + 1),
            BasisFamily::Extended => k,
        }
    }

    fn moment_kind(self) -> MomentKind {
        match self {
            BasisFamily::OddOnly => MomentKind::EvenOnly,
            BasisFamily::Extended => MomentKind::AllOrders,
        }
    }
}

fn gram_moment(mu: &MomentVector, family: BasisFamily, k: usize) -> Result<f64, BasisError> {
    let order = family.gram_order(k);
    mu.absolute(order)
        .ok_or(BasisError::InsufficientMoments { needed: order, available: mu.max_order() })
}

/// Hankel matrix `M_p` ((p−1)×(p−1), entries `μ_{2(i+j+1)}`).
pub fn build_hankel(mu: &MomentVector, p: usize) -> Result<RealMatrix, BasisError> {
    build_gram(mu, BasisFamily::OddOnly, p.checked_sub(1).filter(|n| *n >= 1).ok_or_else(|| {
        BasisError::InvalidOrder(format!("Hankel order must be at least 2, got {p}"))
    })?)
}

fn build_gram(mu: &MomentVector, family: BasisFamily, n: usize) -> Result<RealMatrix, BasisError> {
    gram_moment(mu, family, 2 * n - 2)?;
    let mut m = RealMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = gram_moment(mu, family, i + j)?;
        }
    }
    Ok(m)
}

/// Monic coefficients `[c̄_p, 1]` of the order-`p` odd polynomial by a direct
/// solve of `M_p·c̄ = −μ_{2p..4p−4}`.
///
/// Fails with `RankDeficient(p)` when the moments cannot support an order-`p`
/// polynomial of positive norm (e.g. any unit-modulus constellation at `p = 2`).
pub fn solve_monic(mu: &MomentVector, p: usize) -> Result<Vec<f64>, BasisError> {
    solve_monic_in(mu, BasisFamily::OddOnly, p.checked_sub(1).ok_or_else(|| {
        BasisError::InvalidOrder("order must be at least 1".into())
    })?)
    .map_err(|e| match e {
        BasisError::RankDeficient(d) => BasisError::RankDeficient(d + 1),
        other => other,
    })
}

/// Direct-route monic polynomial of degree index `d` (0-based) in `family`.
fn solve_monic_in(mu: &MomentVector, family: BasisFamily, d: usize) -> Result<Vec<f64>, BasisError> {
    if d == 0 {
        return Ok(vec![1.0]);
    }
    let m = build_gram(mu, family, d)?;
    let rhs: Vec<f64> = (d..2 * d).map(|k| gram_moment(mu, family, k)).collect::<Result<_, _>>()?;
    let r = gram_moment(mu, family, 2 * d)?;
    let sol = match numerics::solve_symmetric(&m, &rhs) {
        Ok(s) => s,
        Err(NumericsError::SingularMatrix { .. }) => return Err(BasisError::RankDeficient(d)),
        Err(e) => return Err(e.into()),
    };
    let schur = r - rhs.iter().zip(&sol.x).map(|(a, b)| a * b).sum::<f64>();
    if schur <= RANK_EPS * r {
        return Err(BasisError::RankDeficient(d));
    }
    let mut c: Vec<f64> = sol.x.iter().map(|v| -v).collect();
    c.push(1.0);
    Ok(c)
}

/// Normalises a monic odd polynomial: returns `(ĉ, z²)` with
/// `z² = Σ_k c̃_k·μ_{2k}` where `c̃ = c ∗ c` and term `k = 1..2p−1` multiplies `μ_{2k}`.
pub fn normalize(c: &[f64], mu: &MomentVector) -> Result<(Vec<f64>, f64), BasisError> {
    normalize_in(c, mu, BasisFamily::OddOnly)
}

fn normalize_in(c: &[f64], mu: &MomentVector, family: BasisFamily) -> Result<(Vec<f64>, f64), BasisError> {
    let (z2, scale) = norm_sq_in(c, mu, family)?;
    // a norm lost in cancellation is as degenerate as a negative one
    if !(z2 > RANK_EPS * scale) {
        return Err(BasisError::NonPositiveNorm(z2));
    }
    let z = z2.sqrt();
    Ok((c.iter().map(|v| v / z).collect(), z2))
}

fn norm_sq_in(c: &[f64], mu: &MomentVector, family: BasisFamily) -> Result<(f64, f64), BasisError> {
    let sq = self_convolve(c);
    let (mut z2, mut scale) = (0.0, 0.0);
    for (k, v) in sq.iter().enumerate() {
        let g = gram_moment(mu, family, k)?;
        z2 += v * g;
        scale += (v * g).abs();
    }
    Ok((z2, scale))
}

/// Recursion state: the inverse of `M_p` and the last Schur pivot.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelState {
    family: BasisFamily,
    p: usize,
    inverse: RealMatrix,
    pivot: f64,
    last_extension_ops: usize,
}

impl HankelState {
    /// `M_2⁻¹ = [1/μ₂]`.
    pub fn initial(mu: &MomentVector) -> Result<Self, BasisError> {
        Self::initial_in(mu, BasisFamily::OddOnly)
    }

    fn initial_in(mu: &MomentVector, family: BasisFamily) -> Result<Self, BasisError> {
        let g0 = gram_moment(mu, family, 0)?;
        if !(g0 > 0.0) {
            return Err(BasisError::NonPositiveNorm(g0));
        }
        let mut inverse = RealMatrix::zeros(1, 1);
        inverse[(0, 0)] = 1.0 / g0;
        Ok(Self { family, p: 2, inverse, pivot: g0, last_extension_ops: 0 })
    }

    /// Order `p`: this state holds `M_p⁻¹`, of size `(p−1)×(p−1)`.
    pub fn order(&self) -> usize {
        self.p
    }

    pub fn inverse(&self) -> &RealMatrix {
        &self.inverse
    }

    pub fn pivot(&self) -> f64 {
        self.pivot
    }

    /// Multiply-adds spent by the extension that produced this state.
    pub fn last_extension_ops(&self) -> usize {
        self.last_extension_ops
    }

    /// `(u_p, ũ_p = M_p⁻¹u_p, s_p = r_p − u_pᵀũ_p, ops)` for the next border.
    fn border(&self, mu: &MomentVector) -> Result<(Vec<f64>, Vec<f64>, f64, f64, usize), BasisError> {
        let n = self.p - 1;
        let u: Vec<f64> = (n..2 * n).map(|k| gram_moment(mu, self.family, k)).collect::<Result<_, _>>()?;
        let r = gram_moment(mu, self.family, 2 * n)?;
        let u_tilde = self.inverse.matvec(&u);
        let s = r - u.iter().zip(&u_tilde).map(|(a, b)| a * b).sum::<f64>();
        Ok((u, u_tilde, s, r, n * n + n))
    }

    fn bordered(&self, u_tilde: &[f64], s: f64, ops_so_far: usize) -> Self {
        let n = self.p - 1;
        let inv_s = 1.0 / s;
        let mut next = RealMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                next[(i, j)] = self.inverse[(i, j)] + u_tilde[i] * inv_s * u_tilde[j];
            }
            next[(i, n)] = -u_tilde[i] * inv_s;
            next[(n, i)] = -u_tilde[i] * inv_s;
        }
        next[(n, n)] = inv_s;
        Self {
            family: self.family,
            p: self.p + 1,
            inverse: next,
            pivot: s,
            last_extension_ops: ops_so_far + 2 * n * n + n + 1,
        }
    }

    /// Grows `M_p⁻¹` to `M_{p+1}⁻¹` with the block-inverse formula.
    pub fn schur_extend(&self, mu: &MomentVector) -> Result<Self, BasisError> {
        let (_, u_tilde, s, r, ops) = self.border(mu)?;
        if s <= RANK_EPS * r {
            return Err(BasisError::RankDeficient(self.p));
        }
        Ok(self.bordered(&u_tilde, s, ops))
    }
}

/// Free-function form of [`HankelState::schur_extend`].
pub fn schur_extend(state: &HankelState, mu: &MomentVector) -> Result<HankelState, BasisError> {
    state.schur_extend(mu)
}

/// A set of orthonormal polynomials and the moments they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    family: BasisFamily,
    coeffs: Vec<Vec<f64>>,
    max_order: usize,
    effective_rank: usize,
    source_moments: MomentVector,
}

fn construct(mu: &MomentVector, family: BasisFamily, max_order: usize, n_funcs: usize) -> Result<OrthonormalBasis, BasisError> {
    // all moments the full construction could touch must be present
    gram_moment(mu, family, 2 * n_funcs - 2)?;

    let g0 = gram_moment(mu, family, 0)?;
    if !(g0 > 0.0) {
        return Err(BasisError::NonPositiveNorm(g0));
    }
    let mut coeffs = vec![vec![1.0 / g0.sqrt()]];
    let mut state = HankelState::initial_in(mu, family)?;
    for d in 1..n_funcs {
        let (_, u_tilde, s, r, ops) = state.border(mu)?;
        if s <= RANK_EPS * r {
            break;
        }
        let mut c: Vec<f64> = u_tilde.iter().map(|v| -v).collect();
        c.push(1.0);
        let (c_hat, _) = normalize_in(&c, mu, family)?;
        coeffs.push(c_hat);
        if d + 1 < n_funcs {
            state = state.bordered(&u_tilde, s, ops);
        }
    }
    let effective_rank = coeffs.len();
    Ok(OrthonormalBasis { family, coeffs, max_order, effective_rank, source_moments: mu.clone() })
}

/// Odd-only orthonormal basis up to polynomial order `P` (odd).
///
/// Construction stops at the first order whose Schur pivot vanishes; the
/// basis then holds only the lower orders (`effective_rank < (P+1)/2`).
pub fn build_basis(mu: &MomentVector, max_order: usize) -> Result<OrthonormalBasis, BasisError> {
    if max_order == 0 || max_order % 2 == 0 {
        return Err(BasisError::InvalidOrder(format!("P must be odd and positive, got {max_order}")));
    }
    construct(mu, BasisFamily::OddOnly, max_order, (max_order + 1) / 2)
}

/// Extended basis of ordinary polynomials of degree `0..=P` in the amplitude.
pub fn build_extended_basis(mu: &MomentVector, max_degree: usize) -> Result<OrthonormalBasis, BasisError> {
    if mu.kind() != MomentKind::AllOrders {
        return Err(BasisError::InvalidOrder("extended basis needs all-orders moments".into()));
    }
    construct(mu, BasisFamily::Extended, max_degree, max_degree + 1)
}

impl OrthonormalBasis {
    pub fn family(&self) -> BasisFamily {
        self.family
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn effective_rank(&self) -> usize {
        self.effective_rank
    }

    /// Number of basis functions the order bound allows.
    pub fn nominal_rank(&self) -> usize {
        match self.family {
            BasisFamily::OddOnly => (self.max_order + 1) / 2,
            BasisFamily::Extended => self.max_order + 1,
        }
    }

    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    pub fn source_moments(&self) -> &MomentVector {
        &self.source_moments
    }

    /// Monic form of function `i` (0-based).
    pub fn monic(&self, i: usize) -> Vec<f64> {
        let c = &self.coeffs[i];
        let lead = *c.last().expect("non-empty coefficients");
        c.iter().map(|v| v / lead).collect()
    }

    /// `z²` of function `i` (0-based): the power of its monic form.
    pub fn norm_sq(&self, i: usize) -> f64 {
        let lead = *self.coeffs[i].last().expect("non-empty coefficients");
        1.0 / (lead * lead)
    }

    /// Values of every basis function at `x`.
    pub fn evaluate_regressor(&self, x: ComplexSample) -> Vec<ComplexSample> {
        let mut out = vec![ComplexSample::new(0.0, 0.0); self.effective_rank];
        self.evaluate_into(x, &mut out);
        out
    }

    pub fn evaluate_into(&self, x: ComplexSample, out: &mut [ComplexSample]) {
        match self.family {
            BasisFamily::OddOnly => {
                let a2 = x.norm_sqr();
                for (o, c) in out.iter_mut().zip(&self.coeffs) {
                    let poly = c.iter().rev().fold(0.0, |acc, v| acc * a2 + v);
                    *o = x * poly;
                }
            }
            BasisFamily::Extended => {
                let a = x.norm();
                for (o, c) in out.iter_mut().zip(&self.coeffs) {
                    *o = ComplexSample::new(c.iter().rev().fold(0.0, |acc, v| acc * a + v), 0.0);
                }
            }
        }
    }

    /// Lower-triangular matrix whose row `p` holds `ĉ_p`: it maps the raw
    /// monomial regressor (`[x, |x|²x, …]` for the odd family) to basis values.
    pub fn change_of_basis(&self) -> RealMatrix {
        let r = self.effective_rank;
        RealMatrix::from_fn(r, r, |i, j| self.coeffs[i].get(j).copied().unwrap_or(0.0))
    }

    /// Inverse of [`Self::change_of_basis`].
    pub fn inverse_change_of_basis(&self) -> RealMatrix {
        invert_lower_triangular(&self.change_of_basis()).expect("basis matrix has a positive diagonal")
    }

    /// `E[φ_i*·φ_j]` evaluated exactly against the source moments.
    pub fn analytic_gram(&self) -> RealMatrix {
        let r = self.effective_rank;
        RealMatrix::from_fn(r, r, |i, j| {
            numerics::convolve(&self.coeffs[i], &self.coeffs[j])
                .iter()
                .enumerate()
                .map(|(k, v)| v * gram_moment(&self.source_moments, self.family, k).expect("moments cover the basis"))
                .sum()
        })
    }

    pub fn to_document(&self) -> BasisDocument {
        BasisDocument {
            family: self.family,
            max_order: self.max_order,
            effective_rank: self.effective_rank,
            coeffs: self.coeffs.clone(),
            moments: self.source_moments.values().to_vec(),
        }
    }

    /// Rebuilds a basis from its document, checking shape and unit norms.
    pub fn from_document(doc: BasisDocument) -> Result<Self, BasisError> {
        let bad = |m: String| BasisError::Document(m);
        let moments = MomentVector::new(doc.family.moment_kind(), doc.moments).map_err(|e| bad(e.to_string()))?;
        let basis = Self {
            family: doc.family,
            coeffs: doc.coeffs,
            max_order: doc.max_order,
            effective_rank: doc.effective_rank,
            source_moments: moments,
        };
        if basis.coeffs.len() != basis.effective_rank || basis.effective_rank == 0 {
            return Err(bad(format!(
                "effective_rank {} but {} coefficient vectors",
                basis.effective_rank,
                basis.coeffs.len()
            )));
        }
        if basis.family == BasisFamily::OddOnly && basis.max_order % 2 == 0 {
            return Err(bad(format!("odd-only basis with even P = {}", basis.max_order)));
        }
        if basis.effective_rank > basis.nominal_rank() {
            return Err(bad("effective_rank exceeds the order bound".into()));
        }
        for (i, c) in basis.coeffs.iter().enumerate() {
            if c.len() != i + 1 || c.iter().any(|v| !v.is_finite()) || c[i] <= 0.0 {
                return Err(bad(format!("coefficient vector {i} is malformed")));
            }
        }
        gram_moment(&basis.source_moments, basis.family, 2 * basis.effective_rank - 2)
            .map_err(|e| bad(e.to_string()))?;
        let gram = basis.analytic_gram();
        for i in 0..basis.effective_rank {
            if (gram[(i, i)] - 1.0).abs() > 1e-8 {
                return Err(bad(format!("function {i} has power {} under its own moments", gram[(i, i)])));
            }
        }
        Ok(basis)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("basis document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, BasisError> {
        let doc: BasisDocument = serde_json::from_str(s).map_err(|e| BasisError::Document(e.to_string()))?;
        Self::from_document(doc)
    }
}

/// JSON exchange form of an [`OrthonormalBasis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisDocument {
    pub family: BasisFamily,
    #[serde(rename = "P")]
    pub max_order: usize,
    pub effective_rank: usize,
    pub coeffs: Vec<Vec<f64>>,
    pub moments: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{exponential_moments, gaussian_moments, qam_moments, uniform_moments};
    use crate::signals::qam_constellation;
    use approx::assert_abs_diff_eq;

    fn qam(order: usize, k: usize) -> MomentVector {
        qam_moments(&qam_constellation(order).unwrap(), k).unwrap()
    }

    #[test]
    fn hankel_examples() {
        let g = gaussian_moments(1.0, 4);
        assert_eq!(build_hankel(&g, 3).unwrap().to_rows(), vec![vec![1.0, 2.0], vec![2.0, 6.0]]);
        let u = uniform_moments(1.0, 1);
        assert_eq!(build_hankel(&u, 2).unwrap().to_rows(), vec![vec![1.0 / 3.0]]);
        let h = build_hankel(&qam(16, 4), 3).unwrap();
        assert_abs_diff_eq!(h[(0, 1)], 1.32, epsilon = 1e-12);
        assert_abs_diff_eq!(h[(1, 1)], 1.96, epsilon = 1e-12);
        assert!(matches!(build_hankel(&g, 4), Err(BasisError::InsufficientMoments { needed: 10, .. })));
        assert!(matches!(build_hankel(&g, 1), Err(BasisError::InvalidOrder(_))));
    }

    #[test]
    fn monic_examples() {
        let g = gaussian_moments(1.0, 6);
        assert_eq!(solve_monic(&g, 2).unwrap(), vec![-2.0, 1.0]);
        let c3 = solve_monic(&g, 3).unwrap();
        assert_abs_diff_eq!(c3[0], 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c3[1], -6.0, epsilon = 1e-12);
        assert_eq!(c3[2], 1.0);
        assert_eq!(solve_monic(&qam(4, 4), 2), Err(BasisError::RankDeficient(2)));
    }

    #[test]
    fn normalize_examples() {
        let g = gaussian_moments(1.0, 6);
        let (c, z2) = normalize(&[-2.0, 1.0], &g).unwrap();
        assert_abs_diff_eq!(z2, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[0], -2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 0.5f64.sqrt(), epsilon = 1e-12);

        let (_, z2) = normalize(&[-1.32, 1.0], &qam(16, 4)).unwrap();
        assert_abs_diff_eq!(z2, 0.2176, epsilon = 1e-12);

        // dot-product oracle: 36·1 − 72·2 + 48·6 − 12·24 + 1·120
        let oracle = 36.0 * 1.0 - 72.0 * 2.0 + 48.0 * 6.0 - 12.0 * 24.0 + 120.0;
        let (_, z2) = normalize(&[6.0, -6.0, 1.0], &g).unwrap();
        assert_abs_diff_eq!(z2, oracle, epsilon = 1e-10);
        assert_abs_diff_eq!(z2, 12.0, epsilon = 1e-10);

        assert!(matches!(normalize(&[-1.0, 1.0], &qam(4, 3)), Err(BasisError::NonPositiveNorm(_))));
    }

    #[test]
    fn schur_examples() {
        let g = gaussian_moments(1.0, 6);
        let s2 = HankelState::initial(&g).unwrap();
        assert_eq!(s2.inverse().to_rows(), vec![vec![1.0]]);
        let s3 = schur_extend(&s2, &g).unwrap();
        let direct = numerics::invert_symmetric(&build_hankel(&g, 3).unwrap()).unwrap();
        assert!(s3.inverse().max_abs_diff(&direct) < 1e-12);
        assert_eq!(s3.order(), 3);

        let q = qam(4, 4);
        let s2 = HankelState::initial(&q).unwrap();
        assert_eq!(s2.schur_extend(&q), Err(BasisError::RankDeficient(2)));
    }

    #[test]
    fn gaussian_basis_matches_ito_hermite() {
        let b = build_basis(&gaussian_moments(1.0, 5), 5).unwrap();
        assert_eq!(b.effective_rank(), 3);
        let want = [
            vec![1.0],
            vec![-2.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()],
            vec![6.0 / 12f64.sqrt(), -6.0 / 12f64.sqrt(), 1.0 / 12f64.sqrt()],
        ];
        for (got, want) in b.coeffs().iter().zip(&want) {
            for (g, w) in got.iter().zip(want) {
                assert_abs_diff_eq!(*g, *w, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn uniform_basis_matches_legendre_forms() {
        let b = build_basis(&uniform_moments(1.0, 5), 5).unwrap();
        let s = |v: f64| v.sqrt();
        let want = [
            vec![s(3.0)],
            vec![-3.0 * s(7.0 / 4.0), 5.0 * s(7.0 / 4.0)],
            vec![15.0 * s(11.0 / 64.0), -70.0 * s(11.0 / 64.0), 63.0 * s(11.0 / 64.0)],
        ];
        for (got, want) in b.coeffs().iter().zip(&want) {
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() <= 1e-8 * w.abs(), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn qpsk_collapses_to_linear() {
        let b = build_basis(&qam(4, 7), 7).unwrap();
        assert_eq!(b.effective_rank(), 1);
        assert_eq!(b.coeffs().len(), 1);
        assert_abs_diff_eq!(b.coeffs()[0][0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn extended_laguerre() {
        let mu = exponential_moments(1.0, 6, MomentKind::AllOrders);
        let b = build_extended_basis(&mu, 3).unwrap();
        let want = [
            vec![1.0],
            vec![-1.0, 1.0],
            vec![1.0, -2.0, 0.5],
            vec![-1.0, 3.0, -1.5, 1.0 / 6.0],
        ];
        assert_eq!(b.effective_rank(), 4);
        for (got, want) in b.coeffs().iter().zip(&want) {
            for (g, w) in got.iter().zip(want) {
                assert_abs_diff_eq!(*g, *w, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn extended_point_mass_truncates() {
        let c: f64 = 1.7;
        let mu = MomentVector::all_orders((1..=8).map(|m| c.powi(m)).collect()).unwrap();
        let b = build_extended_basis(&mu, 4).unwrap();
        assert_eq!(b.effective_rank(), 1);
    }

    #[test]
    fn evaluate_examples() {
        let b = build_basis(&gaussian_moments(1.0, 5), 5).unwrap();
        assert!(b.evaluate_regressor(ComplexSample::new(0.0, 0.0)).iter().all(|v| v.norm() == 0.0));
        let v = b.evaluate_regressor(ComplexSample::new(1.0, 0.0));
        assert_abs_diff_eq!(v[0].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1].re, -1.0 / 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(v[2].re, 1.0 / 12f64.sqrt(), epsilon = 1e-12);

        let q = build_basis(&qam(16, 5), 5).unwrap();
        let v = q.evaluate_regressor(ComplexSample::new(1.0, 0.0));
        assert_abs_diff_eq!(v[1].re, (1.0 - 1.32) / 0.2176f64.sqrt(), epsilon = 1e-12);
        // printed coefficients are rounded to 2 decimals, so compare loosely
        assert!((v[2].re - (1.0 - 2.47 + 1.30) / 0.0542f64.sqrt()).abs() < 0.05);
    }

    #[test]
    fn change_of_basis_examples() {
        let b = build_basis(&gaussian_moments(1.0, 3), 3).unwrap();
        let c = b.change_of_basis();
        assert_abs_diff_eq!(c[(0, 0)], 1.0, epsilon = 1e-12);
        assert_eq!(c[(0, 1)], 0.0);
        assert_abs_diff_eq!(c[(1, 0)], -2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(c[(1, 1)], 0.5f64.sqrt(), epsilon = 1e-12);

        let one = build_basis(&MomentVector::even(vec![4.0]).unwrap(), 1).unwrap();
        assert_eq!(one.change_of_basis().to_rows(), vec![vec![0.5]]);

        let b = build_basis(&qam(64, 7), 7).unwrap();
        let prod: f64 = (0..b.effective_rank()).map(|i| 1.0 / b.norm_sq(i).sqrt()).product();
        assert_abs_diff_eq!(b.change_of_basis().diagonal_product(), prod, epsilon = 1e-12);
        assert!(prod != 0.0);
    }

    #[test]
    fn document_round_trip_and_validation() {
        let b = build_basis(&qam(64, 7), 7).unwrap();
        let back = OrthonormalBasis::from_json(&b.to_json()).unwrap();
        assert_eq!(back.effective_rank(), b.effective_rank());
        for (x, y) in back.coeffs().iter().flatten().zip(b.coeffs().iter().flatten()) {
            assert!((x - y).abs() <= 1e-14 * y.abs().max(1.0));
        }
        let mut doc = b.to_document();
        doc.coeffs[1][1] *= 1.01;
        assert!(matches!(OrthonormalBasis::from_document(doc), Err(BasisError::Document(_))));
        let mut doc = b.to_document();
        doc.effective_rank = 2;
        assert!(OrthonormalBasis::from_document(doc).is_err());
    }

    #[test]
    fn build_basis_rejects_even_order() {
        assert!(matches!(build_basis(&gaussian_moments(1.0, 4), 4), Err(BasisError::InvalidOrder(_))));
        assert!(matches!(
            build_basis(&gaussian_moments(1.0, 3), 7),
            Err(BasisError::InsufficientMoments { needed: 14, available: 6 })
        ));
    }

    #[test]
    fn schur_pivot_equals_monic_norm() {
        let mu = qam(256, 9);
        let mut state = HankelState::initial(&mu).unwrap();
        let b = build_basis(&mu, 9).unwrap();
        for i in 1..b.effective_rank() {
            let next = state.schur_extend(&mu).unwrap();
            assert!((next.pivot() - b.norm_sq(i)).abs() < 1e-7 * b.norm_sq(i), "{i}: {} vs {}", next.pivot(), b.norm_sq(i));
            state = next;
        }
    }
}
