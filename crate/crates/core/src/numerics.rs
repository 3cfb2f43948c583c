//! Small dense kernels shared by the rest of the crate: symmetric solves,
//! Cholesky, polynomial self-convolution, a unitary FFT and seeded complex
//! Gaussian generation.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Baseband sample. Amplitudes are dimensionless.
pub type ComplexSample = Complex64;

/// Relative pivot tolerance for [`solve_symmetric`].
pub const PIVOT_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix is singular (pivot {pivot:e} below tolerance {tolerance:e})")]
    SingularMatrix { pivot: f64, tolerance: f64 },
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("bad length {0}: expected a power of two")]
    BadLength(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Dense real matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let r = rows.len();
        let c = rows.first().map(Vec::len).unwrap_or(0);
        if r == 0 || c == 0 {
            return Err(NumericsError::Dimension("empty matrix".into()));
        }
        if rows.iter().any(|row| row.len() != c) {
            return Err(NumericsError::Dimension("ragged rows".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::Dimension("non-finite entry".into()));
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        Self::from_fn(self.rows, other.cols, |i, j| {
            (0..self.cols).map(|k| self[(i, k)] * other[(k, j)]).sum()
        })
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Product of the diagonal entries.
    pub fn diagonal_product(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).product()
    }
}

impl std::ops::Index<(usize, usize)> for RealMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for RealMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Solution of a linear system with its residual norm ‖A·x − b‖₂.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub residual: f64,
}

/// Solves `A·x = b` for square symmetric `A` by Gaussian elimination with
/// partial pivoting.
///
/// A pivot below `PIVOT_EPS·max|A|` is reported as [`NumericsError::SingularMatrix`];
/// the tolerance is relative because moment matrices span many decades.
pub fn solve_symmetric(a: &RealMatrix, b: &[f64]) -> Result<Solution, NumericsError> {
    if !a.is_square() || a.rows() != b.len() {
        return Err(NumericsError::Dimension(format!(
            "{}x{} matrix with rhs of length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let n = a.rows();
    let tolerance = PIVOT_EPS * a.max_abs();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (piv_row, piv) = (k..n)
            .map(|i| (i, lu[(i, k)]))
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .expect("non-empty pivot column");
        if !(piv.abs() > tolerance) {
            return Err(NumericsError::SingularMatrix { pivot: piv.abs(), tolerance });
        }
        if piv_row != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(piv_row, j)];
                lu[(piv_row, j)] = tmp;
            }
            perm.swap(k, piv_row);
        }
        for i in k + 1..n {
            let f = lu[(i, k)] / lu[(k, k)];
            lu[(i, k)] = f;
            if f == 0.0 {
                continue;
            }
            for j in k + 1..n {
                lu[(i, j)] -= f * lu[(k, j)];
            }
        }
    }
    let lu_solve = |rhs: &[f64]| {
        let mut y: Vec<f64> = perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| lu[(i, j)] * y[j]).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| lu[(i, j)] * y[j]).sum();
            y[i] = (y[i] - s) / lu[(i, i)];
        }
        y
    };
    let mut x = lu_solve(b);
    let mut r = accurate_residual(a, &x, b);
    let mut residual = norm2(&r);
    // iterative refinement against an accurately accumulated residual
    for _ in 0..3 {
        if residual == 0.0 {
            break;
        }
        let dx = lu_solve(&r);
        let cand: Vec<f64> = x.iter().zip(&dx).map(|(u, d)| u + d).collect();
        let r_cand = accurate_residual(a, &cand, b);
        let res_cand = norm2(&r_cand);
        if !(res_cand < residual) {
            break;
        }
        x = cand;
        r = r_cand;
        residual = res_cand;
    }
    Ok(Solution { x, residual })
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|u| u * u).sum::<f64>().sqrt()
}

/// `b − A·x` with each row accumulated in double-word arithmetic.
fn accurate_residual(a: &RealMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.rows())
        .map(|i| {
            let (mut hi, mut lo) = (b[i], 0.0);
            for (j, &xj) in x.iter().enumerate() {
                let p = -a[(i, j)] * xj;
                let p_err = (-a[(i, j)]).mul_add(xj, -p);
                let s = hi + p;
                let bb = s - hi;
                let s_err = (hi - (s - bb)) + (p - bb);
                hi = s;
                lo += s_err + p_err;
            }
            hi + lo
        })
        .collect()
}

/// Inverse of a square symmetric matrix, one [`solve_symmetric`] per column.
pub fn invert_symmetric(a: &RealMatrix) -> Result<RealMatrix, NumericsError> {
    let n = a.rows();
    let mut inv = RealMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = solve_symmetric(a, &e)?.x;
        for (i, v) in col.into_iter().enumerate() {
            inv[(i, j)] = v;
        }
    }
    Ok(inv)
}

/// Coefficients of the square of the polynomial with coefficients `c`
/// (lowest degree first).
pub fn self_convolve(c: &[f64]) -> Vec<f64> {
    convolve(c, c)
}

pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn unitary_transform(x: &[ComplexSample], inverse: bool) -> Result<Vec<ComplexSample>, NumericsError> {
    let n = x.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(NumericsError::BadLength(n));
    }
    let mut planner = FftPlanner::<f64>::new();
    let plan = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    let mut buf = x.to_vec();
    plan.process(&mut buf);
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|v| *v *= scale);
    Ok(buf)
}

/// Forward DFT with 1/√N scaling (power preserving).
pub fn fft(x: &[ComplexSample]) -> Result<Vec<ComplexSample>, NumericsError> {
    unitary_transform(x, false)
}

/// Inverse of [`fft`].
pub fn ifft(x: &[ComplexSample]) -> Result<Vec<ComplexSample>, NumericsError> {
    unitary_transform(x, true)
}

/// Lower-triangular `L` with `L·Lᵀ = A`. No diagonal loading is applied here.
pub fn cholesky(a: &RealMatrix) -> Result<RealMatrix, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::Dimension("cholesky needs a square matrix".into()));
    }
    let n = a.rows();
    let mut l = RealMatrix::zeros(n, n);
    for j in 0..n {
        let d = a[(j, j)] - (0..j).map(|k| l[(j, k)].powi(2)).sum::<f64>();
        if !(d > 0.0) {
            return Err(NumericsError::NotPositiveDefinite { row: j, pivot: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let s = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Inverse of a nonsingular lower-triangular matrix by forward substitution.
pub fn invert_lower_triangular(l: &RealMatrix) -> Result<RealMatrix, NumericsError> {
    let n = l.rows();
    let mut inv = RealMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let rhs = if i == j { 1.0 } else { 0.0 };
            let s: f64 = (j..i).map(|k| l[(i, k)] * inv[(k, j)]).sum();
            let d = l[(i, i)];
            if d == 0.0 {
                return Err(NumericsError::SingularMatrix { pivot: 0.0, tolerance: 0.0 });
            }
            inv[(i, j)] = (rhs - s) / d;
        }
    }
    Ok(inv)
}

/// Seeded random stream. Identical `(seed, stream)` pairs replay identical draws.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh, independent stream derived from the same seed.
    pub fn fork(&self, stream: u64) -> Self {
        Self::new(self.seed, stream)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn sample<T, D: rand_distr::Distribution<T>>(&mut self, dist: D) -> T {
        self.rng.sample(dist)
    }
}

/// Circularly-symmetric complex Gaussian samples with `E|x|² = variance`.
pub fn rng_complex_gaussian(state: &mut RngState, n: usize, variance: f64) -> Vec<ComplexSample> {
    assert!(variance > 0.0, "variance must be positive");
    let sd = (variance / 2.0).sqrt();
    (0..n)
        .map(|_| {
            let re = state.standard_normal();
            let im = state.standard_normal();
            ComplexSample::new(sd * re, sd * im)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn solve_gaussian_monic_system() {
        let a = RealMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 6.0]]).unwrap();
        let s = solve_symmetric(&a, &[-6.0, -24.0]).unwrap();
        assert_abs_diff_eq!(s.x[0], 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], -6.0, epsilon = 1e-12);
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn solve_one_by_one() {
        let a = RealMatrix::from_rows(&[vec![1.0]]).unwrap();
        assert_eq!(solve_symmetric(&a, &[5.0]).unwrap().x, vec![5.0]);
    }

    #[test]
    fn solve_16qam_phi3() {
        let a = RealMatrix::from_rows(&[vec![1.0, 1.32], vec![1.32, 1.96]]).unwrap();
        let s = solve_symmetric(&a, &[-1.96, -3.1248]).unwrap();
        assert_abs_diff_eq!(s.x[0], 1.3012, epsilon = 5e-4);
        assert_abs_diff_eq!(s.x[1], -2.4706, epsilon = 5e-4);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = RealMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(solve_symmetric(&a, &[1.0, 2.0]), Err(NumericsError::SingularMatrix { .. })));
    }

    #[test]
    fn self_convolve_examples() {
        assert_eq!(self_convolve(&[-2.0, 1.0]), vec![4.0, -4.0, 1.0]);
        assert_eq!(self_convolve(&[1.0]), vec![1.0]);
        // oracle: (x² − 6x + 6)² expanded by hand
        assert_eq!(self_convolve(&[6.0, -6.0, 1.0]), vec![36.0, -72.0, 48.0, -12.0, 1.0]);
    }

    #[test]
    fn fft_examples() {
        let ones = vec![ComplexSample::new(1.0, 0.0); 4];
        let f = fft(&ones).unwrap();
        assert_abs_diff_eq!(f[0].re, 2.0, epsilon = 1e-15);
        assert!(f[1..].iter().all(|v| v.norm() < 1e-15));

        let mut imp = vec![ComplexSample::new(0.0, 0.0); 4];
        imp[0] = ComplexSample::new(1.0, 0.0);
        assert!(fft(&imp).unwrap().iter().all(|v| (v - ComplexSample::new(0.5, 0.0)).norm() < 1e-15));

        assert_eq!(fft(&vec![ComplexSample::new(0.0, 0.0); 6]), Err(NumericsError::BadLength(6)));
        assert_eq!(ifft(&[]), Err(NumericsError::BadLength(0)));
    }

    #[test]
    fn fft_round_trip_length_64() {
        let mut rng = RngState::new(7, 0);
        let x = rng_complex_gaussian(&mut rng, 64, 1.0);
        let back = ifft(&fft(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn cholesky_examples() {
        let a = RealMatrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 9.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert_eq!(l.to_rows(), vec![vec![2.0, 0.0], vec![0.0, 3.0]]);

        let a = RealMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert_abs_diff_eq!(l[(0, 0)], 2f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(l[(1, 0)], 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(l[(1, 1)], 1.5f64.sqrt(), epsilon = 1e-12);
        assert!(l.matmul(&l.transpose()).max_abs_diff(&a) < 1e-12);

        let i3 = RealMatrix::identity(3);
        assert_eq!(cholesky(&i3).unwrap(), i3);

        let bad = RealMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&bad), Err(NumericsError::NotPositiveDefinite { row: 1, .. })));
    }

    #[test]
    fn lower_triangular_inverse() {
        let l = RealMatrix::from_rows(&[vec![2.0, 0.0, 0.0], vec![1.0, 3.0, 0.0], vec![-1.0, 0.5, 4.0]]).unwrap();
        let inv = invert_lower_triangular(&l).unwrap();
        assert!(l.matmul(&inv).max_abs_diff(&RealMatrix::identity(3)) < 1e-14);
    }

    #[test]
    fn complex_gaussian_statistics() {
        let mut rng = RngState::new(11, 3);
        let n = 1_000_000;
        let x = rng_complex_gaussian(&mut rng, n, 1.0);
        let mean = x.iter().sum::<ComplexSample>() / n as f64;
        let power = x.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        assert!(mean.norm() < 0.005);
        assert!((0.99..=1.01).contains(&power));
        assert!(rng_complex_gaussian(&mut rng, 0, 1.0).is_empty());
    }

    #[test]
    fn rng_is_deterministic() {
        let a = rng_complex_gaussian(&mut RngState::new(5, 1), 100, 2.0);
        let b = rng_complex_gaussian(&mut RngState::new(5, 1), 100, 2.0);
        let c = rng_complex_gaussian(&mut RngState::new(5, 2), 100, 2.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn random_spd(n: usize, seed: u64, log10_cond: f64) -> RealMatrix {
        // Q·diag(λ)·Qᵀ with Q from Gram-Schmidt on Gaussian columns
        let mut rng = RngState::new(seed, 0);
        let mut q: Vec<Vec<f64>> = Vec::new();
        while q.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            for u in &q {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                q.push(v.into_iter().map(|a| a / norm).collect());
            }
        }
        let lambdas: Vec<f64> = (0..n)
            .map(|i| 10f64.powf(-log10_cond * i as f64 / (n.max(2) - 1) as f64))
            .collect();
        RealMatrix::from_fn(n, n, |i, j| (0..n).map(|k| q[k][i] * lambdas[k] * q[k][j]).sum())
    }

    proptest! {
        #[test]
        fn solve_residual_is_small(n in 1usize..=8, seed in any::<u64>(), cond in 0.0f64..8.0) {
            let a = random_spd(n, seed, cond);
            let mut rng = RngState::new(seed ^ 0x55, 1);
            let b: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
            let s = solve_symmetric(&a, &b).unwrap();
            let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            // Above κ = 1e7 the floor is set by rounding x itself to f64 (≈ ε·κ·‖b‖).
            let bound = if cond <= 7.0 { 1e-9 } else { 4.0 * f64::EPSILON * 10f64.powf(cond) };
            prop_assert!(s.residual <= bound * bnorm, "residual {} bound {}", s.residual, bound * bnorm);
        }

        #[test]
        fn self_convolve_sum_is_square_of_sum(c in proptest::collection::vec(-10.0f64..10.0, 1..12)) {
            let s: f64 = c.iter().sum();
            let t: f64 = self_convolve(&c).iter().sum();
            prop_assert!((t - s * s).abs() <= 1e-9 * (1.0 + s * s));
            prop_assert_eq!(self_convolve(&c).len(), 2 * c.len() - 1);
        }

        #[test]
        fn fft_round_trip(log_n in 1u32..=10, seed in any::<u64>()) {
            let mut rng = RngState::new(seed, 0);
            let x = rng_complex_gaussian(&mut rng, 1 << log_n, 1.0);
            let back = ifft(&fft(&x).unwrap()).unwrap();
            for (a, b) in x.iter().zip(&back) {
                prop_assert!((a.re - b.re).abs() <= 1e-12 && (a.im - b.im).abs() <= 1e-12);
            }
        }
    }
}
