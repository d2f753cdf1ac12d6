//! Alpha-ordered symbol calculus on a periodic one-dimensional lattice.
//!
//! For an operator with matrix `H[r, c]` the alpha-symbol is
//! `H_alpha(p_k, q_j) = sum_m e^{i p_k m dq} D_m(q_j - (1 - alpha) m dq)`,
//! where `D_m(r) = H[r, r + m]` is the `m`-th wrapped diagonal and the
//! fractional shift is a band-limited (Fourier) translation. Integer shifts
//! (alpha = 0 and 1) reduce to exact index permutations.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::opalg::{expm, trotter_product, ApproximantFamily, Operator};
use crate::quadrature::log_log_slope;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// `N` points `q_j = -L/2 + j dq` on a circle of length `L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodicGrid {
    pub n_points: usize,
    pub length: f64,
}

impl PeriodicGrid {
    pub fn new(n_points: usize, length: f64) -> Result<Self> {
        if n_points < 2 || n_points % 2 != 0 {
            return Err(invalid(format!("lattice size must be even and >= 2, got {n_points}")));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(invalid("lattice length must be positive"));
        }
        Ok(Self { n_points, length })
    }

    pub fn dq(&self) -> f64 {
        self.length / self.n_points as f64
    }

    pub fn q(&self, j: usize) -> f64 {
        -0.5 * self.length + j as f64 * self.dq()
    }

    /// Centered momentum index of row `i`: `i - N/2`.
    pub fn k(&self, i: usize) -> i64 {
        i as i64 - (self.n_points / 2) as i64
    }

    pub fn p(&self, i: usize) -> f64 {
        2.0 * PI * self.k(i) as f64 / self.length
    }

    pub fn positions(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.q(j)).collect()
    }

    pub fn momenta(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.p(i)).collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// Phase-space function sampled at `(p_k, q_j)`, row-major in momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct Symbol {
    grid: PeriodicGrid,
    alpha: f64,
    values: Vec<Complex64>,
}

impl Symbol {
    pub fn from_values(grid: PeriodicGrid, alpha: f64, values: Vec<Complex64>) -> Result<Self> {
        check_alpha(alpha)?;
        let n = grid.n_points;
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: values.len(),
            });
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("symbol values".into()));
        }
        Ok(Self { grid, alpha, values })
    }

    /// Samples `f(p, q)` on the lattice.
    pub fn from_fn<F>(grid: PeriodicGrid, alpha: f64, f: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> Complex64,
    {
        let n = grid.n_points;
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            let p = grid.p(i);
            values.extend((0..n).map(|j| f(p, grid.q(j))));
        }
        Self::from_values(grid, alpha, values)
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Value at momentum row `i`, position column `j`.
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.grid.n_points + j]
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().fold(0.0, |m, z| m.max(z.im.abs()))
    }

    /// Pointwise `f(value)`.
    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            grid: self.grid,
            alpha: self.alpha,
            values: self.values.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { alpha, ..self.clone() })
    }

    /// Row-major CSV, one line per momentum, `re,im` pairs per position.
    pub fn to_csv(&self) -> String {
        matrix_csv(&self.grid, self.alpha, &self.values)
    }
}

/// Row-major CSV of an operator on the lattice.
pub fn operator_csv(grid: &PeriodicGrid, alpha: f64, op: &Operator) -> String {
    matrix_csv(grid, alpha, op.as_slice())
}

fn matrix_csv(grid: &PeriodicGrid, alpha: f64, values: &[Complex64]) -> String {
    let n = grid.n_points;
    let mut out = format!("# N={n},L={:.16e},alpha={:.16e}\n", grid.length, alpha);
    for row in values.chunks(n) {
        let line: Vec<String> = row
            .iter()
            .map(|z| format!("{:.16e},{:.16e}", z.re, z.im))
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

struct Transforms {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Transforms {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }
}

/// Centered value of a wrapped index.
fn centered(idx: usize, n: usize) -> i64 {
    let half = (n / 2) as i64;
    let i = idx as i64;
    if i >= half {
        i - n as i64
    } else {
        i
    }
}

/// Fourier multiplier translating the `m`-th diagonal by `-(1 - alpha) m`
/// lattice sites, evaluated at wrapped frequency `kappa`. Nyquist lines use
/// the magnitude of the partner index so that the half-shift at alpha = 1/2
/// keeps symbols of Hermitian matrices real.
fn shift_phase(kappa: i64, m: i64, alpha: f64, n: usize) -> Complex64 {
    let s = -(1.0 - alpha);
    let half = (n / 2) as i64;
    let phi = if kappa == -half && m == -half {
        PI * s * half as f64
    } else if kappa == -half {
        PI * s * m.abs() as f64
    } else if m == -half {
        PI * s * kappa.abs() as f64
    } else {
        2.0 * PI * s * (kappa * m) as f64 / n as f64
    };
    Complex64::from_polar(1.0, phi)
}

/// Matrix `g[m][j]` (wrapped `m`) of shifted diagonals.
fn shifted_diagonals(h: &Operator, alpha: f64, fft: &Transforms) -> Vec<Vec<Complex64>> {
    let n = h.dim();
    let mut out = Vec::with_capacity(n);
    for mw in 0..n {
        let m = centered(mw, n);
        let mut diag: Vec<Complex64> = (0..n).map(|r| h[(r, (r + mw) % n)]).collect();
        fft.forward.process(&mut diag);
        for (kw, z) in diag.iter_mut().enumerate() {
            *z *= shift_phase(centered(kw, n), m, alpha, n) / n as f64;
        }
        fft.inverse.process(&mut diag);
        out.push(diag);
    }
    out
}

/// Alpha-symbol of a lattice operator.
pub fn alpha_symbol(h: &Operator, grid: &PeriodicGrid, alpha: f64) -> Result<Symbol> {
    check_alpha(alpha)?;
    let n = grid.n_points;
    if h.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: h.dim() });
    }
    let fft = Transforms::new(n);
    let g = shifted_diagonals(h, alpha, &fft);
    let mut values = vec![ZERO; n * n];
    let mut column = vec![ZERO; n];
    for j in 0..n {
        for (mw, c) in column.iter_mut().enumerate() {
            *c = g[mw][j];
        }
        // sum_m e^{+2 pi i k m / N} g_m
        fft.inverse.process(&mut column);
        for i in 0..n {
            let kw = grid.k(i).rem_euclid(n as i64) as usize;
            values[i * n + j] = column[kw];
        }
    }
    Symbol::from_values(*grid, alpha, values)
}

/// Alpha-ordered quantization, the exact inverse of [`alpha_symbol`].
pub fn alpha_quantize(sym: &Symbol) -> Result<Operator> {
    let grid = sym.grid;
    let n = grid.n_points;
    let alpha = sym.alpha;
    let fft = Transforms::new(n);
    // g[m][j] = (1/N) sum_k e^{-2 pi i k m / N} sym(k, j)
    let mut g = vec![vec![ZERO; n]; n];
    let mut column = vec![ZERO; n];
    for j in 0..n {
        column.fill(ZERO);
        for i in 0..n {
            let kw = grid.k(i).rem_euclid(n as i64) as usize;
            column[kw] = sym.at(i, j);
        }
        fft.forward.process(&mut column);
        for (mw, z) in column.iter().enumerate() {
            g[mw][j] = z / n as f64;
        }
    }
    let mut h = Operator::zeros(n);
    for (mw, diag) in g.iter_mut().enumerate() {
        let m = centered(mw, n);
        fft.forward.process(diag);
        for (kw, z) in diag.iter_mut().enumerate() {
            *z /= shift_phase(centered(kw, n), m, alpha, n) * n as f64;
        }
        fft.inverse.process(diag);
        for (r, z) in diag.iter().enumerate() {
            h[(r, (r + mw) % n)] = *z;
        }
    }
    if !h.is_finite() {
        return Err(Error::NonFinite("quantized operator".into()));
    }
    Ok(h)
}

/// Largest matrix element more than `N/4` sites off the diagonal
/// (cyclically). Large values mean the lattice is too short for the operator.
pub fn wraparound_leak(h: &Operator) -> f64 {
    let n = h.dim();
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in 0..n {
            let off = centered((c + n - r) % n, n).unsigned_abs() as usize;
            if 4 * off > n {
                worst = worst.max(h[(r, c)].norm());
            }
        }
    }
    worst
}

/// Kinetic-energy discretization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kinetic {
    /// Three-point second difference; momentum by central difference.
    FiniteDifference,
    /// Exact lattice Fourier multipliers `p_k` and `p_k^2`.
    Spectral,
}

/// Lattice momentum operator.
pub fn momentum_operator(grid: &PeriodicGrid, kinetic: Kinetic) -> Operator {
    let n = grid.n_points;
    let dq = grid.dq();
    match kinetic {
        Kinetic::FiniteDifference => {
            let mut p = Operator::zeros(n);
            for r in 0..n {
                p[(r, (r + 1) % n)] = -I / (2.0 * dq);
                p[(r, (r + n - 1) % n)] = I / (2.0 * dq);
            }
            p
        }
        Kinetic::Spectral => fourier_multiplier(grid, |p| Complex64::new(p, 0.0)),
    }
}

/// `p^2` on the lattice.
pub fn momentum_squared(grid: &PeriodicGrid, kinetic: Kinetic) -> Operator {
    let n = grid.n_points;
    let dq = grid.dq();
    match kinetic {
        Kinetic::FiniteDifference => {
            let mut p2 = Operator::zeros(n);
            let c = 1.0 / (dq * dq);
            for r in 0..n {
                p2[(r, r)] = Complex64::new(2.0 * c, 0.0);
                p2[(r, (r + 1) % n)] = Complex64::new(-c, 0.0);
                p2[(r, (r + n - 1) % n)] = Complex64::new(-c, 0.0);
            }
            p2
        }
        Kinetic::Spectral => fourier_multiplier(grid, |p| Complex64::new(p * p, 0.0)),
    }
}

/// Circulant matrix acting as `f(p_k)` on the lattice plane waves.
pub fn fourier_multiplier(grid: &PeriodicGrid, f: impl Fn(f64) -> Complex64) -> Operator {
    let n = grid.n_points;
    // column c of row r depends on r - c only
    let mut kernel = vec![ZERO; n];
    for (dw, kv) in kernel.iter_mut().enumerate() {
        let mut acc = ZERO;
        for i in 0..n {
            let k = grid.k(i);
            acc += f(grid.p(i)) * Complex64::from_polar(1.0, 2.0 * PI * (k * dw as i64) as f64 / n as f64);
        }
        *kv = acc / n as f64;
    }
    Operator::from_fn(n, |r, c| kernel[(r + n - c) % n])
}

/// `(p - a(q))^2 / 2 + v(q)` with the cross term symmetrized:
/// `p^2/2 - (p a + a p)/2 + a^2/2 + v`.
pub fn standard_hamiltonian<A, V>(grid: &PeriodicGrid, a: A, v: V, kinetic: Kinetic) -> Operator
where
    A: Fn(f64) -> f64,
    V: Fn(f64) -> f64,
{
    let n = grid.n_points;
    let av: Vec<Complex64> = (0..n).map(|j| Complex64::new(a(grid.q(j)), 0.0)).collect();
    let amat = Operator::diagonal(&av);
    let p = momentum_operator(grid, kinetic);
    let mut h = momentum_squared(grid, kinetic).scale_real(0.5);
    let cross = &(&p * &amat) + &(&amat * &p);
    h.axpy(Complex64::new(-0.5, 0.0), &cross);
    for j in 0..n {
        let (aj, q) = (av[j].re, grid.q(j));
        h[(j, j)] += Complex64::new(0.5 * aj * aj + v(q), 0.0);
    }
    h
}

/// Continuum alpha-symbol of [`standard_hamiltonian`]:
/// `(p - a)^2/2 + i (alpha - 1/2) a'(q) + v(q)`.
pub fn standard_symbol(p: f64, alpha: f64, a: f64, div_a: f64, v: f64) -> Complex64 {
    Complex64::new(0.5 * (p - a).powi(2) + v, (alpha - 0.5) * div_a)
}

/// `R_alpha(t)`: quantization of the pointwise `exp(-t H_alpha)`.
pub fn short_time_r(h: &Operator, grid: &PeriodicGrid, alpha: f64, t: f64) -> Result<Operator> {
    if !(t.is_finite()) {
        return Err(invalid("time must be finite"));
    }
    let sym = alpha_symbol(h, grid, alpha)?;
    short_time_r_from_symbol(&sym, t)
}

pub fn short_time_r_from_symbol(sym: &Symbol, t: f64) -> Result<Operator> {
    if t == 0.0 {
        return Ok(Operator::identity(sym.grid.n_points));
    }
    alpha_quantize(&sym.map(|z| (-t * z).exp()))
}

/// `t -> R_alpha(t)` as an approximant family.
pub fn short_time_family(h: &Operator, grid: &PeriodicGrid, alpha: f64) -> Result<ApproximantFamily> {
    let sym = alpha_symbol(h, grid, alpha)?;
    ApproximantFamily::new(grid.n_points, move |t| short_time_r_from_symbol(&sym, t))
}

/// Errors `||[R_alpha(t/n)]^n - exp(-tH)||_F` for a list of `n`.
#[derive(Clone, Debug)]
pub struct TrotterTable {
    pub alpha: f64,
    pub t: f64,
    pub n: Vec<usize>,
    pub errors: Vec<f64>,
    pub slope: f64,
}

impl TrotterTable {
    pub fn is_monotone(&self) -> bool {
        self.errors.windows(2).all(|w| w[1] < w[0])
    }
}

pub fn trotter_reconstruct(
    h: &Operator,
    grid: &PeriodicGrid,
    alpha: f64,
    t: f64,
    n_list: &[usize],
) -> Result<TrotterTable> {
    if t < 0.0 || n_list.is_empty() {
        return Err(invalid("trotter sweep needs t >= 0 and a non-empty list of n"));
    }
    let target = expm(&h.scale_real(-t))?;
    let family = short_time_family(h, grid, alpha)?;
    let errors = n_list
        .par_iter()
        .map(|&n| trotter_product(&family, t, n).map(|r| r.distance(&target)))
        .collect::<Result<Vec<_>>>()?;
    let ns: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    Ok(TrotterTable {
        alpha,
        t,
        n: n_list.to_vec(),
        slope: log_log_slope(&ns, &errors),
        errors,
    })
}

/// `{f}_{alpha_quant} - {f}_{alpha_sym}`: the error made by quantizing a
/// classical function with a different ordering than the one it is the
/// symbol for. For `f = p g(q)` this is `i (alpha_quant - alpha_sym) g'(q)`.
pub fn ordering_mismatch<F>(grid: &PeriodicGrid, f: F, alpha_sym: f64, alpha_quant: f64) -> Result<Operator>
where
    F: Fn(f64, f64) -> Complex64,
{
    let matched = Symbol::from_fn(*grid, alpha_sym, &f)?;
    let mismatched = matched.with_alpha(alpha_quant)?;
    Ok(&alpha_quantize(&mismatched)? - &alpha_quantize(&matched)?)
}

/// Normalized Gaussian vector `exp(-(q - center)^2 / (2 width^2))` on the lattice.
pub fn gaussian_vector(grid: &PeriodicGrid, center: f64, width: f64) -> Vec<Complex64> {
    let v: Vec<f64> = grid
        .positions()
        .iter()
        .map(|q| (-(q - center).powi(2) / (2.0 * width * width)).exp())
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| Complex64::new(x / norm, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_operator(n: usize, seed: u64, hermitian: bool) -> Operator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Operator::from_fn(n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        if hermitian {
            (&m + &m.adjoint()).scale_real(0.5)
        } else {
            m
        }
    }

    #[test]
    fn grid_rejects_odd_sizes() {
        assert!(PeriodicGrid::new(7, 1.0).is_err());
        assert!(PeriodicGrid::new(8, 0.0).is_err());
        let g = PeriodicGrid::new(8, 4.0).unwrap();
        assert_eq!(g.q(0), -2.0);
        assert_eq!(g.k(0), -4);
    }

    #[test]
    fn roundtrip_for_many_alphas() {
        for n in [6, 8, 16] {
            let grid = PeriodicGrid::new(n, 3.0).unwrap();
            let h = random_operator(n, n as u64, false);
            for alpha in [0.0, 0.25, 0.5, 0.75, 1.0, 0.3] {
                let back = alpha_quantize(&alpha_symbol(&h, &grid, alpha).unwrap()).unwrap();
                assert!(back.distance(&h) < 1e-12, "n={n} alpha={alpha}");
            }
        }
    }

    #[test]
    fn weyl_symbol_of_hermitian_is_real() {
        for n in [4, 8, 16, 32] {
            let grid = PeriodicGrid::new(n, 5.0).unwrap();
            let h = random_operator(n, 100 + n as u64, true);
            let sym = alpha_symbol(&h, &grid, 0.5).unwrap();
            assert!(sym.max_imag() < 1e-12, "n={n}: {}", sym.max_imag());
        }
    }

    #[test]
    fn diagonal_operator_has_position_symbol() {
        let grid = PeriodicGrid::new(16, 4.0).unwrap();
        let v: Vec<Complex64> = grid.positions().iter().map(|q| Complex64::new(q.sin(), 0.0)).collect();
        let h = Operator::diagonal(&v);
        for alpha in [0.0, 0.4, 1.0] {
            let sym = alpha_symbol(&h, &grid, alpha).unwrap();
            for i in 0..16 {
                for j in 0..16 {
                    assert!((sym.at(i, j) - v[j]).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn unit_symbol_is_identity() {
        let grid = PeriodicGrid::new(8, 2.0).unwrap();
        for alpha in [0.0, 0.5, 1.0] {
            let one = Symbol::from_fn(grid, alpha, |_, _| Complex64::new(1.0, 0.0)).unwrap();
            assert!(alpha_quantize(&one).unwrap().distance(&Operator::identity(8)) < 1e-14);
        }
    }

    #[test]
    fn spectral_laplacian_symbol() {
        let grid = PeriodicGrid::new(32, 8.0).unwrap();
        let sym = alpha_symbol(&momentum_squared(&grid, Kinetic::Spectral), &grid, 0.5).unwrap();
        for i in 0..32 {
            let p = grid.p(i);
            for j in 0..32 {
                assert!((sym.at(i, j) - Complex64::new(p * p, 0.0)).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn short_time_r_basics() {
        let grid = PeriodicGrid::new(16, 6.0).unwrap();
        let h = standard_hamiltonian(&grid, |q| 0.3 * q.sin(), |q| 0.5 * q * q, Kinetic::FiniteDifference);
        assert_eq!(short_time_r(&h, &grid, 0.25, 0.0).unwrap(), Operator::identity(16));
        let v: Vec<Complex64> = grid.positions().iter().map(|q| Complex64::new(q.cos(), 0.0)).collect();
        let d = Operator::diagonal(&v);
        let exact = expm(&d.scale_real(-0.7)).unwrap();
        for alpha in [0.0, 0.5, 1.0] {
            assert!(short_time_r(&d, &grid, alpha, 0.7).unwrap().distance(&exact) < 1e-13);
        }
    }

    #[test]
    fn free_weyl_approximant_is_exact() {
        let grid = PeriodicGrid::new(32, 8.0).unwrap();
        let h = momentum_squared(&grid, Kinetic::Spectral).scale_real(0.5);
        let exact = expm(&h.scale_real(-0.3)).unwrap();
        assert!(short_time_r(&h, &grid, 0.5, 0.3).unwrap().distance(&exact) < 1e-8);
    }

    #[test]
    fn matched_orderings_have_no_gap() {
        let grid = PeriodicGrid::new(16, 4.0).unwrap();
        let f = |p: f64, q: f64| Complex64::new(p * q.sin(), 0.0);
        assert!(ordering_mismatch(&grid, f, 0.3, 0.3).unwrap().max_abs() < 1e-10);
        let fp = |p: f64, _q: f64| Complex64::new(p * p, 0.0);
        assert!(ordering_mismatch(&grid, fp, 0.0, 1.0).unwrap().max_abs() < 1e-10);
        let fq = |_p: f64, q: f64| Complex64::new(q.cos(), 0.0);
        assert!(ordering_mismatch(&grid, fq, 0.0, 1.0).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn leak_of_banded_operator_is_zero() {
        let grid = PeriodicGrid::new(16, 4.0).unwrap();
        let h = standard_hamiltonian(&grid, |_| 0.0, |q| q * q, Kinetic::FiniteDifference);
        assert_eq!(wraparound_leak(&h), 0.0);
        assert!(wraparound_leak(&momentum_squared(&grid, Kinetic::Spectral)) > 0.0);
    }

    #[test]
    fn csv_header_and_shape() {
        let grid = PeriodicGrid::new(4, 2.0).unwrap();
        let csv = Symbol::from_fn(grid, 0.5, |p, q| Complex64::new(p, q)).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# N=4,L="));
        assert!(lines[0].contains("alpha="));
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1].split(',').count(), 8);
    }
}
