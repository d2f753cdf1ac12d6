//! Independent reference values used by the integration tests.
#![allow(dead_code)]

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use fklab_core::opalg::Operator;
use fklab_core::quadrature::{gauss_legendre_interval, normal_cdf};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Spectrum of the central-difference oscillator `-1/2 d^2 + q^2/2` with
/// Dirichlet ends on [-8, 8], 1024 interior points.
pub struct OscillatorGrid {
    pub h: f64,
    pub q: Vec<f64>,
    pub energies: Vec<f64>,
    /// Eigenvectors normalized as functions (`sum |phi|^2 h = 1`), column-major by state.
    pub states: Vec<Vec<f64>>,
}

pub fn oscillator_grid() -> &'static OscillatorGrid {
    static GRID: OnceLock<OscillatorGrid> = OnceLock::new();
    GRID.get_or_init(|| {
        let n = 1024;
        let h = 16.0 / (n + 1) as f64;
        let q: Vec<f64> = (1..=n).map(|i| -8.0 + i as f64 * h).collect();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0 / (h * h) + 0.5 * q[i] * q[i];
            if i + 1 < n {
                m[(i, i + 1)] = -0.5 / (h * h);
                m[(i + 1, i)] = -0.5 / (h * h);
            }
        }
        let eig = SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let energies = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let states = order
            .iter()
            .map(|&k| eig.eigenvectors.column(k).iter().map(|x| x / h.sqrt()).collect())
            .collect();
        OscillatorGrid { h, q, energies, states }
    })
}

impl OscillatorGrid {
    /// Four-point Lagrange interpolation of a grid function at `x`.
    pub fn interpolate(&self, f: &[f64], x: f64) -> f64 {
        let pos = (x - self.q[0]) / self.h;
        let i = (pos.floor() as usize).clamp(1, self.q.len() - 3);
        let u = pos - i as f64;
        let (a, b, c, d) = (f[i - 1], f[i], f[i + 1], f[i + 2]);
        let (um1, u1, u2) = (u + 1.0, u - 1.0, u - 2.0);
        -a * u * u1 * u2 / 6.0 + b * um1 * u1 * u2 / 2.0 - c * um1 * u * u2 / 2.0 + d * um1 * u * u1 / 6.0
    }

    /// `sum_n e^{-t E_n} phi_n(x) phi_n(y)`.
    pub fn kernel(&self, x: f64, y: f64, t: f64) -> f64 {
        let mut total = 0.0;
        for (e, phi) in self.energies.iter().zip(&self.states) {
            let w = (-t * e).exp();
            if w < 1e-18 {
                break;
            }
            total += w * self.interpolate(phi, x) * self.interpolate(phi, y);
        }
        total
    }
}

/// `exp(x)` by a plain 60-term Taylor sum after halving `x` until its norm
/// is below 1/2, then repeated squaring.
pub fn expm_taylor(x: &Operator) -> Operator {
    let mut squarings = 0;
    let mut scaled = x.clone();
    while scaled.one_norm() > 0.5 {
        scaled = scaled.scale_real(0.5);
        squarings += 1;
    }
    let dim = x.dim();
    let mut term = Operator::identity(dim);
    let mut sum = Operator::identity(dim);
    for k in 1..60 {
        term = (&term * &scaled).scale_real(1.0 / k as f64);
        sum = &sum + &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// `int_0^t ds P(|x + w_s| <= 1)` by high-order Gauss-Legendre in `sqrt(s)`.
pub fn indicator_occupation(x: f64, t: f64) -> f64 {
    // s = r^2 removes the endpoint behaviour of the integrand
    let (nodes, weights) = gauss_legendre_interval(64, 0.0, t.sqrt());
    nodes
        .iter()
        .zip(&weights)
        .map(|(r, w)| {
            let root = *r;
            w * 2.0 * root * (normal_cdf((1.0 - x) / root) - normal_cdf((-1.0 - x) / root))
        })
        .sum()
}


/// `int_0^T int_0^T min(r, s) dr ds` by Gauss-Legendre on the two triangles
/// (the integrand is smooth on each).
pub fn min_kernel_integral(t: f64) -> f64 {
    let (nodes, weights) = gauss_legendre_interval(16, 0.0, t);
    let mut total = 0.0;
    for (r, wr) in nodes.iter().zip(&weights) {
        // s < r contributes s, s > r contributes r
        let (inner, iw) = gauss_legendre_interval(16, 0.0, *r);
        let below: f64 = inner.iter().zip(&iw).map(|(s, w)| w * s).sum();
        total += wr * (below + r * (t - r));
    }
    total
}
