//! Wiener paths and Brownian bridges on uniform time grids.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::mc::{accumulate, McEstimate};
use crate::rng::{Gaussian, RngStream};

/// Uniform grid `s_k = k * t_end / n_steps`, `k = 0..=n_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(invalid(format!("grid horizon must be positive, got {t_end}")));
        }
        if n_steps == 0 {
            return Err(invalid("grid needs at least one step"));
        }
        Ok(Self { t_end, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_end * k as f64 / self.n_steps as f64
    }

    /// Index of the grid time nearest to `s` (clamped to the grid).
    pub fn nearest_index(&self, s: f64) -> usize {
        let k = (s / self.dt()).round();
        (k.max(0.0) as usize).min(self.n_steps)
    }
}

/// A discretized d-component path with `values[0] = 0` for Wiener samples.
#[derive(Clone, Debug, PartialEq)]
pub struct WienerPath {
    grid: TimeGrid,
    d: usize,
    values: Vec<f64>,
}

impl WienerPath {
    /// Wraps explicit node values (`(n_steps + 1) * d`, point-major).
    pub fn from_values(grid: TimeGrid, d: usize, values: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(invalid("path dimension must be >= 1"));
        }
        let expected = (grid.n_steps + 1) * d;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { grid, d, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.values[k * self.d..(k + 1) * self.d]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.point(self.grid.n_steps)
    }

    /// `w(s_{k+1}) - w(s_k)`
    pub fn increment_into(&self, k: usize, out: &mut [f64]) {
        let (a, b) = (self.point(k), self.point(k + 1));
        for j in 0..self.d {
            out[j] = b[j] - a[j];
        }
    }

    /// Linear interpolation between grid nodes.
    pub fn value_at(&self, s: f64, out: &mut [f64]) {
        let x = (s / self.grid.dt()).clamp(0.0, self.grid.n_steps as f64);
        let k = (x.floor() as usize).min(self.grid.n_steps.saturating_sub(1));
        let frac = x - k as f64;
        let (a, b) = (self.point(k), self.point(k + 1));
        for j in 0..self.d {
            out[j] = a[j] + frac * (b[j] - a[j]);
        }
    }

    /// The reflected path `-w`.
    pub fn negated(&self) -> Self {
        Self {
            grid: self.grid,
            d: self.d,
            values: self.values.iter().map(|x| -x).collect(),
        }
    }
}

fn check_dimension(grid: &TimeGrid, d: usize) -> Result<()> {
    if d == 0 {
        return Err(invalid("path dimension must be >= 1"));
    }
    if grid.n_steps == 0 {
        return Err(invalid("grid needs at least one step"));
    }
    Ok(())
}

/// Fills `values` with a free Wiener path: independent N(0, dt) increments.
pub(crate) fn fill_path(values: &mut [f64], d: usize, dt: f64, gen: &mut Gaussian) {
    let sd = dt.sqrt();
    values[..d].fill(0.0);
    for k in 1..values.len() / d {
        for j in 0..d {
            values[k * d + j] = values[(k - 1) * d + j] + sd * gen.normal();
        }
    }
}

/// Turns a free path in place into a bridge ending at `endpoint`:
/// `w(s) - (s/t)(w(t) - endpoint)`, with the last node set exactly.
pub(crate) fn pin_path(values: &mut [f64], d: usize, endpoint: &[f64]) {
    let n = values.len() / d - 1;
    let drift: Vec<f64> = (0..d).map(|j| values[n * d + j] - endpoint[j]).collect();
    for k in 1..n {
        let frac = k as f64 / n as f64;
        for j in 0..d {
            values[k * d + j] -= frac * drift[j];
        }
    }
    values[n * d..].copy_from_slice(endpoint);
}

pub fn sample_path(grid: &TimeGrid, d: usize, rng: RngStream) -> Result<WienerPath> {
    check_dimension(grid, d)?;
    let mut values = vec![0.0; (grid.n_steps + 1) * d];
    fill_path(&mut values, d, grid.dt(), &mut rng.generator());
    WienerPath::from_values(*grid, d, values)
}

/// Brownian bridge from the origin at time 0 to `endpoint` at `t_end`.
pub fn sample_bridge(
    grid: &TimeGrid,
    d: usize,
    endpoint: &[f64],
    rng: RngStream,
) -> Result<WienerPath> {
    check_dimension(grid, d)?;
    if endpoint.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: endpoint.len(),
        });
    }
    let mut values = vec![0.0; (grid.n_steps + 1) * d];
    fill_path(&mut values, d, grid.dt(), &mut rng.generator());
    pin_path(&mut values, d, endpoint);
    WienerPath::from_values(*grid, d, values)
}

type TestFn = dyn Fn(f64) -> Vec<f64> + Send + Sync;

/// Compactly supported `f: [0, inf) -> R^d`.
#[derive(Clone)]
pub struct TestFunction {
    d: usize,
    support_end: f64,
    eval: Arc<TestFn>,
}

impl TestFunction {
    /// `eval` is cut off to zero beyond `support_end`.
    pub fn new<F>(d: usize, support_end: f64, eval: F) -> Result<Self>
    where
        F: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        if d == 0 || !(support_end >= 0.0) {
            return Err(invalid("test function needs d >= 1 and support_end >= 0"));
        }
        Ok(Self {
            d,
            support_end,
            eval: Arc::new(eval),
        })
    }

    pub fn zero(d: usize) -> Self {
        Self::new(d, 0.0, move |_| vec![0.0; d]).expect("valid")
    }

    /// `c * 1[0, end](s)` in every component.
    pub fn indicator(coeffs: Vec<f64>, end: f64) -> Result<Self> {
        let d = coeffs.len();
        Self::new(d, end, move |s| {
            if (0.0..=end).contains(&s) {
                coeffs.clone()
            } else {
                vec![0.0; coeffs.len()]
            }
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn support_end(&self) -> f64 {
        self.support_end
    }

    pub fn eval(&self, s: f64) -> Vec<f64> {
        if s > self.support_end {
            vec![0.0; self.d]
        } else {
            let v = (self.eval)(s);
            debug_assert_eq!(v.len(), self.d);
            v
        }
    }
}

/// Descriptor of an i.i.d. path ensemble; paths are generated lazily chunk
/// by chunk from disjoint streams of `rng`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub d: usize,
    pub n_paths: usize,
    pub rng: RngStream,
}

impl PathEnsemble {
    pub fn new(grid: TimeGrid, d: usize, n_paths: usize, rng: RngStream) -> Result<Self> {
        check_dimension(&grid, d)?;
        if n_paths < 2 {
            return Err(invalid("ensemble needs at least two paths"));
        }
        Ok(Self {
            grid,
            d,
            n_paths,
            rng,
        })
    }

    /// Monte Carlo mean of a complex-vector path functional.
    pub fn estimate<F>(&self, len: usize, functional: F) -> McEstimate
    where
        F: Fn(&[f64], &mut [Complex64]) + Sync,
    {
        let (d, dt) = (self.d, self.grid.dt());
        let size = (self.grid.n_steps + 1) * d;
        let (m, _) = accumulate(
            self.n_paths,
            len,
            self.rng,
            || vec![0.0; size],
            |values, gen, out| {
                fill_path(values, d, dt, gen);
                functional(values, out);
                true
            },
        );
        m.finish(1, len, 0)
    }

    fn check_test_function(&self, f: &TestFunction) -> Result<()> {
        if f.d() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: f.d(),
            });
        }
        if f.support_end() > self.grid.t_end {
            return Err(invalid("test function support extends beyond the grid"));
        }
        Ok(())
    }
}

/// Trapezoid weights of the grid.
fn trapezoid_weights(grid: &TimeGrid) -> Vec<f64> {
    let dt = grid.dt();
    let mut w = vec![dt; grid.n_steps + 1];
    w[0] = 0.5 * dt;
    w[grid.n_steps] = 0.5 * dt;
    w
}

/// Phase `int_0^t w(s).f(s) ds` by the trapezoid rule at grid nodes.
fn char_phase(values: &[f64], d: usize, f_nodes: &[f64], weights: &[f64]) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(k, wk)| {
            let x = &values[k * d..(k + 1) * d];
            let f = &f_nodes[k * d..(k + 1) * d];
            wk * x.iter().zip(f).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum()
}

/// Phase `int dw(s).f(s)` as the midpoint (Stratonovich) sum.
fn white_noise_phase(values: &[f64], d: usize, f_mid: &[f64]) -> f64 {
    let n = values.len() / d - 1;
    (0..n)
        .map(|k| {
            (0..d)
                .map(|j| f_mid[k * d + j] * (values[(k + 1) * d + j] - values[k * d + j]))
                .sum::<f64>()
        })
        .sum()
}

/// Mean of `exp(-i int_0^t ds w(s).f(s))` over the ensemble.
pub fn estimate_char_functional(ens: &PathEnsemble, f: &TestFunction) -> Result<McEstimate> {
    ens.check_test_function(f)?;
    let grid = ens.grid;
    let f_nodes: Vec<f64> = (0..=grid.n_steps).flat_map(|k| f.eval(grid.time(k))).collect();
    if f_nodes.iter().all(|&x| x == 0.0) {
        return Ok(McEstimate::exact(1, 1, vec![Complex64::new(1.0, 0.0)], ens.n_paths));
    }
    let weights = trapezoid_weights(&grid);
    let d = ens.d;
    Ok(ens.estimate(1, |values, out| {
        let phase = char_phase(values, d, &f_nodes, &weights);
        out[0] = Complex64::from_polar(1.0, -phase);
    }))
}

/// Mean of `exp(-i int dw(s).f(s))` with the Stratonovich sum.
pub fn estimate_white_noise_functional(ens: &PathEnsemble, f: &TestFunction) -> Result<McEstimate> {
    ens.check_test_function(f)?;
    let grid = ens.grid;
    let f_mid: Vec<f64> = (0..grid.n_steps)
        .flat_map(|k| f.eval(0.5 * (grid.time(k) + grid.time(k + 1))))
        .collect();
    if f_mid.iter().all(|&x| x == 0.0) {
        return Ok(McEstimate::exact(1, 1, vec![Complex64::new(1.0, 0.0)], ens.n_paths));
    }
    let d = ens.d;
    Ok(ens.estimate(1, |values, out| {
        out[0] = Complex64::from_polar(1.0, -white_noise_phase(values, d, &f_mid));
    }))
}

/// Same estimator over explicitly stored paths (must share one grid).
pub fn estimate_char_functional_from_paths(
    paths: &[WienerPath],
    f: &TestFunction,
) -> Result<McEstimate> {
    let first = paths.first().ok_or_else(|| invalid("empty path ensemble"))?;
    let (grid, d) = (*first.grid(), first.d());
    if paths.iter().any(|p| *p.grid() != grid || p.d() != d) {
        return Err(Error::GridMismatch);
    }
    if f.d() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: f.d(),
        });
    }
    if f.support_end() > grid.t_end {
        return Err(invalid("test function support extends beyond the grid"));
    }
    let f_nodes: Vec<f64> = (0..=grid.n_steps).flat_map(|k| f.eval(grid.time(k))).collect();
    let weights = trapezoid_weights(&grid);
    let mut m = crate::mc::Moments::new(1);
    for p in paths {
        let phase = char_phase(p.values(), d, &f_nodes, &weights);
        m.push(&[Complex64::from_polar(1.0, -phase)]);
    }
    Ok(m.finish(1, 1, 0))
}
