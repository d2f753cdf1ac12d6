//! alpha-point stochastic line integrals along discretized paths.
//!
//! For `alpha` in [0,1] the sum evaluates the integrand at
//! `x = alpha w(s_v) + (1 - alpha) w(s_{v-1})`, `s = alpha s_v + (1 - alpha) s_{v-1}`:
//! `alpha = 0` is the Ito sum and `alpha = 1/2` the Stratonovich (midpoint) sum.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::wiener::WienerPath;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaScheme {
    alpha: f64,
}

impl AlphaScheme {
    pub const ITO: AlphaScheme = AlphaScheme { alpha: 0.0 };
    pub const STRATONOVICH: AlphaScheme = AlphaScheme { alpha: 0.5 };

    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

type VectorFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
type ScalarFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// Field `g(x, s)` on R^d together with its divergence in `x`.
#[derive(Clone)]
pub struct FieldWithDivergence {
    d: usize,
    g: Arc<VectorFn>,
    div: Arc<ScalarFn>,
}

impl FieldWithDivergence {
    pub fn new<G, D>(d: usize, g: G, div: D) -> Self
    where
        G: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        D: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            d,
            g: Arc::new(g),
            div: Arc::new(div),
        }
    }

    /// `g(x) = c`.
    pub fn constant(c: Vec<f64>) -> Self {
        let d = c.len();
        Self::new(d, move |_, _, out| out.copy_from_slice(&c), |_, _| 0.0)
    }

    /// `g(x) = x`, divergence `d`.
    pub fn identity(d: usize) -> Self {
        Self::new(d, |x, _, out| out.copy_from_slice(x), move |_, _| d as f64)
    }

    /// `g(x) = (-x_2, x_1)`, divergence-free.
    pub fn rotation() -> Self {
        Self::new(
            2,
            |x, _, out| {
                out[0] = -x[1];
                out[1] = x[0];
            },
            |_, _| 0.0,
        )
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn eval(&self, x: &[f64], s: f64, out: &mut [f64]) {
        (self.g)(x, s, out)
    }

    pub fn divergence(&self, x: &[f64], s: f64) -> f64 {
        (self.div)(x, s)
    }

    /// Largest gap between the supplied divergence and a central-difference
    /// divergence (step 1e-5) over the probe points.
    pub fn divergence_defect(&self, probes: &[(Vec<f64>, f64)]) -> f64 {
        let h = 1e-5;
        let mut plus = vec![0.0; self.d];
        let mut minus = vec![0.0; self.d];
        let mut worst: f64 = 0.0;
        for (x, s) in probes {
            let mut fd = 0.0;
            let mut xp = x.clone();
            for j in 0..self.d {
                xp[j] = x[j] + h;
                self.eval(&xp, *s, &mut plus);
                xp[j] = x[j] - h;
                self.eval(&xp, *s, &mut minus);
                xp[j] = x[j];
                fd += (plus[j] - minus[j]) / (2.0 * h);
            }
            worst = worst.max((fd - self.divergence(x, *s)).abs());
        }
        worst
    }
}

fn check_field(path: &WienerPath, field: &FieldWithDivergence) -> Result<()> {
    if path.d() != field.d() {
        return Err(Error::DimensionMismatch {
            expected: path.d(),
            got: field.d(),
        });
    }
    Ok(())
}

/// `sum_v g(x^{(v,alpha)}, s^{(v,alpha)}) . (w(s_v) - w(s_{v-1}))`.
pub fn alpha_integral(
    path: &WienerPath,
    field: &FieldWithDivergence,
    scheme: AlphaScheme,
) -> Result<f64> {
    check_field(path, field)?;
    Ok(alpha_sum(path.values(), path.d(), path.grid().dt(), field, scheme.alpha()))
}

pub(crate) fn alpha_sum(
    values: &[f64],
    d: usize,
    dt: f64,
    field: &FieldWithDivergence,
    alpha: f64,
) -> f64 {
    let n = values.len() / d - 1;
    let mut x = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut total = 0.0;
    for k in 0..n {
        let (prev, next) = (&values[k * d..(k + 1) * d], &values[(k + 1) * d..(k + 2) * d]);
        for j in 0..d {
            x[j] = alpha * next[j] + (1.0 - alpha) * prev[j];
        }
        let s = dt * (k as f64 + alpha);
        field.eval(&x, s, &mut g);
        for j in 0..d {
            total += g[j] * (next[j] - prev[j]);
        }
    }
    total
}

/// Trapezoid value of `int_0^t u(w(s), s) ds`; non-finite integrands are
/// reported as errors.
pub fn time_integral<U>(path: &WienerPath, u: U) -> Result<f64>
where
    U: Fn(&[f64], f64) -> f64,
{
    let grid = path.grid();
    let n = grid.n_steps;
    let dt = grid.dt();
    let mut total = 0.0;
    for k in 0..=n {
        let val = u(path.point(k), grid.time(k));
        if !val.is_finite() {
            return Err(Error::NonFinite(format!("integrand at s = {}", grid.time(k))));
        }
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        total += w * val;
    }
    Ok(total * dt)
}

/// Stratonovich sum minus `[alpha sum + (1/2 - alpha) int div g ds]`.
pub fn convert_check(
    path: &WienerPath,
    field: &FieldWithDivergence,
    scheme: AlphaScheme,
) -> Result<f64> {
    check_field(path, field)?;
    let (d, dt) = (path.d(), path.grid().dt());
    let strat = alpha_sum(path.values(), d, dt, field, 0.5);
    let alpha = scheme.alpha();
    let alpha_part = alpha_sum(path.values(), d, dt, field, alpha);
    let coeff = 0.5 - alpha;
    if coeff == 0.0 {
        return Ok(strat - alpha_part);
    }
    let correction = time_integral(path, |x, s| field.divergence(x, s))?;
    Ok(strat - (alpha_part + coeff * correction))
}
