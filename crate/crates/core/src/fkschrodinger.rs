//! Feynman-Kac estimators for `H = (p - a(q))^2 / 2 + v(q)` on R^d.
//!
//! Path functional along `x(s) = q + w(s)`:
//! `exp(-i sum a(x_mid).dw) * exp(-int v(x) ds)`, the first factor by the
//! midpoint (Stratonovich) sum and the second by the trapezoid rule.
//! Kernels average the functional over Brownian bridges and multiply by the
//! free heat kernel.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::mc::{accumulate, check_rejections, McEstimate};
use crate::quadrature::{composite_gauss_legendre, log_log_slope, normal_cdf};
use crate::rng::RngStream;
use crate::wiener::{fill_path, pin_path, TimeGrid};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ComplexFn = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;

/// Gauge function with its gradient.
#[derive(Clone)]
pub struct Gauge {
    pub chi: ScalarFn,
    pub grad: VectorFn,
}

/// Scalar and vector potentials with their derived fields.
#[derive(Clone)]
pub struct PotentialConfig {
    d: usize,
    v: Option<ScalarFn>,
    v_plus: Option<ScalarFn>,
    v_minus: Option<ScalarFn>,
    a: Option<VectorFn>,
    div_a: Option<ScalarFn>,
    gauge: Option<Gauge>,
}

impl PotentialConfig {
    /// No potentials at all.
    pub fn free(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(invalid("dimension must be >= 1"));
        }
        Ok(Self {
            d,
            v: None,
            v_plus: None,
            v_minus: None,
            a: None,
            div_a: None,
            gauge: None,
        })
    }

    /// Scalar potential; its positive and negative parts are `max(0, +-v)`.
    pub fn with_scalar<V>(mut self, v: V) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let v: ScalarFn = Arc::new(v);
        let (vp, vm) = (v.clone(), v.clone());
        self.v_plus = Some(Arc::new(move |q| vp(q).max(0.0)));
        self.v_minus = Some(Arc::new(move |q| (-vm(q)).max(0.0)));
        self.v = Some(v);
        self
    }

    pub fn with_vector<A, D>(mut self, a: A, div_a: D) -> Self
    where
        A: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        D: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.a = Some(Arc::new(a));
        self.div_a = Some(Arc::new(div_a));
        self
    }

    pub fn with_gauge<C, G>(mut self, chi: C, grad: G) -> Self
    where
        C: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.gauge = Some(Gauge {
            chi: Arc::new(chi),
            grad: Arc::new(grad),
        });
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_vector_potential(&self) -> bool {
        self.a.is_some()
    }

    pub fn gauge(&self) -> Option<&Gauge> {
        self.gauge.as_ref()
    }

    pub fn v(&self, q: &[f64]) -> f64 {
        self.v.as_ref().map_or(0.0, |v| v(q))
    }

    pub fn v_plus(&self, q: &[f64]) -> f64 {
        self.v_plus.as_ref().map_or(0.0, |v| v(q))
    }

    pub fn v_minus(&self, q: &[f64]) -> f64 {
        self.v_minus.as_ref().map_or(0.0, |v| v(q))
    }

    pub fn a(&self, q: &[f64], out: &mut [f64]) {
        match &self.a {
            Some(a) => a(q, out),
            None => out.fill(0.0),
        }
    }

    pub fn div_a(&self, q: &[f64]) -> f64 {
        self.div_a.as_ref().map_or(0.0, |f| f(q))
    }

    /// Same scalar potential, vector potential removed.
    pub fn without_vector(&self) -> Self {
        let mut out = self.clone();
        out.a = None;
        out.div_a = None;
        out
    }

    /// Vector potential replaced by `a + grad chi`.
    pub fn gauge_transformed(&self) -> Result<Self> {
        let gauge = self
            .gauge
            .clone()
            .ok_or_else(|| invalid("potential has no gauge function"))?;
        let base = self.a.clone();
        let d = self.d;
        let grad = gauge.grad.clone();
        let mut out = self.clone();
        out.a = Some(Arc::new(move |q: &[f64], o: &mut [f64]| {
            match &base {
                Some(a) => a(q, o),
                None => o.fill(0.0),
            }
            let mut g = vec![0.0; d];
            grad(q, &mut g);
            for (x, y) in o.iter_mut().zip(&g) {
                *x += y;
            }
        }));
        Ok(out)
    }

    /// Largest violation over the probes of: `v = v+ - v-`, `v+- >= 0`, and
    /// `div a` against a central difference (step 1e-5).
    pub fn consistency_defect(&self, probes: &[Vec<f64>]) -> f64 {
        let h = 1e-5;
        let d = self.d;
        let mut worst: f64 = 0.0;
        let (mut plus, mut minus) = (vec![0.0; d], vec![0.0; d]);
        for q in probes {
            let (vp, vm) = (self.v_plus(q), self.v_minus(q));
            worst = worst.max((self.v(q) - (vp - vm)).abs());
            worst = worst.max((-vp).max(0.0)).max((-vm).max(0.0));
            if self.a.is_some() {
                let mut x = q.clone();
                let mut fd = 0.0;
                for j in 0..d {
                    x[j] = q[j] + h;
                    self.a(&x, &mut plus);
                    x[j] = q[j] - h;
                    self.a(&x, &mut minus);
                    x[j] = q[j];
                    fd += (plus[j] - minus[j]) / (2.0 * h);
                }
                worst = worst.max((fd - self.div_a(q)).abs());
            }
        }
        worst
    }
}

/// Named potentials addressable from configuration files.
#[derive(Clone, Debug, PartialEq)]
pub enum Preset {
    Free { d: usize },
    /// `v = -depth` inside the ball of the given radius.
    ConstantWell { d: usize, depth: f64, radius: f64 },
    /// `v = omega^2 |q|^2 / 2`.
    Harmonic { d: usize, omega: f64 },
    /// `v = -gamma / |q|` in three dimensions.
    Coulomb3d { gamma: f64 },
    /// `a = (b/2) (-q_2, q_1)`.
    ConstantMagnetic2d { b: f64 },
    /// `a = 0` with gauge function `chi = c q_1`.
    GaugeLinear { d: usize, c: f64 },
}

impl Preset {
    pub const NAMES: [&'static str; 6] = [
        "free",
        "constant-well",
        "harmonic",
        "coulomb-3d",
        "constant-magnetic-2d",
        "gauge-linear",
    ];

    pub fn build(&self) -> Result<PotentialConfig> {
        match *self {
            Preset::Free { d } => PotentialConfig::free(d),
            Preset::ConstantWell { d, depth, radius } => {
                if !(radius > 0.0) {
                    return Err(invalid("well radius must be positive"));
                }
                let r2 = radius * radius;
                Ok(PotentialConfig::free(d)?.with_scalar(move |q| {
                    if q.iter().map(|x| x * x).sum::<f64>() <= r2 {
                        -depth
                    } else {
                        0.0
                    }
                }))
            }
            Preset::Harmonic { d, omega } => {
                let w2 = omega * omega;
                Ok(PotentialConfig::free(d)?
                    .with_scalar(move |q| 0.5 * w2 * q.iter().map(|x| x * x).sum::<f64>()))
            }
            Preset::Coulomb3d { gamma } => Ok(PotentialConfig::free(3)?
                .with_scalar(move |q| -gamma / q.iter().map(|x| x * x).sum::<f64>().sqrt())),
            Preset::ConstantMagnetic2d { b } => Ok(PotentialConfig::free(2)?.with_vector(
                move |q, o| {
                    o[0] = -0.5 * b * q[1];
                    o[1] = 0.5 * b * q[0];
                },
                |_| 0.0,
            )),
            Preset::GaugeLinear { d, c } => Ok(PotentialConfig::free(d)?.with_gauge(
                move |q| c * q[0],
                move |_, o| {
                    o.fill(0.0);
                    o[0] = c;
                },
            )),
        }
    }
}

/// `b_jk(q) = d a_j / d q_k - d a_k / d q_j`.
pub struct MagneticField {
    pot: PotentialConfig,
}

pub const FIELD_STEP: f64 = 1e-5;

pub fn magnetic_field(pot: &PotentialConfig) -> MagneticField {
    MagneticField { pot: pot.clone() }
}

impl MagneticField {
    /// Row-major `d x d` antisymmetric matrix at `q`.
    pub fn at(&self, q: &[f64]) -> Vec<f64> {
        let d = self.pot.d();
        let h = FIELD_STEP;
        // jac[j][k] = d a_j / d q_k
        let mut jac = vec![0.0; d * d];
        let (mut plus, mut minus) = (vec![0.0; d], vec![0.0; d]);
        let mut x = q.to_vec();
        for k in 0..d {
            x[k] = q[k] + h;
            self.pot.a(&x, &mut plus);
            x[k] = q[k] - h;
            self.pot.a(&x, &mut minus);
            x[k] = q[k];
            for j in 0..d {
                jac[j * d + k] = (plus[j] - minus[j]) / (2.0 * h);
            }
        }
        let mut b = vec![0.0; d * d];
        for j in 0..d {
            for k in 0..d {
                b[j * d + k] = jac[j * d + k] - jac[k * d + j];
            }
        }
        b
    }
}

/// Complex wave function on R^d.
#[derive(Clone)]
pub struct WaveFunction {
    eval: ComplexFn,
    pub norm_hint: Option<f64>,
}

impl WaveFunction {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
    {
        Self {
            eval: Arc::new(f),
            norm_hint: None,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| Complex64::new(c, 0.0))
    }

    /// `exp(-|q - center|^2 / (2 width^2))`
    pub fn gaussian(center: Vec<f64>, width: f64) -> Self {
        let inv = 0.5 / (width * width);
        Self::new(move |q| {
            let r2: f64 = q.iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum();
            Complex64::new((-r2 * inv).exp(), 0.0)
        })
    }

    /// Normalized ground state of `-1/2 d^2 + q^2/2` in one dimension.
    pub fn oscillator_ground_state() -> Self {
        let mut w = Self::new(|q| Complex64::new(PI.powf(-0.25) * (-0.5 * q[0] * q[0]).exp(), 0.0));
        w.norm_hint = Some(1.0);
        w
    }

    pub fn eval(&self, q: &[f64]) -> Complex64 {
        (self.eval)(q)
    }

    pub fn abs(&self) -> Self {
        let f = self.eval.clone();
        Self::new(move |q| Complex64::new(f(q).norm(), 0.0))
    }
}

/// Phase integral `sum a(x_mid).dx` and damping `int v ds` along the nodes
/// `x_k = q + w_k`, written into `x`.
fn phase_and_damping(
    pot: &PotentialConfig,
    q: &[f64],
    values: &[f64],
    dt: f64,
    x: &mut [f64],
    scratch: &mut Scratch,
) -> (f64, f64) {
    let d = q.len();
    let n = values.len() / d - 1;
    for (k, xk) in x.chunks_mut(d).enumerate() {
        for j in 0..d {
            xk[j] = q[j] + values[k * d + j];
        }
    }
    let mut damping = 0.0;
    if pot.v.is_some() {
        for k in 0..=n {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            damping += w * pot.v(&x[k * d..(k + 1) * d]);
        }
        damping *= dt;
    }
    let mut phase = 0.0;
    if pot.a.is_some() {
        for k in 0..n {
            for j in 0..d {
                scratch.mid[j] = 0.5 * (x[k * d + j] + x[(k + 1) * d + j]);
            }
            pot.a(&scratch.mid, &mut scratch.field);
            for j in 0..d {
                phase += scratch.field[j] * (x[(k + 1) * d + j] - x[k * d + j]);
            }
        }
    }
    (phase, damping)
}

struct Scratch {
    mid: Vec<f64>,
    field: Vec<f64>,
}

struct PathWork {
    values: Vec<f64>,
    x: Vec<f64>,
    scratch: Scratch,
}

impl PathWork {
    fn new(grid: &TimeGrid, d: usize) -> Self {
        let size = (grid.n_steps + 1) * d;
        Self {
            values: vec![0.0; size],
            x: vec![0.0; size],
            scratch: Scratch {
                mid: vec![0.0; d],
                field: vec![0.0; d],
            },
        }
    }
}

fn check_point(pot: &PotentialConfig, q: &[f64]) -> Result<()> {
    if q.len() != pot.d() {
        return Err(Error::DimensionMismatch {
            expected: pot.d(),
            got: q.len(),
        });
    }
    Ok(())
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths < 2 {
        return Err(invalid("need at least two paths"));
    }
    Ok(())
}

fn finite(z: Complex64) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// `(e^{-tH} psi)(q)` as the Wiener average of
/// `exp(-i int dw.a(q+w)) exp(-int v(q+w) ds) psi(q + w(t))`.
pub fn apply_semigroup(
    pot: &PotentialConfig,
    psi: &WaveFunction,
    q: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    rng: RngStream,
) -> Result<McEstimate> {
    check_point(pot, q)?;
    check_paths(n_paths)?;
    let (d, dt) = (pot.d(), grid.dt());
    let (m, rejected) = accumulate(
        n_paths,
        1,
        rng,
        || PathWork::new(grid, d),
        |work, gen, out| {
            fill_path(&mut work.values, d, dt, gen);
            let (phase, damp) = phase_and_damping(pot, q, &work.values, dt, &mut work.x, &mut work.scratch);
            let end = &work.x[grid.n_steps * d..];
            out[0] = Complex64::from_polar((-damp).exp(), -phase) * psi.eval(end);
            finite(out[0])
        },
    );
    check_rejections(rejected, n_paths)?;
    Ok(m.finish(1, 1, rejected))
}

/// `(2 pi t)^{-d/2} exp(-|q' - q|^2 / 2t)`
pub fn free_kernel(d: usize, q: &[f64], q_prime: &[f64], t: f64) -> f64 {
    let r2: f64 = q.iter().zip(q_prime).map(|(a, b)| (a - b).powi(2)).sum();
    (2.0 * PI * t).powf(-0.5 * d as f64) * (-r2 / (2.0 * t)).exp()
}

fn bridge_target(q: &[f64], q_prime: &[f64]) -> Vec<f64> {
    q_prime.iter().zip(q).map(|(b, a)| b - a).collect()
}

/// Euclidean propagator `<q| e^{-tH} |q'>`: free kernel times the bridge
/// average of the path functional from `q` to `q'`.
pub fn kernel(
    pot: &PotentialConfig,
    q: &[f64],
    q_prime: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    rng: RngStream,
) -> Result<McEstimate> {
    check_point(pot, q)?;
    check_point(pot, q_prime)?;
    check_paths(n_paths)?;
    let (d, dt) = (pot.d(), grid.dt());
    let target = bridge_target(q, q_prime);
    let (m, rejected) = accumulate(
        n_paths,
        1,
        rng,
        || PathWork::new(grid, d),
        |work, gen, out| {
            fill_path(&mut work.values, d, dt, gen);
            pin_path(&mut work.values, d, &target);
            let (phase, damp) = phase_and_damping(pot, q, &work.values, dt, &mut work.x, &mut work.scratch);
            out[0] = Complex64::from_polar((-damp).exp(), -phase);
            finite(out[0])
        },
    );
    check_rejections(rejected, n_paths)?;
    Ok(m.finish(1, 1, rejected).scaled(free_kernel(d, q, q_prime, grid.t_end)))
}

/// Residual `K_{a + grad chi}(q, q') - e^{i(chi(q) - chi(q'))} K_a(q, q')`
/// evaluated on common bridges.
pub fn gauge_check(
    pot: &PotentialConfig,
    q: &[f64],
    q_prime: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    rng: RngStream,
) -> Result<McEstimate> {
    check_point(pot, q)?;
    check_point(pot, q_prime)?;
    check_paths(n_paths)?;
    let gauge = pot
        .gauge()
        .ok_or_else(|| invalid("gauge check needs a gauge function"))?;
    let shifted = pot.gauge_transformed()?;
    let factor = Complex64::from_polar(1.0, (gauge.chi)(q) - (gauge.chi)(q_prime));
    let (d, dt) = (pot.d(), grid.dt());
    let target = bridge_target(q, q_prime);
    let (m, rejected) = accumulate(
        n_paths,
        1,
        rng,
        || PathWork::new(grid, d),
        |work, gen, out| {
            fill_path(&mut work.values, d, dt, gen);
            pin_path(&mut work.values, d, &target);
            let (p0, v0) = phase_and_damping(pot, q, &work.values, dt, &mut work.x, &mut work.scratch);
            let (p1, v1) = phase_and_damping(&shifted, q, &work.values, dt, &mut work.x, &mut work.scratch);
            out[0] = Complex64::from_polar((-v1).exp(), -p1) - factor * Complex64::from_polar((-v0).exp(), -p0);
            finite(out[0])
        },
    );
    check_rejections(rejected, n_paths)?;
    Ok(m.finish(1, 1, rejected).scaled(free_kernel(d, q, q_prime, grid.t_end)))
}

/// Common-path comparison of `|e^{-tH_a} psi|(q)` and `e^{-tH_0} |psi| (q)`.
#[derive(Clone, Debug)]
pub struct DiamagneticReport {
    pub with_a: McEstimate,
    pub without_a: McEstimate,
    /// `|with_a| - without_a`
    pub gap: f64,
    pub combined_stderr: f64,
    /// `|with_a| <= without_a + 3 combined_stderr`
    pub holds: bool,
}

pub fn diamagnetic_check(
    pot: &PotentialConfig,
    psi: &WaveFunction,
    q: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    rng: RngStream,
) -> Result<DiamagneticReport> {
    check_point(pot, q)?;
    check_paths(n_paths)?;
    let (d, dt) = (pot.d(), grid.dt());
    let (m, rejected) = accumulate(
        n_paths,
        2,
        rng,
        || PathWork::new(grid, d),
        |work, gen, out| {
            fill_path(&mut work.values, d, dt, gen);
            let (phase, damp) = phase_and_damping(pot, q, &work.values, dt, &mut work.x, &mut work.scratch);
            let end = &work.x[grid.n_steps * d..];
            let value = psi.eval(end);
            let weight = (-damp).exp();
            out[0] = Complex64::from_polar(weight, -phase) * value;
            out[1] = Complex64::new(weight * value.norm(), 0.0);
            finite(out[0]) && finite(out[1])
        },
    );
    check_rejections(rejected, n_paths)?;
    let est = m.finish(1, 2, rejected);
    let split = |i: usize| McEstimate {
        rows: 1,
        cols: 1,
        mean: vec![est.mean[i]],
        stderr: vec![est.stderr[i]],
        n_samples: est.n_samples,
        rejected,
    };
    let (with_a, without_a) = (split(0), split(1));
    let gap = with_a.scalar().norm() - without_a.scalar().re;
    let combined_stderr = with_a.scalar_stderr().hypot(without_a.scalar_stderr());
    Ok(DiamagneticReport {
        holds: gap <= 3.0 * combined_stderr,
        with_a,
        without_a,
        gap,
        combined_stderr,
    })
}

/// Quadrature for the heat-smoothed time integral.
#[derive(Clone, Debug, PartialEq)]
pub struct KatoQuadrature {
    /// `u` is taken as zero outside `[box_lo, box_hi]^d`.
    pub box_lo: f64,
    pub box_hi: f64,
    /// Composite Gauss-Legendre panels over `|z| <= 8` per dimension.
    pub z_panels: usize,
    pub z_order: usize,
    /// Trapezoid intervals in `s`.
    pub s_intervals: usize,
}

impl Default for KatoQuadrature {
    fn default() -> Self {
        Self {
            box_lo: -10.0,
            box_hi: 10.0,
            z_panels: 128,
            z_order: 4,
            s_intervals: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KatoEstimate {
    pub value: f64,
    pub argmax: Vec<f64>,
    /// Largest Gaussian mass at time `t` falling outside the box.
    pub truncated_mass: f64,
}

/// Tolerated Gaussian mass outside the declared box before warning.
pub const BOX_MASS_TOLERANCE: f64 = 1e-6;

/// `max_x int_0^t ds (e^{s Delta/2} u)(x)` over the probe points.
pub fn kato_kappa<U>(
    u: U,
    d: usize,
    t: f64,
    probes: &[Vec<f64>],
    quad: &KatoQuadrature,
) -> Result<KatoEstimate>
where
    U: Fn(&[f64]) -> f64,
{
    if !(t > 0.0) || probes.is_empty() || quad.s_intervals == 0 || !(quad.box_hi > quad.box_lo) {
        return Err(invalid("kato quadrature needs t > 0, probes and a non-empty box"));
    }
    let (z1, w1) = composite_gauss_legendre(quad.z_panels, quad.z_order, -8.0, 8.0);
    let gauss: Vec<f64> = z1
        .iter()
        .zip(&w1)
        .map(|(z, w)| w * (-0.5 * z * z).exp() / (2.0 * PI).sqrt())
        .collect();
    let m = z1.len();
    let total = m.pow(d as u32);
    let in_box = |y: &[f64]| y.iter().all(|&c| c >= quad.box_lo && c <= quad.box_hi);
    let smoothed = |x: &[f64], s: f64, y: &mut [f64]| -> f64 {
        if s == 0.0 {
            return if in_box(x) { u(x) } else { 0.0 };
        }
        let root = s.sqrt();
        let mut acc = 0.0;
        for flat in 0..total {
            let mut idx = flat;
            let mut weight = 1.0;
            for j in 0..d {
                let i = idx % m;
                idx /= m;
                y[j] = x[j] + root * z1[i];
                weight *= gauss[i];
            }
            if in_box(y) {
                acc += weight * u(y);
            }
        }
        acc
    };
    let ds = t / quad.s_intervals as f64;
    let mut best = f64::NEG_INFINITY;
    let mut argmax = probes[0].clone();
    let mut truncated: f64 = 0.0;
    let mut y = vec![0.0; d];
    for x in probes {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let mut val = 0.0;
        for k in 0..=quad.s_intervals {
            let w = if k == 0 || k == quad.s_intervals { 0.5 } else { 1.0 };
            val += w * smoothed(x, k as f64 * ds, &mut y);
        }
        val *= ds;
        if !val.is_finite() {
            return Err(Error::NonFinite("kato integrand".into()));
        }
        let inside: f64 = x
            .iter()
            .map(|&c| normal_cdf((quad.box_hi - c) / t.sqrt()) - normal_cdf((quad.box_lo - c) / t.sqrt()))
            .product();
        truncated = truncated.max(1.0 - inside);
        if val > best {
            best = val;
            argmax = x.clone();
        }
    }
    if truncated > BOX_MASS_TOLERANCE {
        log::warn!("kato box truncates {truncated:e} of the Gaussian mass at t = {t}");
    }
    Ok(KatoEstimate {
        value: best,
        argmax,
        truncated_mass: truncated,
    })
}

/// `kappa_t(u)` over a list of times and the log-log slope of `kappa` in `t`.
pub fn kato_decay_sweep<U>(
    u: U,
    d: usize,
    times: &[f64],
    probes: &[Vec<f64>],
    quad: &KatoQuadrature,
) -> Result<(Vec<f64>, f64)>
where
    U: Fn(&[f64]) -> f64 + Copy,
{
    let values = times
        .iter()
        .map(|&t| kato_kappa(u, d, t, probes, quad).map(|k| k.value))
        .collect::<Result<Vec<_>>>()?;
    let slope = log_log_slope(times, &values);
    Ok((values, slope))
}

/// Exponential moment of the negative part against its Kato bound.
#[derive(Clone, Debug)]
pub struct KhasminskiiReport {
    /// `<exp(int_0^t v_-(q + w) ds)>`
    pub lhs: McEstimate,
    pub kappa: f64,
    /// `1 / (1 - kappa)`
    pub bound: f64,
    /// `lhs - 3 stderr > bound`
    pub violated: bool,
}

pub fn khasminskii_check(
    pot: &PotentialConfig,
    q: &[f64],
    grid: &TimeGrid,
    n_paths: usize,
    rng: RngStream,
    probes: &[Vec<f64>],
    quad: &KatoQuadrature,
) -> Result<KhasminskiiReport> {
    check_point(pot, q)?;
    check_paths(n_paths)?;
    let kappa = kato_kappa(|x| pot.v_minus(x), pot.d(), grid.t_end, probes, quad)?.value;
    if kappa >= 1.0 {
        return Err(invalid(format!("kappa_t(v_-) = {kappa} is not below 1")));
    }
    let bound = 1.0 / (1.0 - kappa);
    let (d, dt, n) = (pot.d(), grid.dt(), grid.n_steps);
    let (m, rejected) = accumulate(
        n_paths,
        1,
        rng,
        || (vec![0.0; (n + 1) * d], vec![0.0; d]),
        |(values, x), gen, out| {
            fill_path(values, d, dt, gen);
            let mut integral = 0.0;
            for k in 0..=n {
                for j in 0..d {
                    x[j] = q[j] + values[k * d + j];
                }
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                integral += w * pot.v_minus(x);
            }
            out[0] = Complex64::new((integral * dt).exp(), 0.0);
            finite(out[0])
        },
    );
    check_rejections(rejected, n_paths)?;
    let lhs = m.finish(1, 1, rejected);
    let violated = lhs.scalar().re - 3.0 * lhs.scalar_stderr() > bound;
    Ok(KhasminskiiReport {
        lhs,
        kappa,
        bound,
        violated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t, n).unwrap()
    }

    #[test]
    fn free_semigroup_on_constant_is_exact() {
        let pot = PotentialConfig::free(2).unwrap();
        let est = apply_semigroup(&pot, &WaveFunction::constant(1.0), &[0.3, -1.0], &grid(1.0, 32), 100, RngStream::new(0, 0)).unwrap();
        assert_eq!(est.scalar(), Complex64::new(1.0, 0.0));
        assert_eq!(est.scalar_stderr(), 0.0);
    }

    #[test]
    fn constant_potential_damps_exactly() {
        let pot = PotentialConfig::free(1).unwrap().with_scalar(|_| 0.7);
        let est = apply_semigroup(&pot, &WaveFunction::constant(1.0), &[0.0], &grid(2.0, 64), 100, RngStream::new(0, 1)).unwrap();
        assert!((est.scalar().re - (-1.4f64).exp()).abs() < 1e-14);
        assert_eq!(est.scalar_stderr(), 0.0);
    }

    #[test]
    fn free_kernel_has_zero_variance() {
        let pot = PotentialConfig::free(2).unwrap();
        let (q, qp) = ([0.1, 0.2], [0.5, -0.3]);
        let est = kernel(&pot, &q, &qp, &grid(0.8, 16), 50, RngStream::new(0, 2)).unwrap();
        assert!((est.scalar().re - free_kernel(2, &q, &qp, 0.8)).abs() < 1e-15);
        assert_eq!(est.scalar_stderr(), 0.0);
    }

    #[test]
    fn constant_gauge_gives_zero_residual() {
        let pot = PotentialConfig::free(1).unwrap().with_gauge(|_| 2.5, |_, o| o.fill(0.0));
        let r = gauge_check(&pot, &[0.0], &[0.4], &grid(1.0, 32), 64, RngStream::new(0, 3)).unwrap();
        assert_eq!(r.scalar(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn linear_gauge_is_exact_per_path() {
        let pot = Preset::GaugeLinear { d: 1, c: 1.3 }.build().unwrap();
        let r = gauge_check(&pot, &[0.2], &[-0.6], &grid(1.0, 32), 64, RngStream::new(0, 4)).unwrap();
        assert!(r.scalar().norm() < 1e-14);
        assert!(r.scalar_stderr() < 1e-14);
    }

    #[test]
    fn missing_gauge_is_an_error() {
        let pot = PotentialConfig::free(1).unwrap();
        assert!(gauge_check(&pot, &[0.0], &[0.0], &grid(1.0, 4), 8, RngStream::new(0, 0)).is_err());
        assert!(pot.gauge_transformed().is_err());
    }

    #[test]
    fn diamagnetic_without_field_coincides() {
        let pot = PotentialConfig::free(2).unwrap().with_scalar(|q| 0.2 * q[0] * q[0]);
        let psi = WaveFunction::gaussian(vec![0.5, 0.0], 1.0);
        let r = diamagnetic_check(&pot, &psi, &[0.0, 0.1], &grid(0.5, 32), 1000, RngStream::new(0, 5)).unwrap();
        assert!((r.with_a.scalar() - r.without_a.scalar()).norm() < 1e-14);
        assert!(r.holds);
    }

    #[test]
    fn rejected_paths_abort_the_estimate() {
        let pot = PotentialConfig::free(1).unwrap().with_scalar(|q| if q[0] > 0.0 { f64::NAN } else { 0.0 });
        let err = apply_semigroup(&pot, &WaveFunction::constant(1.0), &[0.0], &grid(1.0, 16), 1000, RngStream::new(0, 6)).unwrap_err();
        assert!(matches!(err, Error::TooManyRejections { .. }));
    }

    #[test]
    fn magnetic_field_of_symmetric_gauge() {
        let b0 = 1.7;
        let pot = Preset::ConstantMagnetic2d { b: b0 }.build().unwrap();
        let field = magnetic_field(&pot);
        for q in [[0.0, 0.0], [1.2, -3.0], [-0.4, 0.9]] {
            let b = field.at(&q);
            assert!((b[1] + b0).abs() < 1e-8);
            assert!((b[2] - b0).abs() < 1e-8);
            assert!(b[0].abs() < 1e-12 && b[3].abs() < 1e-12);
        }
    }

    #[test]
    fn pure_gauge_and_constant_fields_have_no_magnetic_field() {
        let constant = PotentialConfig::free(3).unwrap().with_vector(|_, o| o.copy_from_slice(&[1.0, -2.0, 0.5]), |_| 0.0);
        let grad = PotentialConfig::free(2).unwrap().with_vector(
            |q, o| {
                // grad of sin(q1) q2^2
                o[0] = q[0].cos() * q[1] * q[1];
                o[1] = 2.0 * q[0].sin() * q[1];
            },
            |q| -q[0].sin() * q[1] * q[1] + 2.0 * q[0].sin(),
        );
        for b in magnetic_field(&constant).at(&[0.3, 0.1, -0.2]) {
            assert!(b.abs() < 1e-10);
        }
        for b in magnetic_field(&grad).at(&[0.7, -1.1]) {
            assert!(b.abs() < 1e-6);
        }
        assert!(grad.consistency_defect(&[vec![0.7, -1.1], vec![0.0, 2.0]]) < 1e-6);
    }

    #[test]
    fn preset_consistency() {
        let probes = vec![vec![0.1, 0.2], vec![2.0, -1.0]];
        for preset in [
            Preset::ConstantWell { d: 2, depth: 0.5, radius: 1.0 },
            Preset::Harmonic { d: 2, omega: 1.0 },
            Preset::ConstantMagnetic2d { b: 2.0 },
        ] {
            assert!(preset.build().unwrap().consistency_defect(&probes) < 1e-6, "{preset:?}");
        }
        let well = Preset::ConstantWell { d: 1, depth: 0.5, radius: 1.0 }.build().unwrap();
        assert_eq!(well.v_minus(&[0.5]), 0.5);
        assert_eq!(well.v_plus(&[0.5]), 0.0);
        assert_eq!(well.v_minus(&[1.5]), 0.0);
    }

    #[test]
    fn kato_of_zero_and_constant() {
        let probes = vec![vec![0.0]];
        let quad = KatoQuadrature::default();
        assert_eq!(kato_kappa(|_| 0.0, 1, 0.5, &probes, &quad).unwrap().value, 0.0);
        let k = kato_kappa(|_| 2.0, 1, 0.5, &probes, &quad).unwrap();
        assert!((k.value - 1.0).abs() < 1e-4);
        assert!(k.truncated_mass < BOX_MASS_TOLERANCE);
    }

    #[test]
    fn kato_reports_box_truncation() {
        let quad = KatoQuadrature { box_lo: -1.0, box_hi: 1.0, ..Default::default() };
        let k = kato_kappa(|_| 1.0, 1, 0.5, &[vec![0.0]], &quad).unwrap();
        assert!(k.truncated_mass > 0.1);
    }

    #[test]
    fn khasminskii_without_negative_part() {
        let pot = Preset::Harmonic { d: 1, omega: 1.0 }.build().unwrap();
        let r = khasminskii_check(&pot, &[0.0], &grid(0.5, 32), 64, RngStream::new(0, 7), &[vec![0.0]], &KatoQuadrature::default()).unwrap();
        assert_eq!(r.lhs.scalar().re, 1.0);
        assert_eq!(r.bound, 1.0);
        assert!(!r.violated);
    }
}
