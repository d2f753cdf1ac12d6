//! Dense complex operators on finite-dimensional spaces.
//!
//! Holds the matrix exponential used as reference for every semigroup, the
//! product-integral solver for the linear Stratonovich operator equation
//! `dT = -i dw.A T - B T ds`, its truncated Dyson expansion, and the
//! product-formula engine `[F(t/n)]^n` with a generator probe.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::wiener::WienerPath;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Square complex matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct Operator {
    dim: usize,
    data: Vec<Complex64>,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Operator({}x{})", self.dim, self.dim)?;
        for r in 0..self.dim {
            let row: Vec<String> = (0..self.dim)
                .map(|c| {
                    let z = self[(r, c)];
                    format!("{:+.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl Operator {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    /// Panics unless `data.len() == dim * dim`.
    pub fn from_vec(dim: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), dim * dim, "operator data has wrong length");
        Self { dim, data }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        Self { dim, data }
    }

    /// Builds from rows of `(re, im)` pairs, validating shape and finiteness.
    pub fn from_rows(rows: &[Vec<[f64; 2]>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(invalid("operator must have dimension >= 1"));
        }
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend(row.iter().map(|&[re, im]| Complex64::new(re, im)));
        }
        let op = Self { dim, data };
        if !op.is_finite() {
            return Err(Error::NonFinite("operator entry".into()));
        }
        Ok(op)
    }

    pub fn diagonal(values: &[Complex64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(Complex64::new(s, 0.0))
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self[(c, r)].conj())
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        (0..self.dim)
            .map(|c| (0..self.dim).map(|r| self[(r, c)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn distance(&self, other: &Operator) -> f64 {
        (self - other).frobenius_norm()
    }

    pub fn commutator(&self, other: &Operator) -> Operator {
        &(self * other) - &(other * self)
    }

    /// Deviation from unitarity, `||U^dagger U - 1||_F`.
    pub fn unitarity_defect(&self) -> f64 {
        (&self.adjoint() * self).distance(&Operator::identity(self.dim))
    }

    pub fn hermiticity_defect(&self) -> f64 {
        self.distance(&self.adjoint())
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|r| {
                self.data[r * self.dim..(r + 1) * self.dim]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `self <- self + s * other`
    pub fn axpy(&mut self, s: Complex64, other: &Operator) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn pow(&self, n: usize) -> Operator {
        let mut out = Operator::identity(self.dim);
        for _ in 0..n {
            out = self * &out;
        }
        out
    }
}

/// `out = a * b`; `out` must not alias.
fn mul_into(a: &Operator, b: &Operator, out: &mut Operator) {
    let n = a.dim;
    debug_assert!(b.dim == n && out.dim == n);
    for r in 0..n {
        let arow = &a.data[r * n..(r + 1) * n];
        let orow = &mut out.data[r * n..(r + 1) * n];
        orow.fill(ZERO);
        for (k, &aik) in arow.iter().enumerate() {
            if aik == ZERO {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

impl Index<(usize, usize)> for Operator {
    type Output = Complex64;
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for Operator {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.dim + c]
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "operator dimensions differ");
        let mut out = Operator::zeros(self.dim);
        mul_into(self, rhs, &mut out);
        out
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "operator dimensions differ");
        Operator {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim, rhs.dim, "operator dimensions differ");
        Operator {
            dim: self.dim,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Pauli and ladder matrices.
pub mod pauli {
    use super::*;

    fn m(rows: [[Complex64; 2]; 2]) -> Operator {
        Operator::from_vec(2, vec![rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
    }

    pub fn sigma_x() -> Operator {
        m([[ZERO, ONE], [ONE, ZERO]])
    }

    pub fn sigma_y() -> Operator {
        m([[ZERO, -I], [I, ZERO]])
    }

    pub fn sigma_z() -> Operator {
        m([[ONE, ZERO], [ZERO, -ONE]])
    }

    /// Raising matrix `[[0,1],[0,0]]`.
    pub fn sigma_plus() -> Operator {
        m([[ZERO, ONE], [ZERO, ZERO]])
    }

    /// Lowering matrix `[[0,0],[1,0]]`.
    pub fn sigma_minus() -> Operator {
        m([[ZERO, ZERO], [ONE, ZERO]])
    }
}

/// The d components `(A_1, ..., A_d)` of a vector operator.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorTuple {
    components: Vec<Operator>,
    dim: usize,
}

impl OperatorTuple {
    pub fn new(components: Vec<Operator>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| invalid("operator tuple needs at least one component"))?;
        let dim = first.dim();
        for c in &components {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.dim(),
                });
            }
        }
        Ok(Self { components, dim })
    }

    /// `d` zero components of size `dim`.
    pub fn zeros(d: usize, dim: usize) -> Self {
        Self {
            components: vec![Operator::zeros(dim); d.max(1)],
            dim,
        }
    }

    pub fn d(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Operator] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &Operator {
        &self.components[j]
    }

    /// `sum_j A_j^2`
    pub fn square(&self) -> Operator {
        let mut out = Operator::zeros(self.dim);
        for a in &self.components {
            out = &out + &(a * a);
        }
        out
    }

    /// `sum_j c_j A_j`
    pub fn contract(&self, coeffs: &[Complex64]) -> Operator {
        let mut out = Operator::zeros(self.dim);
        for (a, &c) in self.components.iter().zip(coeffs) {
            out.axpy(c, a);
        }
        out
    }
}

/// Scratch buffers for repeated exponentials of one size.
pub struct ExpmWorkspace {
    term: Operator,
    tmp: Operator,
    pub(crate) out: Operator,
}

impl ExpmWorkspace {
    pub fn new(dim: usize) -> Self {
        Self {
            term: Operator::zeros(dim),
            tmp: Operator::zeros(dim),
            out: Operator::zeros(dim),
        }
    }

    /// Exponential of `x`, left in `self.out`.
    pub fn compute(&mut self, x: &Operator) -> Result<()> {
        let norm = x.one_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("expm argument".into()));
        }
        if x.dim == 2 {
            expm_2x2(&x.data, &mut self.out.data);
            if !self.out.is_finite() {
                return Err(Error::ExpmOverflow { norm });
            }
            return Ok(());
        }
        // Reduce to norm <= 1/2, where the Taylor tail is below 1e-17.
        let squarings = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as i32
        } else {
            0
        };
        let scale = 0.5f64.powi(squarings);
        let n = x.dim;
        let out = &mut self.out;
        let term = &mut self.term;
        let tmp = &mut self.tmp;
        *out = Operator::identity(n);
        *term = Operator::identity(n);
        let scaled_norm = norm * scale;
        let mut bound = 1.0;
        for k in 1..=40 {
            mul_into(term, x, tmp);
            let f = scale / k as f64;
            for (t, s) in term.data.iter_mut().zip(&tmp.data) {
                *t = s * f;
            }
            for (o, t) in out.data.iter_mut().zip(&term.data) {
                *o += t;
            }
            bound *= scaled_norm / k as f64;
            if bound < 1e-18 {
                break;
            }
        }
        for _ in 0..squarings {
            mul_into(out, out, tmp);
            std::mem::swap(out, tmp);
        }
        if !out.is_finite() {
            return Err(Error::ExpmOverflow { norm });
        }
        Ok(())
    }
}

/// Closed form for 2x2: with `x = tau 1 + y`, `tr y = 0`, `y^2 = delta^2 1`,
/// `exp(x) = e^tau (cosh(delta) 1 + sinh(delta)/delta y)`.
fn expm_2x2(x: &[Complex64], out: &mut [Complex64]) {
    let tau = 0.5 * (x[0] + x[3]);
    let y00 = x[0] - tau;
    let delta_sq = y00 * y00 + x[1] * x[2];
    let (ch, sh_over) = if delta_sq.norm() < 1e-6 {
        let d2 = delta_sq;
        (
            ONE + d2 * (0.5 + d2 * (1.0 / 24.0 + d2 / 720.0)),
            ONE + d2 * (1.0 / 6.0 + d2 * (1.0 / 120.0 + d2 / 5040.0)),
        )
    } else {
        let delta = delta_sq.sqrt();
        (delta.cosh(), delta.sinh() / delta)
    };
    let scale = tau.exp();
    let (c, s) = (scale * ch, scale * sh_over);
    out[0] = c + s * y00;
    out[1] = s * x[1];
    out[2] = s * x[2];
    out[3] = c - s * y00;
}

/// Reference Taylor/scaling-and-squaring exponential, kept for cross-checks
/// of the 2x2 closed form.
#[cfg(test)]
pub(crate) fn expm_series(x: &Operator) -> Operator {
    let mut ws = ExpmWorkspace::new(x.dim());
    let mut y = x.clone();
    // embed in 3x3 so the generic path is taken
    if x.dim() == 2 {
        y = Operator::from_fn(3, |r, c| if r < 2 && c < 2 { x[(r, c)] } else { ZERO });
        ws = ExpmWorkspace::new(3);
    }
    ws.compute(&y).unwrap();
    if x.dim() == 2 {
        Operator::from_fn(2, |r, c| ws.out[(r, c)])
    } else {
        ws.out
    }
}

/// Matrix exponential by scaling and squaring around a truncated Taylor series.
pub fn expm(x: &Operator) -> Result<Operator> {
    let mut ws = ExpmWorkspace::new(x.dim());
    ws.compute(x)?;
    Ok(ws.out)
}

fn check_sde_inputs(d: usize, a: &OperatorTuple, b: &Operator) -> Result<()> {
    if a.d() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: a.d(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

/// Product-integral solver with reusable buffers.
///
/// Step `k` multiplies `expm(-i dw_k.A - dt B)` onto the left of the running
/// product, so later times stand leftmost.
pub struct OrderedExpSolver<'a> {
    a: &'a OperatorTuple,
    b: &'a Operator,
    ws: ExpmWorkspace,
    gen: Operator,
    next: Operator,
    coeffs: Vec<Complex64>,
    pub(crate) state: Operator,
}

impl<'a> OrderedExpSolver<'a> {
    pub fn new(a: &'a OperatorTuple, b: &'a Operator) -> Result<Self> {
        check_sde_inputs(a.d(), a, b)?;
        let n = b.dim();
        Ok(Self {
            a,
            b,
            ws: ExpmWorkspace::new(n),
            gen: Operator::zeros(n),
            next: Operator::zeros(n),
            coeffs: vec![ZERO; a.d()],
            state: Operator::identity(n),
        })
    }

    pub fn reset(&mut self) {
        self.state = Operator::identity(self.b.dim());
    }

    pub fn state(&self) -> &Operator {
        &self.state
    }

    /// Advances by one grid step with increment `sign * dw`.
    pub fn step(&mut self, dw: &[f64], sign: f64, dt: f64) -> Result<()> {
        for (c, &x) in self.coeffs.iter_mut().zip(dw) {
            *c = Complex64::new(sign * x, 0.0);
        }
        self.advance(dt)
    }

    /// Advances by `expm(-i sum_j c_j A_j - dt B)` for complex `c_j`.
    pub fn step_complex(&mut self, coeffs: &[Complex64], dt: f64) -> Result<()> {
        self.coeffs.copy_from_slice(coeffs);
        self.advance(dt)
    }

    fn advance(&mut self, dt: f64) -> Result<()> {
        for (g, bv) in self.gen.data.iter_mut().zip(&self.b.data) {
            *g = bv * (-dt);
        }
        for (a, &c) in self.a.components.iter().zip(&self.coeffs) {
            let c = -I * c;
            if c == ZERO {
                continue;
            }
            for (g, av) in self.gen.data.iter_mut().zip(&a.data) {
                *g += c * av;
            }
        }
        self.ws.compute(&self.gen)?;
        mul_into(&self.ws.out, &self.state, &mut self.next);
        std::mem::swap(&mut self.state, &mut self.next);
        Ok(())
    }
}

/// Time-ordered exponential `T_t(w)` along a discretized path.
pub fn ordered_exp_sde(path: &WienerPath, a: &OperatorTuple, b: &Operator) -> Result<Operator> {
    check_sde_inputs(path.d(), a, b)?;
    ordered_exp_steps(path, 0, path.grid().n_steps, a, b)
}

/// Ordered exponential over grid steps `first..last` only; this is the
/// solution on `[s_first, s_last]` driven by the shifted path.
pub fn ordered_exp_steps(
    path: &WienerPath,
    first: usize,
    last: usize,
    a: &OperatorTuple,
    b: &Operator,
) -> Result<Operator> {
    check_sde_inputs(path.d(), a, b)?;
    if first > last || last > path.grid().n_steps {
        return Err(invalid("step range outside the path grid"));
    }
    let dt = path.grid().dt();
    let mut solver = OrderedExpSolver::new(a, b)?;
    let mut dw = vec![0.0; path.d()];
    for k in first..last {
        path.increment_into(k, &mut dw);
        solver.step(&dw, 1.0, dt)?;
    }
    Ok(solver.state)
}

pub const MAX_DYSON_ORDER: usize = 6;

/// Iterated-integral expansion of `T_t(w)` truncated at total degree `order`.
///
/// With the driving term piecewise constant on grid steps, the degree-`k`
/// term is the sum over step multiplicities `m_1 + ... + m_n = k` of
/// `X_n^{m_n}/m_n! ... X_1^{m_1}/m_1!`, `X_v = -i dw_v.A - dt B`. The
/// `1/m!` weights are the simplex volumes for coincident time indices,
/// i.e. the midpoint convention.
pub fn dyson_series(
    path: &WienerPath,
    a: &OperatorTuple,
    b: &Operator,
    order: usize,
) -> Result<Operator> {
    if order > MAX_DYSON_ORDER {
        return Err(invalid(format!(
            "Dyson order {order} exceeds maximum {MAX_DYSON_ORDER}"
        )));
    }
    check_sde_inputs(path.d(), a, b)?;
    let dim = b.dim();
    let dt = path.grid().dt();
    // partial[k] = degree-k part of the product over the steps seen so far
    let mut partial: Vec<Operator> = (0..=order)
        .map(|k| {
            if k == 0 {
                Operator::identity(dim)
            } else {
                Operator::zeros(dim)
            }
        })
        .collect();
    let mut dw = vec![0.0; path.d()];
    for step in 0..path.grid().n_steps {
        path.increment_into(step, &mut dw);
        let coeffs: Vec<Complex64> = dw.iter().map(|&x| Complex64::new(0.0, -x)).collect();
        let mut x = a.contract(&coeffs);
        x.axpy(Complex64::new(-dt, 0.0), b);
        // x_pow[m] = X^m / m!
        let mut x_pow = vec![Operator::identity(dim)];
        for m in 1..=order {
            x_pow.push((&x * &x_pow[m - 1]).scale_real(1.0 / m as f64));
        }
        let mut next = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let mut acc = Operator::zeros(dim);
            for m in 0..=k {
                acc = &acc + &(&x_pow[m] * &partial[k - m]);
            }
            next.push(acc);
        }
        partial = next;
    }
    let mut total = Operator::zeros(dim);
    for p in &partial {
        total = &total + p;
    }
    Ok(total)
}

type FamilyFn = dyn Fn(f64) -> Result<Operator> + Send + Sync;

/// A one-parameter family `F(t)` with `F(0) = 1`.
pub struct ApproximantFamily {
    dim: usize,
    eval: Box<FamilyFn>,
}

impl ApproximantFamily {
    /// Rejects families whose value at 0 differs from the identity by more
    /// than 1e-12 in any entry.
    pub fn new<F>(dim: usize, eval: F) -> Result<Self>
    where
        F: Fn(f64) -> Result<Operator> + Send + Sync + 'static,
    {
        let at_zero = eval(0.0)?;
        if at_zero.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: at_zero.dim(),
            });
        }
        let defect = (&at_zero - &Operator::identity(dim)).max_abs();
        if defect > 1e-12 {
            return Err(invalid(format!("family is not the identity at 0 (defect {defect:e})")));
        }
        Ok(Self {
            dim,
            eval: Box::new(eval),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, t: f64) -> Result<Operator> {
        (self.eval)(t)
    }
}

/// `[F(t/n)]^n` by repeated multiplication.
pub fn trotter_product(family: &ApproximantFamily, t: f64, n: usize) -> Result<Operator> {
    if t < 0.0 || !t.is_finite() {
        return Err(invalid("product time must be finite and >= 0"));
    }
    if n == 0 {
        return Err(invalid("product needs n >= 1"));
    }
    let factor = family.eval(t / n as f64)?;
    let mut out = factor.clone();
    let mut tmp = Operator::zeros(family.dim());
    for _ in 1..n {
        mul_into(&factor, &out, &mut tmp);
        std::mem::swap(&mut out, &mut tmp);
    }
    Ok(out)
}

/// Step of the generator probe: 2^-17, about 7.6e-6, so that `1 +/- h x`
/// is exact for dyadic `x`.
pub const PROBE_STEP: f64 = 1.0 / 131_072.0;

/// Central-difference estimate of `-F'(0)`.
pub fn generator_probe(family: &ApproximantFamily) -> Result<Operator> {
    let h = PROBE_STEP;
    let fwd = family.eval(h)?;
    let back = family.eval(-h)?;
    Ok((&fwd - &back).scale_real(-0.5 / h))
}
