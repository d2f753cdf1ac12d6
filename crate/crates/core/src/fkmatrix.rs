//! Monte Carlo estimators for the Wiener average of the ordered exponential
//! `T_t(w)` and the identities it satisfies.
//!
//! All estimators draw antithetic pairs `(w, -w)`: one Monte Carlo sample is
//! the pair average, so `n_paths` paths give `n_paths / 2` samples.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::mc::{accumulate, McEstimate};
use crate::opalg::{expm, Operator, OperatorTuple, OrderedExpSolver};
use crate::quadrature::gauss_legendre_interval;
use crate::rng::RngStream;
use crate::wiener::TimeGrid;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Data `(A, B, t)` with the time grid used to discretize paths.
#[derive(Clone, Debug)]
pub struct FkProblem {
    pub a: OperatorTuple,
    pub b: Operator,
    pub t: f64,
    pub n_steps: usize,
}

impl FkProblem {
    pub fn new(a: OperatorTuple, b: Operator, t: f64, n_steps: usize) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                got: b.dim(),
            });
        }
        if !(t >= 0.0 && t.is_finite()) {
            return Err(invalid(format!("time must be finite and >= 0, got {t}")));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps must be >= 1"));
        }
        Ok(Self { a, b, t, n_steps })
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }

    /// `None` at `t = 0`.
    pub fn grid(&self) -> Option<TimeGrid> {
        TimeGrid::new(self.t, self.n_steps).ok()
    }

    fn noise_free(&self) -> bool {
        self.a.components().iter().all(|a| a.max_abs() == 0.0)
    }

    /// Same data at another horizon.
    pub fn with_time(&self, t: f64, n_steps: usize) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), t, n_steps)
    }
}

/// `expm(-t (1/2 sum_j A_j^2 + B))`.
pub fn rhs_generator(problem: &FkProblem) -> Result<Operator> {
    let mut gen = problem.a.square().scale_real(0.5);
    gen = &gen + &problem.b;
    expm(&gen.scale_real(-problem.t))
}

fn check_samples(n_paths: usize) -> Result<usize> {
    if n_paths < 4 {
        return Err(invalid("need at least 4 paths (2 antithetic pairs)"));
    }
    Ok(n_paths / 2)
}

/// Per-chunk scratch for the pair estimators.
struct PairWork<'a> {
    solver: OrderedExpSolver<'a>,
    dw: Vec<f64>,
    acc: Vec<Complex64>,
}

fn sample_increments(dw: &mut [f64], dt: f64, gen: &mut crate::rng::Gaussian) {
    gen.fill_normal(dw, dt.sqrt());
}

fn add_scaled(acc: &mut [Complex64], op: &Operator, s: f64) {
    for (a, z) in acc.iter_mut().zip(op.as_slice()) {
        *a += z * s;
    }
}

/// Antithetic Monte Carlo estimate of `<T_t(w)>`.
pub fn estimate_generalized_fk(
    problem: &FkProblem,
    n_paths: usize,
    rng: RngStream,
) -> Result<McEstimate> {
    let pairs = check_samples(n_paths)?;
    let dim = problem.dim();
    let grid = match problem.grid() {
        Some(g) if !problem.noise_free() => g,
        _ => {
            let exact = expm(&problem.b.scale_real(-problem.t))?;
            return Ok(McEstimate::exact(dim, dim, exact.into_vec(), pairs));
        }
    };
    let (d, n, dt) = (problem.a.d(), grid.n_steps, grid.dt());
    let failure = std::sync::Mutex::new(None);
    let (m, _) = accumulate(
        pairs,
        dim * dim,
        rng,
        || PairWork {
            solver: OrderedExpSolver::new(&problem.a, &problem.b).expect("validated"),
            dw: vec![0.0; n * d],
            acc: vec![ZERO; dim * dim],
        },
        |work, gen, out| {
            sample_increments(&mut work.dw, dt, gen);
            out.fill(ZERO);
            for sign in [1.0, -1.0] {
                work.solver.reset();
                for k in 0..n {
                    if let Err(e) = work.solver.step(&work.dw[k * d..(k + 1) * d], sign, dt) {
                        *failure.lock().unwrap() = Some(e);
                        return false;
                    }
                }
                add_scaled(out, work.solver.state(), 0.5);
            }
            true
        },
    );
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    Ok(m.finish(dim, dim, 0))
}

/// Residual of `<int_0^t dw_j(s) T_s> + (i/2) A_j <int_0^t ds T_s>` for each
/// component `j`, with the midpoint sum for the stochastic integral and the
/// trapezoid rule for the time integral. Requires `B = 0`.
pub fn check_nov_identity(
    problem: &FkProblem,
    n_paths: usize,
    rng: RngStream,
) -> Result<Vec<McEstimate>> {
    if problem.b.max_abs() != 0.0 {
        return Err(invalid("the integration-by-parts check needs B = 0"));
    }
    let pairs = check_samples(n_paths)?;
    let dim = problem.dim();
    let d = problem.a.d();
    let grid = match problem.grid() {
        Some(g) if !problem.noise_free() => g,
        _ => {
            return Ok((0..d)
                .map(|_| McEstimate::exact(dim, dim, vec![ZERO; dim * dim], pairs))
                .collect())
        }
    };
    let (n, dt) = (grid.n_steps, grid.dt());
    let half_a: Vec<Operator> = problem
        .a
        .components()
        .iter()
        .map(|a| a.scale(Complex64::new(0.0, 0.5)))
        .collect();
    let len = d * dim * dim;
    let (m, _) = accumulate(
        pairs,
        len,
        rng,
        || PairWork {
            solver: OrderedExpSolver::new(&problem.a, &problem.b).expect("validated"),
            dw: vec![0.0; n * d],
            acc: vec![ZERO; (d + 1) * dim * dim],
        },
        |work, gen, out| {
            sample_increments(&mut work.dw, dt, gen);
            out.fill(ZERO);
            let block = dim * dim;
            for sign in [1.0, -1.0] {
                work.solver.reset();
                // acc[j] = sum_v dw_j (T_v + T_{v-1})/2, acc[d] = sum_v dt (T_v + T_{v-1})/2
                work.acc.fill(ZERO);
                for k in 0..n {
                    let dw = &work.dw[k * d..(k + 1) * d];
                    let prev = work.solver.state().clone();
                    if work.solver.step(dw, sign, dt).is_err() {
                        return false;
                    }
                    let cur = work.solver.state();
                    for (idx, (p, c)) in prev.as_slice().iter().zip(cur.as_slice()).enumerate() {
                        let mid = 0.5 * (p + c);
                        for j in 0..d {
                            work.acc[j * block + idx] += mid * (sign * dw[j]);
                        }
                        work.acc[d * block + idx] += mid * dt;
                    }
                }
                let time_int = Operator::from_vec(dim, work.acc[d * block..].to_vec());
                for j in 0..d {
                    let corr = &half_a[j] * &time_int;
                    for idx in 0..block {
                        out[j * block + idx] += 0.5 * (work.acc[j * block + idx] + corr.as_slice()[idx]);
                    }
                }
            }
            true
        },
    );
    let est = m.finish(1, len, 0);
    let block = dim * dim;
    Ok((0..d)
        .map(|j| McEstimate {
            rows: dim,
            cols: dim,
            mean: est.mean[j * block..(j + 1) * block].to_vec(),
            stderr: est.stderr[j * block..(j + 1) * block].to_vec(),
            n_samples: est.n_samples,
            rejected: 0,
        })
        .collect())
}

/// Residual of the Duhamel equation
/// `<T_t> - e^{-t A^2/2} + int_0^t ds e^{-(t-s) A^2/2} B <T_s>`.
///
/// The `s` integral uses `n_quad` Gauss-Legendre nodes snapped to grid
/// times; `<T_s>` comes from the prefixes of the same paths.
pub fn check_duhamel(
    problem: &FkProblem,
    n_paths: usize,
    n_quad: usize,
    rng: RngStream,
) -> Result<McEstimate> {
    if n_quad == 0 {
        return Err(invalid("n_quad must be >= 1"));
    }
    let pairs = check_samples(n_paths)?;
    let dim = problem.dim();
    let Some(grid) = problem.grid() else {
        return Ok(McEstimate::exact(dim, dim, vec![ZERO; dim * dim], pairs));
    };
    let (d, n, dt, t) = (problem.a.d(), grid.n_steps, grid.dt(), problem.t);
    let half_sq = problem.a.square().scale_real(0.5);
    let free = |tau: f64| expm(&half_sq.scale_real(-tau));
    let free_t = free(t)?;
    let (nodes, weights) = gauss_legendre_interval(n_quad, 0.0, t);
    // quad[k] = (grid index, w_k e^{-(t - s_k) A^2/2} B)
    let mut quad: Vec<(usize, Operator)> = Vec::with_capacity(n_quad);
    for (s, w) in nodes.iter().zip(&weights) {
        let idx = grid.nearest_index(*s);
        let m = (&free(t - grid.time(idx))? * &problem.b).scale_real(*w);
        quad.push((idx, m));
    }
    // visited in grid order below
    quad.sort_by_key(|(idx, _)| *idx);
    let noise_free = problem.noise_free();
    let pair_half = |sign: f64, solver: &mut OrderedExpSolver, dw: &[f64], out: &mut [Complex64]| -> Result<()> {
        solver.reset();
        let mut q = quad.iter().peekable();
        let mut integral = Operator::zeros(dim);
        for k in 0..=n {
            while let Some((idx, m)) = q.peek() {
                if *idx != k {
                    break;
                }
                integral = &integral + &(m * solver.state());
                q.next();
            }
            if k < n {
                solver.step(&dw[k * d..(k + 1) * d], sign, dt)?;
            }
        }
        let resid = &(&(solver.state() - &free_t) + &integral);
        add_scaled(out, resid, 0.5);
        Ok(())
    };
    if noise_free {
        let mut solver = OrderedExpSolver::new(&problem.a, &problem.b)?;
        let dw = vec![0.0; n * d];
        let mut out = vec![ZERO; dim * dim];
        pair_half(1.0, &mut solver, &dw, &mut out)?;
        pair_half(-1.0, &mut solver, &dw, &mut out)?;
        return Ok(McEstimate::exact(dim, dim, out, pairs));
    }
    let (m, rejected) = accumulate(
        pairs,
        dim * dim,
        rng,
        || PairWork {
            solver: OrderedExpSolver::new(&problem.a, &problem.b).expect("validated"),
            dw: vec![0.0; n * d],
            acc: Vec::new(),
        },
        |work, gen, out| {
            sample_increments(&mut work.dw, dt, gen);
            out.fill(ZERO);
            for sign in [1.0, -1.0] {
                if pair_half(sign, &mut work.solver, &work.dw, out).is_err() {
                    return false;
                }
            }
            true
        },
    );
    if rejected > 0 {
        return Err(Error::NonFinite("ordered exponential failed".into()));
    }
    Ok(m.finish(dim, dim, 0))
}

/// `(A_+ + A_-, i (A_+ - A_-))`: the two-component tuple whose
/// half-square is `A_+ A_- + A_- A_+`.
pub fn ladder_tuple(a_plus: &Operator, a_minus: &Operator) -> Result<OperatorTuple> {
    OperatorTuple::new(vec![
        a_plus + a_minus,
        (a_plus - a_minus).scale(Complex64::new(0.0, 1.0)),
    ])
}

/// Antithetic estimate of the ordered exponential driven by
/// `(dw_1 + i dw_2) A_+ + (dw_1 - i dw_2) A_- - i B`; the Wiener average
/// targets `expm(-t (A_+ A_- + A_- A_+ + B))`.
pub fn estimate_product_formula(
    a_plus: &Operator,
    a_minus: &Operator,
    b: &Operator,
    grid: &TimeGrid,
    n_paths: usize,
    rng: RngStream,
) -> Result<McEstimate> {
    let dim = b.dim();
    for op in [a_plus, a_minus] {
        if op.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: op.dim(),
            });
        }
    }
    let pairs = check_samples(n_paths)?;
    if a_plus.max_abs() == 0.0 && a_minus.max_abs() == 0.0 {
        let exact = expm(&b.scale_real(-grid.t_end))?;
        return Ok(McEstimate::exact(dim, dim, exact.into_vec(), pairs));
    }
    let tuple = OperatorTuple::new(vec![a_plus.clone(), a_minus.clone()])?;
    let (n, dt) = (grid.n_steps, grid.dt());
    let (m, rejected) = accumulate(
        pairs,
        dim * dim,
        rng,
        || PairWork {
            solver: OrderedExpSolver::new(&tuple, b).expect("validated"),
            dw: vec![0.0; 2 * n],
            acc: Vec::new(),
        },
        |work, gen, out| {
            sample_increments(&mut work.dw, dt, gen);
            out.fill(ZERO);
            for sign in [1.0, -1.0] {
                work.solver.reset();
                for k in 0..n {
                    let (w1, w2) = (sign * work.dw[2 * k], sign * work.dw[2 * k + 1]);
                    let coeffs = [Complex64::new(w1, w2), Complex64::new(w1, -w2)];
                    if work.solver.step_complex(&coeffs, dt).is_err() {
                        return false;
                    }
                }
                add_scaled(out, work.solver.state(), 0.5);
            }
            true
        },
    );
    if rejected > 0 {
        return Err(Error::NonFinite("ordered exponential failed".into()));
    }
    Ok(m.finish(dim, dim, 0))
}

/// `<T_t>` against `<T_{t/2}>^2` with independent ensembles.
#[derive(Clone, Debug)]
pub struct SemigroupCheck {
    pub full: McEstimate,
    pub half: McEstimate,
    /// `||<T_t> - <T_{t/2}>^2||_F`
    pub distance: f64,
    /// First-order propagated error of the distance.
    pub combined_stderr: f64,
}

pub fn semigroup_check(problem: &FkProblem, n_paths: usize, rng: RngStream) -> Result<SemigroupCheck> {
    let half_problem = problem.with_time(0.5 * problem.t, (problem.n_steps / 2).max(1))?;
    let full = estimate_generalized_fk(problem, n_paths, rng)?;
    let half = estimate_generalized_fk(&half_problem, n_paths, rng.substream(1 << 40))?;
    let h = half.operator();
    let distance = full.operator().distance(&(&h * &h));
    let combined_stderr =
        full.stderr_frobenius() + 2.0 * h.frobenius_norm() * half.stderr_frobenius();
    Ok(SemigroupCheck {
        full,
        half,
        distance,
        combined_stderr,
    })
}
