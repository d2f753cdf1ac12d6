//! Validated experiment plans and their execution.

use fklab_core::fkmatrix::{estimate_generalized_fk, estimate_product_formula, rhs_generator, semigroup_check, FkProblem};
use fklab_core::fkschrodinger::{
    diamagnetic_check, free_kernel, gauge_check, kato_kappa, kernel, khasminskii_check, KatoQuadrature,
    PotentialConfig, WaveFunction,
};
use fklab_core::opalg::expm;
use fklab_core::phasespace::{alpha_quantize, alpha_symbol, standard_hamiltonian, trotter_reconstruct, Kinetic, PeriodicGrid};
use fklab_core::stochint::{convert_check, AlphaScheme, FieldWithDivergence};
use fklab_core::wiener::PathEnsemble;
use fklab_core::{Complex64, Operator, OperatorTuple, RngStream, TimeGrid, WienerPath};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{invalid, operator, params, Config, ConfigError, Experiment, KineticSpec, PotentialSpec};
use crate::report::{estimate_rows, Row};

/// Default z-score limit for Monte Carlo rows.
pub const Z_LIMIT: f64 = 4.0;
/// Relative tolerance for kernels against a closed form.
pub const KERNEL_RTOL: f64 = 0.02;
/// Absolute floor for common-path residuals that vanish up to rounding.
pub const RESIDUAL_FLOOR: f64 = 1e-14;
/// Absolute floor for the semigroup distance.
pub const SEMIGROUP_FLOOR: f64 = 1e-2;
pub const ROUNDTRIP_TOL: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn real(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn core(e: fklab_core::Error) -> ConfigError {
    invalid(e.to_string())
}

pub struct Potential {
    spec: PotentialSpec,
    config: PotentialConfig,
}

impl Potential {
    fn build(spec: PotentialSpec) -> Result<Self, ConfigError> {
        let config = spec.preset().build().map_err(core)?;
        Ok(Self { spec, config })
    }

    fn point(&self, q: &[f64], name: &str) -> Result<(), ConfigError> {
        if q.len() != self.config.d() || q.iter().any(|x| !x.is_finite()) {
            return Err(invalid(format!("{name} must be a finite point in {} dimensions", self.config.d())));
        }
        Ok(())
    }

    /// Closed-form kernel where one is known.
    fn exact_kernel(&self, q: &[f64], q_prime: &[f64], t: f64) -> Option<f64> {
        match self.spec {
            PotentialSpec::Free { d } => Some(free_kernel(d, q, q_prime, t)),
            PotentialSpec::Harmonic { omega, .. } if omega > 0.0 => {
                let (s, c) = ((omega * t).sinh(), (omega * t).cosh());
                Some(
                    q.iter()
                        .zip(q_prime)
                        .map(|(x, y)| {
                            let norm = (omega / (2.0 * std::f64::consts::PI * s)).sqrt();
                            norm * (-omega * ((x * x + y * y) * c - 2.0 * x * y) / (2.0 * s)).exp()
                        })
                        .product(),
                )
            }
            _ => None,
        }
    }
}

pub enum Plan {
    WienerStats { d: usize, times: Vec<f64> },
    Stochint { alpha: AlphaScheme },
    FkMatrix { problem: FkProblem },
    FkProduct { a_plus: Operator, a_minus: Operator, b: Operator },
    FkSemigroup { problem: FkProblem },
    FkKernel { pot: Potential, q: Vec<f64>, q_prime: Vec<f64> },
    Gauge { pot: Potential, q: Vec<f64>, q_prime: Vec<f64> },
    Kato { pot: Potential, probes: Vec<Vec<f64>>, quad: KatoQuadrature },
    Khasminskii { pot: Potential, q: Vec<f64>, probes: Vec<Vec<f64>>, quad: KatoQuadrature },
    Diamagnetic { pot: Potential, psi: WaveFunction, probes: Vec<Vec<f64>> },
    Roundtrip { grid: PeriodicGrid, alpha: f64, trials: usize },
    Trotter { grid: PeriodicGrid, h: Operator, alpha: f64, n: usize },
}

/// Everything needed to run one configuration.
pub struct Job {
    pub plan: Plan,
    pub grid: TimeGrid,
    pub seed: u64,
    pub n_paths: usize,
}

fn check_probes(pot: &Potential, probes: &[Vec<f64>]) -> Result<(), ConfigError> {
    if probes.is_empty() {
        return Err(invalid("probes must not be empty"));
    }
    probes.iter().try_for_each(|p| pot.point(p, "probe"))
}

fn check_alpha(alpha: f64) -> Result<(), ConfigError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid("alpha must lie in [0, 1]"));
    }
    Ok(())
}

impl Job {
    pub fn new(config: &Config) -> Result<Self, ConfigError> {
        let grid = TimeGrid::new(config.grid.t_end, config.grid.n_steps).map_err(core)?;
        let t = grid.t_end;
        let plan = match config.experiment {
            Experiment::WienerStats => {
                let p: params::WienerStats = config.params()?;
                if p.d == 0 || p.times.is_empty() {
                    return Err(invalid("wiener-stats needs d >= 1 and at least one time"));
                }
                if p.times.iter().any(|&s| !(s > 0.0 && s <= t)) {
                    return Err(invalid("times must lie in (0, t_end]"));
                }
                Plan::WienerStats { d: p.d, times: p.times }
            }
            Experiment::StochintConvergence => {
                let p: params::StochintConvergence = config.params()?;
                Plan::Stochint { alpha: AlphaScheme::new(p.alpha).map_err(core)? }
            }
            Experiment::FkMatrix | Experiment::FkSemigroup => {
                let p: params::FkMatrix = config.params()?;
                let a = p
                    .a
                    .iter()
                    .enumerate()
                    .map(|(j, m)| operator(m, &format!("a[{j}]")))
                    .collect::<Result<Vec<_>, _>>()?;
                let tuple = OperatorTuple::new(a).map_err(core)?;
                let problem = FkProblem::new(tuple, operator(&p.b, "b")?, t, grid.n_steps).map_err(core)?;
                if config.experiment == Experiment::FkMatrix {
                    Plan::FkMatrix { problem }
                } else {
                    Plan::FkSemigroup { problem }
                }
            }
            Experiment::FkProduct => {
                let p: params::FkProduct = config.params()?;
                let (a_plus, a_minus, b) =
                    (operator(&p.a_plus, "a_plus")?, operator(&p.a_minus, "a_minus")?, operator(&p.b, "b")?);
                if a_plus.dim() != b.dim() || a_minus.dim() != b.dim() {
                    return Err(invalid("a_plus, a_minus and b must share a dimension"));
                }
                Plan::FkProduct { a_plus, a_minus, b }
            }
            Experiment::FkKernel | Experiment::Gauge => {
                let p: params::Kernel = config.params()?;
                let pot = Potential::build(p.potential)?;
                pot.point(&p.q, "q")?;
                pot.point(&p.q_prime, "q_prime")?;
                if config.experiment == Experiment::FkKernel {
                    Plan::FkKernel { pot, q: p.q, q_prime: p.q_prime }
                } else {
                    if pot.config.gauge().is_none() {
                        return Err(invalid("gauge needs a potential with a gauge function (gauge-linear)"));
                    }
                    Plan::Gauge { pot, q: p.q, q_prime: p.q_prime }
                }
            }
            Experiment::Kato => {
                let p: params::Kato = config.params()?;
                let pot = Potential::build(p.potential)?;
                check_probes(&pot, &p.probes)?;
                Plan::Kato { pot, probes: p.probes, quad: p.quadrature.build()? }
            }
            Experiment::Khasminskii => {
                let p: params::Khasminskii = config.params()?;
                let pot = Potential::build(p.potential)?;
                pot.point(&p.q, "q")?;
                check_probes(&pot, &p.probes)?;
                Plan::Khasminskii { pot, q: p.q, probes: p.probes, quad: p.quadrature.build()? }
            }
            Experiment::Diamagnetic => {
                let p: params::Diamagnetic = config.params()?;
                let pot = Potential::build(p.potential)?;
                pot.point(&p.center, "center")?;
                check_probes(&pot, &p.probes)?;
                if !(p.width > 0.0) {
                    return Err(invalid("width must be positive"));
                }
                Plan::Diamagnetic { pot, psi: WaveFunction::gaussian(p.center, p.width), probes: p.probes }
            }
            Experiment::PhasespaceRoundtrip => {
                let p: params::PhasespaceRoundtrip = config.params()?;
                check_alpha(p.alpha)?;
                if p.trials == 0 {
                    return Err(invalid("trials must be positive"));
                }
                let grid = PeriodicGrid::new(p.n_points, p.length).map_err(core)?;
                Plan::Roundtrip { grid, alpha: p.alpha, trials: p.trials }
            }
            Experiment::Trotter => {
                let p: params::Trotter = config.params()?;
                check_alpha(p.alpha)?;
                if p.n == 0 || !p.omega.is_finite() {
                    return Err(invalid("trotter needs n >= 1 and a finite omega"));
                }
                let grid = PeriodicGrid::new(p.n_points, p.length).map_err(core)?;
                let kinetic = match p.kinetic {
                    KineticSpec::FiniteDifference => Kinetic::FiniteDifference,
                    KineticSpec::Spectral => Kinetic::Spectral,
                };
                let w2 = p.omega * p.omega;
                let h = standard_hamiltonian(&grid, |_| 0.0, |q| 0.5 * w2 * q * q, kinetic);
                Plan::Trotter { grid, h, alpha: p.alpha, n: p.n }
            }
        };
        Ok(Self { plan, grid, seed: config.seed, n_paths: config.n_paths })
    }

    fn rng(&self, stream: u64) -> RngStream {
        RngStream::new(self.seed, stream)
    }

    pub fn execute(&self) -> fklab_core::Result<Vec<Row>> {
        let (grid, n_paths, t) = (&self.grid, self.n_paths, self.grid.t_end);
        let rows = match &self.plan {
            Plan::WienerStats { d, times } => wiener_stats(*grid, *d, times, n_paths, self.rng(0))?,
            Plan::Stochint { alpha } => stochint(*grid, *alpha, n_paths, self.rng(0))?,
            Plan::FkMatrix { problem } => {
                let est = estimate_generalized_fk(problem, n_paths, self.rng(0))?;
                estimate_rows("average", &est, rhs_generator(problem)?.as_slice(), Z_LIMIT)
            }
            Plan::FkProduct { a_plus, a_minus, b } => {
                let est = estimate_product_formula(a_plus, a_minus, b, grid, n_paths, self.rng(0))?;
                let generator = &(&(a_plus * a_minus) + &(a_minus * a_plus)) + b;
                let target = expm(&generator.scale_real(-t))?;
                estimate_rows("product", &est, target.as_slice(), Z_LIMIT)
            }
            Plan::FkSemigroup { problem } => {
                let check = semigroup_check(problem, n_paths, self.rng(0))?;
                let mut rows = estimate_rows("average", &check.full, rhs_generator(problem)?.as_slice(), Z_LIMIT);
                let limit = (3.0 * check.combined_stderr).max(SEMIGROUP_FLOOR);
                rows.push(
                    Row::new("semigroup_distance", String::new(), real(check.distance), check.combined_stderr)
                        .target(ZERO)
                        .pass_if(check.distance <= limit),
                );
                rows
            }
            Plan::FkKernel { pot, q, q_prime } => {
                let est = kernel(&pot.config, q, q_prime, grid, n_paths, self.rng(0))?;
                let row = Row::new("kernel", String::new(), est.scalar(), est.scalar_stderr());
                vec![match pot.exact_kernel(q, q_prime, t) {
                    Some(k) => {
                        let close = (est.scalar() - real(k)).norm() <= KERNEL_RTOL * k;
                        let row = row.against(real(k), Z_LIMIT);
                        let ok = row.pass || close;
                        row.pass_if(ok)
                    }
                    None => row,
                }]
            }
            Plan::Gauge { pot, q, q_prime } => {
                let est = gauge_check(&pot.config, q, q_prime, grid, n_paths, self.rng(0))?;
                let row = Row::new("gauge_residual", String::new(), est.scalar(), est.scalar_stderr());
                let tiny = est.scalar().norm() <= RESIDUAL_FLOOR;
                let row = row.against(ZERO, Z_LIMIT);
                let ok = row.pass || tiny;
                vec![row.pass_if(ok)]
            }
            Plan::Kato { pot, probes, quad } => {
                let k = kato_kappa(|x| pot.config.v(x).abs(), pot.config.d(), t, probes, quad)?;
                vec![
                    Row::new("kappa", String::new(), real(k.value), 0.0),
                    // mass outside the box only matters where the potential does not vanish
                    Row::new("truncated_mass", String::new(), real(k.truncated_mass), 0.0),
                ]
            }
            Plan::Khasminskii { pot, q, probes, quad } => {
                let r = khasminskii_check(&pot.config, q, grid, n_paths, self.rng(0), probes, quad)?;
                let lhs = Row::new("khasminskii_lhs", String::new(), r.lhs.scalar(), r.lhs.scalar_stderr());
                let z = (r.lhs.scalar().re - r.bound) / r.lhs.scalar_stderr();
                vec![
                    Row::new("kappa", String::new(), real(r.kappa), 0.0).pass_if(r.kappa < 1.0),
                    Row { z: Some(z), ..lhs.target(real(r.bound)).pass_if(!r.violated) },
                ]
            }
            Plan::Diamagnetic { pot, psi, probes } => probes
                .iter()
                .enumerate()
                .map(|(i, q)| {
                    let r = diamagnetic_check(&pot.config, psi, q, grid, n_paths, self.rng(i as u64))?;
                    let with_a = r.with_a.scalar().norm();
                    let row = Row::new("abs_with_a", format!("probe={i}"), real(with_a), r.combined_stderr)
                        .target(real(r.without_a.scalar().re))
                        .pass_if(r.holds);
                    Ok(Row { z: Some(r.gap / r.combined_stderr), ..row })
                })
                .collect::<fklab_core::Result<Vec<_>>>()?,
            Plan::Roundtrip { grid, alpha, trials } => roundtrip(grid, *alpha, *trials, self.seed)?,
            Plan::Trotter { grid, h, alpha, n } => {
                let table = trotter_reconstruct(h, grid, *alpha, t, &[*n])?;
                vec![Row::new("trotter_error", String::new(), real(table.errors[0]), 0.0)]
            }
        };
        Ok(rows)
    }
}

fn wiener_stats(grid: TimeGrid, d: usize, times: &[f64], n_paths: usize, rng: RngStream) -> fklab_core::Result<Vec<Row>> {
    let idx: Vec<usize> = times.iter().map(|&s| grid.nearest_index(s)).collect();
    let m = times.len();
    let ens = PathEnsemble::new(grid, d, n_paths, rng)?;
    let est = ens.estimate(m * d + m * m * d * d, |w, out| {
        let mut o = 0;
        for &k in &idx {
            for j in 0..d {
                out[o] = real(w[d * k + j]);
                o += 1;
            }
        }
        for &kr in &idx {
            for &ks in &idx {
                for j in 0..d {
                    for l in 0..d {
                        out[o] = real(w[d * kr + j] * w[d * ks + l]);
                        o += 1;
                    }
                }
            }
        }
    });
    let mut rows = Vec::new();
    let mut o = 0;
    let mut push = |quantity: &str, component: String, target: f64| {
        rows.push(Row::new(quantity, component, est.mean[o], est.stderr[o]).against(real(target), Z_LIMIT));
        o += 1;
    };
    for &r in times {
        for j in 0..d {
            push("mean", format!("s={r},j={j}"), 0.0);
        }
    }
    for &r in times {
        for &s in times {
            for j in 0..d {
                for l in 0..d {
                    let target = if j == l { r.min(s) } else { 0.0 };
                    push("covariance", format!("r={r},s={s},j={j},k={l}"), target);
                }
            }
        }
    }
    Ok(rows)
}

/// Mean-square conversion residual for the identity field in one dimension;
/// the residual is `(1/2 - alpha)(sum dw^2 - t)` with mean square
/// `(1/2 - alpha)^2 2 t^2 / n`.
fn stochint(grid: TimeGrid, alpha: AlphaScheme, n_paths: usize, rng: RngStream) -> fklab_core::Result<Vec<Row>> {
    let field = FieldWithDivergence::identity(1);
    let ens = PathEnsemble::new(grid, 1, n_paths, rng)?;
    let est = ens.estimate(1, |w, out| {
        let residual = WienerPath::from_values(grid, 1, w.to_vec()).and_then(|p| convert_check(&p, &field, alpha));
        out[0] = real(residual.map_or(f64::NAN, |r| r * r));
    });
    if !est.scalar().is_finite() {
        return Err(fklab_core::Error::NonFinite("conversion residual".into()));
    }
    let c = 0.5 - alpha.alpha();
    let target = c * c * 2.0 * grid.t_end * grid.t_end / grid.n_steps as f64;
    Ok(vec![Row::new("ms_residual", String::new(), est.scalar(), est.scalar_stderr()).against(real(target), Z_LIMIT)])
}

fn roundtrip(grid: &PeriodicGrid, alpha: f64, trials: usize, seed: u64) -> fklab_core::Result<Vec<Row>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n_points;
    let mut rows = Vec::new();
    for trial in 0..trials {
        let m = Operator::from_fn(n, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let back = alpha_quantize(&alpha_symbol(&m, grid, alpha)?)?;
        let err = back.distance(&m);
        rows.push(
            Row::new("roundtrip_error", format!("trial={trial}"), real(err), 0.0)
                .target(ZERO)
                .pass_if(err <= ROUNDTRIP_TOL),
        );
        if alpha == 0.5 {
            let herm = (&m + &m.adjoint()).scale_real(0.5);
            let imag = alpha_symbol(&herm, grid, alpha)?.max_imag();
            rows.push(
                Row::new("weyl_imag", format!("trial={trial}"), real(imag), 0.0)
                    .target(ZERO)
                    .pass_if(imag <= ROUNDTRIP_TOL),
            );
        }
    }
    Ok(rows)
}
