//! Monte Carlo accumulation with a fixed chunk decomposition.
//!
//! Samples are grouped into chunks of [`CHUNK`] draws; chunk `c` always uses
//! random stream `base.substream(c)` and the per-chunk moments are merged in
//! chunk order. The result is bit-identical for any thread count.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::opalg::Operator;
use crate::rng::{Gaussian, RngStream};

/// Samples per random stream.
pub const CHUNK: usize = 512;

/// Maximum fraction of rejected samples before an estimate is abandoned.
pub const MAX_REJECT_FRACTION: f64 = 1e-3;

/// Entrywise running mean and centred second moment of complex samples.
#[derive(Clone, Debug)]
pub struct Moments {
    n: usize,
    mean: Vec<Complex64>,
    m2: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Self {
            n: 0,
            mean: vec![Complex64::new(0.0, 0.0); len],
            m2: vec![0.0; len],
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, sample: &[Complex64]) {
        debug_assert_eq!(sample.len(), self.mean.len());
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for ((m, s2), &z) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = z - *m;
            *m += delta * inv;
            let after = z - *m;
            *s2 += delta.re * after.re + delta.im * after.im;
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * (nb / n);
            self.m2[i] += other.m2[i] + delta.norm_sqr() * na * nb / n;
        }
        self.n += other.n;
    }

    pub fn finish(self, rows: usize, cols: usize, rejected: usize) -> McEstimate {
        let n = self.n;
        let stderr = if n > 1 {
            self.m2
                .iter()
                .map(|&s| (s.max(0.0) / ((n - 1) as f64 * n as f64)).sqrt())
                .collect()
        } else {
            vec![0.0; self.m2.len()]
        };
        McEstimate {
            rows,
            cols,
            mean: self.mean,
            stderr,
            n_samples: n,
            rejected,
        }
    }
}

/// Monte Carlo mean with per-entry standard error.
///
/// `stderr[i]` is the standard error of the complex mean entry `i`, i.e.
/// `sqrt((var(re) + var(im)) / n)`. Scalars are stored as 1x1.
#[derive(Clone, Debug, PartialEq)]
pub struct McEstimate {
    pub rows: usize,
    pub cols: usize,
    pub mean: Vec<Complex64>,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
    pub rejected: usize,
}

impl McEstimate {
    /// An exactly known value (zero variance).
    pub fn exact(rows: usize, cols: usize, mean: Vec<Complex64>, n_samples: usize) -> Self {
        let len = mean.len();
        Self {
            rows,
            cols,
            mean,
            stderr: vec![0.0; len],
            n_samples,
            rejected: 0,
        }
    }

    pub fn scalar(&self) -> Complex64 {
        self.mean[0]
    }

    pub fn scalar_stderr(&self) -> f64 {
        self.stderr[0]
    }

    pub fn operator(&self) -> Operator {
        Operator::from_vec(self.rows, self.mean.clone())
    }

    /// Multiplies mean and error by a real constant.
    pub fn scaled(mut self, factor: f64) -> Self {
        for m in &mut self.mean {
            *m *= factor;
        }
        for s in &mut self.stderr {
            *s *= factor.abs();
        }
        self
    }

    pub fn stderr_frobenius(&self) -> f64 {
        self.stderr.iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    pub fn frobenius_distance(&self, target: &[Complex64]) -> f64 {
        assert_eq!(target.len(), self.mean.len());
        self.mean
            .iter()
            .zip(target)
            .map(|(m, t)| (m - t).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Entrywise |mean - target| / stderr; an exact estimate scores 0 on
    /// agreement to 1e-12 and infinity otherwise.
    pub fn z_scores(&self, target: &[Complex64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(target)
            .zip(&self.stderr)
            .map(|((m, t), &s)| z_score((m - t).norm(), s))
            .collect()
    }

    pub fn max_abs_z(&self, target: &[Complex64]) -> f64 {
        self.z_scores(target).into_iter().fold(0.0, f64::max)
    }
}

pub fn z_score(diff: f64, stderr: f64) -> f64 {
    if stderr > 0.0 {
        diff / stderr
    } else if diff <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Runs `n_samples` draws in fixed chunks and merges the moments in order.
///
/// `init` builds per-chunk scratch space; `sample` writes one sample of
/// `len` entries and returns `false` to reject it.
pub(crate) fn accumulate<W, I, S>(
    n_samples: usize,
    len: usize,
    base: RngStream,
    init: I,
    sample: S,
) -> (Moments, usize)
where
    I: Fn() -> W + Sync,
    S: Fn(&mut W, &mut Gaussian, &mut [Complex64]) -> bool + Sync,
{
    let n_chunks = n_samples.div_ceil(CHUNK);
    let partial: Vec<(Moments, usize)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(n_samples - c * CHUNK);
            let mut gen = base.substream(c as u64).generator();
            let mut work = init();
            let mut moments = Moments::new(len);
            let mut buf = vec![Complex64::new(0.0, 0.0); len];
            let mut rejected = 0;
            for _ in 0..count {
                if sample(&mut work, &mut gen, &mut buf) {
                    moments.push(&buf);
                } else {
                    rejected += 1;
                }
            }
            (moments, rejected)
        })
        .collect();
    let mut total = Moments::new(len);
    let mut rejected = 0;
    for (m, r) in &partial {
        total.merge(m);
        rejected += r;
    }
    (total, rejected)
}

pub(crate) fn check_rejections(rejected: usize, total: usize) -> Result<()> {
    let limit = (MAX_REJECT_FRACTION * total as f64).floor() as usize;
    if rejected > limit {
        return Err(Error::TooManyRejections {
            rejected,
            total,
            limit,
        });
    }
    Ok(())
}
