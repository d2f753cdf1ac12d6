use std::fs;
use std::path::Path;
use std::time::Instant;

use fklab_core::quadrature::log_log_slope;
use fklab_core::Complex64;
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::experiments::Job;
use crate::report::{write_csv, Row, RunReport, SweepInfo};

/// Allowed distance of a sweep slope from -1.
pub const SLOPE_TOL: f64 = 0.3;

#[derive(Debug, Error)]
pub enum Failure {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(fklab_core::Error),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Numerical(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

impl From<fklab_core::Error> for Failure {
    fn from(e: fklab_core::Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e)
        } else {
            Failure::Config(crate::config::invalid(e.to_string()))
        }
    }
}

/// Values taken from flags or the environment, overriding the file.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, config: &Config) -> Result<Config, ConfigError> {
        let mut value = config.to_value();
        if let Some(seed) = self.seed {
            value["seed"] = seed.into();
        }
        if let Some(workers) = self.workers {
            value["workers"] = workers.into();
        }
        Config::from_value(value)
    }
}

fn execute(job: &Job, workers: usize) -> Result<Vec<Row>, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| crate::config::invalid(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(|| job.execute())?)
}

pub fn run(config: &Config) -> Result<RunReport, Failure> {
    let job = Job::new(config)?;
    let start = Instant::now();
    log::info!("running {} on {} workers", config.experiment.name(), config.workers);
    let rows = execute(&job, config.workers)?;
    Ok(RunReport {
        config: config.to_value(),
        sweep: None,
        pass: rows.iter().all(|r| r.pass),
        rows,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn label(v: f64) -> String {
    format!("{v}")
}

/// Runs the configuration once per axis value. A single value is a plain
/// run; otherwise quantities are tagged `name[axis=value]` and, for
/// experiments with a decaying quantity, a log-log slope row is appended.
pub fn sweep(config: &Config, axis: &str, values: &[f64]) -> Result<RunReport, Failure> {
    if values.is_empty() {
        return Err(crate::config::invalid("sweep needs at least one value").into());
    }
    let configs = values
        .iter()
        .map(|&v| config.with_axis(axis, v))
        .collect::<Result<Vec<_>, _>>()?;
    if let [only] = configs.as_slice() {
        return run(only);
    }
    let jobs = configs.iter().map(Job::new).collect::<Result<Vec<_>, _>>()?;
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut decay = Vec::new();
    for ((job, c), &v) in jobs.iter().zip(&configs).zip(values) {
        log::info!("sweep {axis}={}: running {}", label(v), c.experiment.name());
        for mut row in execute(job, c.workers)? {
            if Some(row.quantity.as_str()) == c.experiment.decaying_quantity() {
                decay.push((v, row.mean_re));
            }
            row.quantity = format!("{}[{axis}={}]", row.quantity, label(v));
            rows.push(row);
        }
    }
    if let Some(name) = config.experiment.decaying_quantity() {
        let (x, y): (Vec<f64>, Vec<f64>) = decay.into_iter().unzip();
        let slope = log_log_slope(&x, &y);
        let row = Row::new(&format!("{name}_slope"), axis.to_owned(), Complex64::new(slope, 0.0), 0.0)
            .target(Complex64::new(-1.0, 0.0))
            .pass_if((slope + 1.0).abs() <= SLOPE_TOL);
        rows.push(row);
    }
    Ok(RunReport {
        config: config.to_value(),
        sweep: Some(SweepInfo {
            axis: axis.to_owned(),
            values: values.to_vec(),
        }),
        pass: rows.iter().all(|r| r.pass),
        rows,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Writes `<stem>.json` and `<stem>.csv` into `dir`.
pub fn write_outputs(report: &RunReport, experiment: &str, dir: &Path, stem: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    let file = fs::File::create(dir.join(format!("{stem}.csv")))?;
    write_csv(file, experiment, &report.rows).map_err(|e| Failure::Io(e.into()))?;
    Ok(())
}
