use std::io::Write;

use fklab_core::mc::z_score;
use fklab_core::{Complex64, McEstimate};
use serde::Serialize;
use serde_json::Value;

pub const CSV_HEADER: [&str; 10] = [
    "experiment",
    "quantity",
    "component",
    "mean_re",
    "mean_im",
    "stderr",
    "target_re",
    "target_im",
    "z",
    "pass",
];

/// One recorded number with its reference value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub quantity: String,
    pub component: String,
    pub mean_re: f64,
    pub mean_im: f64,
    pub stderr: f64,
    pub target_re: Option<f64>,
    pub target_im: Option<f64>,
    pub z: Option<f64>,
    pub pass: bool,
}

impl Row {
    pub fn new(quantity: &str, component: String, mean: Complex64, stderr: f64) -> Self {
        Self {
            quantity: quantity.to_owned(),
            component,
            mean_re: mean.re,
            mean_im: mean.im,
            stderr,
            target_re: None,
            target_im: None,
            z: None,
            pass: mean.is_finite() && stderr.is_finite(),
        }
    }

    pub fn mean(&self) -> Complex64 {
        Complex64::new(self.mean_re, self.mean_im)
    }

    /// Records `target` and the z-score; passes when `|z| <= z_limit`.
    pub fn against(mut self, target: Complex64, z_limit: f64) -> Self {
        let z = z_score((self.mean() - target).norm(), self.stderr);
        self.target_re = Some(target.re);
        self.target_im = Some(target.im);
        self.z = Some(z);
        self.pass = z <= z_limit;
        self
    }

    pub fn target(mut self, target: Complex64) -> Self {
        self.target_re = Some(target.re);
        self.target_im = Some(target.im);
        self
    }

    pub fn pass_if(mut self, ok: bool) -> Self {
        self.pass = ok;
        self
    }
}

/// One row per entry of an estimate; matrices get `i,j` components.
pub fn estimate_rows(quantity: &str, est: &McEstimate, target: &[Complex64], z_limit: f64) -> Vec<Row> {
    est.mean
        .iter()
        .zip(&est.stderr)
        .zip(target)
        .enumerate()
        .map(|(k, ((m, s), t))| {
            let component = if est.rows * est.cols == 1 {
                String::new()
            } else {
                format!("{},{}", k / est.cols, k % est.cols)
            };
            Row::new(quantity, component, *m, *s).against(*t, z_limit)
        })
        .collect()
}

fn number(x: f64) -> String {
    format!("{x:.16e}")
}

fn optional(x: Option<f64>) -> String {
    x.map(number).unwrap_or_default()
}

pub fn write_csv<W: Write>(out: W, experiment: &str, rows: &[Row]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            experiment.to_owned(),
            r.quantity.clone(),
            r.component.clone(),
            number(r.mean_re),
            number(r.mean_im),
            number(r.stderr),
            optional(r.target_re),
            optional(r.target_im),
            optional(r.z),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub config: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepInfo>,
    pub rows: Vec<Row>,
    pub wall_time_s: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct SweepInfo {
    pub axis: String,
    pub values: Vec<f64>,
}
