use std::path::{Path, PathBuf};

use fklab_core::fkschrodinger::{KatoQuadrature, Preset};
use fklab_core::Operator;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    WienerStats,
    StochintConvergence,
    FkMatrix,
    FkProduct,
    FkSemigroup,
    FkKernel,
    Gauge,
    Kato,
    Khasminskii,
    Diamagnetic,
    PhasespaceRoundtrip,
    Trotter,
}

impl Experiment {
    pub fn name(self) -> String {
        match serde_json::to_value(self) {
            Ok(Value::String(s)) => s,
            _ => unreachable!("unit variants serialize to strings"),
        }
    }

    /// Quantity whose log-log slope a sweep reports.
    pub fn decaying_quantity(self) -> Option<&'static str> {
        match self {
            Experiment::StochintConvergence => Some("ms_residual"),
            Experiment::Trotter => Some("trotter_error"),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_end: f64,
    pub n_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: Experiment,
    pub seed: u64,
    pub n_paths: usize,
    pub grid: GridSpec,
    pub workers: usize,
    pub params: Value,
}

impl Config {
    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        let config: Config = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_value(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(invalid("workers must be positive"));
        }
        if self.n_paths < 2 {
            return Err(invalid("n_paths must be at least 2"));
        }
        if !(self.grid.t_end > 0.0 && self.grid.t_end.is_finite()) {
            return Err(invalid("grid.t_end must be positive and finite"));
        }
        if self.grid.n_steps == 0 {
            return Err(invalid("grid.n_steps must be positive"));
        }
        if !self.params.is_object() {
            return Err(invalid("params must be an object"));
        }
        Ok(())
    }

    pub fn params<P: DeserializeOwned>(&self) -> Result<P, ConfigError> {
        serde_json::from_value(self.params.clone())
            .map_err(|e| invalid(format!("params for {}: {e}", self.experiment.name())))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Copy with one numeric scalar replaced. `axis` is either a dotted path
    /// (`grid.n_steps`, `params.alpha`) or a bare key looked up at the top
    /// level, then in `grid`, then in `params`.
    pub fn with_axis(&self, axis: &str, value: f64) -> Result<Self, ConfigError> {
        let mut root = self.to_value();
        let slot = locate(&mut root, axis)?;
        let replacement = match slot {
            Value::Number(n) if n.is_u64() => {
                if value.fract() != 0.0 || value < 0.0 || value > u64::MAX as f64 {
                    return Err(invalid(format!("axis {axis} takes non-negative integers, got {value}")));
                }
                Value::from(value as u64)
            }
            Value::Number(_) => serde_json::Number::from_f64(value)
                .map(Value::Number)
                .ok_or_else(|| invalid(format!("axis value {value} is not finite")))?,
            _ => return Err(invalid(format!("axis {axis} is not a numeric scalar"))),
        };
        *slot = replacement;
        Self::from_value(root)
    }
}

fn locate<'a>(root: &'a mut Value, axis: &str) -> Result<&'a mut Value, ConfigError> {
    let missing = || invalid(format!("axis {axis} not found in config"));
    if axis.contains('.') {
        let pointer = format!("/{}", axis.replace('.', "/"));
        return root.pointer_mut(&pointer).ok_or_else(missing);
    }
    for pointer in [format!("/{axis}"), format!("/grid/{axis}"), format!("/params/{axis}")] {
        if root.pointer(&pointer).is_some() {
            return Ok(root.pointer_mut(&pointer).expect("present"));
        }
    }
    Err(missing())
}

/// Nested rows of `[re, im]` pairs.
pub type MatrixSpec = Vec<Vec<[f64; 2]>>;

pub fn operator(spec: &MatrixSpec, name: &str) -> Result<Operator, ConfigError> {
    Operator::from_rows(spec).map_err(|e| invalid(format!("{name}: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    Free {
        d: usize,
    },
    ConstantWell {
        d: usize,
        depth: f64,
        radius: f64,
    },
    Harmonic {
        d: usize,
        omega: f64,
    },
    #[serde(rename = "coulomb-3d")]
    Coulomb3d {
        gamma: f64,
    },
    #[serde(rename = "constant-magnetic-2d")]
    ConstantMagnetic2d {
        b: f64,
    },
    GaugeLinear {
        d: usize,
        c: f64,
    },
}

impl PotentialSpec {
    pub fn preset(&self) -> Preset {
        match *self {
            PotentialSpec::Free { d } => Preset::Free { d },
            PotentialSpec::ConstantWell { d, depth, radius } => Preset::ConstantWell { d, depth, radius },
            PotentialSpec::Harmonic { d, omega } => Preset::Harmonic { d, omega },
            PotentialSpec::Coulomb3d { gamma } => Preset::Coulomb3d { gamma },
            PotentialSpec::ConstantMagnetic2d { b } => Preset::ConstantMagnetic2d { b },
            PotentialSpec::GaugeLinear { d, c } => Preset::GaugeLinear { d, c },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub box_lo: f64,
    pub box_hi: f64,
    pub z_panels: usize,
    pub z_order: usize,
    pub s_intervals: usize,
}

impl QuadratureSpec {
    pub fn build(&self) -> Result<KatoQuadrature, ConfigError> {
        if !(self.box_hi > self.box_lo) || self.z_panels == 0 || self.z_order == 0 || self.s_intervals == 0 {
            return Err(invalid("quadrature needs box_hi > box_lo and positive panel counts"));
        }
        Ok(KatoQuadrature {
            box_lo: self.box_lo,
            box_hi: self.box_hi,
            z_panels: self.z_panels,
            z_order: self.z_order,
            s_intervals: self.s_intervals,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KineticSpec {
    FiniteDifference,
    Spectral,
}

pub mod params {
    use super::*;

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct WienerStats {
        pub d: usize,
        pub times: Vec<f64>,
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct StochintConvergence {
        pub alpha: f64,
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct FkMatrix {
        pub a: Vec<MatrixSpec>,
        pub b: MatrixSpec,
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct FkProduct {
        pub a_plus: MatrixSpec,
        pub a_minus: MatrixSpec,
        pub b: MatrixSpec,
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Kernel {
        pub potential: PotentialSpec,
        pub q: Vec<f64>,
        pub q_prime: Vec<f64>,
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Kato {
        pub potential: PotentialSpec,
        pub probes: Vec<Vec<f64>>,
        pub quadrature: QuadratureSpec,
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Khasminskii {
        pub potential: PotentialSpec,
        pub q: Vec<f64>,
        pub probes: Vec<Vec<f64>>,
        pub quadrature: QuadratureSpec,
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Diamagnetic {
        pub potential: PotentialSpec,
        pub center: Vec<f64>,
        pub width: f64,
        pub probes: Vec<Vec<f64>>,
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct PhasespaceRoundtrip {
        pub n_points: usize,
        pub length: f64,
        pub alpha: f64,
        pub trials: usize,
    }

    #[derive(Debug, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct Trotter {
        pub n_points: usize,
        pub length: f64,
        pub alpha: f64,
        pub n: usize,
        pub omega: f64,
        pub kinetic: KineticSpec,
    }
}
