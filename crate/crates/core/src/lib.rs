//! Monte Carlo path-integral toolkit.
//!
//! * [`wiener`]: Wiener paths, Brownian bridges, Gaussian functionals.
//! * [`stochint`]: alpha-point stochastic integrals and the Ito/Stratonovich conversion.
//! * [`opalg`]: dense complex operators, matrix exponential, ordered exponentials,
//!   Dyson series and product formulas.
//! * [`fkmatrix`]: the Wiener average of operator-valued ordered exponentials.
//! * [`fkschrodinger`]: Feynman-Kac estimators for Schroedinger semigroups on R^d.
//! * [`phasespace`]: alpha-symbols, alpha-quantization and the short-time approximant.

pub mod error;
pub mod fkmatrix;
pub mod fkschrodinger;
pub mod mc;
pub mod opalg;
pub mod phasespace;
pub mod quadrature;
pub mod rng;
pub mod stochint;
pub mod wiener;

pub use error::{Error, Result};
pub use mc::McEstimate;
pub use num_complex::Complex64;
pub use opalg::{Operator, OperatorTuple};
pub use rng::RngStream;
pub use wiener::{TimeGrid, WienerPath};
