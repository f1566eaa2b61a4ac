//! Ancilla-augmented (pseudo-mode) simulation of a qubit in colored noise.
//!
//! The non-Markovian environment is replaced by a bank of damped harmonic
//! modes driven by white noise, giving a Markovian model on the enlarged
//! space. On that model the crate integrates the unconditional master
//! equation, runs the homodyne quantum filter, and reduces back to the
//! qubit. Numerics are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix `f64`.

pub mod config;
pub mod error;
pub mod filter;
pub mod harness;
pub mod linalg;
pub mod master;
pub mod operator;
pub mod scalar;
pub mod slh;
pub mod spectra;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use harness::{run_command, Command};
pub use operator::{HilbertLayout, StandardOp};
pub use scalar::Real;
pub use slh::{FieldMode, QubitOpKind};

pub type Complex = num_complex::Complex<f64>;
pub type Operator = operator::Operator<f64>;
pub type DensityMatrix = operator::DensityMatrix<f64>;
pub type SlhModel = slh::SlhModel<f64>;
pub type AncillaParams = slh::AncillaParams<f64>;
pub type GeneratorSpec = master::GeneratorSpec<f64>;
pub type FilterModel = filter::FilterModel<f64>;
pub type Trajectory = filter::Trajectory<f64>;
pub type EnsembleResult = filter::EnsembleResult<f64>;
pub type LorentzianComponent = spectra::LorentzianComponent<f64>;
pub type SpectrumSamples = spectra::SpectrumSamples<f64>;
