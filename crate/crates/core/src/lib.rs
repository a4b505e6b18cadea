//! Adaptive time-domain reduction of current-harmonic-induced NVH in PSM
//! drives: estimation, control laws, integration structures, plant models,
//! convergence diagnostics and a deterministic closed-loop simulator.
//!
//! The mathematical building blocks are generic over the scalar type through
//! [`real::Real`] (any IEEE float works; `f64` is the workhorse). The
//! simulator, scenario files and file formats are concrete `f64`. The most
//! common instantiations have aliases at the crate root.

pub mod analysis;
pub mod estimator;
pub mod fd;
pub mod io;
pub mod linalg;
pub mod lut;
pub mod phasor;
pub mod plant;
pub mod quality;
pub mod real;
pub mod scenario;
pub mod sim;
pub mod structures;

/// Sine/cosine coefficient pair, `f64`.
pub type Phasor64 = phasor::PhasorPair<f64>;
/// Transfer-function value (Re, Im), `f64`.
pub type Transfer64 = phasor::TransferPhasor<f64>;
/// Controlled harmonic bookkeeping, `f64`.
pub type Mode64 = phasor::HarmonicMode<f64>;
/// Joint parameter estimator, `f64`.
pub type Estimator64 = estimator::Estimator<f64>;
/// Deviation estimator with leakage, `f64`.
pub type DeltaEstimator64 = estimator::DeltaEstimator<f64>;
/// Per-mode parameter 4-vector, `f64`.
pub type Vec4f = linalg::Vec4<f64>;
/// Dense symmetric 4x4 matrix, `f64`.
pub type Mat4f = linalg::Mat4<f64>;
/// Feedforward table set, `f64`.
pub type Tables64 = lut::FeedforwardTables<f64>;
