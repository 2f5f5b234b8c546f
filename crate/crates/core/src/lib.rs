//! Fixed-variance evolution strategies compared against finite-difference
//! gradient ascent and a truncation GA on hand-built 2D fitness landscapes.
//!
//! The library measures where each optimizer ends up, how the ES mean tracks
//! the Gaussian-smoothed expected fitness rather than the raw landscape, and
//! how robust the resulting solutions are to parameter perturbation.

pub mod error;
pub mod expectation;
pub mod harness;
pub mod objective;
pub mod landscapes;
pub mod optimizers;
pub mod robustness;
pub mod seeding;
pub mod text;

pub use error::{Error, Result, RunError};
pub use landscapes::{Landscape, ParamVector, Shape};
pub use objective::{checked_value, Objective};
pub use optimizers::{
    es_gradient_estimate, es_run, fd_gradient, fd_run, ga_run, EsConfig, FdConfig, GaConfig, OptimizerConfig,
    SearchDistribution, TrajectoryRecord,
};
