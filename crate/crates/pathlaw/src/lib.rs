//! Simulation and drift estimation for path-distribution dependent
//! stochastic delay equations with small dispersion.
//!
//! The library simulates interacting-particle Euler-Maruyama dynamics whose
//! coefficients depend on the law of the path segment, estimates unknown
//! drift parameters from discrete observations by a weighted least-squares
//! contrast, and computes the deterministic small-noise limit objects that
//! govern consistency and the asymptotic distribution of the estimator.
//!
//! See the `book/` guide at the repository root for worked narrative
//! examples; its code snippets are compiled as doc-tests.

pub mod assignment;

pub use nalgebra;
pub mod asymptotics;
pub mod error;
pub mod measure;
pub mod estimator;
pub mod experiments;
pub mod model;
pub mod nelder_mead;
pub mod rng;
pub mod simulator;
pub mod segment;
pub mod stats;

pub use error::{Error, Result};
pub use measure::EmpiricalMeasure;
pub use model::{example_model, example_model_custom, lipschitz_probe, Dims, ExampleB0, ModelSpec, ProbeReport, ThetaBox, ThetaPoint};
pub use segment::{Grid, Segment, TrajectoryRecord};
