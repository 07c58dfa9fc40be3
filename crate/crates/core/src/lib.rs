//! Numerical toolkit for Kolmogorov–Fokker–Planck operators with
//! measurable diffusion on the first block of variables and linear drift.
//!
//! The core is generic over [`Real`] (`f32` or `f64`); the aliases below fix
//! the scalar to `f64`.

pub mod coefficients;
pub mod covariance;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod kernel;
pub mod linalg;
pub mod potential;
pub mod regularity;
pub mod sampling;
pub mod scalar;
pub mod solver;
pub mod structure;

pub use coefficients::{CoefficientField, CoefficientSpec};
pub use covariance::{CovarianceMatrix, Drift, ScaledCovariance};
pub use error::{Error, Result};
pub use geometry::{BallSpec, InclusionFit, VolumeEstimate};
pub use grid::{Axis, Grid, GriddedFunction};
pub use kernel::{gamma_eval, GapKernel, KernelEvaluation};
pub use linalg::Matrix;
pub use regularity::{GrowthReport, OscillationProfile};
pub use scalar::Real;
pub use solver::{BoundaryCondition, DiffusionScheme, SolutionField, SolverConfig};
pub use structure::{ModelSpec, ModelStructure, SpaceTimePoint};

pub type Model = ModelStructure<f64>;
pub type Model32 = ModelStructure<f32>;
pub type Point = SpaceTimePoint<f64>;
pub type Point32 = SpaceTimePoint<f32>;
pub type Mat = Matrix<f64>;
pub type Ball = BallSpec<f64>;
