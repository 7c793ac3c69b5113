//! Steady states, bifurcation points and local coexistence branches of a
//! two-species age-structured reaction-diffusion system with nonlocal
//! cross-diffusion, discretized on a uniform age × space grid.
//!
//! Every numerical type is generic over the scalar `T: Real` (`f32` or
//! `f64`); the aliases at the crate root fix `T = f64`, which is what the
//! solvers' default tolerances assume.

pub mod bifurcate;
pub mod branch;
pub mod config;
pub mod discretize;
pub mod error;
pub mod evolve;
pub mod model;
pub mod pipeline;
pub mod reduced;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use evolve::StepScheme;
pub use scalar::Real;

pub type Grid = discretize::Grid<f64>;
pub type SpatialProfile = discretize::SpatialProfile<f64>;
pub type AgeSpaceField = discretize::AgeSpaceField<f64>;
pub type TriDiagOp = discretize::TriDiagOp<f64>;
pub type CoefficientFn = model::CoefficientFn<f64>;
pub type AgeProfile = model::AgeProfile<f64>;
pub type ModelSpec = model::ModelSpec<f64>;
pub type DenseMatrix = spectral::DenseMatrix<f64>;
pub type PerronPair = spectral::PerronPair<f64>;
