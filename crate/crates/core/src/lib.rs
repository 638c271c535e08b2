//! Simulation and verification toolkit for stochastic Volterra integral
//! equations driven by G-Brownian motion.
//!
//! * [`scenario`] — volatility bands, controls and discrete `(B, <B>)` paths.
//! * [`expectation`] — sublinear expectations: max-over-controls Monte Carlo
//!   and an exact backward lattice.
//! * [`solver`] — explicit Euler and Picard solvers, a priori bounds and
//!   continuity diagnostics.
//! * [`comparison`] — separable systems, quasilinearization, stopping-time
//!   freezing, assumption checks and the comparison harness.
//! * [`registry`] — built-in coefficient systems.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix the scalar to `f64`.

pub mod comparison;
pub mod error;
pub mod expectation;
pub mod registry;
pub mod rng;
pub mod scalar;
pub mod scenario;
pub mod solver;

pub use error::{GsvieError, Result};
pub use scalar::Scalar;

/// Version tag embedded in every serialized artifact.
pub const SCHEMA_VERSION: &str = "1.0";

pub type Real = f64;
pub type Band = scenario::VolatilityBand<Real>;
pub type Grid = scenario::TimeGrid<Real>;
pub type Control = scenario::VolatilityControl<Real>;
pub type Path = scenario::ScenarioPath<Real>;
pub type Plan = expectation::EnsemblePlan<Real>;
pub type Estimate = expectation::RobustEstimate<Real>;
pub type Coefficients = solver::CoefficientSet<Real>;
pub type Forcing = solver::ForcingProcess<Real>;
pub type Solution = solver::SolutionPath<Real>;
pub type System = comparison::SeparableSystem<Real>;
