//! Time-domain boundary integral equation solver for the exterior Dirichlet
//! problem of the scalar wave equation.
//!
//! The scattered field is represented as a combined-field retarded potential
//! `u = D mu + S(a dmu/dt + b mu)` on a smooth torus-like surface. Space is
//! discretized with a panel-based Nystrom scheme (Gauss-Legendre panels plus
//! a polar auxiliary rule for the weakly singular near field), time with
//! difference-spline interpolants, and the resulting Volterra system is
//! marched with an explicit predictor-corrector scheme.
//!
//! Module map:
//!
//! - [`geometry`]: surfaces and their panel quadrature grids
//! - [`dspline`]: difference-spline temporal basis
//! - [`scalar_models`]: the top-hat Volterra and sphere modal testbeds
//! - [`quadrature`]: far and auxiliary near-field kernel rules
//! - [`assembly`]: sparse history matrices
//! - [`timestepper`]: predictor-corrector marching
//! - [`driver`]: experiment configuration and orchestration

pub mod assembly;
pub mod driver;
pub mod dspline;
mod error;
pub mod sources;
pub mod gauss;
pub mod geometry;
pub mod quadrature;
pub mod scalar_models;
pub mod timestepper;

pub use error::{Error, Result};
