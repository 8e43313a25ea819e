//! Accelerated convex minimization by direct Runge-Kutta discretization of
//! the damped ODE `ẍ + (2q+1)/t·ẋ + q²t^{q−2}∇f(x) = 0`, with gradient
//! descent and Nesterov baselines, Lyapunov energy audits, and rate analysis.

pub mod analysis;
pub mod baselines;
pub mod cli;
pub mod driver;
pub mod dynamics;
pub mod error;
pub mod integrators;
pub mod linalg;
pub mod lyapunov;
pub mod objectives;
pub mod sweeps;
pub mod trace;

pub use error::{Error, Result};
