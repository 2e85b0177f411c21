//! Numerical laboratory for the time-adiabatic approximation of the
//! semiclassically scaled, weakly nonlinear Schrodinger equation
//!
//! ```text
//! i eps d_t psi = -1/2 psi'' + V(t, x) psi + lambda eps^alpha |psi|^(2 sigma) psi
//! ```
//!
//! on a periodic grid: eigenbranch continuation, the adiabatic approximant with
//! its phases and correctors, a Strang split-step propagator, nonlinear bound
//! states, and an experiment harness that measures error-scaling slopes.

pub mod adiabatic;
pub mod boundstate;
pub mod eigen;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod potential;
pub mod propagator;

pub use error::{Error, Result};
pub use grid::{Field, Grid1D, C64};
