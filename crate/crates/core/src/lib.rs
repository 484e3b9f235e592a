//! Numerical laboratory for Schrödinger-type Cauchy problems with
//! exponentially weighted Gelfand–Shilov data.

pub mod cauchy;
pub mod error;
pub mod examples;
pub mod grid;
pub mod fd;
pub mod gsnorm;
pub mod krylov;
pub mod quadrature;
pub mod pdo;
pub mod symbol;

pub use error::{Error, Result};
pub use grid::{Grid, Point, Spectrum, StateVector};
