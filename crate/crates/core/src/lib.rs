//! Numerical laboratory for the obstacle-problem approach to stochastic homogenization
//! of fully nonlinear uniformly elliptic equations.

pub mod effective;
pub mod env;
pub mod error;
pub mod lattice;
mod linsolve;
pub mod obstacle;
pub mod operators;
pub mod scheme;
pub mod sym;
pub mod validate;

pub use error::{Error, Result};
