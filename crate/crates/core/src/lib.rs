//! Laplace approximation of a log-concave posterior with a computable upper
//! bound on `KL(g, f)`, plus Metropolis–Hastings machinery for checking the
//! bound against a sampling-based estimate.

pub mod bound;
pub mod error;
pub mod experiment;
pub mod laplace;
pub mod mcmc;
pub mod model;
pub mod quadrature;
pub mod radial;

pub use error::{Error, Result};
