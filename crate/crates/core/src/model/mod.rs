//! Target densities `f̃(θ) = exp(-φ(θ))` and their derivatives.
//!
//! Every quantity downstream (mode, Laplace fit, per-direction diagnostics,
//! Monte-Carlo ground truth) is computed through [`TargetModel`], so a user
//! model only has to supply `φ`, its gradient and Hessian, and derivatives
//! of `φ` restricted to a line.

mod dataset;
mod gaussian;
mod logistic;

pub use dataset::{
    generate_dataset, read_dataset_csv, write_dataset_csv, LogisticData, SyntheticDatasetConfig,
};
pub use gaussian::GaussianModel;
pub use logistic::{log1p_exp_neg, log1p_exp_neg_derivative, LogisticRegressionModel};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Highest derivative order exposed along a ray.
pub const MAX_RAY_ORDER: usize = 4;

/// A (not necessarily normalized) log-concave target density.
///
/// `φ` must be finite everywhere and its Hessian symmetric. The additive
/// constant of `φ` is part of the model: the Monte-Carlo normalizing
/// constant is estimated for exactly this `exp(-φ)`.
pub trait TargetModel: Sync {
    fn dim(&self) -> usize;

    /// `φ(θ) = -log f̃(θ)`.
    fn neg_log_density(&self, theta: &DVector<f64>) -> Result<f64>;

    fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>>;

    fn hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Derivatives `d^k/dr^k φ(base + r·dir)` for `k = 1..=max_order`.
    ///
    /// `dir` is used as given; callers pass the already-scaled ray `S e`.
    fn ray_derivatives(
        &self,
        base: &DVector<f64>,
        dir: &DVector<f64>,
        r: f64,
        max_order: usize,
    ) -> Result<Vec<f64>>;

    /// `φ(base + r·dir)` for every `r` in `rs`.
    fn ray_values(&self, base: &DVector<f64>, dir: &DVector<f64>, rs: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), base.len())?;
        check_dim(self.dim(), dir.len())?;
        rs.iter()
            .map(|&r| self.neg_log_density(&(base + dir * r)))
            .collect()
    }

    /// Global bound on `|d^4/dr^4 φ(base + r·dir)|` over all `r`, if the model
    /// knows one in closed form.
    fn fourth_derivative_ray_bound(
        &self,
        _base: &DVector<f64>,
        _dir: &DVector<f64>,
    ) -> Option<f64> {
        None
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

pub(crate) fn check_order(max_order: usize) -> Result<()> {
    if (1..=MAX_RAY_ORDER).contains(&max_order) {
        Ok(())
    } else {
        Err(Error::UnsupportedOrder(max_order))
    }
}
