use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{check_dim, check_order, TargetModel};
use crate::error::{Error, Result};

/// Unnormalized Gaussian target `φ(θ) = ½ (θ-μ)ᵀ P (θ-μ)`.
///
/// Its Laplace approximation is exact, which makes it the null case for
/// both the bound and the sampling ground truth.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        if precision.nrows() != d || precision.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: precision.nrows(),
            });
        }
        let precision = (&precision + precision.transpose()) * 0.5;
        if precision.clone().cholesky().is_none() {
            return Err(Error::InvalidArgument(
                "precision matrix must be positive definite".into(),
            ));
        }
        Ok(Self { mean, precision })
    }

    pub fn from_covariance(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let precision = covariance
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("covariance must be positive definite".into()))?
            .inverse();
        Self::new(mean, precision)
    }

    /// A seeded instance with a well-conditioned random precision matrix.
    pub fn random(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let a = DMatrix::from_fn(d, d, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v
        });
        let precision = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
        Self::new(mean, precision)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }
}

impl TargetModel for GaussianModel {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn neg_log_density(&self, theta: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        let u = theta - &self.mean;
        Ok(0.5 * u.dot(&(&self.precision * &u)))
    }

    fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), theta.len())?;
        Ok(&self.precision * (theta - &self.mean))
    }

    fn hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), theta.len())?;
        Ok(self.precision.clone())
    }

    fn ray_derivatives(
        &self,
        base: &DVector<f64>,
        dir: &DVector<f64>,
        r: f64,
        max_order: usize,
    ) -> Result<Vec<f64>> {
        check_dim(self.dim(), base.len())?;
        check_dim(self.dim(), dir.len())?;
        check_order(max_order)?;
        let pv = &self.precision * dir;
        let point = base + dir * r - &self.mean;
        let all = [pv.dot(&point), pv.dot(dir), 0.0, 0.0];
        Ok(all[..max_order].to_vec())
    }

    fn fourth_derivative_ray_bound(
        &self,
        _base: &DVector<f64>,
        _dir: &DVector<f64>,
    ) -> Option<f64> {
        Some(0.0)
    }
}
