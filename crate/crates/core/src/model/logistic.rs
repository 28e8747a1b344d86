use nalgebra::{DMatrix, DVector};

use super::{check_dim, check_order, LogisticData, TargetModel};
use crate::error::{Error, Result};

/// Largest `|d^4/dt^4 log(1 + e^{-t})|` over the real line, attained at `t = 0`.
pub const LOSS_FOURTH_DERIVATIVE_MAX: f64 = 0.125;

/// `σ(t) = 1 / (1 + e^{-t})` without overflow for large `|t|`.
#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{-t})`, stable for any `t`.
#[inline]
pub fn log1p_exp_neg(t: f64) -> f64 {
    if t > 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

/// `d^k/dt^k log(1 + e^{-t})` for `k = 0..=4`.
///
/// Written in terms of `s = σ(t)` and `1 - s = σ(-t)`, each evaluated
/// separately so that neither underflows to a catastrophic cancellation.
#[inline]
pub fn log1p_exp_neg_derivative(t: f64, k: usize) -> f64 {
    let s = sigmoid(t);
    let sc = sigmoid(-t);
    let q = s * sc;
    match k {
        0 => log1p_exp_neg(t),
        1 => -sc,
        2 => q,
        3 => q * (sc - s),
        4 => q * (1.0 - 6.0 * q),
        _ => f64::NAN,
    }
}

/// Bayesian logistic regression with an isotropic Gaussian prior:
///
/// `φ(θ) = ‖θ‖² / (2σ₀²) + Σᵢ log(1 + exp(-yᵢ θ·xᵢ))`
///
/// with no normalizing constants. `σ₀ = +∞` turns the prior off, which is
/// only useful for constructing degenerate inputs.
#[derive(Debug, Clone)]
pub struct LogisticRegressionModel {
    x: DMatrix<f64>,
    y: Vec<f64>,
    prior_sigma0: f64,
    prior_precision: f64,
}

impl LogisticRegressionModel {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, prior_sigma0: f64) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::Dataset(format!(
                "labels must be -1 or 1, found {bad}"
            )));
        }
        if !(prior_sigma0 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "prior sigma0 must be positive, got {prior_sigma0}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("covariates must be finite".into()));
        }
        Ok(Self {
            x,
            y,
            prior_sigma0,
            prior_precision: 1.0 / (prior_sigma0 * prior_sigma0),
        })
    }

    pub fn from_data(data: &LogisticData, prior_sigma0: f64) -> Result<Self> {
        Self::new(data.x.clone(), data.y.clone(), prior_sigma0)
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn prior_sigma0(&self) -> f64 {
        self.prior_sigma0
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    fn margins(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut m = &self.x * theta;
        for (mi, yi) in m.iter_mut().zip(&self.y) {
            *mi *= yi;
        }
        m
    }
}

impl TargetModel for LogisticRegressionModel {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn neg_log_density(&self, theta: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        let prior = 0.5 * self.prior_precision * theta.norm_squared();
        let lik: f64 = self.margins(theta).iter().map(|&m| log1p_exp_neg(m)).sum();
        Ok(prior + lik)
    }

    fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), theta.len())?;
        let mut w = self.margins(theta);
        for (wi, yi) in w.iter_mut().zip(&self.y) {
            *wi = yi * log1p_exp_neg_derivative(*wi, 1);
        }
        Ok(theta * self.prior_precision + self.x.tr_mul(&w))
    }

    fn hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), theta.len())?;
        let m = self.margins(theta);
        let mut weighted = self.x.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= log1p_exp_neg_derivative(m[i], 2);
        }
        let mut h = self.x.tr_mul(&weighted);
        for j in 0..self.dim() {
            h[(j, j)] += self.prior_precision;
        }
        // Exact symmetry regardless of summation order.
        let h = (&h + h.transpose()) * 0.5;
        Ok(h)
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
        let a = &self.x * base;
        let b = &self.x * dir;
        let mut out = vec![0.0; max_order];
        for i in 0..self.y.len() {
            let y = self.y[i];
            let m = y * (a[i] + r * b[i]);
            // d/dr of the margin is y·b; y^k is y for odd k and 1 for even k.
            let yb = y * b[i];
            let mut pow = 1.0;
            for (k, slot) in out.iter_mut().enumerate() {
                pow *= yb;
                *slot += log1p_exp_neg_derivative(m, k + 1) * pow;
            }
        }
        out[0] += self.prior_precision * (base + dir * r).dot(dir);
        if max_order >= 2 {
            out[1] += self.prior_precision * dir.norm_squared();
        }
        Ok(out)
    }

    fn ray_values(&self, base: &DVector<f64>, dir: &DVector<f64>, rs: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), base.len())?;
        check_dim(self.dim(), dir.len())?;
        let a = self.margins(base);
        let b = self.margins(dir);
        let bb = base.norm_squared();
        let bd = base.dot(dir);
        let dd = dir.norm_squared();
        Ok(rs
            .iter()
            .map(|&r| {
                let prior = 0.5 * self.prior_precision * (bb + 2.0 * r * bd + r * r * dd);
                let lik: f64 = a
                    .iter()
                    .zip(b.iter())
                    .map(|(&ai, &bi)| log1p_exp_neg(ai + r * bi))
                    .sum();
                prior + lik
            })
            .collect())
    }

    /// `(1/8) Σᵢ |xᵢ·dir|⁴`; the prior is quadratic and contributes nothing.
    fn fourth_derivative_ray_bound(&self, base: &DVector<f64>, dir: &DVector<f64>) -> Option<f64> {
        if base.len() != self.dim() || dir.len() != self.dim() {
            return None;
        }
        let b = &self.x * dir;
        Some(LOSS_FOURTH_DERIVATIVE_MAX * b.iter().map(|v| v.powi(4)).sum::<f64>())
    }
}
