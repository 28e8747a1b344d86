//! Mode finding and the Laplace approximation `g = N(θ⋆, H⁻¹)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_dim, TargetModel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    /// Stop once `‖∇φ‖∞` is at or below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo: f64,
    pub backtrack: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_iter: 500,
            armijo: 1e-4,
            backtrack: 0.5,
        }
    }
}

/// Outcome of [`find_map`].
#[derive(Debug, Clone)]
pub struct MapEstimate {
    pub theta: DVector<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Minimizes `φ` with damped Newton steps and an Armijo backtracking line
/// search. When the Newton direction is unavailable (Hessian not
/// numerically PD) or not a descent direction, the step falls back to
/// steepest descent with the same line search.
pub fn find_map<M: TargetModel + ?Sized>(
    model: &M,
    init: &DVector<f64>,
    opts: &OptimizerOptions,
) -> Result<MapEstimate> {
    check_dim(model.dim(), init.len())?;
    if !(opts.grad_tol > 0.0) {
        return Err(Error::InvalidArgument(
            "gradient tolerance must be positive".into(),
        ));
    }

    let mut theta = init.clone();
    let mut value = model.neg_log_density(&theta)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "φ at the initial point is {value}"
        )));
    }
    let mut grad = model.gradient(&theta)?;

    for iter in 0..opts.max_iter {
        let gnorm = inf_norm(&grad);
        if !gnorm.is_finite() {
            return Err(Error::NonFinite(format!("gradient at iteration {iter}")));
        }
        if gnorm <= opts.grad_tol {
            return Ok(MapEstimate {
                theta,
                grad_norm: gnorm,
                iterations: iter,
            });
        }

        let hess = model.hessian(&theta)?;
        let newton = hess.cholesky().map(|c| -c.solve(&grad));
        let mut dir = match newton {
            Some(p) if p.dot(&grad) < 0.0 && p.iter().all(|v| v.is_finite()) => p,
            _ => -&grad,
        };
        let mut slope = dir.dot(&grad);

        let mut step = 1.0;
        let mut accepted = None;
        // Once the predicted decrease is lost in the rounding of φ, Armijo
        // only accepts noise; take the full step if it shrinks the gradient.
        if -slope <= 1e-9 * (value.abs() + 1.0) {
            let cand = &theta + &dir;
            let g = model.gradient(&cand)?;
            if inf_norm(&g) < gnorm {
                let v = model.neg_log_density(&cand)?;
                theta = cand;
                value = v;
                grad = g;
                continue;
            }
        }
        for _ in 0..60 {
            let cand = &theta + &dir * step;
            let v = model.neg_log_density(&cand)?;
            if v.is_finite() && v <= value + opts.armijo * step * slope {
                accepted = Some((cand, v));
                break;
            }
            step *= opts.backtrack;
        }

        let (next, next_value) = match accepted {
            Some(found) => found,
            None => {
                // Near the optimum the decrease in φ drops below its rounding
                // error; accept the full step if it still shrinks the gradient.
                let cand = &theta + &dir;
                let g = model.gradient(&cand)?;
                if inf_norm(&g) < gnorm {
                    let v = model.neg_log_density(&cand)?;
                    (cand, v)
                } else {
                    dir = -&grad;
                    slope = dir.dot(&grad);
                    let mut step = 1.0 / gnorm.max(1.0);
                    let mut found = None;
                    for _ in 0..60 {
                        let cand = &theta + &dir * step;
                        let v = model.neg_log_density(&cand)?;
                        if v.is_finite() && v <= value + opts.armijo * step * slope {
                            found = Some((cand, v));
                            break;
                        }
                        step *= opts.backtrack;
                    }
                    match found {
                        Some(f) => f,
                        None => {
                            return Err(Error::NonConvergence {
                                iterations: iter,
                                grad_norm: gnorm,
                                last_iterate: theta.iter().copied().collect(),
                            })
                        }
                    }
                }
            }
        };

        theta = next;
        value = next_value;
        grad = model.gradient(&theta)?;
    }

    let gnorm = inf_norm(&grad);
    if gnorm <= opts.grad_tol {
        return Ok(MapEstimate {
            theta,
            grad_norm: gnorm,
            iterations: opts.max_iter,
        });
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        grad_norm: gnorm,
        last_iterate: theta.iter().copied().collect(),
    })
}

/// The Laplace approximation together with the factors used by the radial
/// change of variable `θ = θ⋆ + z² S e`.
#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub theta_star: DVector<f64>,
    /// `H = ∇²φ(θ⋆)`.
    pub hessian_at_mode: DMatrix<f64>,
    /// `Σ = H⁻¹`.
    pub covariance: DMatrix<f64>,
    /// Symmetric PSD root `S = Σ^{1/2}`.
    pub sqrt_covariance: DMatrix<f64>,
    /// `S⁻¹ = H^{1/2}`.
    pub inv_sqrt_covariance: DMatrix<f64>,
    pub log_det_sigma: f64,
    /// `φ(θ⋆)`.
    pub log_f_at_mode: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

impl LaplaceFit {
    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            theta_star: self.theta_star.iter().copied().collect(),
            hessian: self
                .hessian_at_mode
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            log_det_sigma: self.log_det_sigma,
            grad_norm: self.grad_norm,
            iterations: self.iterations,
        }
    }
}

/// JSON export of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub theta_star: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
    pub log_det_sigma: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Builds `H`, `Σ` and `S` at a stationary point via a symmetric
/// eigendecomposition of `H`.
pub fn build_fit<M: TargetModel + ?Sized>(
    model: &M,
    theta_star: &DVector<f64>,
) -> Result<LaplaceFit> {
    check_dim(model.dim(), theta_star.len())?;
    let hessian = model.hessian(theta_star)?;
    if hessian.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("hessian at the mode".into()));
    }
    let grad_norm = inf_norm(&model.gradient(theta_star)?);
    let log_f_at_mode = model.neg_log_density(theta_star)?;
    let mut fit = fit_from_hessian(theta_star.clone(), hessian)?;
    fit.grad_norm = grad_norm;
    fit.log_f_at_mode = log_f_at_mode;
    Ok(fit)
}

pub(crate) fn fit_from_hessian(
    theta_star: DVector<f64>,
    hessian: DMatrix<f64>,
) -> Result<LaplaceFit> {
    let sym = (&hessian + hessian.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let min_eig = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(min_eig > 0.0) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min_eig,
        });
    }
    let q = &eig.eigenvectors;
    let with_diag = |f: &dyn Fn(f64) -> f64| {
        let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| {
            q[(i, j)] * f(eig.eigenvalues[j])
        });
        let m = &scaled * q.transpose();
        (&m + m.transpose()) * 0.5
    };
    let covariance = with_diag(&|l| 1.0 / l);
    let sqrt_covariance = with_diag(&|l| 1.0 / l.sqrt());
    let inv_sqrt_covariance = with_diag(&|l| l.sqrt());
    let log_det_sigma = -eig.eigenvalues.iter().map(|l| l.ln()).sum::<f64>();
    Ok(LaplaceFit {
        theta_star,
        hessian_at_mode: sym,
        covariance,
        sqrt_covariance,
        inv_sqrt_covariance,
        log_det_sigma,
        log_f_at_mode: f64::NAN,
        grad_norm: f64::NAN,
        iterations: 0,
    })
}

/// Mode search from `init` followed by [`build_fit`].
pub fn fit_laplace<M: TargetModel + ?Sized>(
    model: &M,
    init: &DVector<f64>,
    opts: &OptimizerOptions,
) -> Result<LaplaceFit> {
    let map = find_map(model, init, opts)?;
    let mut fit = build_fit(model, &map.theta)?;
    fit.iterations = map.iterations;
    Ok(fit)
}

/// Normalized `log g(θ)`.
pub fn laplace_log_density(fit: &LaplaceFit, theta: &DVector<f64>) -> Result<f64> {
    check_dim(fit.dim(), theta.len())?;
    let u = theta - &fit.theta_star;
    let quad = u.dot(&(&fit.hessian_at_mode * &u));
    Ok(-0.5 * fit.dim() as f64 * LN_2PI - 0.5 * fit.log_det_sigma - 0.5 * quad)
}

/// Draws `θ⋆ + S η` with `η` standard normal.
pub fn sample_laplace<R: rand::Rng + ?Sized>(fit: &LaplaceFit, rng: &mut R) -> DVector<f64> {
    let eta = DVector::from_fn(fit.dim(), |_, _| StandardNormal.sample(rng));
    &fit.theta_star + &fit.sqrt_covariance * eta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureFailure {
    pub index: usize,
    pub min_eigenvalue: f64,
}

/// Evidence (not proof) for the global log-concavity assumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotcheckReport {
    pub n_points: usize,
    pub radius_multiplier: f64,
    pub min_eigenvalue: f64,
    pub failures: Vec<CurvatureFailure>,
}

impl SpotcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks the Hessian's smallest eigenvalue at `n_points` draws of
/// `θ⋆ + radius_multiplier · S η`.
pub fn logconcavity_spotcheck<M: TargetModel + ?Sized>(
    model: &M,
    fit: &LaplaceFit,
    n_points: usize,
    radius_multiplier: f64,
    seed: u64,
) -> SpotcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut min_seen = f64::INFINITY;
    for index in 0..n_points {
        let eta = DVector::from_fn(fit.dim(), |_, _| StandardNormal.sample(&mut rng));
        let theta = &fit.theta_star + (&fit.sqrt_covariance * eta) * radius_multiplier;
        let min_eigenvalue = match model.hessian(&theta) {
            Ok(h) if h.iter().all(|v| v.is_finite()) => {
                let sym = (&h + h.transpose()) * 0.5;
                sym.symmetric_eigenvalues()
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min)
            }
            _ => f64::NAN,
        };
        min_seen = min_seen.min(min_eigenvalue);
        if !(min_eigenvalue > 0.0) {
            failures.push(CurvatureFailure {
                index,
                min_eigenvalue,
            });
        }
    }
    SpotcheckReport {
        n_points,
        radius_multiplier,
        min_eigenvalue: min_seen,
        failures,
    }
}
