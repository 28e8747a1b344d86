#![allow(dead_code)]

use lapcert::error::{Error, Result};
use lapcert::laplace::{fit_laplace, LaplaceFit, OptimizerOptions};
use lapcert::model::{
    generate_dataset, log1p_exp_neg, log1p_exp_neg_derivative, LogisticRegressionModel,
    SyntheticDatasetConfig, TargetModel,
};
use nalgebra::{DMatrix, DVector};

pub fn logistic_instance(
    d: usize,
    n: usize,
    seed: u64,
    sigma0: f64,
) -> (LogisticRegressionModel, LaplaceFit) {
    let data = generate_dataset(&SyntheticDatasetConfig { d, n, seed }).unwrap();
    let model = LogisticRegressionModel::from_data(&data, sigma0).unwrap();
    let fit = fit_laplace(&model, &DVector::zeros(d), &OptimizerOptions::default()).unwrap();
    (model, fit)
}

/// `|a - b| ≤ tol · max(|a|, |b|, scale)`.
pub fn close(a: f64, b: f64, tol: f64, scale: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(scale)
}

/// Central difference with one Richardson step: error `O(h⁴)`.
pub fn richardson<F: Fn(f64) -> f64>(f: F, h: f64) -> f64 {
    let central = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * central(h / 2.0) - central(h)) / 3.0
}

/// Five-point third derivative at 0 with one Richardson step.
pub fn third_derivative_5pt<F: Fn(f64) -> f64>(f: F, h: f64) -> f64 {
    let stencil =
        |h: f64| (f(2.0 * h) - 2.0 * f(h) + 2.0 * f(-h) - f(-2.0 * h)) / (2.0 * h * h * h);
    (4.0 * stencil(h / 2.0) - stencil(h)) / 3.0
}

fn softplus_derivative(theta: f64, k: usize) -> f64 {
    // softplus(θ) = log(1 + e^{-(-θ)}), so the k-th derivative picks up (-1)^k.
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * log1p_exp_neg_derivative(-theta, k)
}

/// `φ(θ) = θ²/2 + α softplus(θ)` in one dimension.
#[derive(Debug, Clone, Copy)]
pub struct SoftplusTilt {
    pub alpha: f64,
}

impl TargetModel for SoftplusTilt {
    fn dim(&self) -> usize {
        1
    }

    fn neg_log_density(&self, theta: &DVector<f64>) -> Result<f64> {
        let t = theta[0];
        Ok(0.5 * t * t + self.alpha * log1p_exp_neg(-t))
    }

    fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let t = theta[0];
        Ok(DVector::from_element(
            1,
            t + self.alpha * softplus_derivative(t, 1),
        ))
    }

    fn hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_element(
            1,
            1,
            1.0 + self.alpha * softplus_derivative(theta[0], 2),
        ))
    }

    fn ray_derivatives(
        &self,
        base: &DVector<f64>,
        dir: &DVector<f64>,
        r: f64,
        max_order: usize,
    ) -> Result<Vec<f64>> {
        if !(1..=4).contains(&max_order) {
            return Err(Error::UnsupportedOrder(max_order));
        }
        let (v, t) = (dir[0], base[0] + r * dir[0]);
        Ok((1..=max_order)
            .map(|k| {
                let quad = match k {
                    1 => t * v,
                    2 => v * v,
                    _ => 0.0,
                };
                quad + self.alpha * softplus_derivative(t, k) * v.powi(k as i32)
            })
            .collect())
    }

    fn fourth_derivative_ray_bound(&self, _base: &DVector<f64>, dir: &DVector<f64>) -> Option<f64> {
        Some(self.alpha * 0.125 * dir[0].powi(4))
    }
}

/// `φ(θ) = θ²/2 + αθ³/6` in one dimension; only meaningful on `θ ≥ 0`.
#[derive(Debug, Clone, Copy)]
pub struct CubicRay {
    pub alpha: f64,
}

impl TargetModel for CubicRay {
    fn dim(&self) -> usize {
        1
    }

    fn neg_log_density(&self, theta: &DVector<f64>) -> Result<f64> {
        let t = theta[0];
        Ok(0.5 * t * t + self.alpha * t * t * t / 6.0)
    }

    fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let t = theta[0];
        Ok(DVector::from_element(1, t + 0.5 * self.alpha * t * t))
    }

    fn hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_element(1, 1, 1.0 + self.alpha * theta[0]))
    }

    fn ray_derivatives(
        &self,
        base: &DVector<f64>,
        dir: &DVector<f64>,
        r: f64,
        max_order: usize,
    ) -> Result<Vec<f64>> {
        if !(1..=4).contains(&max_order) {
            return Err(Error::UnsupportedOrder(max_order));
        }
        let (v, t) = (dir[0], base[0] + r * dir[0]);
        let all = [
            (t + 0.5 * self.alpha * t * t) * v,
            (1.0 + self.alpha * t) * v * v,
            self.alpha * v * v * v,
            0.0,
        ];
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

/// `f̃(θ) = exp(-θ²/2) + ε exp(-ε²θ²/2)`: a standard normal plus a very
/// wide, low bump. Not log-concave in the tails.
#[derive(Debug, Clone, Copy)]
pub struct WideBumpMixture {
    pub eps: f64,
}

impl WideBumpMixture {
    fn parts(&self, t: f64) -> (f64, f64, f64) {
        let e2 = self.eps * self.eps;
        let a = (-0.5 * t * t).exp();
        let b = self.eps * (-0.5 * e2 * t * t).exp();
        let f = a + b;
        let f1 = -t * a - e2 * t * b;
        let f2 = (t * t - 1.0) * a + (e2 * e2 * t * t - e2) * b;
        (f, f1, f2)
    }
}

impl TargetModel for WideBumpMixture {
    fn dim(&self) -> usize {
        1
    }

    fn neg_log_density(&self, theta: &DVector<f64>) -> Result<f64> {
        Ok(-self.parts(theta[0]).0.ln())
    }

    fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        let (f, f1, _) = self.parts(theta[0]);
        Ok(DVector::from_element(1, -f1 / f))
    }

    fn hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (f, f1, f2) = self.parts(theta[0]);
        Ok(DMatrix::from_element(1, 1, -f2 / f + (f1 / f).powi(2)))
    }

    fn ray_derivatives(
        &self,
        base: &DVector<f64>,
        dir: &DVector<f64>,
        r: f64,
        max_order: usize,
    ) -> Result<Vec<f64>> {
        if !(1..=2).contains(&max_order) {
            return Err(Error::UnsupportedOrder(max_order));
        }
        let theta = DVector::from_element(1, base[0] + r * dir[0]);
        let v = dir[0];
        let mut out = vec![self.gradient(&theta)?[0] * v];
        if max_order == 2 {
            out.push(self.hessian(&theta)?[(0, 0)] * v * v);
        }
        Ok(out)
    }
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `KL(g, f)` for a 1-D target by dense quadrature, with `g = N(m, s²)`.
pub fn kl_1d_quadrature<F: Fn(f64) -> f64>(phi: F, m: f64, s: f64) -> f64 {
    let (a, b, n) = (m - 14.0 * s, m + 14.0 * s, 200_000);
    let phi_m = phi(m);
    let log_z = simpson(|t| (-(phi(t) - phi_m)).exp(), a, b, n).ln() - phi_m;
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * s * s).ln();
    simpson(
        |t| {
            let u = (t - m) / s;
            let log_g = log_norm - 0.5 * u * u;
            log_g.exp() * (log_g + phi(t) + log_z)
        },
        a,
        b,
        n,
    )
}
