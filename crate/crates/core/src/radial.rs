//! The direction/radius change of variable `θ = θ⋆ + z² S e`.
//!
//! Under the Laplace approximation `e` is uniform on the unit sphere,
//! `r = z²` follows the `χ_d` law, and the two are independent.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::laplace::LaplaceFit;
use crate::model::check_dim;
use crate::quadrature::gauss_legendre;

/// A unit vector on `S^{d-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSample(DVector<f64>);

impl DirectionSample {
    /// Normalizes `v`; fails on the zero vector.
    pub fn new(v: DVector<f64>) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument(
                "direction must be a finite nonzero vector".into(),
            ));
        }
        Ok(Self(v / norm))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// The antithetic direction `-e`.
    pub fn flipped(&self) -> Self {
        Self(-&self.0)
    }
}

/// A ChaCha8 stream that depends only on `(seed, stream)`, so work split by
/// index reproduces bit-for-bit on any number of threads.
pub fn indexed_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform direction `η / ‖η‖`; for `d = 1` this is `±1` with equal odds.
pub fn sample_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DirectionSample {
    assert!(d >= 1, "dimension must be at least 1");
    loop {
        let eta = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(rng));
        let norm = eta.norm();
        if norm > 0.0 {
            return DirectionSample(eta / norm);
        }
    }
}

/// `Γ(a) / Γ(b)` through log-gamma.
pub fn gamma_ratio(a: f64, b: f64) -> f64 {
    (ln_gamma(a) - ln_gamma(b)).exp()
}

/// `Γ(a + ½) / Γ(a)`, by asymptotic series for large `a` where the
/// log-gamma difference cancels badly.
fn half_gamma_ratio(a: f64) -> f64 {
    if a < 1000.0 {
        return gamma_ratio(a + 0.5, a);
    }
    let x = 1.0 / a;
    let series =
        1.0 - x / 8.0 + x * x / 128.0 + 5.0 * x.powi(3) / 1024.0 - 21.0 * x.powi(4) / 32768.0;
    a.sqrt() * series
}

/// `E[r^k]` for `r ~ χ_d`: `2^{k/2} Γ((d+k)/2) / Γ(d/2)`, built up through
/// `E[r^k] = (d+k-2) E[r^{k-2}]`.
pub fn chi_moment(d: usize, k: u32) -> f64 {
    assert!(d >= 1, "dimension must be at least 1");
    let df = d as f64;
    let (mut m, mut j) = if k % 2 == 1 {
        (std::f64::consts::SQRT_2 * half_gamma_ratio(0.5 * df), 1)
    } else {
        (1.0, 0)
    };
    while j < k {
        j += 2;
        m *= df + j as f64 - 2.0;
    }
    m
}

/// `p`-quantile of the `χ_d` law.
pub fn chi_quantile(d: usize, p: f64) -> f64 {
    let chi2 = ChiSquared::new(d as f64).expect("positive degrees of freedom");
    chi2.inverse_cdf(p).sqrt()
}

/// Density of `z = √r` for `r ~ χ_d`:
/// `g(z) = z^{2d-1} exp(-z⁴/2) / (2^{d/2-2} Γ(d/2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialLaw {
    d: usize,
    log_normalizer: f64,
}

impl RadialLaw {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        let df = d as f64;
        let log_normalizer = (0.5 * df - 2.0) * std::f64::consts::LN_2 + ln_gamma(0.5 * df);
        Ok(Self { d, log_normalizer })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// `log[2^{d/2-2} Γ(d/2)]`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn z_log_density(&self, z: f64) -> Result<f64> {
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "z must be positive and finite, got {z}"
            )));
        }
        let two_d_minus_1 = 2.0 * self.d as f64 - 1.0;
        Ok(two_d_minus_1 * z.ln() - 0.5 * z.powi(4) - self.log_normalizer)
    }

    /// `ψ_g''(z) = (2d-1)/z² + 6z²`.
    pub fn psi_curvature(&self, z: f64) -> f64 {
        (2.0 * self.d as f64 - 1.0) / (z * z) + 6.0 * z * z
    }
}

/// `min_z ψ_g''(z) = 2√6 √(2d-1)`.
pub fn psi_g_min_curvature(d: usize) -> f64 {
    2.0 * 6f64.sqrt() * (2.0 * d as f64 - 1.0).sqrt()
}

/// `θ⋆ + z² S e`.
pub fn to_theta(fit: &LaplaceFit, z: f64, e: &DirectionSample) -> Result<DVector<f64>> {
    check_dim(fit.dim(), e.dim())?;
    if !(z >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "z must be nonnegative, got {z}"
        )));
    }
    Ok(&fit.theta_star + (&fit.sqrt_covariance * e.as_vector()) * (z * z))
}

/// Inverse of [`to_theta`]. Returns `None` at `θ = θ⋆`, where the direction
/// is undefined.
pub fn from_theta(
    fit: &LaplaceFit,
    theta: &DVector<f64>,
) -> Result<Option<(f64, DirectionSample)>> {
    check_dim(fit.dim(), theta.len())?;
    let w = &fit.inv_sqrt_covariance * (theta - &fit.theta_star);
    let r = w.norm();
    if r == 0.0 {
        return Ok(None);
    }
    Ok(Some((r.sqrt(), DirectionSample(w / r))))
}

/// Fixed-node rule for expectations over `r ~ χ_d`.
///
/// Gauss–Legendre on `[max(0, m-9), m+9]` around the mode `m = √(d-1)`,
/// with the chi density folded into the weights and the weights
/// renormalized to sum to one.
#[derive(Debug, Clone)]
pub struct ChiQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ChiQuadrature {
    pub const MIN_NODES: usize = 16;

    pub fn new(d: usize, n_nodes: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        if n_nodes < Self::MIN_NODES {
            return Err(Error::InvalidArgument(format!(
                "need at least {} quadrature nodes, got {n_nodes}",
                Self::MIN_NODES
            )));
        }
        let mode = ((d - 1) as f64).sqrt();
        let lo = (mode - 9.0).max(0.0);
        let hi = mode + 9.0;
        let (x, w) = gauss_legendre(n_nodes);
        let half = 0.5 * (hi - lo);
        let nodes: Vec<f64> = x.iter().map(|xi| lo + half * (xi + 1.0)).collect();
        let log_dens: Vec<f64> = nodes
            .iter()
            .map(|&r| (d as f64 - 1.0) * r.ln() - 0.5 * r * r)
            .collect();
        let peak = log_dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = w
            .iter()
            .zip(&log_dens)
            .map(|(wi, ld)| wi * half * (ld - peak).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        for wi in &mut weights {
            *wi /= total;
        }
        Ok(Self { nodes, weights })
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&r, &w)| w * f(r))
            .sum()
    }
}
