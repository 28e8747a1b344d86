//! Per-direction quantities along the ray `r ↦ φ(θ⋆ + r S e)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{BoundaryForm, CondKlMode, Delta4Mode};
use crate::error::{Error, Result};
use crate::laplace::LaplaceFit;
use crate::model::{check_dim, TargetModel};
use crate::radial::{
    chi_moment, chi_quantile, psi_g_min_curvature, ChiQuadrature, DirectionSample,
};

/// Points in the Δ₄ grid surrogate.
pub const DELTA4_GRID_POINTS: usize = 512;
/// Tail probability left beyond the default grid end `r_max`.
pub const DELTA4_GRID_TAIL: f64 = 1e-6;

const CURVATURE_GRID_POINTS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delta4Source {
    /// Closed-form global bound supplied by the model.
    Analytic,
    /// Maximum over a finite grid of radii: a heuristic surrogate.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delta4 {
    pub value: f64,
    pub source: Delta4Source,
}

/// `S e`.
pub fn scaled_direction(fit: &LaplaceFit, e: &DirectionSample) -> Result<DVector<f64>> {
    check_dim(fit.dim(), e.dim())?;
    Ok(&fit.sqrt_covariance * e.as_vector())
}

/// `Δ₃(e) = φ'''(θ⋆)[Se, Se, Se]`, the third derivative along the ray at
/// the mode.
pub fn delta3<M: TargetModel + ?Sized>(
    fit: &LaplaceFit,
    model: &M,
    e: &DirectionSample,
) -> Result<f64> {
    let v = scaled_direction(fit, e)?;
    Ok(model.ray_derivatives(&fit.theta_star, &v, 0.0, 3)?[2])
}

/// `Δ₄(e)`: the model's analytic global bound when requested and available,
/// otherwise `max |φ_e''''(r)|` over a 512-point grid on `[0, r_max]`.
///
/// `r_max` defaults to the `1 - 10⁻⁶` quantile of `χ_d`.
pub fn delta4<M: TargetModel + ?Sized>(
    fit: &LaplaceFit,
    model: &M,
    e: &DirectionSample,
    mode: Delta4Mode,
    r_max: Option<f64>,
) -> Result<Delta4> {
    let v = scaled_direction(fit, e)?;
    if mode == Delta4Mode::Analytic {
        if let Some(value) = model.fourth_derivative_ray_bound(&fit.theta_star, &v) {
            return Ok(Delta4 {
                value,
                source: Delta4Source::Analytic,
            });
        }
    }
    let r_max = r_max.unwrap_or_else(|| chi_quantile(fit.dim(), 1.0 - DELTA4_GRID_TAIL));
    if !(r_max > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "r_max must be positive, got {r_max}"
        )));
    }
    let mut best = 0.0f64;
    for i in 0..DELTA4_GRID_POINTS {
        let r = r_max * i as f64 / (DELTA4_GRID_POINTS - 1) as f64;
        let d4 = model.ray_derivatives(&fit.theta_star, &v, r, 4)?[3];
        if !d4.is_finite() {
            return Err(Error::NonFinite(format!(
                "fourth ray derivative at r = {r}"
            )));
        }
        best = best.max(d4.abs());
    }
    Ok(Delta4 {
        value: best,
        source: Delta4Source::Grid,
    })
}

/// Largest radius `r₀` on which the Taylor lower bound
/// `φ_e''(r) ≥ 1 + Δ₃ r - Δ₄ r²/2` stays positive.
///
/// Uses the rationalized root `2 / (√(Δ₃² + 2Δ₄) - Δ₃)`, which also covers
/// `Δ₄ = 0` (infinite for `Δ₃ ≥ 0`, `1/|Δ₃|` otherwise).
pub fn taylor_radius(delta3: f64, delta4: f64) -> f64 {
    let denom = (delta3 * delta3 + 2.0 * delta4).sqrt() - delta3;
    if denom > 0.0 {
        2.0 / denom
    } else {
        f64::INFINITY
    }
}

/// `(2d-1)/w + 6w + 5Δ₃w² - (7/3)Δ₄w³` with `w = z²`: the lower bound on
/// `ψ_{f,e}''(z)` valid for `z² ≤ r₀`.
pub fn curvature_polynomial(d: usize, delta3: f64, delta4: f64, w: f64) -> f64 {
    (2.0 * d as f64 - 1.0) / w + 6.0 * w + 5.0 * delta3 * w * w - (7.0 / 3.0) * delta4 * w * w * w
}

/// Lower bound on `ψ_{f,e}''(z)` for `z² ≥ r₀`.
pub fn boundary_curvature(delta3: f64, delta4: f64, r0: f64, form: BoundaryForm) -> f64 {
    if !r0.is_finite() {
        return f64::INFINITY;
    }
    let lead = match form {
        BoundaryForm::AsStated => r0,
        BoundaryForm::Derived => 2.0 * r0,
    };
    lead + delta3 * r0 * r0 - delta4 * r0 * r0 * r0 / 3.0
}

/// Lower bound on `min_z ψ_{f,e}''(z)`.
///
/// Minimum of the boundary term and of [`curvature_polynomial`] over
/// `(0, r₀]`, the latter found on a dense log-spaced grid and refined by
/// golden-section search. A nonpositive result means the bound is unusable
/// for this direction.
pub fn min_conditional_curvature(
    d: usize,
    delta3: f64,
    delta4: f64,
    form: BoundaryForm,
) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "dimension must be at least 1".into(),
        ));
    }
    if !(delta4 >= 0.0) || !delta4.is_finite() || !delta3.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need finite Δ₃ and Δ₄ ≥ 0, got Δ₃ = {delta3}, Δ₄ = {delta4}"
        )));
    }
    if delta3 == 0.0 && delta4 == 0.0 {
        return Ok(psi_g_min_curvature(d));
    }

    let r0 = taylor_radius(delta3, delta4);
    let w_star = ((2.0 * d as f64 - 1.0) / 6.0).sqrt();
    // With r₀ = ∞ (Δ₄ = 0, Δ₃ > 0) the polynomial is increasing past w⋆.
    let w_hi = if r0.is_finite() {
        r0
    } else {
        4.0 * w_star + 1.0
    };
    let w_lo = w_star.min(w_hi) * 1e-6;
    let poly = |w: f64| curvature_polynomial(d, delta3, delta4, w);

    let ratio = (w_hi / w_lo).ln();
    let grid = |i: usize| w_lo * (ratio * i as f64 / (CURVATURE_GRID_POINTS - 1) as f64).exp();
    let (mut best_i, mut best) = (0, f64::INFINITY);
    for i in 0..CURVATURE_GRID_POINTS {
        let v = poly(grid(i));
        if v < best {
            best = v;
            best_i = i;
        }
    }
    let a = grid(best_i.saturating_sub(1));
    let b = grid((best_i + 1).min(CURVATURE_GRID_POINTS - 1));
    let refined = golden_section_min(poly, a, b);
    let interior = best.min(refined).min(poly(w_hi));

    Ok(interior.min(boundary_curvature(delta3, delta4, r0, form)))
}

fn golden_section_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-14 * (a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd)
}

/// `Δ₃² E(r⁵) + (2/3)|Δ₃|Δ₄ E(r⁶) + (1/9)Δ₄² E(r⁷)`: the closed-form
/// majorant of `E[4r(φ_e'(r) - r)²]` under `r ~ χ_d`.
pub fn conditional_kl_numerator(d: usize, delta3: f64, delta4: f64) -> f64 {
    let a3 = delta3.abs();
    a3 * a3 * chi_moment(d, 5)
        + (2.0 / 3.0) * a3 * delta4 * chi_moment(d, 6)
        + delta4 * delta4 * chi_moment(d, 7) / 9.0
}

/// Bound on `KL(z_g, z_f | e)` from the log-Sobolev inequality for the
/// strongly log-concave conditional.
pub fn conditional_kl_bound(d: usize, delta3: f64, delta4: f64, min_curvature: f64) -> Result<f64> {
    if !(min_curvature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "conditional curvature bound must be positive, got {min_curvature}"
        )));
    }
    Ok(conditional_kl_numerator(d, delta3, delta4) / min_curvature)
}

/// `E[4r(φ_e'(r) - r)²]` evaluated by quadrature instead of the majorant.
pub fn conditional_kl_numerator_exact<M: TargetModel + ?Sized>(
    quad: &ChiQuadrature,
    fit: &LaplaceFit,
    model: &M,
    v: &DVector<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for (&r, &w) in quad.nodes.iter().zip(&quad.weights) {
        let slope = model.ray_derivatives(&fit.theta_star, v, r, 1)?[0];
        let dev = slope - r;
        total += w * 4.0 * r * dev * dev;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("exact conditional numerator".into()));
    }
    Ok(total)
}

/// `|ε₂(e)| ≤ Δ₄ E(r⁴) / 4!`, with `E(r⁴) = d(d+2)`.
pub fn eps2_bound(d: usize, delta4: f64) -> f64 {
    delta4 * chi_moment(d, 4) / 24.0
}

/// ELBO approximation of `log f̃(e)` up to a direction-independent shift:
/// `E_{r~χ_d}[r²/2 - (φ_e(r) - φ_e(0))]`.
pub fn xi_elbo<M: TargetModel + ?Sized>(
    fit: &LaplaceFit,
    model: &M,
    e: &DirectionSample,
    quadrature_nodes: usize,
) -> Result<f64> {
    let quad = ChiQuadrature::new(fit.dim(), quadrature_nodes)?;
    let v = scaled_direction(fit, e)?;
    xi_elbo_on_ray(&quad, fit, model, &v)
}

pub(crate) fn xi_elbo_on_ray<M: TargetModel + ?Sized>(
    quad: &ChiQuadrature,
    fit: &LaplaceFit,
    model: &M,
    v: &DVector<f64>,
) -> Result<f64> {
    // A ray with vanishing third derivative at the mode and a zero global
    // fourth-derivative bound is exactly r²/2 + φ_e(0).
    if model.fourth_derivative_ray_bound(&fit.theta_star, v) == Some(0.0)
        && model.ray_derivatives(&fit.theta_star, v, 0.0, 3)?[2] == 0.0
    {
        return Ok(0.0);
    }
    let mut radii = Vec::with_capacity(quad.nodes.len() + 1);
    radii.push(0.0);
    radii.extend_from_slice(&quad.nodes);
    let values = model.ray_values(&fit.theta_star, v, &radii)?;
    let base = values[0];
    let mut total = 0.0;
    for ((&r, &w), &phi) in quad.nodes.iter().zip(&quad.weights).zip(&values[1..]) {
        total += w * (0.5 * r * r - (phi - base));
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("φ along the ray".into()));
    }
    Ok(total)
}

/// Everything the assembled bound needs from one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionDiagnostics {
    pub e: Vec<f64>,
    pub delta3: f64,
    pub delta4: f64,
    pub delta4_source: Delta4Source,
    pub min_curvature: f64,
    /// Bound on `KL(z_g, z_f | e)`; `None` when the direction is invalid.
    pub cond_kl_bound: Option<f64>,
    pub xi_elbo: Option<f64>,
    /// `ε₁(e) = KL(z_g, z_f | e)`, so its bound equals `cond_kl_bound`.
    pub eps1_bound: Option<f64>,
    pub eps2_bound: f64,
}

impl DirectionDiagnostics {
    pub fn is_valid(&self) -> bool {
        self.cond_kl_bound.is_some() && self.xi_elbo.is_some()
    }
}

/// Shared, immutable inputs for evaluating many directions.
pub struct DirectionContext<'a, M: TargetModel + ?Sized> {
    pub fit: &'a LaplaceFit,
    pub model: &'a M,
    pub quad: ChiQuadrature,
    pub delta4_mode: Delta4Mode,
    pub delta4_r_max: Option<f64>,
    pub boundary_form: BoundaryForm,
    pub cond_kl_mode: CondKlMode,
    /// Skip ξ_ELBO and the curvature work when only Δ₃ is needed.
    pub delta3_only: bool,
}

impl<'a, M: TargetModel + ?Sized> DirectionContext<'a, M> {
    pub fn diagnose(&self, e: &DirectionSample) -> Result<DirectionDiagnostics> {
        let d = self.fit.dim();
        let v = scaled_direction(self.fit, e)?;
        let d3 = self
            .model
            .ray_derivatives(&self.fit.theta_star, &v, 0.0, 3)?[2];
        if !d3.is_finite() {
            return Err(Error::NonFinite("Δ₃".into()));
        }
        if self.delta3_only {
            return Ok(DirectionDiagnostics {
                e: e.as_vector().iter().copied().collect(),
                delta3: d3,
                delta4: f64::NAN,
                delta4_source: Delta4Source::Analytic,
                min_curvature: f64::NAN,
                cond_kl_bound: None,
                xi_elbo: None,
                eps1_bound: None,
                eps2_bound: f64::NAN,
            });
        }
        let d4 = delta4(self.fit, self.model, e, self.delta4_mode, self.delta4_r_max)?;
        let curvature = min_conditional_curvature(d, d3, d4.value, self.boundary_form)?;

        let cond = if curvature > 0.0 && curvature.is_finite() {
            let numerator = match self.cond_kl_mode {
                CondKlMode::Majorant => conditional_kl_numerator(d, d3, d4.value),
                CondKlMode::Quadrature => {
                    conditional_kl_numerator_exact(&self.quad, self.fit, self.model, &v)?
                }
            };
            Some(numerator / curvature)
        } else {
            None
        };
        let xi = if d3 == 0.0 && d4.value == 0.0 {
            Some(0.0)
        } else {
            xi_elbo_on_ray(&self.quad, self.fit, self.model, &v).ok()
        };

        Ok(DirectionDiagnostics {
            e: e.as_vector().iter().copied().collect(),
            delta3: d3,
            delta4: d4.value,
            delta4_source: d4.source,
            min_curvature: curvature,
            cond_kl_bound: cond,
            xi_elbo: xi,
            eps1_bound: cond,
            eps2_bound: eps2_bound(d, d4.value),
        })
    }
}
