//! The computable upper bound on `KL(g, f)`.
//!
//! `KL(g, f)` splits into a direction part `KL(e_g, e_f)` and the mean over
//! directions of the conditional radial divergence `KL(z_g, z_f | e)`. Both
//! are controlled by two scalars per direction: the third derivative `Δ₃(e)`
//! of `φ` along `S e` at the mode, and a bound `Δ₄(e)` on the fourth. The
//! expectation over `e` is replaced by an average over sampled antithetic
//! direction pairs.

mod assemble;
mod direction;
mod lsi;

pub use assemble::{
    approximate_bound, approximate_bound_coefficient, audit, audit_with_fit, direction_kl_bound,
    direction_kl_bound_grouped, jackknife_grouped, BoundReport, DirectionKl, Estimate,
    TermBreakdown,
};
pub use direction::{
    boundary_curvature, conditional_kl_bound, conditional_kl_numerator,
    conditional_kl_numerator_exact, curvature_polynomial, delta3, delta4, eps2_bound,
    min_conditional_curvature, scaled_direction, taylor_radius, xi_elbo, Delta4, Delta4Source,
    DirectionContext, DirectionDiagnostics, DELTA4_GRID_POINTS, DELTA4_GRID_TAIL,
};
pub use lsi::{lsi_kl_bound, LsiEstimate};

use serde::{Deserialize, Serialize};

use crate::laplace::OptimizerOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Delta4Mode {
    /// Use the model's closed-form bound, falling back to the grid when the
    /// model has none.
    Analytic,
    Grid,
}

/// Which lower bound to use for the curvature beyond `r₀`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryForm {
    /// `r₀ + Δ₃r₀² - Δ₄r₀³/3`.
    AsStated,
    /// `2r₀ + Δ₃r₀² - Δ₄r₀³/3`, i.e. `2φ_e'(r₀)` from the Taylor bound.
    Derived,
}

/// How `E[4r(φ_e'(r) - r)²]` is evaluated in the conditional bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CondKlMode {
    /// Closed-form Δ₃/Δ₄ majorant.
    Majorant,
    /// Quadrature of the exact expectation.
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundForm {
    Approx,
    Detailed,
    Both,
}

impl BoundForm {
    pub fn wants_approx(self) -> bool {
        matches!(self, BoundForm::Approx | BoundForm::Both)
    }

    pub fn wants_detailed(self) -> bool {
        matches!(self, BoundForm::Detailed | BoundForm::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    /// Number of sampled directions; must be even (antithetic pairs).
    pub n_directions: usize,
    pub seed: u64,
    pub quadrature_nodes: usize,
    pub bound: BoundForm,
    pub delta4_mode: Delta4Mode,
    /// Grid end for the Δ₄ surrogate; `None` means the `1 - 10⁻⁶` χ_d quantile.
    pub delta4_r_max: Option<f64>,
    pub boundary_form: BoundaryForm,
    pub cond_kl_mode: CondKlMode,
    pub spotcheck_points: usize,
    pub spotcheck_radius: f64,
    pub optimizer: OptimizerOptions,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            n_directions: 256,
            seed: 0,
            quadrature_nodes: 64,
            bound: BoundForm::Both,
            delta4_mode: Delta4Mode::Analytic,
            delta4_r_max: None,
            boundary_form: BoundaryForm::AsStated,
            cond_kl_mode: CondKlMode::Majorant,
            spotcheck_points: 32,
            spotcheck_radius: 3.0,
            optimizer: OptimizerOptions::default(),
        }
    }
}
