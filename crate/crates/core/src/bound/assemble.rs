use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::direction::{DirectionContext, DirectionDiagnostics};
use super::{AuditConfig, Delta4Source};
use crate::error::{Error, Result};
use crate::laplace::{fit_laplace, logconcavity_spotcheck, LaplaceFit, SpotcheckReport};
use crate::model::TargetModel;
use crate::radial::{gamma_ratio, indexed_rng, sample_direction, ChiQuadrature};

const SPOTCHECK_STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

/// Leave-one-group-out jackknife of `stat` over consecutive groups of
/// `group_size` items.
pub fn jackknife_grouped<T, F>(items: &[T], group_size: usize, stat: F) -> Estimate
where
    F: Fn(&[&T]) -> f64,
{
    let all: Vec<&T> = items.iter().collect();
    let value = stat(&all);
    let group_size = group_size.max(1);
    let n_groups = items.len() / group_size;
    if n_groups < 2 {
        return Estimate { value, se: 0.0 };
    }
    let leave_out: Vec<f64> = (0..n_groups)
        .map(|g| {
            let kept: Vec<&T> = items
                .iter()
                .enumerate()
                .filter(|(i, _)| i / group_size != g)
                .map(|(_, t)| t)
                .collect();
            stat(&kept)
        })
        .collect();
    let g = n_groups as f64;
    let mean = leave_out.iter().sum::<f64>() / g;
    let ss: f64 = leave_out.iter().map(|v| (v - mean).powi(2)).sum();
    Estimate {
        value,
        se: ((g - 1.0) / g * ss).sqrt(),
    }
}

fn mean_of<T, F: Fn(&T) -> f64>(items: &[&T], f: F) -> f64 {
    items.iter().map(|t| f(t)).sum::<f64>() / items.len() as f64
}

/// `½ log E[exp(2ξ - 2E[ξ])]`, reduced with log-sum-exp. Never negative by
/// Jensen's inequality; rounding below zero is clamped.
fn log_moment(xis: &[f64]) -> f64 {
    let n = xis.len() as f64;
    let mean = xis.iter().sum::<f64>() / n;
    let a: Vec<f64> = xis.iter().map(|x| 2.0 * (x - mean)).collect();
    let peak = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = a.iter().map(|v| (v - peak).exp()).sum();
    (0.5 * (peak + (s / n).ln())).max(0.0)
}

/// Direction part of the detailed bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionKl {
    /// `½ log E[exp(2ξ_ELBO - 2E[ξ_ELBO])]`.
    pub e_term: Estimate,
    /// `E[(ε₁ bound)²]`, standing in for the ε₁ log-moment term.
    pub eps1_term: Estimate,
}

pub fn direction_kl_bound(diagnostics: &[DirectionDiagnostics]) -> Result<DirectionKl> {
    direction_kl_bound_grouped(diagnostics, 1)
}

/// As [`direction_kl_bound`], with jackknife groups of `group_size`
/// consecutive directions (2 for antithetic pairs).
pub fn direction_kl_bound_grouped(
    diagnostics: &[DirectionDiagnostics],
    group_size: usize,
) -> Result<DirectionKl> {
    if diagnostics.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two directions".into(),
        ));
    }
    let mut rows = Vec::with_capacity(diagnostics.len());
    for (i, diag) in diagnostics.iter().enumerate() {
        match (diag.xi_elbo, diag.eps1_bound) {
            (Some(xi), Some(eps1)) => rows.push((xi, eps1)),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "direction {i} is flagged invalid"
                )));
            }
        }
    }
    let e_term = jackknife_grouped(&rows, group_size, |kept| {
        let xis: Vec<f64> = kept.iter().map(|r| r.0).collect();
        log_moment(&xis)
    });
    let eps1_term = jackknife_grouped(&rows, group_size, |kept| mean_of(kept, |r| r.1 * r.1));
    Ok(DirectionKl { e_term, eps1_term })
}

/// `2/(√3√(2d-1)) Γ((d+5)/2)/Γ(d/2) + (1/9) [Γ((d+3)/2)/Γ(d/2)]²`.
pub fn approximate_bound_coefficient(d: usize) -> f64 {
    let df = d as f64;
    let g5 = gamma_ratio(0.5 * (df + 5.0), 0.5 * df);
    let g3 = gamma_ratio(0.5 * (df + 3.0), 0.5 * df);
    2.0 / (3f64.sqrt() * (2.0 * df - 1.0).sqrt()) * g5 + g3 * g3 / 9.0
}

/// First-order bound `E[Δ₃²] · coefficient(d)`.
pub fn approximate_bound(mean_delta3_sq: f64, d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "dimension must be at least 1".into(),
        ));
    }
    if !(mean_delta3_sq >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mean Δ₃² must be nonnegative, got {mean_delta3_sq}"
        )));
    }
    Ok(mean_delta3_sq * approximate_bound_coefficient(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermBreakdown {
    /// Direction term `½ log E[exp(2ξ_ELBO - 2E ξ_ELBO)]`.
    pub e_term: f64,
    /// Mean conditional bound `E[KL(z_g, z_f | e) bound]`.
    pub cond_term: f64,
    /// ε₁ correction `E[(ε₁ bound)²]`.
    pub eps1_term: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub grad_norm: f64,
    pub iterations: usize,
    pub log_det_sigma: f64,
    pub neg_log_density_at_mode: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub d: usize,
    pub n_directions: usize,
    pub mean_delta3_sq: f64,
    pub se_delta3_sq: f64,
    pub approx_bound: Option<f64>,
    pub detailed_bound: Option<f64>,
    pub term_breakdown: Option<TermBreakdown>,
    pub term_standard_errors: Option<TermBreakdown>,
    /// Indices of directions excluded from the detailed bound.
    pub invalid_directions: Vec<usize>,
    pub delta4_source: Option<Delta4Source>,
    pub mean_eps2_bound: Option<f64>,
    pub fit: FitStats,
    pub logconcavity: SpotcheckReport,
    pub config: AuditConfig,
    pub seed: u64,
    #[serde(skip)]
    pub diagnostics: Vec<DirectionDiagnostics>,
}

/// Full pipeline: mode, Laplace fit, log-concavity spot check, per-direction
/// diagnostics, and bound assembly.
pub fn audit<M: TargetModel + ?Sized>(model: &M, config: &AuditConfig) -> Result<BoundReport> {
    let init = DVector::zeros(model.dim());
    let fit = fit_laplace(model, &init, &config.optimizer)?;
    audit_with_fit(model, &fit, config)
}

pub fn audit_with_fit<M: TargetModel + ?Sized>(
    model: &M,
    fit: &LaplaceFit,
    config: &AuditConfig,
) -> Result<BoundReport> {
    let m = config.n_directions;
    if m < 2 || !m.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "number of directions must be even and at least 2, got {m}"
        )));
    }
    let d = fit.dim();
    let logconcavity = logconcavity_spotcheck(
        model,
        fit,
        config.spotcheck_points,
        config.spotcheck_radius,
        config.seed ^ SPOTCHECK_STREAM_SALT,
    );

    let ctx = DirectionContext {
        fit,
        model,
        quad: ChiQuadrature::new(d, config.quadrature_nodes)?,
        delta4_mode: config.delta4_mode,
        delta4_r_max: config.delta4_r_max,
        boundary_form: config.boundary_form,
        cond_kl_mode: config.cond_kl_mode,
        delta3_only: !config.bound.wants_detailed(),
    };

    let pairs: Vec<Result<[DirectionDiagnostics; 2]>> = (0..m / 2)
        .into_par_iter()
        .map(|pair| {
            let e = sample_direction(d, &mut indexed_rng(config.seed, pair as u64));
            Ok([ctx.diagnose(&e)?, ctx.diagnose(&e.flipped())?])
        })
        .collect();
    let mut diagnostics = Vec::with_capacity(m);
    for pair in pairs {
        diagnostics.extend(pair?);
    }

    let d3_sq: Vec<f64> = diagnostics.iter().map(|g| g.delta3 * g.delta3).collect();
    let delta3_sq = jackknife_grouped(&d3_sq, 2, |kept| mean_of(kept, |v| *v));

    let approx_bound = if config.bound.wants_approx() {
        Some(approximate_bound(delta3_sq.value, d)?)
    } else {
        None
    };

    let mut invalid_directions = Vec::new();
    let mut detailed = None;
    let mut delta4_source = None;
    let mut mean_eps2_bound = None;
    if config.bound.wants_detailed() {
        let mut kept = Vec::with_capacity(m);
        for (p, pair) in diagnostics.chunks(2).enumerate() {
            if pair.iter().all(DirectionDiagnostics::is_valid) {
                kept.extend(pair.iter().cloned());
            } else {
                invalid_directions.extend(
                    (0..2)
                        .map(|k| 2 * p + k)
                        .filter(|&i| !diagnostics[i].is_valid()),
                );
            }
        }
        if kept.is_empty() {
            return Err(Error::AllDirectionsInvalid);
        }
        let dir_kl = direction_kl_bound_grouped(&kept, 2)?;
        let bounds: Vec<f64> = kept
            .iter()
            .map(|g| g.cond_kl_bound.unwrap_or(f64::NAN))
            .collect();
        let cond = jackknife_grouped(&bounds, 2, |k| mean_of(k, |v| *v));
        let terms = TermBreakdown {
            e_term: dir_kl.e_term.value,
            cond_term: cond.value,
            eps1_term: dir_kl.eps1_term.value,
        };
        let ses = TermBreakdown {
            e_term: dir_kl.e_term.se,
            cond_term: cond.se,
            eps1_term: dir_kl.eps1_term.se,
        };
        delta4_source = Some(
            if diagnostics
                .iter()
                .any(|g| g.delta4_source == Delta4Source::Grid)
            {
                Delta4Source::Grid
            } else {
                Delta4Source::Analytic
            },
        );
        mean_eps2_bound = Some(diagnostics.iter().map(|g| g.eps2_bound).sum::<f64>() / m as f64);
        detailed = Some((terms.e_term + terms.cond_term + terms.eps1_term, terms, ses));
    }

    let check = |name: &str, v: f64| {
        if v.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(name.to_string()))
        }
    };
    check("mean Δ₃²", delta3_sq.value)?;
    if let Some(a) = approx_bound {
        check("approximate bound", a)?;
    }
    if let Some((total, t, s)) = &detailed {
        check("detailed bound", *total)?;
        for (name, v) in [
            ("e term", t.e_term),
            ("conditional term", t.cond_term),
            ("ε₁ term", t.eps1_term),
            ("e term se", s.e_term),
            ("conditional term se", s.cond_term),
            ("ε₁ term se", s.eps1_term),
        ] {
            check(name, v)?;
        }
    }

    Ok(BoundReport {
        d,
        n_directions: m,
        mean_delta3_sq: delta3_sq.value,
        se_delta3_sq: delta3_sq.se,
        approx_bound,
        detailed_bound: detailed.map(|x| x.0),
        term_breakdown: detailed.map(|x| x.1),
        term_standard_errors: detailed.map(|x| x.2),
        invalid_directions,
        delta4_source,
        mean_eps2_bound,
        fit: FitStats {
            grad_norm: fit.grad_norm,
            iterations: fit.iterations,
            log_det_sigma: fit.log_det_sigma,
            neg_log_density_at_mode: fit.log_f_at_mode,
        },
        logconcavity,
        config: config.clone(),
        seed: config.seed,
        diagnostics,
    })
}
