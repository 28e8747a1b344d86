//! Sampling-based ground truth for `KL(g, f)`.
//!
//! Random-walk Metropolis–Hastings draws from `f`, an importance ratio gives
//! `1/Z = E_f[g/f̃]`, and a plain Monte-Carlo average over `g` gives the
//! divergence. Everything touching `f̃` stays in log space.

use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{laplace_log_density, sample_laplace, LaplaceFit};
use crate::model::TargetModel;
use crate::radial::indexed_rng;

pub const N_BATCHES: usize = 50;
pub const MIN_KEPT_SAMPLES: usize = 100;
pub const ACCEPTANCE_WARN_LOW: f64 = 0.05;
pub const ACCEPTANCE_WARN_HIGH: f64 = 0.7;

/// Stream reserved for the chain; Gaussian draws use streams `0..k2`.
const CHAIN_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McmcPreset {
    /// 10⁶ steps, thin 100, k₂ = 10⁴.
    Desk,
    /// 10⁷ steps, thin 1000, k₂ = 10⁵.
    Paper,
}

impl McmcPreset {
    pub fn n_steps(self) -> usize {
        match self {
            McmcPreset::Desk => 1_000_000,
            McmcPreset::Paper => 10_000_000,
        }
    }

    pub fn thin(self) -> usize {
        match self {
            McmcPreset::Desk => 100,
            McmcPreset::Paper => 1000,
        }
    }

    pub fn k2(self) -> usize {
        match self {
            McmcPreset::Desk => 10_000,
            McmcPreset::Paper => 100_000,
        }
    }

    pub fn chain_config(self, seed: u64) -> ChainConfig {
        ChainConfig {
            n_steps: self.n_steps(),
            thin: self.thin(),
            proposal_scale: None,
            burn_in_fraction: 0.1,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Post-burn-in steps; `n_steps / thin` samples are kept.
    pub n_steps: usize,
    pub thin: usize,
    /// Multiplier on `Σ^{1/2}`; `None` means `2.38/√d`.
    pub proposal_scale: Option<f64>,
    /// Extra steps, as a fraction of `n_steps`, run and discarded first.
    pub burn_in_fraction: f64,
    pub seed: u64,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.n_steps / self.thin < MIN_KEPT_SAMPLES {
            return Err(Error::InvalidArgument(format!(
                "n_steps/thin must be at least {MIN_KEPT_SAMPLES}, got {}/{}",
                self.n_steps, self.thin
            )));
        }
        if let Some(s) = self.proposal_scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "proposal scale must be positive, got {s}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::InvalidArgument(format!(
                "burn-in fraction must lie in [0, 1), got {}",
                self.burn_in_fraction
            )));
        }
        Ok(())
    }

    pub fn resolved_scale(&self, d: usize) -> f64 {
        self.proposal_scale.unwrap_or(2.38 / (d as f64).sqrt())
    }

    pub fn burn_in_steps(&self) -> usize {
        (self.burn_in_fraction * self.n_steps as f64).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<DVector<f64>>,
    pub acceptance_rate: f64,
    /// Tuning advice when the acceptance rate is outside `[0.05, 0.7]`.
    pub warning: Option<String>,
    pub proposal_scale: f64,
}

/// Random-walk Metropolis–Hastings started at `θ⋆` with proposal
/// `θ + scale · S η`.
pub fn run_chain<M: TargetModel + ?Sized>(
    model: &M,
    fit: &LaplaceFit,
    config: &ChainConfig,
) -> Result<Chain> {
    config.validate()?;
    let d = fit.dim();
    if model.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: model.dim(),
        });
    }
    let scale = config.resolved_scale(d);
    let step_matrix = &fit.sqrt_covariance * scale;
    let mut rng = indexed_rng(config.seed, CHAIN_STREAM);

    let burn_in = config.burn_in_steps();
    let total = burn_in + config.n_steps;
    let mut theta = fit.theta_star.clone();
    let mut phi = model.neg_log_density(&theta)?;
    if !phi.is_finite() {
        return Err(Error::NonFinite("negative log density at the mode".into()));
    }
    let mut samples = Vec::with_capacity(config.n_steps / config.thin);
    let mut accepted = 0usize;
    let mut eta = DVector::zeros(d);
    for step in 0..total {
        for v in eta.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let proposal = &theta + &step_matrix * &eta;
        let phi_new = model.neg_log_density(&proposal)?;
        let u: f64 = rng.random();
        if phi_new.is_finite() && u.ln() < phi - phi_new {
            theta = proposal;
            phi = phi_new;
            accepted += 1;
        }
        if step >= burn_in && (step - burn_in + 1).is_multiple_of(config.thin) {
            samples.push(theta.clone());
        }
    }
    let acceptance_rate = accepted as f64 / total as f64;
    let warning = if !(ACCEPTANCE_WARN_LOW..=ACCEPTANCE_WARN_HIGH).contains(&acceptance_rate) {
        Some(format!(
            "acceptance rate {acceptance_rate:.3} outside [{ACCEPTANCE_WARN_LOW}, {ACCEPTANCE_WARN_HIGH}]; \
             {} the proposal scale (currently {scale:.4})",
            if acceptance_rate < ACCEPTANCE_WARN_LOW { "decrease" } else { "increase" }
        ))
    } else {
        None
    };
    Ok(Chain {
        samples,
        acceptance_rate,
        warning,
        proposal_scale: scale,
    })
}

/// Writes kept samples as CSV with header `theta1,...,thetad`.
pub fn write_samples_csv<W: Write>(samples: &[DVector<f64>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = samples.first().map_or(0, |s| s.len());
    w.write_record((1..=d).map(|j| format!("theta{j}")))?;
    for s in samples {
        w.write_record(s.iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// `1/Z` with a batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvZEstimate {
    pub value: f64,
    pub se: f64,
    pub log_value: f64,
    /// `se / value`, also the standard error of `log_value` to first order.
    pub log_se: f64,
}

fn log_mean_exp(xs: &[f64]) -> f64 {
    let peak = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    peak + (xs.iter().map(|x| (x - peak).exp()).sum::<f64>() / xs.len() as f64).ln()
}

/// `1/Z ≈ mean_i g(θᵢ)/f̃(θᵢ)` over posterior draws.
pub fn estimate_inv_z<M: TargetModel + ?Sized>(
    model: &M,
    fit: &LaplaceFit,
    samples: &[DVector<f64>],
) -> Result<InvZEstimate> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two posterior samples".into(),
        ));
    }
    let log_ratios = samples
        .par_iter()
        .enumerate()
        .map(|(index, theta)| {
            let l = laplace_log_density(fit, theta)? + model.neg_log_density(theta)?;
            if l.is_finite() {
                Ok(l)
            } else {
                Err(Error::NonFiniteRatio { index })
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let log_value = log_mean_exp(&log_ratios);
    let rel: Vec<f64> = log_ratios.iter().map(|l| (l - log_value).exp()).collect();
    let log_se = batch_means_se(&rel);
    let value = log_value.exp();
    Ok(InvZEstimate {
        value,
        se: log_se * value,
        log_value,
        log_se,
    })
}

/// Standard error of the mean from `N_BATCHES` contiguous batches, or the
/// i.i.d. formula when there are too few values to batch.
fn batch_means_se(xs: &[f64]) -> f64 {
    let batches = N_BATCHES.min(xs.len() / 2).max(1);
    let size = xs.len() / batches;
    if batches < 2 {
        return iid_se(xs);
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    iid_se(&means)
}

fn iid_se(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KLEstimate {
    pub kl: f64,
    pub se: f64,
    pub inv_z: f64,
    pub inv_z_se: f64,
    pub log_inv_z: f64,
    pub k: usize,
    pub k2: usize,
    pub acceptance_rate: f64,
    pub warning: Option<String>,
    pub config: Option<ChainConfig>,
}

/// `KL(g, f) ≈ mean_g[log g + φ] - log(1/Z)` from `k2` draws of `g`.
///
/// The standard error combines the i.i.d. error of the average, the
/// log-scale error of `1/Z`, and a rounding floor so that an exactly
/// Gaussian target is not reported with zero uncertainty.
pub fn estimate_kl<M: TargetModel + ?Sized>(
    model: &M,
    fit: &LaplaceFit,
    inv_z: &InvZEstimate,
    k2: usize,
    seed: u64,
) -> Result<KLEstimate> {
    if !(inv_z.value > 0.0) || !inv_z.log_value.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "1/Z must be positive, got {}",
            inv_z.value
        )));
    }
    if k2 < 2 {
        return Err(Error::InvalidArgument("k2 must be at least 2".into()));
    }
    let terms = (0..k2)
        .into_par_iter()
        .map(|i| {
            let theta = sample_laplace(fit, &mut indexed_rng(seed, i as u64));
            let log_g = laplace_log_density(fit, &theta)?;
            let phi = model.neg_log_density(&theta)?;
            Ok((log_g + phi, log_g.abs() + phi.abs()))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    // Centred on log(1/Z) so the sum does not accumulate rounding of the offset.
    let values: Vec<f64> = terms.iter().map(|t| t.0 - inv_z.log_value).collect();
    let n = k2 as f64;
    let kl = values.iter().sum::<f64>() / n;
    let magnitude = terms.iter().map(|t| t.1).sum::<f64>() / n + inv_z.log_value.abs() + 1.0;
    let floor = 64.0 * f64::EPSILON * magnitude;
    let sampling = iid_se(&values);
    let se = (sampling * sampling + inv_z.log_se * inv_z.log_se + floor * floor).sqrt();
    if !kl.is_finite() {
        return Err(Error::NonFinite("KL estimate".into()));
    }
    Ok(KLEstimate {
        kl,
        se,
        inv_z: inv_z.value,
        inv_z_se: inv_z.se,
        log_inv_z: inv_z.log_value,
        k: 0,
        k2,
        acceptance_rate: f64::NAN,
        warning: None,
        config: None,
    })
}

/// Chain, `1/Z`, and KL estimate in one call.
pub fn ground_truth<M: TargetModel + ?Sized>(
    model: &M,
    fit: &LaplaceFit,
    config: &ChainConfig,
    k2: usize,
) -> Result<KLEstimate> {
    let chain = run_chain(model, fit, config)?;
    let inv_z = estimate_inv_z(model, fit, &chain.samples)?;
    let mut est = estimate_kl(model, fit, &inv_z, k2, config.seed)?;
    est.k = chain.samples.len();
    est.acceptance_rate = chain.acceptance_rate;
    est.warning = chain.warning;
    est.config = Some(ChainConfig {
        proposal_scale: Some(chain.proposal_scale),
        ..*config
    });
    Ok(est)
}
