use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{sample_laplace, LaplaceFit};
use crate::model::TargetModel;
use crate::radial::indexed_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsiEstimate {
    pub value: f64,
    pub se: f64,
    pub n_samples: usize,
}

/// Direct log-Sobolev bound for a `β`-strongly log-concave target:
/// `KL(g, f) ≤ E_g[‖∇φ_f - ∇φ_g‖²] / (2β)`, estimated from `n_samples`
/// draws of `g`.
pub fn lsi_kl_bound<M: TargetModel + ?Sized>(
    fit: &LaplaceFit,
    model: &M,
    beta: f64,
    n_samples: usize,
    seed: u64,
) -> Result<LsiEstimate> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "β must be positive, got {beta}"
        )));
    }
    if n_samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let terms: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let theta = sample_laplace(fit, &mut indexed_rng(seed, i as u64));
            let grad_f = model.gradient(&theta)?;
            let grad_g = &fit.hessian_at_mode * (&theta - &fit.theta_star);
            Ok((grad_f - grad_g).norm_squared() / (2.0 * beta))
        })
        .collect::<Result<_>>()?;
    let n = n_samples as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !mean.is_finite() {
        return Err(Error::NonFinite("log-Sobolev bound".into()));
    }
    Ok(LsiEstimate {
        value: mean,
        se: (var / n).sqrt(),
        n_samples,
    })
}
