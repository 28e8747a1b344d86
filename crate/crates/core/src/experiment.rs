//! Table runner: synthetic data, audit, ground truth, per-row medians.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bound::{audit_with_fit, AuditConfig, BoundReport};
use crate::error::{Error, Result};
use crate::laplace::fit_laplace;
use crate::mcmc::{ground_truth, KLEstimate, McmcPreset};
use crate::model::{
    generate_dataset, GaussianModel, LogisticRegressionModel, SyntheticDatasetConfig, TargetModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Logistic,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub d: usize,
    pub n: usize,
    /// Prior standard deviation; `"inf"` in JSON for a flat prior.
    #[serde(with = "extended_f64")]
    pub sigma0: f64,
    #[serde(default)]
    pub model: ModelKind,
}

/// `f64` that also accepts and emits `"inf"`, which JSON numbers cannot hold.
mod extended_f64 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => t.parse::<f64>().map_err(D::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputPaths {
    pub csv: Option<String>,
    pub json: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub rows: Vec<ExperimentRow>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default = "default_preset")]
    pub mcmc_preset: McmcPreset,
    /// Run the sampling-based ground truth.
    #[serde(default = "default_truth")]
    pub truth: bool,
    #[serde(default)]
    pub output: OutputPaths,
}

fn default_replicates() -> usize {
    1
}

fn default_preset() -> McmcPreset {
    McmcPreset::Desk
}

fn default_truth() -> bool {
    true
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidArgument(
                "replicates must be at least 1".into(),
            ));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.d == 0 {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: d must be at least 1"
                )));
            }
            if !(row.sigma0 > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "row {i}: sigma0 must be positive"
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }
}

/// Seed of replicate `rep` of row `row`.
pub fn replicate_seed(base_seed: u64, row: usize, rep: usize) -> u64 {
    base_seed
        .wrapping_add((row as u64).wrapping_mul(1_000_003))
        .wrapping_add(rep as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub row: usize,
    pub replicate: usize,
    pub d: usize,
    pub n: usize,
    pub sigma0: f64,
    pub seed: u64,
    pub kl: Option<f64>,
    pub kl_se: Option<f64>,
    pub approx_bound: Option<f64>,
    pub detailed_bound: Option<f64>,
    pub efficiency: Option<f64>,
    pub acceptance_rate: Option<f64>,
    /// `"ok"` or the error message.
    pub status: String,
    #[serde(skip)]
    pub report: Option<BoundReport>,
    #[serde(skip)]
    pub truth: Option<KLEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRecord {
    pub row: usize,
    pub d: usize,
    pub n: usize,
    pub sigma0: f64,
    pub n_ok: usize,
    pub kl: Option<f64>,
    pub approx_bound: Option<f64>,
    pub detailed_bound: Option<f64>,
    pub efficiency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub spec_hash: String,
    pub replicates: Vec<ReplicateRecord>,
    pub aggregates: Vec<AggregateRecord>,
}

/// Runs one `(row, replicate)` cell; failures become a status string.
pub fn run_replicate(spec: &ExperimentSpec, row_index: usize, rep: usize) -> ReplicateRecord {
    let row = spec.rows[row_index];
    let seed = replicate_seed(spec.base_seed, row_index, rep);
    let mut record = ReplicateRecord {
        row: row_index,
        replicate: rep,
        d: row.d,
        n: row.n,
        sigma0: row.sigma0,
        seed,
        kl: None,
        kl_se: None,
        approx_bound: None,
        detailed_bound: None,
        efficiency: None,
        acceptance_rate: None,
        status: "ok".into(),
        report: None,
        truth: None,
    };
    let outcome = match row.model {
        ModelKind::Logistic => generate_dataset(&SyntheticDatasetConfig {
            d: row.d,
            n: row.n,
            seed,
        })
        .and_then(|data| LogisticRegressionModel::from_data(&data, row.sigma0))
        .and_then(|model| evaluate(&model, spec, seed, &mut record)),
        ModelKind::Gaussian => GaussianModel::random(row.d, seed)
            .and_then(|model| evaluate(&model, spec, seed, &mut record)),
    };
    if let Err(e) = outcome {
        record.status = e.to_string();
    }
    record
}

fn evaluate<M: TargetModel>(
    model: &M,
    spec: &ExperimentSpec,
    seed: u64,
    record: &mut ReplicateRecord,
) -> Result<()> {
    let config = AuditConfig {
        seed,
        ..spec.audit.clone()
    };
    let fit = fit_laplace(model, &DVector::zeros(model.dim()), &config.optimizer)?;
    let report = audit_with_fit(model, &fit, &config)?;
    record.approx_bound = report.approx_bound;
    record.detailed_bound = report.detailed_bound;
    record.report = Some(report);
    if spec.truth {
        let preset = spec.mcmc_preset;
        let truth = ground_truth(model, &fit, &preset.chain_config(seed), preset.k2())?;
        record.kl = Some(truth.kl);
        record.kl_se = Some(truth.se);
        record.acceptance_rate = Some(truth.acceptance_rate);
        record.efficiency = match record.approx_bound {
            Some(b) if b > 0.0 => Some(truth.kl / b),
            _ => None,
        };
        record.truth = Some(truth);
    }
    Ok(())
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

fn aggregate(spec: &ExperimentSpec, records: &[ReplicateRecord]) -> Vec<AggregateRecord> {
    spec.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mine: Vec<&ReplicateRecord> = records.iter().filter(|r| r.row == i).collect();
            let col = |f: fn(&ReplicateRecord) -> Option<f64>| {
                median(&mine.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            AggregateRecord {
                row: i,
                d: row.d,
                n: row.n,
                sigma0: row.sigma0,
                n_ok: mine.iter().filter(|r| r.status == "ok").count(),
                kl: col(|r| r.kl),
                approx_bound: col(|r| r.approx_bound),
                detailed_bound: col(|r| r.detailed_bound),
                efficiency: col(|r| r.efficiency),
            }
        })
        .collect()
}

/// Runs every `(row, replicate)` cell concurrently; output order is
/// `(row, replicate)` regardless of completion order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let cells: Vec<(usize, usize)> = (0..spec.rows.len())
        .flat_map(|r| (0..spec.replicates).map(move |k| (r, k)))
        .collect();
    let replicates: Vec<ReplicateRecord> = cells
        .par_iter()
        .map(|&(r, k)| run_replicate(spec, r, k))
        .collect();
    let aggregates = aggregate(spec, &replicates);
    Ok(ExperimentReport {
        spec: spec.clone(),
        spec_hash: spec.content_hash()?,
        replicates,
        aggregates,
    })
}

pub const CSV_HEADER: [&str; 14] = [
    "kind",
    "row",
    "replicate",
    "d",
    "n",
    "sigma0",
    "seed",
    "kl",
    "kl_se",
    "approx_bound",
    "detailed_bound",
    "efficiency",
    "n_ok",
    "status",
];

/// `{:.16e}` (17 significant digits), or 4 significant digits when `pretty`.
pub fn format_number(v: f64, pretty: bool) -> String {
    if !pretty {
        return format!("{v:.16e}");
    }
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-3..5).contains(&exp) {
        format!("{:.*}", (3 - exp).max(0) as usize, v)
    } else {
        format!("{v:.3e}")
    }
}

fn cell(v: Option<f64>, pretty: bool) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format_number(x, pretty))
}

/// Replicate rows followed by one `median` row per spec row. Missing or
/// failed cells are written as `NA`.
pub fn write_report_csv<W: Write>(
    report: &ExperimentReport,
    writer: W,
    pretty: bool,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in &report.replicates {
        w.write_record([
            "replicate".to_string(),
            r.row.to_string(),
            r.replicate.to_string(),
            r.d.to_string(),
            r.n.to_string(),
            format_number(r.sigma0, pretty),
            r.seed.to_string(),
            cell(r.kl, pretty),
            cell(r.kl_se, pretty),
            cell(r.approx_bound, pretty),
            cell(r.detailed_bound, pretty),
            cell(r.efficiency, pretty),
            "NA".to_string(),
            r.status.clone(),
        ])?;
    }
    for a in &report.aggregates {
        w.write_record([
            "median".to_string(),
            a.row.to_string(),
            "NA".to_string(),
            a.d.to_string(),
            a.n.to_string(),
            format_number(a.sigma0, pretty),
            "NA".to_string(),
            cell(a.kl, pretty),
            "NA".to_string(),
            cell(a.approx_bound, pretty),
            cell(a.detailed_bound, pretty),
            cell(a.efficiency, pretty),
            a.n_ok.to_string(),
            if a.n_ok > 0 { "ok" } else { "failed" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
